use gemmguard::model::{forward, Dataset, Tap, ToyConfig};
use gemmguard::numerics::DType;

fn main() {
    for dtype in [DType::F64, DType::F32, DType::F16, DType::I8] {
        let model = ToyConfig::new(2, 32, 4, 10, 1).with_dtype(dtype).build().unwrap();
        let data = Dataset::teacher_labeled(&model, 4, 2).unwrap();
        println!("{dtype:?}: {} GEMM layers, {} MACs per inference", model.layers.len(), model.total_macs());
        for l in &model.layers {
            println!("  {:>2} {:<20} {:>4} -> {:<4} x{} tokens", l.index, l.name, l.in_dim, l.out_dim, l.tokens);
        }
        for s in &data.samples {
            let t = forward(&model, &s.input, s.label, &Tap::None).unwrap();
            println!("  sample {} class {} loss {:.4}", s.id, t.predicted_class, t.loss);
        }
    }
}
