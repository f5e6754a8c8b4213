use gemmguard::numerics::{flip_bit, round_to_dtype, DType, Scalar};

fn main() {
    let v = round_to_dtype(1.7, DType::F16);
    let s = Scalar::from_f64(v, DType::F16).unwrap();
    println!("binary16 {v} = {:#06x}", s.to_bits());
    for bit in [0, 5, 9, 10, 14, 15] {
        let f = flip_bit(s, bit).unwrap();
        println!("  flip bit {bit:>2}: {:#06x} -> {}", f.to_bits(), f.to_f64());
    }

    let i = Scalar::from_f64(-3.0, DType::I8).unwrap();
    for bit in 0..8 {
        println!("int8 -3 flip bit {bit}: {}", flip_bit(i, bit).unwrap().to_f64());
    }

    let f = Scalar::from_f64(round_to_dtype(0.1, DType::F32), DType::F32).unwrap();
    println!("binary32 0.1 with exponent bit 30 flipped: {:e}", flip_bit(f, 30).unwrap().to_f64());
}
