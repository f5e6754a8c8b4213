use gemmguard::cli::{DatasetConfig, GuardConfig, ModelSource, Stage, Workbench, WorkbenchConfig};
use gemmguard::guard::CorrectionPolicy;
use gemmguard::injector::CampaignConfig;
use gemmguard::model::ToyConfig;
use gemmguard::numerics::DType;

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/full_pipeline".into());
    let config = WorkbenchConfig {
        model: ModelSource::Synthetic(ToyConfig::new(2, 32, 4, 10, 23).with_dtype(DType::F16)),
        dataset: DatasetConfig { size: 600, seed: 24 },
        campaign: CampaignConfig::new(150, 25),
        guard: GuardConfig { calibration_samples: 300, ..Default::default() },
        correction: Some(CorrectionPolicy::replay(3)),
        out: None,
    };
    let bench = Workbench::new(config, out.clone().into()).unwrap();
    for stage in Stage::PIPELINE {
        bench.run(stage).unwrap();
        println!("{} done", stage.name());
    }
    println!("artifacts in {out} (config hash {})", bench.config_hash());
}
