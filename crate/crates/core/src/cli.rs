//! Batch front-end: one subcommand per pipeline stage, each reading its
//! upstream artifacts from the output directory and writing its own.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    build_coverage_curve, compute_v_orig, layer_vulnerabilities, model_flops, plan_protection, rank_correlation,
    relative_costs, CoverageCurve, LayerVulnerability, ProtectionPlan, Scheme,
};
use crate::error::{Error, Result};
use crate::guard::{
    calibrate_epsilon, choose_checksum_precision, clean_false_positives, evaluate_detection, offline_checksums,
    write_detection_csv, write_threshold_csv, CalibrationStatistic, CleanPassStats, CorrectionPolicy, DetectionTally,
    EpsilonModel, GuardAction, PrecisionChoice, ProtectedExecutor, WeightChecksum,
};
use crate::injector::{read_campaign_csv, run_campaign, write_campaign_csv, CampaignConfig, CampaignResult, SpecFault};
use crate::model::{forward, load_weights, run_graph, save_weights, Dataset, ModelGraph, Tap, ToyConfig};
use crate::numerics::Precision;
use crate::profiler::{profile_ranges, select_golden, GoldenSet, RangeProfile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "gemmguard", version, about = "Fault-injection and checksum-guard workbench for GEMM inference")]
pub struct Cli {
    #[command(subcommand)]
    pub stage: Stage,
    /// Workbench config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory; overrides the config.
    #[arg(long, global = true, env = "GEMMGUARD_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true, env = "GEMMGUARD_WORKERS")]
    pub workers: Option<usize>,
    /// Campaign seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Stage {
    /// Range profile, golden set and origination probabilities.
    Profile,
    /// Fault-injection campaign on the unprotected model.
    Inject,
    /// Layer vulnerability table and coverage curves.
    Analyze,
    /// Checksum precision and detection thresholds.
    Calibrate,
    /// Layer selection for the coverage target.
    Plan,
    /// Detection, false-positive and correction measurements.
    Evaluate,
    /// Merged summary of every stage.
    Report,
    /// Every stage in order.
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Profile => "profile",
            Stage::Inject => "inject",
            Stage::Analyze => "analyze",
            Stage::Calibrate => "calibrate",
            Stage::Plan => "plan",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }

    pub const PIPELINE: [Stage; 7] =
        [Stage::Profile, Stage::Inject, Stage::Analyze, Stage::Calibrate, Stage::Plan, Stage::Evaluate, Stage::Report];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Synthetic(ToyConfig),
    /// Weight container plus the architecture it was saved from.
    File { path: PathBuf, architecture: ToyConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub size: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionPolicy {
    /// Smallest float precision meeting the error budget per layer.
    Auto,
    F16,
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardConfig {
    pub confidence: f64,
    pub precision: PrecisionPolicy,
    pub statistic: CalibrationStatistic,
    pub target_coverage: f64,
    pub scheme: Scheme,
    pub force_head: bool,
    /// Golden samples used for calibration; the rest are held out for the
    /// clean false-positive pass.
    pub calibration_samples: usize,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            confidence: 0.9999,
            precision: PrecisionPolicy::F64,
            statistic: CalibrationStatistic::PerSample,
            target_coverage: 0.99,
            scheme: Scheme::Checksum,
            force_head: true,
            calibration_samples: 1000,
        }
    }
}

fn default_correction() -> Option<CorrectionPolicy> {
    Some(CorrectionPolicy::replay(3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkbenchConfig {
    pub model: ModelSource,
    pub dataset: DatasetConfig,
    pub campaign: CampaignConfig,
    #[serde(default)]
    pub guard: GuardConfig,
    #[serde(default = "default_correction")]
    pub correction: Option<CorrectionPolicy>,
    /// Excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl WorkbenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dataset.size == 0 {
            return bad("dataset.size must be positive".into());
        }
        if self.campaign.n_per_layer == 0 {
            return bad("campaign.n_per_layer must be positive".into());
        }
        if !(self.guard.confidence > 0.0 && self.guard.confidence < 1.0) {
            return bad(format!("guard.confidence {} not in (0, 1)", self.guard.confidence));
        }
        if !(self.guard.target_coverage > 0.0 && self.guard.target_coverage <= 1.0) {
            return bad(format!("guard.target_coverage {} not in (0, 1]", self.guard.target_coverage));
        }
        if let Some(p) = &self.correction {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let ModelSource::File { path, .. } = &self.model {
            if !path.exists() {
                return bad(format!("model file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the output directory removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn build_model(&self) -> Result<ModelGraph> {
        match &self.model {
            ModelSource::Synthetic(t) => t.build(),
            ModelSource::File { path, architecture } => load_weights(path, &architecture.build()?),
        }
    }
}

/// JSON artifact body tagged with the producing config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_hash: String,
    pub seed: u64,
    pub data: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileArtifact {
    pub layer_names: Vec<String>,
    pub macs: Vec<u64>,
    pub v_orig: Vec<f64>,
    pub ranges: RangeProfile,
    pub golden: GoldenSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VulnerabilityArtifact {
    pub layers: Vec<LayerVulnerability>,
    pub p_prop_vs_delta_loss_rank_correlation: f64,
    pub curves: BTreeMap<String, CoverageCurve>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub precision: BTreeMap<usize, PrecisionChoice>,
    pub epsilon: BTreeMap<usize, EpsilonModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanArtifact {
    pub plan: ProtectionPlan,
    /// The same target planned under every scheme.
    pub alternatives: Vec<ProtectionPlan>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorrectionSummary {
    pub policy: Option<CorrectionPolicy>,
    pub detected_injections: usize,
    pub replays: u64,
    pub restored_bit_identical: usize,
    pub reproduced: usize,
    pub skipped: usize,
    pub mismatches_after_correction: usize,
    pub unrecovered: usize,
    /// Replay MACs over the MACs of the detected inferences.
    pub replay_mac_overhead: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub protected_layers: Vec<usize>,
    pub total: DetectionTally,
    pub coverage: Option<f64>,
    pub per_layer: BTreeMap<usize, DetectionTally>,
    pub skipped_injections: usize,
    pub clean: CleanPassStats,
    pub false_positive_row_rate: f64,
    pub false_positive_inference_rate: f64,
    pub checksum_compute_overhead: f64,
    pub correction: CorrectionSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub model: ToyConfig,
    pub total_macs: u64,
    pub model_flops: f64,
    pub vulnerability: VulnerabilityArtifact,
    pub calibration: CalibrationArtifact,
    pub plan: PlanArtifact,
    pub evaluation: EvaluationArtifact,
}

const PROFILE: &str = "profile.json";
const WEIGHTS: &str = "model.albt";
const CAMPAIGN_CSV: &str = "campaign.csv";
const CAMPAIGN_JSON: &str = "campaign.json";
const VULN_JSON: &str = "vulnerability.json";
const VULN_CSV: &str = "vulnerability.csv";
const CALIBRATION: &str = "epsilon.json";
const THRESHOLDS: &str = "thresholds.csv";
const PLAN: &str = "plan.json";
const DETECTION_CSV: &str = "detection.csv";
const EVALUATION: &str = "evaluation.json";
const REPORT: &str = "report.json";

pub struct Workbench {
    pub config: WorkbenchConfig,
    pub out: PathBuf,
    hash: String,
    model: ModelGraph,
}

impl Workbench {
    pub fn new(config: WorkbenchConfig, out: PathBuf) -> Result<Self> {
        config.validate()?;
        let model = config.build_model().map_err(|e| Error::Config(format!("model: {e}")))?;
        fs::create_dir_all(&out)?;
        Ok(Self { hash: config.hash(), config, out, model })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn model(&self) -> &ModelGraph {
        &self.model
    }

    fn seed(&self) -> u64 {
        self.config.campaign.seed
    }

    fn comment(&self) -> String {
        format!("config_hash={} seed={}", self.hash, self.seed())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, body: T) -> Result<()> {
        let a = Artifact { config_hash: self.hash.clone(), seed: self.seed(), data: body };
        let mut text = serde_json::to_string_pretty(&a)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn read_json<T: DeserializeOwned>(&self, stage: Stage, name: &str, requires: Stage) -> Result<T> {
        let path = self.path(name);
        let missing = || Error::StageDependency {
            stage: stage.name().into(),
            requires: requires.name().into(),
            path: path.clone(),
        };
        let text = fs::read_to_string(&path).map_err(|_| missing())?;
        let a: Artifact<T> = serde_json::from_str(&text)?;
        if a.config_hash != self.hash {
            return Err(missing());
        }
        Ok(a.data)
    }

    fn dataset(&self) -> Result<Dataset> {
        Dataset::teacher_labeled(&self.model, self.config.dataset.size, self.config.dataset.seed)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Profile => self.profile(),
            Stage::Inject => self.inject(),
            Stage::Analyze => self.analyze(),
            Stage::Calibrate => self.calibrate(),
            Stage::Plan => self.plan(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
            Stage::All => Stage::PIPELINE.iter().try_for_each(|s| self.run(*s)),
        }
    }

    fn profile(&self) -> Result<()> {
        let data = self.dataset()?;
        let ranges = profile_ranges(&self.model, &data)?;
        let golden = select_golden(&self.model, &data)?;
        save_weights(&self.path(WEIGHTS), &self.model)?;
        self.write_json(
            PROFILE,
            ProfileArtifact {
                layer_names: self.model.layers.iter().map(|l| l.name.clone()).collect(),
                macs: self.model.layers.iter().map(|l| l.mac_count()).collect(),
                v_orig: compute_v_orig(&self.model),
                ranges,
                golden,
            },
        )
    }

    fn inject(&self) -> Result<()> {
        let p: ProfileArtifact = self.read_json(Stage::Inject, PROFILE, Stage::Profile)?;
        let data = self.dataset()?;
        let campaign = run_campaign(&self.model, &data, &p.golden, &p.ranges, &self.config.campaign)?;
        let f = BufWriter::new(fs::File::create(self.path(CAMPAIGN_CSV))?);
        write_campaign_csv(f, &campaign.records, Some(&self.comment()))?;
        self.write_json(CAMPAIGN_JSON, campaign.summary())
    }

    fn load_campaign(&self, stage: Stage) -> Result<CampaignResult> {
        let path = self.path(CAMPAIGN_CSV);
        let f = fs::File::open(&path).map_err(|_| Error::StageDependency {
            stage: stage.name().into(),
            requires: Stage::Inject.name().into(),
            path: path.clone(),
        })?;
        let records = read_campaign_csv(f)?;
        Ok(CampaignResult {
            seed: self.seed(),
            n_per_layer: self.config.campaign.n_per_layer,
            records,
            skipped: Vec::new(),
        })
    }

    fn analyze(&self) -> Result<()> {
        let campaign = self.load_campaign(Stage::Analyze)?;
        let layers = layer_vulnerabilities(&self.model, &campaign)?;
        let v: Vec<f64> = layers.iter().map(|l| l.v_layer).collect();
        let mut curves = BTreeMap::new();
        for scheme in [Scheme::Duplication, Scheme::Checksum] {
            let curve = build_coverage_curve(&v, &relative_costs(&self.model, scheme))?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["step", "layer", "overhead", "coverage"])?;
            for (i, p) in curve.points.iter().enumerate() {
                let layer = p.layer.map(|l| l.to_string()).unwrap_or_default();
                w.write_record([i.to_string(), layer, p.overhead.to_string(), p.coverage.to_string()])?;
            }
            let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            let mut text = format!("# {}\n", self.comment()).into_bytes();
            text.extend(body);
            fs::write(self.path(&format!("curve_{scheme}.csv")), text)?;
            curves.insert(scheme.to_string(), curve);
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "name", "v_orig", "p_prop", "delta_loss", "v_layer", "injections", "mismatches"])?;
        for l in &layers {
            w.write_record([
                l.layer_index.to_string(),
                self.model.layers[l.layer_index].name.clone(),
                l.v_orig.to_string(),
                l.p_prop.to_string(),
                l.delta_loss.to_string(),
                l.v_layer.to_string(),
                l.injections.to_string(),
                l.mismatches.to_string(),
            ])?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut text = format!("# {}\n", self.comment()).into_bytes();
        text.extend(body);
        fs::write(self.path(VULN_CSV), text)?;
        let p: Vec<f64> = layers.iter().map(|l| l.p_prop).collect();
        let dl: Vec<f64> = layers.iter().map(|l| l.delta_loss).collect();
        self.write_json(
            VULN_JSON,
            VulnerabilityArtifact { p_prop_vs_delta_loss_rank_correlation: rank_correlation(&p, &dl), layers, curves },
        )
    }

    fn checksums(&self, precision: &BTreeMap<usize, PrecisionChoice>) -> Result<BTreeMap<usize, WeightChecksum>> {
        let ps = precision.iter().map(|(l, c)| (*l, c.precision)).collect();
        offline_checksums(&self.model, &ps)
    }

    fn calibrate(&self) -> Result<()> {
        let p: ProfileArtifact = self.read_json(Stage::Calibrate, PROFILE, Stage::Profile)?;
        let g = &self.config.guard;
        let fixed = |precision| {
            self.model
                .layers
                .iter()
                .map(|l| {
                    let precision = if l.is_integer() { Precision::I64Exact } else { precision };
                    (l.index, PrecisionChoice { precision, warning: None })
                })
                .collect()
        };
        let precision: BTreeMap<usize, PrecisionChoice> = match g.precision {
            PrecisionPolicy::Auto => choose_checksum_precision(&self.model, &p.ranges)?,
            PrecisionPolicy::F16 => fixed(Precision::F16),
            PrecisionPolicy::F32 => fixed(Precision::F32),
            PrecisionPolicy::F64 => fixed(Precision::F64),
        };
        let checksums = self.checksums(&precision)?;
        let data = self.dataset()?;
        let cal = p.golden.take(g.calibration_samples);
        let epsilon = calibrate_epsilon(&self.model, &data, &cal, &checksums, g.confidence, g.statistic)?;
        let f = BufWriter::new(fs::File::create(self.path(THRESHOLDS))?);
        write_threshold_csv(f, &epsilon, Some(&self.comment()))?;
        self.write_json(CALIBRATION, CalibrationArtifact { precision, epsilon })
    }

    fn plan(&self) -> Result<()> {
        let v: VulnerabilityArtifact = self.read_json(Stage::Plan, VULN_JSON, Stage::Analyze)?;
        let g = &self.config.guard;
        let alternatives = [Scheme::Duplication, Scheme::Checksum]
            .into_iter()
            .map(|s| plan_protection(&self.model, &v.layers, s, g.target_coverage, g.force_head))
            .collect::<Result<Vec<_>>>()?;
        let plan = alternatives
            .iter()
            .find(|p| p.scheme == g.scheme)
            .cloned()
            .expect("configured scheme is planned");
        self.write_json(PLAN, PlanArtifact { plan, alternatives })
    }

    fn evaluate(&self) -> Result<()> {
        let p: ProfileArtifact = self.read_json(Stage::Evaluate, PROFILE, Stage::Profile)?;
        let cal: CalibrationArtifact = self.read_json(Stage::Evaluate, CALIBRATION, Stage::Calibrate)?;
        let plan: PlanArtifact = self.read_json(Stage::Evaluate, PLAN, Stage::Plan)?;
        let plan = plan.plan;
        let checksums = self.checksums(&cal.precision)?;
        let data = self.dataset()?;
        let report = evaluate_detection(
            &self.model,
            &data,
            &p.golden,
            &p.ranges,
            &self.config.campaign,
            &plan,
            &checksums,
            &cal.epsilon,
        )?;
        let f = BufWriter::new(fs::File::create(self.path(DETECTION_CSV))?);
        write_detection_csv(f, &report.points, Some(&self.comment()))?;

        let holdout = p.golden.skip(self.config.guard.calibration_samples);
        let clean_samples: Vec<_> = holdout.samples(&data)?.into_iter().map(|(_, s)| s).collect();
        let clean = clean_false_positives(&self.model, clean_samples, &plan, &checksums, &cal.epsilon)?;

        let mut corr = CorrectionSummary { policy: self.config.correction, ..Default::default() };
        let mut inference_macs = 0u64;
        let mut replay_macs = 0u64;
        if let Some(policy) = self.config.correction {
            for point in report.points.iter().filter(|p| p.record.detected == Some(true)) {
                let spec = &point.record.spec;
                let sample = data.get(spec.sample_id).expect("campaign sample");
                let clean_trace = forward(&self.model, &sample.input, sample.label, &Tap::None)?;
                let mut fault = SpecFault::new(spec.clone());
                let mut exec =
                    ProtectedExecutor::new(&self.model, &plan, &checksums, &cal.epsilon, Some(policy), &mut fault)?;
                corr.detected_injections += 1;
                inference_macs += self.model.total_macs();
                match run_graph(&self.model, &sample.input, sample.label, &Tap::None, &mut exec) {
                    Ok(Some(trace)) => {
                        corr.replays += exec.replays as u64;
                        replay_macs += exec.replay_macs;
                        corr.reproduced +=
                            exec.events.iter().filter(|e| matches!(e.action, GuardAction::Reproduced { .. })).count();
                        corr.skipped +=
                            exec.events.iter().filter(|e| matches!(e.action, GuardAction::Skipped(_))).count();
                        corr.restored_bit_identical += trace.logits_bit_eq(&clean_trace) as usize;
                        corr.mismatches_after_correction += (trace.predicted_class != sample.label) as usize;
                    }
                    Ok(None) => corr.unrecovered += 1,
                    Err(Error::ReplayBudgetExhausted { .. } | Error::SkipTargetMissing { .. }) => {
                        corr.unrecovered += 1
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        corr.replay_mac_overhead =
            if inference_macs == 0 { 0.0 } else { replay_macs as f64 / inference_macs as f64 };
        let total = report.total();
        self.write_json(
            EVALUATION,
            EvaluationArtifact {
                protected_layers: plan.selected.clone(),
                coverage: total.coverage(),
                total,
                per_layer: report.per_layer(),
                skipped_injections: report.skipped.len(),
                false_positive_row_rate: clean.row_rate(),
                false_positive_inference_rate: clean.inference_rate(),
                clean,
                checksum_compute_overhead: checksum_overhead(&self.model, &plan),
                correction: corr,
            },
        )
    }

    fn report(&self) -> Result<()> {
        let vulnerability = self.read_json(Stage::Report, VULN_JSON, Stage::Analyze)?;
        let calibration = self.read_json(Stage::Report, CALIBRATION, Stage::Calibrate)?;
        let plan = self.read_json(Stage::Report, PLAN, Stage::Plan)?;
        let evaluation = self.read_json(Stage::Report, EVALUATION, Stage::Evaluate)?;
        let model = match &self.config.model {
            ModelSource::Synthetic(t) | ModelSource::File { architecture: t, .. } => t.clone(),
        };
        self.write_json(
            REPORT,
            ReportArtifact {
                model,
                total_macs: self.model.total_macs(),
                model_flops: model_flops(&self.model),
                vulnerability,
                calibration,
                plan,
                evaluation,
            },
        )
    }
}

/// Checksum flops of the planned layers as a fraction of one inference.
fn checksum_overhead(model: &ModelGraph, plan: &ProtectionPlan) -> f64 {
    let costs = relative_costs(model, Scheme::Checksum);
    plan.selected.iter().map(|i| costs[*i]).sum()
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::StageDependency { .. } => EXIT_STAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args`, runs the stage and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run_cli(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run_cli(cli: &Cli) -> Result<()> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = WorkbenchConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.campaign.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| Error::Config("no output directory (--out, GEMMGUARD_OUT or config `out`)".into()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let bench = Workbench::new(config, out)?;
    pool.install(|| bench.run(cli.stage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DType;

    pub(crate) fn small_config() -> WorkbenchConfig {
        WorkbenchConfig {
            model: ModelSource::Synthetic(ToyConfig::new(1, 16, 4, 5, 3)),
            dataset: DatasetConfig { size: 80, seed: 5 },
            campaign: CampaignConfig::new(20, 9),
            guard: GuardConfig { calibration_samples: 40, ..Default::default() },
            correction: Some(CorrectionPolicy::replay(3)),
            out: None,
        }
    }

    #[test]
    fn config_round_trip_and_hash() {
        let c = small_config();
        let text = serde_json::to_string(&c).unwrap();
        let back: WorkbenchConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let mut moved = c.clone();
        moved.out = Some("elsewhere".into());
        assert_eq!(moved.hash(), c.hash());
        let mut reseeded = c.clone();
        reseeded.campaign.seed += 1;
        assert_ne!(reseeded.hash(), c.hash());
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c: WorkbenchConfig = serde_json::from_str(
            r#"{"model":{"synthetic":{"blocks":1,"dim":16,"tokens":4,"classes":5,"seed":1,"dtype":"f16"}},
                "dataset":{"size":10,"seed":2},
                "campaign":{"n_per_layer":5,"seed":3}}"#,
        )
        .unwrap();
        assert_eq!(c.guard, GuardConfig::default());
        assert_eq!(c.correction, Some(CorrectionPolicy::replay(3)));
        let ModelSource::Synthetic(t) = &c.model else { panic!() };
        assert_eq!(t.dtype, DType::F16);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small_config();
        c.guard.confidence = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = small_config();
        c.model = ModelSource::File { path: "/nonexistent/w.albt".into(), architecture: ToyConfig::new(1, 16, 4, 5, 3) };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn exit_code_classes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::PrecisionSaturation { layer: 0, value: 1.0 }), EXIT_RUNTIME);
        assert_eq!(exit_code(&Error::ReplayBudgetExhausted { layer: 0, attempts: 1 }), EXIT_RUNTIME);
    }

    #[test]
    fn stage_dependency_names_required_stage() {
        let dir = tempfile::tempdir().unwrap();
        let w = Workbench::new(small_config(), dir.path().into()).unwrap();
        let err = w.run(Stage::Evaluate).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_STAGE);
        assert!(err.to_string().contains("profile"), "{err}");
        w.run(Stage::Profile).unwrap();
        let err = w.run(Stage::Evaluate).unwrap_err();
        assert!(err.to_string().contains("calibrate"), "{err}");
    }
}
