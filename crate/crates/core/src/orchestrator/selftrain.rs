//! The resumable multi-cycle loop and the pieces it is configured with.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::client::{InProcessSegmenter, LineClient, Segmenter};
use super::config::Config;
use super::cycle::{run_cycle, CycleReport, CycleSettings};
use super::eval::{iou, load_gt};
use super::manifest::{read_records, resolve_record_paths, write_atomic, LabelKind, Manifest};
use super::mock::{MockTrainer, NoisyOracle, NoisyOracleConfig, PromptRefine, PromptRefineConfig};
use super::policy::ExpansionPolicy;
use super::protocol::RequestHandler;
use crate::pixmap::read_mask;
use crate::{Error, Result};

/// Where a segmenter role is served from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SegmenterSpec {
    /// Child process speaking the protocol on stdin/stdout; one per worker.
    Command { argv: Vec<String> },
    /// Server listening on a TCP address; one connection per worker.
    Tcp { addr: String },
    MockNoisy(NoisyOracleConfig),
    MockPromptRefine(PromptRefineConfig),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainerSpec {
    #[default]
    None,
    /// Runs `argv` before every cycle with the `STSAM_*` variables set.
    Command { argv: Vec<String> },
    /// Drives the noisy mock's maturity; needs a `mock_noisy` plain segmenter.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    pub work_dir: PathBuf,
    /// Initial manifest, usually written by `split`.
    pub manifest: PathBuf,
    /// Cycle index at which the loop stops even if samples remain.
    pub max_cycles: u32,
    /// Concurrent requests per segmenter role.
    pub in_flight: usize,
    pub timeout_ms: u64,
    pub policy: ExpansionPolicy,
    pub plain: SegmenterSpec,
    pub promptable: SegmenterSpec,
    pub trainer: TrainerSpec,
    /// Ground-truth masks for quality reporting; never used for decisions.
    pub gt_dir: Option<PathBuf>,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
            manifest: PathBuf::from("manifest.jsonl"),
            max_cycles: 10,
            in_flight: 4,
            timeout_ms: 30_000,
            policy: ExpansionPolicy::default(),
            plain: SegmenterSpec::Command { argv: Vec::new() },
            promptable: SegmenterSpec::Command { argv: Vec::new() },
            trainer: TrainerSpec::None,
            gt_dir: None,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.in_flight == 0 {
            return Err(Error::Config("in_flight must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be positive".into()));
        }
        for (role, spec) in [("plain", &self.plain), ("promptable", &self.promptable)] {
            match spec {
                SegmenterSpec::Command { argv } if argv.is_empty() => {
                    return Err(Error::Config(format!("{role} segmenter command is empty")));
                }
                SegmenterSpec::MockNoisy(_) if role == "promptable" => {
                    return Err(Error::Config("promptable role cannot be mock_noisy".into()));
                }
                SegmenterSpec::MockPromptRefine(_) if role == "plain" => {
                    return Err(Error::Config("plain role cannot be mock_prompt_refine".into()));
                }
                _ => {}
            }
        }
        if self.trainer == TrainerSpec::Mock && !matches!(self.plain, SegmenterSpec::MockNoisy(_)) {
            return Err(Error::Config("mock trainer needs a mock_noisy plain segmenter".into()));
        }
        if let TrainerSpec::Command { argv } = &self.trainer {
            if argv.is_empty() {
                return Err(Error::Config("trainer command is empty".into()));
            }
        }
        Ok(())
    }
}

/// Facts handed to the trainer before a cycle.
#[derive(Debug, Clone)]
pub struct TrainContext {
    /// Index of the manifest being trained on.
    pub cycle: u32,
    pub manifest_path: PathBuf,
    pub work_dir: PathBuf,
    pub cycle_epochs: u32,
    pub total_epochs: u32,
}

/// Retrains the plain network on the current labeled set.
pub trait Trainer {
    fn retrain(&mut self, manifest: &Manifest, ctx: &TrainContext) -> Result<()>;
}

pub struct NoopTrainer;

impl Trainer for NoopTrainer {
    fn retrain(&mut self, _: &Manifest, _: &TrainContext) -> Result<()> {
        Ok(())
    }
}

pub struct CommandTrainer {
    argv: Vec<String>,
}

impl CommandTrainer {
    pub fn new(argv: Vec<String>) -> Self {
        Self { argv }
    }
}

impl Trainer for CommandTrainer {
    fn retrain(&mut self, _: &Manifest, ctx: &TrainContext) -> Result<()> {
        let (program, args) = self
            .argv
            .split_first()
            .ok_or_else(|| Error::Config("trainer command is empty".into()))?;
        let status = Command::new(program)
            .args(args)
            .env("STSAM_CYCLE", ctx.cycle.to_string())
            .env("STSAM_MANIFEST", &ctx.manifest_path)
            .env("STSAM_WORK_DIR", &ctx.work_dir)
            .env("STSAM_CYCLE_EPOCHS", ctx.cycle_epochs.to_string())
            .env("STSAM_TOTAL_EPOCHS", ctx.total_epochs.to_string())
            .status()
            .map_err(|e| Error::Unavailable(format!("cannot run trainer {program:?}: {e}")))?;
        if !status.success() {
            return Err(Error::InvalidArgument(format!("trainer exited with {status}")));
        }
        Ok(())
    }
}

/// Label paths of pseudo-labels are stored relative to the work directory.
pub fn resolve_path(work_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        work_dir.join(path)
    }
}

pub fn manifest_path(work_dir: &Path, cycle: u32) -> PathBuf {
    work_dir.join(format!("manifest_cycle_{cycle:03}.jsonl"))
}

pub fn report_path(work_dir: &Path, cycle: u32) -> PathBuf {
    work_dir.join("reports").join(format!("cycle_{cycle:03}.json"))
}

/// Segmenter pools and trainer for one run.
pub struct Engine {
    pub plain: Vec<Box<dyn Segmenter>>,
    pub promptable: Vec<Box<dyn Segmenter>>,
    pub trainer: Box<dyn Trainer>,
}

fn pool(
    spec: &SegmenterSpec,
    n: usize,
    timeout: Duration,
    mock: Option<Arc<dyn RequestHandler>>,
) -> Result<Vec<Box<dyn Segmenter>>> {
    (0..n)
        .map(|_| -> Result<Box<dyn Segmenter>> {
            Ok(match spec {
                SegmenterSpec::Command { argv } => Box::new(LineClient::command(argv.clone(), timeout)?),
                SegmenterSpec::Tcp { addr } => Box::new(LineClient::tcp(addr.clone(), timeout)?),
                SegmenterSpec::MockNoisy(_) | SegmenterSpec::MockPromptRefine(_) => Box::new(
                    InProcessSegmenter::new(Arc::clone(mock.as_ref().expect("mock handler built"))),
                ),
            })
        })
        .collect()
}

impl Engine {
    /// Connects to (or starts) both segmenter roles. Fails with
    /// `Unavailable` if an endpoint cannot be reached.
    pub fn from_config(cfg: &SelfTrainConfig, work_dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let timeout = Duration::from_millis(cfg.timeout_ms);
        let mut oracle = None;
        let plain_mock: Option<Arc<dyn RequestHandler>> = match &cfg.plain {
            SegmenterSpec::MockNoisy(c) => {
                let net = Arc::new(NoisyOracle::new(c.clone(), work_dir.join("segmenter").join("plain"))?);
                oracle = Some(Arc::clone(&net));
                Some(net)
            }
            _ => None,
        };
        let prompt_mock: Option<Arc<dyn RequestHandler>> = match &cfg.promptable {
            SegmenterSpec::MockPromptRefine(c) => Some(Arc::new(PromptRefine::new(
                c.clone(),
                work_dir.join("segmenter").join("prompt"),
            )?)),
            _ => None,
        };
        let trainer: Box<dyn Trainer> = match &cfg.trainer {
            TrainerSpec::None => Box::new(NoopTrainer),
            TrainerSpec::Command { argv } => Box::new(CommandTrainer::new(argv.clone())),
            TrainerSpec::Mock => Box::new(MockTrainer::new(oracle.expect("validated"))),
        };
        Ok(Self {
            plain: pool(&cfg.plain, cfg.in_flight, timeout, plain_mock)?,
            promptable: pool(&cfg.promptable, cfg.in_flight, timeout, prompt_mock)?,
            trainer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub cycle: u32,
    pub labeled: usize,
    pub unlabeled: usize,
    pub pseudo_labeled: usize,
    /// Mean IoU of all pseudo-labels against ground truth, when available.
    pub pseudo_label_iou: Option<f64>,
    pub cycles: Vec<CycleReport>,
}

/// Latest manifest in `work_dir`, if any.
fn latest_manifest(work_dir: &Path) -> Result<Option<(u32, PathBuf)>> {
    let mut best = None;
    for entry in fs::read_dir(work_dir).map_err(|e| Error::io(work_dir, e))? {
        let path = entry.map_err(|e| Error::io(work_dir, e))?.path();
        let cycle = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("manifest_cycle_")?.strip_suffix(".jsonl")?.parse::<u32>().ok());
        if let Some(c) = cycle {
            if best.as_ref().is_none_or(|(b, _)| c > *b) {
                best = Some((c, path));
            }
        }
    }
    Ok(best)
}

/// Loads the newest manifest, or imports the initial one as cycle 0.
pub fn load_or_import(cfg: &SelfTrainConfig, work_dir: &Path) -> Result<Manifest> {
    if let Some((cycle, path)) = latest_manifest(work_dir)? {
        log::info!("resuming from {}", path.display());
        return Manifest::read(&path, cycle);
    }
    let mut records = read_records(&cfg.manifest)?;
    let base = cfg.manifest.parent().unwrap_or(Path::new("."));
    resolve_record_paths(&mut records, base)?;
    let manifest = Manifest::from_records(records, 0)?;
    manifest.write_atomic(&manifest_path(work_dir, 0))?;
    Ok(manifest)
}

fn pseudo_label_iou(manifest: &Manifest, work_dir: &Path, gt_dir: &Path) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for rec in &manifest.labeled {
        if rec.label_kind == Some(LabelKind::Pseudo) {
            let label = read_mask(&resolve_path(work_dir, rec.label_path.as_ref().expect("validated")))?;
            scores.push(iou(&label, &load_gt(gt_dir, &rec.id)?)?);
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Runs cycles until the unlabeled set is empty, `max_cycles` is reached or
/// the policy can add nothing more. Each cycle commits by atomically
/// writing its manifest, so a killed run resumes from the last one.
pub fn run_with(config: &Config, work_dir: &Path, engine: &mut Engine) -> Result<FinalReport> {
    let cfg = &config.selftrain;
    let mut manifest = load_or_import(cfg, work_dir)?;
    let settings = CycleSettings {
        edf: &config.edf,
        dpc: &config.dpc,
        policy: &cfg.policy,
        work_dir,
        gt_dir: cfg.gt_dir.as_deref(),
    };
    while manifest.cycle < cfg.max_cycles
        && !manifest.unlabeled.is_empty()
        && !cfg.policy.exhausted_after(manifest.cycle)
    {
        let ctx = TrainContext {
            cycle: manifest.cycle,
            manifest_path: manifest_path(work_dir, manifest.cycle),
            work_dir: work_dir.to_path_buf(),
            cycle_epochs: cfg.policy.cycle_epochs,
            total_epochs: cfg.policy.total_epochs,
        };
        engine.trainer.retrain(&manifest, &ctx)?;
        let (next, report) = run_cycle(&manifest, &mut engine.plain, &mut engine.promptable, &settings)?;
        let rpath = report_path(work_dir, next.cycle);
        fs::create_dir_all(rpath.parent().expect("has parent")).map_err(|e| Error::io(&rpath, e))?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_atomic(&rpath, json.as_bytes())?;
        next.write_atomic(&manifest_path(work_dir, next.cycle))?;
        manifest = next;
    }

    let mut cycles = Vec::new();
    for c in 1..=manifest.cycle {
        let p = report_path(work_dir, c);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        cycles.push(serde_json::from_str(&text).map_err(|e| Error::format(&p, 0, e.to_string()))?);
    }
    let report = FinalReport {
        cycle: manifest.cycle,
        labeled: manifest.labeled.len(),
        unlabeled: manifest.unlabeled.len(),
        pseudo_labeled: manifest
            .labeled
            .iter()
            .filter(|r| r.label_kind == Some(LabelKind::Pseudo))
            .count(),
        pseudo_label_iou: match &cfg.gt_dir {
            Some(d) => pseudo_label_iou(&manifest, work_dir, d)?,
            None => None,
        },
        cycles,
    };
    let path = work_dir.join("final_report.json");
    write_atomic(&path, serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    Ok(report)
}

/// Validates the config, prepares the work directory and runs the loop.
pub fn run_self_training(config: &Config) -> Result<FinalReport> {
    config.validate()?;
    let dir = &config.selftrain.work_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let work_dir = fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
    let mut engine = Engine::from_config(&config.selftrain, &work_dir)?;
    run_with(config, &work_dir, &mut engine)
}
