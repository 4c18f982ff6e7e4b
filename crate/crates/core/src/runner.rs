//! The `run`, `ablation`, `grid` and `report` verbs.
//!
//! A run directory holds:
//!
//! * `config.cfg`: canonical configuration text; its SHA-256 is the manifest's
//!   `config_hash`.
//! * `manifest.json`: written with status `running` before the first round,
//!   rewritten as `completed` or `failed` at the end.
//! * `rounds.csv`: one row per round, flushed as rounds finish.
//! * `summary.json`: final metrics and rounds-to-target.
//! * `checkpoint.json` (with `--checkpoint`) and `plans.jsonl` (with
//!   `--dump-plans`, one grouping plan per line).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::metrics::pairwise_cpd;
use crate::orchestrator::{run_experiment, Algorithm, Checkpoint, GrowthKind, OrchestratorError, RoundRecord, Simulation};

pub const ARTIFACT_VERSION: &str = concat!("fedgsp ", env!("CARGO_PKG_VERSION"));
pub const OUTPUT_DIR_ENV: &str = "FEDGSP_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "runs";

pub const CONFIG_FILE: &str = "config.cfg";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PLANS_FILE: &str = "plans.jsonl";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const CPD_PAIRS_FILE: &str = "cpd_pairs.csv";
pub const GRID_FILE: &str = "grid.csv";

pub const ROUNDS_CSV_HEADER: [&str; 9] = [
    "round",
    "M",
    "sampled_groups",
    "accuracy",
    "loss",
    "median_group_cpd",
    "t_comp_cum_s",
    "t_comm_cum_s",
    "d_comm_cum_mb",
];

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read config {path}: {source}")]
    ConfigFile { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Run(#[from] OrchestratorError),
}

impl RunnerError {
    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::ConfigFile { .. } | Self::Run(OrchestratorError::Config(_)) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> RunnerError + '_ {
    move |e| RunnerError::Parse { path: path.to_path_buf(), message: e.to_string() }
}

/// Writes via a sibling temp file and rename, so readers never see a torn file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunnerError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Reads `path` (or nothing) and applies `overrides`.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, RunnerError> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|source| RunnerError::ConfigFile { path: p.to_path_buf(), source })?,
        None => String::new(),
    };
    Ok(RunConfig::from_text(&text, overrides)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub status: RunStatus,
    pub algorithm: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
    pub config_file: String,
    pub rounds_csv: String,
    pub summary: String,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: u64,
    pub final_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub mean_accuracy_last_10: Option<f64>,
    pub target_accuracy: f64,
    /// First round whose accuracy reaches the target; `None` if never.
    pub rounds_to_target: Option<u64>,
    pub t_comp_s: f64,
    pub t_comm_s: f64,
    pub d_comm_mb: f64,
}

pub fn summarize(records: &[RoundRecord], target_accuracy: f64) -> Summary {
    let last = records.last();
    let tail = &records[records.len().saturating_sub(10)..];
    Summary {
        rounds: records.len() as u64,
        final_accuracy: last.map(|r| r.accuracy),
        final_loss: last.map(|r| r.loss),
        mean_accuracy_last_10: (!tail.is_empty()).then(|| tail.iter().map(|r| r.accuracy).sum::<f64>() / tail.len() as f64),
        target_accuracy,
        rounds_to_target: records.iter().find(|r| r.accuracy >= target_accuracy).map(|r| r.round),
        t_comp_s: last.map_or(0.0, |r| r.t_comp_cum_s),
        t_comm_s: last.map_or(0.0, |r| r.t_comm_cum_s),
        d_comm_mb: last.map_or(0.0, |r| r.d_comm_cum_mb),
    }
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRecord>, RunnerError> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(ROUNDS_CSV_HEADER) {
        return Err(RunnerError::Parse { path: path.to_path_buf(), message: format!("unexpected header {header:?}") });
    }
    rdr.deserialize().collect::<Result<Vec<RoundRecord>, _>>().map_err(csv_err(path))
}

fn rounds_writer(path: &Path, prior: &[RoundRecord]) -> Result<csv::Writer<fs::File>, RunnerError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    w.write_record(ROUNDS_CSV_HEADER).map_err(csv_err(path))?;
    for r in prior {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(w)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write `plans.jsonl`.
    pub dump_plans: bool,
    /// Write `checkpoint.json` after every round.
    pub checkpoint: bool,
    /// Continue from the directory's checkpoint instead of starting over.
    /// The config must match the original except for `rounds`.
    pub resume: bool,
}

/// Resolves the output root: explicit value, then the environment, then
/// [`DEFAULT_OUTPUT_DIR`].
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

pub fn default_run_name(cfg: &RunConfig) -> String {
    format!("{}-{}", cfg.experiment.algorithm, &cfg.content_hash()[..12])
}

/// Runs `cfg` into `dir`, creating it if needed.
pub fn execute_run(cfg: &RunConfig, dir: &Path, opts: &RunOptions) -> Result<Summary, RunnerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let text = cfg.to_canonical_text();
    let config_path = dir.join(CONFIG_FILE);
    let manifest_path = dir.join(MANIFEST_FILE);
    if opts.resume {
        // only `rounds` may change, which extends or shortens the run
        let without_rounds = |t: &str| t.lines().filter(|l| !l.starts_with("rounds = ")).collect::<Vec<_>>().join("\n");
        let prev = fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
        if without_rounds(&prev) != without_rounds(&text) {
            return Err(RunnerError::Parse {
                path: config_path,
                message: "config differs from the one the checkpoint was written with".into(),
            });
        }
    }
    write_atomic(&config_path, text.as_bytes())?;

    let mut manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.into(),
        status: RunStatus::Running,
        algorithm: cfg.experiment.algorithm.to_string(),
        seed: cfg.experiment.seed,
        config_hash: cfg.content_hash(),
        config: text,
        config_file: CONFIG_FILE.into(),
        rounds_csv: ROUNDS_FILE.into(),
        summary: SUMMARY_FILE.into(),
        started_unix_s: unix_now(),
        finished_unix_s: None,
        error: None,
    };
    let write_manifest = |m: &RunManifest| {
        write_atomic(&manifest_path, serde_json::to_string_pretty(m).expect("manifest serialises").as_bytes())
    };
    write_manifest(&manifest)?;

    let outcome = train_into(cfg, dir, opts);
    manifest.finished_unix_s = Some(unix_now());
    match outcome {
        Ok(records) => {
            let summary = summarize(&records, cfg.target_accuracy);
            let path = dir.join(SUMMARY_FILE);
            write_atomic(&path, serde_json::to_string_pretty(&summary).expect("summary serialises").as_bytes())?;
            manifest.status = RunStatus::Completed;
            write_manifest(&manifest)?;
            Ok(summary)
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            write_manifest(&manifest)?;
            Err(e)
        }
    }
}

fn train_into(cfg: &RunConfig, dir: &Path, opts: &RunOptions) -> Result<Vec<RoundRecord>, RunnerError> {
    let exp = &cfg.experiment;
    let rounds_path = dir.join(ROUNDS_FILE);
    let ck_path = dir.join(CHECKPOINT_FILE);
    let plans_path = dir.join(PLANS_FILE);

    let (mut sim, mut records) = if opts.resume {
        let ck = Checkpoint::from_json(&fs::read_to_string(&ck_path).map_err(io_err(&ck_path))?)?;
        let sim = Simulation::resume(exp.clone(), &ck)?;
        let prior: Vec<RoundRecord> =
            read_rounds_csv(&rounds_path)?.into_iter().filter(|r| r.round < ck.next_round).collect();
        if prior.len() as u64 != sim.completed_rounds() {
            return Err(RunnerError::Parse {
                path: rounds_path,
                message: format!("{} rows precede checkpoint round {}", prior.len(), ck.next_round),
            });
        }
        (sim, prior)
    } else {
        (Simulation::new(exp.clone())?, Vec::new())
    };

    let mut writer = rounds_writer(&rounds_path, &records)?;
    let mut plans = if opts.dump_plans {
        let f = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(opts.resume)
            .truncate(!opts.resume)
            .open(&plans_path)
            .map_err(io_err(&plans_path))?;
        Some(std::io::BufWriter::new(f))
    } else {
        None
    };

    while sim.completed_rounds() < exp.rounds {
        let out = sim.run_round()?;
        writer.serialize(&out.record).map_err(csv_err(&rounds_path))?;
        writer.flush().map_err(io_err(&rounds_path))?;
        if let Some(p) = plans.as_mut() {
            let line = serde_json::to_string(&out.plan).expect("plan serialises");
            writeln!(p, "{line}").map_err(io_err(&plans_path))?;
        }
        if opts.checkpoint {
            write_atomic(&ck_path, sim.checkpoint().to_json().as_bytes())?;
        }
        records.push(out.record);
    }
    if let Some(mut p) = plans {
        p.flush().map_err(io_err(&plans_path))?;
    }
    Ok(records)
}

/// One line of `comparison.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub algorithm: String,
    pub round1_groups: u64,
    pub round1_median_group_cpd: f64,
    pub final_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub mean_accuracy_last_10: Option<f64>,
    pub rounds_to_target: Option<u64>,
    pub t_comp_s: f64,
    pub t_comm_s: f64,
    pub d_comm_mb: f64,
}

/// One line of `cpd_pairs.csv`: a pairwise CPD under an arm's round-1 plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdPair {
    pub algorithm: String,
    pub i: usize,
    pub j: usize,
    pub cpd: f64,
}

/// Runs the four arms on the shared task and seed, each into `dir/<arm>`,
/// then writes the comparison and CPD pair files into `dir`.
pub fn execute_ablation(cfg: &RunConfig, dir: &Path) -> Result<Vec<ArmSummary>, RunnerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let arms: Vec<Result<(ArmSummary, Vec<CpdPair>), RunnerError>> = Algorithm::ALL
        .par_iter()
        .map(|&alg| {
            let mut arm = cfg.clone();
            arm.experiment.algorithm = alg;
            let summary = execute_run(&arm, &dir.join(alg.name()), &RunOptions::default())?;

            let mut sim = Simulation::new(arm.experiment.clone())?;
            let plan = sim.plan_for_round(1)?;
            let dists = plan.group_distributions(sim.distributions());
            let values = pairwise_cpd(&dists, &arm.experiment.cpd).map_err(OrchestratorError::from)?;
            let n = dists.len();
            let pairs = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .zip(values)
                .map(|((i, j), cpd)| CpdPair { algorithm: alg.to_string(), i, j, cpd })
                .collect();
            let median = crate::metrics::median_pairwise_cpd(&dists, &arm.experiment.cpd).map_err(OrchestratorError::from)?;
            Ok((
                ArmSummary {
                    algorithm: alg.to_string(),
                    round1_groups: plan.group_count() as u64,
                    round1_median_group_cpd: median,
                    final_accuracy: summary.final_accuracy,
                    final_loss: summary.final_loss,
                    mean_accuracy_last_10: summary.mean_accuracy_last_10,
                    rounds_to_target: summary.rounds_to_target,
                    t_comp_s: summary.t_comp_s,
                    t_comm_s: summary.t_comm_s,
                    d_comm_mb: summary.d_comm_mb,
                },
                pairs,
            ))
        })
        .collect();

    let mut summaries = Vec::with_capacity(arms.len());
    let mut pairs = Vec::new();
    for arm in arms {
        let (s, p) = arm?;
        summaries.push(s);
        pairs.extend(p);
    }
    write_csv(&dir.join(COMPARISON_FILE), &summaries)?;
    write_csv(&dir.join(CPD_PAIRS_FILE), &pairs)?;
    Ok(summaries)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunnerError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub kinds: Vec<GrowthKind>,
    pub alphas: Vec<f64>,
    pub betas: Vec<u64>,
}

impl GridSpec {
    /// Cells in kind-major, then alpha, then beta order.
    pub fn cells(&self) -> Vec<(GrowthKind, f64, u64)> {
        let mut out = Vec::new();
        for &k in &self.kinds {
            for &a in &self.alphas {
                for &b in &self.betas {
                    out.push((k, a, b));
                }
            }
        }
        out
    }
}

/// One line of `grid.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub kind: GrowthKind,
    pub alpha: f64,
    pub beta: u64,
    pub final_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
}

/// Runs `fedgsp` once per growth cell and writes `dir/grid.csv`. A cell
/// equals a standalone run of the same config with `algorithm=fedgsp` and
/// the cell's `growth.*` values.
pub fn execute_grid(cfg: &RunConfig, grid: &GridSpec, dir: &Path) -> Result<Vec<GridRow>, RunnerError> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(ConfigError::Invalid("grid needs at least one kind, alpha and beta".into()).into());
    }
    let configs = cells
        .iter()
        .map(|&(kind, alpha, beta)| {
            let mut c = cfg.clone();
            c.experiment.algorithm = Algorithm::Fedgsp;
            c.experiment.growth.kind = kind;
            c.experiment.growth.alpha = alpha;
            c.experiment.growth.beta = beta;
            c.experiment.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, RunnerError>>()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rows = configs
        .par_iter()
        .map(|c| {
            let res = run_experiment(&c.experiment)?;
            let last = res.records.last();
            Ok(GridRow {
                kind: c.experiment.growth.kind,
                alpha: c.experiment.growth.alpha,
                beta: c.experiment.growth.beta,
                final_loss: last.map(|r| r.loss),
                final_accuracy: last.map(|r| r.accuracy),
            })
        })
        .collect::<Result<Vec<_>, RunnerError>>()?;
    write_csv(&dir.join(GRID_FILE), &rows)?;
    Ok(rows)
}

/// Re-derives a summary from an existing per-round CSV.
pub fn report(csv_path: &Path, target_accuracy: f64) -> Result<Summary, RunnerError> {
    if !(0.0..=1.0).contains(&target_accuracy) {
        return Err(ConfigError::Value { key: "target".into(), message: format!("{target_accuracy} is not in [0, 1]") }.into());
    }
    Ok(summarize(&read_rounds_csv(csv_path)?, target_accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u64, accuracy: f64) -> RoundRecord {
        RoundRecord {
            round,
            groups: 4,
            sampled_groups: 1,
            accuracy,
            loss: 1.0 - accuracy,
            median_group_cpd: 0.0,
            t_comp_cum_s: round as f64,
            t_comm_cum_s: 2.0 * round as f64,
            d_comm_cum_mb: 3.0 * round as f64,
        }
    }

    #[test]
    fn summary_of_records() {
        let recs: Vec<_> = (1..=12).map(|r| record(r, r as f64 / 20.0)).collect();
        let s = summarize(&recs, 0.5);
        assert_eq!(s.rounds_to_target, Some(10));
        assert_eq!(s.final_accuracy, Some(0.6));
        let expected = (3..=12).map(|r| r as f64 / 20.0).sum::<f64>() / 10.0;
        assert!((s.mean_accuracy_last_10.unwrap() - expected).abs() < 1e-15);
        assert_eq!(s.d_comm_mb, 36.0);
    }

    #[test]
    fn unreached_target_serialises_as_null() {
        let s = summarize(&[record(1, 0.3)], 0.8);
        assert_eq!(s.rounds_to_target, None);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["rounds_to_target"].is_null());
    }

    #[test]
    fn empty_summary() {
        let s = summarize(&[], 0.8);
        assert_eq!(s.rounds, 0);
        assert_eq!(s.final_accuracy, None);
        assert_eq!(s.mean_accuracy_last_10, None);
    }

    #[test]
    fn grid_cells_are_a_product() {
        let g = GridSpec { kinds: vec![GrowthKind::Linear, GrowthKind::Exp], alphas: vec![0.5, 1.0, 2.0], betas: vec![1, 2] };
        let cells = g.cells();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0], (GrowthKind::Linear, 0.5, 1));
        assert_eq!(cells[11], (GrowthKind::Exp, 2.0, 2));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunnerError::from(ConfigError::UnknownKey("x".into())).exit_code(), 1);
        assert_eq!(RunnerError::from(OrchestratorError::Checkpoint("x".into())).exit_code(), 2);
    }
}
