//! Round orchestration for grouped sequential-to-parallel training and its
//! baselines.
//!
//! Every algorithm runs through the same round: build a grouping plan, sample
//! `max(1, round_half_up(kappa * M))` groups, train each sampled group as a
//! sequential chain starting from the current global model, then average the
//! chain outputs in ascending group-id order. The algorithms differ only in
//! where the plan comes from:
//!
//! | algorithm       | plan                                                     |
//! |-----------------|----------------------------------------------------------|
//! | `fedgsp`        | inter-cluster grouping every round, `M = f(r)`            |
//! | `naive_gsp_icg` | inter-cluster grouping once, fixed `M`, order reshuffled |
//! | `naive_gsp`     | random balanced grouping once, fixed `M`, reshuffled     |
//! | `fedavg`        | one singleton group per client                           |
//!
//! All randomness is keyed by `(seed, purpose, round, ...)`, so a round's
//! outcome depends only on the configuration, the round number and the
//! incoming global model. Groups may train concurrently; results are merged
//! in group order regardless of completion order.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_task, ClassDistribution, DatagenError, SyntheticTaskSpec, Task};
use crate::grouping::{inter_cluster_grouping, random_grouping, GroupingError, GroupingPlan};
use crate::metrics::{self, median_pairwise_cpd, CostModelParams, CpdConfig, MetricsError};
use crate::rng::{derive_key, stream};
use crate::trainer::{evaluate, init_model, train_one_client, ModelKind, ModelParams, ModelSpec, SgdConfig, TrainError};

pub const CHECKPOINT_FORMAT: &str = "fedgsp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("round {round}, group {group}, client {client}: {source}")]
    Train {
        round: u64,
        group: usize,
        client: usize,
        #[source]
        source: TrainError,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthKind {
    Linear,
    Log,
    Exp,
}

impl std::str::FromStr for GrowthKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "log" => Ok(Self::Log),
            "exp" => Ok(Self::Exp),
            other => Err(format!("unknown growth kind {other:?} (expected linear, log or exp)")),
        }
    }
}

impl std::fmt::Display for GrowthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Log => "log",
            Self::Exp => "exp",
        })
    }
}

/// Group-count schedule `f(r)`:
///
/// * linear: `beta * floor(alpha * (r - 1) + 1)`
/// * log:    `beta * floor(alpha * ln r + 1)`
/// * exp:    `beta * floor((1 + alpha)^(r - 1))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFunction {
    pub kind: GrowthKind,
    pub alpha: f64,
    pub beta: u64,
}

impl GrowthFunction {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(format!("growth.alpha must be positive, got {}", self.alpha));
        }
        if self.beta < 1 {
            return Err("growth.beta must be at least 1".into());
        }
        Ok(())
    }

    /// `f(r)` for `r >= 1`, saturating at `u64::MAX`.
    pub fn eval(&self, round: u64) -> u64 {
        let r = round.max(1) as f64;
        let inner = match self.kind {
            GrowthKind::Linear => (self.alpha * (r - 1.0) + 1.0).floor(),
            GrowthKind::Log => (self.alpha * r.ln() + 1.0).floor(),
            GrowthKind::Exp => (1.0 + self.alpha).powf(r - 1.0).floor(),
        };
        // 2^64 as f64; anything at or above saturates
        let steps = if inner >= 18_446_744_073_709_551_616.0 { u64::MAX } else { inner as u64 };
        steps.saturating_mul(self.beta)
    }

    /// `min(f(r), cap)`.
    pub fn eval_capped(&self, round: u64, cap: u64) -> u64 {
        self.eval(round).min(cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fedgsp,
    NaiveGsp,
    NaiveGspIcg,
    Fedavg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::NaiveGsp, Self::NaiveGspIcg, Self::Fedgsp, Self::Fedavg];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fedgsp => "fedgsp",
            Self::NaiveGsp => "naive_gsp",
            Self::NaiveGspIcg => "naive_gsp_icg",
            Self::Fedavg => "fedavg",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?} (expected fedgsp, naive_gsp, naive_gsp_icg or fedavg)"))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hardware and link constants of the cost model. The workload part
/// (samples, epochs, clients, kappa) comes from the experiment itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub n_calc: f64,
    pub n_aggr: f64,
    pub t_flops: f64,
    pub model_size_mb: f64,
    pub rate_in_mbps: f64,
    pub rate_out_mbps: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        let p = CostModelParams::with_workload(1.0, 1.0, 1.0, 1.0);
        Self {
            n_calc: p.n_calc,
            n_aggr: p.n_aggr,
            t_flops: p.t_flops,
            model_size_mb: p.model_size_mb,
            rate_in_mbps: p.rate_in_mbps,
            rate_out_mbps: p.rate_out_mbps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub task: SyntheticTaskSpec,
    pub model: ModelKind,
    pub sgd: SgdConfig,
    pub growth: GrowthFunction,
    pub kappa: f64,
    pub rounds: u64,
    /// Group count of the two naive baselines.
    pub fixed_group_count: usize,
    pub seed: u64,
    pub cpd: CpdConfig,
    pub cost: CostConstants,
    /// Train sampled groups on the rayon pool.
    pub parallel_groups: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Fedgsp,
            task: SyntheticTaskSpec {
                num_classes: 10,
                num_clients: 60,
                samples_per_client: 50,
                feature_dim: 16,
                skew: crate::datagen::Skew::Dirichlet { concentration: 0.3 },
                class_separation: 1.0,
                seed: 0,
            },
            model: ModelKind::SoftmaxLinear,
            sgd: SgdConfig::default(),
            growth: GrowthFunction { kind: GrowthKind::Log, alpha: 2.0, beta: 10 },
            kappa: 0.3,
            rounds: 500,
            fixed_group_count: 10,
            seed: 0,
            cpd: CpdConfig::default(),
            cost: CostConstants::default(),
            parallel_groups: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::Config(m));
        self.task.validate()?;
        self.growth.validate().or_else(bad)?;
        self.sgd.validate().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad(format!("kappa must lie in (0, 1], got {}", self.kappa));
        }
        if self.fixed_group_count < 1 {
            return bad("fixed_group_count must be at least 1".into());
        }
        if let ModelKind::MlpOneHidden { hidden_units: 0 } = self.model {
            return bad("model.hidden_units must be at least 1".into());
        }
        if !(self.cpd.sigma > 0.0 && self.cpd.sigma.is_finite()) {
            return bad(format!("cpd.sigma must be positive, got {}", self.cpd.sigma));
        }
        self.cost_params().validate().or_else(bad)?;
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            feature_dim: self.task.feature_dim,
            num_classes: self.task.num_classes,
            init_seed: derive_key(self.seed, "model-init-seed", &[]),
        }
    }

    pub fn cost_params(&self) -> CostModelParams {
        CostModelParams {
            n_calc: self.cost.n_calc,
            n_aggr: self.cost.n_aggr,
            t_flops: self.cost.t_flops,
            model_size_mb: self.cost.model_size_mb,
            rate_in_mbps: self.cost.rate_in_mbps,
            rate_out_mbps: self.cost.rate_out_mbps,
            samples_per_client: self.task.samples_per_client as f64,
            local_epochs: self.sgd.local_epochs as f64,
            num_clients: self.task.num_clients as f64,
            kappa: self.kappa,
        }
    }
}

/// Per-round metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// Group count of the round's plan.
    #[serde(rename = "M")]
    pub groups: u64,
    pub sampled_groups: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub median_group_cpd: f64,
    pub t_comp_cum_s: f64,
    pub t_comm_cum_s: f64,
    pub d_comm_cum_mb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub record: RoundRecord,
    pub plan: GroupingPlan,
    /// Ids of the sampled groups, ascending.
    pub sampled: Vec<usize>,
    /// Every client that trained this round, in group then chain order.
    pub trained_clients: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    pub t_comp_s: f64,
    pub t_comm_s: f64,
    pub d_comm_mb: f64,
}

/// Resume point: completed rounds, global model and accumulated costs.
/// Random streams are keyed by `(seed, round)`, so `(seed, next_round)` is
/// the whole generator cursor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub next_round: u64,
    pub costs: CostTotals,
    pub global: ModelParams,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, OrchestratorError> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| OrchestratorError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(OrchestratorError::Checkpoint(format!("unexpected format tag {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(OrchestratorError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }
}

/// `max(1, floor(kappa * m + 0.5))`, never more than `m`.
pub fn sampled_group_count(kappa: f64, m: usize) -> usize {
    let k = (kappa * m as f64 + 0.5).floor() as usize;
    k.clamp(1, m.max(1))
}

/// Batch-order seed of one client's local epoch within a round.
pub fn batch_seed(seed: u64, round: u64, group: usize, client: usize) -> u64 {
    derive_key(seed, "local-batches", &[round, group as u64, client as u64])
}

/// Trains `chain` sequentially from `start`.
pub fn train_chain(
    start: &ModelParams,
    task: &Task,
    chain: &[usize],
    sgd: &SgdConfig,
    seed: u64,
    round: u64,
    group: usize,
) -> Result<ModelParams, OrchestratorError> {
    let mut model = start.clone();
    for &client in chain {
        model = train_one_client(&model, &task.clients[client], sgd, batch_seed(seed, round, group, client))
            .map_err(|source| OrchestratorError::Train { round, group, client, source })?;
    }
    Ok(model)
}

pub struct Simulation {
    cfg: ExperimentConfig,
    task: Task,
    dists: Vec<ClassDistribution>,
    global: ModelParams,
    completed: u64,
    fixed_plan: Option<GroupingPlan>,
    costs: CostTotals,
}

impl Simulation {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, OrchestratorError> {
        cfg.validate()?;
        let mut task_spec = cfg.task.clone();
        task_spec.seed = cfg.seed;
        let task = generate_task(&task_spec)?;
        let dists = task.distributions();
        let global = init_model(&cfg.model_spec());
        Ok(Self { cfg, task, dists, global, completed: 0, fixed_plan: None, costs: CostTotals::default() })
    }

    /// Rebuilds the simulation state captured by `ck`.
    pub fn resume(cfg: ExperimentConfig, ck: &Checkpoint) -> Result<Self, OrchestratorError> {
        if ck.seed != cfg.seed {
            return Err(OrchestratorError::Checkpoint(format!("checkpoint seed {} != config seed {}", ck.seed, cfg.seed)));
        }
        let mut sim = Self::new(cfg)?;
        if ck.global.layers != sim.global.layers || ck.global.len() != sim.global.len() {
            return Err(OrchestratorError::Checkpoint("model shape does not match the config".into()));
        }
        sim.global = ck.global.clone();
        sim.completed = ck.next_round.saturating_sub(1);
        sim.costs = ck.costs;
        Ok(sim)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: self.cfg.seed,
            next_round: self.completed + 1,
            costs: self.costs,
            global: self.global.clone(),
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn distributions(&self) -> &[ClassDistribution] {
        &self.dists
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn completed_rounds(&self) -> u64 {
        self.completed
    }

    fn num_clients(&self) -> usize {
        self.task.clients.len()
    }

    /// The grouping used in round `r`.
    pub fn plan_for_round(&mut self, r: u64) -> Result<GroupingPlan, OrchestratorError> {
        let k = self.num_clients();
        let seed = self.cfg.seed;
        Ok(match self.cfg.algorithm {
            Algorithm::Fedgsp => {
                let m = self.cfg.growth.eval_capped(r, k as u64) as usize;
                inter_cluster_grouping(&self.dists, m, r, seed)?.plan
            }
            Algorithm::NaiveGspIcg | Algorithm::NaiveGsp => {
                if self.fixed_plan.is_none() {
                    let m = self.cfg.fixed_group_count;
                    let plan = if self.cfg.algorithm == Algorithm::NaiveGspIcg {
                        inter_cluster_grouping(&self.dists, m, 1, seed)?.plan
                    } else {
                        random_grouping(k, m, 1, seed)?
                    };
                    self.fixed_plan = Some(plan);
                }
                self.fixed_plan.as_ref().expect("set above").reshuffled(r, seed)
            }
            Algorithm::Fedavg => GroupingPlan { round: r, groups: (0..k).map(|c| vec![c]).collect(), unassigned: vec![] },
        })
    }

    /// Runs the next round and advances the global model.
    pub fn run_round(&mut self) -> Result<RoundOutcome, OrchestratorError> {
        let r = self.completed + 1;
        let plan = self.plan_for_round(r)?;
        let m = plan.group_count();
        let count = sampled_group_count(self.cfg.kappa, m);
        let mut sampled = index::sample(&mut stream(self.cfg.seed, "group-sample", &[r]), m, count).into_vec();
        sampled.sort_unstable();

        let train = |&g: &usize| train_chain(&self.global, &self.task, &plan.groups[g], &self.cfg.sgd, self.cfg.seed, r, g);
        let outputs: Vec<ModelParams> = if self.cfg.parallel_groups {
            sampled.par_iter().map(train).collect::<Result<_, _>>()?
        } else {
            sampled.iter().map(train).collect::<Result<_, _>>()?
        };
        let next = ModelParams::mean(&outputs).expect("at least one sampled group");

        let eval = evaluate(&next, &self.task.test);
        let group_dists = plan.group_distributions(&self.dists);
        let median_group_cpd = median_pairwise_cpd(&group_dists, &self.cfg.cpd)?;

        let p = self.cfg.cost_params();
        self.costs.t_comp_s += p.round_t_comp(m as f64);
        self.costs.t_comm_s += metrics::t_comm(1.0, &p);
        self.costs.d_comm_mb += metrics::d_comm(1.0, &p);

        self.global = next;
        self.completed = r;
        let trained_clients = sampled.iter().flat_map(|&g| plan.groups[g].iter().copied()).collect();
        Ok(RoundOutcome {
            record: RoundRecord {
                round: r,
                groups: m as u64,
                sampled_groups: count as u64,
                accuracy: eval.accuracy,
                loss: eval.loss,
                median_group_cpd,
                t_comp_cum_s: self.costs.t_comp_s,
                t_comm_cum_s: self.costs.t_comm_s,
                d_comm_cum_mb: self.costs.d_comm_mb,
            },
            plan,
            sampled,
            trained_clients,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams,
    pub plans: Vec<GroupingPlan>,
}

/// Runs every configured round.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, OrchestratorError> {
    run_experiment_with(cfg, |_| Ok(()))
}

/// Like [`run_experiment`], calling `on_round` after every round.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    mut on_round: impl FnMut(&RoundOutcome) -> Result<(), OrchestratorError>,
) -> Result<ExperimentResult, OrchestratorError> {
    let mut sim = Simulation::new(cfg.clone())?;
    let mut records = Vec::with_capacity(cfg.rounds as usize);
    let mut plans = Vec::with_capacity(cfg.rounds as usize);
    for _ in 0..cfg.rounds {
        let out = sim.run_round()?;
        on_round(&out)?;
        records.push(out.record);
        plans.push(out.plan);
    }
    Ok(ExperimentResult { records, final_params: sim.global, plans })
}
