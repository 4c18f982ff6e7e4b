//! Class-probability distance and analytic cost models.
//!
//! CPD is the population MMD² between two normalised class distributions
//! with classes embedded as one-hot vectors and a Gaussian RBF kernel of
//! bandwidth `sigma`. Under that embedding `K(c, c) = 1` and
//! `K(c, c') = exp(-1/sigma²)` for `c != c'`, which collapses the double sum
//! to `(1 - exp(-1/sigma²)) * ||P - Q||²`.

use serde::{Deserialize, Serialize};

use crate::datagen::ClassDistribution;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("distribution has zero total count")]
    ZeroTotal,
    #[error("distributions have {0} and {1} classes")]
    WidthMismatch(usize, usize),
    #[error("kernel bandwidth must be positive, got {0}")]
    Bandwidth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpdConfig {
    pub sigma: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

/// Counts divided by their total.
pub fn normalize(v: &ClassDistribution) -> Result<Vec<f64>, MetricsError> {
    let total = v.total();
    if total == 0 {
        return Err(MetricsError::ZeroTotal);
    }
    let t = total as f64;
    Ok(v.counts().iter().map(|&c| c as f64 / t).collect())
}

pub fn cpd(a: &ClassDistribution, b: &ClassDistribution, cfg: &CpdConfig) -> Result<f64, MetricsError> {
    if !(cfg.sigma > 0.0) {
        return Err(MetricsError::Bandwidth(cfg.sigma));
    }
    if a.num_classes() != b.num_classes() {
        return Err(MetricsError::WidthMismatch(a.num_classes(), b.num_classes()));
    }
    let p = normalize(a)?;
    let q = normalize(b)?;
    let sq: f64 = p.iter().zip(&q).map(|(x, y)| (x - y) * (x - y)).sum();
    let off_diagonal = (-1.0 / (cfg.sigma * cfg.sigma)).exp();
    Ok((1.0 - off_diagonal) * sq)
}

/// CPD of every unordered pair `(i, j)`, `i < j`, in lexicographic order.
pub fn pairwise_cpd(dists: &[ClassDistribution], cfg: &CpdConfig) -> Result<Vec<f64>, MetricsError> {
    let mut out = Vec::with_capacity(dists.len() * dists.len().saturating_sub(1) / 2);
    for i in 0..dists.len() {
        for j in i + 1..dists.len() {
            out.push(cpd(&dists[i], &dists[j], cfg)?);
        }
    }
    Ok(out)
}

/// Median of a sample; the mean of the two middle values for even sizes.
/// Returns `None` for an empty sample.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Median CPD over all unordered pairs. Fewer than two inputs yield 0.
pub fn median_pairwise_cpd(dists: &[ClassDistribution], cfg: &CpdConfig) -> Result<f64, MetricsError> {
    Ok(median(&pairwise_cpd(dists, cfg)?).unwrap_or(0.0))
}

/// Constants of the computation and communication cost models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelParams {
    /// FLOPs per training sample.
    pub n_calc: f64,
    /// FLOPs per global aggregation.
    pub n_aggr: f64,
    /// Device throughput, FLOPs per second.
    pub t_flops: f64,
    /// Model size in megabytes.
    pub model_size_mb: f64,
    /// Inbound link rate, megabits per second.
    pub rate_in_mbps: f64,
    /// Outbound link rate, megabits per second.
    pub rate_out_mbps: f64,
    pub samples_per_client: f64,
    pub local_epochs: f64,
    pub num_clients: f64,
    pub kappa: f64,
}

impl CostModelParams {
    /// Snapdragon-835 / EC2 constants with the given workload shape.
    pub fn with_workload(samples_per_client: f64, local_epochs: f64, num_clients: f64, kappa: f64) -> Self {
        Self {
            n_calc: 96e6,
            n_aggr: 6.3e6,
            t_flops: 567e9,
            model_size_mb: 25.2,
            rate_in_mbps: 567.0,
            rate_out_mbps: 567.0,
            samples_per_client,
            local_epochs,
            num_clients,
            kappa,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("n_calc", self.n_calc),
            ("n_aggr", self.n_aggr),
            ("t_flops", self.t_flops),
            ("model_size_mb", self.model_size_mb),
            ("rate_in_mbps", self.rate_in_mbps),
            ("rate_out_mbps", self.rate_out_mbps),
            ("samples_per_client", self.samples_per_client),
            ("local_epochs", self.local_epochs),
            ("num_clients", self.num_clients),
            ("kappa", self.kappa),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("cost parameter {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Computation seconds of a single round with `groups` groups.
    pub fn round_t_comp(&self, groups: f64) -> f64 {
        let k = self.num_clients;
        let training = self.n_calc / self.t_flops * (self.samples_per_client * self.local_epochs * k / k.min(groups));
        let aggregation = self.n_aggr / self.t_flops * (self.kappa * groups - 1.0);
        training + aggregation
    }
}

/// Total computation time over the rounds whose group counts are given.
pub fn t_comp(group_counts: &[f64], p: &CostModelParams) -> f64 {
    group_counts.iter().map(|&m| p.round_t_comp(m)).sum()
}

/// Communication seconds after `rounds` rounds.
pub fn t_comm(rounds: f64, p: &CostModelParams) -> f64 {
    8.0 * p.kappa * p.num_clients * p.model_size_mb * rounds * (1.0 / p.rate_in_mbps + 1.0 / p.rate_out_mbps)
}

/// Cross-WAN traffic in megabytes after `rounds` rounds.
pub fn d_comm(rounds: f64, p: &CostModelParams) -> f64 {
    2.0 * p.kappa * p.num_clients * p.model_size_mb * rounds
}
