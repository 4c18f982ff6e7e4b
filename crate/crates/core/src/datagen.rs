//! Synthetic non-i.i.d. federated classification tasks.
//!
//! Features are class-conditioned Gaussian blobs: each class owns a mean
//! vector drawn once from the task seed (`N(0, separation² I)`), and every
//! sample is that mean plus unit-variance isotropic noise. Label skew across
//! clients comes from one of two partitioners:
//!
//! * `Dirichlet(a)`: each client draws class proportions from a symmetric
//!   Dirichlet, realised as normalised per-class `Gamma(a, 1)` draws
//!   (Marsaglia-Tsang, with the `U^(1/a)` boost for `a < 1`). Proportions are
//!   turned into exactly `n` integer counts with the largest-remainder rule,
//!   ties going to the lower class index.
//! * `Shards(s)`: the global label pool is sorted by class and cut into
//!   `K * s` single-label shards of `n / s` samples; shards are dealt to
//!   clients after a seeded shuffle.
//!
//! The held-out test set is class balanced with 100 samples per class.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream, SimRng};

/// Samples per class in the held-out test set.
pub const TEST_SAMPLES_PER_CLASS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("shard arithmetic infeasible: {0}")]
    ShardArithmetic(String),
    #[error("client {client_id} has no samples")]
    EmptyDataset { client_id: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("feature matrix has {len} values, expected {rows} x {dim}")]
    ShapeMismatch { len: usize, rows: usize, dim: usize },
    #[error("dataset csv: {0}")]
    Csv(String),
}

/// Per-class sample counts of one client (or one group).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassDistribution {
    counts: Vec<u64>,
}

impl ClassDistribution {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn zeros(num_classes: usize) -> Self {
        Self { counts: vec![0; num_classes] }
    }

    /// Tallies `labels` into `num_classes` bins.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self, DatagenError> {
        let mut counts = vec![0u64; num_classes];
        for &label in labels {
            if label >= num_classes {
                return Err(DatagenError::LabelOutOfRange { label, num_classes });
            }
            counts[label] += 1;
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Adds another distribution of the same width in place.
    pub fn accumulate(&mut self, other: &ClassDistribution) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Element-wise sum of `parts`, each of width `num_classes`.
    pub fn sum<'a>(num_classes: usize, parts: impl IntoIterator<Item = &'a ClassDistribution>) -> Self {
        let mut acc = Self::zeros(num_classes);
        for p in parts {
            acc.accumulate(p);
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Skew {
    Dirichlet { concentration: f64 },
    Shards { shards_per_client: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub num_classes: usize,
    pub num_clients: usize,
    pub samples_per_client: usize,
    pub feature_dim: usize,
    pub skew: Skew,
    /// Standard deviation of the per-class mean vectors.
    pub class_separation: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::InvalidSpec(m.to_string()));
        if self.num_clients < 2 {
            return bad("num_clients must be at least 2");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.samples_per_client < 1 {
            return bad("samples_per_client must be at least 1");
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be at least 1");
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return bad("class_separation must be finite and non-negative");
        }
        match self.skew {
            Skew::Dirichlet { concentration } => {
                if !(concentration.is_finite() && concentration > 0.0) {
                    return bad("dirichlet concentration must be positive and finite");
                }
            }
            Skew::Shards { shards_per_client } => {
                if shards_per_client == 0 {
                    return Err(DatagenError::ShardArithmetic("shards_per_client must be at least 1".into()));
                }
                if self.samples_per_client % shards_per_client != 0 {
                    return Err(DatagenError::ShardArithmetic(format!(
                        "samples_per_client {} is not divisible into {} shards",
                        self.samples_per_client, shards_per_client
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Row-major feature matrix with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(feature_dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self, DatagenError> {
        if features.len() != labels.len() * feature_dim {
            return Err(DatagenError::ShapeMismatch { len: features.len(), rows: labels.len(), dim: feature_dim });
        }
        Ok(Self { feature_dim, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub samples: Samples,
    distribution: ClassDistribution,
}

impl ClientDataset {
    /// Builds a client dataset; rejects empty datasets and out-of-range labels.
    pub fn new(client_id: usize, samples: Samples, num_classes: usize) -> Result<Self, DatagenError> {
        if samples.is_empty() {
            return Err(DatagenError::EmptyDataset { client_id });
        }
        let distribution = ClassDistribution::from_labels(&samples.labels, num_classes)?;
        Ok(Self { client_id, samples, distribution })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn distribution(&self) -> &ClassDistribution {
        &self.distribution
    }
}

/// The tally of a client's labels.
pub fn class_distribution(dataset: &ClientDataset) -> ClassDistribution {
    dataset.distribution.clone()
}

#[derive(Clone, Debug)]
pub struct Task {
    pub spec: SyntheticTaskSpec,
    pub clients: Vec<ClientDataset>,
    pub test: Samples,
    pub class_means: Vec<Vec<f64>>,
}

impl Task {
    pub fn distributions(&self) -> Vec<ClassDistribution> {
        self.clients.iter().map(|c| c.distribution.clone()).collect()
    }
}

/// Generates a task deterministically from `spec`.
pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<Task, DatagenError> {
    spec.validate()?;
    let class_means = draw_class_means(spec);
    let counts = match spec.skew {
        Skew::Dirichlet { concentration } => dirichlet_counts(spec, concentration)?,
        Skew::Shards { shards_per_client } => shard_counts(spec, shards_per_client),
    };

    let mut clients = Vec::with_capacity(spec.num_clients);
    for (client_id, per_class) in counts.iter().enumerate() {
        let mut labels: Vec<usize> = per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k as usize))
            .collect();
        labels.shuffle(&mut stream(spec.seed, "label-order", &[client_id as u64]));
        let mut rng = stream(spec.seed, "features", &[client_id as u64]);
        let features = sample_features(&labels, &class_means, &mut rng);
        let samples = Samples::new(spec.feature_dim, features, labels)?;
        clients.push(ClientDataset::new(client_id, samples, spec.num_classes)?);
    }

    let test_labels: Vec<usize> =
        (0..TEST_SAMPLES_PER_CLASS * spec.num_classes).map(|i| i % spec.num_classes).collect();
    let mut rng = stream(spec.seed, "test-set", &[]);
    let test_features = sample_features(&test_labels, &class_means, &mut rng);
    let test = Samples::new(spec.feature_dim, test_features, test_labels)?;

    Ok(Task { spec: spec.clone(), clients, test, class_means })
}

fn draw_class_means(spec: &SyntheticTaskSpec) -> Vec<Vec<f64>> {
    let mut rng = stream(spec.seed, "class-means", &[]);
    (0..spec.num_classes)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.class_separation * z
                })
                .collect()
        })
        .collect()
}

fn sample_features(labels: &[usize], means: &[Vec<f64>], rng: &mut SimRng) -> Vec<f64> {
    let dim = means.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(labels.len() * dim);
    for &label in labels {
        for &m in &means[label] {
            let noise: f64 = StandardNormal.sample(rng);
            out.push(m + noise);
        }
    }
    out
}

/// Symmetric Dirichlet draw as normalised Gamma variates.
pub fn sample_dirichlet(concentration: f64, dim: usize, rng: &mut SimRng) -> Result<Vec<f64>, DatagenError> {
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| DatagenError::InvalidSpec(e.to_string()))?;
    let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        return Ok(draws.into_iter().map(|g| g / total).collect());
    }
    // every Gamma draw underflowed: all mass on one uniformly chosen class
    let hot = rng.random_range(0..dim);
    Ok((0..dim).map(|c| if c == hot { 1.0 } else { 0.0 }).collect())
}

/// Rounds `proportions * total` to integers summing exactly to `total`.
pub fn largest_remainder(proportions: &[f64], total: u64) -> Vec<u64> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut left = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[c] += 1;
        left -= 1;
    }
    counts
}

fn dirichlet_counts(spec: &SyntheticTaskSpec, concentration: f64) -> Result<Vec<Vec<u64>>, DatagenError> {
    (0..spec.num_clients)
        .map(|k| {
            let mut rng = stream(spec.seed, "dirichlet", &[k as u64]);
            let p = sample_dirichlet(concentration, spec.num_classes, &mut rng)?;
            Ok(largest_remainder(&p, spec.samples_per_client as u64))
        })
        .collect()
}

fn shard_counts(spec: &SyntheticTaskSpec, shards_per_client: usize) -> Vec<Vec<u64>> {
    let total_shards = spec.num_clients * shards_per_client;
    let shard_size = (spec.samples_per_client / shards_per_client) as u64;
    let per_class = total_shards / spec.num_classes;
    let extra = total_shards % spec.num_classes;
    // sorted pool: class c owns a contiguous run of whole shards
    let mut shard_labels: Vec<usize> = (0..spec.num_classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class + usize::from(c < extra)))
        .collect();
    shard_labels.shuffle(&mut stream(spec.seed, "shards", &[]));
    shard_labels
        .chunks(shards_per_client)
        .map(|chunk| {
            let mut counts = vec![0u64; spec.num_classes];
            for &c in chunk {
                counts[c] += shard_size;
            }
            counts
        })
        .collect()
}

/// Writes client datasets as `client_id,label,feature_0..feature_{d-1}`.
pub fn write_csv<W: Write>(writer: W, clients: &[ClientDataset]) -> Result<(), DatagenError> {
    let dim = clients.first().map_or(0, |c| c.samples.feature_dim);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["client_id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|j| format!("feature_{j}")));
    w.write_record(&header).map_err(|e| DatagenError::Csv(e.to_string()))?;
    for client in clients {
        for i in 0..client.len() {
            let mut row = vec![client.client_id.to_string(), client.samples.labels[i].to_string()];
            row.extend(client.samples.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| DatagenError::Csv(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| DatagenError::Csv(e.to_string()))
}

/// Reads the format produced by [`write_csv`]. Client ids must be dense
/// from zero; rows of one client may appear in any order relative to others.
pub fn read_csv<R: Read>(reader: R, num_classes: usize) -> Result<Vec<ClientDataset>, DatagenError> {
    let csv_err = |e: csv::Error| DatagenError::Csv(e.to_string());
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 2 || &header[0] != "client_id" || &header[1] != "label" {
        return Err(DatagenError::Csv("expected header client_id,label,feature_*".into()));
    }
    let dim = header.len() - 2;
    let mut rows: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        let parse = |s: &str| s.parse::<usize>().map_err(|e| DatagenError::Csv(format!("{s:?}: {e}")));
        let client = parse(&record[0])?;
        let label = parse(&record[1])?;
        if client >= rows.len() {
            rows.resize_with(client + 1, Default::default);
        }
        let (feats, labels) = &mut rows[client];
        for field in record.iter().skip(2) {
            feats.push(field.parse::<f64>().map_err(|e| DatagenError::Csv(format!("{field:?}: {e}")))?);
        }
        labels.push(label);
    }
    rows.into_iter()
        .enumerate()
        .map(|(id, (features, labels))| ClientDataset::new(id, Samples::new(dim, features, labels)?, num_classes))
        .collect()
}
