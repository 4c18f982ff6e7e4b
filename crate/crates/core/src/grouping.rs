//! Inter-cluster grouping.
//!
//! Clients are clustered into `L = floor(K / M)` equal-size clusters of
//! similar class-count vectors by alternating an exact balanced assignment
//! (a bipartite min-cost flow) with a centroid update. Each of the `M`
//! groups then takes one client from every cluster, so each group carries a
//! cross-section of the population and its centroid stays close to the
//! global one.
//!
//! Clustering runs on raw count vectors. Real assignment costs
//! `0.5 * ||v - c||²` are scaled by [`COST_SCALE`] and rounded half-to-even
//! before they reach the flow solver.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::datagen::ClassDistribution;
use crate::mcf::{self, FlowNetwork, McfError};
use crate::metrics::{cpd, CpdConfig, MetricsError};
use crate::rng::stream;

pub const COST_SCALE: f64 = 1e6;
/// Iteration budget of the assign/update loop.
pub const MAX_ITERATIONS: usize = 10;
/// Stop once no centroid moves further than this (Euclidean).
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum GroupingError {
    #[error("no clients to group")]
    NoClients,
    #[error("group count must be at least 1")]
    ZeroGroups,
    #[error("{points} points cannot be split into {clusters} equal clusters")]
    Indivisible { points: usize, clusters: usize },
    #[error("class distributions have inconsistent widths")]
    WidthMismatch,
    #[error("assignment cost {0} does not fit the integer solver")]
    CostRange(f64),
    #[error("balanced assignment network reported infeasible")]
    Infeasible,
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error(transparent)]
    Mcf(#[from] McfError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn scaled_cost(point: &[f64], centroid: &[f64]) -> Result<i64, GroupingError> {
    let c = (0.5 * squared_distance(point, centroid) * COST_SCALE).round_ties_even();
    // leave headroom for path sums inside the solver
    if !(c.is_finite() && c.abs() < 1e15) {
        return Err(GroupingError::CostRange(c));
    }
    Ok(c as i64)
}

/// Optimal balanced assignment of `points` to `centroids`: every cluster
/// receives exactly `points.len() / centroids.len()` points.
pub fn cluster_assignment(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Result<Vec<usize>, GroupingError> {
    let n = points.len();
    let l = centroids.len();
    if l == 0 || n % l != 0 {
        return Err(GroupingError::Indivisible { points: n, clusters: l });
    }
    let size = (n / l) as i64;
    let mut net = FlowNetwork::new(n + l);
    for (k, p) in points.iter().enumerate() {
        net.set_supply(k, 1);
        for (j, c) in centroids.iter().enumerate() {
            net.add_arc(k, n + j, 1, scaled_cost(p, c)?);
        }
    }
    for j in 0..l {
        net.set_supply(n + j, -size);
    }
    let sol = mcf::solve(&net)?;
    if !sol.is_optimal() {
        return Err(GroupingError::Infeasible);
    }
    // arcs are laid out point-major, l per point
    let assignment = sol
        .flows
        .chunks(l)
        .map(|row| row.iter().position(|&f| f == 1))
        .collect::<Option<Vec<usize>>>()
        .ok_or(GroupingError::Infeasible)?;
    Ok(assignment)
}

/// Centroid of each cluster as the mean of its members.
pub fn cluster_update(points: &[Vec<f64>], assignment: &[usize], clusters: usize) -> Result<Vec<Vec<f64>>, GroupingError> {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; clusters];
    let mut sizes = vec![0usize; clusters];
    for (p, &a) in points.iter().zip(assignment) {
        sizes[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (l, (sum, &size)) in sums.iter_mut().zip(&sizes).enumerate() {
        if size == 0 {
            return Err(GroupingError::EmptyCluster(l));
        }
        for s in sum.iter_mut() {
            *s /= size as f64;
        }
    }
    Ok(sums)
}

/// `sum_k 0.5 * ||v_k - C_{a(k)}||²`.
pub fn clustering_objective(points: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| 0.5 * squared_distance(p, &centroids[a]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id per clustered point.
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every assignment step and every update step, in order.
    pub objective_trace: Vec<f64>,
}

impl ClusterState {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }

    /// Point indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centroids.len()];
        for (k, &a) in self.assignment.iter().enumerate() {
            out[a].push(k);
        }
        out
    }
}

/// Balanced k-means: alternates [`cluster_assignment`] and [`cluster_update`]
/// from `initial` centroids until convergence or [`MAX_ITERATIONS`].
///
/// A fresh assignment only replaces the previous one when it does not raise
/// the real-valued objective, which keeps the trace monotone even where cost
/// quantisation produces integer ties.
pub fn balanced_kmeans(points: &[Vec<f64>], initial: Vec<Vec<f64>>) -> Result<ClusterState, GroupingError> {
    let l = initial.len();
    let mut centroids = initial;
    let mut assignment: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for it in 1..=MAX_ITERATIONS {
        let mut next = cluster_assignment(points, &centroids)?;
        if let Some(prev) = &assignment {
            if clustering_objective(points, &centroids, &next) > clustering_objective(points, &centroids, prev) {
                next = prev.clone();
            }
        }
        trace.push(clustering_objective(points, &centroids, &next));
        let updated = cluster_update(points, &next, l)?;
        trace.push(clustering_objective(points, &updated, &next));
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        assignment = Some(next);
        iterations = it;
        if shift < CONVERGENCE_TOL {
            break;
        }
    }
    let assignment = assignment.unwrap_or_default();
    let objective = clustering_objective(points, &centroids, &assignment);
    Ok(ClusterState { centroids, assignment, objective, iterations, objective_trace: trace })
}

/// Round-specific assignment of clients to ordered groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub round: u64,
    /// Client ids per group, in training order.
    pub groups: Vec<Vec<usize>>,
    /// Clients that sit out this round, ascending.
    pub unassigned: Vec<usize>,
}

impl GroupingPlan {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Overall class distribution of every group.
    pub fn group_distributions(&self, dists: &[ClassDistribution]) -> Vec<ClassDistribution> {
        let width = dists.first().map_or(0, ClassDistribution::num_classes);
        self.groups
            .iter()
            .map(|g| ClassDistribution::sum(width, g.iter().map(|&k| &dists[k])))
            .collect()
    }

    /// Same membership with each group's order reshuffled for `round`.
    pub fn reshuffled(&self, round: u64, seed: u64) -> GroupingPlan {
        let mut rng = stream(seed, "group-order", &[round]);
        let mut groups = self.groups.clone();
        for g in &mut groups {
            g.shuffle(&mut rng);
        }
        GroupingPlan { round, groups, unassigned: self.unassigned.clone() }
    }
}

/// Centroid diagnostics of an inter-cluster grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCentroidReport {
    pub group_centroids: Vec<Vec<f64>>,
    pub global_centroid: Vec<f64>,
    /// `||C^m - C_global||²` per group.
    pub group_errors: Vec<f64>,
    /// Largest member-to-centroid squared distance per cluster.
    pub cluster_spreads: Vec<f64>,
    /// `sum_l spread_l / L²`. Not a valid upper bound in general: it holds
    /// only when the per-cluster offsets of a group are orthogonal.
    pub bound: f64,
    /// `sum_l spread_l / L`, which always bounds every group error.
    pub cauchy_schwarz_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcgOutcome {
    pub plan: GroupingPlan,
    pub report: GroupCentroidReport,
    pub clusters: ClusterState,
    /// Client id of each clustered point (the divisibility subsample), ascending.
    pub clustered_clients: Vec<usize>,
}

fn check_widths(dists: &[ClassDistribution]) -> Result<(), GroupingError> {
    let first = dists.first().ok_or(GroupingError::NoClients)?;
    if dists.iter().any(|d| d.num_classes() != first.num_classes()) {
        return Err(GroupingError::WidthMismatch);
    }
    Ok(())
}

/// Groups clients by inter-cluster sampling. `requested_groups` is capped at
/// the number of clients.
pub fn inter_cluster_grouping(
    dists: &[ClassDistribution],
    requested_groups: usize,
    round: u64,
    seed: u64,
) -> Result<IcgOutcome, GroupingError> {
    check_widths(dists)?;
    if requested_groups == 0 {
        return Err(GroupingError::ZeroGroups);
    }
    let k = dists.len();
    let m = requested_groups.min(k);
    let l = k / m;
    let cluster_size = k / l;

    let mut rng = stream(seed, "icg-subsample", &[round]);
    let mut clustered: Vec<usize> = index::sample(&mut rng, k, l * cluster_size).into_vec();
    clustered.sort_unstable();
    let mut unassigned: Vec<usize> = {
        let mut keep = vec![false; k];
        for &c in &clustered {
            keep[c] = true;
        }
        (0..k).filter(|&c| !keep[c]).collect()
    };

    let points: Vec<Vec<f64>> = clustered.iter().map(|&c| dists[c].as_f64()).collect();
    let mut rng = stream(seed, "icg-init", &[round]);
    let initial: Vec<Vec<f64>> = index::sample(&mut rng, points.len(), l)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let clusters = balanced_kmeans(&points, initial)?;

    let mut rng = stream(seed, "icg-assemble", &[round]);
    let mut members = clusters.members();
    for cluster in &mut members {
        cluster.shuffle(&mut rng);
    }
    // group i takes the i-th shuffled member of every cluster
    let by_cluster: Vec<Vec<usize>> = (0..m).map(|i| members.iter().map(|c| c[i]).collect()).collect();
    for cluster in &members {
        unassigned.extend(cluster[m..].iter().map(|&p| clustered[p]));
    }
    unassigned.sort_unstable();

    let report = centroid_report(&points, &clusters, &by_cluster);
    let groups = by_cluster
        .iter()
        .map(|g| {
            let mut ids: Vec<usize> = g.iter().map(|&p| clustered[p]).collect();
            ids.shuffle(&mut rng);
            ids
        })
        .collect();

    Ok(IcgOutcome { plan: GroupingPlan { round, groups, unassigned }, report, clusters, clustered_clients: clustered })
}

/// Centroid diagnostics for groups given as point indices, one per cluster
/// in cluster order.
pub fn centroid_report(points: &[Vec<f64>], clusters: &ClusterState, groups: &[Vec<usize>]) -> GroupCentroidReport {
    let l = clusters.cluster_count();
    let dim = points.first().map_or(0, Vec::len);
    let mean = |vs: &mut dyn Iterator<Item = &Vec<f64>>| {
        let mut acc = vec![0.0; dim];
        let mut n = 0usize;
        for v in vs {
            n += 1;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        acc
    };
    let global_centroid = mean(&mut clusters.centroids.iter());
    let group_centroids: Vec<Vec<f64>> = groups.iter().map(|g| mean(&mut g.iter().map(|&p| &points[p]))).collect();
    let group_errors = group_centroids.iter().map(|c| squared_distance(c, &global_centroid)).collect();
    let mut cluster_spreads = vec![0.0f64; l];
    for (p, &a) in points.iter().zip(&clusters.assignment) {
        cluster_spreads[a] = cluster_spreads[a].max(squared_distance(p, &clusters.centroids[a]));
    }
    let spread_sum = cluster_spreads.iter().sum::<f64>();
    GroupCentroidReport {
        group_centroids,
        global_centroid,
        group_errors,
        cluster_spreads,
        bound: spread_sum / (l * l) as f64,
        cauchy_schwarz_bound: spread_sum / l as f64,
    }
}

/// Uniformly random balanced grouping: `M` groups of `floor(K / M)` clients.
pub fn random_grouping(num_clients: usize, requested_groups: usize, round: u64, seed: u64) -> Result<GroupingPlan, GroupingError> {
    if num_clients == 0 {
        return Err(GroupingError::NoClients);
    }
    if requested_groups == 0 {
        return Err(GroupingError::ZeroGroups);
    }
    let m = requested_groups.min(num_clients);
    let size = num_clients / m;
    let mut order: Vec<usize> = (0..num_clients).collect();
    order.shuffle(&mut stream(seed, "random-grouping", &[round]));
    let groups = order[..m * size].chunks(size).map(<[usize]>::to_vec).collect();
    let mut unassigned = order[m * size..].to_vec();
    unassigned.sort_unstable();
    Ok(GroupingPlan { round, groups, unassigned })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupDistance {
    #[default]
    SquaredL2,
    Cpd,
}

/// Sum of distances between the overall distributions of every pair of
/// groups. Diagnostic only.
pub fn grouping_objective_z(
    plan: &GroupingPlan,
    dists: &[ClassDistribution],
    distance: GroupDistance,
    cpd_cfg: &CpdConfig,
) -> Result<f64, GroupingError> {
    let totals = plan.group_distributions(dists);
    let mut z = 0.0;
    for i in 0..totals.len() {
        for j in i + 1..totals.len() {
            z += match distance {
                GroupDistance::SquaredL2 => squared_distance(&totals[i].as_f64(), &totals[j].as_f64()),
                GroupDistance::Cpd => cpd(&totals[i], &totals[j], cpd_cfg)?,
            };
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[u64]) -> ClassDistribution {
        ClassDistribution::new(v.to_vec())
    }

    #[test]
    fn coinciding_points_take_their_own_centroid() {
        let points = vec![vec![0.0, 5.0], vec![3.0, 1.0]];
        let centroids = vec![vec![3.0, 1.0], vec![0.0, 5.0]];
        let a = cluster_assignment(&points, &centroids).unwrap();
        assert_eq!(a, vec![1, 0]);
        assert_eq!(clustering_objective(&points, &centroids, &a), 0.0);
    }

    #[test]
    fn two_pairs_stay_together() {
        let points = vec![vec![0.0, 0.0], vec![10.0, 10.0], vec![1.0, 0.0], vec![10.0, 11.0]];
        let centroids = vec![vec![0.0, 0.0], vec![10.0, 10.0]];
        let a = cluster_assignment(&points, &centroids).unwrap();
        assert_eq!(a, vec![0, 1, 0, 1]);
        let c = cluster_update(&points, &a, 2).unwrap();
        // each pair is at distance 1, so 0.5 * 2 * (0.5)^2 per pair
        assert!((clustering_objective(&points, &c, &a) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn update_is_the_member_mean() {
        let points = vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![7.0, 7.0]];
        let c = cluster_update(&points, &[0, 0, 1], 2).unwrap();
        assert_eq!(c, vec![vec![1.0, 1.0], vec![7.0, 7.0]]);
    }

    #[test]
    fn empty_cluster_is_an_internal_error() {
        let points = vec![vec![1.0], vec![2.0]];
        assert!(matches!(cluster_update(&points, &[0, 0], 2), Err(GroupingError::EmptyCluster(1))));
    }

    #[test]
    fn indivisible_assignment_is_rejected() {
        let points = vec![vec![1.0]; 3];
        let centroids = vec![vec![0.0]; 2];
        assert!(matches!(cluster_assignment(&points, &centroids), Err(GroupingError::Indivisible { .. })));
    }

    #[test]
    fn full_scale_group_shape() {
        let dists: Vec<ClassDistribution> =
            (0..364u64).map(|i| dist(&[i % 7, (i * 3) % 11, 1 + i % 5])).collect();
        let out = inter_cluster_grouping(&dists, 52, 1, 9).unwrap();
        assert_eq!(out.plan.groups.len(), 52);
        assert!(out.plan.groups.iter().all(|g| g.len() == 7));
        assert!(out.plan.unassigned.is_empty());
    }

    #[test]
    fn single_group_holds_everyone_and_converges_at_once() {
        let dists: Vec<ClassDistribution> = (0..9u64).map(|i| dist(&[i, 9 - i])).collect();
        let out = inter_cluster_grouping(&dists, 1, 1, 3).unwrap();
        assert_eq!(out.plan.groups.len(), 1);
        let mut g = out.plan.groups[0].clone();
        g.sort_unstable();
        assert_eq!(g, (0..9).collect::<Vec<_>>());
        assert_eq!(out.clusters.iterations, 1);
    }

    #[test]
    fn group_count_is_capped_at_client_count() {
        let dists: Vec<ClassDistribution> = (0..5u64).map(|i| dist(&[i, 1])).collect();
        let out = inter_cluster_grouping(&dists, 50, 1, 3).unwrap();
        assert_eq!(out.plan.groups.len(), 5);
        assert!(out.plan.groups.iter().all(|g| g.len() == 1));
    }

    #[test]
    fn leftover_clients_are_unassigned() {
        // K = 10, M = 3: L = 3 clusters of 3, one client subsampled out
        let dists: Vec<ClassDistribution> = (0..10u64).map(|i| dist(&[i, 2 * i + 1])).collect();
        let out = inter_cluster_grouping(&dists, 3, 2, 5).unwrap();
        assert_eq!(out.plan.groups.len(), 3);
        assert_eq!(out.plan.unassigned.len(), 1);
        let mut seen: Vec<usize> = out.plan.groups.iter().flatten().copied().chain(out.plan.unassigned.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn objective_z_two_groups() {
        let dists = vec![dist(&[4, 0]), dist(&[0, 4])];
        let plan = GroupingPlan { round: 1, groups: vec![vec![0], vec![1]], unassigned: vec![] };
        let z = grouping_objective_z(&plan, &dists, GroupDistance::SquaredL2, &CpdConfig::default()).unwrap();
        assert_eq!(z, 32.0);
    }

    #[test]
    fn objective_z_is_zero_for_identical_groups() {
        let dists = vec![dist(&[1, 2]), dist(&[2, 1]), dist(&[2, 1]), dist(&[1, 2])];
        let plan = GroupingPlan { round: 1, groups: vec![vec![0, 1], vec![2, 3]], unassigned: vec![] };
        for d in [GroupDistance::SquaredL2, GroupDistance::Cpd] {
            assert_eq!(grouping_objective_z(&plan, &dists, d, &CpdConfig::default()).unwrap(), 0.0);
        }
    }

    #[test]
    fn random_grouping_is_balanced() {
        let plan = random_grouping(23, 4, 1, 11).unwrap();
        assert_eq!(plan.groups.len(), 4);
        assert!(plan.groups.iter().all(|g| g.len() == 5));
        assert_eq!(plan.unassigned.len(), 3);
    }

    #[test]
    fn plan_json_shape() {
        let plan = GroupingPlan { round: 3, groups: vec![vec![2, 0], vec![1]], unassigned: vec![4] };
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(json, r#"{"round":3,"groups":[[2,0],[1]],"unassigned":[4]}"#);
    }
}
