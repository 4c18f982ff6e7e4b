//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code it checks.

#![allow(dead_code)]

use fedgsp::datagen::{ClientDataset, Samples};
use fedgsp::mcf::FlowNetwork;
use fedgsp::orchestrator::{GrowthFunction, GrowthKind};

/// Arcs of the residual graph `(tail, head, cost)` for a flow on `net`.
pub fn residual_arcs(net: &FlowNetwork, flows: &[i64]) -> Vec<(usize, usize, i64)> {
    let mut out = Vec::new();
    for (a, &f) in net.arcs.iter().zip(flows) {
        if f < a.capacity {
            out.push((a.tail, a.head, a.unit_cost));
        }
        if f > 0 {
            out.push((a.head, a.tail, -a.unit_cost));
        }
    }
    out
}

/// Bellman-Ford from a virtual root joined to every node.
pub fn has_negative_cycle(nodes: usize, arcs: &[(usize, usize, i64)]) -> bool {
    let mut dist = vec![0i64; nodes];
    for _ in 0..nodes {
        let mut changed = false;
        for &(u, v, c) in arcs {
            if dist[u] + c < dist[v] {
                dist[v] = dist[u] + c;
                changed = true;
            }
        }
        if !changed {
            return false;
        }
    }
    arcs.iter().any(|&(u, v, c)| dist[u] + c < dist[v])
}

/// Checks capacity bounds and node balances of `flows`.
pub fn is_feasible_flow(net: &FlowNetwork, flows: &[i64]) -> bool {
    let mut balance = net.supplies.clone();
    for (a, &f) in net.arcs.iter().zip(flows) {
        if f < 0 || f > a.capacity {
            return false;
        }
        balance[a.tail] -= f;
        balance[a.head] += f;
    }
    balance.iter().all(|&b| b == 0)
}

/// Cheapest assignment of every point to a cluster with exactly
/// `capacities[j]` points in cluster `j`, by full enumeration.
pub fn brute_force_assignment(costs: &[Vec<i64>], capacities: &[usize]) -> Option<i64> {
    let n = costs.len();
    let l = capacities.len();
    let mut best: Option<i64> = None;
    let mut choice = vec![0usize; n];
    let total = l.checked_pow(n as u32)?;
    for code in 0..total {
        let mut c = code;
        for slot in choice.iter_mut() {
            *slot = c % l;
            c /= l;
        }
        let mut used = vec![0usize; l];
        for &j in &choice {
            used[j] += 1;
        }
        if used != capacities {
            continue;
        }
        let cost: i64 = choice.iter().enumerate().map(|(i, &j)| costs[i][j]).sum();
        best = Some(best.map_or(cost, |b| b.min(cost)));
    }
    best
}

/// Every balanced assignment of `n` points to `l` clusters.
pub fn balanced_assignments(n: usize, l: usize) -> Vec<Vec<usize>> {
    let size = n / l;
    let mut out = Vec::new();
    let mut choice = vec![0usize; n];
    for code in 0..l.pow(n as u32) {
        let mut c = code;
        for slot in choice.iter_mut() {
            *slot = c % l;
            c /= l;
        }
        let mut used = vec![0usize; l];
        for &j in &choice {
            used[j] += 1;
        }
        if used.iter().all(|&u| u == size) {
            out.push(choice.clone());
        }
    }
    out
}

/// CPD by the explicit kernel double sum over one-hot class embeddings.
pub fn cpd_double_sum(a: &[u64], b: &[u64], sigma: f64) -> f64 {
    let norm = |v: &[u64]| {
        let t: u64 = v.iter().sum();
        v.iter().map(|&x| x as f64 / t as f64).collect::<Vec<_>>()
    };
    let (p, q) = (norm(a), norm(b));
    let k = |i: usize, j: usize| {
        // ||e_i - e_j||² is 0 or 2
        let d2 = if i == j { 0.0 } else { 2.0 };
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let f = p.len();
    let mut s = 0.0;
    for i in 0..f {
        for j in 0..f {
            s += k(i, j) * (p[i] * p[j] + q[i] * q[j] - 2.0 * p[i] * q[j]);
        }
    }
    s
}

/// `f(r)` straight from the closed forms, saturating like an unbounded
/// integer clamped to `u64`.
pub fn growth_closed_form(g: &GrowthFunction, r: u64) -> u64 {
    let r = r as f64;
    let steps = match g.kind {
        GrowthKind::Linear => (g.alpha * (r - 1.0) + 1.0).floor(),
        GrowthKind::Log => (g.alpha * r.ln() + 1.0).floor(),
        GrowthKind::Exp => (1.0 + g.alpha).powf(r - 1.0).floor(),
    };
    let s: u128 = if steps >= 2f64.powi(64) { u128::from(u64::MAX) } else { steps as u128 };
    (s * u128::from(g.beta)).min(u128::from(u64::MAX)) as u64
}

/// A softmax-regression model kept as explicit matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Softmax {
    /// `w[c][j]`
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Softmax {
    pub fn from_flat(values: &[f64], classes: usize, dim: usize) -> Self {
        let w = (0..classes).map(|c| values[c * dim..(c + 1) * dim].to_vec()).collect();
        let b = values[classes * dim..classes * dim + classes].to_vec();
        Self { w, b }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.w.iter().flatten().chain(&self.b).copied().collect()
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self.w.iter().zip(&self.b).map(|(row, b)| b + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()).collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    /// One SGD step on the rows `batch` of (`xs`, `ys`).
    pub fn step(&mut self, xs: &[Vec<f64>], ys: &[usize], batch: &[usize], lr: f64) {
        let classes = self.b.len();
        let dim = self.w[0].len();
        let mut gw = vec![vec![0.0; dim]; classes];
        let mut gb = vec![0.0; classes];
        for &i in batch {
            let p = self.probabilities(&xs[i]);
            for c in 0..classes {
                let d = p[c] - if c == ys[i] { 1.0 } else { 0.0 };
                gb[c] += d;
                for j in 0..dim {
                    gw[c][j] += d * xs[i][j];
                }
            }
        }
        let n = batch.len() as f64;
        for c in 0..classes {
            self.b[c] -= lr * gb[c] / n;
            for j in 0..dim {
                self.w[c][j] -= lr * gw[c][j] / n;
            }
        }
    }
}

/// Rows of `samples` as owned vectors.
pub fn rows(samples: &Samples) -> Vec<Vec<f64>> {
    (0..samples.len()).map(|i| samples.row(i).to_vec()).collect()
}

/// Concatenates the clients' data in chain order; returns the data and the
/// row offset of each client.
pub fn concatenate(clients: &[&ClientDataset]) -> (Vec<Vec<f64>>, Vec<usize>, Vec<usize>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut offsets = Vec::new();
    for c in clients {
        offsets.push(xs.len());
        xs.extend(rows(&c.samples));
        ys.extend(c.samples.labels.iter().copied());
    }
    (xs, ys, offsets)
}

/// Central differences of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Mean cross-entropy of a dense tanh network given as flat parameters,
/// written independently of the library's forward pass.
pub fn mlp_loss(values: &[f64], shapes: &[(usize, usize)], xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let mut act = x.clone();
        let mut off = 0;
        for (l, &(inputs, outputs)) in shapes.iter().enumerate() {
            let mut next = vec![0.0; outputs];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = values[off + inputs * outputs + o];
                for j in 0..inputs {
                    s += values[off + o * inputs + j] * act[j];
                }
                *slot = if l + 1 < shapes.len() { s.tanh() } else { s };
            }
            off += inputs * outputs + outputs;
            act = next;
        }
        let m = act.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + act.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - act[y];
    }
    total / xs.len() as f64
}

/// Sum of squared L2 distances between every pair of group totals.
pub fn pairwise_z(groups: &[Vec<u64>]) -> f64 {
    let mut z = 0.0;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            z += groups[i].iter().zip(&groups[j]).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>();
        }
    }
    z
}
