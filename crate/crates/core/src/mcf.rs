//! Exact integral minimum-cost flow.
//!
//! Successive shortest paths on the residual graph with node potentials
//! (Dijkstra on reduced costs). Arcs with negative unit cost are saturated up
//! front so that every residual arc starts with a non-negative cost; node
//! imbalances are then routed from a super source to a super sink one
//! shortest path at a time.
//!
//! Determinism: adjacency lists are filled in arc-index order, Dijkstra pops
//! `(distance, node)` pairs in lexicographic order and only relaxes on a strict
//! improvement, so among equal-cost paths the one discovered through the
//! lowest arc index wins. Identical networks yield identical flows.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum McfError {
    #[error("supplies has {got} entries for {nodes} nodes")]
    SupplyLength { got: usize, nodes: usize },
    #[error("supplies sum to {0}, expected 0")]
    SupplyImbalance(i64),
    #[error("arc {arc} references node {node} but the network has {nodes} nodes")]
    NodeOutOfRange { arc: usize, node: usize, nodes: usize },
    #[error("arc {arc} has negative capacity {capacity}")]
    NegativeCapacity { arc: usize, capacity: i64 },
    #[error("cost accumulation overflowed 64-bit integers")]
    CostOverflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arc {
    pub tail: usize,
    pub head: usize,
    pub capacity: i64,
    pub unit_cost: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowNetwork {
    pub node_count: usize,
    pub arcs: Vec<Arc>,
    /// Positive entries are sources, negative entries are sinks.
    pub supplies: Vec<i64>,
}

impl FlowNetwork {
    pub fn new(node_count: usize) -> Self {
        Self { node_count, arcs: Vec::new(), supplies: vec![0; node_count] }
    }

    /// Appends an arc and returns its index.
    pub fn add_arc(&mut self, tail: usize, head: usize, capacity: i64, unit_cost: i64) -> usize {
        self.arcs.push(Arc { tail, head, capacity, unit_cost });
        self.arcs.len() - 1
    }

    pub fn set_supply(&mut self, node: usize, supply: i64) {
        self.supplies[node] = supply;
    }

    pub fn validate(&self) -> Result<(), McfError> {
        if self.supplies.len() != self.node_count {
            return Err(McfError::SupplyLength { got: self.supplies.len(), nodes: self.node_count });
        }
        let mut sum: i64 = 0;
        for &s in &self.supplies {
            sum = sum.checked_add(s).ok_or(McfError::CostOverflow)?;
        }
        if sum != 0 {
            return Err(McfError::SupplyImbalance(sum));
        }
        for (i, a) in self.arcs.iter().enumerate() {
            for node in [a.tail, a.head] {
                if node >= self.node_count {
                    return Err(McfError::NodeOutOfRange { arc: i, node, nodes: self.node_count });
                }
            }
            if a.capacity < 0 {
                return Err(McfError::NegativeCapacity { arc: i, capacity: a.capacity });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSolution {
    /// Flow per arc, indexed like `FlowNetwork::arcs`. All zero when infeasible.
    pub flows: Vec<i64>,
    pub total_cost: i64,
    pub status: FlowStatus,
}

impl FlowSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == FlowStatus::Optimal
    }
}

struct Residual {
    head: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
    adj: Vec<Vec<usize>>,
}

impl Residual {
    fn with_nodes(n: usize) -> Self {
        Self { head: Vec::new(), cap: Vec::new(), cost: Vec::new(), adj: vec![Vec::new(); n] }
    }

    // edge e and its twin e ^ 1
    fn link(&mut self, u: usize, v: usize, cap: i64, cost: i64) -> usize {
        let e = self.head.len();
        self.head.extend([v, u]);
        self.cap.extend([cap, 0]);
        self.cost.extend([cost, -cost]);
        self.adj[u].push(e);
        self.adj[v].push(e + 1);
        e
    }
}

/// Solves `network` to optimality or reports infeasibility.
pub fn solve(network: &FlowNetwork) -> Result<FlowSolution, McfError> {
    network.validate()?;
    let n = network.node_count;
    let source = n;
    let sink = n + 1;
    let mut g = Residual::with_nodes(n + 2);

    let mut excess = network.supplies.clone();
    for a in &network.arcs {
        let e = g.link(a.tail, a.head, a.capacity, a.unit_cost);
        if a.unit_cost < 0 && a.capacity > 0 {
            g.cap[e] = 0;
            g.cap[e ^ 1] = a.capacity;
            excess[a.tail] = excess[a.tail].checked_sub(a.capacity).ok_or(McfError::CostOverflow)?;
            excess[a.head] = excess[a.head].checked_add(a.capacity).ok_or(McfError::CostOverflow)?;
        }
    }
    let mut required: i64 = 0;
    for (v, &b) in excess.iter().enumerate() {
        if b > 0 {
            g.link(source, v, b, 0);
            required = required.checked_add(b).ok_or(McfError::CostOverflow)?;
        } else if b < 0 {
            g.link(v, sink, -b, 0);
        }
    }

    let nodes = n + 2;
    let mut potential = vec![0i64; nodes];
    let mut dist = vec![i64::MAX; nodes];
    let mut via = vec![usize::MAX; nodes];
    let mut pushed: i64 = 0;

    while pushed < required {
        dist.fill(i64::MAX);
        via.fill(usize::MAX);
        dist[source] = 0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0i64, source)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &g.adj[u] {
                if g.cap[e] == 0 {
                    continue;
                }
                let v = g.head[e];
                let reduced = g.cost[e] + potential[u] - potential[v];
                debug_assert!(reduced >= 0, "negative reduced cost {reduced}");
                let nd = d.saturating_add(reduced);
                if nd < dist[v] {
                    dist[v] = nd;
                    via[v] = e;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        let reach = dist[sink];
        if reach == i64::MAX {
            break;
        }
        for v in 0..nodes {
            potential[v] += dist[v].min(reach);
        }

        let mut bottleneck = required - pushed;
        let mut v = sink;
        while v != source {
            let e = via[v];
            bottleneck = bottleneck.min(g.cap[e]);
            v = g.head[e ^ 1];
        }
        let mut v = sink;
        while v != source {
            let e = via[v];
            g.cap[e] -= bottleneck;
            g.cap[e ^ 1] += bottleneck;
            v = g.head[e ^ 1];
        }
        pushed += bottleneck;
    }

    if pushed < required {
        return Ok(FlowSolution {
            flows: vec![0; network.arcs.len()],
            total_cost: 0,
            status: FlowStatus::Infeasible,
        });
    }

    let mut total_cost: i64 = 0;
    let flows: Vec<i64> = network
        .arcs
        .iter()
        .enumerate()
        .map(|(i, _)| g.cap[2 * i + 1])
        .collect();
    for (a, &f) in network.arcs.iter().zip(&flows) {
        let c = f.checked_mul(a.unit_cost).ok_or(McfError::CostOverflow)?;
        total_cost = total_cost.checked_add(c).ok_or(McfError::CostOverflow)?;
    }
    Ok(FlowSolution { flows, total_cost, status: FlowStatus::Optimal })
}
