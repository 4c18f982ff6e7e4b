mod common;

use proptest::prelude::*;

use fedgsp::datagen::{generate_task, largest_remainder, ClassDistribution, Skew, SyntheticTaskSpec};
use fedgsp::grouping::{cluster_assignment, clustering_objective, inter_cluster_grouping, random_grouping};
use fedgsp::mcf::{self, FlowNetwork};
use fedgsp::metrics::{cpd, median, pairwise_cpd, CpdConfig};
use fedgsp::orchestrator::{Algorithm, ExperimentConfig, GrowthFunction, GrowthKind, Simulation};
use fedgsp::trainer::{LayerShape, ModelParams};

fn counts(width: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..40, width).prop_filter("non-empty", |v| v.iter().any(|&c| c > 0))
}

fn dists(max_clients: usize) -> impl Strategy<Value = Vec<ClassDistribution>> {
    (2usize..6).prop_flat_map(move |w| {
        prop::collection::vec(counts(w), 1..=max_clients).prop_map(|vs| vs.into_iter().map(ClassDistribution::new).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cpd_is_symmetric_nonnegative_and_matches_double_sum(
        (a, b) in (2usize..8).prop_flat_map(|w| (counts(w), counts(w))),
        sigma in 0.2f64..5.0,
    ) {
        let cfg = CpdConfig { sigma };
        let (da, db) = (ClassDistribution::new(a.clone()), ClassDistribution::new(b.clone()));
        let ab = cpd(&da, &db, &cfg).unwrap();
        let ba = cpd(&db, &da, &cfg).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        let oracle = common::cpd_double_sum(&a, &b, sigma);
        prop_assert!((ab - oracle).abs() <= 1e-12, "{} vs {}", ab, oracle);
    }

    #[test]
    fn cpd_ignores_count_scale(a in counts(5), b in counts(5), k in 1u64..20) {
        let cfg = CpdConfig::default();
        let scaled = ClassDistribution::new(a.iter().map(|c| c * k).collect());
        let base = cpd(&ClassDistribution::new(a), &ClassDistribution::new(b.clone()), &cfg).unwrap();
        let other = cpd(&scaled, &ClassDistribution::new(b), &cfg).unwrap();
        prop_assert!((base - other).abs() <= 1e-14);
    }

    #[test]
    fn median_matches_sorting(values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let expected = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        prop_assert_eq!(median(&values), Some(expected));
    }

    #[test]
    fn pairwise_cpd_enumerates_pairs(ds in dists(7)) {
        let cfg = CpdConfig::default();
        let all = pairwise_cpd(&ds, &cfg).unwrap();
        let mut expected = Vec::new();
        for i in 0..ds.len() {
            for j in i + 1..ds.len() {
                expected.push(common::cpd_double_sum(ds[i].counts(), ds[j].counts(), 1.0));
            }
        }
        prop_assert_eq!(all.len(), expected.len());
        for (a, b) in all.iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mcf_matches_enumeration_with_general_capacities(
        n in 1usize..7,
        l in 1usize..4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut caps = vec![0usize; l];
        for _ in 0..n {
            caps[rng.random_range(0..l)] += 1;
        }
        let costs: Vec<Vec<i64>> = (0..n).map(|_| (0..l).map(|_| rng.random_range(-1000..1000)).collect()).collect();
        let mut net = FlowNetwork::new(n + l);
        for (i, row) in costs.iter().enumerate() {
            net.set_supply(i, 1);
            for (j, &c) in row.iter().enumerate() {
                net.add_arc(i, n + j, 1, c);
            }
        }
        for (j, &c) in caps.iter().enumerate() {
            net.set_supply(n + j, -(c as i64));
        }
        let sol = mcf::solve(&net).unwrap();
        prop_assert!(sol.is_optimal());
        prop_assert_eq!(Some(sol.total_cost), common::brute_force_assignment(&costs, &caps));
        prop_assert!(common::is_feasible_flow(&net, &sol.flows));
        prop_assert!(!common::has_negative_cycle(n + l, &common::residual_arcs(&net, &sol.flows)));
    }

    #[test]
    fn mcf_on_random_graphs_is_optimal_or_infeasible(
        nodes in 2usize..7,
        arcs in prop::collection::vec((0usize..7, 0usize..7, 0i64..4, -20i64..20), 1..14),
        supply in 1i64..4,
    ) {
        let mut net = FlowNetwork::new(nodes);
        for &(u, v, cap, cost) in &arcs {
            if u < nodes && v < nodes && u != v {
                net.add_arc(u, v, cap, cost);
            }
        }
        net.set_supply(0, supply);
        net.set_supply(nodes - 1, -supply);
        let sol = mcf::solve(&net).unwrap();
        if sol.is_optimal() {
            prop_assert!(common::is_feasible_flow(&net, &sol.flows));
            prop_assert!(!common::has_negative_cycle(nodes, &common::residual_arcs(&net, &sol.flows)));
            let cost: i64 = net.arcs.iter().zip(&sol.flows).map(|(a, f)| a.unit_cost * f).sum();
            prop_assert_eq!(cost, sol.total_cost);
        }
    }

    #[test]
    fn balanced_assignment_is_optimal(
        (l, per) in (1usize..4, 1usize..3),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = l * per;
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let centroids: Vec<Vec<f64>> = (0..l).map(|_| (0..3).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let a = cluster_assignment(&points, &centroids).unwrap();
        let got = clustering_objective(&points, &centroids, &a);
        let best = common::balanced_assignments(n, l)
            .iter()
            .map(|cand| clustering_objective(&points, &centroids, cand))
            .fold(f64::INFINITY, f64::min);
        // integer costs are rounded to 1e-6 per point
        prop_assert!(got <= best + n as f64 * 1e-6, "{} vs {}", got, best);
    }

    #[test]
    fn icg_plans_are_balanced_disjoint_and_reproducible(
        k in 2usize..40,
        f in 1usize..13,
        seed in 0u64..1000,
        round in 1u64..50,
    ) {
        let spec = SyntheticTaskSpec {
            num_classes: 6,
            num_clients: k,
            samples_per_client: 20,
            feature_dim: 1,
            skew: Skew::Dirichlet { concentration: 0.5 },
            class_separation: 1.0,
            seed,
        };
        let ds = generate_task(&spec).unwrap().distributions();
        let out = inter_cluster_grouping(&ds, f, round, seed).unwrap();
        let m = f.min(k);
        let l = k / m;
        prop_assert_eq!(out.plan.groups.len(), m);
        prop_assert!(out.plan.groups.iter().all(|g| g.len() == l));
        prop_assert!(out.clusters.members().iter().all(|c| c.len() == k / l));
        let mut seen: Vec<usize> = out.plan.groups.iter().flatten().chain(&out.plan.unassigned).copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
        let again = inter_cluster_grouping(&ds, f, round, seed).unwrap();
        prop_assert_eq!(&out.plan, &again.plan);
    }

    #[test]
    fn random_grouping_is_balanced(k in 1usize..80, m in 1usize..20, seed in any::<u64>()) {
        let plan = random_grouping(k, m, 1, seed).unwrap();
        let m = m.min(k);
        prop_assert_eq!(plan.groups.len(), m);
        prop_assert!(plan.groups.iter().all(|g| g.len() == k / m));
        prop_assert_eq!(plan.unassigned.len(), k - m * (k / m));
    }

    #[test]
    fn growth_is_non_decreasing(kind in 0usize..3, alpha in 0.01f64..4.0, beta in 1u64..50) {
        let kind = [GrowthKind::Linear, GrowthKind::Log, GrowthKind::Exp][kind];
        let g = GrowthFunction { kind, alpha, beta };
        let mut prev = 0;
        for r in 1..=200 {
            let v = g.eval(r);
            prop_assert!(v >= prev);
            prop_assert!(v >= beta);
            prop_assert_eq!(v, common::growth_closed_form(&g, r));
            prev = v;
        }
    }

    #[test]
    fn aggregation_is_order_independent(
        models in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..8),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let layers = vec![LayerShape { inputs: 1, outputs: 3 }];
        let ms: Vec<ModelParams> = models.iter().map(|v| ModelParams { values: v.clone(), layers: layers.clone() }).collect();
        let mut shuffled = ms.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = ModelParams::mean(&ms).unwrap();
        let b = ModelParams::mean(&shuffled).unwrap();
        for (i, (x, y)) in a.values.iter().zip(&b.values).enumerate() {
            let direct = models.iter().map(|m| m[i]).sum::<f64>() / models.len() as f64;
            prop_assert!((x - y).abs() <= 1e-12);
            prop_assert!((x - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn largest_remainder_conserves(p in prop::collection::vec(0.0f64..1.0, 1..12), total in 0u64..500) {
        prop_assume!(p.iter().sum::<f64>() > 0.0);
        let s: f64 = p.iter().sum();
        let props: Vec<f64> = p.iter().map(|x| x / s).collect();
        let counts = largest_remainder(&props, total);
        prop_assert_eq!(counts.iter().sum::<u64>(), total);
        for (c, q) in counts.iter().zip(&props) {
            prop_assert!((*c as f64 - q * total as f64).abs() < 1.0 + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_sampled_member_trains_exactly_once(alg in 0usize..4, seed in 0u64..100, kappa in 0.1f64..1.0) {
        let mut cfg = ExperimentConfig::default();
        cfg.algorithm = Algorithm::ALL[alg];
        cfg.seed = seed;
        cfg.task.num_clients = 15;
        cfg.task.num_classes = 4;
        cfg.task.samples_per_client = 6;
        cfg.task.feature_dim = 2;
        cfg.kappa = kappa;
        cfg.fixed_group_count = 4;
        cfg.growth = GrowthFunction { kind: GrowthKind::Linear, alpha: 1.0, beta: 2 };
        let mut sim = Simulation::new(cfg).unwrap();
        for _ in 0..3 {
            let out = sim.run_round().unwrap();
            let mut expected: Vec<usize> = out.sampled.iter().flat_map(|&g| out.plan.groups[g].clone()).collect();
            expected.sort_unstable();
            let mut trained = out.trained_clients.clone();
            trained.sort_unstable();
            prop_assert_eq!(&trained, &expected);
            trained.dedup();
            prop_assert_eq!(trained.len(), expected.len());
            prop_assert_eq!(out.sampled.len() as u64, out.record.sampled_groups);
        }
    }
}
