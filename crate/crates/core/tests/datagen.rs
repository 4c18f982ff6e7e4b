use fedgsp::datagen::{class_distribution, generate_task, read_csv, write_csv, Skew, SyntheticTaskSpec};
use fedgsp::metrics::{median_pairwise_cpd, CpdConfig};

fn spec(num_classes: usize, num_clients: usize, skew: Skew, seed: u64) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        num_classes,
        num_clients,
        samples_per_client: 50,
        feature_dim: 4,
        skew,
        class_separation: 1.0,
        seed,
    }
}

fn tally(labels: &[usize], classes: usize) -> Vec<u64> {
    let mut out = vec![0u64; classes];
    for &l in labels {
        out[l] += 1;
    }
    out
}

#[test]
fn reference_task_conserves_samples() {
    let task = generate_task(&spec(5, 12, Skew::Dirichlet { concentration: 0.3 }, 7)).unwrap();
    let mut total = 0;
    for c in &task.clients {
        let recount = tally(&c.samples.labels, 5);
        assert_eq!(class_distribution(c).counts(), recount.as_slice());
        total += recount.iter().sum::<u64>();
    }
    assert_eq!(total, 600);
}

#[test]
fn skew_monotonicity() {
    let cfg = CpdConfig::default();
    for seed in 0..5 {
        for k in [20, 40] {
            let skewed = generate_task(&spec(10, k, Skew::Dirichlet { concentration: 0.1 }, seed)).unwrap();
            let mild = generate_task(&spec(10, k, Skew::Dirichlet { concentration: 100.0 }, seed)).unwrap();
            let a = median_pairwise_cpd(&skewed.distributions(), &cfg).unwrap();
            let b = median_pairwise_cpd(&mild.distributions(), &cfg).unwrap();
            assert!(a > b, "seed {seed}, K {k}: {a} <= {b}");
        }
    }
}

#[test]
fn shards_deal_whole_label_blocks() {
    let task = generate_task(&spec(10, 20, Skew::Shards { shards_per_client: 2 }, 3)).unwrap();
    for c in &task.clients {
        let nonzero: Vec<u64> = c.distribution().counts().iter().copied().filter(|&x| x > 0).collect();
        assert!((1..=2).contains(&nonzero.len()), "{nonzero:?}");
        assert_eq!(nonzero.iter().sum::<u64>(), 50);
    }
    let mut per_class = vec![0u64; 10];
    for c in &task.clients {
        for (p, x) in per_class.iter_mut().zip(c.distribution().counts()) {
            *p += x;
        }
    }
    assert_eq!(per_class, vec![100; 10]);
}

#[test]
fn csv_dump_reloads_identically() {
    let task = generate_task(&spec(4, 6, Skew::Dirichlet { concentration: 1.0 }, 2)).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &task.clients).unwrap();
    let header = String::from_utf8(buf[..buf.iter().position(|&b| b == b'\n').unwrap()].to_vec()).unwrap();
    assert_eq!(header, "client_id,label,feature_0,feature_1,feature_2,feature_3");
    let back = read_csv(buf.as_slice(), 4).unwrap();
    assert_eq!(back, task.clients);
}

#[test]
fn test_set_is_class_balanced() {
    let task = generate_task(&spec(7, 4, Skew::Dirichlet { concentration: 0.3 }, 1)).unwrap();
    assert_eq!(tally(&task.test.labels, 7), vec![100; 7]);
}
