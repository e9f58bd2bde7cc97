use histcache::evaluation::*;
use histcache::trec::{format_run, parse_run};
use histcache::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rs(ids: &[String]) -> ResultSet {
    ResultSet::new(
        ids.iter()
            .enumerate()
            .map(|(i, id)| Neighbor {
                id: id.clone(),
                distance: i as f64,
            })
            .collect(),
    )
}

/// Two-sided permutation p-value of the difference in means.
fn permutation_p(a: &[f64], b: &[f64], rounds: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let observed = (mean(a) - mean(b)).abs();
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut extreme = 0;
    for _ in 0..rounds {
        pooled.shuffle(rng);
        let (x, y) = pooled.split_at(a.len());
        if (mean(x) - mean(y)).abs() >= observed {
            extreme += 1;
        }
    }
    (extreme + 1) as f64 / (rounds + 1) as f64
}

#[test]
fn ttest_agrees_with_permutation_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let n51 = Normal::new(5.0, 1.0).unwrap();
    let a: Vec<f64> = (0..50).map(|_| n01.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..50).map(|_| n51.sample(&mut rng)).collect();
    for kind in [TTestKind::Student, TTestKind::Welch] {
        let t = two_sample_ttest(&a, &b, kind).unwrap();
        assert!(t.p < 0.01 && t.significant(0.01));
    }
    assert!(permutation_p(&a, &b, 10_000, &mut rng) < 0.01);

    // same distribution: both tests should be far from rejecting, and close
    let c: Vec<f64> = (0..40).map(|_| n01.sample(&mut rng)).collect();
    let d: Vec<f64> = (0..40).map(|_| n01.sample(&mut rng) + 0.3).collect();
    let t = two_sample_ttest(&c, &d, TTestKind::Student).unwrap();
    let perm = permutation_p(&c, &d, 10_000, &mut rng);
    assert!(
        (t.p - perm).abs() < 0.03,
        "t-test {} vs permutation {}",
        t.p,
        perm
    );
}

#[test]
fn ttest_needs_two_samples_each() {
    assert!(matches!(
        two_sample_ttest(&[1.0], &[1.0, 2.0], TTestKind::Student),
        Err(Error::InsufficientSamples(..))
    ));
}

#[test]
fn run_file_round_trip_gives_same_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut qrels = Qrels::new();
    let mut topics = Vec::new();
    for t in 0..12 {
        let topic = format!("{}_{}", t / 4 + 31, t % 4 + 1);
        let ids: Vec<String> = (0..60)
            .map(|i| format!("doc{}", rng.random_range(0..400) * 1000 + i))
            .collect();
        for id in ids.iter().step_by(3) {
            qrels.insert(topic.as_str(), id.as_str(), rng.random_range(0..4));
        }
        topics.push((topic, rs(&ids)));
    }
    let cutoffs = MetricCutoffs::default();
    let direct: Run = topics
        .iter()
        .map(|(t, r)| (t.clone(), r.ids().map(str::to_string).collect()))
        .collect();
    let text = format_run(topics.iter().map(|(t, r)| (t.as_str(), r)), "tag");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.trec");
    std::fs::write(&path, &text).unwrap();
    let parsed = parse_run(
        std::io::BufReader::new(std::fs::File::open(&path).unwrap()),
        "run.trec",
    )
    .unwrap();
    assert_eq!(parsed, direct);

    let mut qbuf = Vec::new();
    qrels.write(&mut qbuf).unwrap();
    let qrels2 = Qrels::parse(&qbuf[..], "qrels").unwrap();
    let m1 = rank_metrics(&direct, &qrels, &cutoffs).unwrap();
    let m2 = rank_metrics(&parsed, &qrels2, &cutoffs).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.mean.len(), 5);
}

#[test]
fn hit_rate_ignores_first_turns() {
    assert_eq!(
        hit_rate([vec![false, true, true, false]]).unwrap(),
        2.0 / 3.0
    );
    assert_eq!(
        hit_rate([vec![true, false], vec![false, true]]).unwrap(),
        0.5
    );
    assert!(matches!(
        hit_rate([vec![true]]),
        Err(Error::NoEligibleQueries)
    ));
}

proptest! {
    #[test]
    fn coverage_is_symmetric_and_bounded(
        a in prop::collection::hash_set(0u32..40, 10),
        b in prop::collection::hash_set(0u32..40, 10),
        k in 1usize..=10,
    ) {
        let a: Vec<String> = a.into_iter().map(|x| x.to_string()).collect();
        let b: Vec<String> = b.into_iter().map(|x| x.to_string()).collect();
        let ab = coverage_at(&rs(&a), &rs(&b), k).unwrap();
        let ba = coverage_at(&rs(&b), &rs(&a), k).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(coverage_at(&rs(&a), &rs(&a), k).unwrap(), 1.0);
    }

    #[test]
    fn turning_a_miss_into_a_hit_never_lowers_hit_rate(
        convs in prop::collection::vec(prop::collection::vec(any::<bool>(), 2..8), 1..5),
        pick in any::<prop::sample::Index>(),
    ) {
        let before = hit_rate(convs.clone()).unwrap();
        let mut after = convs.clone();
        let flat: Vec<(usize, usize)> = convs
            .iter()
            .enumerate()
            .flat_map(|(c, v)| (1..v.len()).map(move |t| (c, t)))
            .collect();
        let (c, t) = flat[pick.index(flat.len())];
        after[c][t] = true;
        prop_assert!(hit_rate(after).unwrap() >= before);
    }

    #[test]
    fn rank_metrics_lie_in_unit_interval(
        grades in prop::collection::vec(0u32..4, 1..30),
        order in prop::collection::vec(0usize..30, 1..30),
    ) {
        let mut qrels = Qrels::new();
        for (i, g) in grades.iter().enumerate() {
            qrels.insert("t", format!("d{i}"), *g);
        }
        let mut seen = std::collections::HashSet::new();
        let docs: Vec<String> = order.into_iter().filter(|i| seen.insert(*i)).map(|i| format!("d{i}")).collect();
        let mut run = Run::new();
        run.insert("t".into(), docs);
        match rank_metrics(&run, &qrels, &MetricCutoffs::default()) {
            Ok(m) => {
                for v in m.mean.values() {
                    prop_assert!((0.0..=1.0 + 1e-12).contains(v));
                }
            }
            Err(e) => prop_assert!(grades.iter().all(|&g| g == 0), "{e}"),
        }
    }

    #[test]
    fn tuned_threshold_separates_low_coverage(
        pts in prop::collection::vec((-0.5f64..0.5, 0.0f64..1.0), 1..40),
        floor in 0.05f64..0.9,
    ) {
        let points: Vec<TunePoint> = pts
            .iter()
            .enumerate()
            .map(|(i, &(r_hat, coverage))| TunePoint { query_id: i.to_string(), r_hat, coverage })
            .collect();
        match tune_epsilon(&points, floor, 0) {
            Ok(eps) => {
                prop_assert!(eps >= 0.0);
                for p in points.iter().filter(|p| p.coverage <= floor) {
                    prop_assert!(p.r_hat < eps);
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::NoLowCoveragePoints { .. }), "{e}"),
        }
    }
}
