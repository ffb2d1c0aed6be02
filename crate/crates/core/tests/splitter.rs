use std::collections::{BTreeMap, BTreeSet};

use geomot_core::splitter::*;
use geomot_core::Error;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(id: &str, group: &str, label: &str, img: Vec<f64>, text: Vec<f64>, aud: Vec<f64>) -> SampleRecord {
    SampleRecord {
        sample_id: id.into(),
        group_id: group.into(),
        emotion_label: label.into(),
        modality_embeddings: ModalityEmbeddings { img, text, aud },
        source_tag: "test".into(),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Samples whose three modalities are noisy copies of a per-sample base vector, so
/// consistency and identity filters keep almost everything.
fn random_records(rng: &mut ChaCha8Rng, group_sizes: &[usize], d: usize) -> Vec<SampleRecord> {
    let labels = ["joy", "calm", "anger", "fear"];
    let mut out = Vec::new();
    for (g, &size) in group_sizes.iter().enumerate() {
        let centre = random_vec(rng, d);
        for k in 0..size {
            let base: Vec<f64> = centre.iter().map(|c| c + rng.random_range(-0.6..0.6)).collect();
            let jitter = |rng: &mut ChaCha8Rng| base.iter().map(|b| b + rng.random_range(-0.1..0.1)).collect::<Vec<_>>();
            let text = jitter(rng);
            let aud = jitter(rng);
            out.push(record(
                &format!("s{g:03}_{k:03}"),
                &format!("g{g:03}"),
                labels[rng.random_range(0..labels.len())],
                base,
                text,
                aud,
            ));
        }
    }
    out
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (DVector::from_column_slice(a), DVector::from_column_slice(b));
    a.dot(&b) / (a.norm() * b.norm())
}

#[test]
fn identical_embeddings_score_one() {
    let v = vec![0.3, -1.2, 2.0];
    let s = record("a", "g", "joy", v.clone(), v.clone(), v);
    for w in [(1.0, 0.0, 0.0), (0.2, 0.5, 0.3), (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)] {
        let cfg = SplitterConfig { w_img_text: w.0, w_img_aud: w.1, w_text_aud: w.2, ..Default::default() };
        assert!((consistency_score(&s, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn orthogonal_embeddings_score_zero() {
    let s = record("a", "g", "joy", vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]);
    assert_eq!(consistency_score(&s, &SplitterConfig::default()).unwrap(), 0.0);
}

#[test]
fn weighted_score_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SplitterConfig { w_img_text: 0.5, w_img_aud: 0.3, w_text_aud: 0.2, ..Default::default() };
    for _ in 0..20 {
        let (i, t, a) = (random_vec(&mut rng, 6), random_vec(&mut rng, 6), random_vec(&mut rng, 6));
        let expected = 0.5 * oracle_cos(&i, &t) + 0.3 * oracle_cos(&i, &a) + 0.2 * oracle_cos(&t, &a);
        let s = record("a", "g", "joy", i, t, a);
        assert!((consistency_score(&s, &cfg).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn zero_norm_embedding_is_degenerate() {
    let s = record("a", "g", "joy", vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]);
    assert!(matches!(consistency_score(&s, &SplitterConfig::default()), Err(Error::Degenerate(_))));
}

#[test]
fn duplicate_threshold_above_one_removes_nothing() {
    let v = vec![1.0, 2.0];
    let samples = vec![
        record("a", "g", "joy", v.clone(), v.clone(), v.clone()),
        record("b", "g", "joy", v.clone(), v.clone(), v),
    ];
    let (kept, removed) = remove_duplicates(&samples, 1.0 + 1e-9).unwrap();
    assert_eq!(kept.len(), 2);
    assert!(removed.is_empty());
}

#[test]
fn identical_pair_drops_later_sample_id() {
    let v = vec![1.0, 2.0];
    let samples = vec![
        record("b", "g", "joy", v.clone(), v.clone(), v.clone()),
        record("a", "h", "joy", v.clone(), v.clone(), v),
    ];
    let (kept, removed) = remove_duplicates(&samples, 0.99).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].sample_id, "a");
    assert_eq!(removed[0].sample_id, "b");
    assert!(matches!(&removed[0].reason, RemovalReason::NearDuplicate { of, .. } if of == "a"));
}

/// Greedy duplicate removal is the unique subset where no two kept samples exceed the
/// threshold and every removed sample exceeds it against an earlier kept one.
fn check_greedy_dedup(samples: &[SampleRecord], tau: f64) {
    let (kept, removed) = remove_duplicates(samples, tau).unwrap();
    let img: BTreeMap<&str, &Vec<f64>> = samples
        .iter()
        .map(|s| (s.sample_id.as_str(), &s.modality_embeddings.img))
        .collect();
    for (i, a) in kept.iter().enumerate() {
        for b in &kept[i + 1..] {
            assert!(oracle_cos(&a.modality_embeddings.img, &b.modality_embeddings.img) <= tau);
        }
    }
    for r in &removed {
        let witness = kept.iter().any(|k| {
            k.sample_id < r.sample_id && oracle_cos(img[k.sample_id.as_str()], img[r.sample_id.as_str()]) > tau
        });
        assert!(witness, "{} removed without an earlier kept duplicate", r.sample_id);
    }
    assert_eq!(kept.len() + removed.len(), samples.len());
}

#[test]
fn six_sample_cluster_matches_pairwise_oracle() {
    let samples = vec![
        record("s1", "g1", "joy", vec![1.0, 0.0, 0.0], vec![1.0; 3], vec![1.0; 3]),
        record("s2", "g1", "joy", vec![0.99, 0.05, 0.0], vec![1.0; 3], vec![1.0; 3]),
        record("s3", "g2", "joy", vec![0.0, 1.0, 0.0], vec![1.0; 3], vec![1.0; 3]),
        record("s4", "g2", "joy", vec![0.03, 0.98, 0.02], vec![1.0; 3], vec![1.0; 3]),
        record("s5", "g3", "joy", vec![0.7, 0.7, 0.0], vec![1.0; 3], vec![1.0; 3]),
        record("s6", "g3", "joy", vec![0.0, 0.0, 1.0], vec![1.0; 3], vec![1.0; 3]),
    ];
    let (kept, _) = remove_duplicates(&samples, 0.95).unwrap();
    let ids: Vec<&str> = kept.iter().map(|s| s.sample_id.as_str()).collect();
    assert_eq!(ids, ["s1", "s3", "s5", "s6"]);
    check_greedy_dedup(&samples, 0.95);
    check_greedy_dedup(&samples, 0.6);
}

#[test]
fn ten_singleton_groups_follow_greedy_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples = random_records(&mut rng, &[1; 10], 4);
    for seed in 0..20 {
        let cfg = SplitterConfig { seed, ..Default::default() };
        let a = assign_splits(&samples, &cfg).unwrap();
        let sizes = &a.validation.split_sizes;
        assert_eq!(sizes[&Split::Train], 7);
        assert!((1..=2).contains(&sizes[&Split::Val]));
        assert!((1..=2).contains(&sizes[&Split::Test]));
        assert_eq!(a.validation.group_overlap, 0);
    }
}

#[test]
fn single_group_goes_to_train_with_warning() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples = random_records(&mut rng, &[12], 4);
    let a = assign_splits(&samples, &SplitterConfig::default()).unwrap();
    assert!(a.assignments.values().all(|&s| s == Split::Train));
    assert_eq!(a.assignments.len(), 12);
    assert_eq!(a.warnings.len(), 1);
}

#[test]
fn two_groups_cannot_form_three_splits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples = random_records(&mut rng, &[3, 4], 4);
    assert!(matches!(assign_splits(&samples, &SplitterConfig::default()), Err(Error::TooFewGroups(2))));
}

#[test]
fn corrupted_assignment_reports_one_leaked_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples = random_records(&mut rng, &[4, 4, 4, 4, 4], 4);
    let mut a = assign_splits(&samples, &SplitterConfig::default()).unwrap();
    let victim = &samples[0];
    let other = Split::ALL.into_iter().find(|&s| s != a.assignments[&victim.sample_id]).unwrap();
    a.assignments.insert(victim.sample_id.clone(), other);
    let report = validate_splits(&a, &samples, 0.95).unwrap();
    assert_eq!(report.group_overlap, 1);
}

#[test]
fn repair_moves_group_to_majority_and_removes_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = random_records(&mut rng, &[3, 2, 4], 4);
    let mut a = SplitAssignment::default();
    let split_for = |i: usize| match i {
        0 | 1 => Split::Train,
        2 => Split::Val,
        3 => Split::Val,
        4 => Split::Test,
        _ => Split::Test,
    };
    for (i, s) in samples.iter().enumerate() {
        a.assignments.insert(s.sample_id.clone(), split_for(i));
    }
    assert_eq!(repair_conflicts(&mut a, &samples), 2);
    for s in &samples[..3] {
        assert_eq!(a.assignments[&s.sample_id], Split::Train);
    }
    for s in &samples[3..5] {
        assert!(!a.assignments.contains_key(&s.sample_id));
    }
    assert_eq!(a.removal_log.len(), 2);
    assert_eq!(validate_splits(&a, &samples, 0.95).unwrap().group_overlap, 0);
}

#[test]
fn histograms_sum_to_split_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples = random_records(&mut rng, &[5; 40], 8);
    assert_eq!(samples.len(), 200);
    let a = build_splits(&samples, &SplitterConfig::default()).unwrap();
    let v = &a.validation;
    for split in Split::ALL {
        assert_eq!(v.emotion_histograms[&split].values().sum::<usize>(), v.split_sizes[&split]);
    }
    assert_eq!(v.split_sizes.values().sum::<usize>(), a.assignments.len());
}

#[test]
fn ratios_within_two_points_for_small_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..50 {
        let sizes: Vec<usize> = (0..150).map(|_| rng.random_range(1..=10)).collect();
        let samples = random_records(&mut rng, &sizes, 4);
        let cfg = SplitterConfig { seed, tau_dup: 2.0, ..Default::default() };
        let a = assign_splits(&samples, &cfg).unwrap();
        assert!(*sizes.iter().max().unwrap() as f64 <= 0.02 * samples.len() as f64);
        for (k, split) in Split::ALL.into_iter().enumerate() {
            let got = a.validation.achieved_ratios[&split];
            assert!((got - cfg.ratios[k]).abs() <= 0.02, "{split:?}: {got}");
        }
    }
}

#[test]
fn raising_consistency_threshold_never_removes_fewer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples: Vec<SampleRecord> = (0..60)
        .map(|i| {
            record(
                &format!("s{i}"),
                "g",
                "joy",
                random_vec(&mut rng, 3),
                random_vec(&mut rng, 3),
                random_vec(&mut rng, 3),
            )
        })
        .collect();
    let mut last = 0;
    for k in 0..=20 {
        let cfg = SplitterConfig { tau_cons: -1.0 + 0.1 * k as f64, ..Default::default() };
        let (_, removed) = filter_consistency(&samples, &cfg).unwrap();
        assert!(removed.len() >= last);
        last = removed.len();
    }
}

#[test]
fn jsonl_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples = random_records(&mut rng, &[2, 3], 3);
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &samples).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), samples);
}

#[test]
fn malformed_jsonl_line_is_reported() {
    let err = read_jsonl("{\"sample_id\": 1}\n".as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Parse(msg) if msg.starts_with("line 1")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pipeline_is_leak_free_deterministic_and_accounts_for_every_sample(
        sizes in prop::collection::vec(1usize..8, 3..25),
        seed in 0u64..1000,
        data_seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let samples = random_records(&mut rng, &sizes, 4);
        let cfg = SplitterConfig { seed, ..Default::default() };
        let a = match build_splits(&samples, &cfg) {
            Ok(a) => a,
            Err(Error::TooFewGroups(_)) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        prop_assert_eq!(&a, &build_splits(&samples, &cfg).unwrap());
        prop_assert_eq!(a.validation.group_overlap, 0);
        prop_assert_eq!(a.validation.cross_split_near_duplicates, 0);

        let mut group_split: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for s in &samples {
            if let Some(split) = a.split_of(&s.sample_id) {
                group_split.entry(s.group_id.as_str()).or_default().insert(split);
            }
        }
        prop_assert!(group_split.values().all(|v| v.len() == 1));

        let removed: Vec<&str> = a.removal_log.iter().map(|r| r.sample_id.as_str()).collect();
        let mut seen = BTreeSet::new();
        for id in a.assignments.keys().map(String::as_str).chain(removed.iter().copied()) {
            prop_assert!(seen.insert(id), "{} accounted twice", id);
        }
        prop_assert_eq!(seen.len(), samples.len());
    }
}
