use std::collections::BTreeMap;
use std::fs;

use cpguard::attacks::{AttackConfig, AttackKind};
use cpguard::autodiff::Tensor;
use cpguard::benchgen::*;
use cpguard::cpsim::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIMS: [usize; 3] = [2, 3, 4];

fn random_record(rng: &mut ChaCha8Rng, scene: u32) -> SampleRecord {
    let n = DIMS.iter().product();
    let mut feat = || Tensor::new(&DIMS, (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let (ego, collab) = (feat(), feat());
    let attack = match rng.random_range(0..6) {
        0 => None,
        k => Some(AttackKind::from_code(k).unwrap()),
    };
    SampleRecord {
        scene_id: scene,
        ego_id: 0,
        collaborator_id: rng.random_range(1..7),
        attack,
        budget: if attack.is_some() { rng.random_range(0.0..1.0) } else { 0.0 },
        ego_feature: ego,
        collaborator_feature: collab,
    }
}

fn small_gen(frames: usize) -> GenConfig {
    GenConfig {
        frames,
        attack: AttackConfig { steps: 3, ..AttackConfig::default() },
        records_per_shard: 16,
        ..GenConfig::default()
    }
}

fn detector() -> DetectorModel {
    DetectorModel::init(PipelineConfig::default(), 3).unwrap()
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn split_size_examples() {
    assert_eq!(split_sizes(10, [8, 1, 1]).unwrap(), [8, 1, 1]);
    assert_eq!(split_sizes(100, [8, 1, 1]).unwrap(), [80, 10, 10]);
    for count in (10..2000).step_by(10) {
        assert_eq!(split_sizes(count, [8, 1, 1]).unwrap(), [count * 8 / 10, count / 10, count / 10]);
    }
    assert!(split(9, [8, 1, 1], 0).is_err());
    assert!(split_sizes(10, [0, 0, 0]).is_err());
}

proptest! {
    #[test]
    fn splits_partition_and_stay_within_one(count in 10usize..3000, seed in any::<u64>(), a in 1u32..10, b in 0u32..5, c in 0u32..5) {
        let plan = split(count, [a, b, c], seed).unwrap();
        prop_assert!(plan.ranges.is_partition_of(count));
        let mut seen = plan.permutation.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..count).collect::<Vec<_>>());
        let total = (a + b + c) as f64;
        for (range, r) in [(&plan.ranges.train, a), (&plan.ranges.val, b), (&plan.ranges.test, c)] {
            let exact = count as f64 * r as f64 / total;
            prop_assert!((range.len() as f64 - exact).abs() < 1.0 + 1e-9);
        }
    }
}

#[test]
fn split_is_seeded() {
    assert_eq!(split(50, [8, 1, 1], 4).unwrap(), split(50, [8, 1, 1], 4).unwrap());
    assert_ne!(split(50, [8, 1, 1], 4).unwrap().permutation, split(50, [8, 1, 1], 5).unwrap().permutation);
}

fn frame_group(scene: u32, collaborators: usize, attackers: usize) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene as u64);
    (0..collaborators)
        .map(|i| {
            let mut r = random_record(&mut rng, scene);
            r.collaborator_id = i as u32 + 1;
            r.attack = (i < attackers).then_some(AttackKind::Pgd);
            r.budget = if i < attackers { 0.5 } else { 0.0 };
            r
        })
        .collect()
}

#[test]
fn stats_examples() {
    let records: Vec<SampleRecord> =
        [1, 1, 0, 2].iter().enumerate().flat_map(|(s, &a)| frame_group(s as u32, 4, a)).collect();
    let s = compute_stats(&records);
    assert_eq!(s.frames, 4);
    assert_eq!(s.records, 16);
    assert!((s.attack_ratio_mean - 0.20).abs() < 1e-12);
    assert_eq!((s.attack_ratio_min, s.attack_ratio_max), (0.0, 0.4));
    assert_eq!(s.collaborator_counts.values().sum::<u64>(), 4);
    assert_eq!(s.attack_types.values().sum::<u64>(), 16);
    assert_eq!(s.attack_types["PGD"], 4);
    assert_eq!(s.attack_types["none"], 12);

    let benign: Vec<SampleRecord> = (0..3).flat_map(|s| frame_group(s, 5, 0)).collect();
    let s = compute_stats(&benign);
    assert_eq!((s.attack_ratio_min, s.attack_ratio_mean, s.attack_ratio_max), (0.0, 0.0, 0.0));
    assert_eq!(s.collaborator_counts, BTreeMap::from([("5".to_string(), 3)]));
}

#[test]
fn record_invariants_are_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut r = random_record(&mut rng, 0);
    r.attack = None;
    r.budget = 0.3;
    assert!(r.validate(DIMS).is_err());
    r.budget = 0.0;
    assert!(r.validate(DIMS).is_ok());
    assert!(r.validate([2, 4, 3]).is_err());
    assert!(encode_shard(&[r], [1, 1, 1]).is_err());
}

#[test]
fn hundred_records_round_trip_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let records: Vec<SampleRecord> = (0..100).map(|i| random_record(&mut rng, i / 4)).collect();
    let bytes = encode_shard(&records, DIMS).unwrap();
    assert_eq!(bytes.len(), SHARD_HEADER_BYTES + 100 * (RECORD_HEADER_BYTES + 2 * 4 * 24));
    let back = decode_shard(&bytes, DIMS, 0, "mem".as_ref()).unwrap();
    assert_eq!(back.len(), 100);
    for (a, b) in records.iter().zip(&back) {
        assert_eq!((a.scene_id, a.ego_id, a.collaborator_id, a.attack), (b.scene_id, b.ego_id, b.collaborator_id, b.attack));
        assert_eq!(a.budget.to_bits(), b.budget.to_bits());
        assert_eq!(bits(&a.ego_feature), bits(&b.ego_feature));
        assert_eq!(bits(&a.collaborator_feature), bits(&b.collaborator_feature));
    }
    assert_eq!(encode_shard(&back, DIMS).unwrap(), bytes);
}

#[test]
fn corrupted_shards_fail_loudly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<SampleRecord> = (0..5).map(|i| random_record(&mut rng, i)).collect();
    let bytes = encode_shard(&records, DIMS).unwrap();
    let path = std::path::Path::new("x.bin");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_shard(&bad, DIMS, 0, path), Err(cpguard::Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_shard(&bad, DIMS, 0, path), Err(cpguard::Error::Version { found: 9, .. })));
    assert!(decode_shard(&bytes[..bytes.len() - 1], DIMS, 0, path).is_err());
    assert!(decode_shard(&bytes[..10], DIMS, 0, path).is_err());
    assert!(decode_shard(&bytes, [2, 4, 3], 0, path).is_err());
    let mut bad = bytes.clone();
    bad[SHARD_HEADER_BYTES + 13] = 7;
    assert!(matches!(decode_shard(&bad, DIMS, 0, path), Err(cpguard::Error::Record { index: 0, .. })));
}

#[test]
fn empty_dataset_has_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = assemble(Vec::new(), [16, 16, 16], &GenConfig::default(), 1, "digest".into()).unwrap();
    assert_eq!(ds.manifest.count, 0);
    assert!(ds.manifest.shards.is_empty());
    write_shards(&ds, dir.path()).unwrap();
    let back = read_shards(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    assert!(back.records.is_empty());
}

#[test]
fn dataset_round_trips_through_directory() {
    let dir = tempfile::tempdir().unwrap();
    let det = detector();
    let ds = generate_dataset(&det, &small_gen(12), 5).unwrap();
    assert!(ds.manifest.count > 16);
    assert!(ds.manifest.splits.is_partition_of(ds.manifest.count));
    write_shards(&ds, dir.path()).unwrap();
    let back = read_shards(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(ds.train().len() + ds.val().len() + ds.test().len(), ds.records.len());

    let first = dir.path().join(&ds.manifest.shards[0]);
    let mut bytes = fs::read(&first).unwrap();
    bytes[4] = 2;
    fs::write(&first, bytes).unwrap();
    assert!(read_shards(dir.path()).is_err());
}

#[test]
fn generation_is_deterministic_to_the_byte() {
    let det = detector();
    let cfg = small_gen(6);
    let a = generate_dataset(&det, &cfg, 8).unwrap();
    let b = generate_dataset(&det, &cfg, 8).unwrap();
    let dims = a.manifest.dims();
    assert_eq!(encode_shard(&a.records, dims).unwrap(), encode_shard(&b.records, dims).unwrap());
    assert_eq!(a.manifest, b.manifest);
    let c = generate_dataset(&det, &cfg, 9).unwrap();
    assert_ne!(a.manifest.config_digest, c.manifest.config_digest);
}

#[test]
fn zero_attacker_probability_gives_benign_data() {
    let cfg = GenConfig { attacker_weights: vec![1.0, 0.0, 0.0], ..small_gen(10) };
    let ds = generate_dataset(&detector(), &cfg, 2).unwrap();
    assert!(ds.records.iter().all(|r| r.label() == 0 && r.budget == 0.0));
    assert_eq!(ds.manifest.stats.attack_types.keys().collect::<Vec<_>>(), vec!["none"]);
    assert_eq!(ds.manifest.stats.attack_ratio_max, 0.0);
}

#[test]
fn records_cover_every_collaborator_and_exclude_the_ego() {
    let det = detector();
    let cfg = small_gen(8);
    for scene in 0..8 {
        let recs = frame_records(&det, &cfg, 4, scene).unwrap();
        let (_, plan) = regenerate_frame(&cfg, 4, scene).unwrap();
        assert_eq!(recs.len(), plan.collaborators);
        assert!((3..=6).contains(&plan.collaborators));
        assert!(recs.iter().all(|r| r.ego_id == 0 && r.collaborator_id != 0));
        assert_eq!(recs.iter().filter(|r| r.is_malicious()).count(), plan.attackers.len());
    }
}

#[test]
fn stored_perturbations_respect_the_budget() {
    let det = detector();
    let cfg = small_gen(20);
    let seed = 6;
    let mut checked = 0;
    for scene in 0..20 {
        let recs = frame_records(&det, &cfg, seed, scene).unwrap();
        let (frame, _) = regenerate_frame(&cfg, seed, scene).unwrap();
        let clean = frame.encode_aligned(&det).unwrap();
        for r in &recs {
            let c = &clean[r.collaborator_id as usize];
            let delta = r.collaborator_feature.sub(&c.data).unwrap();
            if r.is_malicious() {
                assert!(delta.max_abs() <= r.budget * (1.0 + 1e-6) + 1e-6, "{} > {}", delta.max_abs(), r.budget);
                checked += 1;
            } else {
                assert_eq!(delta.max_abs(), 0.0);
            }
            assert_eq!(bits(&r.ego_feature), bits(&clean[0].data));
        }
    }
    assert!(checked > 5);
}

#[test]
fn attack_types_are_evenly_distributed() {
    let cfg = GenConfig::default();
    let mut counts: BTreeMap<AttackKind, usize> = BTreeMap::new();
    let mut ratios = Vec::new();
    for i in 0..5000 {
        let plan = plan_frame(&cfg, derive_seed(77, i)).unwrap();
        for &(id, kind, budget) in &plan.attackers {
            assert!((1..=plan.collaborators as u32).contains(&id));
            assert!(cfg.budget_grid.contains(&budget));
            *counts.entry(kind).or_default() += 1;
        }
        ratios.push(plan.attackers.len() as f64 / (plan.collaborators + 1) as f64);
    }
    let total: usize = counts.values().sum();
    assert_eq!(counts.len(), 5);
    for (kind, n) in counts {
        let share = n as f64 / total as f64;
        assert!((share - 0.2).abs() <= 0.03, "{kind}: {share}");
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((0.1..=0.3).contains(&mean), "mean attack ratio {mean}");
}

#[test]
fn generated_stats_bracket_the_reference_ratio() {
    let ds = generate_dataset(&detector(), &small_gen(60), 10).unwrap();
    let s = &ds.manifest.stats;
    assert_eq!(s.frames, 60);
    assert_eq!(s.collaborator_counts.values().sum::<u64>(), 60);
    assert_eq!(s.attack_types.values().sum::<u64>(), ds.records.len() as u64);
    assert!((0.1..=0.3).contains(&s.attack_ratio_mean), "{}", s.attack_ratio_mean);
}

#[test]
fn fixed_budget_and_config_validation() {
    let cfg = GenConfig { budget: Some(0.75), ..small_gen(4) };
    for i in 0..50 {
        assert!(plan_frame(&cfg, i).unwrap().attackers.iter().all(|a| a.2 == 0.75));
    }
    assert!(GenConfig { attacker_weights: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], ..small_gen(4) }.validate().is_err());
    assert!(GenConfig { collaborator_weights: vec![1.0], ..small_gen(4) }.validate().is_err());
    assert!(GenConfig { budget: Some(-1.0), ..small_gen(4) }.validate().is_err());
    assert!(GenConfig { attack_types: vec![], ..small_gen(4) }.validate().is_err());
    assert!(GenConfig { records_per_shard: 0, ..small_gen(4) }.validate().is_err());
}

#[test]
fn manifest_is_human_readable_toml() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&detector(), &small_gen(4), 1).unwrap();
    write_shards(&ds, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    for key in ["format_version", "config_digest", "[splits", "[stats", "attack_ratio_mean"] {
        assert!(text.contains(key), "{key} missing from manifest");
    }
    assert_eq!(read_manifest(dir.path()).unwrap(), ds.manifest);
}
