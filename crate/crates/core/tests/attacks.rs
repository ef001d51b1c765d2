use cpguard::attacks::*;
use cpguard::autodiff::Tensor;
use cpguard::cpsim::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Objective with a fixed gradient: `loss(δ) = g·δ`.
struct Linear {
    g: Tensor,
}

impl Objective for Linear {
    fn shape(&self) -> &[usize] {
        self.g.shape()
    }

    fn loss_and_grad(&self, delta: &Tensor, _: &AttackConfig) -> cpguard::Result<(f32, Tensor)> {
        let l = self.g.data().iter().zip(delta.data()).map(|(a, b)| a * b).sum();
        Ok((l, self.g.clone()))
    }
}

fn proposal(cell: usize, object: f32, bbox: BBox) -> Proposal {
    let scores = [object, 1.0 - object];
    Proposal { cell, scores, bbox, confidence: object.max(1.0 - object) }
}

/// Box shifted along x so that its IoU with `b` is `iou`.
fn shifted_for_iou(b: BBox, iou: f32) -> BBox {
    // overlap width o satisfies o·h / (2wh − o·h) = iou
    let o = 2.0 * b.w * iou / (1.0 + iou);
    BBox::new(b.cx + (b.w - o), b.cy, b.w, b.h)
}

fn trained_model() -> DetectorModel {
    let fc = FrameConfig::default();
    let frames: Vec<Frame> = (0..24).map(|i| generate_frame(&fc, 3, derive_seed(70, i)).unwrap()).collect();
    let cfg = DetectorTrainConfig { epochs: 6, batch_size: 4, seed: 3, ..DetectorTrainConfig::default() };
    train_detector(&frames, fc.pipeline, &cfg).unwrap()
}

fn collab_state(model: &DetectorModel, seed: u64) -> CollabState<'_> {
    let frame = generate_frame(&FrameConfig::default(), 4, derive_seed(80, seed)).unwrap();
    let al = frame.encode_aligned(model).unwrap();
    CollabState { model, ego: al[0].clone(), collaborators: al[1..].to_vec() }
}

fn victim<'a>(state: &CollabState<'a>) -> Victim<'a> {
    Victim::new(state.model, &state.ego, &state.collaborators[1..], &state.collaborators[0]).unwrap()
}

#[test]
fn foreground_term_substitution() {
    let clean_box = BBox::new(10.0, 10.0, 6.0, 6.0);
    let pert_box = shifted_for_iou(clean_box, 0.8);
    assert!((pert_box.iou(&clean_box) - 0.8).abs() < 1e-5);
    let clean = [proposal(0, 0.9, clean_box)];
    let pert = [proposal(0, 0.5, pert_box)];
    let l = adv_loss(&pert, &clean, &AttackConfig::default()).unwrap();
    assert!((l - (-(0.5f32).ln() * 0.8)).abs() < 1e-4, "{l}");
    assert!((l - 0.5545).abs() < 1e-4);
}

#[test]
fn below_threshold_foreground_contributes_nothing() {
    let b = BBox::new(10.0, 10.0, 6.0, 6.0);
    let l = adv_loss(&[proposal(0, 0.2, b)], &[proposal(0, 0.6, b)], &AttackConfig::default()).unwrap();
    assert_eq!(l, 0.0);
}

#[test]
fn background_term_substitution() {
    let b = BBox::new(10.0, 10.0, 6.0, 6.0);
    // background class score 0.95 clean, 0.5 perturbed
    let l = adv_loss(&[proposal(0, 0.5, b)], &[proposal(0, 0.05, b)], &AttackConfig::default()).unwrap();
    assert!((l - 0.3466).abs() < 1e-4, "{l}");
    let flipped = AttackConfig { sign_flip: true, ..AttackConfig::default() };
    let lf = adv_loss(&[proposal(0, 0.5, b)], &[proposal(0, 0.05, b)], &flipped).unwrap();
    assert_eq!(lf, -l);
}

#[test]
fn misaligned_proposals_are_rejected() {
    let b = BBox::new(10.0, 10.0, 6.0, 6.0);
    let cfg = AttackConfig::default();
    assert!(adv_loss(&[proposal(0, 0.5, b)], &[], &cfg).is_err());
    assert!(adv_loss(&[proposal(1, 0.5, b)], &[proposal(0, 0.5, b)], &cfg).is_err());
}

#[test]
fn tape_loss_matches_plain_loss() {
    let model = trained_model();
    let state = collab_state(&model, 1);
    let v = victim(&state);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = v.shape().to_vec();
    let n: usize = shape.iter().product();
    for flip in [false, true] {
        let cfg = AttackConfig { sign_flip: flip, ..AttackConfig::default() };
        let delta = Tensor::new(&shape, (0..n).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap();
        let (tape_loss, _) = v.loss_and_grad(&delta, &cfg).unwrap();
        let plain = adv_loss(&v.proposals(&delta).unwrap(), v.clean_proposals(), &cfg).unwrap();
        assert!((tape_loss - plain).abs() <= 1e-3 * plain.abs().max(1.0), "{tape_loss} vs {plain}");
    }
}

#[test]
fn fgsm_sign_rule() {
    let obj = Linear { g: Tensor::vector(&[0.5, -2.0]) };
    let cfg = AttackConfig::new(AttackKind::Fgsm, 0.25);
    let p = fgsm(&obj, &cfg).unwrap();
    assert_eq!(p.delta.data(), &[0.25, -0.25]);
    assert_eq!(p.iterations, 1);

    let zero = fgsm(&obj, &AttackConfig::new(AttackKind::Fgsm, 0.0)).unwrap();
    assert!(zero.delta.data().iter().all(|&d| d == 0.0));

    let flat = Linear { g: Tensor::vector(&[0.0, 0.0, 0.0]) };
    let p = fgsm(&flat, &cfg).unwrap();
    assert!(p.zero_gradient);
    assert!(p.delta.data().iter().all(|&d| d == 0.0));
}

#[test]
fn fgsm_saturates_wherever_gradient_is_nonzero() {
    let model = trained_model();
    let state = collab_state(&model, 2);
    let v = victim(&state);
    let cfg = AttackConfig::new(AttackKind::Fgsm, 0.3);
    let p = fgsm(&v, &cfg).unwrap();
    let (_, g) = v.loss_and_grad(&Tensor::zeros(v.shape()), &cfg).unwrap();
    for (d, gv) in p.delta.data().iter().zip(g.data()) {
        assert_eq!(d.abs(), if *gv != 0.0 { 0.3 } else { 0.0 });
    }
}

#[test]
fn zero_budget_gives_zero_delta_everywhere() {
    let model = trained_model();
    let state = collab_state(&model, 3);
    let v = victim(&state);
    for kind in AttackKind::ALL {
        let cfg = AttackConfig::new(kind, 0.0);
        let p = run_attack(&v, &cfg, 9).unwrap();
        assert!(p.delta.data().iter().all(|&d| d == 0.0), "{kind}");
    }
}

#[test]
fn bim_single_full_step_equals_fgsm() {
    let model = trained_model();
    let state = collab_state(&model, 4);
    let v = victim(&state);
    let cfg = AttackConfig { kind: AttackKind::Bim, steps: 1, step_size: 0.25, ..AttackConfig::new(AttackKind::Bim, 0.25) };
    let b = bim(&v, &cfg).unwrap();
    let f = fgsm(&v, &AttackConfig { kind: AttackKind::Fgsm, ..cfg.clone() }).unwrap();
    assert_eq!(b.delta, f.delta);
    assert_eq!(bim(&v, &cfg).unwrap(), b);
}

#[test]
fn iterative_attacks_respect_budget_each_step() {
    let obj = Linear { g: Tensor::vector(&[1.0, -1.0, 0.3, 0.0]) };
    for steps in 1..20 {
        let cfg = AttackConfig { steps, ..AttackConfig::new(AttackKind::Bim, 0.25) };
        let p = bim(&obj, &cfg).unwrap();
        assert!(p.delta.max_abs() <= 0.25);
        let expect = (steps as f32 * 0.1).min(0.25);
        assert!((p.delta.data()[0] - expect).abs() < 1e-6);
    }
}

#[test]
fn pgd_beats_random_perturbations() {
    let model = trained_model();
    let budget = 0.25;
    let cfg = AttackConfig::new(AttackKind::Pgd, budget);
    let mut wins = 0;
    let trials = 50;
    for t in 0..trials {
        let state = collab_state(&model, 100 + t);
        let v = victim(&state);
        let p = pgd(&v, &cfg, t).unwrap();
        assert!(p.delta.max_abs() <= budget);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
        let n: usize = v.shape().iter().product();
        let random = Tensor::new(v.shape(), (0..n).map(|_| rng.random_range(-budget..=budget)).collect()).unwrap();
        let (rl, _) = v.loss_and_grad(&random, &cfg).unwrap();
        if p.loss >= rl {
            wins += 1;
        }
    }
    assert!(wins * 10 >= trials * 9, "PGD won {wins}/{trials}");
}

#[test]
fn cw_penalty_shrinks_delta() {
    let model = trained_model();
    let state = collab_state(&model, 5);
    let v = victim(&state);
    let norm = |c: f32| {
        let cfg = AttackConfig { cw_c: c, ..AttackConfig::new(AttackKind::Cw, 1.0) };
        let p = cw(&v, &cfg).unwrap();
        assert!(p.delta.max_abs() <= 1.0);
        p.delta.data().iter().map(|d| d * d).sum::<f32>().sqrt()
    };
    let norms: Vec<f32> = [0.0, 0.01, 1.0, 100.0].iter().map(|&c| norm(c)).collect();
    for w in norms.windows(2) {
        assert!(w[1] <= w[0], "{norms:?}");
    }
    assert!(norms[3] < norms[1]);
}

#[test]
fn gaussian_noise_contract() {
    let target = FeatureMap { data: Tensor::zeros(&[1, 100, 100]), owner: 1, pose: Pose::default() };
    let cfg = AttackConfig::new(AttackKind::Gn, 0.5);
    let a = gn(&target, &cfg, 4).unwrap();
    assert_eq!(a.delta, gn(&target, &cfg, 4).unwrap().delta);
    assert_ne!(a.delta, gn(&target, &cfg, 5).unwrap().delta);
    assert!(a.delta.max_abs() <= 0.5);
    let mean = a.delta.data().iter().map(|&d| d as f64).sum::<f64>() / 1e4;
    let sigma = 0.25;
    assert!(mean.abs() <= 3.0 * sigma / 100.0, "{mean}");
}

#[test]
fn attack_agent_dispatch() {
    let model = trained_model();
    let state = collab_state(&model, 6);
    let target = state.collaborators[1].clone();
    let (same, none) = attack_agent(&state, target.owner, None, 0).unwrap();
    assert_eq!(same, target);
    assert!(none.is_none());

    let cfg = AttackConfig::new(AttackKind::Gn, 0.4);
    let (out, p) = attack_agent(&state, target.owner, Some(&cfg), 7).unwrap();
    let expect = target.data.add(&gn(&target, &cfg, 7).unwrap().delta).unwrap();
    assert_eq!(out.data, expect);
    assert!(p.is_some());

    assert!(attack_agent(&state, state.ego.owner, Some(&cfg), 0).is_err());
    assert!(attack_agent(&state, 999, Some(&cfg), 0).is_err());
}

#[test]
fn config_validation() {
    assert!(AttackConfig { step_size: 0.5, ..AttackConfig::new(AttackKind::Pgd, 0.25) }.validate().is_err());
    assert!(AttackConfig { tau1: 1.0, ..AttackConfig::default() }.validate().is_err());
    assert!(AttackConfig { steps: 0, ..AttackConfig::default() }.validate().is_err());
    assert!(AttackConfig::new(AttackKind::Pgd, -1.0).validate().is_err());
    assert_eq!("pgd".parse::<AttackKind>().unwrap(), AttackKind::Pgd);
    assert!("nope".parse::<AttackKind>().is_err());
    for k in AttackKind::ALL {
        assert_eq!(AttackKind::from_code(k.code()), Some(k));
    }
}

#[test]
fn budget_law_over_grid() {
    let model = trained_model();
    for seed in 0..4u64 {
        let state = collab_state(&model, 200 + seed);
        let v = victim(&state);
        for budget in [0.1f32, 0.25, 0.5, 0.75, 1.0] {
            for kind in AttackKind::ALL {
                let p = run_attack(&v, &AttackConfig::new(kind, budget), seed).unwrap();
                assert!(p.delta.max_abs() <= budget, "{kind} Δ={budget}");
                assert!(p.delta.is_finite());
            }
        }
    }
}
