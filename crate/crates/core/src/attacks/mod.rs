//! Feature-level attacks by a malicious collaborator.
//!
//! The attacker perturbs its own transmitted (ego-aligned) feature map within
//! an ∞-norm budget Δ to push the ego detector away from its clean output.

mod loss;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::cpsim::{fuse_mean, fuse_mean_on_tape, BBox, DetectorModel, FeatureMap, Proposal, BACKGROUND_CLASS};
use crate::error::{Error, Result};

pub use loss::{adv_loss, adv_loss_on_tape, select_terms, LossSelection, PROB_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "PGD")]
    Pgd,
    #[serde(rename = "BIM")]
    Bim,
    #[serde(rename = "CW")]
    Cw,
    #[serde(rename = "FGSM")]
    Fgsm,
    #[serde(rename = "GN")]
    Gn,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [AttackKind::Pgd, AttackKind::Bim, AttackKind::Cw, AttackKind::Fgsm, AttackKind::Gn];

    /// Stable code used in binary records (benign is 0).
    pub fn code(self) -> u8 {
        match self {
            AttackKind::Pgd => 1,
            AttackKind::Bim => 2,
            AttackKind::Cw => 3,
            AttackKind::Fgsm => 4,
            AttackKind::Gn => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Pgd => "PGD",
            AttackKind::Bim => "BIM",
            AttackKind::Cw => "CW",
            AttackKind::Fgsm => "FGSM",
            AttackKind::Gn => "GN",
        }
    }

    pub fn uses_gradient(self) -> bool {
        self != AttackKind::Gn
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown attack type {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// ∞-norm budget Δ.
    pub budget: f32,
    pub steps: usize,
    pub step_size: f32,
    pub tau1: f32,
    pub tau2: f32,
    pub lambda: f32,
    pub background_class: usize,
    /// Negates the objective before ascent.
    pub sign_flip: bool,
    /// Penalty weight on ‖δ‖₂² for CW.
    pub cw_c: f32,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Pgd,
            budget: 0.5,
            steps: 15,
            step_size: 0.1,
            tau1: 0.7,
            tau2: 0.9,
            lambda: 1.0,
            background_class: BACKGROUND_CLASS,
            sign_flip: false,
            cw_c: 0.01,
        }
    }
}

impl AttackConfig {
    pub fn new(kind: AttackKind, budget: f32) -> Self {
        Self { kind, budget, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::config(format!("attack budget {} must be finite and non-negative", self.budget)));
        }
        for (name, t) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config(format!("{name} = {t} must lie in (0, 1)")));
            }
        }
        if self.background_class > 1 {
            return Err(Error::config("background class must be 0 or 1"));
        }
        if !(self.cw_c >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::config("lambda and cw_c must be non-negative"));
        }
        if matches!(self.kind, AttackKind::Pgd | AttackKind::Bim | AttackKind::Cw) && self.steps == 0 {
            return Err(Error::config("iterative attacks need at least one step"));
        }
        if matches!(self.kind, AttackKind::Pgd | AttackKind::Bim)
            && self.budget > 0.0
            && !(self.step_size > 0.0 && self.step_size <= self.budget)
        {
            return Err(Error::config(format!("step size {} must lie in (0, Δ={}]", self.step_size, self.budget)));
        }
        if self.kind == AttackKind::Cw && !(self.step_size > 0.0) {
            return Err(Error::config("CW learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub delta: Tensor,
    /// Objective at the returned δ (NaN for gradient-free noise).
    pub loss: f32,
    /// Largest objective seen over all iterates.
    pub best_loss: f32,
    pub iterations: usize,
    /// Set when the objective had zero gradient everywhere.
    pub zero_gradient: bool,
}

impl Perturbation {
    fn zeros(shape: &[usize]) -> Self {
        Self { delta: Tensor::zeros(shape), loss: 0.0, best_loss: 0.0, iterations: 0, zero_gradient: false }
    }
}

/// Something an attacker can ascend: a scalar objective of δ and its
/// gradient.
pub trait Objective {
    fn shape(&self) -> &[usize];
    fn loss_and_grad(&self, delta: &Tensor, config: &AttackConfig) -> Result<(f32, Tensor)>;
}

/// Frozen fuse→decode path seen from one attacker: the ego map, the other
/// (benign) maps, and the attacker's clean transmitted map, all aligned to
/// the ego frame.
pub struct Victim<'a> {
    model: &'a DetectorModel,
    ego: FeatureMap,
    others: Vec<FeatureMap>,
    target: FeatureMap,
    clean: Vec<Proposal>,
}

impl<'a> Victim<'a> {
    pub fn new(model: &'a DetectorModel, ego: &FeatureMap, others: &[FeatureMap], target: &FeatureMap) -> Result<Self> {
        let mut all = others.to_vec();
        all.push(target.clone());
        let clean = model.decode(&fuse_mean(ego, &all)?)?;
        Ok(Self { model, ego: ego.clone(), others: others.to_vec(), target: target.clone(), clean })
    }

    pub fn target(&self) -> &FeatureMap {
        &self.target
    }

    pub fn clean_proposals(&self) -> &[Proposal] {
        &self.clean
    }

    /// Proposals with `delta` added to the target.
    pub fn proposals(&self, delta: &Tensor) -> Result<Vec<Proposal>> {
        let mut all = self.others.clone();
        all.push(self.target.with_data(self.target.data.add(delta)?));
        self.model.decode(&fuse_mean(&self.ego, &all)?)
    }

    fn decoded_boxes(&self, raw: &Tensor) -> Vec<BBox> {
        let n = self.model.config.feature_size();
        raw.data()
            .chunks_exact(4)
            .enumerate()
            .map(|(cell, reg)| self.model.config.decode_box(self.ego.pose, cell / n, cell % n, reg))
            .collect()
    }
}

impl Objective for Victim<'_> {
    fn shape(&self) -> &[usize] {
        self.target.shape()
    }

    fn loss_and_grad(&self, delta: &Tensor, config: &AttackConfig) -> Result<(f32, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.model.params.bind(&mut tape, false);
        let mut inputs = vec![tape.constant(self.ego.data.clone())];
        inputs.extend(self.others.iter().map(|f| tape.constant(f.data.clone())));
        let x = tape.leaf(self.target.data.add(delta)?.with_grad());
        inputs.push(x);
        let fused = fuse_mean_on_tape(&mut tape, &inputs)?;
        let head = self.model.head_on_tape(&mut tape, &vars, fused)?;
        let boxes = self.decoded_boxes(tape.value(head.boxes));
        let sel = select_terms(&self.clean, &boxes, config)?;
        let loss = adv_loss_on_tape(&mut tape, head.probs, &sel, config)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        let g = grads.take(x).ok_or_else(|| Error::shape("no gradient for attack target"))?;
        Ok((value, g))
    }
}

fn clip(delta: &mut Tensor, budget: f32) {
    delta.data_mut().iter_mut().for_each(|d| *d = d.clamp(-budget, budget));
}

fn signum0(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single step δ = Δ·sign(∇).
pub fn fgsm(victim: &impl Objective, config: &AttackConfig) -> Result<Perturbation> {
    config.validate()?;
    let shape = victim.shape().to_vec();
    if config.budget == 0.0 {
        return Ok(Perturbation::zeros(&shape));
    }
    let (loss0, g) = victim.loss_and_grad(&Tensor::zeros(&shape), config)?;
    let zero_gradient = g.data().iter().all(|&v| v == 0.0);
    let delta = g.map(|v| config.budget * signum0(v));
    let (loss, _) = victim.loss_and_grad(&delta, config)?;
    Ok(Perturbation { delta, loss, best_loss: loss.max(loss0), iterations: 1, zero_gradient })
}

fn iterate_sign(victim: &impl Objective, config: &AttackConfig, mut delta: Tensor) -> Result<Perturbation> {
    let mut best = f32::NEG_INFINITY;
    let mut zero_gradient = true;
    let mut loss = 0.0;
    for step in 0..=config.steps {
        let (l, g) = victim.loss_and_grad(&delta, config)?;
        loss = l;
        best = best.max(l);
        if step == config.steps {
            break;
        }
        zero_gradient &= g.data().iter().all(|&v| v == 0.0);
        delta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(d, &gv)| *d = (*d + config.step_size * signum0(gv)).clamp(-config.budget, config.budget));
    }
    Ok(Perturbation { delta, loss, best_loss: best, iterations: config.steps, zero_gradient })
}

/// Iterated sign steps from a uniform random start in [−Δ, Δ].
pub fn pgd(victim: &impl Objective, config: &AttackConfig, seed: u64) -> Result<Perturbation> {
    config.validate()?;
    let shape = victim.shape().to_vec();
    if config.budget == 0.0 {
        return Ok(Perturbation::zeros(&shape));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let start = (0..n).map(|_| rng.random_range(-config.budget..=config.budget)).collect();
    iterate_sign(victim, config, Tensor::new(&shape, start)?)
}

/// Iterated sign steps from δ = 0.
pub fn bim(victim: &impl Objective, config: &AttackConfig) -> Result<Perturbation> {
    config.validate()?;
    let shape = victim.shape().to_vec();
    if config.budget == 0.0 {
        return Ok(Perturbation::zeros(&shape));
    }
    iterate_sign(victim, config, Tensor::zeros(&shape))
}

/// Raw-gradient ascent on `loss − c‖δ‖²` from δ = 0, then a hard clip to
/// the budget. The penalty is applied as a proximal step
/// `δ ← (δ + η∇loss) / (1 + 2ηc)`, which stays stable for large c.
pub fn cw(victim: &impl Objective, config: &AttackConfig) -> Result<Perturbation> {
    config.validate()?;
    let shape = victim.shape().to_vec();
    if config.budget == 0.0 {
        return Ok(Perturbation::zeros(&shape));
    }
    let lr = config.step_size;
    let shrink = 1.0 / (1.0 + 2.0 * lr * config.cw_c);
    let mut delta = Tensor::zeros(&shape);
    let mut best = f32::NEG_INFINITY;
    let mut zero_gradient = true;
    for _ in 0..config.steps {
        let (l, g) = victim.loss_and_grad(&delta, config)?;
        best = best.max(l);
        zero_gradient &= g.data().iter().all(|&v| v == 0.0);
        delta.data_mut().iter_mut().zip(g.data()).for_each(|(d, &gv)| *d = (*d + lr * gv) * shrink);
        if !delta.is_finite() {
            return Err(Error::Divergence("CW iterate became non-finite".into()));
        }
    }
    clip(&mut delta, config.budget);
    let (loss, _) = victim.loss_and_grad(&delta, config)?;
    Ok(Perturbation { delta, loss, best_loss: best.max(loss), iterations: config.steps, zero_gradient })
}

/// δ ~ N(0, (Δ/2)²), clipped to the budget.
pub fn gn(target: &FeatureMap, config: &AttackConfig, seed: u64) -> Result<Perturbation> {
    config.validate()?;
    let shape = target.shape().to_vec();
    if config.budget == 0.0 {
        return Ok(Perturbation::zeros(&shape));
    }
    let normal = Normal::new(0.0f32, config.budget / 2.0).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(&mut rng).clamp(-config.budget, config.budget)).collect();
    let delta = Tensor::new(&shape, data)?;
    Ok(Perturbation { delta, loss: f32::NAN, best_loss: f32::NAN, iterations: 0, zero_gradient: false })
}

/// Runs the configured attack against a prepared victim.
pub fn run_attack(victim: &Victim, config: &AttackConfig, seed: u64) -> Result<Perturbation> {
    match config.kind {
        AttackKind::Pgd => pgd(victim, config, seed),
        AttackKind::Bim => bim(victim, config),
        AttackKind::Cw => cw(victim, config),
        AttackKind::Fgsm => fgsm(victim, config),
        AttackKind::Gn => gn(victim.target(), config, seed),
    }
}

/// Ego-side collaborative state: every map is already aligned to the ego.
#[derive(Clone, Debug)]
pub struct CollabState<'a> {
    pub model: &'a DetectorModel,
    pub ego: FeatureMap,
    pub collaborators: Vec<FeatureMap>,
}

/// Replaces collaborator `malicious_id`'s map by an attacked one. `None`
/// passes the map through unchanged.
pub fn attack_agent(
    state: &CollabState,
    malicious_id: u32,
    config: Option<&AttackConfig>,
    seed: u64,
) -> Result<(FeatureMap, Option<Perturbation>)> {
    if malicious_id == state.ego.owner {
        return Err(Error::config("the ego agent cannot be the attacker"));
    }
    let idx = state
        .collaborators
        .iter()
        .position(|f| f.owner == malicious_id)
        .ok_or_else(|| Error::config(format!("no collaborator with id {malicious_id}")))?;
    let target = &state.collaborators[idx];
    let Some(config) = config else {
        return Ok((target.clone(), None));
    };
    let others: Vec<FeatureMap> =
        state.collaborators.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, f)| f.clone()).collect();
    let pert = if config.kind == AttackKind::Gn {
        gn(target, config, seed)?
    } else {
        let victim = Victim::new(state.model, &state.ego, &others, target)?;
        run_attack(&victim, config, seed)?
    };
    let attacked = target.with_data(target.data.add(&pert.delta)?);
    Ok((attacked, Some(pert)))
}
