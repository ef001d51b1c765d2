use crate::autodiff::{Tape, Tensor, Var};
use crate::cpsim::{BBox, Proposal};
use crate::error::{Error, Result};

use super::AttackConfig;

/// Probability clamp applied before every log.
pub const PROB_EPS: f32 = 1e-6;

/// Per-cell weights of the two loss branches, fixed by the clean proposals.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSelection {
    /// Class c = argmax of the clean scores, per cell.
    pub classes: Vec<usize>,
    /// η for active foreground cells, 0 elsewhere.
    pub foreground: Vec<f32>,
    /// 1 for active background cells, 0 elsewhere.
    pub background: Vec<f32>,
}

fn argmax2(scores: &[f32; 2]) -> usize {
    if scores[1] > scores[0] {
        1
    } else {
        0
    }
}

/// Branch weights for each cell. `perturbed_boxes` feed η and are treated
/// as constants.
pub fn select_terms(clean: &[Proposal], perturbed_boxes: &[BBox], config: &AttackConfig) -> Result<LossSelection> {
    if clean.len() != perturbed_boxes.len() {
        return Err(Error::shape(format!("{} clean proposals for {} perturbed boxes", clean.len(), perturbed_boxes.len())));
    }
    let k = config.background_class;
    let mut sel = LossSelection {
        classes: Vec::with_capacity(clean.len()),
        foreground: vec![0.0; clean.len()],
        background: vec![0.0; clean.len()],
    };
    for (i, (p, b)) in clean.iter().zip(perturbed_boxes).enumerate() {
        let c = argmax2(&p.scores);
        let pc = p.scores[c];
        if c != k && pc > config.tau1 {
            sel.foreground[i] = b.iou(&p.bbox);
        } else if c == k && pc > config.tau2 {
            sel.background[i] = 1.0;
        }
        sel.classes.push(c);
    }
    Ok(sel)
}

fn check_aligned(perturbed: &[Proposal], clean: &[Proposal]) -> Result<()> {
    if perturbed.len() != clean.len() || perturbed.iter().zip(clean).any(|(a, b)| a.cell != b.cell) {
        return Err(Error::shape("perturbed and clean proposals are not cell-aligned"));
    }
    Ok(())
}

/// Attacker objective evaluated on plain proposals (no gradient).
pub fn adv_loss(perturbed: &[Proposal], clean: &[Proposal], config: &AttackConfig) -> Result<f32> {
    check_aligned(perturbed, clean)?;
    let boxes: Vec<BBox> = perturbed.iter().map(|p| p.bbox).collect();
    let sel = select_terms(clean, &boxes, config)?;
    let mut total = 0.0f64;
    for (i, p) in perturbed.iter().enumerate() {
        let q = p.scores[sel.classes[i]].clamp(PROB_EPS, 1.0 - PROB_EPS);
        let log_rest = (1.0 - q as f64).ln();
        total -= sel.foreground[i] as f64 * log_rest;
        total -= config.lambda as f64 * sel.background[i] as f64 * q as f64 * log_rest;
    }
    let total = total as f32;
    Ok(if config.sign_flip { -total } else { total })
}

/// Differentiable form of [`adv_loss`] over an N×2 probability value.
pub fn adv_loss_on_tape(tape: &mut Tape, probs: Var, sel: &LossSelection, config: &AttackConfig) -> Result<Var> {
    let p = tape.gather_cols(probs, &sel.classes)?;
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let rest = tape.sub(one, p)?;
    let log_rest = tape.log(rest)?;

    let n = sel.classes.len();
    let fg_w = tape.constant(Tensor::new(&[n], sel.foreground.clone())?);
    let bg_w = tape.constant(Tensor::new(&[n], sel.background.iter().map(|b| b * config.lambda).collect())?);
    let fg = tape.mul(fg_w, log_rest)?;
    let bg_scaled = tape.mul(bg_w, p)?;
    let bg = tape.mul(bg_scaled, log_rest)?;
    let both = tape.add(fg, bg)?;
    let total = tape.sum(both)?;
    // Sum of w·log(1−p) is the negated objective.
    if config.sign_flip {
        Ok(total)
    } else {
        tape.neg(total)
    }
}
