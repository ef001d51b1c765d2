use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Which update rule [`OptimState::step`] applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `p ← p − lr·g`
    #[default]
    Sgd,
    /// First/second-moment adaptive update with bias correction.
    Adam,
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub learning_rate: f32,
    pub kind: OptimizerKind,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
    step: u64,
}

impl OptimState {
    pub fn sgd(learning_rate: f32) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f32) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f32) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Self {
            learning_rate,
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!("{} params but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("param {i}: {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= self.learning_rate * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.is_empty() {
                    self.first_moment = params.iter().map(|p| vec![0.0; p.numel()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                if self.first_moment.len() != params.len()
                    || self.first_moment.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
                {
                    return Err(Error::shape("parameter set changed between optimizer steps"));
                }
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
                    for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        *pv -= self.learning_rate * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One plain gradient step: `p ← p − lr·g`.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step_examples() {
        let mut st = OptimState::sgd(0.5);
        let mut p = vec![Tensor::scalar(1.0)];
        sgd_step(&mut p, &[Tensor::scalar(2.0)], &mut st).unwrap();
        assert_eq!(p[0].item(), 0.0);

        let mut p = vec![Tensor::vector(&[1.5, -2.0])];
        sgd_step(&mut p, &[Tensor::zeros(&[2])], &mut st).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn quadratic_converges_geometrically() {
        // f(p) = (p-3)^2, g = 2(p-3); error shrinks by (1 - 2·lr) = 0.8 per step.
        let mut st = OptimState::sgd(0.1);
        let mut p = vec![Tensor::scalar(0.0)];
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * (p[0].item() - 3.0));
            sgd_step(&mut p, &[g], &mut st).unwrap();
        }
        assert!((p[0].item() - 3.0).abs() < 1e-3);
        assert_eq!(st.steps_taken(), 100);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut st = OptimState::adam(0.05);
        let mut p = vec![Tensor::scalar(0.0)];
        for _ in 0..2000 {
            let g = Tensor::scalar(2.0 * (p[0].item() - 3.0));
            st.step(&mut p, &[g]).unwrap();
        }
        assert!((p[0].item() - 3.0).abs() < 1e-2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut st = OptimState::sgd(0.1);
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(st.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
        assert!(st.step(&mut p, &[]).is_err());
    }
}
