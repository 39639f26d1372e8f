//! SGD and Adam updates over ordered parameter lists.

use crate::error::{Error, Result};
use crate::tensor::RealArray;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    Adam,
}

/// Optimizer state: learning rate, step counter and (for Adam) first/second
/// moment accumulators aligned with the parameter list it was created for.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: Vec<(RealArray, RealArray)>,
}

impl Optimizer {
    pub fn new(kind: OptKind, lr: f64, param_shapes: &[Vec<usize>]) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::InvalidArg(format!("learning rate must be positive, got {lr}")));
        }
        let moments = param_shapes
            .iter()
            .map(|s| (RealArray::zeros(s.clone()), RealArray::zeros(s.clone())))
            .collect();
        Ok(Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptKind::Sgd, lr, &[])
    }

    pub fn adam(lr: f64, param_shapes: &[Vec<usize>]) -> Result<Self> {
        Self::new(OptKind::Adam, lr, param_shapes)
    }

    /// One descent step. `grads[i]` may be `None` when a parameter did not
    /// participate in the loss (its moments still decay under Adam).
    pub fn apply(
        &mut self,
        params: &mut [(String, RealArray)],
        grads: &[Option<RealArray>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArg(format!(
                "optimizer got {} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        for (i, ((name, _), grad)) in params.iter().zip(grads).enumerate() {
            if let Some(g) = grad {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of parameter '{name}' (#{i})")));
                }
            }
        }
        self.step += 1;
        match self.kind {
            OptKind::Sgd => {
                for ((_, p), g) in params.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        p.axpy(-self.lr, g);
                    }
                }
            }
            OptKind::Adam => {
                if self.moments.len() != params.len() {
                    return Err(Error::InvalidArg(format!(
                        "optimizer created for {} params, got {}",
                        self.moments.len(),
                        params.len()
                    )));
                }
                let t = self.step as f64;
                let bc1 = 1.0 - self.beta1.powf(t);
                let bc2 = 1.0 - self.beta2.powf(t);
                for (((_, p), g), (m, v)) in
                    params.iter_mut().zip(grads).zip(self.moments.iter_mut())
                {
                    let zero;
                    let g = match g {
                        Some(g) => g,
                        None => {
                            zero = RealArray::zeros(p.shape().to_vec());
                            &zero
                        }
                    };
                    for i in 0..p.len() {
                        let gi = g.values()[i];
                        let mi = self.beta1 * m.values()[i] + (1.0 - self.beta1) * gi;
                        let vi = self.beta2 * v.values()[i] + (1.0 - self.beta2) * gi * gi;
                        m.values_mut()[i] = mi;
                        v.values_mut()[i] = vi;
                        let mhat = mi / bc1;
                        let vhat = vi / bc2;
                        p.values_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Flatten moment accumulators for checkpointing (Adam only).
    pub fn moment_tensors(&self) -> Vec<(String, RealArray)> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.moments.iter().enumerate() {
            out.push((format!("opt.m{i}"), m.clone()));
            out.push((format!("opt.v{i}"), v.clone()));
        }
        out
    }

    pub fn restore_moments(&mut self, tensors: &[(String, RealArray)]) -> Result<()> {
        for (i, (m, v)) in self.moments.iter_mut().enumerate() {
            let mt = tensors
                .iter()
                .find(|(n, _)| n == &format!("opt.m{i}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing opt.m{i}")))?;
            let vt = tensors
                .iter()
                .find(|(n, _)| n == &format!("opt.v{i}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing opt.v{i}")))?;
            *m = mt.1.clone();
            *v = vt.1.clone();
        }
        Ok(())
    }
}
