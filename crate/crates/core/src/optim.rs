//! Local optimizers: plain SGD and AdamW.

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub weight_decay: T,
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn sgd(learning_rate: T) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::adamw(learning_rate)
        }
    }

    /// AdamW with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`, weight decay `0.01`.
    pub fn adamw(learning_rate: T) -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            weight_decay: T::lit(0.01),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: T| Error::Validation(format!("{what} out of range: {v}"));
        if !(self.learning_rate.is_finite() && self.learning_rate > T::zero()) {
            return Err(bad("learning_rate", self.learning_rate));
        }
        if self.kind == OptimizerKind::AdamW {
            for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
                if !(beta >= T::zero() && beta < T::one()) {
                    return Err(bad(name, beta));
                }
            }
            if self.epsilon.is_nan() || self.epsilon <= T::zero() {
                return Err(bad("epsilon", self.epsilon));
            }
            if !(self.weight_decay >= T::zero() && self.weight_decay.is_finite()) {
                return Err(bad("weight_decay", self.weight_decay));
            }
        }
        Ok(())
    }
}

/// Optimizer hyperparameters plus mutable state (AdamW moments and step count).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    config: OptimizerConfig<T>,
    step: u64,
    moments: Option<Moments<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    /// Fresh state for a parameter vector of length `len`.
    pub fn new(config: OptimizerConfig<T>, len: usize) -> Self {
        let moments = (config.kind == OptimizerKind::AdamW).then(|| Moments {
            first: vec![T::zero(); len],
            second: vec![T::zero(); len],
        });
        Self {
            config,
            step: 0,
            moments,
        }
    }

    pub fn config(&self) -> &OptimizerConfig<T> {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> Option<&[T]> {
        self.moments.as_ref().map(|m| m.first.as_slice())
    }

    pub fn second_moment(&self) -> Option<&[T]> {
        self.moments.as_ref().map(|m| m.second.as_slice())
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ParamVector<T>, grad: &ParamVector<T>) -> Result<()> {
        params.check_len(grad)?;
        if let Some(m) = &self.moments {
            if m.first.len() != params.len() {
                return Err(Error::LengthMismatch {
                    expected: m.first.len(),
                    actual: params.len(),
                });
            }
        }
        self.step += 1;
        let cfg = self.config;
        match &mut self.moments {
            None => {
                for (p, &g) in params.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                    *p -= cfg.learning_rate * g;
                }
            }
            Some(m) => {
                let t = i32::try_from(self.step).unwrap_or(i32::MAX);
                let bias1 = T::one() - cfg.beta1.powi(t);
                let bias2 = T::one() - cfg.beta2.powi(t);
                let decay = T::one() - cfg.learning_rate * cfg.weight_decay;
                for (((p, &g), m1), m2) in params
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.as_slice())
                    .zip(m.first.iter_mut())
                    .zip(m.second.iter_mut())
                {
                    *m1 = cfg.beta1 * *m1 + (T::one() - cfg.beta1) * g;
                    *m2 = cfg.beta2 * *m2 + (T::one() - cfg.beta2) * g * g;
                    let m_hat = *m1 / bias1;
                    let v_hat = *m2 / bias2;
                    *p = *p * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            }
        }
        Ok(())
    }
}
