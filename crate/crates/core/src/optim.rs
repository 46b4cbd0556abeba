//! Adam and AdamW (decoupled weight decay).

use crate::error::{Error, Result};

/// A named parameter tensor paired with its gradient.
pub struct ParamRef<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Decoupled decay rate; ignored by plain Adam.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    pub first_moments: Vec<Vec<f64>>,
    pub second_moments: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, 0.0)
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::AdamW, learning_rate, weight_decay)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        }
    }

    /// Applies one update to every parameter. Nothing is modified if any
    /// gradient is non-finite or any shape disagrees.
    pub fn step(&mut self, params: &mut [ParamRef<'_>]) -> Result<()> {
        for p in params.iter() {
            if p.value.len() != p.grad.len() {
                return Err(Error::Shape(format!(
                    "parameter `{}` has {} entries but its gradient has {}",
                    p.name,
                    p.value.len(),
                    p.grad.len()
                )));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: p.name.clone(),
                });
            }
        }
        if self.first_moments.is_empty() && self.step_count == 0 {
            self.first_moments = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second_moments = self.first_moments.clone();
        }
        if self.first_moments.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, step received {}",
                self.first_moments.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.first_moments) {
            if m.len() != p.value.len() {
                return Err(Error::Shape(format!(
                    "moment buffer for `{}` has {} entries, parameter has {}",
                    p.name,
                    m.len(),
                    p.value.len()
                )));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let decay = match self.kind {
            OptimizerKind::AdamW => lr * self.weight_decay,
            OptimizerKind::Adam => 0.0,
        };
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moments)
            .zip(&mut self.second_moments)
        {
            for (((w, &g), m), v) in p.value.iter_mut().zip(p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                if decay != 0.0 {
                    *w -= decay * *w;
                }
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
