use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Scalar;
use super::NetError;

/// Adam with bias correction. Moments are created lazily on the first step
/// and must keep the same parameter order afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub timestep: u64,
    #[serde(skip)]
    m: Vec<Vec<f64>>,
    #[serde(skip)]
    v: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            timestep: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one update to every parameter from its stored gradient.
    pub fn step<S: Scalar>(&mut self, params: &mut [&mut Param<S>]) -> Result<(), NetError> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(NetError::ShapeMismatch(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, m), _) in params.iter().zip(&self.m).zip(&self.v) {
            if p.value.len() != m.len() || p.grad.len() != m.len() {
                return Err(NetError::ShapeMismatch(
                    "parameter size changed between optimizer steps".into(),
                ));
            }
        }
        self.timestep += 1;
        let t = self.timestep as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Param { value, grad } = &mut **p;
            for (((w, g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g.to_f64().unwrap_or(f64::NAN);
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let update = self.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + self.epsilon);
                *w = *w - S::lit(update);
            }
        }
        Ok(())
    }
}
