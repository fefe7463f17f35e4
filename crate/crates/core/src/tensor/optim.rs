use crate::error::{NvcError, Result};

use super::{Real, Tensor};

/// A trainable tensor together with the gradient from the last backward pass.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value,
            grad: None,
        }
    }

    fn take_grad(&mut self) -> Result<Vec<T>> {
        let grad = self
            .grad
            .as_mut()
            .ok_or_else(|| NvcError::MissingGradient(self.name.clone()))?;
        if grad.numel() != self.value.numel() {
            return Err(NvcError::ShapeMismatch {
                op: "optimizer step",
                lhs: self.value.dims().to_vec(),
                rhs: grad.dims().to_vec(),
            });
        }
        let data = grad.data().to_vec();
        grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        Ok(data)
    }
}

/// In-place update rule over a parameter list. Grads are zeroed afterwards.
pub trait Optimizer<T: Real> {
    fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()>;
}

/// Plain stochastic gradient descent, `w ← w − lr·g`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl<T: Real> Optimizer<T> for Sgd {
    fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        let lr = T::from_f64_lossy(self.lr);
        for p in params.iter_mut() {
            let g = p.take_grad()?;
            p.value
                .data_mut()
                .iter_mut()
                .zip(g)
                .for_each(|(w, g)| *w = *w - lr * g);
        }
        Ok(())
    }
}

/// First and second moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            states: Vec::new(),
        }
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        if self.states.is_empty() {
            self.states = params
                .iter()
                .map(|p| AdamState {
                    m: vec![T::zero(); p.value.numel()],
                    v: vec![T::zero(); p.value.numel()],
                })
                .collect();
        }
        if self.states.len() != params.len() {
            return Err(NvcError::InvalidArgument(format!(
                "adam state tracks {} parameters, step received {}",
                self.states.len(),
                params.len()
            )));
        }
        // Gradients are collected first so a missing one leaves every parameter untouched.
        let grads = params
            .iter_mut()
            .map(|p| p.take_grad())
            .collect::<Result<Vec<_>>>()?;

        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::from_f64_lossy(self.lr);
        let eps = T::from_f64_lossy(self.eps);

        for ((p, state), g) in params.iter_mut().zip(self.states.iter_mut()).zip(grads) {
            if state.m.len() != g.len() {
                return Err(NvcError::InvalidArgument(format!(
                    "adam state size mismatch for {}",
                    p.name
                )));
            }
            let w = p.value.data_mut();
            for i in 0..g.len() {
                state.m[i] = b1 * state.m[i] + (one - b1) * g[i];
                state.v[i] = b2 * state.v[i] + (one - b2) * g[i] * g[i];
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
