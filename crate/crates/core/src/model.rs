//! Fully connected encoder/decoder with a reparameterized Gaussian latent.
//!
//! The encoder stacks `hidden_dims` ReLU layers followed by two linear heads
//! (`mu`, `logvar`); the decoder mirrors the hidden widths and ends in a
//! sigmoid for image data or a plain linear map for real-valued data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NvcError, Result};
use crate::losses::{reparameterize, LatentBatch};
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Output nonlinearity of the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputKind {
    /// Bernoulli decoder for data in `[0, 1]`.
    Sigmoid,
    /// Gaussian decoder for unbounded real data.
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub output: OutputKind,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, output: OutputKind) -> Self {
        ModelConfig {
            input_dim,
            hidden_dims: vec![512, 256],
            latent_dim: 16,
            output,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(NvcError::InvalidArgument(format!(
                "model dimensions must be positive: input {}, hidden {:?}, latent {}",
                self.input_dim, self.hidden_dims, self.latent_dim
            )));
        }
        Ok(())
    }

    /// `(name, fan_in, fan_out)` of every linear layer in parameter order.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut layers = Vec::new();
        let mut width = self.input_dim;
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            layers.push((format!("encoder.{i}"), width, h));
            width = h;
        }
        layers.push(("head.mu".to_string(), width, self.latent_dim));
        layers.push(("head.logvar".to_string(), width, self.latent_dim));
        let mut width = self.latent_dim;
        for (i, &h) in self.hidden_dims.iter().rev().enumerate() {
            layers.push((format!("decoder.{i}"), width, h));
            width = h;
        }
        let last = self.hidden_dims.len();
        layers.push((format!("decoder.{last}"), width, self.input_dim));
        layers
    }
}

/// Parameters of the encoder-decoder, stored as `(weight, bias)` pairs.
#[derive(Clone, Debug)]
pub struct MlpVae<T> {
    pub config: ModelConfig,
    pub params: Vec<Parameter<T>>,
}

/// Tape handles of every parameter for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundModel {
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> MlpVae<T> {
    /// Glorot-uniform weights `U(−√(6/(fan_in+fan_out)), +√(…))`, zero biases.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        for (name, fan_in, fan_out) in config.layers() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                .collect();
            params.push(Parameter::new(format!("{name}.weight"), Tensor::matrix(fan_in, fan_out, w)?));
            params.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![fan_out])?));
        }
        Ok(MlpVae { config, params })
    }

    /// Rebuilds a model from named parameter tensors (checkpoint restore).
    pub fn from_params(config: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = MlpVae::init(config)?;
        if tensors.len() != model.params.len() {
            return Err(NvcError::Format(format!(
                "expected {} model tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (p, (name, t)) in model.params.iter_mut().zip(tensors) {
            if p.name != name || p.value.dims() != t.dims() {
                return Err(NvcError::Format(format!(
                    "tensor {name} {:?} does not match model parameter {} {:?}",
                    t.dims(),
                    p.name,
                    p.value.dims()
                )));
            }
            p.value = t;
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Registers every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundModel {
        BoundModel {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), requires_grad))
                .collect(),
        }
    }

    /// Copies the leaf gradients of the last backward pass into `params`.
    pub fn collect_grads(&mut self, tape: &mut Tape<T>, bound: &BoundModel) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            p.grad = Some(
                tape.take_grad(v)
                    .ok_or_else(|| NvcError::MissingGradient(p.name.clone()))?,
            );
        }
        Ok(())
    }

    fn linear(tape: &mut Tape<T>, bound: &BoundModel, layer: usize, x: Var) -> Result<Var> {
        let w = bound.vars[2 * layer];
        let b = bound.vars[2 * layer + 1];
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    fn check_input(&self, tape: &Tape<T>, x: Var, width: usize, what: &str) -> Result<()> {
        let v = tape.value(x);
        let (_, cols) = v.shape().matrix("model input")?;
        if cols != width {
            return Err(NvcError::ShapeMismatch {
                op: "model input",
                lhs: v.dims().to_vec(),
                rhs: vec![width],
            });
        }
        if !v.is_finite() {
            return Err(NvcError::NonFinite(format!("{what} input")));
        }
        Ok(())
    }

    /// Posterior parameters `(mu, logvar)`; logvar is clamped to `[−10, 10]`.
    pub fn posterior(&self, tape: &mut Tape<T>, bound: &BoundModel, x: Var) -> Result<(Var, Var)> {
        self.check_input(tape, x, self.config.input_dim, "encoder")?;
        let mut h = x;
        let hidden = self.config.hidden_dims.len();
        for layer in 0..hidden {
            let a = Self::linear(tape, bound, layer, h)?;
            h = tape.relu(a);
        }
        let mu = Self::linear(tape, bound, hidden, h)?;
        let raw = Self::linear(tape, bound, hidden + 1, h)?;
        let logvar = tape.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, logvar))
    }

    /// Encodes a batch. With an RNG the latent is sampled by reparameterization;
    /// without one (evaluation) `z = mu`.
    pub fn encode<R: Rng>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        x: Var,
        rng: Option<&mut R>,
    ) -> Result<LatentBatch> {
        let (mu, logvar) = self.posterior(tape, bound, x)?;
        let z = match rng {
            Some(rng) => reparameterize(tape, mu, logvar, rng)?,
            None => mu,
        };
        Ok(LatentBatch { mu, logvar, z })
    }

    pub fn decode(&self, tape: &mut Tape<T>, bound: &BoundModel, z: Var) -> Result<Var> {
        self.check_input(tape, z, self.config.latent_dim, "decoder")?;
        let hidden = self.config.hidden_dims.len();
        let first = hidden + 2;
        let mut h = z;
        for i in 0..hidden {
            let a = Self::linear(tape, bound, first + i, h)?;
            h = tape.relu(a);
        }
        let out = Self::linear(tape, bound, first + hidden, h)?;
        Ok(match self.config.output {
            OutputKind::Sigmoid => tape.sigmoid(out),
            OutputKind::Linear => out,
        })
    }

    fn chunked(&self, x: &Tensor<T>, f: impl Fn(&mut Tape<T>, &BoundModel, Var) -> Result<Var>) -> Result<Tensor<T>> {
        const CHUNK: usize = 1000;
        let n = x.rows();
        let mut out = Vec::new();
        let mut width = 0;
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let xv = tape.constant(x.gather_rows(&idx)?);
            let y = f(&mut tape, &bound, xv)?;
            width = tape.value(y).row_len();
            out.extend_from_slice(tape.value(y).data());
            start = end;
        }
        Tensor::matrix(n, width, out)
    }

    /// Evaluation-mode latent codes (`z = mu`) for every row of `x`.
    pub fn latent_means(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.chunked(x, |tape, bound, xv| Ok(self.posterior(tape, bound, xv)?.0))
    }

    /// Evaluation-mode reconstruction `G(mu(x))`.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.chunked(x, |tape, bound, xv| {
            let (mu, _) = self.posterior(tape, bound, xv)?;
            self.decode(tape, bound, mu)
        })
    }

    pub fn decode_values(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.chunked(z, |tape, bound, zv| self.decode(tape, bound, zv))
    }

    pub fn cast<U: Real>(&self) -> MlpVae<U> {
        MlpVae {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
        }
    }
}
