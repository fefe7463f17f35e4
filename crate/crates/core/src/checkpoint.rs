//! Training-state checkpoints in the `NVCK` container.
//!
//! The config snapshot is the canonical [`TrainConfig::render`] text. Sections:
//! `meta/epoch`, `meta/step`, `meta/output`, one `model/<param>` per weight,
//! `anchors` when the run has them, and `adam/step`, `adam/m/<param>`,
//! `adam/v/<param>` for Adam moment buffers.

use std::path::Path;

use crate::container::Container;
use crate::error::{NvcError, Result};
use crate::losses::AnchorSet;
use crate::model::{MlpVae, ModelConfig, OutputKind};
use crate::tensor::{AdamState, Tensor};
use crate::train::{OptimizerState, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NVCK";

fn counter(v: usize) -> Tensor<f32> {
    Tensor::vector(vec![v as f32])
}

fn read_counter(c: &Container, name: &str) -> Result<usize> {
    let v = c.require(name)?.item();
    if v < 0.0 || v.fract() != 0.0 {
        return Err(NvcError::Format(format!("section `{name}` holds {v}, expected a count")));
    }
    Ok(v as usize)
}

pub fn to_container(state: &TrainState) -> Container {
    let mut c = Container::new(CHECKPOINT_MAGIC, state.config.render());
    c.push("meta/epoch", counter(state.epoch));
    c.push("meta/step", counter(state.step));
    let output = match state.model.config.output {
        OutputKind::Sigmoid => 1,
        OutputKind::Linear => 0,
    };
    c.push("meta/output", counter(output));
    for p in &state.model.params {
        c.push(format!("model/{}", p.name), p.value.clone());
    }
    if let Some(a) = &state.anchors {
        c.push("anchors", a.values().clone());
    }
    if let OptimizerState::Adam(adam) = &state.optimizer {
        c.push("adam/step", counter(adam.step as usize));
        let names = state
            .model
            .params
            .iter()
            .map(|p| p.name.as_str())
            .chain(state.anchors.as_ref().map(|_| "anchors"));
        for (name, s) in names.zip(&adam.states) {
            c.push(format!("adam/m/{name}"), Tensor::vector(s.m.clone()));
            c.push(format!("adam/v/{name}"), Tensor::vector(s.v.clone()));
        }
    }
    c
}

pub fn from_container(c: &Container) -> Result<TrainState> {
    let config = TrainConfig::parse(&c.text)?;
    let output = match read_counter(c, "meta/output")? {
        1 => OutputKind::Sigmoid,
        0 => OutputKind::Linear,
        v => return Err(NvcError::Format(format!("unknown decoder output code {v}"))),
    };
    let tensors: Vec<(String, Tensor<f32>)> = c
        .with_prefix("model/")
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let input_dim = tensors
        .first()
        .map(|(_, t)| t.dims()[0])
        .ok_or_else(|| NvcError::Format("checkpoint holds no model tensors".into()))?;
    let model = MlpVae::from_params(
        ModelConfig {
            input_dim,
            hidden_dims: config.hidden_dims.clone(),
            latent_dim: config.latent_dim,
            output,
            seed: config.seed,
        },
        tensors,
    )?;
    let anchors = match c.get("anchors") {
        Some(t) => Some(AnchorSet::from_tensor(t.clone(), config.seed)?),
        None if config.effective_mode().uses_anchors() => {
            return Err(NvcError::Format(format!("{} checkpoint is missing its anchors", config.mode)))
        }
        None => None,
    };
    let mut optimizer = OptimizerState::new(config.optimizer, config.lr);
    if let OptimizerState::Adam(adam) = &mut optimizer {
        if let Some(step) = c.get("adam/step") {
            adam.step = step.item() as u64;
            let ms: Vec<_> = c.with_prefix("adam/m/").collect();
            let vs: Vec<_> = c.with_prefix("adam/v/").collect();
            if ms.len() != vs.len() {
                return Err(NvcError::Format("unpaired Adam moment sections".into()));
            }
            adam.states = ms
                .into_iter()
                .zip(vs)
                .map(|((mn, m), (vn, v))| {
                    if mn != vn {
                        return Err(NvcError::Format(format!("Adam moments `{mn}` and `{vn}` out of order")));
                    }
                    Ok(AdamState {
                        m: m.data().to_vec(),
                        v: v.data().to_vec(),
                    })
                })
                .collect::<Result<_>>()?;
        }
    }
    Ok(TrainState {
        epoch: read_counter(c, "meta/epoch")?,
        step: read_counter(c, "meta/step")?,
        config,
        model,
        anchors,
        optimizer,
    })
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    to_container(state).save(path)
}

pub fn load(path: &Path) -> Result<TrainState> {
    from_container(&Container::load(path, CHECKPOINT_MAGIC)?)
}
