//! Nebula variational coding: a variational encoder-decoder whose latent
//! space is organised by trainable anchors, with optional self-supervised
//! metric learning on the anchor assignments.

pub mod checkpoint;
pub mod cli;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{NvcError, Result};
