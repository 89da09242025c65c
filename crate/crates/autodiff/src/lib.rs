//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! The operator set is deliberately closed: exactly what a GIN encoder,
//! a VAE head and a GRU decoder need. Every op records its inputs and any
//! non-differentiable payload (dropout masks, batch statistics, class masks)
//! on a [`Graph`], so the tape can be replayed and differentiated.
//!
//! ```
//! use mhg_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
//! let y = g.relu(x);
//! assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
//! ```

mod error;
mod gradcheck;
mod graph;
pub mod nn;
mod optim;
pub mod rng;
mod tensor;

pub use error::AutodiffError;
pub use gradcheck::{grad_check, relative_error, FD_STEP};
pub use graph::{BatchNormMode, Gradients, Graph, Var};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, AutodiffError>;
