//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Computation is recorded on a [`Graph`] arena: every operation appends a
//! node holding its forward value and the information needed to propagate
//! gradients. [`Graph::backward`] walks the arena in reverse insertion order,
//! which is always a valid topological order.
//!
//! The engine is generic over [`Scalar`], implemented for `f64` (used for
//! gradient checking) and `f32` (used for training).
//!
//! ```
//! use lobtrend_autograd::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use error::{AutogradError, Result};
pub use gradcheck::{finite_diff_check, GradCheckReport, GRADCHECK_ABS_FLOOR};
pub use graph::{Graph, Var};
pub use params::{Bound, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Epsilon used by every normalization in this workspace.
pub const NORM_EPS: f64 = 1e-5;
