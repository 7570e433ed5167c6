//! Dense tensors with reverse-mode gradients, gradient checking, Adam, and
//! cosine-annealed learning rates.
//!
//! Double precision throughout. A [`Graph`] is built per forward pass:
//!
//! ```
//! use poco_core::diffcore::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::vector(vec![0.0]));
//! let y = g.sigmoid(x);
//! g.backward(y);
//! assert_eq!(g.value(y).item(), 0.5);
//! assert_eq!(g.grad(x).unwrap(), &[0.25]);
//! ```

mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{Axis, Graph, Var, NORM_EPS};
pub use optim::{Adam, LrSchedule, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
