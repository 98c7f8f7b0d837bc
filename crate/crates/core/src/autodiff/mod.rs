//! Tape-based reverse-mode differentiation over the handful of layers the
//! classifier needs.
//!
//! Values are recorded on a [`Tape`] as they are computed and referred to
//! by [`Var`] handles. Calling [`Tape::backward`] on a scalar walks the
//! tape in reverse and accumulates gradients for every node that depends
//! on a leaf created with `requires_grad = true`.
//!
//! ```
//! use pcgnet_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0])?, false);
//! let w = tape.leaf(Tensor::new([1, 1, 2], vec![1.0, 1.0])?, true);
//! let y = tape.conv1d(x, w, None)?;
//! assert_eq!(tape.value(y).data(), &[3.0, 5.0, 7.0, 4.0]);
//!
//! let loss = tape.dot(y, &[1.0; 4])?;
//! tape.backward(loss)?;
//! assert_eq!(tape.grad(w).unwrap(), &[10.0, 9.0]);
//! # Ok::<(), pcgnet_core::Error>(())
//! ```

pub(crate) mod kernels;
mod pool;
mod tape;
mod tensor;

pub use tape::{BatchStats, BnMode, Tape, Var, BN_EPS, BN_MOMENTUM, LOG_EPS};
pub use tensor::Tensor;
