//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.
//!
//! A [`Tape`] records every operation of one forward pass together with the
//! values its backward rule needs. [`Tape::backward`] then walks the record in
//! reverse and returns [`Gradients`] for every differentiable leaf.
//!
//! ```
//! use lstsd::autodiff::Tape;
//! use lstsd::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
//! let x = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
//! let y = tape.matmul(x, w).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0]);
//! ```

pub mod kernels;
mod tape;

pub use kernels::KlDirection;
pub use tape::{Gradients, Tape, Var};
