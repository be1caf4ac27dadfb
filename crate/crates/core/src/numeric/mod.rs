//! Dense tensors, reverse-mode differentiation, FFT and seeded randomness.

mod fft;
mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use fft::{fft, fft_real, ifft, ifft_real, ComplexSpectrum};
pub use gradcheck::{grad_check, gradient_errors};
pub use rng::RngState;
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::{matmul, matmul_nt, softmax, Tensor};

