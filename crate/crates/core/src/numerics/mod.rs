//! Dense arithmetic, activations, normalizations, initialization, the
//! optimizer stack and gradient verification.
//!
//! Everything here is generic over [`Scalar`] so the same layer code can run
//! in 32-bit (training, checkpoints) and 64-bit (tight gradient checks).

mod gradcheck;
mod init;
mod loss;
mod ops;
mod optim;
pub mod rng;
mod tensor;

pub use gradcheck::{grad_check, grad_check_piecewise, GradCheckConfig, GradCheckReport, HasParams};
pub use init::{xavier_uniform, XAVIER};
pub use loss::nll_loss;
pub use ops::{
    dropout, gelu, gelu_grad, gemm_nn, gemm_nt, gemm_tn, layer_norm, layer_norm_backward,
    linear, linear_backward, log_softmax, log_softmax_backward, log_softmax_rows, matmul, softmax_rows, DropoutMask,
    LayerNormCache, Mode, GELU_VARIANT,
};
pub use optim::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use tensor::{Parameter, Tensor};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for tensors and layers.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;

    fn erf(self) -> Self;

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn erf(self) -> Self {
        libm::erf(self)
    }
}
