//! Minimal reverse-mode autodiff: tape, parameters, SGD, gradient checking.

mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use optim::{sgd_step, OptState};
pub use params::{Param, ParamGroup, ParamSet, ParamVars};
pub use tape::{Gradients, Tape, Var};

use crate::error::Result;
use crate::tensor::Tensor;

/// Per-sample, per-channel mean and population standard deviation of an
/// NCHW tensor, each shaped N×C.
pub fn channel_stats(input: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, c, _, _) = input.dims4("channel_stats")?;
    let (mean, std) = tape::channel_stats_raw(input)?;
    Ok((Tensor::new(vec![n, c], mean)?, Tensor::new(vec![n, c], std)?))
}

/// Value-only softmax cross-entropy (batch mean), for callers that do not
/// need a tape.
pub fn softmax_cross_entropy_value(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.softmax_cross_entropy(l, labels)?;
    Ok(tape.value(loss).item())
}
