use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::params::ParamSet;

/// SGD with heavy-ball momentum and L2 weight decay.
///
/// Per step: `v <- momentum * v + grad + weight_decay * param`, then
/// `param <- param - lr * v`. Gradients are zeroed afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<(String, Tensor)>,
}

impl OptState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        for (name, v) in [("lr", lr), ("momentum", momentum), ("weight_decay", weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(OptState {
            lr,
            momentum,
            weight_decay,
            buffers: Vec::new(),
        })
    }

    /// Momentum buffers, in parameter order once the first step has run.
    pub fn buffers(&self) -> &[(String, Tensor)] {
        &self.buffers
    }

    pub fn set_buffers(&mut self, buffers: Vec<(String, Tensor)>) {
        self.buffers = buffers;
    }

    fn buffer_for(&mut self, name: &str, shape: &[usize]) -> Result<&mut Tensor> {
        let pos = match self.buffers.iter().position(|(n, _)| n == name) {
            Some(pos) => pos,
            None => {
                self.buffers.push((name.to_string(), Tensor::zeros(shape)));
                self.buffers.len() - 1
            }
        };
        let buf = &mut self.buffers[pos].1;
        if buf.shape() != shape {
            return Err(Error::shape(format!(
                "momentum buffer for {name} has shape {:?}, parameter has {shape:?}",
                buf.shape()
            )));
        }
        Ok(buf)
    }
}

pub fn sgd_step(params: &mut ParamSet, state: &mut OptState) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.has_grad) {
        return Err(Error::invalid(format!("parameter {} has no gradient", p.name)));
    }
    let (lr, momentum, wd) = (state.lr, state.momentum, state.weight_decay);
    for p in params.iter_mut() {
        let v = state.buffer_for(&p.name, p.value.shape())?;
        for ((v, w), g) in v
            .data_mut()
            .iter_mut()
            .zip(p.value.data_mut().iter_mut())
            .zip(p.grad.data())
        {
            *v = momentum * *v + g + wd * *w;
            *w -= lr * *v;
        }
        if !p.value.all_finite() {
            return Err(Error::NonFinite { op: "sgd_step" });
        }
    }
    params.zero_grads();
    Ok(())
}
