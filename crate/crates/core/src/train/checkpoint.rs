use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive;
use crate::autodiff::{OptState, ParamSet};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::tensor::Tensor;

use super::metrics::MetricsRow;

const KIND: &str = "checkpoint";
const VERSION: u32 = 1;

/// Everything needed to continue a run. Random streams are keyed by
/// `(seed, epoch, item)`, so the seed and epoch count stand in for RNG state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub config: String,
    pub params: ParamSet,
    pub opt: OptState,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    epoch: usize,
    seed: u64,
    config: String,
    params: Vec<(String, String)>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    momentum_buffers: Vec<String>,
    metrics: Vec<MetricsRow>,
}

const PARAM: &str = "param/";
const MOMENTUM: &str = "momentum/";

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            spec: self.spec.clone(),
            epoch: self.epoch,
            seed: self.seed,
            config: self.config.clone(),
            params: archive::param_groups(&self.params),
            lr: self.opt.lr,
            momentum: self.opt.momentum,
            weight_decay: self.opt.weight_decay,
            momentum_buffers: self.opt.buffers().iter().map(|(n, _)| n.clone()).collect(),
            metrics: self.metrics.clone(),
        };
        let names: Vec<String> = self
            .params
            .iter()
            .map(|p| format!("{PARAM}{}", p.name))
            .chain(self.opt.buffers().iter().map(|(n, _)| format!("{MOMENTUM}{n}")))
            .collect();
        let values: Vec<&Tensor> = self
            .params
            .iter()
            .map(|p| &p.value)
            .chain(self.opt.buffers().iter().map(|(_, t)| t))
            .collect();
        let tensors: Vec<(&str, &Tensor)> = names.iter().map(|s| s.as_str()).zip(values).collect();
        archive::to_bytes(KIND, VERSION, &header, &tensors)
    }

    pub fn from_bytes(context: &str, bytes: &[u8]) -> Result<Self> {
        let (h, tensors): (Header, _) = archive::from_bytes(context, KIND, VERSION, bytes)?;
        let (mut params_t, buffers_t): (Vec<_>, Vec<_>) = tensors.into_iter().partition(|(n, _)| n.starts_with(PARAM));
        for (n, _) in params_t.iter_mut() {
            *n = n[PARAM.len()..].to_string();
        }
        let params = archive::params_from(context, &h.params, &mut params_t)?;
        let mut buffers = Vec::with_capacity(h.momentum_buffers.len());
        for name in &h.momentum_buffers {
            let key = format!("{MOMENTUM}{name}");
            let t = buffers_t
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| Error::format(context, format!("missing tensor {key}")))?;
            buffers.push((name.clone(), t.1.clone()));
        }
        let mut opt = OptState::new(h.lr, h.momentum, h.weight_decay)?;
        opt.set_buffers(buffers);
        let fresh = crate::model::init_params(&h.spec, 0)?;
        let matches = fresh.len() == params.len()
            && fresh
                .iter()
                .zip(params.iter())
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !matches {
            return Err(Error::format(context, "parameters do not match the stored model spec"));
        }
        Ok(Checkpoint {
            spec: h.spec,
            epoch: h.epoch,
            seed: h.seed,
            config: h.config,
            params,
            opt,
            metrics: h.metrics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        archive::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&path.display().to_string(), &archive::read_file(path)?)
    }
}
