//! Small learned encoder/decoder for feature-space stylization.
//!
//! The encoder is a single random 3×3 conv + ReLU and is never trained; it
//! stands in for a fixed pretrained feature extractor. The decoder (two 3×3
//! convs) learns to map transferred features back to pixels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive;
use crate::autodiff::{ParamGroup, ParamSet, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CoderPair {
    encoder: ParamSet,
    decoder: ParamSet,
    in_channels: usize,
    width: usize,
    trained: bool,
}

const K: usize = 3;
const KIND: &str = "coder";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CoderHeader {
    in_channels: usize,
    width: usize,
    trained: bool,
    params: Vec<(String, String)>,
}

impl CoderPair {
    pub fn new(in_channels: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "coder-init", &[]);
        let he = 6f64.sqrt();
        let mut encoder = ParamSet::new();
        encoder.insert_uniform(
            "enc.w",
            ParamGroup::Encoder,
            &[width, in_channels, K, K],
            in_channels * K * K,
            he,
            &mut rng,
        )?;
        let mut decoder = ParamSet::new();
        decoder.insert_uniform(
            "dec.w1",
            ParamGroup::Decoder,
            &[width, width, K, K],
            width * K * K,
            he,
            &mut rng,
        )?;
        decoder.insert("dec.b1", ParamGroup::Decoder, Tensor::zeros(&[width]))?;
        decoder.insert_uniform(
            "dec.w2",
            ParamGroup::Decoder,
            &[in_channels, width, K, K],
            width * K * K,
            1.0,
            &mut rng,
        )?;
        decoder.insert("dec.b2", ParamGroup::Decoder, Tensor::zeros(&[in_channels]))?;
        Ok(CoderPair {
            encoder,
            decoder,
            in_channels,
            width,
            trained: false,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut params = archive::param_groups(&self.encoder);
        params.extend(archive::param_groups(&self.decoder));
        let header = CoderHeader {
            in_channels: self.in_channels,
            width: self.width,
            trained: self.trained,
            params,
        };
        let tensors: Vec<(&str, &Tensor)> = self
            .encoder
            .iter()
            .chain(self.decoder.iter())
            .map(|p| (p.name.as_str(), &p.value))
            .collect();
        archive::write_atomic(path, &archive::to_bytes(KIND, VERSION, &header, &tensors)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ctx = path.display().to_string();
        let (h, mut tensors): (CoderHeader, _) = archive::from_bytes(&ctx, KIND, VERSION, &archive::read_file(path)?)?;
        let (enc, dec): (Vec<_>, Vec<_>) = h
            .params
            .into_iter()
            .partition(|(_, tag)| tag == ParamGroup::Encoder.tag());
        let encoder = archive::params_from(&ctx, &enc, &mut tensors)?;
        let decoder = archive::params_from(&ctx, &dec, &mut tensors)?;
        let fresh = CoderPair::new(h.in_channels, h.width, 0)?;
        for (got, want) in encoder
            .iter()
            .chain(decoder.iter())
            .zip(fresh.encoder.iter().chain(fresh.decoder.iter()))
        {
            if got.name != want.name || got.value.shape() != want.value.shape() {
                return Err(Error::format(&ctx, format!("unexpected coder parameter {}", got.name)));
            }
        }
        Ok(CoderPair {
            encoder,
            decoder,
            in_channels: h.in_channels,
            width: h.width,
            trained: h.trained,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Channel count of the feature space.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }

    pub fn encoder(&self) -> &ParamSet {
        &self.encoder
    }

    pub fn decoder(&self) -> &ParamSet {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut ParamSet {
        &mut self.decoder
    }

    /// `f(x)` for one C×H×W image.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |tape, x| {
            let vars = self.encoder.attach_frozen(tape);
            encode_var(tape, &vars, x)
        })
    }

    /// `g(t)` for one feature map.
    pub fn decode(&self, t: &Tensor) -> Result<Tensor> {
        self.apply(t, |tape, t| {
            let vars = self.decoder.attach_frozen(tape);
            decode_var(tape, &vars, t)
        })
    }

    fn apply(&self, x: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<Tensor> {
        let (c, h, w) = x.dims3("coder input")?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.reshape(&[1, c, h, w])?);
        let out = f(&mut tape, xv)?;
        let v = tape.value(out);
        v.reshape(&v.shape()[1..])
    }
}

pub(crate) fn encode_var(tape: &mut Tape, enc: &ParamVars, x: Var) -> Result<Var> {
    let y = tape.conv2d(x, enc.get("enc.w")?, 1, K / 2)?;
    Ok(tape.relu(y))
}

pub(crate) fn decode_var(tape: &mut Tape, dec: &ParamVars, t: Var) -> Result<Var> {
    let h = tape.conv2d(t, dec.get("dec.w1")?, 1, K / 2)?;
    let h = tape.channel_bias(h, dec.get("dec.b1")?)?;
    let h = tape.relu(h);
    let y = tape.conv2d(h, dec.get("dec.w2")?, 1, K / 2)?;
    tape.channel_bias(y, dec.get("dec.b2")?)
}
