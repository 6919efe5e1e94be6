use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::coder::CoderPair;

/// Per-channel mean and population std of a C×H×W tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMoments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelMoments {
    pub fn of(x: &Tensor) -> Result<Self> {
        let (c, h, w) = x.dims3("channel moments")?;
        let hw = (h * w) as f64;
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for plane in x.data().chunks_exact(h * w) {
            let m = plane.iter().sum::<f64>() / hw;
            let v = plane.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / hw;
            mean.push(m);
            std.push(v.sqrt());
        }
        Ok(ChannelMoments { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Re-normalises every channel of `source` to the target mean and std.
///
/// A channel whose std is at most `epsilon` carries no spatial signal to
/// rescale and is set to the target mean.
pub fn adain(source: &Tensor, target: &Tensor, epsilon: f64) -> Result<Tensor> {
    adain_to(source, &ChannelMoments::of(target)?, epsilon)
}

pub fn adain_to(source: &Tensor, target: &ChannelMoments, epsilon: f64) -> Result<Tensor> {
    let (c, h, w) = source.dims3("adain source")?;
    if c != target.channels() {
        return Err(Error::shape(format!(
            "adain: source has {c} channels, target has {}",
            target.channels()
        )));
    }
    let src = ChannelMoments::of(source)?;
    let mut out = Vec::with_capacity(source.numel());
    for (ch, plane) in source.data().chunks_exact(h * w).enumerate() {
        let (mu_t, sd_t) = (target.mean[ch], target.std[ch]);
        let (mu_s, sd_s) = (src.mean[ch], src.std[ch]);
        if sd_s <= epsilon {
            out.extend(std::iter::repeat_n(mu_t, plane.len()));
        } else {
            let k = sd_t / sd_s;
            out.extend(plane.iter().map(|&x| k * (x - mu_s) + mu_t));
        }
    }
    let out = Tensor::new(source.shape().to_vec(), out)?;
    if !out.all_finite() {
        return Err(Error::NonFinite { op: "adain" });
    }
    Ok(out)
}

/// Where the statistics transfer happens.
#[derive(Debug, Clone, Copy)]
pub enum Stylizer<'a> {
    /// Directly on pixel channels (encoder and decoder are the identity).
    Pixel,
    /// In the feature space of a trained encoder, decoded back to pixels.
    Learned(&'a CoderPair),
}

/// `g((1−γ)·f(source) + γ·adain(f(source), f(target)))`.
pub fn stylize(source: &Tensor, target: &Tensor, gamma: f64, stylizer: Stylizer, epsilon: f64) -> Result<Tensor> {
    match stylizer {
        Stylizer::Pixel => stylize_pixel(source, &ChannelMoments::of(target)?, gamma, epsilon),
        Stylizer::Learned(coder) => {
            let target_feats = coder.encode(target)?;
            stylize_learned(source, &ChannelMoments::of(&target_feats)?, gamma, coder, epsilon)
        }
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

fn blend(a: &Tensor, b: &Tensor, gamma: f64) -> Result<Tensor> {
    a.zip_map(b, |x, y| (1.0 - gamma) * x + gamma * y)
}

pub(crate) fn stylize_pixel(source: &Tensor, target: &ChannelMoments, gamma: f64, epsilon: f64) -> Result<Tensor> {
    check_gamma(gamma)?;
    blend(source, &adain_to(source, target, epsilon)?, gamma)
}

/// `target` holds the moments of the encoded target image.
pub(crate) fn stylize_learned(
    source: &Tensor,
    target: &ChannelMoments,
    gamma: f64,
    coder: &CoderPair,
    epsilon: f64,
) -> Result<Tensor> {
    check_gamma(gamma)?;
    if !coder.is_trained() {
        return Err(Error::invalid("learned stylization needs a trained decoder"));
    }
    let fs = coder.encode(source)?;
    let t = blend(&fs, &adain_to(&fs, target, epsilon)?, gamma)?;
    coder.decode(&t)
}
