use rand::Rng;

use crate::autodiff::{sgd_step, OptState, Tape};
use crate::error::{Error, Result};
use crate::jigsaw::decompose;
use crate::rng;
use crate::tensor::Tensor;

use super::adain::{adain_to, ChannelMoments};
use super::coder::{decode_var, CoderPair};
use super::losses::{adjacent_distance, content_residual, phi_layers, style_distance};

/// Decoder objective `L_c + λ·L_s − τ·L_adj`, minimised over the decoder
/// only. Style and diversification weights are deliberately small so that
/// reconstruction dominates.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderTraining {
    pub lambda: f64,
    pub tau: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Images per SGD step.
    pub batch: usize,
    pub grid_n: usize,
    pub epsilon: f64,
}

impl Default for DecoderTraining {
    fn default() -> Self {
        DecoderTraining {
            lambda: 0.1,
            tau: 0.01,
            epochs: 10,
            lr: 0.005,
            momentum: 0.9,
            batch: 10,
            grid_n: 3,
            epsilon: 1e-6,
        }
    }
}

/// Epoch means of each objective term.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecoderHistory {
    pub total: Vec<f64>,
    pub content: Vec<f64>,
    pub style: Vec<f64>,
    pub adjacent: Vec<f64>,
}

/// Trains the decoder so that `g(adain(f(tile), f(style)))` reconstructs
/// the transferred features and carries the style exemplar's statistics.
///
/// Each image of `corpus` is cut into tiles; every tile is paired with a
/// style exemplar chosen once per (image, tile) from `styles`, so every
/// epoch sees the same objective. The `−τ` term is applied per tile grid.
pub fn train_decoder(
    coder: &CoderPair,
    corpus: &[Tensor],
    styles: &[Tensor],
    cfg: &DecoderTraining,
    seed: u64,
) -> Result<(CoderPair, DecoderHistory)> {
    if corpus.is_empty() || styles.is_empty() {
        return Err(Error::invalid(
            "decoder training needs content images and style exemplars",
        ));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::config("decoder training needs positive batch and epochs"));
    }
    let mut coder = coder.clone();
    let enc_params = coder.encoder().clone();

    // Fixed per-tile inputs: the transferred features t and the style image.
    struct Item {
        t: Tensor,
        style: Tensor,
    }
    let mut items = Vec::with_capacity(corpus.len());
    let style_feats = styles
        .iter()
        .map(|s| ChannelMoments::of(&coder.encode(s)?))
        .collect::<Result<Vec<_>>>()?;
    for (i, img) in corpus.iter().enumerate() {
        let grid = decompose(img, cfg.grid_n)?;
        let mut rng = rng::stream(seed, "decoder-style", &[i as u64]);
        let mut ts = Vec::with_capacity(grid.len());
        let mut ss = Vec::with_capacity(grid.len());
        for tile in grid.tiles() {
            let s = rng.gen_range(0..styles.len());
            ts.push(adain_to(&coder.encode(tile)?, &style_feats[s], cfg.epsilon)?);
            ss.push(styles[s].clone());
        }
        items.push(Item {
            t: Tensor::stack(&ts)?,
            style: Tensor::stack(&ss)?,
        });
    }

    let mut opt = OptState::new(cfg.lr, cfg.momentum, 0.0)?;
    let mut history = DecoderHistory::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng::stream(seed, "decoder-order", &[epoch as u64]));
        let mut sums = [0.0; 4];
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let diverged = || Error::Diverged { epoch, batch: b };
            let mut tape = Tape::new();
            let enc = enc_params.attach_frozen(&mut tape);
            let dec = coder.decoder().attach(&mut tape);
            let mut total = None;
            for &i in chunk {
                let t = tape.constant(items[i].t.clone());
                let out = decode_var(&mut tape, &dec, t).map_err(|_| diverged())?;
                let lc = content_residual(&mut tape, &enc, out, t).map_err(|_| diverged())?;
                let style = tape.constant(items[i].style.clone());
                let a = phi_layers(&mut tape, Some(&enc), out)?;
                let s = phi_layers(&mut tape, Some(&enc), style)?;
                let ls = style_distance(&mut tape, &a, &s).map_err(|_| diverged())?;
                let lj = adjacent_distance(&mut tape, Some(&enc), out).map_err(|_| diverged())?;
                sums[1] += tape.value(lc).item();
                sums[2] += tape.value(ls).item();
                sums[3] += tape.value(lj).item();
                let ls = tape.scale(ls, cfg.lambda)?;
                let lj = tape.scale(lj, -cfg.tau)?;
                let l = tape.add(lc, ls)?;
                let l = tape.add(l, lj)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, l)?,
                    None => l,
                });
            }
            let total = total.expect("non-empty chunk");
            let loss = tape.scale(total, 1.0 / chunk.len() as f64)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(diverged());
            }
            sums[0] += tape.value(total).item();
            let grads = tape.backward(loss).map_err(|_| diverged())?;
            coder.decoder_mut().accumulate_grads(&grads, &dec)?;
            sgd_step(coder.decoder_mut(), &mut opt).map_err(|_| diverged())?;
        }
        let n = items.len() as f64;
        history.total.push(sums[0] / n);
        history.content.push(sums[1] / n);
        history.style.push(sums[2] / n);
        history.adjacent.push(sums[3] / n);
    }
    coder.set_trained(true);
    Ok((coder, history))
}
