use crate::autodiff::{ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::jigsaw::TileGrid;
use crate::tensor::Tensor;

use super::coder::{decode_var, encode_var, CoderPair};

/// The feature layers whose channel statistics define "style".
#[derive(Debug, Clone, Copy)]
pub enum Phi<'a> {
    /// A single layer: the pixels themselves.
    Identity,
    /// Pixels plus the coder's encoder activation.
    Coder(&'a CoderPair),
}

pub(crate) fn phi_layers(tape: &mut Tape, enc: Option<&ParamVars>, x: Var) -> Result<Vec<Var>> {
    let mut layers = vec![x];
    if let Some(enc) = enc {
        layers.push(encode_var(tape, enc, x)?);
    }
    Ok(layers)
}

/// Σ over items and layers of `‖Δμ‖₂ + ‖Δσ‖₂`, where items are the batch
/// rows of each layer. `a` and `b` must agree in batch and channel count;
/// spatial sizes may differ.
pub(crate) fn style_distance(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<Var> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("style distance needs matching, non-empty layer lists"));
    }
    let mut total: Option<Var> = None;
    for (&la, &lb) in a.iter().zip(b) {
        let (ma, mb) = (tape.channel_mean(la)?, tape.channel_mean(lb)?);
        let (sa, sb) = (tape.channel_std(la)?, tape.channel_std(lb)?);
        let dm = tape.sub(ma, mb)?;
        let ds = tape.sub(sa, sb)?;
        let (n, _) = tape.value(dm).dims2("style distance")?;
        for i in 0..n {
            for d in [dm, ds] {
                let row = tape.rows(d, i, 1)?;
                let norm = tape.l2_norm(row)?;
                total = Some(match total {
                    Some(t) => tape.add(t, norm)?,
                    None => norm,
                });
            }
        }
    }
    Ok(total.expect("non-empty layer list"))
}

fn batch1(x: &Tensor, what: &str) -> Result<Tensor> {
    let (c, h, w) = x.dims3(what)?;
    x.reshape(&[1, c, h, w])
}

fn attach_phi<'a>(tape: &mut Tape, phi: Phi<'a>) -> Option<ParamVars> {
    match phi {
        Phi::Identity => None,
        Phi::Coder(c) => Some(c.encoder().attach_frozen(tape)),
    }
}

/// Style distance between `g(t)` and `s`. With `decoder = None`, `t` is
/// already an image and `g` is the identity.
pub fn style_loss(t: &Tensor, s: &Tensor, phi: Phi, decoder: Option<&CoderPair>) -> Result<f64> {
    let mut tape = Tape::new();
    let enc = attach_phi(&mut tape, phi);
    let mut tv = tape.constant(batch1(t, "style loss input")?);
    if let Some(coder) = decoder {
        let dec = coder.decoder().attach_frozen(&mut tape);
        tv = decode_var(&mut tape, &dec, tv)?;
    }
    let sv = tape.constant(batch1(s, "style loss reference")?);
    let a = phi_layers(&mut tape, enc.as_ref(), tv)?;
    let b = phi_layers(&mut tape, enc.as_ref(), sv)?;
    let d = style_distance(&mut tape, &a, &b)?;
    Ok(tape.value(d).item())
}

/// `‖f(g(t)) − t‖₂`; zero by definition when no coder is used.
pub fn content_loss(t: &Tensor, coder: Option<&CoderPair>) -> Result<f64> {
    let Some(coder) = coder else {
        return Ok(0.0);
    };
    let mut tape = Tape::new();
    let enc = coder.encoder().attach_frozen(&mut tape);
    let dec = coder.decoder().attach_frozen(&mut tape);
    let tv = tape.constant(batch1(t, "content loss input")?);
    let d = content_distance(&mut tape, &enc, &dec, tv)?;
    Ok(tape.value(d).item())
}

/// Σ over batch rows of `‖f(g(t_i)) − t_i‖₂`.
pub(crate) fn content_distance(tape: &mut Tape, enc: &ParamVars, dec: &ParamVars, t: Var) -> Result<Var> {
    let out = decode_var(tape, dec, t)?;
    content_residual(tape, enc, out, t)
}

pub(crate) fn content_residual(tape: &mut Tape, enc: &ParamVars, decoded: Var, t: Var) -> Result<Var> {
    let fe = encode_var(tape, enc, decoded)?;
    let diff = tape.sub(fe, t)?;
    let shape = tape.value(diff).shape().to_vec();
    let flat = tape.reshape(diff, &[shape[0], shape[1..].iter().product()])?;
    let mut total: Option<Var> = None;
    for i in 0..shape[0] {
        let row = tape.rows(flat, i, 1)?;
        let norm = tape.l2_norm(row)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, norm)?,
            None => norm,
        });
    }
    Ok(total.expect("non-empty batch"))
}

/// Style distance of each interior tile to its row-major predecessor and
/// successor, summed. `tiles` is a K×C×h×w batch.
pub(crate) fn adjacent_distance(tape: &mut Tape, enc: Option<&ParamVars>, tiles: Var) -> Result<Var> {
    let k = tape.value(tiles).shape()[0];
    if k < 3 {
        return Err(Error::invalid(format!(
            "adjacent diversity needs at least 3 tiles, got {k}"
        )));
    }
    let (_, c, h, w) = tape.value(tiles).dims4("adjacent diversity")?;
    let per = c * h * w;
    let flat = tape.reshape(tiles, &[k, per])?;
    let pick = |tape: &mut Tape, start: usize| -> Result<Vec<Var>> {
        let r = tape.rows(flat, start, k - 2)?;
        let r = tape.reshape(r, &[k - 2, c, h, w])?;
        phi_layers(tape, enc, r)
    };
    let mid = pick(tape, 1)?;
    let prev = pick(tape, 0)?;
    let next = pick(tape, 2)?;
    let a = style_distance(tape, &mid, &prev)?;
    let b = style_distance(tape, &mid, &next)?;
    tape.add(a, b)
}

/// `Σ_{k=2}^{K−1} style(z_k, z_{k−1}) + style(z_k, z_{k+1})` over the
/// row-major tile sequence (1-based k).
pub fn adjacent_diversity(tiles: &TileGrid, phi: Phi) -> Result<f64> {
    adjacent_diversity_seq(tiles.tiles(), phi)
}

/// [`adjacent_diversity`] over an arbitrary tile sequence.
pub fn adjacent_diversity_seq(tiles: &[Tensor], phi: Phi) -> Result<f64> {
    if tiles.len() < 3 {
        return Err(Error::invalid(format!(
            "adjacent diversity needs at least 3 tiles, got {}",
            tiles.len()
        )));
    }
    let mut tape = Tape::new();
    let enc = attach_phi(&mut tape, phi);
    let stacked = tape.constant(Tensor::stack(tiles)?);
    let d = adjacent_distance(&mut tape, enc.as_ref(), stacked)?;
    Ok(tape.value(d).item())
}
