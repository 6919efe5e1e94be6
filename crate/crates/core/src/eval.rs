//! Evaluation metrics: accuracy, cue-conflict shape bias, jigsaw accuracy
//! and final-layer attention maps.

use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::jigsaw::{decompose, recompose, shuffle_tiles, PermutationSet};
use crate::model::{predict, ModelSpec};
use crate::rng;
use crate::synth::SampleRecord;
use crate::tensor::Tensor;

/// Forward-pass chunk size used for evaluation.
pub const EVAL_CHUNK: usize = 64;

pub fn stack_images(records: &[SampleRecord]) -> Result<Tensor> {
    Tensor::stack(&records.iter().map(|r| r.image.clone()).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Accuracy {
    pub accuracy: f64,
    /// Per class: `(correct, total)`.
    pub per_class: Vec<(usize, usize)>,
    pub samples: usize,
}

impl Accuracy {
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let (c, n) = self.per_class[class];
        (n > 0).then(|| c as f64 / n as f64)
    }
}

/// Accuracy of `predicted` against `labels` over `classes` classes.
pub fn accuracy(predicted: &[usize], labels: &[usize], classes: usize) -> Result<Accuracy> {
    if predicted.len() != labels.len() {
        return Err(Error::shape("prediction and label counts differ"));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("cannot score an empty split"));
    }
    let mut per_class = vec![(0, 0); classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        let slot = per_class
            .get_mut(y)
            .ok_or_else(|| Error::invalid(format!("label {y} out of range for {classes} classes")))?;
        slot.1 += 1;
        if p == y {
            slot.0 += 1;
        }
    }
    let correct: usize = per_class.iter().map(|c| c.0).sum();
    Ok(Accuracy {
        accuracy: correct as f64 / predicted.len() as f64,
        per_class,
        samples: predicted.len(),
    })
}

fn check_records(spec: &ModelSpec, records: &[SampleRecord]) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.shape_label >= spec.classes) {
        return Err(Error::invalid(format!(
            "record has class {} but the model has {} classes",
            r.shape_label, spec.classes
        )));
    }
    Ok(())
}

/// Argmax class predictions; no diversification or shuffling.
pub fn predict_classes(spec: &ModelSpec, params: &ParamSet, records: &[SampleRecord]) -> Result<Vec<usize>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    Ok(predict(spec, params, &stack_images(records)?, EVAL_CHUNK)?.class_argmax())
}

pub fn evaluate(spec: &ModelSpec, params: &ParamSet, records: &[SampleRecord]) -> Result<Accuracy> {
    check_records(spec, records)?;
    let predicted = predict_classes(spec, params, records)?;
    let labels: Vec<usize> = records.iter().map(|r| r.shape_label).collect();
    accuracy(&predicted, &labels, spec.classes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeBias {
    /// `shape / (shape + texture)` matches; `None` when nothing matched.
    pub score: Option<f64>,
    pub shape_fraction: f64,
    pub texture_fraction: f64,
    pub samples: usize,
}

/// Cue-conflict shape bias from predictions and the two label columns.
pub fn shape_bias(predicted: &[usize], shape_labels: &[usize], texture_labels: &[usize]) -> Result<ShapeBias> {
    let n = predicted.len();
    if shape_labels.len() != n || texture_labels.len() != n {
        return Err(Error::shape("prediction and label counts differ"));
    }
    if n == 0 {
        return Err(Error::invalid("cannot score an empty cue-conflict split"));
    }
    let shape = predicted.iter().zip(shape_labels).filter(|(p, s)| p == s).count();
    let texture = predicted.iter().zip(texture_labels).filter(|(p, t)| p == t).count();
    Ok(ShapeBias {
        score: (shape + texture > 0).then(|| shape as f64 / (shape + texture) as f64),
        shape_fraction: shape as f64 / n as f64,
        texture_fraction: texture as f64 / n as f64,
        samples: n,
    })
}

pub fn shape_bias_score(spec: &ModelSpec, params: &ParamSet, records: &[SampleRecord]) -> Result<ShapeBias> {
    check_records(spec, records)?;
    let texture: Vec<usize> = records
        .iter()
        .map(|r| {
            r.texture_label
                .ok_or_else(|| Error::invalid("cue-conflict record without a texture label"))
        })
        .collect::<Result<_>>()?;
    let predicted = predict_classes(spec, params, records)?;
    let shape: Vec<usize> = records.iter().map(|r| r.shape_label).collect();
    shape_bias(&predicted, &shape, &texture)
}

/// Shuffles every image by a permutation index drawn uniformly from the
/// whole set (identity included), keyed by `(seed, position)`.
pub fn shuffled_copies(records: &[SampleRecord], permset: &PermutationSet, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    let mut images = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let p = rng::stream(seed, "jigsaw-eval", &[i as u64]).gen_range(0..permset.len());
        let tiles = decompose(&r.image, permset.grid_n())?;
        images.push(recompose(&shuffle_tiles(&tiles, permset.get(p))?)?);
        labels.push(p);
    }
    Ok((Tensor::stack(&images)?, labels))
}

/// Permutation-index accuracy on freshly shuffled copies of `records`.
pub fn jigsaw_accuracy(
    spec: &ModelSpec,
    params: &ParamSet,
    permset: &PermutationSet,
    records: &[SampleRecord],
    seed: u64,
) -> Result<f64> {
    if permset.len() != spec.permutations {
        return Err(Error::invalid(format!(
            "permutation set has {} permutations but the model predicts {}",
            permset.len(),
            spec.permutations
        )));
    }
    let (images, labels) = shuffled_copies(records, permset, seed)?;
    let predicted = predict(spec, params, &images, EVAL_CHUNK)?.jigsaw_argmax();
    Ok(accuracy(&predicted, &labels, permset.len())?.accuracy)
}

/// Per-cell L2 magnitude across channels of the final conv activation,
/// scaled so the largest cell is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub side: usize,
    pub values: Vec<f64>,
    /// Every cell is zero; `values` are left unscaled.
    pub all_zero: bool,
}

impl AttentionMap {
    pub fn from_activation(act: &Tensor) -> Result<Self> {
        let (c, h, w) = act.dims3("attention")?;
        if h != w {
            return Err(Error::shape(format!("attention expects square maps, got {h}×{w}")));
        }
        let hw = h * w;
        let mut values: Vec<f64> = (0..hw)
            .map(|i| (0..c).map(|k| act.data()[k * hw + i].powi(2)).sum::<f64>().sqrt())
            .collect();
        let max = values.iter().cloned().fold(0.0, f64::max);
        let all_zero = max == 0.0;
        if !all_zero {
            values.iter_mut().for_each(|v| *v /= max);
        }
        Ok(AttentionMap {
            side: h,
            values,
            all_zero,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.side) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    /// Mean map value over cells whose footprint is mostly inside / outside
    /// the object mask (1×H×W), or `None` if either side is empty.
    pub fn inside_outside(&self, mask: &Tensor) -> Result<Option<(f64, f64)>> {
        let (_, h, w) = mask.dims3("mask")?;
        if h % self.side != 0 || w % self.side != 0 {
            return Err(Error::shape("mask size is not a multiple of the map size"));
        }
        let (ch, cw) = (h / self.side, w / self.side);
        let (mut inside, mut outside) = (Vec::new(), Vec::new());
        for i in 0..self.side {
            for j in 0..self.side {
                let mut covered = 0.0;
                for y in i * ch..(i + 1) * ch {
                    for x in j * cw..(j + 1) * cw {
                        covered += mask.data()[y * w + x];
                    }
                }
                let v = self.values[i * self.side + j];
                if covered / (ch * cw) as f64 > 0.5 {
                    inside.push(v);
                } else {
                    outside.push(v);
                }
            }
        }
        if inside.is_empty() || outside.is_empty() {
            return Ok(None);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Some((mean(&inside), mean(&outside))))
    }
}

pub fn attention_maps(spec: &ModelSpec, params: &ParamSet, images: &Tensor) -> Result<Vec<AttentionMap>> {
    let p = predict(spec, params, images, EVAL_CHUNK)?;
    let n = p.final_conv.shape()[0];
    (0..n)
        .map(|i| AttentionMap::from_activation(&p.final_conv.index0(i)?))
        .collect()
}
