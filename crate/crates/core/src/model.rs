//! Shared convolutional feature extractor with a class head and a jigsaw
//! head, plus the loss assembly for joint training.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamSet, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub image_size: usize,
    /// Output channels of each conv block (3×3 conv, ReLU, 2×2 max-pool).
    pub conv_widths: Vec<usize>,
    pub classes: usize,
    pub permutations: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            in_channels: 3,
            image_size: 48,
            conv_widths: vec![16, 32, 64],
            classes: 6,
            permutations: 30,
        }
    }
}

const KERNEL: usize = 3;
const POOL: usize = 2;

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
            return Err(Error::config("conv_widths must be non-empty and positive"));
        }
        if self.in_channels == 0 || self.classes == 0 || self.permutations == 0 {
            return Err(Error::config("channels, classes and permutations must be positive"));
        }
        let div = POOL.pow(self.conv_widths.len() as u32);
        if self.image_size == 0 || self.image_size % div != 0 {
            return Err(Error::config(format!(
                "image size {} must be a positive multiple of {div} for {} pooling stages",
                self.image_size,
                self.conv_widths.len()
            )));
        }
        Ok(())
    }

    /// Spatial side of the final conv block's output.
    pub fn final_side(&self) -> usize {
        self.image_size / POOL.pow(self.conv_widths.len() as u32)
    }

    pub fn feature_dim(&self) -> usize {
        self.conv_widths.last().copied().unwrap_or(0) * self.final_side().pow(2)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.image_size, self.image_size]
    }
}

/// Builds a freshly initialised parameter set: fan-in scaled uniform
/// weights (He gain for the ReLU convs), zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = rng::stream(seed, "init", &[]);
    let mut ps = ParamSet::new();
    let mut in_c = spec.in_channels;
    let he = 6f64.sqrt();
    for (i, &out_c) in spec.conv_widths.iter().enumerate() {
        let fan_in = in_c * KERNEL * KERNEL;
        ps.insert_uniform(
            &format!("f.conv{i}.w"),
            ParamGroup::Features,
            &[out_c, in_c, KERNEL, KERNEL],
            fan_in,
            he,
            &mut rng,
        )?;
        ps.insert(&format!("f.conv{i}.b"), ParamGroup::Features, Tensor::zeros(&[out_c]))?;
        in_c = out_c;
    }
    let d = spec.feature_dim();
    ps.insert_uniform("c.w", ParamGroup::Classifier, &[d, spec.classes], d, 1.0, &mut rng)?;
    ps.insert("c.b", ParamGroup::Classifier, Tensor::zeros(&[spec.classes]))?;
    ps.insert_uniform("j.w", ParamGroup::Jigsaw, &[d, spec.permutations], d, 1.0, &mut rng)?;
    ps.insert("j.b", ParamGroup::Jigsaw, Tensor::zeros(&[spec.permutations]))?;
    Ok(ps)
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Output of the last conv block, N×C×s×s.
    pub final_conv: Var,
    pub features: Var,
    pub class_logits: Var,
    pub jigsaw_logits: Var,
}

pub fn forward(spec: &ModelSpec, tape: &mut Tape, vars: &ParamVars, images: Var) -> Result<ForwardOutput> {
    let (n, c, h, w) = tape.value(images).dims4("model input")?;
    if [c, h, w] != spec.input_shape() {
        return Err(Error::shape(format!(
            "model expects images of shape {:?}, got {:?}",
            spec.input_shape(),
            [c, h, w]
        )));
    }
    let mut x = images;
    for i in 0..spec.conv_widths.len() {
        let conv = tape.conv2d(x, vars.get(&format!("f.conv{i}.w"))?, 1, KERNEL / 2)?;
        let biased = tape.channel_bias(conv, vars.get(&format!("f.conv{i}.b"))?)?;
        let act = tape.relu(biased);
        x = tape.maxpool2d(act, POOL, POOL)?;
    }
    let final_conv = x;
    let features = tape.reshape(x, &[n, spec.feature_dim()])?;
    let class_logits = tape.dense(features, vars.get("c.w")?, vars.get("c.b")?)?;
    let jigsaw_logits = tape.dense(features, vars.get("j.w")?, vars.get("j.b")?)?;
    Ok(ForwardOutput {
        final_conv,
        features,
        class_logits,
        jigsaw_logits,
    })
}

/// Mean cross-entropy of the class head over the first `labels.len()` rows.
pub fn class_loss(tape: &mut Tape, class_logits: Var, labels: &[usize]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::invalid("class loss needs at least one ordered item"));
    }
    let (n, _) = tape.value(class_logits).dims2("class logits")?;
    let logits = if labels.len() == n {
        class_logits
    } else {
        tape.rows(class_logits, 0, labels.len())?
    };
    tape.softmax_cross_entropy(logits, labels)
}

pub fn jigsaw_loss(tape: &mut Tape, jigsaw_logits: Var, perm_labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(jigsaw_logits, perm_labels)
}

/// A training batch. Ordered images come first and carry class labels;
/// every image carries a permutation label (0 for ordered ones).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItems {
    pub images: Tensor,
    pub class_labels: Vec<usize>,
    pub perm_labels: Vec<usize>,
}

impl BatchItems {
    pub fn len(&self) -> usize {
        self.perm_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm_labels.is_empty()
    }

    pub fn ordered_count(&self) -> usize {
        self.class_labels.len()
    }

    pub fn shuffled_count(&self) -> usize {
        self.len() - self.ordered_count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub total: Var,
    pub class: f64,
    pub jigsaw: f64,
}

/// `class_loss(ordered) + alpha * jigsaw_loss(all)`.
pub fn joint_loss(tape: &mut Tape, out: &ForwardOutput, batch: &BatchItems, alpha: f64) -> Result<JointLoss> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be non-negative, got {alpha}")));
    }
    if batch.ordered_count() == 0 {
        return Err(Error::invalid("batch has no ordered items for the class loss"));
    }
    if batch.perm_labels[..batch.ordered_count()].iter().any(|&p| p != 0) {
        return Err(Error::invalid("ordered items must carry permutation label 0"));
    }
    let lc = class_loss(tape, out.class_logits, &batch.class_labels)?;
    let lj = jigsaw_loss(tape, out.jigsaw_logits, &batch.perm_labels)?;
    let weighted = tape.scale(lj, alpha)?;
    let total = tape.add(lc, weighted)?;
    Ok(JointLoss {
        total,
        class: tape.value(lc).item(),
        jigsaw: tape.value(lj).item(),
    })
}

/// Inference-only outputs for a batch of images.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub class_logits: Tensor,
    pub jigsaw_logits: Tensor,
    pub final_conv: Tensor,
}

impl Predictions {
    pub fn class_argmax(&self) -> Vec<usize> {
        argmax_rows(&self.class_logits)
    }

    pub fn jigsaw_argmax(&self) -> Vec<usize> {
        argmax_rows(&self.jigsaw_logits)
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(m: &Tensor) -> Vec<usize> {
    let cols = *m.shape().last().unwrap_or(&1);
    m.data()
        .chunks_exact(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect()
}

/// Runs the network without gradients over `images` (N×C×H×W) in chunks.
pub fn predict(spec: &ModelSpec, params: &ParamSet, images: &Tensor, chunk: usize) -> Result<Predictions> {
    let (n, c, h, w) = images.dims4("predict")?;
    let per = c * h * w;
    let chunk = chunk.max(1);
    let mut class = Vec::with_capacity(n * spec.classes);
    let mut jig = Vec::with_capacity(n * spec.permutations);
    let mut conv = Vec::new();
    let mut conv_shape = Vec::new();
    for start in (0..n).step_by(chunk) {
        let len = chunk.min(n - start);
        let slice = Tensor::new(
            vec![len, c, h, w],
            images.data()[start * per..(start + len) * per].to_vec(),
        )?;
        let mut tape = Tape::new();
        let vars = params.attach_frozen(&mut tape);
        let x = tape.constant(slice);
        let out = forward(spec, &mut tape, &vars, x)?;
        class.extend_from_slice(tape.value(out.class_logits).data());
        jig.extend_from_slice(tape.value(out.jigsaw_logits).data());
        conv.extend_from_slice(tape.value(out.final_conv).data());
        conv_shape = tape.value(out.final_conv).shape()[1..].to_vec();
    }
    let mut fshape = vec![n];
    fshape.extend(conv_shape);
    Ok(Predictions {
        class_logits: Tensor::new(vec![n, spec.classes], class)?,
        jigsaw_logits: Tensor::new(vec![n, spec.permutations], jig)?,
        final_conv: Tensor::new(fshape, conv)?,
    })
}
