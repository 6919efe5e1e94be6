use rand::Rng;

use crate::diversify::{diversify_batch, CoderPair, Decision, DiversifierConfig, DomainPool};
use crate::error::{Error, Result};
use crate::jigsaw::{decompose, recompose, shuffle_tiles, PermutationSet};
use crate::model::BatchItems;
use crate::rng;
use crate::synth::SampleRecord;
use crate::tensor::Tensor;

use super::config::ordered_count;

/// Where a batch sits in the run; keys every random draw it makes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchKey {
    pub seed: u64,
    pub epoch: usize,
    /// Position of the batch's first record in the epoch order.
    pub first_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedBatch {
    pub items: BatchItems,
    /// One per shuffled item.
    pub decisions: Vec<Decision>,
}

impl ComposedBatch {
    pub fn diversified(&self) -> usize {
        self.decisions.iter().filter(|d| d.hit).count()
    }
}

/// Splits `records` into `round(beta·n)` ordered images (kept as they are,
/// permutation label 0) followed by shuffled ones: each gets a uniformly
/// drawn non-identity permutation, and its tiles go through the diversifier.
#[allow(clippy::too_many_arguments)]
pub fn compose_batch(
    records: &[&SampleRecord],
    permset: &PermutationSet,
    beta: f64,
    diversifier: &DiversifierConfig,
    pool: &DomainPool,
    coder: Option<&CoderPair>,
    key: BatchKey,
) -> Result<ComposedBatch> {
    if records.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = records.len();
    let n_ord = ordered_count(beta, n);
    if n_ord == 0 {
        return Err(Error::invalid(format!(
            "beta {beta} leaves no ordered images in a batch of {n}"
        )));
    }
    if permset.len() < 2 && n_ord < n {
        return Err(Error::invalid(
            "shuffled images need at least one non-identity permutation",
        ));
    }
    let mut images: Vec<Tensor> = records[..n_ord].iter().map(|r| r.image.clone()).collect();
    let mut perm_labels = vec![0; n_ord];
    let mut grids = Vec::with_capacity(n - n_ord);
    for (i, r) in records[n_ord..].iter().enumerate() {
        let index = (key.first_index + n_ord + i) as u64;
        let p = rng::stream(key.seed, "permutation", &[key.epoch as u64, index]).gen_range(1..permset.len());
        grids.push(shuffle_tiles(&decompose(&r.image, permset.grid_n())?, permset.get(p))?);
        perm_labels.push(p);
    }
    let (grids, decisions) = if grids.is_empty() {
        (grids, Vec::new())
    } else {
        let dseed = rng::derive_seed(key.seed, "diversify-epoch", &[key.epoch as u64]);
        diversify_batch(
            &grids,
            diversifier,
            pool,
            coder,
            dseed,
            (key.first_index + n_ord) as u64,
        )?
    };
    for g in &grids {
        images.push(recompose(g)?);
    }
    Ok(ComposedBatch {
        items: BatchItems {
            images: Tensor::stack(&images)?,
            class_labels: records[..n_ord].iter().map(|r| r.shape_label).collect(),
            perm_labels,
        },
        decisions,
    })
}
