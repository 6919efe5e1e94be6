use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

use crate::autodiff::{sgd_step, OptState, ParamSet, Tape};
use crate::diversify::{CoderPair, DomainPool};
use crate::error::{Error, Result};
use crate::eval::{evaluate, jigsaw_accuracy, shape_bias_score, ShapeBias};
use crate::jigsaw::PermutationSet;
use crate::model::{forward, init_params, joint_loss, JointLoss, ModelSpec};
use crate::rng;
use crate::synth::{self, SampleRecord};

use super::batch::{compose_batch, BatchKey, ComposedBatch};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::metrics::{metrics_csv, MetricsRow};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "train.cfg";

/// Everything a run reads besides its config.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub classes: usize,
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub target: Vec<SampleRecord>,
    pub cue_conflict: Vec<SampleRecord>,
    pub pool: DomainPool,
    pub permset: PermutationSet,
    pub coder: Option<CoderPair>,
}

impl TrainData {
    /// Loads the dataset, pool, permutation set and (if configured) coder
    /// named by `cfg`.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        cfg.check_paths()?;
        let (synth_cfg, _) = synth::read_config(&cfg.dataset)?;
        let split = synth::read_dataset(&cfg.dataset)?;
        let data = TrainData {
            classes: synth_cfg.classes,
            train: split.train,
            val: split.val,
            target: split.target,
            cue_conflict: split.cue_conflict,
            pool: DomainPool::load(&cfg.pool_dir())?,
            permset: PermutationSet::load(&cfg.permset)?,
            coder: cfg.coder.as_deref().map(CoderPair::load).transpose()?,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() || self.target.is_empty() {
            return Err(Error::invalid("train, validation and target splits must be non-empty"));
        }
        let shape = self.train[0].image.shape().to_vec();
        let all = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.target)
            .chain(&self.cue_conflict);
        for r in all {
            if r.image.shape() != shape.as_slice() {
                return Err(Error::shape("records have differing image shapes"));
            }
            if r.shape_label >= self.classes {
                return Err(Error::invalid(format!("label {} out of range", r.shape_label)));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self, cfg: &TrainConfig) -> ModelSpec {
        let s = self.train[0].image.shape();
        ModelSpec {
            in_channels: s[0],
            image_size: s[1],
            conv_widths: cfg.conv_widths.clone(),
            classes: self.classes,
            permutations: self.permset.len(),
        }
    }
}

/// What a step observer sees, after backward and before the update.
pub struct StepView<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub composed: &'a ComposedBatch,
    pub loss: &'a JointLoss,
    /// Gradients are populated.
    pub params: &'a ParamSet,
}

pub struct Trainer<'d> {
    cfg: TrainConfig,
    data: &'d TrainData,
    spec: ModelSpec,
    params: ParamSet,
    opt: OptState,
    epoch: usize,
    metrics: Vec<MetricsRow>,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: &TrainConfig, data: &'d TrainData) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let spec = data.model_spec(cfg);
        Ok(Trainer {
            params: init_params(&spec, cfg.seed)?,
            opt: OptState::new(cfg.lr, cfg.momentum, cfg.weight_decay)?,
            cfg: cfg.clone(),
            data,
            spec,
            epoch: 0,
            metrics: Vec::new(),
        })
    }

    pub fn resume(cfg: &TrainConfig, data: &'d TrainData, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cfg, data)?;
        if ckpt.spec != t.spec {
            return Err(Error::invalid(
                "checkpoint model spec does not match the config and dataset",
            ));
        }
        if ckpt.seed != cfg.seed {
            return Err(Error::invalid(format!(
                "checkpoint was trained with seed {}, config has {}",
                ckpt.seed, cfg.seed
            )));
        }
        if ckpt.epoch > cfg.epochs {
            return Err(Error::invalid("checkpoint is past the configured epoch count"));
        }
        t.params = ckpt.params;
        t.opt = ckpt.opt;
        t.epoch = ckpt.epoch;
        t.metrics = ckpt.metrics;
        Ok(t)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            epoch: self.epoch,
            seed: self.cfg.seed,
            config: self.cfg.to_text(),
            params: self.params.clone(),
            opt: self.opt.clone(),
            metrics: self.metrics.clone(),
        }
    }

    /// Trains one epoch, evaluates, and returns the new metrics row.
    pub fn run_epoch(&mut self, observer: &mut dyn FnMut(&StepView)) -> Result<MetricsRow> {
        let epoch = self.epoch;
        let cfg = &self.cfg;
        let data = self.data;
        let diversifier = cfg.diversifier_at(epoch);
        self.opt.lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "batch-order", &[epoch as u64]));

        let (mut class_sum, mut jigsaw_sum) = (0.0, 0.0);
        let (mut shuffled, mut diversified) = (0, 0);
        let batches = order.chunks(cfg.batch_size).enumerate();
        let n_batches = batches.len();
        for (b, idx) in batches {
            let records: Vec<&SampleRecord> = idx.iter().map(|&i| &data.train[i]).collect();
            let key = BatchKey {
                seed: cfg.seed,
                epoch,
                first_index: b * cfg.batch_size,
            };
            let composed = compose_batch(
                &records,
                &data.permset,
                cfg.beta,
                &diversifier,
                &data.pool,
                data.coder.as_ref(),
                key,
            )?;
            shuffled += composed.items.shuffled_count();
            diversified += composed.diversified();

            let diverged = Error::Diverged { epoch, batch: b };
            let mut tape = Tape::new();
            let vars = self.params.attach(&mut tape);
            let x = tape.constant(composed.items.images.clone());
            let loss = match forward(&self.spec, &mut tape, &vars, x)
                .and_then(|out| joint_loss(&mut tape, &out, &composed.items, cfg.alpha))
            {
                Ok(l) if l.class.is_finite() && l.jigsaw.is_finite() => l,
                Ok(_) | Err(Error::NonFinite { .. }) => return Err(diverged),
                Err(e) => return Err(e),
            };
            let grads = match tape.backward(loss.total) {
                Ok(g) => g,
                Err(Error::NonFinite { .. }) => return Err(diverged),
                Err(e) => return Err(e),
            };
            drop(tape);
            self.params.accumulate_grads(&grads, &vars)?;
            observer(&StepView {
                epoch,
                batch: b,
                composed: &composed,
                loss: &loss,
                params: &self.params,
            });
            match sgd_step(&mut self.params, &mut self.opt) {
                Err(Error::NonFinite { .. }) => return Err(diverged),
                other => other?,
            }
            self.params.zero_grads();
            class_sum += loss.class;
            jigsaw_sum += loss.jigsaw;
        }

        let jigsaw_seed = rng::derive_seed(cfg.seed, "jigsaw-eval-set", &[]);
        let bias = if data.cue_conflict.is_empty() {
            ShapeBias {
                score: None,
                shape_fraction: 0.0,
                texture_fraction: 0.0,
                samples: 0,
            }
        } else {
            shape_bias_score(&self.spec, &self.params, &data.cue_conflict)?
        };
        let row = MetricsRow {
            epoch: epoch + 1,
            class_loss: class_sum / n_batches as f64,
            jigsaw_loss: jigsaw_sum / n_batches as f64,
            val_accuracy: evaluate(&self.spec, &self.params, &data.val)?.accuracy,
            target_accuracy: evaluate(&self.spec, &self.params, &data.target)?.accuracy,
            jigsaw_accuracy: jigsaw_accuracy(&self.spec, &self.params, &data.permset, &data.val, jigsaw_seed)?,
            shape_bias: bias.score,
            shape_fraction: bias.shape_fraction,
            texture_fraction: bias.texture_fraction,
            lr: self.opt.lr,
            rho: diversifier.rho,
            shuffled,
            diversified,
        };
        self.metrics.push(row.clone());
        self.epoch += 1;
        Ok(row)
    }
}

/// Outcome of [`train`].
pub struct TrainOutcome {
    pub spec: ModelSpec,
    pub params: ParamSet,
    pub metrics: Vec<MetricsRow>,
}

/// Runs (or continues, from `resume`) training to `cfg.epochs`. With `out`,
/// rewrites `metrics.csv`, appends to `timing.csv` and overwrites the
/// checkpoint after every epoch.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainData,
    out: Option<&Path>,
    resume: Option<Checkpoint>,
    on_epoch: &mut dyn FnMut(&MetricsRow, Duration),
) -> Result<TrainOutcome> {
    let mut trainer = match resume {
        Some(c) => Trainer::resume(cfg, data, c)?,
        None => Trainer::new(cfg, data)?,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join(CONFIG_FILE), &cfg.to_text())?;
        let timing = dir.join(TIMING_FILE);
        let mut lines = vec!["epoch,seconds".to_string()];
        if trainer.epoch() > 0 {
            if let Ok(old) = fs::read_to_string(&timing) {
                lines.extend(old.lines().skip(1).take(trainer.epoch()).map(str::to_string));
            }
        }
        write(&timing, &(lines.join("\n") + "\n"))?;
        write(&dir.join(METRICS_FILE), &metrics_csv(trainer.metrics()))?;
    }
    while !trainer.is_done() {
        let start = Instant::now();
        let row = trainer.run_epoch(&mut |_| {})?;
        let elapsed = start.elapsed();
        if let Some(dir) = out {
            write(&dir.join(METRICS_FILE), &metrics_csv(trainer.metrics()))?;
            let timing = dir.join(TIMING_FILE);
            let mut f = OpenOptions::new()
                .append(true)
                .open(&timing)
                .map_err(|e| Error::io(&timing, e))?;
            writeln!(f, "{},{:.3}", row.epoch, elapsed.as_secs_f64()).map_err(|e| Error::io(&timing, e))?;
            trainer.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        }
        on_epoch(&row, elapsed);
    }
    Ok(TrainOutcome {
        spec: trainer.spec().clone(),
        params: trainer.params().clone(),
        metrics: trainer.metrics().to_vec(),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
