use std::path::{Path, PathBuf};

use crate::config::{self, KeyValues};
use crate::diversify::{DiversifierConfig, Mode};
use crate::error::{Error, Result};

/// How ρ and the γ range evolve over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiversitySchedule {
    Constant,
    /// Linear from the configured values at the first epoch to
    /// `rho_end` / `gamma_end` at the last.
    Linear,
}

impl std::str::FromStr for DiversitySchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::config(format!(
                "diversity_schedule must be `constant` or `linear`, got {s:?}"
            ))),
        }
    }
}

impl DiversitySchedule {
    fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the jigsaw loss.
    pub alpha: f64,
    /// Fraction of each batch left ordered.
    pub beta: f64,
    pub diversifier: DiversifierConfig,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub permset: PathBuf,
    pub dataset: PathBuf,
    /// Defaults to `<dataset>/pool`.
    pub pool: Option<PathBuf>,
    /// Trained coder, required in learned mode.
    pub coder: Option<PathBuf>,
    pub conv_widths: Vec<usize>,
    /// Multiply the learning rate by `lr_decay` every `lr_step` epochs; 0 disables.
    pub lr_step: usize,
    pub lr_decay: f64,
    pub diversity_schedule: DiversitySchedule,
    pub rho_end: f64,
    pub gamma_end: f64,
}

impl TrainConfig {
    /// Defaults for everything except the two required paths.
    pub fn with_paths(permset: impl Into<PathBuf>, dataset: impl Into<PathBuf>) -> Self {
        TrainConfig {
            alpha: 0.7,
            // β is the ordered fraction of the batch.
            beta: 0.6,
            diversifier: DiversifierConfig::default(),
            batch_size: 128,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 5e-5,
            epochs: 30,
            seed: 0,
            permset: permset.into(),
            dataset: dataset.into(),
            pool: None,
            coder: None,
            conv_widths: vec![16, 32, 64],
            lr_step: 0,
            lr_decay: 0.1,
            diversity_schedule: DiversitySchedule::Constant,
            rho_end: 0.0,
            gamma_end: 0.0,
        }
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut kv = KeyValues::load(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.permset);
        fix(&mut self.dataset);
        if let Some(p) = self.pool.as_mut() {
            fix(p);
        }
        if let Some(p) = self.coder.as_mut() {
            fix(p);
        }
    }

    /// Claims the trainer's keys from `kv`; unknown keys are left in place.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let permset: PathBuf = kv.require("permset")?;
        let dataset: PathBuf = kv.require("dataset")?;
        let d = Self::with_paths(permset, dataset);
        let dv = &d.diversifier;
        let cfg = TrainConfig {
            alpha: kv.take_or("alpha", d.alpha)?,
            beta: kv.take_or("beta", d.beta)?,
            diversifier: DiversifierConfig {
                rho: kv.take_or("rho", dv.rho)?,
                gamma_min: kv.take_or("gamma_min", dv.gamma_min)?,
                gamma_max: kv.take_or("gamma_max", dv.gamma_max)?,
                mode: kv.take_or::<Mode>("mode", dv.mode)?,
                epsilon: kv.take_or("epsilon", dv.epsilon)?,
            },
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            lr: kv.take_or("lr", d.lr)?,
            momentum: kv.take_or("momentum", d.momentum)?,
            weight_decay: kv.take_or("weight_decay", d.weight_decay)?,
            epochs: kv.take_or("epochs", d.epochs)?,
            seed: kv.take_or("seed", d.seed)?,
            pool: kv.take("pool")?,
            coder: kv.take("coder")?,
            conv_widths: kv.take_list("conv_widths")?.unwrap_or(d.conv_widths.clone()),
            lr_step: kv.take_or("lr_step", d.lr_step)?,
            lr_decay: kv.take_or("lr_decay", d.lr_decay)?,
            diversity_schedule: kv.take_or("diversity_schedule", d.diversity_schedule)?,
            rho_end: kv.take_or("rho_end", d.rho_end)?,
            gamma_end: kv.take_or("gamma_end", d.gamma_end)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let v = &self.diversifier;
        let mut pairs = vec![
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("rho", v.rho.to_string()),
            ("gamma_min", v.gamma_min.to_string()),
            ("gamma_max", v.gamma_max.to_string()),
            (
                "mode",
                match v.mode {
                    Mode::Pixel => "pixel".into(),
                    Mode::Learned => "learned".into(),
                },
            ),
            ("epsilon", v.epsilon.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("permset", self.permset.display().to_string()),
            ("dataset", self.dataset.display().to_string()),
        ];
        if let Some(p) = &self.pool {
            pairs.push(("pool", p.display().to_string()));
        }
        if let Some(p) = &self.coder {
            pairs.push(("coder", p.display().to_string()));
        }
        let widths: Vec<String> = self.conv_widths.iter().map(|w| w.to_string()).collect();
        pairs.extend([
            ("conv_widths", widths.join(",")),
            ("lr_step", self.lr_step.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("diversity_schedule", self.diversity_schedule.name().to_string()),
            ("rho_end", self.rho_end.to_string()),
            ("gamma_end", self.gamma_end.to_string()),
        ]);
        config::render(&pairs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be positive"));
        }
        if ordered_count(self.beta, self.batch_size) == 0 {
            return Err(Error::config(format!(
                "beta {} leaves no ordered images in a batch of {}",
                self.beta, self.batch_size
            )));
        }
        self.diversifier.validate()?;
        if self.diversity_schedule == DiversitySchedule::Linear
            && (!(0.0..=1.0).contains(&self.rho_end) || !(0.0..=1.0).contains(&self.gamma_end))
        {
            return Err(Error::config("rho_end and gamma_end must lie in [0, 1]"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::config("lr_decay must be positive"));
        }
        if self.conv_widths.is_empty() {
            return Err(Error::config("conv_widths must not be empty"));
        }
        if self.diversifier.mode == Mode::Learned && self.coder.is_none() {
            return Err(Error::config(
                "learned mode needs a `coder` path (see the diversify subcommand)",
            ));
        }
        crate::autodiff::OptState::new(self.lr, self.momentum, self.weight_decay)?;
        Ok(())
    }

    /// Checks that every referenced file exists.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths = vec![("permset", self.permset.clone()), ("dataset", self.dataset.clone())];
        paths.push(("pool", self.pool_dir()));
        if let Some(c) = &self.coder {
            paths.push(("coder", c.clone()));
        }
        for (key, p) in paths {
            if !p.exists() {
                return Err(Error::config(format!("`{key}` path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn pool_dir(&self) -> PathBuf {
        self.pool
            .clone()
            .unwrap_or_else(|| self.dataset.join(crate::synth::POOL_DIR))
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.lr_step) {
            None => self.lr,
            Some(steps) => self.lr * self.lr_decay.powi(steps as i32),
        }
    }

    /// Diversifier settings in effect during `epoch` (0-based).
    pub fn diversifier_at(&self, epoch: usize) -> DiversifierConfig {
        let mut d = self.diversifier.clone();
        if self.diversity_schedule == DiversitySchedule::Linear && self.epochs > 1 {
            let t = epoch as f64 / (self.epochs - 1) as f64;
            let lerp = |a: f64, b: f64| a + (b - a) * t;
            d.rho = lerp(d.rho, self.rho_end);
            d.gamma_min = lerp(d.gamma_min, self.gamma_end);
            d.gamma_max = lerp(d.gamma_max, self.gamma_end);
            if d.gamma_min > d.gamma_max {
                std::mem::swap(&mut d.gamma_min, &mut d.gamma_max);
            }
        }
        d
    }
}

/// Ordered images in a batch of `n`: `round(beta * n)`.
pub fn ordered_count(beta: f64, n: usize) -> usize {
    (beta * n as f64).round() as usize
}
