use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{self, KeyValues};
use crate::diversify::DomainPool;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

use super::shapes::ShapeClass;
use super::texture::{hsv, Texture, TextureDomain};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// 3×H×W, values in [0, 1].
    pub image: Tensor,
    /// Object mask, 1×H×W of 0/1.
    pub mask: Tensor,
    pub shape_label: usize,
    pub domain_id: usize,
    /// Signature texture of the object (cue-conflict records only).
    pub texture_label: Option<usize>,
    pub seed: u64,
}

/// Fills `shape`'s mask with `fg` over `bg`. Identical textures would make
/// the object invisible and are rejected.
pub fn render_sample(
    shape: &ShapeClass,
    fg: &Texture,
    bg: &Texture,
    domain_id: usize,
    size: usize,
    seed: u64,
) -> Result<SampleRecord> {
    if fg == bg {
        return Err(Error::invalid(
            "degenerate sample: foreground and background textures are identical",
        ));
    }
    let mut rng = rng::stream(seed, "placement", &[]);
    let mask = shape.rasterize(size, &mut rng);
    let (f, b) = (fg.render(size), bg.render(size));
    let hw = size * size;
    let data = (0..3 * hw).map(|i| if mask[i % hw] { f[i] } else { b[i] }).collect();
    Ok(SampleRecord {
        image: Tensor::new(vec![3, size, size], data)?,
        mask: Tensor::new(
            vec![1, size, size],
            mask.iter().map(|&m| f64::from(u8::from(m))).collect(),
        )?,
        shape_label: shape.id,
        domain_id,
        texture_label: None,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    pub classes: usize,
    /// Records per class per domain.
    pub n_per_class: usize,
    pub source_domains: Vec<usize>,
    pub target_domain: usize,
    pub val_fraction: f64,
    /// Probability that a source-domain object wears its class's signature
    /// colour rather than another class's.
    pub texture_correlation: f64,
    pub cue_conflict: usize,
    /// Max cue-conflict records per (shape, texture) pair.
    pub jitter_budget: usize,
    pub pool_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 48,
            classes: 6,
            n_per_class: 100,
            source_domains: vec![0, 1],
            target_domain: 4,
            val_fraction: 0.1,
            texture_correlation: 0.9,
            cue_conflict: 300,
            jitter_budget: 200,
            pool_size: 64,
        }
    }
}

impl SynthConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            image_size: kv.take_or("image_size", d.image_size)?,
            classes: kv.take_or("classes", d.classes)?,
            n_per_class: kv.take_or("n_per_class", d.n_per_class)?,
            source_domains: kv.take_list("source_domains")?.unwrap_or(d.source_domains),
            target_domain: kv.take_or("target_domain", d.target_domain)?,
            val_fraction: kv.take_or("val_fraction", d.val_fraction)?,
            texture_correlation: kv.take_or("texture_correlation", d.texture_correlation)?,
            cue_conflict: kv.take_or("cue_conflict", d.cue_conflict)?,
            jitter_budget: kv.take_or("jitter_budget", d.jitter_budget)?,
            pool_size: kv.take_or("pool_size", d.pool_size)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let list: Vec<String> = self.source_domains.iter().map(|d| d.to_string()).collect();
        config::render(&[
            ("image_size", self.image_size.to_string()),
            ("classes", self.classes.to_string()),
            ("n_per_class", self.n_per_class.to_string()),
            ("source_domains", list.join(",")),
            ("target_domain", self.target_domain.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("texture_correlation", self.texture_correlation.to_string()),
            ("cue_conflict", self.cue_conflict.to_string()),
            ("jitter_budget", self.jitter_budget.to_string()),
            ("pool_size", self.pool_size.to_string()),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        ShapeClass::catalog(self.classes)?;
        let n_domains = TextureDomain::catalog().len();
        if self.image_size < 8 {
            return Err(Error::config("image_size must be at least 8"));
        }
        if self.source_domains.is_empty() {
            return Err(Error::config("source_domains must not be empty"));
        }
        if let Some(&bad) = self
            .source_domains
            .iter()
            .chain([&self.target_domain])
            .find(|&&d| d >= n_domains)
        {
            return Err(Error::config(format!("domain {bad} does not exist (have {n_domains})")));
        }
        if self.source_domains.contains(&self.target_domain) {
            return Err(Error::config(format!(
                "target domain {} is also a source domain",
                self.target_domain
            )));
        }
        let mut seen = self.source_domains.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.source_domains.len() {
            return Err(Error::config("source_domains contains duplicates"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.texture_correlation) {
            return Err(Error::config("texture_correlation must lie in [0, 1]"));
        }
        if self.n_per_class == 0 || self.pool_size == 0 {
            return Err(Error::config("n_per_class and pool_size must be positive"));
        }
        Ok(())
    }
}

/// The object colour associated with class `class`: hue evenly spaced
/// around the wheel, with a little jitter.
pub fn signature_color<R: Rng>(class: usize, classes: usize, rng: &mut R) -> [f64; 3] {
    let hue = class as f64 / classes as f64 + rng.gen_range(-0.025..=0.025);
    hsv(hue, rng.gen_range(0.75..=1.0), rng.gen_range(0.8..=1.0))
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    hsv(rng.gen(), rng.gen_range(0.75..=1.0), rng.gen_range(0.8..=1.0))
}

#[derive(Debug, Clone, Copy)]
enum Split {
    Source = 0,
    Target = 1,
    CueConflict = 2,
}

fn record_seed(seed: u64, split: Split, a: usize, b: usize, k: usize) -> u64 {
    rng::derive_seed(seed, "record", &[split as u64, a as u64, b as u64, k as u64])
}

/// Object colour source for a record.
#[derive(Debug, Clone, Copy)]
enum Paint {
    /// Signature of this class.
    Signature(usize),
    /// Signature of the true class with the configured probability, else of
    /// a uniformly chosen other class.
    Correlated(usize, f64),
    /// Uniform random hue.
    Random,
}

fn render_record(
    cfg: &SynthConfig,
    shape: &ShapeClass,
    domain: &TextureDomain,
    paint: Paint,
    seed: u64,
) -> Result<SampleRecord> {
    let mut rng = rng::stream(seed, "textures", &[]);
    let color = match paint {
        Paint::Signature(t) => signature_color(t, cfg.classes, &mut rng),
        Paint::Correlated(y, p) => {
            let t = if cfg.classes == 1 || rng.gen::<f64>() < p {
                y
            } else {
                let other = rng.gen_range(0..cfg.classes - 1);
                if other >= y {
                    other + 1
                } else {
                    other
                }
            };
            signature_color(t, cfg.classes, &mut rng)
        }
        Paint::Random => random_color(&mut rng),
    };
    let fg = domain.texture(color, &mut rng);
    let bg = domain.background(&mut rng);
    render_sample(shape, &fg, &bg, domain.id, cfg.image_size, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub target: Vec<SampleRecord>,
    pub cue_conflict: Vec<SampleRecord>,
}

/// Source-domain train/validation records and target-domain records.
/// Validation takes the same fraction of every (class, domain) cell, so all
/// splits stay class balanced.
pub fn build_splits(cfg: &SynthConfig, seed: u64) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>)> {
    cfg.validate()?;
    let shapes = ShapeClass::catalog(cfg.classes)?;
    let domains = TextureDomain::catalog();
    let n_val = (cfg.val_fraction * cfg.n_per_class as f64).round() as usize;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for &d in &cfg.source_domains {
        for shape in &shapes {
            for k in 0..cfg.n_per_class {
                let s = record_seed(seed, Split::Source, d, shape.id, k);
                let paint = Paint::Correlated(shape.id, cfg.texture_correlation);
                let r = render_record(cfg, shape, &domains[d], paint, s)?;
                if k < n_val {
                    val.push(r);
                } else {
                    train.push(r);
                }
            }
        }
    }
    let mut target = Vec::new();
    for shape in &shapes {
        for k in 0..cfg.n_per_class {
            let s = record_seed(seed, Split::Target, cfg.target_domain, shape.id, k);
            target.push(render_record(
                cfg,
                shape,
                &domains[cfg.target_domain],
                Paint::Random,
                s,
            )?);
        }
    }
    train.shuffle(&mut rng::stream(seed, "split-order", &[0]));
    val.shuffle(&mut rng::stream(seed, "split-order", &[1]));
    target.shuffle(&mut rng::stream(seed, "split-order", &[2]));
    Ok((train, val, target))
}

/// Shape of class i painted with the signature colour of class j ≠ i,
/// cycling through all ordered pairs and through the source domains.
pub fn build_cue_conflict(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    if cfg.classes < 2 {
        return Err(Error::config("cue conflict needs at least two classes"));
    }
    let pairs: Vec<(usize, usize)> = (0..cfg.classes)
        .flat_map(|i| (0..cfg.classes).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    if n > pairs.len() * cfg.jitter_budget {
        return Err(Error::config(format!(
            "{n} cue-conflict records exceed {} pairs x {} per pair",
            pairs.len(),
            cfg.jitter_budget
        )));
    }
    let shapes = ShapeClass::catalog(cfg.classes)?;
    let domains = TextureDomain::catalog();
    (0..n)
        .map(|k| {
            let (i, j) = pairs[k % pairs.len()];
            let round = k / pairs.len();
            let d = cfg.source_domains[round % cfg.source_domains.len()];
            let s = record_seed(seed, Split::CueConflict, i, j, round);
            let mut r = render_record(cfg, &shapes[i], &domains[d], Paint::Signature(j), s)?;
            r.texture_label = Some(j);
            Ok(r)
        })
        .collect()
}

pub fn build_dataset(cfg: &SynthConfig, seed: u64) -> Result<DatasetSplit> {
    let (train, val, target) = build_splits(cfg, seed)?;
    let cue_conflict = build_cue_conflict(cfg, cfg.cue_conflict, seed)?;
    Ok(DatasetSplit {
        train,
        val,
        target,
        cue_conflict,
    })
}

/// Whole-image texture exemplars for diversification, drawn from every
/// domain except the held-out target, in arbitrary colours.
pub fn build_pool(cfg: &SynthConfig, seed: u64) -> Result<DomainPool> {
    cfg.validate()?;
    let domains: Vec<TextureDomain> = TextureDomain::catalog()
        .into_iter()
        .filter(|d| d.id != cfg.target_domain)
        .collect();
    let mut items = Vec::with_capacity(cfg.pool_size);
    for k in 0..cfg.pool_size {
        let mut rng = rng::stream(seed, "pool", &[k as u64]);
        let domain = &domains[k % domains.len()];
        let color = hsv(rng.gen(), rng.gen_range(0.0..=1.0), rng.gen_range(0.2..=1.0));
        let tex = domain.texture(color, &mut rng);
        let s = cfg.image_size;
        items.push((domain.id, Tensor::new(vec![3, s, s], tex.render(s))?));
    }
    DomainPool::new(items)
}
