use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jigsaw::TileGrid;
use crate::rng::{self, StreamRng};

use super::adain::{stylize_learned, stylize_pixel, ChannelMoments};
use super::coder::CoderPair;
use super::pool::DomainPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pixel,
    Learned,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(Mode::Pixel),
            "learned" => Ok(Mode::Learned),
            _ => Err(Error::config(format!("mode must be `pixel` or `learned`, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversifierConfig {
    /// Probability that a shuffled image is domain-shifted.
    pub rho: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub mode: Mode,
    pub epsilon: f64,
}

impl Default for DiversifierConfig {
    fn default() -> Self {
        DiversifierConfig {
            rho: 0.5,
            gamma_min: 0.75,
            gamma_max: 1.0,
            mode: Mode::Pixel,
            epsilon: 1e-6,
        }
    }
}

impl DiversifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.gamma_min)
            || !(0.0..=1.0).contains(&self.gamma_max)
            || self.gamma_min > self.gamma_max
        {
            return Err(Error::config(format!(
                "gamma range must satisfy 0 <= min <= max <= 1, got [{}, {}]",
                self.gamma_min, self.gamma_max
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileDecision {
    pub exemplar: usize,
    pub domain: usize,
    pub gamma: f64,
}

/// Every random draw made for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub hit: bool,
    /// One entry per tile when `hit`, empty otherwise.
    pub tiles: Vec<TileDecision>,
}

impl Decision {
    /// `index,hit,domain:gamma;domain:gamma;...`
    pub fn log_line(&self, index: u64) -> String {
        let mut s = format!("{index},{}", u8::from(self.hit));
        s.push(',');
        for (k, t) in self.tiles.iter().enumerate() {
            if k > 0 {
                s.push(';');
            }
            let _ = write!(s, "{}:{}", t.domain, t.gamma);
        }
        s
    }
}

/// Stateless image-level diversification: one Bernoulli(ρ) draw, then on a
/// hit an independent exemplar and γ for every tile.
pub fn diversify_grid(
    grid: &TileGrid,
    cfg: &DiversifierConfig,
    pool: &DomainPool,
    coder: Option<&CoderPair>,
    rng: &mut StreamRng,
) -> Result<(TileGrid, Decision)> {
    if pool.is_empty() {
        return Err(Error::invalid("domain pool is empty"));
    }
    let hit = rng.gen::<f64>() < cfg.rho;
    if !hit {
        return Ok((grid.clone(), Decision { hit, tiles: vec![] }));
    }
    let coder = match cfg.mode {
        Mode::Pixel => None,
        Mode::Learned => Some(
            coder
                .filter(|c| c.is_trained())
                .ok_or_else(|| Error::invalid("learned mode needs a trained coder"))?,
        ),
    };
    if pool.channels() != grid.tile_shape()[0] {
        return Err(Error::shape(format!(
            "pool exemplars have {} channels, tiles have {}",
            pool.channels(),
            grid.tile_shape()[0]
        )));
    }
    let mut out = grid.clone();
    let mut tiles = Vec::with_capacity(grid.len());
    for (k, tile) in grid.tiles().iter().enumerate() {
        let exemplar = rng.gen_range(0..pool.len());
        let gamma = if cfg.gamma_min == cfg.gamma_max {
            cfg.gamma_min
        } else {
            rng.gen_range(cfg.gamma_min..=cfg.gamma_max)
        };
        let e = pool.exemplar(exemplar);
        let styled = match coder {
            None => stylize_pixel(tile, &e.moments, gamma, cfg.epsilon)?,
            Some(c) => {
                let target = ChannelMoments::of(&c.encode(&e.image)?)?;
                stylize_learned(tile, &target, gamma, c, cfg.epsilon)?
            }
        };
        out.set_tile(k, styled)?;
        tiles.push(TileDecision {
            exemplar,
            domain: e.domain,
            gamma,
        });
    }
    Ok((out, Decision { hit, tiles }))
}

/// Diversifies a batch, drawing image `i`'s randomness from a stream keyed
/// by `(seed, first_index + i)` so results do not depend on batching.
pub fn diversify_batch(
    grids: &[TileGrid],
    cfg: &DiversifierConfig,
    pool: &DomainPool,
    coder: Option<&CoderPair>,
    seed: u64,
    first_index: u64,
) -> Result<(Vec<TileGrid>, Vec<Decision>)> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(grids.len());
    let mut log = Vec::with_capacity(grids.len());
    for (i, grid) in grids.iter().enumerate() {
        let mut rng = rng::stream(seed, "diversify", &[first_index + i as u64]);
        let (g, d) = diversify_grid(grid, cfg, pool, coder, &mut rng)?;
        out.push(g);
        log.push(d);
    }
    Ok((out, log))
}

/// Decision log text, one line per image.
pub fn decision_log(decisions: &[Decision], first_index: u64) -> String {
    decisions
        .iter()
        .enumerate()
        .map(|(i, d)| d.log_line(first_index + i as u64) + "\n")
        .collect()
}
