use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

use super::adain::ChannelMoments;

pub const POOL_MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub domain: usize,
    pub image: Tensor,
    pub moments: ChannelMoments,
}

/// Texture exemplars that shuffled tiles are pushed toward, grouped by
/// domain id. Sampling is uniform over exemplars.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPool {
    exemplars: Vec<Exemplar>,
}

impl DomainPool {
    pub fn new(items: Vec<(usize, Tensor)>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("domain pool is empty"));
        }
        let channels = items[0].1.dims3("pool exemplar")?.0;
        let mut exemplars = Vec::with_capacity(items.len());
        for (i, (domain, image)) in items.into_iter().enumerate() {
            let c = image.dims3("pool exemplar")?.0;
            if c != channels {
                return Err(Error::shape(format!(
                    "pool exemplar {i} has {c} channels, expected {channels}"
                )));
            }
            let moments = ChannelMoments::of(&image)?;
            exemplars.push(Exemplar { domain, image, moments });
        }
        Ok(DomainPool { exemplars })
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.exemplars[0].image.shape()[0]
    }

    pub fn exemplar(&self, index: usize) -> &Exemplar {
        &self.exemplars[index]
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    /// Distinct domain ids, ascending.
    pub fn domains(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.exemplars.iter().map(|e| e.domain).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// Writes one tensor file per exemplar plus `manifest.csv`
    /// (`file,domain_id` per line).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        for (i, e) in self.exemplars.iter().enumerate() {
            let name = format!("pool_{i:05}.ndt");
            e.image.save(&dir.join(&name), DType::F64)?;
            manifest.push_str(&format!("{name},{}\n", e.domain));
        }
        let path = dir.join(POOL_MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(POOL_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut items = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (file, domain) = line
                .split_once(',')
                .ok_or_else(|| Error::format("pool manifest", format!("line {}: expected `file,domain_id`", n + 1)))?;
            let domain = domain
                .trim()
                .parse()
                .map_err(|_| Error::format("pool manifest", format!("line {}: bad domain id {domain:?}", n + 1)))?;
            items.push((domain, Tensor::load(&dir.join(file.trim()))?));
        }
        Self::new(items)
    }
}
