//! On-disk layout of a generated dataset:
//!
//! ```text
//! root/dataset.cfg          generator config and seed
//! root/<split>.csv          path,shape_label,domain_id,texture_label,seed
//! root/<split>/NNNNN.ndt    image
//! root/<split>/NNNNN.mask.ndt
//! root/pool/                diversification exemplars
//! ```

use std::fs;
use std::path::Path;

use crate::config::KeyValues;
use crate::diversify::DomainPool;
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

use super::dataset::{DatasetSplit, SampleRecord, SynthConfig};

pub const SPLITS: [&str; 4] = ["train", "val", "target", "cue_conflict"];
pub const POOL_DIR: &str = "pool";
const CONFIG_FILE: &str = "dataset.cfg";

fn mask_path(image_path: &str) -> String {
    match image_path.strip_suffix(".ndt") {
        Some(stem) => format!("{stem}.mask.ndt"),
        None => format!("{image_path}.mask"),
    }
}

pub fn manifest_line(path: &str, r: &SampleRecord) -> String {
    let texture = r.texture_label.map_or(-1, |t| t as i64);
    format!("{path},{},{},{texture},{}", r.shape_label, r.domain_id, r.seed)
}

pub fn write_split(root: &Path, name: &str, records: &[SampleRecord], dtype: DType) -> Result<()> {
    let dir = root.join(name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut manifest = String::new();
    for (k, r) in records.iter().enumerate() {
        let rel = format!("{name}/{k:05}.ndt");
        r.image.save(&root.join(&rel), dtype)?;
        r.mask.save(&root.join(mask_path(&rel)), dtype)?;
        manifest.push_str(&manifest_line(&rel, r));
        manifest.push('\n');
    }
    let path = root.join(format!("{name}.csv"));
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a split manifest and its tensors. Masks are optional.
pub fn read_split(root: &Path, name: &str) -> Result<Vec<SampleRecord>> {
    let path = root.join(format!("{name}.csv"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let ctx = format!("manifest {}", path.display());
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| Error::format(ctx.clone(), format!("line {}: {what}", n + 1));
        let [rel, shape, domain, texture, seed] = f[..] else {
            return Err(bad("expected 5 comma-separated fields"));
        };
        let texture: i64 = texture.parse().map_err(|_| bad("bad texture_label"))?;
        let image = Tensor::load(&root.join(rel))?;
        let mp = root.join(mask_path(rel));
        let mask = if mp.exists() {
            Tensor::load(&mp)?
        } else {
            let s = image.shape();
            Tensor::zeros(&[1, s[1], s[2]])
        };
        out.push(SampleRecord {
            image,
            mask,
            shape_label: shape.parse().map_err(|_| bad("bad shape_label"))?,
            domain_id: domain.parse().map_err(|_| bad("bad domain_id"))?,
            texture_label: if texture < 0 { None } else { Some(texture as usize) },
            seed: seed.parse().map_err(|_| bad("bad seed"))?,
        });
    }
    Ok(out)
}

/// Writes every split, the exemplar pool and the generator config.
pub fn write_dataset(root: &Path, cfg: &SynthConfig, seed: u64, data: &DatasetSplit, pool: &DomainPool) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (name, records) in SPLITS
        .iter()
        .zip([&data.train, &data.val, &data.target, &data.cue_conflict])
    {
        write_split(root, name, records, DType::F32)?;
    }
    pool.save(&root.join(POOL_DIR))?;
    let path = root.join(CONFIG_FILE);
    fs::write(&path, format!("{}seed = {seed}\n", cfg.to_text())).map_err(|e| Error::io(&path, e))
}

pub fn read_config(root: &Path) -> Result<(SynthConfig, u64)> {
    let mut kv = KeyValues::load(&root.join(CONFIG_FILE))?;
    let seed = kv.require("seed")?;
    let cfg = SynthConfig::from_kv(&mut kv)?;
    kv.finish()?;
    Ok((cfg, seed))
}

pub fn read_dataset(root: &Path) -> Result<DatasetSplit> {
    Ok(DatasetSplit {
        train: read_split(root, "train")?,
        val: read_split(root, "val")?,
        target: read_split(root, "target")?,
        cue_conflict: read_split(root, "cue_conflict")?,
    })
}

pub fn read_pool(root: &Path) -> Result<DomainPool> {
    DomainPool::load(&root.join(POOL_DIR))
}
