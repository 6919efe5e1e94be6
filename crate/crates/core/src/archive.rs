//! Checksummed container: a JSON header followed by named f64 tensors.
//!
//! ```text
//! magic "SJARC1\n" | u32 LE header length | header JSON
//! | NDT1 tensor × n (order listed in the header) | SHA-256 of everything before
//! ```
//!
//! The checksum is verified before anything is parsed, so a truncated or
//! corrupted file never yields partial state.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamGroup, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

const MAGIC: &[u8; 7] = b"SJARC1\n";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    kind: String,
    version: u32,
    header: H,
    tensors: Vec<String>,
}

pub fn to_bytes<H: Serialize>(kind: &str, version: u32, header: &H, tensors: &[(&str, &Tensor)]) -> Result<Vec<u8>> {
    let env = Envelope {
        kind: kind.to_string(),
        version,
        header,
        tensors: tensors.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let json = serde_json::to_vec(&env).map_err(|e| Error::format(kind, e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        t.write_ndt1(&mut out, DType::F64)
            .expect("writing to a Vec cannot fail");
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn from_bytes<H: DeserializeOwned>(
    context: &str,
    kind: &str,
    version: u32,
    bytes: &[u8],
) -> Result<(H, Vec<(String, Tensor)>)> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Checksum(format!("{context} (file too short)")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum(context.to_string()));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(Error::format(context, "not an archive file"));
    }
    let mut pos = MAGIC.len();
    let len = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    let json = body
        .get(pos..pos + len)
        .ok_or_else(|| Error::format(context, "header runs past end of file"))?;
    pos += len;
    let probe: Envelope<serde_json::Value> =
        serde_json::from_slice(json).map_err(|e| Error::format(context, e.to_string()))?;
    if probe.kind != kind {
        return Err(Error::format(
            context,
            format!("expected a {kind} file, found {}", probe.kind),
        ));
    }
    if probe.version != version {
        return Err(Error::format(
            context,
            format!(
                "version mismatch: file has {}, this build reads {version}",
                probe.version
            ),
        ));
    }
    let header: H = serde_json::from_value(probe.header).map_err(|e| Error::format(context, e.to_string()))?;
    let mut rest = &body[pos..];
    let mut tensors = Vec::with_capacity(probe.tensors.len());
    for name in probe.tensors {
        let t = Tensor::read_ndt1(&mut rest).map_err(|e| Error::format(context, format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    if !rest.is_empty() {
        return Err(Error::format(context, "trailing bytes after tensors"));
    }
    Ok((header, tensors))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parameter names with their group tags, for headers.
pub fn param_groups(ps: &ParamSet) -> Vec<(String, String)> {
    ps.iter().map(|p| (p.name.clone(), p.group.tag().to_string())).collect()
}

/// Rebuilds a parameter set from header group tags and loaded tensors.
pub fn params_from(
    context: &str,
    groups: &[(String, String)],
    tensors: &mut Vec<(String, Tensor)>,
) -> Result<ParamSet> {
    let mut ps = ParamSet::new();
    for (name, tag) in groups {
        let group = ParamGroup::from_tag(tag)
            .ok_or_else(|| Error::format(context, format!("unknown parameter group {tag}")))?;
        let pos = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::format(context, format!("missing tensor {name}")))?;
        let (_, t) = tensors.remove(pos);
        ps.insert(name, group, t)?;
    }
    Ok(ps)
}
