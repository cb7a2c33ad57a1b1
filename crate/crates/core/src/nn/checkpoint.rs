//! Checkpoint files: `manifest.json` lists `{name, shape, offset}` per tensor
//! (`offset` in bytes into the blob), `params.bin` holds the values as
//! little-endian `f64`. An optional `meta.json` carries the model config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use super::NnError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

pub fn encode(params: &ParamSet) -> (Vec<ManifestEntry>, Vec<u8>) {
    let mut manifest = Vec::with_capacity(params.len());
    let mut blob = Vec::with_capacity(params.scalar_count() * 8);
    for id in params.ids() {
        let t = params.value(id);
        manifest.push(ManifestEntry {
            name: params.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    (manifest, blob)
}

pub fn decode(manifest: &[ManifestEntry], blob: &[u8]) -> Result<ParamSet, NnError> {
    let mut ps = ParamSet::default();
    for entry in manifest {
        let count: usize = entry.shape.iter().product();
        let start = usize::try_from(entry.offset)
            .map_err(|_| NnError::Checkpoint(format!("offset of {} overflows", entry.name)))?;
        let end = start + count * 8;
        let bytes = blob.get(start..end).ok_or_else(|| {
            NnError::Checkpoint(format!(
                "tensor {} runs past the end of the blob",
                entry.name
            ))
        })?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if ps.id(&entry.name).is_some() {
            return Err(NnError::Checkpoint(format!(
                "duplicate tensor {}",
                entry.name
            )));
        }
        ps.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok(ps)
}

pub fn save(
    dir: &Path,
    params: &ParamSet,
    meta: Option<&serde_json::Value>,
) -> Result<(), NnError> {
    fs::create_dir_all(dir)?;
    let (manifest, blob) = encode(params);
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    if let Some(meta) = meta {
        fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(meta)?)?;
    }
    Ok(())
}

pub fn load(dir: &Path) -> Result<(ParamSet, Option<serde_json::Value>), NnError> {
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let params = decode(&manifest, &blob)?;
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        Some(serde_json::from_slice(&fs::read(meta_path)?)?)
    } else {
        None
    };
    Ok((params, meta))
}
