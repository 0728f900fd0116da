//! The PFC1 checkpoint container.
//!
//! Layout: the magic `PFC1`, a little-endian `u64` manifest length, a UTF-8
//! JSON manifest, then the payload of little-endian `f32` values. The
//! manifest maps each tensor name to `{"shape", "offset"}` (offset in bytes
//! into the payload) and holds the model config under `"__config__"`.
//! Tensors are written in canonical order with no gaps, so identical
//! checkpoints serialize to identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use prunekit_core::tensor::Matrix;
use prunekit_core::{Checkpoint, LayerWeights, TransformerConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PFC1";
pub const CONFIG_KEY: &str = "__config__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub shape: Vec<usize>,
    pub offset: u64,
}

impl ManifestEntry {
    fn byte_len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * 4
    }
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.ensure_valid()?;
    let mut manifest = serde_json::Map::new();
    manifest.insert(CONFIG_KEY.into(), serde_json::to_value(&ckpt.config).expect("config serializes"));
    let tensors = ckpt.tensors();
    let mut offset = 0u64;
    for t in &tensors {
        let shape = if t.rank == 1 { vec![t.shape[0]] } else { t.shape.to_vec() };
        let entry = ManifestEntry { shape, offset };
        manifest.insert(t.name.clone(), serde_json::to_value(&entry).expect("entry serializes"));
        offset += t.data.len() as u64 * 4;
    }
    let header = serde_json::to_vec(&Value::Object(manifest)).expect("manifest serializes");
    let mut out = Vec::with_capacity(12 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &tensors {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

/// True when `bytes` starts with the PFC1 magic.
pub fn is_checkpoint(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

pub fn read_manifest<'a>(
    bytes: &'a [u8],
    path: &Path,
) -> Result<(TransformerConfig, BTreeMap<String, ManifestEntry>, &'a [u8])> {
    if !is_checkpoint(bytes) {
        return Err(Error::BadMagic(path.into()));
    }
    let len_bytes: [u8; 8] = bytes
        .get(4..12)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::BadManifest("truncated manifest length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes);
    let end = 12u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::BadManifest(format!("manifest length {header_len} exceeds file size")))?
        as usize;
    let mut manifest: serde_json::Map<String, Value> =
        serde_json::from_slice(&bytes[12..end]).map_err(|e| Error::BadManifest(e.to_string()))?;
    let config = manifest.remove(CONFIG_KEY).ok_or_else(|| Error::BadManifest("missing __config__".into()))?;
    let config: TransformerConfig =
        serde_json::from_value(config).map_err(|e| Error::BadManifest(format!("__config__: {e}")))?;
    let mut entries = BTreeMap::new();
    for (name, value) in manifest {
        let entry: ManifestEntry =
            serde_json::from_value(value).map_err(|e| Error::BadManifest(format!("{name}: {e}")))?;
        entries.insert(name, entry);
    }
    Ok((config, entries, &bytes[end..]))
}

fn check_layout(entries: &BTreeMap<String, ManifestEntry>, payload: &[u8]) -> Result<()> {
    let total = payload.len() as u64;
    for (name, e) in entries {
        let end = e.offset.checked_add(e.byte_len());
        if end.is_none_or(|end| end > total) {
            return Err(Error::ShapeMismatch {
                tensor: name.clone(),
                offset: e.offset,
                declared: e.byte_len(),
                payload: total,
            });
        }
        if e.offset % 4 != 0 {
            return Err(Error::BadManifest(format!("{name}: offset {} is not 4-byte aligned", e.offset)));
        }
    }
    let mut spans: Vec<(u64, u64, &str)> =
        entries.iter().map(|(n, e)| (e.offset, e.offset + e.byte_len(), n.as_str())).collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::BadManifest(format!("tensors {} and {} overlap", w[0].2, w[1].2)));
        }
    }
    let declared: u64 = spans.iter().map(|(s, e, _)| e - s).sum();
    if declared != total {
        return Err(Error::BadManifest(format!("payload has {total} bytes, tensors declare {declared}")));
    }
    Ok(())
}

struct Reader<'a> {
    entries: BTreeMap<String, ManifestEntry>,
    payload: &'a [u8],
}

impl Reader<'_> {
    fn floats(&self, e: &ManifestEntry) -> Vec<f32> {
        let start = e.offset as usize;
        self.payload[start..start + e.byte_len() as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }

    fn take_matrix(&mut self, name: &str) -> Result<Option<Matrix>> {
        let Some(e) = self.entries.remove(name) else { return Ok(None) };
        match e.shape[..] {
            [rows, cols] => Ok(Some(Matrix::from_vec(rows, cols, self.floats(&e)))),
            _ => Err(Error::BadManifest(format!("{name}: expected a rank-2 shape, got {:?}", e.shape))),
        }
    }

    fn take_vector(&mut self, name: &str) -> Result<Option<Vec<f32>>> {
        let Some(e) = self.entries.remove(name) else { return Ok(None) };
        if e.shape.len() != 1 {
            return Err(Error::BadManifest(format!("{name}: expected a rank-1 shape, got {:?}", e.shape)));
        }
        Ok(Some(self.floats(&e)))
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        self.take_matrix(name)?.ok_or_else(|| missing(name))
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f32>> {
        self.take_vector(name)?.ok_or_else(|| missing(name))
    }
}

fn missing(name: &str) -> Error {
    Error::BadManifest(format!("missing tensor {name}"))
}

fn layer_count(entries: &BTreeMap<String, ManifestEntry>) -> Result<usize> {
    let mut n = 0;
    for name in entries.keys() {
        if let Some(rest) = name.strip_prefix("layers.") {
            let idx = rest.split('.').next().and_then(|i| i.parse::<usize>().ok());
            let idx = idx.ok_or_else(|| Error::BadManifest(format!("bad layer tensor name {name}")))?;
            n = n.max(idx + 1);
        }
    }
    Ok(n)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let (config, entries, payload) = read_manifest(bytes, path)?;
    check_layout(&entries, payload)?;
    let n_layers = layer_count(&entries)?;
    let mut r = Reader { entries, payload };
    let embed = r.matrix("embed")?;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let f = |t: &str| format!("layers.{l}.{t}");
        layers.push(LayerWeights {
            attn_norm: r.vector(&f("attn_norm"))?,
            wq: r.matrix(&f("wq"))?,
            wk: r.matrix(&f("wk"))?,
            wv: r.matrix(&f("wv"))?,
            bq: r.take_vector(&f("bq"))?,
            bk: r.take_vector(&f("bk"))?,
            bv: r.take_vector(&f("bv"))?,
            wo: r.matrix(&f("wo"))?,
            ffn_norm: r.vector(&f("ffn_norm"))?,
            w_gate: r.matrix(&f("w_gate"))?,
            w_up: r.matrix(&f("w_up"))?,
            w_down: r.matrix(&f("w_down"))?,
        });
    }
    let final_norm = r.vector("final_norm")?;
    let lm_head = r.take_matrix("lm_head")?;
    let lm_bias = r.take_vector("lm_bias")?;
    if let Some(name) = r.entries.keys().next() {
        return Err(Error::BadManifest(format!("unknown tensor {name}")));
    }
    let ckpt = Checkpoint { config, embed, layers, final_norm, lm_head, lm_bias };
    ckpt.ensure_valid()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Checkpoint {
        Checkpoint::random(TransformerConfig::toy(30, 8, 2, 2, 1, 6), 9)
    }

    #[test]
    fn bytes_round_trip() {
        let ckpt = toy();
        let bytes = to_bytes(&ckpt).unwrap();
        assert_eq!(&bytes[..4], b"PFC1");
        assert_eq!(from_bytes(&bytes, Path::new("x")).unwrap(), ckpt);
        assert_eq!(to_bytes(&ckpt).unwrap(), bytes);
    }

    #[test]
    fn manifest_lists_each_tensor_once() {
        let ckpt = toy();
        let bytes = to_bytes(&ckpt).unwrap();
        let (config, entries, payload) = read_manifest(&bytes, Path::new("x")).unwrap();
        assert_eq!(config, ckpt.config);
        let names: Vec<String> = entries.keys().cloned().collect();
        let mut want = ckpt.tensor_names();
        want.sort();
        assert_eq!(names, want);
        let declared: u64 = entries.values().map(ManifestEntry::byte_len).sum();
        assert_eq!(declared, payload.len() as u64);
    }

    #[test]
    fn rejects_invalid_checkpoint_on_save() {
        let mut ckpt = toy();
        ckpt.config.n_layers = 3;
        assert!(matches!(to_bytes(&ckpt), Err(Error::Core(prunekit_core::Error::InvalidCheckpoint(_)))));
    }
}
