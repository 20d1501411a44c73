//! `<name>.ckpt` holds every tensor as little-endian `f64`, in manifest
//! order: parameters, then Adam first moments, then second moments.
//! `<name>.manifest.json` records names, shapes, the model config and the
//! step counter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{build_layout, ModelConfig, ModelState};
use crate::data::{read_json, write_json};
use crate::error::{Error, Result};

const FORMAT: &str = "spikerep-checkpoint-1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    decay: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    dtype: String,
    step: u64,
    seed: u64,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    sections: Vec<String>,
}

/// `(<base>.ckpt, <base>.manifest.json)` for `base`, `base.ckpt` or
/// `base.manifest.json`.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".manifest.json")
        .or_else(|| s.strip_suffix(".ckpt"))
        .unwrap_or(&s)
        .to_string();
    (PathBuf::from(format!("{base}.ckpt")), PathBuf::from(format!("{base}.manifest.json")))
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let (bin, json) = checkpoint_paths(path);
    let file = File::create(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut w = BufWriter::new(file);
    for t in state.params.iter().chain(&state.adam_m).chain(&state.adam_v) {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&bin, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&bin, e))?;
    let manifest = Manifest {
        format: FORMAT.into(),
        dtype: "f64le".into(),
        step: state.step,
        seed: state.seed,
        config: state.config.clone(),
        tensors: state
            .names
            .iter()
            .zip(&state.params)
            .zip(&state.decay)
            .map(|((n, p), &decay)| TensorEntry {
                name: n.clone(),
                shape: [p.nrows(), p.ncols()],
                decay,
            })
            .collect(),
        sections: vec!["params".into(), "adam_m".into(), "adam_v".into()],
    };
    write_json(&json, &manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let (bin, json) = checkpoint_paths(path);
    if !json.exists() {
        return Err(Error::MissingSidecar(json));
    }
    let m: Manifest = read_json(&json)?;
    if m.format != FORMAT || m.dtype != "f64le" {
        return Err(Error::Parse(format!("unsupported checkpoint format {} / {}", m.format, m.dtype)));
    }
    let mut state = ModelState::new(&m.config, m.seed)?;
    let (layout, _) = build_layout(&m.config);
    if m.tensors.len() != state.params.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} tensors, config implies {}",
            m.tensors.len(),
            state.params.len()
        )));
    }
    for (entry, (name, p)) in m.tensors.iter().zip(state.names.iter().zip(&state.params)) {
        if &entry.name != name || entry.shape != [p.nrows(), p.ncols()] {
            return Err(Error::Parse(format!("tensor {} does not match the model layout", entry.name)));
        }
    }
    let per_section: usize = state.params.iter().map(|p| p.len()).sum();
    let file = File::open(&bin).map_err(|e| Error::io(&bin, e))?;
    let len = file.metadata().map_err(|e| Error::io(&bin, e))?.len() as usize;
    if len != 3 * per_section * 8 {
        return Err(Error::SizeMismatch {
            expected: 3 * per_section,
            found: len / 8,
        });
    }
    let mut r = BufReader::new(file);
    let mut read_section = |shapes: &[(usize, usize)]| -> Result<Vec<Array2<f64>>> {
        shapes
            .iter()
            .map(|&(rows, cols)| {
                let mut buf = vec![0u8; rows * cols * 8];
                r.read_exact(&mut buf).map_err(|e| Error::io(&bin, e))?;
                let vals = buf
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect();
                Ok(Array2::from_shape_vec((rows, cols), vals).expect("shape matches length"))
            })
            .collect()
    };
    let shapes: Vec<(usize, usize)> = state.params.iter().map(|p| p.dim()).collect();
    state.params = read_section(&shapes)?;
    state.adam_m = read_section(&shapes)?;
    state.adam_v = read_section(&shapes)?;
    state.decay = m.tensors.iter().map(|t| t.decay).collect();
    state.step = m.step;
    state.layout = layout;
    if !state.all_finite() {
        return Err(Error::NonFinite(0));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            snippet_t: 11,
            snippet_c: 3,
            embed_dim: 4,
            n_heads: 2,
            ff_dim: 4,
            rep_dim: 3,
            proj_dim: 4,
            pred_hidden_dim: 4,
            dae_hidden_dim: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ModelState::new(&small(), 5).unwrap();
        s.step = 17;
        s.adam_m[0].fill(std::f64::consts::PI);
        s.adam_v[1].fill(1e-300);
        let p = dir.path().join("model");
        save_checkpoint(&s, &p).unwrap();
        let back = load_checkpoint(&dir.path().join("model.ckpt")).unwrap();
        assert_eq!(back, s);
        for (a, b) in back.params.iter().zip(&s.params) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = ModelState::new(&small(), 5).unwrap();
        let p = dir.path().join("m");
        save_checkpoint(&s, &p).unwrap();
        let (bin, _) = checkpoint_paths(&p);
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn missing_manifest_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(&dir.path().join("x")), Err(Error::MissingSidecar(_))));
    }

    #[test]
    fn path_forms_agree() {
        let a = checkpoint_paths(Path::new("/t/m"));
        assert_eq!(a, checkpoint_paths(Path::new("/t/m.ckpt")));
        assert_eq!(a, checkpoint_paths(Path::new("/t/m.manifest.json")));
    }
}
