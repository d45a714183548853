//! Model checkpoints: a little-endian f64 blob with a magic header plus a
//! JSON sidecar describing dims, seed, step, and the config hash.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cgbc_core::learn::{ModelDims, ModelParams};

use crate::{AppError, AppResult};

const MAGIC: &[u8; 8] = b"CGBCKPT\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn save(bin: &Path, params: &ModelParams, seed: u64, step: u64, config_hash: &str) -> AppResult<()> {
    let flat = params.flatten();
    let mut f = fs::File::create(bin)?;
    f.write_all(MAGIC)?;
    f.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in &flat {
        f.write_all(&v.to_le_bytes())?;
    }

    let meta = CheckpointMeta {
        format_version: 1,
        feature_dim: params.dims.feature,
        hidden_dim: params.dims.hidden,
        embed_dim: params.dims.embed,
        seed,
        step,
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(sidecar_path(bin), json + "\n")?;
    Ok(())
}

pub fn load(bin: &Path) -> AppResult<(ModelParams, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_str(
        &fs::read_to_string(sidecar_path(bin))
            .map_err(|e| AppError::Data(format!("{}: {e}", sidecar_path(bin).display())))?,
    )?;
    if meta.format_version != 1 {
        return Err(AppError::Data(format!(
            "unsupported checkpoint version {}",
            meta.format_version
        )));
    }

    let mut f = fs::File::open(bin)
        .map_err(|e| AppError::Data(format!("{}: {e}", bin.display())))?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AppError::Data(format!("{}: not a checkpoint", bin.display())));
    }
    let mut len = [0u8; 8];
    f.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        f.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }

    let dims = ModelDims {
        feature: meta.feature_dim,
        hidden: meta.hidden_dim,
        embed: meta.embed_dim,
    };
    let params = ModelParams::unflatten(dims, &data)
        .ok_or_else(|| AppError::Data("checkpoint length disagrees with dims".into()))?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("model.bin");
        let dims = ModelDims { feature: 6, hidden: 5, embed: 4 };
        let params = ModelParams::init(dims, 42);
        save(&bin, &params, 42, 7, "deadbeef").unwrap();
        let (back, meta) = load(&bin).unwrap();
        assert_eq!(params, back);
        assert_eq!(meta.seed, 42);
        assert_eq!(meta.step, 7);
        assert_eq!(meta.config_hash, "deadbeef");
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("model.bin");
        let dims = ModelDims { feature: 4, hidden: 3, embed: 2 };
        save(&bin, &ModelParams::init(dims, 1), 1, 0, "h").unwrap();
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[0] = b'X';
        std::fs::write(&bin, bytes).unwrap();
        assert!(load(&bin).is_err());
    }
}
