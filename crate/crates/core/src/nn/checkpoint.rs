//! Checkpoint files: magic "LGSP", version, architecture string, step,
//! parameter count, then params and both Adam moments as float32.

use std::fs;
use std::path::Path;

use super::optim::ParamStore;
use crate::error::{LgsError, Result};
use crate::pde::io::Cursor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LGSP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(arch: &str, store: &ParamStore) -> Vec<u8> {
    let n = store.len();
    let mut out = Vec::with_capacity(32 + arch.len() + 12 * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(arch.as_bytes());
    out.extend_from_slice(&store.step_count.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in [&store.params, &store.m, &store.v] {
        for x in v.iter() {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, arch: &str, store: &ParamStore) -> Result<()> {
    fs::write(path, checkpoint_bytes(arch, store)).map_err(|e| LgsError::io(path, e))
}

/// Load a checkpoint, refusing one written for a different architecture.
pub fn load_checkpoint(path: &Path, expected_arch: &str) -> Result<ParamStore> {
    if !path.exists() {
        return Err(LgsError::MissingInput(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| LgsError::io(path, e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(LgsError::format(path, "bad checkpoint magic"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LgsError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let arch_len = c.u32()? as usize;
    let arch = String::from_utf8(c.take(arch_len)?.to_vec())
        .map_err(|_| LgsError::format(path, "architecture string is not UTF-8"))?;
    if arch != expected_arch {
        return Err(LgsError::ArchMismatch {
            expected: expected_arch.to_string(),
            found: arch,
        });
    }
    let step_count = c.u64()?;
    let n = c.u64()? as usize;
    let params = c.f32s(n)?;
    let m = c.f32s(n)?;
    let v = c.f32s(n)?;
    if !c.at_end() {
        return Err(LgsError::format(path, "trailing bytes after checkpoint"));
    }
    Ok(ParamStore {
        grads: vec![0.0; n],
        params,
        m,
        v,
        step_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::optim::{adamw_step, OptimizerConfig};

    #[test]
    fn round_trip_is_exact_after_updates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut s = ParamStore::new(vec![0.1f32 as f64, -0.7f32 as f64, 2.5]);
        let cfg = OptimizerConfig {
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 1e-4,
            base_lr: 1e-2,
            total_steps: 10,
            warmup_frac: 0.1,
        };
        for k in 0..3 {
            s.grads = vec![0.3, -0.1 * k as f64, 1e-3];
            adamw_step(&mut s, &cfg, 1e-2).unwrap();
        }
        save_checkpoint(&path, "toy:3", &s).unwrap();
        assert_eq!(load_checkpoint(&path, "toy:3").unwrap(), s);
        assert!(matches!(
            load_checkpoint(&path, "toy:4"),
            Err(LgsError::ArchMismatch { .. })
        ));
        assert!(matches!(
            load_checkpoint(&dir.path().join("none"), "toy:3"),
            Err(LgsError::MissingInput(_))
        ));
    }
}
