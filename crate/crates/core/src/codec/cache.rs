//! Latent trajectory cache: magic "LGSL", version u32, d_latent u32, then
//! per trajectory `steps` u32 followed by `(steps + 1) * d_latent` float32.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::model::Codec;
use crate::error::{LgsError, Result};
use crate::pde::io::Cursor;
use crate::pde::{to_canvas, NormStats, Trajectory};

pub const LATENT_MAGIC: &[u8; 4] = b"LGSL";
pub const LATENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCache {
    pub d_latent: usize,
    /// `trajectories[i][s]` is the latent of step `s`, in corpus order.
    pub trajectories: Vec<Vec<Vec<f64>>>,
}

impl LatentCache {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(LATENT_MAGIC);
        out.extend_from_slice(&LATENT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_latent as u32).to_le_bytes());
        for traj in &self.trajectories {
            out.extend_from_slice(&(traj.len().saturating_sub(1) as u32).to_le_bytes());
            for x in traj.iter().flatten() {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(bad) = self.trajectories.iter().flatten().find(|x| x.len() != self.d_latent) {
            return Err(LgsError::Shape(format!(
                "latent of length {} in a cache of width {}",
                bad.len(),
                self.d_latent
            )));
        }
        fs::write(path, self.to_bytes()).map_err(|e| LgsError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LgsError::MissingInput(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| LgsError::io(path, e))?;
        let mut c = Cursor {
            bytes: &bytes,
            pos: 0,
            path,
        };
        if c.take(4)? != LATENT_MAGIC {
            return Err(LgsError::format(path, "bad latent cache magic"));
        }
        let version = c.u32()?;
        if version != LATENT_VERSION {
            return Err(LgsError::format(path, format!("unsupported latent cache version {version}")));
        }
        let d_latent = c.u32()? as usize;
        let mut trajectories = Vec::new();
        while !c.at_end() {
            let frames = c.u32()? as usize + 1;
            let flat = c.f32s(frames * d_latent)?;
            trajectories.push(flat.chunks_exact(d_latent).map(|v| v.to_vec()).collect());
        }
        Ok(Self {
            d_latent,
            trajectories,
        })
    }
}

/// Posterior means of every state, rounded to the stored float32 precision.
pub fn encode_dataset(
    codec: &Codec,
    params: &[f64],
    norm: &NormStats,
    trajectories: &[Trajectory],
) -> Result<LatentCache> {
    let encoded: Vec<Result<Vec<Vec<f64>>>> = trajectories
        .par_iter()
        .map(|t| {
            t.states
                .iter()
                .map(|s| {
                    let canvas = to_canvas(t.tag, &norm.normalize(t.tag, s))?;
                    let (mu, _) = codec.encode(params, &canvas)?;
                    Ok(mu.into_iter().map(|v| v as f32 as f64).collect())
                })
                .collect()
        })
        .collect();
    Ok(LatentCache {
        d_latent: codec.cfg.d_latent,
        trajectories: encoded.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::pde::{generate_trajectory, SystemSpec};

    #[test]
    fn cache_round_trip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SystemSpec::preset("heat1d", 16).unwrap();
        let trajs: Vec<_> = (0..3).map(|s| generate_trajectory(&spec, s, 4).unwrap()).collect();
        let codec = Codec::new(CodecConfig {
            grid: 16,
            pool: 2,
            d_latent: 6,
            hidden: 16,
        })
        .unwrap();
        let p = codec.init_params(1);
        let norm = NormStats::identity();
        let a = encode_dataset(&codec, &p, &norm, &trajs).unwrap();
        assert!(a.trajectories.iter().all(|t| t.len() == 5));
        let path = dir.path().join("train.lgsl");
        a.write(&path).unwrap();
        let first = fs::read(&path).unwrap();
        encode_dataset(&codec, &p, &norm, &trajs).unwrap().write(&path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        assert_eq!(LatentCache::read(&path).unwrap(), a);
        assert_eq!(&first[..4], LATENT_MAGIC);
        assert_eq!(u32::from_le_bytes(first[8..12].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(first[12..16].try_into().unwrap()), 4);
    }
}
