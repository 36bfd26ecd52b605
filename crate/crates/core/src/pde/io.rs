//! Binary trajectory files.
//!
//! Layout, all little-endian: magic `LGS1`, version `u32`, then one record
//! per trajectory until end of file. A record is a header (system kind `u8`,
//! dims `u8`, channels `u16`, grid `u32`, steps `u32`) followed by
//! `(steps + 1) * channels * grid^dims` `f32` values in `[step, channel, y, x]`
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{LgsError, Result};
use crate::pde::system::{SystemKind, SystemTag};
use crate::pde::trajectory::Trajectory;
use crate::pde::CHANNELS;

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"LGS1";
pub const TRAJECTORY_VERSION: u32 = 1;

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let file = File::create(path).map_err(|e| LgsError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| LgsError::io(path, e));
    put(TRAJECTORY_MAGIC)?;
    put(&TRAJECTORY_VERSION.to_le_bytes())?;
    for traj in trajectories {
        let tag = traj.tag;
        put(&[tag.kind.code(), tag.dims])?;
        put(&(CHANNELS as u16).to_le_bytes())?;
        put(&(tag.grid as u32).to_le_bytes())?;
        put(&(traj.steps() as u32).to_le_bytes())?;
        for state in &traj.states {
            if state.len() != tag.state_len() {
                return Err(LgsError::Shape(format!(
                    "state of {} values in a {} trajectory",
                    state.len(),
                    tag
                )));
            }
            let bytes: Vec<u8> = state
                .iter()
                .flat_map(|&v| (v as f32).to_le_bytes())
                .collect();
            put(&bytes)?;
        }
    }
    w.flush().map_err(|e| LgsError::io(path, e))
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    if !path.exists() {
        return Err(LgsError::MissingInput(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| LgsError::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| LgsError::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(4)? != TRAJECTORY_MAGIC {
        return Err(LgsError::format(path, "bad magic"));
    }
    let version = cur.u32()?;
    if version != TRAJECTORY_VERSION {
        return Err(LgsError::format(path, format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while !cur.at_end() {
        let kind_code = cur.take(1)?[0];
        let kind = SystemKind::from_code(kind_code)
            .ok_or_else(|| LgsError::format(path, format!("unknown system kind {kind_code}")))?;
        let dims = cur.take(1)?[0];
        let channels = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let grid = cur.u32()? as usize;
        let steps = cur.u32()? as usize;
        if channels != CHANNELS || !(dims == 1 || dims == 2) {
            return Err(LgsError::format(
                path,
                format!("unsupported record: {channels} channels, {dims} dims"),
            ));
        }
        let tag = SystemTag { kind, dims, grid };
        let len = tag.state_len();
        let mut states = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            let raw = cur.take(4 * len)?;
            states.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            );
        }
        out.push(Trajectory { tag, states });
    }
    Ok(out)
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(LgsError::format(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
