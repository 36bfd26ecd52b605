use std::fmt;
use std::str::FromStr;

use crate::error::{first_non_finite, LgsError, Result};
use crate::pde::CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemKind {
    Heat,
    Advection,
    Burgers,
    GrayScott,
}

impl SystemKind {
    pub fn code(self) -> u8 {
        match self {
            SystemKind::Heat => 0,
            SystemKind::Advection => 1,
            SystemKind::Burgers => 2,
            SystemKind::GrayScott => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SystemKind::Heat,
            1 => SystemKind::Advection,
            2 => SystemKind::Burgers,
            3 => SystemKind::GrayScott,
            _ => return None,
        })
    }

    /// Number of physical (non-padding) channels.
    pub fn active_channels(self) -> usize {
        match self {
            SystemKind::GrayScott => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Heat => "heat",
            SystemKind::Advection => "advection",
            SystemKind::Burgers => "burgers",
            SystemKind::GrayScott => "grayscott",
        }
    }
}

/// The part of a [`SystemSpec`] that survives serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SystemTag {
    pub kind: SystemKind,
    pub dims: u8,
    pub grid: usize,
}

impl SystemTag {
    pub fn points(&self) -> usize {
        self.grid.pow(self.dims as u32)
    }

    pub fn state_len(&self) -> usize {
        CHANNELS * self.points()
    }

    pub fn label(&self) -> String {
        format!("{}{}d", self.kind.name(), self.dims)
    }
}

impl fmt::Display for SystemTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// A periodic system on the unit interval or unit square.
///
/// `params` holds ν for heat and burgers, the velocity `c` (or `cx, cy`) for
/// advection and `feed, kill, du, dv` for Gray-Scott.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub grid_size: usize,
    pub dims: u8,
    pub dt: f64,
    pub params: Vec<f64>,
}

impl SystemSpec {
    pub fn new(
        kind: SystemKind,
        grid_size: usize,
        dims: u8,
        dt: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let spec = Self {
            kind,
            grid_size,
            dims,
            dt,
            params,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Named presets used by the run configuration: `heat1d`, `heat2d`,
    /// `advection1d`, `advection2d`, `burgers1d`, `grayscott2d`.
    pub fn preset(name: &str, grid: usize) -> Result<Self> {
        let dx = 1.0 / grid as f64;
        let (kind, dims, dt, params) = match name {
            "heat1d" => (SystemKind::Heat, 1, 0.2 * dx * dx / 0.01, vec![0.01]),
            "heat2d" => (SystemKind::Heat, 2, 0.1 * dx * dx / 0.01, vec![0.01]),
            "advection1d" => (SystemKind::Advection, 1, 0.5 * dx, vec![1.0]),
            "advection2d" => (SystemKind::Advection, 2, 0.25 * dx, vec![1.0, 1.0]),
            "burgers1d" => (SystemKind::Burgers, 1, 0.2 * dx * dx / 0.05, vec![0.05]),
            "grayscott2d" => (
                SystemKind::GrayScott,
                2,
                1.0,
                vec![0.04, 0.06, 0.2 * dx * dx, 0.1 * dx * dx],
            ),
            other => {
                return Err(LgsError::InvalidSpec(format!("unknown system preset `{other}`")))
            }
        };
        Self::new(kind, grid, dims, dt, params)
    }

    pub fn tag(&self) -> SystemTag {
        SystemTag {
            kind: self.kind,
            dims: self.dims,
            grid: self.grid_size,
        }
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.grid_size as f64
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LgsError::InvalidSpec(msg));
        if self.grid_size < 8 {
            return bad(format!("grid_size {} < 8", self.grid_size));
        }
        if self.dims != 1 && self.dims != 2 {
            return bad(format!("dims must be 1 or 2, got {}", self.dims));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive and finite, got {}", self.dt));
        }
        if let Some(i) = first_non_finite(&self.params) {
            return bad(format!("param {i} is not finite"));
        }
        let dx2 = self.dx() * self.dx();
        let diffusion_limit = 0.5 / self.dims as f64;
        let check_diffusion = |nu: f64, what: &str| -> Result<()> {
            if nu < 0.0 {
                return bad(format!("{what} must be non-negative"));
            }
            let r = nu * self.dt / dx2;
            if r > diffusion_limit {
                return bad(format!(
                    "{what}: diffusion number {r:.4} exceeds stability limit {diffusion_limit}"
                ));
            }
            Ok(())
        };
        match self.kind {
            SystemKind::Heat | SystemKind::Burgers => {
                if self.params.len() != 1 {
                    return bad(format!("{} expects [nu]", self.kind.name()));
                }
                check_diffusion(self.params[0], "nu")?;
            }
            SystemKind::Advection => {
                let courant = self.courant_numbers()?;
                let total: f64 = courant.iter().map(|c| c.abs()).sum();
                if total > 1.0 + 1e-12 {
                    return bad(format!("Courant sum {total:.4} exceeds 1"));
                }
            }
            SystemKind::GrayScott => {
                if self.params.len() != 4 {
                    return bad("grayscott expects [feed, kill, du, dv]".into());
                }
                check_diffusion(self.params[2], "du")?;
                check_diffusion(self.params[3], "dv")?;
            }
        }
        Ok(())
    }

    fn courant_numbers(&self) -> Result<Vec<f64>> {
        let scale = self.dt / self.dx();
        match (self.dims, self.params.as_slice()) {
            (1, [c]) => Ok(vec![c * scale]),
            (2, [c]) => Ok(vec![c * scale, c * scale]),
            (2, [cx, cy]) => Ok(vec![cx * scale, cy * scale]),
            _ => Err(LgsError::InvalidSpec(
                "advection expects [c] or, in 2D, [cx, cy]".into(),
            )),
        }
    }
}

impl FromStr for SystemKind {
    type Err = LgsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat" => Ok(SystemKind::Heat),
            "advection" => Ok(SystemKind::Advection),
            "burgers" => Ok(SystemKind::Burgers),
            "grayscott" | "gray_scott" => Ok(SystemKind::GrayScott),
            other => Err(LgsError::InvalidSpec(format!("unknown system kind `{other}`"))),
        }
    }
}

/// Periodic neighbour offsets of every point along each axis.
struct Stencil {
    dims: usize,
    n: usize,
}

impl Stencil {
    #[inline]
    fn neighbours(&self, idx: usize, axis: usize) -> (usize, usize) {
        let n = self.n;
        if self.dims == 1 || axis == 0 {
            // x is the fastest axis
            let row = idx - idx % n;
            let x = idx % n;
            (row + (x + n - 1) % n, row + (x + 1) % n)
        } else {
            let y = idx / n;
            let x = idx % n;
            (((y + n - 1) % n) * n + x, ((y + 1) % n) * n + x)
        }
    }

    fn laplacian(&self, u: &[f64], idx: usize) -> f64 {
        let mut acc = -2.0 * self.dims as f64 * u[idx];
        for axis in 0..self.dims {
            let (m, p) = self.neighbours(idx, axis);
            acc += u[m] + u[p];
        }
        acc
    }
}

/// Advance `state` (layout `[channel, y, x]`, padded to [`CHANNELS`]) by one
/// explicit step. Diffusion terms use second-order central differences;
/// advection uses first-order upwinding so that a unit Courant number is an
/// exact circular shift.
pub fn step_system(spec: &SystemSpec, state: &[f64]) -> Result<Vec<f64>> {
    let tag = spec.tag();
    let points = tag.points();
    if state.len() != tag.state_len() {
        return Err(LgsError::Shape(format!(
            "state has {} values, {} expects {}",
            state.len(),
            tag,
            tag.state_len()
        )));
    }
    let stencil = Stencil {
        dims: spec.dims as usize,
        n: spec.grid_size,
    };
    let dx = spec.dx();
    let dx2 = dx * dx;
    let mut next = state.to_vec();
    let u = &state[..points];
    match spec.kind {
        SystemKind::Heat => {
            let r = spec.params[0] * spec.dt / dx2;
            for i in 0..points {
                next[i] = u[i] + r * stencil.laplacian(u, i);
            }
        }
        SystemKind::Advection => {
            let courant = spec.courant_numbers()?;
            for i in 0..points {
                let mut du = 0.0;
                for (axis, &c) in courant.iter().enumerate() {
                    let (m, p) = stencil.neighbours(i, axis);
                    du -= if c >= 0.0 {
                        c * (u[i] - u[m])
                    } else {
                        c * (u[p] - u[i])
                    };
                }
                next[i] = u[i] + du;
            }
        }
        SystemKind::Burgers => {
            let r = spec.params[0] * spec.dt / dx2;
            let half = spec.dt / (2.0 * dx);
            for i in 0..points {
                let mut flux = 0.0;
                for axis in 0..stencil.dims {
                    let (m, p) = stencil.neighbours(i, axis);
                    flux += 0.5 * (u[p] * u[p] - u[m] * u[m]);
                }
                next[i] = u[i] - half * flux + r * stencil.laplacian(u, i);
            }
        }
        SystemKind::GrayScott => {
            let (feed, kill, du, dv) = (spec.params[0], spec.params[1], spec.params[2], spec.params[3]);
            let v = &state[points..2 * points];
            for i in 0..points {
                let uvv = u[i] * v[i] * v[i];
                next[i] = u[i] + spec.dt * (du * stencil.laplacian(u, i) / dx2 - uvv + feed * (1.0 - u[i]));
                next[points + i] = v[i]
                    + spec.dt * (dv * stencil.laplacian(v, i) / dx2 + uvv - (feed + kill) * v[i]);
            }
        }
    }
    if let Some(cell) = first_non_finite(&next) {
        return Err(LgsError::StabilityViolation { cell });
    }
    Ok(next)
}
