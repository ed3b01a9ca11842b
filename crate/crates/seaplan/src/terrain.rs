//! Gridded seafloor, collision and line-of-sight queries, and synthetic
//! terrain generation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default clearance above the floor (m).
pub const DEFAULT_CLEARANCE: f64 = 5.0;
/// Default line-of-sight sampling resolution (m).
pub const DEFAULT_LOS_RESOLUTION: f64 = 10.0;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("point ({x}, {y}) lies outside the terrain grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid terrain parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("terrain file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Depth field `Z(x, y)` sampled on a regular grid.
///
/// Node `(i, j)` sits at `(x0 + i dx, y0 + j dy)` and is stored row-major
/// with `j` selecting the row.
#[derive(Debug, Clone, PartialEq)]
pub struct SeafloorMap {
    pub origin: (f64, f64),
    pub cell: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub depths: Vec<f64>,
    /// Required clearance above the floor (m).
    pub clearance: f64,
}

/// Evenly spaced points on a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LosSample {
    pub points: Vec<Vector3<f64>>,
    pub resolution: f64,
}

impl SeafloorMap {
    pub fn new(
        origin: (f64, f64),
        cell: (f64, f64),
        nx: usize,
        ny: usize,
        depths: Vec<f64>,
        clearance: f64,
    ) -> Result<Self, TerrainError> {
        let bad = |field, reason: String| Err(TerrainError::InvalidParameter { field, reason });
        if !(cell.0 > 0.0 && cell.1 > 0.0) {
            return bad("cell", format!("cell sizes must be positive, got {cell:?}"));
        }
        if nx < 2 || ny < 2 {
            return bad("dims", format!("need at least 2x2 nodes, got {nx}x{ny}"));
        }
        if depths.len() != nx * ny {
            return bad("depths", format!("expected {} values, got {}", nx * ny, depths.len()));
        }
        if let Some(z) = depths.iter().find(|z| !z.is_finite() || **z >= 0.0) {
            return bad("depths", format!("depth {z} is not finite and below the surface"));
        }
        if !(clearance > 0.0 && clearance.is_finite()) {
            return bad("clearance", format!("must be positive, got {clearance}"));
        }
        Ok(Self {
            origin,
            cell,
            nx,
            ny,
            depths,
            clearance,
        })
    }

    /// Constant-depth map covering `[x0, x0 + width] x [y0, y0 + height]`.
    pub fn flat(
        origin: (f64, f64),
        extent: (f64, f64),
        cell: f64,
        depth: f64,
        clearance: f64,
    ) -> Result<Self, TerrainError> {
        let nx = (extent.0 / cell).ceil() as usize + 1;
        let ny = (extent.1 / cell).ceil() as usize + 1;
        Self::new(origin, (cell, cell), nx, ny, vec![depth; nx * ny], clearance)
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.depths[j * self.nx + i]
    }

    pub fn x_max(&self) -> f64 {
        self.origin.0 + (self.nx - 1) as f64 * self.cell.0
    }

    pub fn y_max(&self) -> f64 {
        self.origin.1 + (self.ny - 1) as f64 * self.cell.1
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.origin.0 && x <= self.x_max() && y >= self.origin.1 && y <= self.y_max()
    }

    /// Bilinear interpolation of the floor depth.
    pub fn depth_at(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let fx = (x - self.origin.0) / self.cell.0;
        let fy = (y - self.origin.1) / self.cell.1;
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let z00 = self.node(i, j);
        let z10 = self.node(i + 1, j);
        let z01 = self.node(i, j + 1);
        let z11 = self.node(i + 1, j + 1);
        Ok(z00 * (1.0 - tx) * (1.0 - ty) + z10 * tx * (1.0 - ty) + z01 * (1.0 - tx) * ty + z11 * tx * ty)
    }

    /// `z >= floor + clearance`.
    pub fn collision_free(&self, p: &Vector3<f64>) -> Result<bool, TerrainError> {
        Ok(p.z >= self.depth_at(p.x, p.y)? + self.clearance)
    }

    /// Signed clearance margin `z - (floor + clearance)`.
    pub fn clearance_margin(&self, p: &Vector3<f64>) -> Result<f64, TerrainError> {
        Ok(p.z - (self.depth_at(p.x, p.y)? + self.clearance))
    }

    /// True iff every sample of the segment lies strictly above floor + clearance.
    pub fn los_clear(&self, a: &Vector3<f64>, b: &Vector3<f64>, r: f64) -> Result<bool, TerrainError> {
        for p in interpolate_line(a, b, r).points {
            if p.z <= self.depth_at(p.x, p.y)? + self.clearance {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn max_depth(&self) -> f64 {
        self.depths.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plain-text form: a header followed by one comma-separated row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "origin {:?} {:?}", self.origin.0, self.origin.1).unwrap();
        writeln!(s, "cell {:?} {:?}", self.cell.0, self.cell.1).unwrap();
        writeln!(s, "dims {} {}", self.nx, self.ny).unwrap();
        writeln!(s, "clearance {:?}", self.clearance).unwrap();
        for row in self.depths.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|z| format!("{z:?}")).collect();
            writeln!(s, "{}", line.join(",")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TerrainError> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str, count: usize| -> Result<Vec<String>, TerrainError> {
            let (n, line) = lines.next().ok_or(TerrainError::Parse {
                line: 0,
                reason: format!("missing `{key}` header"),
            })?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.first() != Some(&key) || parts.len() != count + 1 {
                return Err(TerrainError::Parse {
                    line: n + 1,
                    reason: format!("expected `{key}` followed by {count} values"),
                });
            }
            Ok(parts[1..].iter().map(|s| s.to_string()).collect())
        };
        let num = |line: usize, s: &str| -> Result<f64, TerrainError> {
            s.trim().parse::<f64>().map_err(|e| TerrainError::Parse {
                line,
                reason: format!("bad number `{s}`: {e}"),
            })
        };
        let origin = header("origin", 2)?;
        let cell = header("cell", 2)?;
        let dims = header("dims", 2)?;
        let clearance = header("clearance", 1)?;
        let int = |line: usize, s: &str| -> Result<usize, TerrainError> {
            s.parse::<usize>().map_err(|e| TerrainError::Parse {
                line,
                reason: format!("bad count `{s}`: {e}"),
            })
        };
        let (nx, ny) = (int(3, &dims[0])?, int(3, &dims[1])?);
        let mut depths = Vec::with_capacity(nx * ny);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<&str> = line.split(',').collect();
            if row.len() != nx {
                return Err(TerrainError::Parse {
                    line: n + 1,
                    reason: format!("expected {nx} values, got {}", row.len()),
                });
            }
            for v in row {
                depths.push(num(n + 1, v)?);
            }
        }
        Self::new(
            (num(1, &origin[0])?, num(1, &origin[1])?),
            (num(2, &cell[0])?, num(2, &cell[1])?),
            nx,
            ny,
            depths,
            num(4, &clearance[0])?,
        )
    }

    pub fn load(path: &Path) -> Result<Self, TerrainError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// `ceil(|b - a| / r) + 1` evenly spaced points from `a` to `b` inclusive.
pub fn interpolate_line(a: &Vector3<f64>, b: &Vector3<f64>, r: f64) -> LosSample {
    let d = b - a;
    let n = (d.norm() / r).ceil() as usize + 1;
    let points = if n == 1 {
        vec![*a]
    } else {
        (0..n)
            .map(|i| if i + 1 == n { *b } else { a + d * (i as f64 / (n - 1) as f64) })
            .collect()
    };
    LosSample { points, resolution: r }
}

/// Inputs for [`synth_terrain`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Lower-left corner `(x0, y0)` (m).
    pub origin: (f64, f64),
    /// Width and height (m).
    pub extent: (f64, f64),
    pub cell: f64,
    pub seed: u64,
    pub n_seamounts: usize,
    pub n_valleys: usize,
    pub base_depth: f64,
    /// Height of every seamount and depth of every valley (m).
    pub amplitude: f64,
    /// Gaussian widths are drawn from this range (m).
    pub sigma_range: (f64, f64),
    pub clearance: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            origin: (-3000.0, -3000.0),
            extent: (6000.0, 6000.0),
            cell: 50.0,
            seed: 1,
            n_seamounts: 4,
            n_valleys: 2,
            base_depth: -300.0,
            amplitude: 100.0,
            sigma_range: (200.0, 500.0),
            clearance: DEFAULT_CLEARANCE,
        }
    }
}

/// One Gaussian feature of a synthetic floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: (f64, f64),
    pub sigma: f64,
    /// Positive for a seamount, negative for a valley.
    pub height: f64,
}

/// Builds a floor from a flat base plus explicit Gaussian bumps.
pub fn terrain_from_bumps(
    origin: (f64, f64),
    extent: (f64, f64),
    cell: f64,
    base_depth: f64,
    bumps: &[Bump],
    clearance: f64,
) -> Result<SeafloorMap, TerrainError> {
    if !(cell > 0.0) || !(extent.0 > 0.0 && extent.1 > 0.0) {
        return Err(TerrainError::InvalidParameter {
            field: "cell",
            reason: "cell and extent must be positive".into(),
        });
    }
    let nx = (extent.0 / cell).round() as usize + 1;
    let ny = (extent.1 / cell).round() as usize + 1;
    let mut depths = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = origin.1 + j as f64 * cell;
        for i in 0..nx {
            let x = origin.0 + i as f64 * cell;
            let z = bumps.iter().fold(base_depth, |z, b| {
                let r2 = (x - b.center.0).powi(2) + (y - b.center.1).powi(2);
                z + b.height * (-r2 / (2.0 * b.sigma * b.sigma)).exp()
            });
            depths.push(z);
        }
    }
    if let Some(z) = depths.iter().copied().find(|z| *z >= 0.0) {
        return Err(TerrainError::InvalidParameter {
            field: "amplitude",
            reason: format!("terrain breaches the surface (depth {z})"),
        });
    }
    SeafloorMap::new(origin, (cell, cell), nx, ny, depths, clearance)
}

/// Deterministic sum of Gaussian seamounts and valleys on a flat base.
pub fn synth_terrain(spec: &SynthSpec) -> Result<SeafloorMap, TerrainError> {
    if spec.base_depth >= 0.0 {
        return Err(TerrainError::InvalidParameter {
            field: "base_depth",
            reason: "must be below the surface".into(),
        });
    }
    if spec.amplitude < 0.0 || spec.amplitude >= spec.base_depth.abs() {
        return Err(TerrainError::InvalidParameter {
            field: "amplitude",
            reason: format!(
                "must satisfy 0 <= amplitude < |base_depth| = {}",
                spec.base_depth.abs()
            ),
        });
    }
    let (lo, hi) = spec.sigma_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(TerrainError::InvalidParameter {
            field: "sigma_range",
            reason: "need 0 < low <= high".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut bumps = Vec::with_capacity(spec.n_seamounts + spec.n_valleys);
    for k in 0..spec.n_seamounts + spec.n_valleys {
        let cx = spec.origin.0 + rng.random::<f64>() * spec.extent.0;
        let cy = spec.origin.1 + rng.random::<f64>() * spec.extent.1;
        let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let sign = if k < spec.n_seamounts { 1.0 } else { -1.0 };
        bumps.push(Bump {
            center: (cx, cy),
            sigma,
            height: sign * spec.amplitude,
        });
    }
    terrain_from_bumps(spec.origin, spec.extent, spec.cell, spec.base_depth, &bumps, spec.clearance)
}
