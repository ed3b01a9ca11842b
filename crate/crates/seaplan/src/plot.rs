//! Static figures of a planned horizon.
//!
//! Every figure is written twice: as a long-form CSV of line segments and
//! cells, and as an SVG rendered from exactly those rows.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::planner::PlanResult;
use crate::terrain::{SeafloorMap, TerrainError};

/// Upper bound on floor cells per axis in the top view.
pub const FLOOR_CELLS: usize = 40;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 600.0;
const PAD: f64 = 40.0;

pub const PLOT_HEADER: &str = "layer,k,id_a,id_b,u0,v0,u1,v1,value";

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("plot data line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// `x` against `y`.
    Top,
    /// `x` against `z`.
    Profile,
}

impl View {
    pub fn name(self) -> &'static str {
        match self {
            View::Top => "top",
            View::Profile => "profile",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Layer {
    Floor,
    UsvTrack,
    AuvTrack,
    A2u,
    A2a,
}

impl Layer {
    pub fn name(self) -> &'static str {
        match self {
            Layer::Floor => "floor",
            Layer::UsvTrack => "usv_track",
            Layer::AuvTrack => "auv_track",
            Layer::A2u => "a2u",
            Layer::A2a => "a2a",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Layer::Floor, Layer::UsvTrack, Layer::AuvTrack, Layer::A2u, Layer::A2a]
            .into_iter()
            .find(|l| l.name() == s)
    }
}

/// One segment (or, for top-view floor cells, one rectangle) in figure
/// coordinates. Body id 0 is the surface vehicle; AUVs are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub layer: Layer,
    pub k: Option<usize>,
    pub id_a: usize,
    pub id_b: usize,
    pub from: (f64, f64),
    pub to: (f64, f64),
    /// Floor depth for floor rows.
    pub value: Option<f64>,
}

/// The steps whose graphs are drawn: the requested ones inside `1..=K`, or
/// first, middle and last when none are requested.
pub fn rendered_steps(k_steps: usize, requested: &[usize]) -> Vec<usize> {
    let mut steps: Vec<usize> = if requested.is_empty() {
        vec![1, k_steps.div_ceil(2), k_steps]
    } else {
        requested.to_vec()
    };
    steps.retain(|&k| k >= 1 && k <= k_steps);
    steps.sort_unstable();
    steps.dedup();
    steps
}

pub fn figure_rows(
    result: &PlanResult,
    map: &SeafloorMap,
    view: View,
    steps: &[usize],
) -> Result<Vec<PlotRow>, TerrainError> {
    let t = &result.trajectory;
    let kk = t.k_steps();
    let n = t.n_auv;
    let project = |p: nalgebra::Vector3<f64>| match view {
        View::Top => (p.x, p.y),
        View::Profile => (p.x, p.z),
    };
    let usv3 = |k: usize| {
        let u = t.usv(k);
        nalgebra::Vector3::new(u.x, u.y, 0.0)
    };
    let seg = |layer, k, id_a, id_b, from, to| PlotRow {
        layer,
        k: Some(k),
        id_a,
        id_b,
        from,
        to,
        value: None,
    };

    let mut rows = Vec::new();
    match view {
        View::Top => rows.extend(floor_cells(result, map)?),
        View::Profile => {
            for a in 0..n {
                for k in 1..=kk {
                    let (p0, p1) = (t.position(k - 1, a), t.position(k, a));
                    let (z0, z1) = (map.depth_at(p0.x, p0.y)?, map.depth_at(p1.x, p1.y)?);
                    let mut r = seg(Layer::Floor, k, a + 1, a + 1, (p0.x, z0), (p1.x, z1));
                    r.value = Some(z1);
                    rows.push(r);
                }
            }
        }
    }
    for k in 1..=kk {
        rows.push(seg(Layer::UsvTrack, k, 0, 0, project(usv3(k - 1)), project(usv3(k))));
    }
    for a in 0..n {
        for k in 1..=kk {
            rows.push(seg(Layer::AuvTrack, k, a + 1, a + 1, project(t.position(k - 1, a)), project(t.position(k, a))));
        }
    }
    for &k in steps {
        let Some(choice) = result.graphs.a2u.get(k - 1) else { continue };
        let s = choice.selected;
        rows.push(seg(Layer::A2u, k, s + 1, 0, project(t.position(k, s)), project(usv3(k))));
        for &(i, j) in &result.graphs.a2a[k - 1].edges {
            rows.push(seg(Layer::A2a, k, i + 1, j + 1, project(t.position(k, i)), project(t.position(k, j))));
        }
    }
    Ok(rows)
}

fn floor_cells(result: &PlanResult, map: &SeafloorMap) -> Result<Vec<PlotRow>, TerrainError> {
    let t = &result.trajectory;
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for k in 0..=t.k_steps() {
        let u = t.usv(k);
        let mut pts = vec![(u.x, u.y)];
        pts.extend(t.positions(k).iter().map(|p| (p.x, p.y)));
        for (x, y) in pts {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
    }
    let pad = 100.0;
    let x0 = (lo.0 - pad).max(map.origin.0);
    let y0 = (lo.1 - pad).max(map.origin.1);
    let x1 = (hi.0 + pad).min(map.x_max());
    let y1 = (hi.1 + pad).min(map.y_max());
    let nx = (((x1 - x0) / map.cell.0).ceil() as usize).clamp(1, FLOOR_CELLS);
    let ny = (((y1 - y0) / map.cell.1).ceil() as usize).clamp(1, FLOOR_CELLS);
    let (dx, dy) = ((x1 - x0) / nx as f64, (y1 - y0) / ny as f64);
    let mut rows = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (cx0, cy0) = (x0 + i as f64 * dx, y0 + j as f64 * dy);
            let depth = map.depth_at(cx0 + 0.5 * dx, cy0 + 0.5 * dy)?;
            rows.push(PlotRow {
                layer: Layer::Floor,
                k: None,
                id_a: 0,
                id_b: 0,
                from: (cx0, cy0),
                to: (cx0 + dx, cy0 + dy),
                value: Some(depth),
            });
        }
    }
    Ok(rows)
}

pub fn rows_csv(rows: &[PlotRow]) -> String {
    let mut s = String::from(PLOT_HEADER);
    s.push('\n');
    for r in rows {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        let v = r.value.map(|v| format!("{v:?}")).unwrap_or_default();
        writeln!(
            s,
            "{},{k},{},{},{:?},{:?},{:?},{:?},{v}",
            r.layer.name(),
            r.id_a,
            r.id_b,
            r.from.0,
            r.from.1,
            r.to.0,
            r.to.1
        )
        .unwrap();
    }
    s
}

pub fn parse_rows_csv(text: &str) -> Result<Vec<PlotRow>, PlotError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let err = |reason: String| PlotError::Parse { line: idx + 1, reason };
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", f.len())));
        }
        let layer = Layer::parse(f[0]).ok_or_else(|| err(format!("unknown layer `{}`", f[0])))?;
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("bad integer `{s}`: {e}")));
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("bad number `{s}`: {e}")));
        rows.push(PlotRow {
            layer,
            k: if f[1].is_empty() { None } else { Some(int(f[1])?) },
            id_a: int(f[2])?,
            id_b: int(f[3])?,
            from: (num(f[4])?, num(f[5])?),
            to: (num(f[6])?, num(f[7])?),
            value: if f[8].is_empty() { None } else { Some(num(f[8])?) },
        });
    }
    Ok(rows)
}

struct Frame {
    u0: f64,
    v0: f64,
    su: f64,
    sv: f64,
}

impl Frame {
    fn fit(rows: &[PlotRow], equal: bool) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for r in rows {
            for (u, v) in [r.from, r.to] {
                lo = (lo.0.min(u), lo.1.min(v));
                hi = (hi.0.max(u), hi.1.max(v));
            }
        }
        if !lo.0.is_finite() {
            lo = (0.0, 0.0);
            hi = (1.0, 1.0);
        }
        let du = (hi.0 - lo.0).max(1.0);
        let dv = (hi.1 - lo.1).max(1.0);
        let (mut su, mut sv) = ((WIDTH - 2.0 * PAD) / du, (HEIGHT - 2.0 * PAD) / dv);
        if equal {
            su = su.min(sv);
            sv = su;
        }
        Self {
            u0: lo.0,
            v0: lo.1,
            su,
            sv,
        }
    }

    fn px(&self, (u, v): (f64, f64)) -> (f64, f64) {
        (PAD + (u - self.u0) * self.su, HEIGHT - PAD - (v - self.v0) * self.sv)
    }
}

fn depth_color(depth: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((depth - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let r = (20.0 + 150.0 * t) as u8;
    let g = (40.0 + 160.0 * t) as u8;
    let b = (110.0 + 120.0 * t) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub fn rows_svg(view: View, title: &str, rows: &[PlotRow]) -> String {
    let frame = Frame::fit(rows, view == View::Top);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();

    let depths: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
    let dlo = depths.iter().copied().fold(f64::INFINITY, f64::min);
    let dhi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for r in rows {
        let (a, b) = (frame.px(r.from), frame.px(r.to));
        let k = r.k.map(|k| format!(r#" data-k="{k}""#)).unwrap_or_default();
        match (r.layer, view) {
            (Layer::Floor, View::Top) => {
                let fill = depth_color(r.value.unwrap_or(dlo), dlo, dhi);
                writeln!(
                    s,
                    r#"<rect class="floor" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    a.0.min(b.0),
                    a.1.min(b.1),
                    (b.0 - a.0).abs(),
                    (b.1 - a.1).abs()
                )
                .unwrap();
            }
            (layer, _) => {
                let (stroke, width, dash) = match layer {
                    Layer::Floor => ("#7a5230", 1.5, ""),
                    Layer::UsvTrack => ("#d62728", 2.0, ""),
                    Layer::AuvTrack => ("#1f77b4", 1.2, ""),
                    Layer::A2u => ("#2ca02c", 1.0, r#" stroke-dasharray="4 3""#),
                    Layer::A2a => ("#ff7f0e", 1.0, ""),
                };
                writeln!(
                    s,
                    r#"<line class="{}"{k} data-a="{}" data-b="{}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="{width}"{dash}/>"#,
                    layer.name(),
                    r.id_a,
                    r.id_b,
                    a.0,
                    a.1,
                    b.0,
                    b.1
                )
                .unwrap();
            }
        }
    }
    let axes = match view {
        View::Top => "x (m) / y (m)",
        View::Profile => "x (m) / z (m)",
    };
    writeln!(s, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{title} [{axes}]</text>"#).unwrap();
    s.push_str("</svg>\n");
    s
}

/// Writes `path` through a temporary file in the same directory.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes `hNN_top.{svg,csv}` and `hNN_profile.{svg,csv}` for each horizon.
pub fn emit_plot_files(
    horizons: &[PlanResult],
    map: &SeafloorMap,
    dir: &Path,
    requested_steps: &[usize],
) -> Result<Vec<PathBuf>, PlotError> {
    let mut files = Vec::new();
    for (h, result) in horizons.iter().enumerate() {
        let steps = rendered_steps(result.trajectory.k_steps(), requested_steps);
        for view in [View::Top, View::Profile] {
            let rows = figure_rows(result, map, view, &steps)?;
            let stem = format!("h{:02}_{}", h + 1, view.name());
            let title = format!("horizon {} {} view", h + 1, view.name());
            for (ext, body) in [("svg", rows_svg(view, &title, &rows)), ("csv", rows_csv(&rows))] {
                let path = dir.join(format!("{stem}.{ext}"));
                write_atomic(&path, body.as_bytes()).map_err(|source| PlotError::Io {
                    path: path.clone(),
                    source,
                })?;
                files.push(path);
            }
        }
    }
    Ok(files)
}
