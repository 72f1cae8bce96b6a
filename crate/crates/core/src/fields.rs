//! Drift and diffusion fields over the unit disc: grid evaluation, CSV and
//! SVG export, and a few diagnostics on the resulting fields (attractors,
//! radial drift profile, rotational equivariance).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::linalg::{self, sym_eigen, Mat2, SymEigen, Vec2};
use crate::{DriftDiffusion, Error, Execution, Result};

/// Square lattice over `[-1, 1]²` keeping points with `|m| <= radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Points per axis.
    pub resolution: usize,
    pub radius: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            resolution: 21,
            radius: 1.0,
        }
    }
}

impl GridSpec {
    pub fn new(resolution: usize) -> Self {
        GridSpec {
            resolution,
            ..GridSpec::default()
        }
    }

    pub fn spacing(&self) -> f64 {
        if self.resolution > 1 {
            2.0 / (self.resolution - 1) as f64
        } else {
            2.0
        }
    }

    pub fn points(&self) -> Vec<Vec2> {
        let n = self.resolution;
        let coord = |i: usize| if n > 1 { -1.0 + self.spacing() * i as f64 } else { 0.0 };
        let mut out = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let m = [coord(i), coord(j)];
                if linalg::norm(m) <= self.radius + 1e-12 {
                    out.push(m);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    pub m: Vec2,
    pub drift: Vec2,
    pub glyph: SymEigen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    /// Lattice spacing, used to size glyphs.
    pub spacing: f64,
    pub points: Vec<FieldPoint>,
}

pub fn eval_fields<M: DriftDiffusion + Sync + ?Sized>(
    model: &M,
    grid: &GridSpec,
    exec: Execution,
) -> Result<FieldGrid> {
    eval_at(model, &grid.points(), grid.spacing(), exec)
}

pub fn eval_at<M: DriftDiffusion + Sync + ?Sized>(
    model: &M,
    points: &[Vec2],
    spacing: f64,
    exec: Execution,
) -> Result<FieldGrid> {
    let evaluated = exec.map(points.len(), |i| {
        let m = points[i];
        let g = model.cov(m);
        FieldPoint {
            m,
            drift: model.drift(m),
            glyph: sym_eigen(&g),
        }
    });
    let bad: Vec<String> = evaluated
        .iter()
        .filter(|p| {
            let e = &p.glyph;
            ![p.drift[0], p.drift[1], e.lambda1, e.lambda2, e.e1[0], e.e1[1]]
                .iter()
                .all(|v| v.is_finite())
        })
        .map(|p| format!("({}, {})", p.m[0], p.m[1]))
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFinite(format!(
            "model output at {} grid point(s): {}",
            bad.len(),
            bad.join(", ")
        )));
    }
    Ok(FieldGrid {
        spacing,
        points: evaluated,
    })
}

impl FieldGrid {
    /// Rows `mx,my,fx,fy,lambda1,lambda2,e1x,e1y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "mx,my,fx,fy,lambda1,lambda2,e1x,e1y")?;
        for p in &self.points {
            let e = &p.glyph;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                p.m[0], p.m[1], p.drift[0], p.drift[1], e.lambda1, e.lambda2, e.e1[0], e.e1[1]
            )?;
        }
        w.flush()
    }

    /// Parses the CSV written by [`FieldGrid::write_csv`]. The spacing is
    /// taken as the smallest gap between distinct `mx` values.
    pub fn read_csv<R: Read>(r: R) -> Result<FieldGrid> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(e.to_string()))?
            .clone();
        let expected = ["mx", "my", "fx", "fy", "lambda1", "lambda2", "e1x", "e1y"];
        if headers.iter().ne(expected) {
            return Err(Error::Format(format!(
                "expected header `{}`",
                expected.join(",")
            )));
        }
        let mut points = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            let mut v = [0.0; 8];
            for (k, x) in v.iter_mut().enumerate() {
                *x = rec
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format(format!("row {}: bad field {}", row + 2, expected[k])))?;
            }
            let e1 = [v[6], v[7]];
            points.push(FieldPoint {
                m: [v[0], v[1]],
                drift: [v[2], v[3]],
                glyph: SymEigen {
                    lambda1: v[4],
                    lambda2: v[5],
                    e1,
                    e2: canonical([-e1[1], e1[0]]),
                },
            });
        }
        let mut xs: Vec<f64> = points.iter().map(|p| p.m[0]).collect();
        xs.sort_by(f64::total_cmp);
        let spacing = xs
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|&d| d > 1e-9)
            .fold(f64::INFINITY, f64::min);
        let spacing = if spacing.is_finite() { spacing } else { GridSpec::default().spacing() };
        Ok(FieldGrid { spacing, points })
    }

    fn max_drift(&self) -> f64 {
        self.points.iter().map(|p| linalg::norm(p.drift)).fold(0.0, f64::max)
    }

    fn lambda_range(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|p| p.glyph.lambda2).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.glyph.lambda1).fold(0.0, f64::max);
        (lo, hi)
    }
}

fn canonical(v: Vec2) -> Vec2 {
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Colormap {
    #[default]
    Viridis,
    Magma,
    Gray,
}

impl std::str::FromStr for Colormap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viridis" => Ok(Colormap::Viridis),
            "magma" => Ok(Colormap::Magma),
            "gray" | "grey" => Ok(Colormap::Gray),
            _ => Err(Error::InvalidParameter(format!(
                "unknown colormap `{s}` (expected viridis, magma or gray)"
            ))),
        }
    }
}

impl Colormap {
    const VIRIDIS: [[u8; 3]; 5] = [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ];
    const MAGMA: [[u8; 3]; 5] = [
        [0, 0, 4],
        [81, 18, 124],
        [183, 55, 121],
        [252, 137, 97],
        [252, 253, 191],
    ];

    /// Hex colour for `t` in `[0, 1]`.
    pub fn color(self, t: f64) -> String {
        let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
        let rgb = match self {
            Colormap::Gray => {
                let v = (40.0 + 190.0 * t).round() as u8;
                [v, v, v]
            }
            Colormap::Viridis => interpolate(&Self::VIRIDIS, t),
            Colormap::Magma => interpolate(&Self::MAGMA, t),
        };
        format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
    }
}

fn interpolate(anchors: &[[u8; 3]], t: f64) -> [u8; 3] {
    let x = t * (anchors.len() - 1) as f64;
    let i = (x.floor() as usize).min(anchors.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for k in 0..3 {
        let (a, b) = (anchors[i][k] as f64, anchors[i + 1][k] as f64);
        out[k] = (a + f * (b - a)).round() as u8;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Width and height of the plot area in pixels.
    pub size: f64,
    pub colormap: Colormap,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            size: 600.0,
            colormap: Colormap::Viridis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSvgs {
    pub drift: String,
    pub diffusion: String,
}

const MARGIN: f64 = 50.0;
const LEGEND: f64 = 110.0;

struct Canvas {
    size: f64,
}

impl Canvas {
    fn px(&self, m: Vec2) -> (f64, f64) {
        let half = self.size / 2.0;
        (MARGIN + half * (1.0 + m[0]), MARGIN + half * (1.0 - m[1]))
    }

    /// Pixels per unit of `m`.
    fn unit(&self) -> f64 {
        self.size / 2.0
    }

    fn open(&self, title: &str) -> String {
        let w = self.size + 2.0 * MARGIN + LEGEND;
        let h = self.size + 2.0 * MARGIN;
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
        );
        let _ = writeln!(s, "<title>{title}</title>");
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let (x0, y0) = self.px([-1.0, 1.0]);
        let (cx, cy) = self.px([0.0, 0.0]);
        let _ = writeln!(
            s,
            r##"<g id="axes" stroke="#444" fill="none" stroke-width="1"><rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/><line x1="{x0:.2}" y1="{cy:.2}" x2="{:.2}" y2="{cy:.2}" stroke-dasharray="3,3"/><line x1="{cx:.2}" y1="{y0:.2}" x2="{cx:.2}" y2="{:.2}" stroke-dasharray="3,3"/><circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}"/></g>"##,
            self.size,
            self.size,
            x0 + self.size,
            y0 + self.size,
            self.unit()
        );
        let _ = write!(s, r#"<g id="ticks" font-family="sans-serif" font-size="12" fill="black">"#);
        for v in [-1.0f64, -0.5, 0.0, 0.5, 1.0] {
            let (tx, _) = self.px([v, 0.0]);
            let (_, ty) = self.px([0.0, v]);
            let _ = write!(
                s,
                r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle">{v}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{v}</text>"#,
                y0 + self.size + 18.0,
                x0 - 6.0,
                ty + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">m_x</text><text x="{:.2}" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {cy:.2})">m_y</text></g>"#,
            y0 + self.size + 38.0,
            x0 - 34.0,
            x0 - 34.0
        );
        s
    }

    fn legend_x(&self) -> f64 {
        MARGIN + self.size + 20.0
    }

    fn close(mut s: String) -> String {
        s.push_str("</svg>\n");
        s
    }
}

/// Arrow plot of the drift and ellipse plot of the diffusion tensor.
///
/// Arrow length is proportional to `|f|`, scaled so the longest arrow spans
/// one grid cell. Ellipse axes lie along the eigenvectors of `G` with full
/// lengths proportional to the eigenvalues, scaled so the largest axis spans
/// one grid cell; fill colour encodes `lambda1`.
pub fn render_svg(grid: &FieldGrid, options: &RenderOptions) -> FieldSvgs {
    let canvas = Canvas { size: options.size };
    let cell = grid.spacing * canvas.unit();
    let cmap = options.colormap;
    FieldSvgs {
        drift: render_drift(grid, &canvas, cell, cmap),
        diffusion: render_diffusion(grid, &canvas, cell, cmap),
    }
}

fn render_drift(grid: &FieldGrid, canvas: &Canvas, cell: f64, cmap: Colormap) -> String {
    let mut s = canvas.open("drift field");
    let fmax = grid.max_drift();
    let scale = if fmax > 0.0 { cell / fmax } else { 0.0 };
    s.push_str("<g id=\"arrows\">\n");
    for p in &grid.points {
        let mag = linalg::norm(p.drift);
        let (x, y) = canvas.px(p.m);
        let color = cmap.color(if fmax > 0.0 { mag / fmax } else { 0.0 });
        if mag * scale < 0.5 {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{color}"/>"#);
            continue;
        }
        let (dx, dy) = (p.drift[0] * scale, -p.drift[1] * scale);
        let _ = writeln!(s, "{}", arrow(x, y, x + dx, y + dy, &color));
    }
    s.push_str("</g>\n");
    let lx = canvas.legend_x();
    let _ = writeln!(
        s,
        r#"<g id="legend" font-family="sans-serif" font-size="12">{}<text x="{lx:.2}" y="{:.2}">|f| = {}</text></g>"#,
        arrow(lx, MARGIN + 10.0, lx + cell, MARGIN + 10.0, &cmap.color(1.0)),
        MARGIN + 30.0,
        short(fmax)
    );
    Canvas::close(s)
}

fn arrow(x0: f64, y0: f64, x1: f64, y1: f64, color: &str) -> String {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = dx.hypot(dy);
    let head = (0.35 * len).min(8.0);
    let (ux, uy) = (dx / len, dy / len);
    let (bx, by) = (x1 - ux * head, y1 - uy * head);
    let (px, py) = (-uy * head * 0.5, ux * head * 0.5);
    format!(
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{bx:.2}" y2="{by:.2}" stroke="{color}" stroke-width="1.5"/><polygon points="{x1:.2},{y1:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
        bx + px,
        by + py,
        bx - px,
        by - py
    )
}

fn render_diffusion(grid: &FieldGrid, canvas: &Canvas, cell: f64, cmap: Colormap) -> String {
    let mut s = canvas.open("diffusion field");
    let (lo, hi) = grid.lambda_range();
    let scale = if hi > 0.0 { cell / hi } else { 0.0 };
    let span = hi - lo;
    s.push_str("<g id=\"ellipses\" stroke=\"#222\" stroke-width=\"0.5\">\n");
    for p in &grid.points {
        let e = &p.glyph;
        let (x, y) = canvas.px(p.m);
        let rx = 0.5 * e.lambda1.max(0.0) * scale;
        let ry = 0.5 * e.lambda2.max(0.0) * scale;
        // SVG rotates clockwise with y pointing down
        let angle = -e.e1[1].atan2(e.e1[0]).to_degrees();
        let t = if span > 0.0 { (e.lambda1 - lo) / span } else { 1.0 };
        let _ = writeln!(
            s,
            r#"<ellipse cx="{x:.2}" cy="{y:.2}" rx="{rx:.3}" ry="{ry:.3}" transform="rotate({angle:.3} {x:.2} {y:.2})" fill="{}"/>"#,
            cmap.color(t)
        );
    }
    s.push_str("</g>\n");
    let lx = canvas.legend_x();
    let bar_h = 0.5 * canvas.size;
    let _ = write!(s, r#"<g id="legend" font-family="sans-serif" font-size="12">"#);
    let steps = 32;
    for k in 0..steps {
        let t = 1.0 - k as f64 / (steps - 1) as f64;
        let _ = write!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            MARGIN + bar_h * k as f64 / steps as f64,
            bar_h / steps as f64 + 0.5,
            cmap.color(t)
        );
    }
    let (hi_txt, lo_txt) = if grid.points.is_empty() {
        ("-".to_string(), "-".to_string())
    } else {
        (short(hi), short(lo))
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">λ = {hi_txt}</text><text x="{:.2}" y="{:.2}">λ = {lo_txt}</text><text x="{lx:.2}" y="{:.2}">cell = λ {}</text></g>"#,
        lx + 20.0,
        MARGIN + 10.0,
        lx + 20.0,
        MARGIN + bar_h,
        MARGIN + bar_h + 24.0,
        short(hi)
    );
    Canvas::close(s)
}

fn short(v: f64) -> String {
    format!("{v:.3e}")
}

/// Outcome of following the deterministic flow `dm/dt = f(m)` from a set of
/// starting points.
#[derive(Debug, Clone, PartialEq)]
pub struct Attractors {
    /// Distinct end points (clustered within `merge_radius`).
    pub points: Vec<Vec2>,
    /// Starting points whose flow had not settled when time ran out.
    pub unconverged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub step: f64,
    pub max_time: f64,
    /// Flow is settled once `|f| < tolerance`.
    pub tolerance: f64,
    pub merge_radius: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            step: 0.05,
            max_time: 200.0,
            tolerance: 1e-4,
            merge_radius: 0.05,
        }
    }
}

/// Stable fixed points of the drift reached from `starts`, with the flow
/// confined to the unit disc.
pub fn find_attractors<M: DriftDiffusion + Sync + ?Sized>(
    model: &M,
    starts: &[Vec2],
    options: &FlowOptions,
    exec: Execution,
) -> Attractors {
    let steps = (options.max_time / options.step).ceil() as usize;
    let ends = exec.map(starts.len(), |i| {
        let mut m = starts[i];
        for _ in 0..steps {
            let f = model.drift(m);
            if linalg::norm(f) < options.tolerance {
                return Some(m);
            }
            m = [m[0] + options.step * f[0], m[1] + options.step * f[1]];
            let n = linalg::norm(m);
            if n > 1.0 {
                m = linalg::scale(m, 1.0 / n);
            }
        }
        None
    });
    let mut points: Vec<Vec2> = Vec::new();
    let mut unconverged = 0;
    for end in ends {
        match end {
            Some(m) => {
                if !points
                    .iter()
                    .any(|p| linalg::norm(linalg::sub(*p, m)) < options.merge_radius)
                {
                    points.push(m);
                }
            }
            None => unconverged += 1,
        }
    }
    Attractors {
        points,
        unconverged,
    }
}

/// Radial drift `f(m)·m/|m|` averaged over `n_angles` directions at each
/// radius.
pub fn radial_profile<M: DriftDiffusion + ?Sized>(model: &M, radii: &[f64], n_angles: usize) -> Vec<f64> {
    radii
        .iter()
        .map(|&r| {
            (0..n_angles)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / n_angles as f64;
                    let u = [a.cos(), a.sin()];
                    linalg::dot(model.drift(linalg::scale(u, r)), u)
                })
                .sum::<f64>()
                / n_angles as f64
        })
        .collect()
}

/// Radii where the radial profile changes sign from positive to negative
/// (stable rings), linearly interpolated between samples.
pub fn stable_radii(radii: &[f64], profile: &[f64]) -> Vec<f64> {
    radii
        .windows(2)
        .zip(profile.windows(2))
        .filter(|(_, p)| p[0] > 0.0 && p[1] <= 0.0)
        .map(|(r, p)| r[0] + (r[1] - r[0]) * p[0] / (p[0] - p[1]))
        .collect()
}

/// Violation of rotational equivariance, worst over the tested rotations.
///
/// The relative errors are `Σ|f(Rm) - R f(m)| / Σ|f(m)|` for the drift and
/// the analogous Frobenius-norm ratio for `G(Rm)` against `R G(m) Rᵀ`; the
/// absolute errors are the largest single-point deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EquivarianceError {
    pub drift: f64,
    pub diffusion: f64,
    pub drift_max_abs: f64,
    pub diffusion_max_abs: f64,
}

pub fn equivariance_error<M: DriftDiffusion + ?Sized>(
    model: &M,
    points: &[Vec2],
    n_rotations: usize,
) -> EquivarianceError {
    let base: Vec<(Vec2, Mat2)> = points.iter().map(|&m| (model.drift(m), model.cov(m))).collect();
    let f_scale: f64 = base.iter().map(|(f, _)| linalg::norm(*f)).sum();
    let g_scale: f64 = base.iter().map(|(_, g)| frobenius(g)).sum();
    let mut worst = EquivarianceError::default();
    for k in 1..n_rotations {
        let rot = linalg::rotation(2.0 * PI * k as f64 / n_rotations as f64);
        let rot_t = linalg::transpose(&rot);
        let (mut fe, mut ge) = (0.0, 0.0);
        for (&m, (f, g)) in points.iter().zip(&base) {
            let rm = linalg::mat_vec(&rot, m);
            let df = linalg::norm(linalg::sub(model.drift(rm), linalg::mat_vec(&rot, *f)));
            let expected = linalg::mat_mul(&linalg::mat_mul(&rot, g), &rot_t);
            let got = model.cov(rm);
            let dg = frobenius(&[
                [got[0][0] - expected[0][0], got[0][1] - expected[0][1]],
                [got[1][0] - expected[1][0], got[1][1] - expected[1][1]],
            ]);
            fe += df;
            ge += dg;
            worst.drift_max_abs = worst.drift_max_abs.max(df);
            worst.diffusion_max_abs = worst.diffusion_max_abs.max(dg);
        }
        worst.drift = worst.drift.max(if f_scale > 0.0 { fe / f_scale } else { fe });
        worst.diffusion = worst.diffusion.max(if g_scale > 0.0 { ge / g_scale } else { ge });
    }
    worst
}

fn frobenius(g: &Mat2) -> f64 {
    g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Points of the masked lattice on its outermost ring (within one spacing of
/// the mask radius).
pub fn rim_points(grid: &GridSpec) -> Vec<Vec2> {
    grid.points()
        .into_iter()
        .filter(|&m| linalg::norm(m) > grid.radius - grid.spacing())
        .collect()
}
