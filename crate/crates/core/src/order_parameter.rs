//! Polarization order parameter, trajectory ingestion and training-set
//! augmentation.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::abm::HeadingTrajectory;
use crate::linalg::{self, norm, rotation};
use crate::{Error, Result, Vec2};

/// Velocities shorter than this cannot be normalized; their frame is invalid.
pub const MIN_SPEED: f64 = 1e-12;
/// Slack on `|m| <= 1` for accumulated rounding.
pub const DISC_TOLERANCE: f64 = 1e-9;
/// Relative tolerance on timestamps lying on the `t0 + k dt` grid.
pub const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityFrame {
    pub time: f64,
    /// Agent velocities ordered by agent id.
    pub velocities: Vec<Vec2>,
    /// Positions when the source carried them; not used for polarization.
    pub positions: Vec<Option<Vec2>>,
}

impl VelocityFrame {
    pub fn is_valid(&self) -> bool {
        !self.velocities.is_empty() && self.velocities.iter().all(|&v| norm(v) >= MIN_SPEED)
    }
}

/// Mean of the normalized velocity vectors, or `None` when some velocity has
/// zero length (the frame is invalid).
pub fn polarization(frame: &VelocityFrame) -> Option<Vec2> {
    if !frame.is_valid() {
        return None;
    }
    let n = frame.velocities.len() as f64;
    let (sx, sy) = frame.velocities.iter().fold((0.0, 0.0), |(sx, sy), &v| {
        let len = norm(v);
        (sx + v[0] / len, sy + v[1] / len)
    });
    Some([sx / n, sy / n])
}

/// A polarization time series on a uniform grid `t0 + k dt`.
///
/// Frames that could not be measured are absent: `frame[i]` is the grid
/// index of sample `i`, strictly increasing, and a jump larger than one marks
/// a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationSeries {
    dt: f64,
    t0: f64,
    frame: Vec<usize>,
    m: Vec<Vec2>,
}

impl PolarizationSeries {
    /// Gap-free series starting at time zero.
    pub fn new(dt: f64, m: Vec<Vec2>) -> Result<Self> {
        let frame = (0..m.len()).collect();
        Self::with_frames(dt, 0.0, frame, m)
    }

    pub fn with_frames(dt: f64, t0: f64, frame: Vec<usize>, m: Vec<Vec2>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if frame.len() != m.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                got: frame.len(),
            });
        }
        if frame.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "frame indices must be strictly increasing".into(),
            ));
        }
        for v in &m {
            if !(v[0].is_finite() && v[1].is_finite()) {
                return Err(Error::NonFinite(format!("polarization sample {v:?}")));
            }
            if norm(*v) > 1.0 + DISC_TOLERANCE {
                return Err(Error::OutsideDisc { norm: norm(*v) });
            }
        }
        Ok(PolarizationSeries { dt, t0, frame, m })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn samples(&self) -> &[Vec2] {
        &self.m
    }

    pub fn frames(&self) -> &[usize] {
        &self.frame
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.frame[i] as f64 * self.dt
    }

    pub fn norms(&self) -> Vec<f64> {
        self.m.iter().map(|&v| norm(v)).collect()
    }

    /// Number of grid frames missing between the first and last sample.
    pub fn missing_frames(&self) -> usize {
        match (self.frame.first(), self.frame.last()) {
            (Some(a), Some(b)) => b - a + 1 - self.frame.len(),
            _ => 0,
        }
    }

    /// Index ranges of maximal gap-free runs.
    pub fn runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.frame.len() {
            if i == self.frame.len() || self.frame[i] != self.frame[i - 1] + 1 {
                if i > start {
                    out.push(start..i);
                }
                start = i;
            }
        }
        out
    }

    /// Samples `range` as a series of their own (same grid).
    pub fn slice(&self, range: std::ops::Range<usize>) -> PolarizationSeries {
        PolarizationSeries {
            dt: self.dt,
            t0: self.t0,
            frame: self.frame[range.clone()].to_vec(),
            m: self.m[range].to_vec(),
        }
    }

    /// Joins independent recordings on one grid, leaving a one-frame gap
    /// between consecutive parts so no pair or lag spans two recordings.
    pub fn concat(parts: &[PolarizationSeries]) -> Result<PolarizationSeries> {
        let first = parts.first().ok_or(Error::Empty("series list"))?;
        let mut frame = Vec::new();
        let mut m = Vec::new();
        let mut offset = 0;
        for p in parts {
            if (p.dt - first.dt).abs() > TIME_TOLERANCE * first.dt {
                return Err(Error::InvalidParameter(format!(
                    "cannot join series with sampling intervals {} and {}",
                    first.dt, p.dt
                )));
            }
            let base = p.frame.first().copied().unwrap_or(0);
            frame.extend(p.frame.iter().map(|f| f - base + offset));
            m.extend_from_slice(&p.m);
            offset = frame.last().map_or(offset, |l| l + 2);
        }
        Ok(PolarizationSeries {
            dt: first.dt,
            t0: first.t0,
            frame,
            m,
        })
    }

    /// Drops the leading `fraction` of samples (transient from the initial
    /// condition).
    pub fn discard_burn_in(&self, fraction: f64) -> Result<PolarizationSeries> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidParameter(format!(
                "burn-in fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let skip = (self.len() as f64 * fraction).floor() as usize;
        Ok(self.slice(skip..self.len()))
    }

    /// Applies a linear isometry to every sample.
    pub fn transformed(&self, a: &linalg::Mat2) -> PolarizationSeries {
        let m = self
            .m
            .iter()
            .map(|&v| {
                let w = linalg::mat_vec(a, v);
                // isometries cannot leave the disc; clamp rounding
                let n = norm(w);
                if n > 1.0 {
                    [w[0] / n, w[1] / n]
                } else {
                    w
                }
            })
            .collect();
        PolarizationSeries {
            dt: self.dt,
            t0: self.t0,
            frame: self.frame.clone(),
            m,
        }
    }

    /// Writes the `t,mx,my` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mx,my")?;
        for (i, v) in self.m.iter().enumerate() {
            writeln!(w, "{},{},{}", self.time(i), v[0], v[1])?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a `t,mx,my` CSV. The sampling interval is the smallest time step
    /// in the file; larger steps must be whole multiples of it and are kept as
    /// gaps.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<PolarizationSeries> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let mut reader = open_csv(path)?;
        let cols = header_indices(&mut reader, &name, &["t", "mx", "my"], &[])?;
        let mut rows: Vec<(u64, f64, Vec2)> = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(&name, e))?;
            let line = line_of(&rec);
            let t = parse_field(&rec, cols[0], "t", &name, line)?;
            let mx = parse_field(&rec, cols[1], "mx", &name, line)?;
            let my = parse_field(&rec, cols[2], "my", &name, line)?;
            rows.push((line, t, [mx, my]));
        }
        if rows.is_empty() {
            return Err(Error::Empty("polarization file has no samples"));
        }
        let times: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let (t0, dt, frame) = grid_indices(&times)
            .map_err(|(i, msg)| Error::Parse {
                path: name.clone(),
                line: rows[i].0,
                msg,
            })?;
        let m = rows.into_iter().map(|r| r.2).collect();
        PolarizationSeries::with_frames(dt, t0, frame, m)
    }
}

/// Places strictly increasing timestamps on a uniform grid. Returns
/// `(t0, dt, frame indices)`; on failure the offending row and a message.
fn grid_indices(times: &[f64]) -> std::result::Result<(f64, f64, Vec<usize>), (usize, String)> {
    let t0 = times[0];
    if times.len() == 1 {
        return Ok((t0, 1.0, vec![0]));
    }
    let mut dt = f64::INFINITY;
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if step.is_nan() || step <= 0.0 {
            return Err((i + 1, "timestamps must be strictly increasing".into()));
        }
        dt = dt.min(step);
    }
    // Refine dt against the full span so long series do not accumulate the
    // rounding of a single step.
    let span_steps = ((times[times.len() - 1] - t0) / dt).round();
    if span_steps >= 1.0 {
        dt = (times[times.len() - 1] - t0) / span_steps;
    }
    let mut frame = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let k = ((t - t0) / dt).round();
        if ((t - t0) - k * dt).abs() > TIME_TOLERANCE * dt {
            return Err((
                i,
                format!("timestamp {t} is not on the sampling grid {t0} + k*{dt}"),
            ));
        }
        frame.push(k as usize);
    }
    Ok((t0, dt, frame))
}

/// Polarization series of a heading trajectory (unit speed).
pub fn series_from_headings(traj: &HeadingTrajectory) -> Result<PolarizationSeries> {
    let m = traj.frames.iter().map(|f| f.polarization()).collect();
    let t0 = traj.frames.first().map(|f| f.time).unwrap_or(0.0);
    let frame = (0..traj.frames.len()).collect();
    PolarizationSeries::with_frames(traj.sample_dt, t0, frame, m)
}

/// Result of turning velocity frames into a polarization series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBuild {
    pub series: PolarizationSeries,
    /// Frames dropped because a velocity had zero length.
    pub dropped: usize,
}

/// Polarization series of uniformly sampled velocity frames. Invalid frames
/// are dropped and leave a gap.
pub fn series_from_frames(frames: &[VelocityFrame]) -> Result<SeriesBuild> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames"));
    }
    let times: Vec<f64> = frames.iter().map(|f| f.time).collect();
    let t0 = times[0];
    let dt = if frames.len() > 1 {
        (times[times.len() - 1] - t0) / (frames.len() - 1) as f64
    } else {
        1.0
    };
    if frames.len() > 1 && (dt.is_nan() || dt <= 0.0) {
        return Err(Error::NonUniformSampling("timestamps do not increase".into()));
    }
    for (k, &t) in times.iter().enumerate() {
        let expected = t0 + k as f64 * dt;
        if (t - expected).abs() > TIME_TOLERANCE * dt {
            return Err(Error::NonUniformSampling(format!(
                "frame {k} at t={t}, expected t={expected} for step {dt}"
            )));
        }
    }
    let mut frame = Vec::with_capacity(frames.len());
    let mut m = Vec::with_capacity(frames.len());
    for (k, f) in frames.iter().enumerate() {
        if let Some(p) = polarization(f) {
            frame.push(k);
            m.push(p);
        }
    }
    let dropped = frames.len() - m.len();
    Ok(SeriesBuild {
        series: PolarizationSeries::with_frames(dt, t0, frame, m)?,
        dropped,
    })
}

/// Number of series produced by [`augment`]: the original, 16 rotations and
/// two mirror images.
pub const AUGMENT_FACTOR: usize = 19;

/// The original series, 16 copies rotated by `-π + kπ/8` (`k = 0..15`), a
/// horizontally flipped copy (`mx` negated) and a vertically flipped copy
/// (`my` negated).
pub fn augment(series: &PolarizationSeries) -> Vec<PolarizationSeries> {
    augment_with(series, 16, true)
}

/// [`augment`] with a configurable rotation count; rotation angles are
/// `-π + 2πk/rotations`.
pub fn augment_with(
    series: &PolarizationSeries,
    rotations: usize,
    flips: bool,
) -> Vec<PolarizationSeries> {
    let mut out = Vec::with_capacity(1 + rotations + 2);
    out.push(series.clone());
    for k in 0..rotations {
        let angle = -PI + 2.0 * PI * k as f64 / rotations as f64;
        out.push(series.transformed(&rotation(angle)));
    }
    if flips {
        out.push(series.transformed(&[[-1.0, 0.0], [0.0, 1.0]]));
        out.push(series.transformed(&[[1.0, 0.0], [0.0, -1.0]]));
    }
    out
}

/// Loads a trajectory CSV, either velocity form (`t,agent_id,x,y,vx,vy`,
/// positions optional) or heading form (`t,agent_id,theta`, unit speed).
/// Rows are grouped into frames by timestamp and agents ordered by id.
pub fn load_trajectory_csv(path: impl AsRef<Path>) -> Result<Vec<VelocityFrame>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_error(&name, e))?.clone();
    let has = |c: &str| headers.iter().any(|h| h == c);
    let heading_form = has("theta") && !has("vx");

    struct Row {
        line: u64,
        t: f64,
        id: u64,
        pos: Option<Vec2>,
        vel: Vec2,
    }
    let mut rows = Vec::new();
    if heading_form {
        let cols = header_indices(&mut reader, &name, &["t", "agent_id", "theta"], &[])?;
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(&name, e))?;
            let line = line_of(&rec);
            let theta = parse_field(&rec, cols[2], "theta", &name, line)?;
            let (s, c) = theta.sin_cos();
            rows.push(Row {
                line,
                t: parse_field(&rec, cols[0], "t", &name, line)?,
                id: parse_id(&rec, cols[1], &name, line)?,
                pos: None,
                vel: [c, s],
            });
        }
    } else {
        let cols = header_indices(
            &mut reader,
            &name,
            &["t", "agent_id", "vx", "vy"],
            &["x", "y"],
        )?;
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(&name, e))?;
            let line = line_of(&rec);
            let pos = match (cols[4], cols[5]) {
                (Some(xi), Some(yi)) => {
                    let (xs, ys) = (rec.get(xi).unwrap_or(""), rec.get(yi).unwrap_or(""));
                    if xs.is_empty() && ys.is_empty() {
                        None
                    } else {
                        Some([
                            parse_field(&rec, Some(xi), "x", &name, line)?,
                            parse_field(&rec, Some(yi), "y", &name, line)?,
                        ])
                    }
                }
                _ => None,
            };
            rows.push(Row {
                line,
                t: parse_field(&rec, cols[0], "t", &name, line)?,
                id: parse_id(&rec, cols[1], &name, line)?,
                pos,
                vel: [
                    parse_field(&rec, cols[2], "vx", &name, line)?,
                    parse_field(&rec, cols[3], "vy", &name, line)?,
                ],
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("trajectory file has no rows"));
    }
    rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.id.cmp(&b.id)));

    let mut frames: Vec<VelocityFrame> = Vec::new();
    let mut ids: Vec<u64> = Vec::new();
    let mut reference_ids: Option<Vec<u64>> = None;
    let mut start = 0;
    for i in 1..=rows.len() {
        if i < rows.len() && rows[i].t == rows[start].t {
            continue;
        }
        let group = &rows[start..i];
        let first_line = group.iter().map(|r| r.line).min().unwrap_or(0);
        ids.clear();
        ids.extend(group.iter().map(|r| r.id));
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parse {
                path: name.clone(),
                line: first_line,
                msg: format!("duplicate agent id at t={}", group[0].t),
            });
        }
        match &reference_ids {
            None => reference_ids = Some(ids.clone()),
            Some(r) if *r != ids => {
                return Err(Error::Parse {
                    path: name.clone(),
                    line: first_line,
                    msg: format!(
                        "frame at t={} has {} agents, expected {}",
                        group[0].t,
                        ids.len(),
                        r.len()
                    ),
                });
            }
            _ => {}
        }
        frames.push(VelocityFrame {
            time: group[0].t,
            velocities: group.iter().map(|r| r.vel).collect(),
            positions: group.iter().map(|r| r.pos).collect(),
        });
        start = i;
    }
    Ok(frames)
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        path: path.to_string(),
        line,
        msg: e.to_string(),
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Column positions of `required` (always `Some`) followed by `optional`.
fn header_indices<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    path: &str,
    required: &[&str],
    optional: &[&str],
) -> Result<Vec<Option<usize>>> {
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    let find = |c: &str| headers.iter().position(|h| h == c);
    let mut out = Vec::new();
    for c in required {
        match find(c) {
            Some(i) => out.push(Some(i)),
            None => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: 1,
                    msg: format!("missing column `{c}`"),
                })
            }
        }
    }
    out.extend(optional.iter().map(|c| find(c)));
    Ok(out)
}

fn parse_field(
    rec: &csv::StringRecord,
    col: Option<usize>,
    what: &str,
    path: &str,
    line: u64,
) -> Result<f64> {
    let raw = col.and_then(|c| rec.get(c)).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line,
            msg: format!("cannot parse `{raw}` as a finite number for `{what}`"),
        })
}

fn parse_id(rec: &csv::StringRecord, col: Option<usize>, path: &str, line: u64) -> Result<u64> {
    let raw = col.and_then(|c| rec.get(c)).unwrap_or("");
    raw.parse::<u64>().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        msg: format!("cannot parse `{raw}` as an agent id"),
    })
}
