//! Trajectory data model.
//!
//! A [`Trajectory`] is an ordered list of states in `R^d` sampled at a fixed
//! interval. A [`MeanTrajectory`] is the representative path of one cluster,
//! carrying per-state speeds and the Gaussian emission covariance used by the
//! alignment model.

mod dtw;
mod generate;
pub mod io;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CalmError, Result};

pub use dtw::{dtw_path, dtw_states, dtwd, WarpingPath};
pub use generate::{generate_dataset, DatasetKind, GeneratorParams};

/// A point in `R^d`.
pub type Point = Vec<f64>;

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_states(states: &[Point], min_len: usize) -> Result<usize> {
    if states.len() < min_len {
        return Err(CalmError::invalid(
            "states",
            format!("need at least {min_len} states, got {}", states.len()),
        ));
    }
    let d = states[0].len();
    if d == 0 {
        return Err(CalmError::invalid("states", "zero-dimensional state"));
    }
    for s in states {
        if s.len() != d {
            return Err(CalmError::DimensionMismatch {
                field: "states",
                expected: d,
                got: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(CalmError::invalid("states", "non-finite coordinate"));
        }
    }
    Ok(d)
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(CalmError::invalid("dt", format!("must be finite and > 0, got {dt}")));
    }
    Ok(())
}

/// Ordered states sampled at a constant time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Point>,
    dt: f64,
}

impl Trajectory {
    /// Builds a trajectory, rejecting fewer than two states, ragged
    /// dimensions, non-finite coordinates or a non-positive `dt`.
    pub fn new(states: Vec<Point>, dt: f64) -> Result<Self> {
        check_states(&states, 2)?;
        check_dt(dt)?;
        Ok(Self { states, dt })
    }

    /// Like [`Trajectory::new`] but accepts a single state. Used for the
    /// history of a rollout that has only observed its starting point.
    pub fn from_partial(states: Vec<Point>, dt: f64) -> Result<Self> {
        check_states(&states, 1)?;
        check_dt(dt)?;
        Ok(Self { states, dt })
    }

    pub fn states(&self) -> &[Point] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }

    pub fn path_length(&self) -> f64 {
        path_length(&self.states)
    }

    pub fn into_states(self) -> Vec<Point> {
        self.states
    }

    /// Piecewise-linear position at time `t` (clamped to the trajectory span).
    pub fn sample_at(&self, t: f64) -> Point {
        let u = (t / self.dt).clamp(0.0, (self.states.len() - 1) as f64);
        let i = (u.floor() as usize).min(self.states.len() - 2);
        let f = u - i as f64;
        lerp(&self.states[i], &self.states[i + 1], f)
    }
}

pub(crate) fn lerp(a: &[f64], b: &[f64], f: f64) -> Point {
    a.iter().zip(b).map(|(x, y)| x + (y - x) * f).collect()
}

pub(crate) fn path_length(states: &[Point]) -> f64 {
    states.windows(2).map(|w| dist(&w[0], &w[1])).sum()
}

/// Mean distance between consecutive states.
pub fn mean_spacing(states: &[Point]) -> f64 {
    if states.len() < 2 {
        return 0.0;
    }
    path_length(states) / (states.len() - 1) as f64
}

/// Resamples `traj` at interval `dt_target` by linear interpolation.
///
/// The first and last states are copied exactly. When the duration is not a
/// multiple of `dt_target` the final sample is the original endpoint, so the
/// last interval may be shorter than `dt_target`.
pub fn resample_uniform(traj: &Trajectory, dt_target: f64) -> Result<Trajectory> {
    if !(dt_target.is_finite() && dt_target > 0.0) {
        return Err(CalmError::invalid(
            "dt_target",
            format!("must be finite and > 0, got {dt_target}"),
        ));
    }
    let duration = traj.duration();
    let ratio = duration / dt_target;
    // Absorb rounding so that e.g. 1.0/0.1 gives 10 intervals, not 9.
    let steps = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let steps = steps.max(1);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(traj.first().to_vec());
    for k in 1..steps {
        states.push(traj.sample_at(k as f64 * dt_target));
    }
    states.push(traj.last().to_vec());
    Trajectory::new(states, dt_target)
}

/// Resamples to exactly `n` states spanning the same duration.
pub fn resample_to_len(traj: &Trajectory, n: usize) -> Result<Trajectory> {
    if n < 2 {
        return Err(CalmError::invalid("n", "need at least 2 states"));
    }
    if n == traj.len() {
        return Ok(traj.clone());
    }
    let dt = traj.duration() / (n - 1) as f64;
    let mut states = Vec::with_capacity(n);
    states.push(traj.first().to_vec());
    let scale = (traj.len() - 1) as f64 / (n - 1) as f64;
    for k in 1..n - 1 {
        let u = k as f64 * scale;
        let i = (u.floor() as usize).min(traj.len() - 2);
        states.push(lerp(&traj.states[i], &traj.states[i + 1], u - i as f64));
    }
    states.push(traj.last().to_vec());
    Trajectory::new(states, dt)
}

/// Forward-difference speeds `||x[i+1] - x[i]|| / dt`; the last entry repeats
/// its predecessor.
pub fn estimate_speeds(states: &[Point], dt: f64) -> Result<Vec<f64>> {
    if states.len() < 2 {
        return Err(CalmError::invalid("states", "need at least 2 states"));
    }
    check_dt(dt)?;
    let mut speeds: Vec<f64> = states.windows(2).map(|w| dist(&w[0], &w[1]) / dt).collect();
    speeds.push(speeds[speeds.len() - 1]);
    Ok(speeds)
}

/// Representative path of one cluster.
#[derive(Debug, Clone)]
pub struct MeanTrajectory {
    states: Vec<Point>,
    dt: f64,
    speeds: Vec<f64>,
    emission_cov: Vec<Vec<f64>>,
    precision: Vec<f64>,
    log_norm: f64,
}

impl PartialEq for MeanTrajectory {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
            && self.dt == other.dt
            && self.speeds == other.speeds
            && self.emission_cov == other.emission_cov
    }
}

impl MeanTrajectory {
    /// Builds a mean trajectory with speeds estimated from `states`.
    pub fn new(states: Vec<Point>, dt: f64, emission_cov: Vec<Vec<f64>>) -> Result<Self> {
        check_states(&states, 1)?;
        let speeds = if states.len() >= 2 {
            estimate_speeds(&states, dt)?
        } else {
            vec![0.0]
        };
        Self::with_speeds(states, dt, speeds, emission_cov)
    }

    /// Isotropic covariance `variance * I`.
    pub fn isotropic(states: Vec<Point>, dt: f64, variance: f64) -> Result<Self> {
        let d = states.first().map_or(0, Vec::len);
        Self::new(states, dt, scaled_identity(d, variance))
    }

    pub fn with_speeds(states: Vec<Point>, dt: f64, speeds: Vec<f64>, emission_cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = check_states(&states, 1)?;
        check_dt(dt)?;
        if speeds.len() != states.len() {
            return Err(CalmError::DimensionMismatch {
                field: "speeds",
                expected: states.len(),
                got: speeds.len(),
            });
        }
        if speeds.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(CalmError::invalid("speeds", "must be finite and non-negative"));
        }
        let (precision, log_det) = factor_covariance(&emission_cov, d)?;
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            states,
            dt,
            speeds,
            emission_cov,
            precision,
            log_norm,
        })
    }

    pub fn states(&self) -> &[Point] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn emission_cov(&self) -> &[Vec<f64>] {
        &self.emission_cov
    }

    /// Number of states `F`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn endpoint(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    pub fn spacing(&self) -> f64 {
        mean_spacing(&self.states)
    }

    /// Row-major inverse of the emission covariance.
    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    /// Applies the precision matrix to `v`.
    pub(crate) fn precision_mul(&self, v: &[f64]) -> Point {
        let d = v.len();
        (0..d)
            .map(|r| (0..d).map(|c| self.precision[r * d + c] * v[c]).sum())
            .collect()
    }

    /// `log N(x | states[i], emission_cov)`; caller guarantees `i < F` and
    /// matching dimension.
    pub(crate) fn log_emission_unchecked(&self, x: &[f64], i: usize) -> f64 {
        let d = x.len();
        let mu = &self.states[i];
        let mut quad = 0.0;
        for r in 0..d {
            let dr = x[r] - mu[r];
            let mut acc = 0.0;
            for c in 0..d {
                acc += self.precision[r * d + c] * (x[c] - mu[c]);
            }
            quad += dr * acc;
        }
        self.log_norm - 0.5 * quad
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(self.states.clone(), self.dt)
    }
}

pub(crate) fn scaled_identity(d: usize, v: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|r| (0..d).map(|c| if r == c { v } else { 0.0 }).collect())
        .collect()
}

/// Validates a covariance matrix and returns its row-major inverse and log
/// determinant.
fn factor_covariance(cov: &[Vec<f64>], d: usize) -> Result<(Vec<f64>, f64)> {
    if cov.len() != d {
        return Err(CalmError::DimensionMismatch {
            field: "emission_cov",
            expected: d,
            got: cov.len(),
        });
    }
    for row in cov {
        if row.len() != d {
            return Err(CalmError::DimensionMismatch {
                field: "emission_cov",
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(CalmError::invalid("emission_cov", "non-finite entry"));
        }
    }
    let m = DMatrix::from_fn(d, d, |r, c| cov[r][c]);
    let scale = m.amax().max(1.0);
    if (&m - m.transpose()).amax() > 1e-12 * scale {
        return Err(CalmError::invalid("emission_cov", "matrix is not symmetric"));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(CalmError::invalid("emission_cov", "matrix is not positive-definite"));
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| CalmError::invalid("emission_cov", "Cholesky factorization failed"))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let precision = (0..d)
        .flat_map(|r| (0..d).map(move |c| (r, c)))
        .map(|(r, c)| 0.5 * (inv[(r, c)] + inv[(c, r)]))
        .collect();
    Ok((precision, log_det))
}

/// A set of demonstrations sharing one state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub demos: Vec<Trajectory>,
    pub ground_truth_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        demos: Vec<Trajectory>,
        ground_truth_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if demos.is_empty() {
            return Err(CalmError::invalid("demos", "dataset has no demonstrations"));
        }
        let d = demos[0].dim();
        for demo in &demos {
            if demo.dim() != d {
                return Err(CalmError::DimensionMismatch {
                    field: "demos",
                    expected: d,
                    got: demo.dim(),
                });
            }
        }
        if let Some(labels) = &ground_truth_labels {
            if labels.len() != demos.len() {
                return Err(CalmError::DimensionMismatch {
                    field: "label",
                    expected: demos.len(),
                    got: labels.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            demos,
            ground_truth_labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.demos[0].dim()
    }

    /// Axis-aligned bounding box `(min, max)` over every demo state.
    pub fn bounding_box(&self) -> (Point, Point) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for s in self.demos.iter().flat_map(|t| t.states()) {
            for k in 0..d {
                lo[k] = lo[k].min(s[k]);
                hi[k] = hi[k].max(s[k]);
            }
        }
        (lo, hi)
    }
}

/// A crossing between two non-adjacent segments of a 2D polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfCrossing {
    /// Index of the first segment (`states[first]..states[first + 1]`).
    pub first: usize,
    pub second: usize,
    pub point: Point,
}

/// Every proper crossing between non-adjacent segments of a planar polyline.
/// Only the first two coordinates are used.
pub fn self_crossings(states: &[Point]) -> Vec<SelfCrossing> {
    let mut out = Vec::new();
    let n = states.len();
    if n < 4 {
        return out;
    }
    for a in 0..n - 1 {
        for b in a + 2..n - 1 {
            if let Some(p) = segment_intersection(&states[a], &states[a + 1], &states[b], &states[b + 1]) {
                out.push(SelfCrossing {
                    first: a,
                    second: b,
                    point: p,
                });
            }
        }
    }
    out
}

fn segment_intersection(p1: &[f64], p2: &[f64], q1: &[f64], q2: &[f64]) -> Option<Point> {
    let r = [p2[0] - p1[0], p2[1] - p1[1]];
    let s = [q2[0] - q1[0], q2[1] - q1[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let qp = [q1[0] - p1[0], q1[1] - p1[1]];
    let t = (qp[0] * s[1] - qp[1] * s[0]) / denom;
    let u = (qp[0] * r[1] - qp[1] * r[0]) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(vec![p1[0] + t * r[0], p1[1] + t * r[1]])
    } else {
        None
    }
}
