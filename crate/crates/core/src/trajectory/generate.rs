//! Seeded synthetic demonstration sets.
//!
//! Every generator builds a reference curve, re-parameterises it by arc
//! length with a speed profile that slows down towards the goal, then adds a
//! per-demo smooth deformation, a mild time warp and i.i.d. position noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{dist, lerp, Dataset, Point, Trajectory};
use crate::error::{CalmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// One planar curve that crosses itself once.
    Overlap,
    /// Two motions with nearby starts that share a middle stretch, then split.
    MultiMotion,
    /// A single many-turn snake.
    Snake,
    /// A closed circle, for periodic rollouts.
    Loop,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Overlap,
        DatasetKind::MultiMotion,
        DatasetKind::Snake,
        DatasetKind::Loop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Overlap => "overlap",
            DatasetKind::MultiMotion => "multi_motion",
            DatasetKind::Snake => "snake",
            DatasetKind::Loop => "loop",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = CalmError;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CalmError::invalid("kind", format!("unknown dataset kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    /// States per demonstration.
    pub n_states: usize,
    pub dt: f64,
    /// Standard deviation of i.i.d. per-state noise.
    pub noise_std: f64,
    /// Standard deviation of the smooth per-demo deformation amplitude.
    pub deform_amp: f64,
    /// Maximum relative time warp between demos.
    pub time_warp: f64,
    /// Final speed as a fraction of the initial speed (1 = constant speed).
    pub end_speed_ratio: f64,
    /// Demos per cluster; `None` uses the kind's default (4, or 3 per
    /// cluster for `multi_motion`).
    pub demos_per_cluster: Option<usize>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            n_states: 100,
            dt: 0.1,
            noise_std: 0.01,
            deform_amp: 0.08,
            time_warp: 0.08,
            end_speed_ratio: 0.3,
            demos_per_cluster: None,
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn overlap_curve(u: f64) -> Point {
    let th = u * 1.75 * PI;
    vec![5.0 * th.cos(), 1.5 * (2.0 * th).sin()]
}

fn multi_motion_curve(u: f64, branch: usize) -> Point {
    let sign = if branch == 0 { 1.0 } else { -1.0 };
    let y = 0.3 * (1.0 - smoothstep(u / 0.15)) - 3.0 * smoothstep((u - 0.5) / 0.5);
    vec![10.0 * u, sign * y]
}

fn snake_curve(u: f64) -> Point {
    vec![10.0 * u, 2.0 * (2.5 * 2.0 * PI * u).sin() * (0.6 + 0.4 * u)]
}

fn loop_curve(u: f64) -> Point {
    let th = 2.0 * PI * u;
    vec![3.0 * th.cos(), 3.0 * th.sin()]
}

/// Samples `curve` at `n` points whose arc-length fractions follow `frac`.
fn sample_by_arc_length(curve: &dyn Fn(f64) -> Point, n: usize, frac: impl Fn(f64) -> f64) -> Vec<Point> {
    const DENSE: usize = 4000;
    let dense: Vec<Point> = (0..=DENSE).map(|k| curve(k as f64 / DENSE as f64)).collect();
    let mut cum = vec![0.0; dense.len()];
    for k in 1..dense.len() {
        cum[k] = cum[k - 1] + dist(&dense[k - 1], &dense[k]);
    }
    let total = cum[DENSE];
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let target = frac(t).clamp(0.0, 1.0) * total;
            let k = cum.partition_point(|&c| c < target).clamp(1, DENSE);
            let seg = cum[k] - cum[k - 1];
            let f = if seg > 0.0 { (target - cum[k - 1]) / seg } else { 0.0 };
            lerp(&dense[k - 1], &dense[k], f)
        })
        .collect()
}

fn make_demo(curve: &dyn Fn(f64) -> Point, params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let n = params.n_states;
    let gauss = |sd: f64| Normal::new(0.0, sd.max(0.0)).expect("finite std");
    let deform = gauss(params.deform_amp);
    let noise = gauss(params.noise_std);
    let amps: Vec<[f64; 2]> = (0..2).map(|_| [deform.sample(rng), deform.sample(rng)]).collect();
    let warp = if params.time_warp > 0.0 {
        rng.random_range(-params.time_warp..params.time_warp)
    } else {
        0.0
    };
    // s(t) = t + a t^2 (1 - t): ds/dt runs from 1 at t = 0 to 1 - a at t = 1.
    let a = 1.0 - params.end_speed_ratio;
    let profile = move |t: f64| {
        let w = t + warp * t * (1.0 - t);
        w + a * w * w * (1.0 - w)
    };
    let mut states = sample_by_arc_length(curve, n, profile);
    for (i, s) in states.iter_mut().enumerate() {
        let u = i as f64 / (n - 1) as f64;
        for (m, amp) in amps.iter().enumerate() {
            let b = ((m + 1) as f64 * PI * u).sin();
            s[0] += amp[0] * b;
            s[1] += amp[1] * b;
        }
        for c in s.iter_mut() {
            *c += noise.sample(rng);
        }
    }
    Trajectory::new(states, params.dt)
}

/// Generates a seeded synthetic dataset. The output is a pure function of
/// `(kind, seed, params)`.
pub fn generate_dataset(kind: DatasetKind, seed: u64, params: &GeneratorParams) -> Result<Dataset> {
    if params.n_states < 2 {
        return Err(CalmError::invalid("n_states", "need at least 2 states"));
    }
    if !(params.dt.is_finite() && params.dt > 0.0) {
        return Err(CalmError::invalid("dt", "must be finite and > 0"));
    }
    if !(params.end_speed_ratio > 0.0 && params.end_speed_ratio <= 1.0) {
        return Err(CalmError::invalid("end_speed_ratio", "must lie in (0, 1]"));
    }
    for (field, v) in [
        ("noise_std", params.noise_std),
        ("deform_amp", params.deform_amp),
        ("time_warp", params.time_warp),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(CalmError::invalid(field, "must be finite and >= 0"));
        }
    }
    if params.time_warp >= 1.0 {
        return Err(CalmError::invalid("time_warp", "must be < 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = params.demos_per_cluster.unwrap_or(match kind {
        DatasetKind::MultiMotion => 3,
        _ => 4,
    });
    if per == 0 {
        return Err(CalmError::invalid("demos_per_cluster", "must be positive"));
    }
    let mut demos = Vec::new();
    let mut labels = None;
    match kind {
        DatasetKind::Overlap => {
            for _ in 0..per {
                demos.push(make_demo(&overlap_curve, params, &mut rng)?);
            }
        }
        DatasetKind::Snake => {
            for _ in 0..per {
                demos.push(make_demo(&snake_curve, params, &mut rng)?);
            }
        }
        DatasetKind::Loop => {
            let p = GeneratorParams {
                end_speed_ratio: 1.0,
                time_warp: 0.0,
                ..params.clone()
            };
            for _ in 0..per {
                demos.push(make_demo(&loop_curve, &p, &mut rng)?);
            }
        }
        DatasetKind::MultiMotion => {
            let mut l = Vec::new();
            for branch in 0..2 {
                let curve = move |u: f64| multi_motion_curve(u, branch);
                for _ in 0..per {
                    demos.push(make_demo(&curve, params, &mut rng)?);
                    l.push(branch);
                }
            }
            labels = Some(l);
        }
    }
    Dataset::new(kind.name(), demos, labels)
}
