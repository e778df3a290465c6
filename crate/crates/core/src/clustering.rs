//! DTW-based EM clustering of demonstrations into mean trajectories.
//!
//! E-step: soft responsibilities `softmax(-dtwd(demo, mean) / T)`.
//! M-step: one weighted DTW barycenter averaging (DBA) pass per cluster.
//! The objective is the responsibility-weighted DTW cost. A candidate update
//! that would raise the objective is rejected and the loop stops, so the
//! recorded objective trace never increases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CalmError, Result};
use crate::trajectory::{
    dist_sq, dtw_path, estimate_speeds, resample_to_len, scaled_identity, Dataset, MeanTrajectory, Point, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// States per mean; `None` uses the median demo length.
    pub n_states: Option<usize>,
    /// Softmax temperature; `None` uses median pairwise DTW / 5.
    pub temperature: Option<f64>,
    /// Stop when the relative objective improvement drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Lower bound on the isotropic emission variance.
    pub min_emission_var: f64,
    /// Lower bound on the emission standard deviation as a multiple of the
    /// mean's state spacing.
    pub min_emission_std_spacing: f64,
    /// Largest k tried by the elbow rule.
    pub k_max: usize,
    /// Elbow rule: stop at the first k whose next relative gain is below this.
    pub elbow_threshold: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_states: None,
            temperature: None,
            tol: 1e-6,
            max_iters: 50,
            min_emission_var: 1e-3,
            min_emission_std_spacing: 1.0,
            k_max: 6,
            elbow_threshold: 0.1,
        }
    }
}

impl ClusterConfig {
    fn validate(&self) -> Result<()> {
        if matches!(self.n_states, Some(n) if n < 2) {
            return Err(CalmError::invalid("n_states", "need at least 2 states"));
        }
        if matches!(self.temperature, Some(t) if !(t.is_finite() && t > 0.0)) {
            return Err(CalmError::invalid("temperature", "must be finite and > 0"));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(CalmError::invalid("tol", "must be finite and >= 0"));
        }
        if !(self.min_emission_var.is_finite() && self.min_emission_var > 0.0) {
            return Err(CalmError::invalid("min_emission_var", "must be finite and > 0"));
        }
        if !(self.min_emission_std_spacing.is_finite() && self.min_emission_std_spacing >= 0.0) {
            return Err(CalmError::invalid(
                "min_emission_std_spacing",
                "must be finite and >= 0",
            ));
        }
        if self.k_max == 0 {
            return Err(CalmError::invalid("k_max", "must be positive"));
        }
        Ok(())
    }
}

/// Number of clusters requested from [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterCount {
    Fixed(usize),
    /// Elbow rule over `1..=k_max` (experimental).
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reseed {
    pub iteration: usize,
    pub cluster: usize,
    pub demo: usize,
    /// False when the re-seed would have raised the objective and was undone.
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMeta {
    pub k: usize,
    pub n_states: usize,
    pub temperature: f64,
    pub iterations: usize,
    /// Per-demo distribution over clusters.
    pub responsibilities: Vec<Vec<f64>>,
    /// Weighted DTW cost after each E-step.
    pub objective_trace: Vec<f64>,
    pub reseeds: Vec<Reseed>,
    /// Final objective for each k tried by the elbow rule.
    pub auto_k_objectives: Option<Vec<f64>>,
    pub dataset: String,
}

/// Mean trajectories plus clustering metadata; the unit of persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub means: Vec<MeanTrajectory>,
    pub meta: ModelMeta,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].dim()
    }

    pub fn responsibilities(&self) -> &[Vec<f64>] {
        &self.meta.responsibilities
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.meta.objective_trace
    }

    /// Most responsible cluster per demo.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.meta
            .responsibilities
            .iter()
            .map(|r| crate::alignment::argmax(r))
            .collect()
    }
}

fn weighted_cost(pts: &[(&[f64], f64)], m: &[f64]) -> f64 {
    pts.iter().map(|(x, w)| w * dist_sq(x, m).sqrt()).sum()
}

/// Weiszfeld iterations towards the weighted geometric median, accepting a
/// step only when it lowers the weighted distance sum.
fn weiszfeld(pts: &[(&[f64], f64)], start: Point, iters: usize) -> (Point, f64) {
    let mut m = start;
    let mut cost = weighted_cost(pts, &m);
    for _ in 0..iters {
        let mut num = vec![0.0; m.len()];
        let mut den = 0.0;
        for (x, w) in pts {
            let d = dist_sq(x, &m).sqrt();
            if d > 1e-12 {
                for (n, xv) in num.iter_mut().zip(*x) {
                    *n += w * xv / d;
                }
                den += w / d;
            }
        }
        if den == 0.0 {
            break;
        }
        let cand: Point = num.into_iter().map(|v| v / den).collect();
        let c = weighted_cost(pts, &cand);
        if c < cost {
            m = cand;
            cost = c;
        } else {
            break;
        }
    }
    (m, cost)
}

/// Weighted DBA step: aligns every member to `mean` and moves each mean state
/// to the weighted average of the member states aligned to it.
///
/// The DTW cost sums unsquared distances, which the average does not
/// minimise; each averaged state is therefore refined towards the weighted
/// geometric median, and a state whose aligned cost would rise is instead
/// refined from its current position. Together with re-alignment this makes
/// the step non-increasing in total DTW cost.
fn dba_states(members: &[(&[Point], f64)], mean: &[Point]) -> Result<Vec<Point>> {
    let f = mean.len();
    let d = mean[0].len();
    let mut aligned: Vec<Vec<(&[f64], f64)>> = vec![Vec::new(); f];
    for (states, w) in members {
        if *w <= 0.0 {
            continue;
        }
        let (path, _) = dtw_path(mean, states)?;
        for (i, j) in path {
            aligned[i].push((states[j].as_slice(), *w));
        }
    }
    Ok(aligned
        .iter()
        .zip(mean)
        .map(|(pts, old)| {
            let wsum: f64 = pts.iter().map(|p| p.1).sum();
            if wsum <= 0.0 {
                return old.clone();
            }
            let mut avg = vec![0.0; d];
            for (x, w) in pts {
                for (a, v) in avg.iter_mut().zip(*x) {
                    *a += w * v / wsum;
                }
            }
            let old_cost = weighted_cost(pts, old);
            let (m, c) = weiszfeld(pts, avg, 25);
            if c <= old_cost {
                m
            } else {
                weiszfeld(pts, old.clone(), 25).0
            }
        })
        .collect())
}

/// One DBA pass. Keeps `F` and the emission covariance, re-estimates speeds.
pub fn barycenter_update(members: &[(Trajectory, f64)], current_mean: &MeanTrajectory) -> Result<MeanTrajectory> {
    if !members.iter().any(|(_, w)| *w > 0.0) {
        return Err(CalmError::invalid("members", "no member has positive weight"));
    }
    let views: Vec<(&[Point], f64)> = members.iter().map(|(t, w)| (t.states(), *w)).collect();
    let states = dba_states(&views, current_mean.states())?;
    let speeds = if states.len() >= 2 {
        estimate_speeds(&states, current_mean.dt())?
    } else {
        vec![0.0]
    };
    MeanTrajectory::with_speeds(states, current_mean.dt(), speeds, current_mean.emission_cov().to_vec())
}

fn residual_variance(members: &[(&[Point], f64)], mean: &[Point], floor: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (states, w) in members {
        if *w <= 0.0 {
            continue;
        }
        let (path, _) = dtw_path(mean, states)?;
        for &(i, j) in &path {
            num += w * dist_sq(&mean[i], &states[j]);
        }
        den += w * path.len() as f64;
    }
    let var = if den > 0.0 { num / den } else { 0.0 };
    Ok(var.max(floor))
}

/// Isotropic `sigma^2 I`, where `sigma^2` is the weighted mean squared
/// Euclidean residual along the DTW alignment, floored at `min_var`.
pub fn estimate_emission_cov(
    members: &[(Trajectory, f64)],
    mean: &MeanTrajectory,
    min_var: f64,
) -> Result<Vec<Vec<f64>>> {
    if members.is_empty() {
        return Err(CalmError::invalid("members", "no members"));
    }
    let views: Vec<(&[Point], f64)> = members.iter().map(|(t, w)| (t.states(), *w)).collect();
    let var = residual_variance(&views, mean.states(), min_var)?;
    Ok(scaled_identity(mean.dim(), var))
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Prepared {
    demos: Vec<Vec<Point>>,
    dt: f64,
    f: usize,
    pairwise: Vec<Vec<f64>>,
    temperature: f64,
}

fn prepare(dataset: &Dataset, cfg: &ClusterConfig) -> Result<Prepared> {
    cfg.validate()?;
    let f = cfg
        .n_states
        .unwrap_or_else(|| median(dataset.demos.iter().map(|d| d.len() as f64).collect()).round() as usize)
        .max(2);
    let resampled: Vec<Trajectory> = dataset
        .demos
        .iter()
        .map(|d| resample_to_len(d, f))
        .collect::<Result<_>>()?;
    let dt = median(resampled.iter().map(Trajectory::dt).collect());
    let demos: Vec<Vec<Point>> = resampled.into_iter().map(Trajectory::into_states).collect();
    let n = demos.len();
    let pairwise: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    if a == b {
                        Ok(0.0)
                    } else {
                        crate::trajectory::dtw_states(&demos[a], &demos[b])
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let off: Vec<f64> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .map(|(a, b)| pairwise[a][b])
        .collect();
    let temperature = cfg.temperature.unwrap_or_else(|| {
        let t = median(off) / 5.0;
        if t > 0.0 {
            t
        } else {
            1.0
        }
    });
    Ok(Prepared {
        demos,
        dt,
        f,
        pairwise,
        temperature,
    })
}

/// Farthest-point seeding: the medoid first, then the demo furthest (in DTW)
/// from every chosen seed. Ties go to the lowest index.
fn seed_indices(pairwise: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = pairwise.len();
    let totals: Vec<f64> = pairwise.iter().map(|r| r.iter().sum()).collect();
    let mut medoid = 0;
    for i in 1..n {
        if totals[i] < totals[medoid] {
            medoid = i;
        }
    }
    let mut seeds = vec![medoid];
    while seeds.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|i| !seeds.contains(i)) {
            let d = seeds.iter().map(|&s| pairwise[i][s]).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        seeds.push(best.expect("k <= n").0);
    }
    seeds
}

struct EStep {
    dist: Vec<Vec<f64>>,
    resp: Vec<Vec<f64>>,
    objective: f64,
}

fn e_step(demos: &[Vec<Point>], means: &[Vec<Point>], temperature: f64) -> Result<EStep> {
    let dist: Vec<Vec<f64>> = demos
        .par_iter()
        .map(|d| {
            means
                .iter()
                .map(|m| crate::trajectory::dtw_states(d, m))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut objective = 0.0;
    let resp: Vec<Vec<f64>> = dist
        .iter()
        .map(|row| {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let mut r: Vec<f64> = row.iter().map(|d| (-(d - lo) / temperature).exp()).collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            objective += r.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            r
        })
        .collect();
    Ok(EStep { dist, resp, objective })
}

fn hard(resp: &[Vec<f64>]) -> Vec<usize> {
    resp.iter().map(|r| crate::alignment::argmax(r)).collect()
}

fn run_em(prep: &Prepared, k: usize, cfg: &ClusterConfig) -> Result<(Vec<Vec<Point>>, ModelMeta)> {
    let n = prep.demos.len();
    let mut means: Vec<Vec<Point>> = seed_indices(&prep.pairwise, k)
        .into_iter()
        .map(|i| prep.demos[i].clone())
        .collect();
    let mut meta = ModelMeta {
        k,
        n_states: prep.f,
        temperature: prep.temperature,
        ..ModelMeta::default()
    };
    let mut cur = e_step(&prep.demos, &means, prep.temperature)?;
    meta.objective_trace.push(cur.objective);
    for iter in 0..cfg.max_iters {
        meta.iterations = iter + 1;
        // Empty clusters under hard assignment get the worst-fit demo.
        let labels = hard(&cur.resp);
        for r in 0..k {
            if labels.contains(&r) {
                continue;
            }
            let mut counts = vec![0usize; k];
            labels.iter().for_each(|&l| counts[l] += 1);
            let worst = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| cur.dist[a][labels[a]].total_cmp(&cur.dist[b][labels[b]]));
            let Some(demo) = worst else { continue };
            let mut trial = means.clone();
            trial[r] = prep.demos[demo].clone();
            let next = e_step(&prep.demos, &trial, prep.temperature)?;
            let accepted = next.objective <= cur.objective;
            if accepted {
                means = trial;
                cur = next;
                meta.objective_trace.push(cur.objective);
            }
            meta.reseeds.push(Reseed {
                iteration: iter,
                cluster: r,
                demo,
                accepted,
            });
        }
        let candidate: Vec<Vec<Point>> = (0..k)
            .into_par_iter()
            .map(|r| {
                let members: Vec<(&[Point], f64)> = prep
                    .demos
                    .iter()
                    .zip(&cur.resp)
                    .map(|(d, resp)| (d.as_slice(), resp[r]))
                    .collect();
                dba_states(&members, &means[r])
            })
            .collect::<Result<_>>()?;
        let next = e_step(&prep.demos, &candidate, prep.temperature)?;
        if next.objective > cur.objective {
            log::debug!("EM step rejected at iteration {iter}: objective would rise");
            break;
        }
        let gain = cur.objective - next.objective;
        means = candidate;
        cur = next;
        meta.objective_trace.push(cur.objective);
        if gain <= cfg.tol * cur.objective.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    meta.responsibilities = cur.resp;
    Ok((means, meta))
}

fn finish(prep: &Prepared, means: Vec<Vec<Point>>, meta: ModelMeta, cfg: &ClusterConfig) -> Result<ClusterModel> {
    let labels = hard(&meta.responsibilities);
    let mut out = Vec::with_capacity(means.len());
    for (r, states) in means.into_iter().enumerate() {
        // Hard members only: soft tails from other clusters would inflate the
        // residual with cross-cluster distances.
        let mut members: Vec<(&[Point], f64)> = prep
            .demos
            .iter()
            .zip(&labels)
            .filter(|(_, l)| **l == r)
            .map(|(d, _)| (d.as_slice(), 1.0))
            .collect();
        if members.is_empty() {
            members = prep
                .demos
                .iter()
                .zip(&meta.responsibilities)
                .map(|(d, resp)| (d.as_slice(), resp[r]))
                .collect();
        }
        let spacing = crate::trajectory::mean_spacing(&states);
        let floor = cfg
            .min_emission_var
            .max((cfg.min_emission_std_spacing * spacing).powi(2));
        let var = residual_variance(&members, &states, floor)?;
        let d = states[0].len();
        out.push(MeanTrajectory::new(states, prep.dt, scaled_identity(d, var))?);
    }
    Ok(ClusterModel { means: out, meta })
}

/// Clusters `dataset` into `k` mean trajectories (or picks `k` by the elbow
/// rule). Deterministic for a given dataset and config.
pub fn fit(dataset: &Dataset, k: ClusterCount, cfg: &ClusterConfig) -> Result<ClusterModel> {
    let prep = prepare(dataset, cfg)?;
    let n = prep.demos.len();
    let mut model = match k {
        ClusterCount::Fixed(k) => {
            if k == 0 || k > n {
                return Err(CalmError::invalid(
                    "k",
                    format!("must lie in 1..={n} (number of demos), got {k}"),
                ));
            }
            let (means, meta) = run_em(&prep, k, cfg)?;
            finish(&prep, means, meta, cfg)?
        }
        ClusterCount::Auto => {
            let k_max = cfg.k_max.min(n);
            let runs: Vec<(Vec<Vec<Point>>, ModelMeta)> =
                (1..=k_max).map(|k| run_em(&prep, k, cfg)).collect::<Result<_>>()?;
            let objectives: Vec<f64> = runs
                .iter()
                .map(|(_, m)| *m.objective_trace.last().expect("non-empty trace"))
                .collect();
            let j1 = objectives[0];
            let mut pick = k_max;
            if j1 <= 0.0 {
                pick = 1;
            } else {
                for k in 1..k_max {
                    if (objectives[k - 1] - objectives[k]) / j1 < cfg.elbow_threshold {
                        pick = k;
                        break;
                    }
                }
            }
            let (means, mut meta) = runs.into_iter().nth(pick - 1).expect("k in range");
            meta.auto_k_objectives = Some(objectives);
            finish(&prep, means, meta, cfg)?
        }
    };
    model.meta.dataset = dataset.name.clone();
    Ok(model)
}
