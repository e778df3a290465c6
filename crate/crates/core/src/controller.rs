//! The control law.
//!
//! `g(x) = sum_i q_i(x) pred_i` is a Gaussian mixture over the mean states,
//! weighted by the predicted next alignment. The agent moves along the
//! normalised gradient of `g` at speed `k_v`, where `k_v` blends the aligned
//! demonstration speed with a fixed recovery speed depending on how close the
//! agent is to the mean.

use serde::{Deserialize, Serialize};

use crate::alignment::{
    argmax, check_point, rbf, Aligner, AlignmentState, BackwardsReading, KernelFamily, TransitionKernel,
    TransitionMatrix,
};
use crate::clustering::ClusterModel;
use crate::error::{CalmError, Result};
use crate::trajectory::{dist_sq, norm, MeanTrajectory, Point, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Recovery speed `k_v^p` used away from the mean (units/s).
    pub kv_perturbed: f64,
    /// RBF width for blending aligned and recovery speeds (squared distance).
    pub blend_sigma: f64,
    /// Control interval `delta^r` (s).
    pub control_dt: f64,
    /// Gradient norms below this give a zero command.
    pub grad_floor: f64,
    /// Log-marginal margin a challenger must exceed to take over (0 = none).
    #[serde(default)]
    pub hysteresis: f64,
}

impl ControllerConfig {
    /// Defaults derived from the model: `control_dt` equals the mean sampling
    /// interval, `kv_perturbed` is twice the average demonstrated speed and
    /// `blend_sigma` is `(2 * mean spacing)^2`.
    pub fn for_model(model: &ClusterModel) -> Self {
        let means = &model.means;
        let r = means.len() as f64;
        let dt = means[0].dt();
        let speed = means
            .iter()
            .map(|m| m.speeds().iter().sum::<f64>() / m.len() as f64)
            .sum::<f64>()
            / r;
        let spacing = means.iter().map(MeanTrajectory::spacing).sum::<f64>() / r;
        Self {
            kv_perturbed: if speed > 0.0 { 2.0 * speed } else { 1.0 },
            blend_sigma: if spacing > 0.0 { (2.0 * spacing).powi(2) } else { 1.0 },
            control_dt: dt,
            grad_floor: 1e-10,
            hysteresis: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.kv_perturbed) {
            return Err(CalmError::invalid("kv_perturbed", "must be finite and > 0"));
        }
        if !positive(self.blend_sigma) {
            return Err(CalmError::invalid("blend_sigma", "must be finite and > 0"));
        }
        if !positive(self.control_dt) {
            return Err(CalmError::invalid("control_dt", "must be finite and > 0"));
        }
        if !positive(self.grad_floor) {
            return Err(CalmError::invalid("grad_floor", "must be finite and > 0"));
        }
        if !(self.hysteresis.is_finite() && self.hysteresis >= 0.0) {
            return Err(CalmError::invalid("hysteresis", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Kernel settings shared by every cluster. `delta` is derived per cluster as
/// `control_dt / mean.dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Family used by the HMM update.
    pub family: KernelFamily,
    /// RBF width; `None` uses `(2 delta)^2`.
    #[serde(default)]
    pub sigma: Option<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub backwards_reading: BackwardsReading,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self::new(KernelFamily::StableForward)
    }
}

impl KernelConfig {
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            sigma: None,
            epsilon: 1e-6,
            backwards_reading: BackwardsReading::ForwardBand,
        }
    }

    /// HMM kernel for one mean.
    pub fn for_mean(&self, mean: &MeanTrajectory, control_dt: f64) -> TransitionKernel {
        let mut k = TransitionKernel::new(self.family, control_dt / mean.dt())
            .with_epsilon(self.epsilon)
            .with_reading(self.backwards_reading);
        if let Some(s) = self.sigma {
            k = k.with_sigma(s);
        }
        k
    }
}

/// `g(x) = sum_i N(x | x^m_i, Sigma_m) pred_i`.
pub fn g_value(x: &[f64], pred: &[f64], mean: &MeanTrajectory) -> Result<f64> {
    check_pred(x, pred, mean)?;
    Ok(pred
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, p)| mean.log_emission_unchecked(x, i).exp() * p)
        .sum())
}

/// `grad g(x) = sum_i Sigma_m^{-1} (x^m_i - x) q_i(x) pred_i`.
pub fn g_gradient(x: &[f64], pred: &[f64], mean: &MeanTrajectory) -> Result<Vec<f64>> {
    check_pred(x, pred, mean)?;
    let d = x.len();
    let mut acc = vec![0.0; d];
    for (i, &p) in pred.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let c = mean.log_emission_unchecked(x, i).exp() * p;
        let xi = mean.state(i);
        for k in 0..d {
            acc[k] += c * (xi[k] - x[k]);
        }
    }
    Ok(mean.precision_mul(&acc))
}

fn check_pred(x: &[f64], pred: &[f64], mean: &MeanTrajectory) -> Result<()> {
    check_point(x, mean.dim())?;
    if pred.len() != mean.len() {
        return Err(CalmError::DimensionMismatch {
            field: "pred",
            expected: mean.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

/// Mixture weights `c_i = q_i(x) pred_i` divided by their largest value, so
/// that they stay representable far from the mean. `None` when every weight
/// is zero.
fn relative_weights(x: &[f64], pred: &[f64], mean: &MeanTrajectory) -> Option<Vec<f64>> {
    let logs: Vec<f64> = pred
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p > 0.0 {
                mean.log_emission_unchecked(x, i) + p.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    Some(logs.into_iter().map(|l| (l - max).exp()).collect())
}

/// Gradient of `g` divided by the largest mixture weight. Same direction as
/// [`g_gradient`] but free of underflow.
pub fn scaled_gradient(x: &[f64], pred: &[f64], mean: &MeanTrajectory) -> Result<Vec<f64>> {
    check_pred(x, pred, mean)?;
    let d = x.len();
    let Some(w) = relative_weights(x, pred, mean) else {
        return Ok(vec![0.0; d]);
    };
    let mut acc = vec![0.0; d];
    for (i, c) in w.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        let xi = mean.state(i);
        for k in 0..d {
            acc[k] += c * (xi[k] - x[k]);
        }
    }
    Ok(mean.precision_mul(&acc))
}

/// Index of the mean state nearest to `x` (lowest index on ties).
pub fn nearest_state(x: &[f64], mean: &MeanTrajectory) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, s) in mean.states().iter().enumerate() {
        let d = dist_sq(x, s);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// `w k_v^a + (1 - w) k_v^p`, with `w` the RBF of the distance to the nearest
/// mean state and `k_v^a` the posterior-weighted demonstrated speed.
pub fn velocity_gain(x: &[f64], mean: &MeanTrajectory, posterior: &[f64], cfg: &ControllerConfig) -> Result<f64> {
    check_pred(x, posterior, mean)?;
    let nearest = nearest_state(x, mean);
    let w = rbf(x, mean.state(nearest), cfg.blend_sigma);
    let total: f64 = posterior.iter().sum();
    let kva = posterior.iter().zip(mean.speeds()).map(|(p, s)| p * s).sum::<f64>() / total;
    Ok(w * kva + (1.0 - w) * cfg.kv_perturbed)
}

/// Argmax of the log-marginals; ties go to the lowest index.
pub fn select_cluster(per_cluster: &[AlignmentState]) -> Result<usize> {
    if per_cluster.is_empty() {
        return Err(CalmError::invalid("per_cluster", "no clusters"));
    }
    let lm: Vec<f64> = per_cluster.iter().map(|s| s.log_marginal).collect();
    Ok(argmax(&lm))
}

/// Instantaneous fixed point `sum_i c_i x^m_i / sum_i c_i` of the gradient
/// field at `x`.
pub fn attractor(pred: &[f64], mean: &MeanTrajectory, x: &[f64]) -> Result<Point> {
    check_pred(x, pred, mean)?;
    let w = relative_weights(x, pred, mean).ok_or(CalmError::DegeneratePoint)?;
    let total: f64 = w.iter().sum();
    let mut out = vec![0.0; x.len()];
    for (i, c) in w.iter().enumerate() {
        for (o, s) in out.iter_mut().zip(mean.state(i)) {
            *o += c * s;
        }
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Mutable rollout state owned by a single control loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub position: Point,
    /// Every position observed so far (one per tick).
    pub history: Vec<Point>,
    pub per_cluster: Vec<AlignmentState>,
    pub active_cluster: usize,
}

impl ControllerState {
    pub fn history_trajectory(&self, dt: f64) -> Result<Trajectory> {
        Trajectory::from_partial(self.history.clone(), dt)
    }
}

/// What one control tick produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub velocity: Point,
    pub kv: f64,
    pub active_cluster: usize,
    /// Clusters whose alignment update hit the numeric floor this tick.
    pub floored_clusters: Vec<usize>,
}

/// A model bound to kernels and a config, with transition matrices built once.
#[derive(Debug, Clone)]
pub struct Controller {
    model: ClusterModel,
    kernels: KernelConfig,
    cfg: ControllerConfig,
    aligners: Vec<Aligner>,
    predictors: Vec<TransitionMatrix>,
}

impl Controller {
    pub fn new(model: ClusterModel, kernels: KernelConfig, cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        if model.means.is_empty() {
            return Err(CalmError::invalid("model", "no clusters"));
        }
        let mut aligners = Vec::new();
        let mut predictors = Vec::new();
        for (r, mean) in model.means.iter().enumerate() {
            let k = kernels.for_mean(mean, cfg.control_dt);
            let aligner = Aligner::new(k, mean.len())?;
            let pred = TransitionMatrix::new(k.as_family(KernelFamily::GradientPredict), mean.len())?;
            for (name, m) in [("hmm", aligner.matrix()), ("predict", &pred)] {
                if !m.floored_rows().is_empty() {
                    log::warn!(
                        "cluster {r}: {} {name} transition rows hit the numeric floor",
                        m.floored_rows().len()
                    );
                }
            }
            aligners.push(aligner);
            predictors.push(pred);
        }
        Ok(Self {
            model,
            kernels,
            cfg,
            aligners,
            predictors,
        })
    }

    pub fn model(&self) -> &ClusterModel {
        &self.model
    }

    pub fn kernels(&self) -> &KernelConfig {
        &self.kernels
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    /// State before the first tick: uniform alignment priors, no history.
    pub fn initial_state(&self, start: &[f64]) -> Result<ControllerState> {
        check_point(start, self.model.dim()).map_err(|e| match e {
            CalmError::DimensionMismatch { expected, got, .. } => CalmError::DimensionMismatch {
                field: "start",
                expected,
                got,
            },
            _ => CalmError::invalid("start", "non-finite coordinate"),
        })?;
        Ok(ControllerState {
            position: start.to_vec(),
            history: Vec::new(),
            per_cluster: self
                .model
                .means
                .iter()
                .map(|m| AlignmentState::prior(m.len()))
                .collect(),
            active_cluster: 0,
        })
    }

    fn choose(&self, per_cluster: &[AlignmentState], previous: usize) -> usize {
        let lm: Vec<f64> = per_cluster.iter().map(|s| s.log_marginal).collect();
        let best = argmax(&lm);
        if self.cfg.hysteresis > 0.0
            && per_cluster[previous].step_count > 1
            && lm[previous] + self.cfg.hysteresis >= lm[best]
        {
            previous
        } else {
            best
        }
    }

    /// One control tick: observe, realign, select, predict, move.
    pub fn step(&self, state: &ControllerState) -> Result<(ControllerState, StepOutput)> {
        let x = &state.position;
        check_point(x, self.model.dim())?;
        let mut history = state.history.clone();
        history.push(x.clone());
        let mut per_cluster = Vec::with_capacity(self.aligners.len());
        let mut floored_clusters = Vec::new();
        for (r, (al, mean)) in self.aligners.iter().zip(&self.model.means).enumerate() {
            let next = al.update(&state.per_cluster[r], x, mean)?;
            if next.floor_events > state.per_cluster[r].floor_events {
                floored_clusters.push(r);
            }
            per_cluster.push(next);
        }
        let active = self.choose(&per_cluster, state.active_cluster);
        let mean = &self.model.means[active];
        let posterior = per_cluster[active].posterior();
        let pred = self.predictors[active].propagate(posterior);
        let grad = scaled_gradient(x, &pred, mean)?;
        let gnorm = norm(&grad);
        let kv = velocity_gain(x, mean, posterior, &self.cfg)?;
        let velocity: Point = if gnorm < self.cfg.grad_floor || !gnorm.is_finite() {
            vec![0.0; x.len()]
        } else {
            grad.iter().map(|g| kv * g / gnorm).collect()
        };
        let position: Point = x
            .iter()
            .zip(&velocity)
            .map(|(p, v)| p + v * self.cfg.control_dt)
            .collect();
        if position.iter().any(|v| !v.is_finite()) {
            return Err(CalmError::invalid(
                "position",
                "integration produced a non-finite state",
            ));
        }
        Ok((
            ControllerState {
                position,
                history,
                per_cluster,
                active_cluster: active,
            },
            StepOutput {
                velocity,
                kv,
                active_cluster: active,
                floored_clusters,
            },
        ))
    }
}
