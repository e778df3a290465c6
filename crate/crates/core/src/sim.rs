//! Rollouts with scripted perturbations, convergence detection and
//! DTWD-based evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::alignment::{check_point, KernelFamily};
use crate::clustering::ClusterModel;
use crate::controller::{Controller, ControllerConfig, ControllerState, KernelConfig};
use crate::error::{CalmError, Result};
use crate::trajectory::{dist, dtwd, Dataset, Point, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    SetPosition,
    Offset,
}

/// A position override applied before the alignment update of its tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationEvent {
    #[serde(rename = "tick")]
    pub trigger_tick: usize,
    pub mode: PerturbationMode,
    pub vector: Point,
}

impl PerturbationEvent {
    pub fn set_position(tick: usize, p: Point) -> Self {
        Self {
            trigger_tick: tick,
            mode: PerturbationMode::SetPosition,
            vector: p,
        }
    }

    pub fn offset(tick: usize, v: Point) -> Self {
        Self {
            trigger_tick: tick,
            mode: PerturbationMode::Offset,
            vector: v,
        }
    }
}

pub fn parse_perturbations(path: &Path, text: &str) -> Result<Vec<PerturbationEvent>> {
    serde_json::from_str(text).map_err(|source| CalmError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_perturbations(path: impl AsRef<Path>) -> Result<Vec<PerturbationEvent>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CalmError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| CalmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_perturbations(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Tick budget; `None` uses `10 * F` for the longest mean.
    pub max_ticks: Option<usize>,
    /// Convergence radius as a fraction of the terminal mean's state spacing.
    pub tol_factor: f64,
    /// Final-state posterior mass required for convergence under
    /// non-absorbing kernels (stable-forward requires `1 - 1e-9`).
    pub final_mass: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_ticks: None,
            tol_factor: 0.5,
            final_mass: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegeneracyFlag {
    pub tick: usize,
    pub cluster: usize,
}

/// Everything observed during one control tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub tick: usize,
    /// Position observed at this tick (before motion).
    pub position: Point,
    pub velocity: Point,
    pub kv: f64,
    pub active_cluster: usize,
    /// Posterior-mean alignment index of the active cluster over `F - 1`.
    pub phase: f64,
    /// Posterior mode of the active cluster.
    pub mode: usize,
    pub converged: bool,
    pub floored_clusters: Vec<usize>,
}

/// Tick-by-tick rollout driver shared by [`rollout`] and the live service.
#[derive(Debug, Clone)]
pub struct RolloutEngine {
    controller: Controller,
    rcfg: RolloutConfig,
    state: ControllerState,
    tick: usize,
    done: bool,
    last: Option<TickRecord>,
}

impl RolloutEngine {
    pub fn new(controller: Controller, start: &[f64], rcfg: RolloutConfig) -> Result<Self> {
        if !(rcfg.tol_factor.is_finite() && rcfg.tol_factor > 0.0) {
            return Err(CalmError::invalid("tol_factor", "must be finite and > 0"));
        }
        if !(rcfg.final_mass > 0.0 && rcfg.final_mass <= 1.0) {
            return Err(CalmError::invalid("final_mass", "must lie in (0, 1]"));
        }
        let state = controller.initial_state(start)?;
        Ok(Self {
            controller,
            rcfg,
            state,
            tick: 0,
            done: false,
            last: None,
        })
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    /// Index of the next tick to run.
    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn last(&self) -> Option<&TickRecord> {
        self.last.as_ref()
    }

    /// True once a stable-forward rollout has converged; the agent is held
    /// still until the next perturbation.
    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn default_max_ticks(&self) -> usize {
        10 * self.controller.model().means.iter().map(|m| m.len()).max().unwrap_or(1)
    }

    fn absorbing(&self) -> bool {
        self.controller.kernels().family == KernelFamily::StableForward
    }

    /// Applies a position override to the state the next tick will observe.
    pub fn perturb(&mut self, mode: PerturbationMode, vector: &[f64]) -> Result<()> {
        check_point(vector, self.controller.model().dim()).map_err(|e| match e {
            CalmError::DimensionMismatch { expected, got, .. } => CalmError::DimensionMismatch {
                field: "vector",
                expected,
                got,
            },
            _ => CalmError::invalid("vector", "non-finite coordinate"),
        })?;
        match mode {
            PerturbationMode::SetPosition => self.state.position = vector.to_vec(),
            PerturbationMode::Offset => {
                for (p, v) in self.state.position.iter_mut().zip(vector) {
                    *p += v;
                }
            }
        }
        self.done = false;
        Ok(())
    }

    /// Convergence test on the freshly updated alignment and the observed
    /// position.
    fn converged(&self, state: &ControllerState, x: &[f64]) -> bool {
        let r = state.active_cluster;
        let mean = &self.controller.model().means[r];
        let post = state.per_cluster[r].posterior();
        let need = if self.absorbing() {
            1.0 - 1e-9
        } else {
            self.rcfg.final_mass
        };
        post[post.len() - 1] >= need && dist(x, mean.endpoint()) < self.rcfg.tol_factor * mean.spacing()
    }

    /// Runs one control tick.
    pub fn step(&mut self) -> Result<TickRecord> {
        let x = self.state.position.clone();
        let (mut next, out) = self.controller.step(&self.state)?;
        let converged = self.converged(&next, &x);
        let r = next.active_cluster;
        let al = &next.per_cluster[r];
        let f = al.scaled_joint.len();
        let mut velocity = out.velocity;
        if converged && self.absorbing() {
            // Hold at the observed endpoint.
            next.position = x.clone();
            velocity.iter_mut().for_each(|v| *v = 0.0);
            self.done = true;
        }
        let rec = TickRecord {
            tick: self.tick,
            position: x,
            velocity,
            kv: out.kv,
            active_cluster: r,
            phase: if f > 1 {
                al.expected_index() / (f - 1) as f64
            } else {
                1.0
            },
            mode: al.mode(),
            converged,
            floored_clusters: out.floored_clusters,
        };
        self.state = next;
        self.tick += 1;
        self.last = Some(rec.clone());
        Ok(rec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Observed position at every tick.
    pub trajectory: Trajectory,
    pub active_cluster_trace: Vec<usize>,
    pub kv_trace: Vec<f64>,
    pub phase_trace: Vec<f64>,
    pub mode_trace: Vec<usize>,
    pub velocity_trace: Vec<Point>,
    pub converged: bool,
    pub terminal_cluster: Option<usize>,
    pub degeneracy_flags: Vec<DegeneracyFlag>,
}

impl RolloutResult {
    pub fn ticks(&self) -> usize {
        self.kv_trace.len()
    }

    pub fn final_position(&self) -> &[f64] {
        self.trajectory.last()
    }
}

/// Rolls the controller out from `start`. Stable-forward rollouts stop at
/// convergence unless perturbations are still pending; other kernels run the
/// full budget and report convergence at its end.
pub fn rollout(
    model: &ClusterModel,
    start: &[f64],
    kernels: &KernelConfig,
    cfg: &ControllerConfig,
    rcfg: &RolloutConfig,
    perturbations: &[PerturbationEvent],
) -> Result<RolloutResult> {
    if start.iter().any(|v| !v.is_finite()) {
        return Err(CalmError::invalid("start", "non-finite coordinate"));
    }
    let controller = Controller::new(model.clone(), *kernels, cfg.clone())?;
    let engine = RolloutEngine::new(controller, start, rcfg.clone())?;
    run_engine(engine, perturbations)
}

/// Drives an engine through a perturbation script. Used by [`rollout`] and
/// for replaying recorded service sessions.
pub fn run_engine(mut engine: RolloutEngine, perturbations: &[PerturbationEvent]) -> Result<RolloutResult> {
    let max_ticks = engine.rcfg.max_ticks.unwrap_or_else(|| engine.default_max_ticks());
    let d = engine.controller.model().dim();
    for (k, e) in perturbations.iter().enumerate() {
        if e.trigger_tick >= max_ticks {
            return Err(CalmError::schema(
                format!("perturbations[{k}].tick"),
                format!("tick {} outside the budget of {max_ticks}", e.trigger_tick),
            ));
        }
        if e.vector.len() != d || e.vector.iter().any(|v| !v.is_finite()) {
            return Err(CalmError::schema(
                format!("perturbations[{k}].vector"),
                format!("expected {d} finite coordinates"),
            ));
        }
    }
    let mut events: Vec<&PerturbationEvent> = perturbations.iter().collect();
    events.sort_by_key(|e| e.trigger_tick);
    let mut next_event = 0;
    let mut records = Vec::new();
    while engine.tick() < max_ticks {
        let t = engine.tick();
        if engine.is_done() && next_event == events.len() {
            break;
        }
        while next_event < events.len() && events[next_event].trigger_tick <= t {
            let e = events[next_event];
            engine.perturb(e.mode, &e.vector)?;
            next_event += 1;
        }
        records.push(engine.step()?);
    }
    let dt = engine.controller.config().control_dt;
    let last = records.last().cloned();
    let mut degeneracy_flags = Vec::new();
    for r in &records {
        for &c in &r.floored_clusters {
            degeneracy_flags.push(DegeneracyFlag {
                tick: r.tick,
                cluster: c,
            });
        }
    }
    let converged = last.as_ref().is_some_and(|r| r.converged);
    Ok(RolloutResult {
        trajectory: Trajectory::from_partial(records.iter().map(|r| r.position.clone()).collect(), dt)?,
        active_cluster_trace: records.iter().map(|r| r.active_cluster).collect(),
        kv_trace: records.iter().map(|r| r.kv).collect(),
        phase_trace: records.iter().map(|r| r.phase).collect(),
        mode_trace: records.iter().map(|r| r.mode).collect(),
        velocity_trace: records.iter().map(|r| r.velocity.clone()).collect(),
        converged,
        terminal_cluster: last.filter(|r| r.converged).map(|r| r.active_cluster),
        degeneracy_flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub demo: usize,
    pub dtwd: Option<f64>,
    pub ticks: usize,
    pub converged: bool,
    pub terminal_cluster: Option<usize>,
    pub label: Option<usize>,
    /// Label assigned to the terminal cluster by majority vote.
    pub predicted_label: Option<usize>,
    pub correct: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub kernel: String,
    pub demos: Vec<DemoReport>,
    pub mean_dtwd: Option<f64>,
    pub correct: Option<usize>,
    pub labelled: Option<usize>,
    /// Majority label per cluster.
    pub cluster_labels: Option<Vec<Option<usize>>>,
    pub config: serde_json::Value,
    pub reference_dtwd: serde_json::Value,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn accuracy(&self) -> Option<f64> {
        match (self.correct, self.labelled) {
            (Some(c), Some(n)) if n > 0 => Some(c as f64 / n as f64),
            _ => None,
        }
    }
}

/// Maps clusters to ground-truth labels: each demo votes for its DTW-nearest
/// mean; ties go to the lowest label.
fn cluster_labels(model: &ClusterModel, dataset: &Dataset, labels: &[usize]) -> Result<Vec<Option<usize>>> {
    let means: Vec<Trajectory> = model.means.iter().map(|m| m.to_trajectory()).collect::<Result<_>>()?;
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![vec![0usize; n_labels]; means.len()];
    for (demo, &label) in dataset.demos.iter().zip(labels) {
        let mut best = (0, f64::INFINITY);
        for (r, m) in means.iter().enumerate() {
            let d = dtwd(demo, m)?;
            if d < best.1 {
                best = (r, d);
            }
        }
        votes[best.0][label] += 1;
    }
    Ok(votes
        .into_iter()
        .map(|v| {
            let top = v.iter().copied().max().unwrap_or(0);
            (top > 0).then(|| v.iter().position(|&c| c == top).expect("max exists"))
        })
        .collect())
}

/// Rolls out from every demo's first state and scores the result against
/// the demo with DTWD. Per-demo failures are reported, not propagated.
pub fn evaluate(
    model: &ClusterModel,
    dataset: &Dataset,
    kernels: &KernelConfig,
    cfg: &ControllerConfig,
    rcfg: &RolloutConfig,
) -> Result<EvalReport> {
    if model.dim() != dataset.dim() {
        return Err(CalmError::DimensionMismatch {
            field: "dataset",
            expected: model.dim(),
            got: dataset.dim(),
        });
    }
    let controller = Controller::new(model.clone(), *kernels, cfg.clone())?;
    let mapping = match &dataset.ground_truth_labels {
        Some(l) => Some(cluster_labels(model, dataset, l)?),
        None => None,
    };
    let demos: Vec<DemoReport> = dataset
        .demos
        .par_iter()
        .enumerate()
        .map(|(i, demo)| {
            let label = dataset.ground_truth_labels.as_ref().map(|l| l[i]);
            let run = RolloutEngine::new(controller.clone(), demo.first(), rcfg.clone())
                .and_then(|e| run_engine(e, &[]))
                .and_then(|r| dtwd(&r.trajectory, demo).map(|d| (r, d)));
            match run {
                Ok((r, d)) => {
                    let end_cluster = r.terminal_cluster.or(r.active_cluster_trace.last().copied());
                    let predicted = match (&mapping, end_cluster) {
                        (Some(m), Some(c)) => m[c],
                        _ => None,
                    };
                    DemoReport {
                        demo: i,
                        dtwd: Some(d),
                        ticks: r.ticks(),
                        converged: r.converged,
                        terminal_cluster: r.terminal_cluster,
                        label,
                        predicted_label: predicted,
                        correct: label.map(|l| r.converged && predicted == Some(l)),
                        error: None,
                    }
                }
                Err(e) => DemoReport {
                    demo: i,
                    dtwd: None,
                    ticks: 0,
                    converged: false,
                    terminal_cluster: None,
                    label,
                    predicted_label: None,
                    correct: label.map(|_| false),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let scored: Vec<f64> = demos.iter().filter_map(|d| d.dtwd).collect();
    let mean_dtwd = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    let labelled = dataset.ground_truth_labels.as_ref().map(Vec::len);
    let correct = labelled.map(|_| demos.iter().filter(|d| d.correct == Some(true)).count());
    Ok(EvalReport {
        dataset: dataset.name.clone(),
        kernel: kernels.family.to_string(),
        demos,
        mean_dtwd,
        correct,
        labelled,
        cluster_labels: mapping,
        config: json!({
            "kernels": kernels,
            "controller": cfg,
            "rollout": rcfg,
            "clusters": model.k(),
        }),
        reference_dtwd: json!({
            "snake": 48.48,
            "overlap": 17.12,
            "multi_motion": 12.77,
            "note": "published figures on different, unavailable data; qualitative comparison only"
        }),
        notes: vec![
            "DTWD is the raw accumulated DTW cost (sum of Euclidean distances along the warping path), not length-normalised.".into(),
            "Clustering is a DTW-based EM stand-in with DBA mean updates.".into(),
            "Perturbations are modelled as discrete position overrides, an abstraction of continuous physical pushes.".into(),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadingCheck {
    pub passed: bool,
    pub passes: usize,
    /// Largest angle (degrees) between the headings of two distinct passes.
    pub max_angle_deg: f64,
    pub reason: String,
}

/// Checks that a rollout crosses the ball `(center, radius)` at least twice
/// with headings more than 90 degrees apart.
pub fn overlap_heading_check(rollout: &Trajectory, center: &[f64], radius: f64) -> HeadingCheck {
    let s = rollout.states();
    let inside: Vec<bool> = s.iter().map(|p| dist(p, center) < radius).collect();
    let mut headings: Vec<Point> = Vec::new();
    let mut k = 0;
    while k < s.len() {
        if !inside[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < s.len() && inside[k] {
            k += 1;
        }
        let a = &s[start.saturating_sub(1)];
        let b = &s[k.min(s.len() - 1)];
        let h: Point = b.iter().zip(a).map(|(x, y)| x - y).collect();
        if h.iter().any(|v| *v != 0.0) {
            headings.push(h);
        }
    }
    let passes = headings.len();
    if passes < 2 {
        return HeadingCheck {
            passed: false,
            passes,
            max_angle_deg: 0.0,
            reason: format!("rollout passes the region {passes} time(s); need at least 2"),
        };
    }
    let mut max_angle = 0.0f64;
    for i in 0..passes {
        for j in i + 1..passes {
            let (a, b) = (&headings[i], &headings[j]);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
            max_angle = max_angle.max(cos.acos().to_degrees());
        }
    }
    let passed = max_angle > 90.0;
    HeadingCheck {
        passed,
        passes,
        max_angle_deg: max_angle,
        reason: if passed {
            "distinct passes with headings more than 90 degrees apart".into()
        } else {
            format!("largest heading difference is {max_angle:.1} degrees")
        },
    }
}
