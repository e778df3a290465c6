//! HMM alignment between a running agent and a mean trajectory.
//!
//! The hidden state is the index of the mean-trajectory state that best
//! describes the agent's progress. Emissions are Gaussians centred on the
//! mean states; transitions come from one of four kernel families. The
//! forward recursion is carried out with per-step rescaling, and the dropped
//! scale factors are accumulated in `log_marginal`, so
//! `exp(log_marginal) * scaled_joint` equals the unscaled joint.
//!
//! All indices in this module are zero-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CalmError, Result};
use crate::trajectory::{dist_sq, MeanTrajectory};

/// Radial basis function `exp(-||a - b||^2 / (2 sigma))`.
///
/// `sigma` divides the squared distance directly (it is not squared).
pub fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-dist_sq(a, b) / (2.0 * sigma)).exp()
}

pub fn rbf_scalar(a: f64, b: f64, sigma: f64) -> f64 {
    (-(a - b) * (a - b) / (2.0 * sigma)).exp()
}

/// Gaussian emission density `N(x | mean[i], Sigma_m)`.
pub fn emission(x: &[f64], mean: &MeanTrajectory, i: usize) -> Result<f64> {
    log_emission(x, mean, i).map(f64::exp)
}

pub fn log_emission(x: &[f64], mean: &MeanTrajectory, i: usize) -> Result<f64> {
    if i >= mean.len() {
        return Err(CalmError::invalid(
            "i",
            format!("state index {i} out of range for {} states", mean.len()),
        ));
    }
    check_point(x, mean.dim())?;
    Ok(mean.log_emission_unchecked(x, i))
}

pub(crate) fn check_point(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(CalmError::DimensionMismatch {
            field: "x",
            expected: d,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CalmError::invalid("x", "non-finite coordinate"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Forward-or-stay kernel; also the prediction kernel of the controller.
    GradientPredict,
    /// Strictly forward with an absorbing final state.
    StableForward,
    /// Forward band plus a small constant mass for jumping backwards.
    Backwards,
    /// Strictly forward, wrapping from the final state to the first.
    Periodic,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [
        KernelFamily::GradientPredict,
        KernelFamily::StableForward,
        KernelFamily::Backwards,
        KernelFamily::Periodic,
    ];

    /// Short name used on the command line and over the wire.
    pub fn cli_name(self) -> &'static str {
        match self {
            KernelFamily::GradientPredict => "gradient",
            KernelFamily::StableForward => "stable",
            KernelFamily::Backwards => "backwards",
            KernelFamily::Periodic => "periodic",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for KernelFamily {
    type Err = CalmError;

    fn from_str(s: &str) -> Result<Self> {
        KernelFamily::ALL
            .into_iter()
            .find(|k| k.cli_name() == s)
            .ok_or_else(|| {
                CalmError::invalid(
                    "kernel",
                    format!("unknown kernel `{s}` (expected gradient|stable|backwards|periodic)"),
                )
            })
    }
}

/// How the backwards kernel splits its support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardsReading {
    /// RBF band on `i >= j`, `epsilon` on `i < j`.
    #[default]
    ForwardBand,
    /// RBF band on `i <= j`, `epsilon` on `i > j`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    pub family: KernelFamily,
    /// RBF width over state indices.
    pub sigma: f64,
    /// Ratio of agent to mean sampling intervals.
    pub delta: f64,
    /// Off-band mass relative to the row maximum (backwards/periodic only).
    pub epsilon: f64,
    #[serde(default)]
    pub backwards_reading: BackwardsReading,
}

impl TransitionKernel {
    /// Kernel with default width `(2 delta)^2` and `epsilon = 1e-6`.
    pub fn new(family: KernelFamily, delta: f64) -> Self {
        Self {
            family,
            sigma: (2.0 * delta).powi(2),
            delta,
            epsilon: 1e-6,
            backwards_reading: BackwardsReading::ForwardBand,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_reading(mut self, reading: BackwardsReading) -> Self {
        self.backwards_reading = reading;
        self
    }

    /// Same parameters, different family.
    pub fn as_family(mut self, family: KernelFamily) -> Self {
        self.family = family;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(CalmError::invalid("sigma", "must be finite and > 0"));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(CalmError::invalid("delta", "must be finite and > 0"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(CalmError::invalid("epsilon", "must be finite and >= 0"));
        }
        Ok(())
    }

    fn phi(&self, i: usize, j: usize) -> f64 {
        rbf_scalar(i as f64, j as f64 + self.delta, self.sigma)
    }

    /// Smallest successor that is legal under this family.
    fn min_successor(&self, j: usize, f: usize) -> usize {
        match self.family {
            KernelFamily::StableForward => (j + 1).min(f - 1),
            KernelFamily::Periodic => {
                if j + 1 == f {
                    0
                } else {
                    j + 1
                }
            }
            KernelFamily::GradientPredict | KernelFamily::Backwards => j,
        }
    }
}

/// One normalised transition row `theta_{j -> .}` and whether the numeric
/// floor had to be applied.
pub fn transition_row(kernel: &TransitionKernel, j: usize, f: usize) -> Result<(Vec<f64>, bool)> {
    kernel.validate()?;
    if f == 0 || j >= f {
        return Err(CalmError::invalid("j", format!("row {j} out of range for {f} states")));
    }
    let mut row = vec![0.0; f];
    match kernel.family {
        KernelFamily::GradientPredict => {
            for (i, v) in row.iter_mut().enumerate().skip(j) {
                *v = kernel.phi(i, j);
            }
        }
        KernelFamily::StableForward => {
            for (i, v) in row.iter_mut().enumerate().skip(j + 1) {
                *v = kernel.phi(i, j);
            }
            if j + 1 == f {
                row[j] = 1.0;
            }
        }
        KernelFamily::Backwards => {
            let band = |i: usize| match kernel.backwards_reading {
                BackwardsReading::ForwardBand => i >= j,
                BackwardsReading::Literal => i <= j,
            };
            let mut max = 0.0f64;
            for (i, v) in row.iter_mut().enumerate() {
                if band(i) {
                    *v = kernel.phi(i, j);
                    max = max.max(*v);
                }
            }
            let eps = kernel.epsilon * max;
            for (i, v) in row.iter_mut().enumerate() {
                if !band(i) {
                    *v = eps;
                }
            }
        }
        KernelFamily::Periodic => {
            let mut max = 0.0f64;
            for (i, v) in row.iter_mut().enumerate().skip(j + 1) {
                *v = kernel.phi(i, j);
                max = max.max(*v);
            }
            let wrap = j + 1 == f;
            if wrap {
                max = max.max(1.0);
            }
            let eps = kernel.epsilon * max;
            for (i, v) in row.iter_mut().enumerate() {
                if wrap && i == 0 {
                    *v = 1.0;
                } else if i <= j {
                    *v = eps;
                }
            }
        }
    }
    let sum: f64 = row.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        for v in &mut row {
            *v /= sum;
        }
        Ok((row, false))
    } else {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[kernel.min_successor(j, f)] = 1.0;
        Ok((row, true))
    }
}

/// Dense `F x F` transition matrix with per-row non-zero ranges.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    kernel: TransitionKernel,
    f: usize,
    rows: Vec<f64>,
    support: Vec<(usize, usize)>,
    floored_rows: Vec<usize>,
}

impl TransitionMatrix {
    pub fn new(kernel: TransitionKernel, f: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(f * f);
        let mut support = Vec::with_capacity(f);
        let mut floored_rows = Vec::new();
        for j in 0..f {
            let (row, floored) = transition_row(&kernel, j, f)?;
            if floored {
                floored_rows.push(j);
            }
            let lo = row.iter().position(|&v| v > 0.0).unwrap_or(0);
            let hi = row.iter().rposition(|&v| v > 0.0).map_or(0, |h| h + 1);
            support.push((lo, hi));
            rows.extend(row);
        }
        Ok(Self {
            kernel,
            f,
            rows,
            support,
            floored_rows,
        })
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.f
    }

    pub fn is_empty(&self) -> bool {
        self.f == 0
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.f..(j + 1) * self.f]
    }

    /// Rows that hit the numeric floor when built.
    pub fn floored_rows(&self) -> &[usize] {
        &self.floored_rows
    }

    /// `out[i] = sum_j theta_{j -> i} p[j]`.
    pub fn propagate(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.f];
        for (j, &pj) in p.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            let (lo, hi) = self.support[j];
            let row = self.row(j);
            for i in lo..hi {
                out[i] += row[i] * pj;
            }
        }
        out
    }
}

/// Per-cluster forward-algorithm state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentState {
    /// `P(tau_k = i, x_1:k | mean)` rescaled to sum to one.
    pub scaled_joint: Vec<f64>,
    /// Accumulated `log P(x_1:k | mean)`.
    pub log_marginal: f64,
    /// Number of observations absorbed so far.
    pub step_count: usize,
    /// Number of updates that had to fall back to the numeric floor.
    pub floor_events: usize,
}

impl AlignmentState {
    /// Uniform prior over the `f` mean states, before any observation.
    pub fn prior(f: usize) -> Self {
        Self {
            scaled_joint: vec![1.0 / f as f64; f],
            log_marginal: 0.0,
            step_count: 0,
            floor_events: 0,
        }
    }

    pub fn posterior(&self) -> &[f64] {
        &self.scaled_joint
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    /// Index with the largest posterior mass (lowest index on ties).
    pub fn mode(&self) -> usize {
        argmax(&self.scaled_joint)
    }

    /// Posterior mean of the alignment index.
    pub fn is_degenerate(&self) -> bool {
        self.floor_events > 0
    }

    pub fn expected_index(&self) -> f64 {
        self.scaled_joint.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Forward-algorithm driver for one mean trajectory and one HMM kernel.
#[derive(Debug, Clone)]
pub struct Aligner {
    matrix: TransitionMatrix,
}

impl Aligner {
    pub fn new(kernel: TransitionKernel, f: usize) -> Result<Self> {
        Ok(Self {
            matrix: TransitionMatrix::new(kernel, f)?,
        })
    }

    pub fn kernel(&self) -> &TransitionKernel {
        self.matrix.kernel()
    }

    pub fn matrix(&self) -> &TransitionMatrix {
        &self.matrix
    }

    /// Uniform prior times the first emission, rescaled.
    pub fn init(&self, mean: &MeanTrajectory, x_first: &[f64]) -> Result<AlignmentState> {
        self.update(&AlignmentState::prior(mean.len()), x_first, mean)
    }

    /// Absorbs one observation. The transition is skipped for the very first
    /// observation (`step_count == 0`), where the prior is used directly.
    pub fn update(&self, state: &AlignmentState, x_new: &[f64], mean: &MeanTrajectory) -> Result<AlignmentState> {
        let f = mean.len();
        if state.scaled_joint.len() != f || self.matrix.len() != f {
            return Err(CalmError::DimensionMismatch {
                field: "scaled_joint",
                expected: f,
                got: state.scaled_joint.len(),
            });
        }
        check_point(x_new, mean.dim())?;
        let predicted = if state.step_count == 0 {
            state.scaled_joint.clone()
        } else {
            self.matrix.propagate(&state.scaled_joint)
        };
        // Work in log space so distant observations do not underflow.
        let mut logs = vec![f64::NEG_INFINITY; f];
        let mut max = f64::NEG_INFINITY;
        for i in 0..f {
            if predicted[i] > 0.0 {
                let l = mean.log_emission_unchecked(x_new, i) + predicted[i].ln();
                logs[i] = l;
                max = max.max(l);
            }
        }
        let mut joint = vec![0.0; f];
        let mut sum = 0.0;
        if max.is_finite() {
            for i in 0..f {
                if logs[i] > f64::NEG_INFINITY {
                    joint[i] = (logs[i] - max).exp();
                    sum += joint[i];
                }
            }
        }
        if !(max.is_finite() && sum > 0.0 && sum.is_finite()) {
            return Ok(self.floor(state, &predicted));
        }
        for v in &mut joint {
            *v /= sum;
        }
        Ok(AlignmentState {
            scaled_joint: joint,
            log_marginal: state.log_marginal + max + sum.ln(),
            step_count: state.step_count + 1,
            floor_events: state.floor_events,
        })
    }

    /// Spreads the smallest positive mass uniformly over the states the
    /// kernel could have reached.
    fn floor(&self, state: &AlignmentState, predicted: &[f64]) -> AlignmentState {
        let f = predicted.len();
        let mut legal: Vec<usize> = (0..f).filter(|&i| predicted[i] > 0.0).collect();
        if legal.is_empty() {
            legal = (0..f).collect();
        }
        let mut joint = vec![0.0; f];
        for &i in &legal {
            joint[i] = 1.0 / legal.len() as f64;
        }
        log::debug!("alignment degenerate at step {}", state.step_count);
        AlignmentState {
            scaled_joint: joint,
            log_marginal: state.log_marginal + f64::MIN_POSITIVE.ln(),
            step_count: state.step_count + 1,
            floor_events: state.floor_events + 1,
        }
    }
}

pub fn init_alignment(mean: &MeanTrajectory, kernel: &TransitionKernel, x_first: &[f64]) -> Result<AlignmentState> {
    Aligner::new(*kernel, mean.len())?.init(mean, x_first)
}

pub fn forward_update(
    state: &AlignmentState,
    x_new: &[f64],
    mean: &MeanTrajectory,
    kernel: &TransitionKernel,
) -> Result<AlignmentState> {
    Aligner::new(*kernel, mean.len())?.update(state, x_new, mean)
}

pub fn posterior(state: &AlignmentState) -> &[f64] {
    state.posterior()
}

pub fn log_marginal(state: &AlignmentState) -> f64 {
    state.log_marginal
}

/// Next-step alignment distribution. Always uses the gradient-predict family
/// with `kernel`'s width and step, whatever family the HMM itself runs.
pub fn predict_next(posterior: &[f64], kernel: &TransitionKernel) -> Result<Vec<f64>> {
    let m = TransitionMatrix::new(kernel.as_family(KernelFamily::GradientPredict), posterior.len())?;
    Ok(m.propagate(posterior))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn line_mean(f: usize, var: f64) -> MeanTrajectory {
        MeanTrajectory::isotropic((0..f).map(|i| vec![i as f64, 0.0]).collect(), 0.1, var).unwrap()
    }

    #[test]
    fn emission_examples() {
        let m = line_mean(3, 1.0);
        assert_relative_eq!(emission(&[1.0, 0.0], &m, 1).unwrap(), 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(
            emission(&[2.0, 1.0], &m, 1).unwrap(),
            (-1.0f64).exp() / (2.0 * PI),
            epsilon = 1e-15
        );
        assert!(emission(&[0.0, 0.0], &m, 3).is_err());
        assert!(emission(&[0.0], &m, 0).is_err());
    }

    #[test]
    fn emission_integrates_to_one_in_1d() {
        let m = MeanTrajectory::isotropic(vec![vec![0.3], vec![1.0]], 0.1, 0.25).unwrap();
        // midpoint rule over +-10 sigma
        let (lo, hi, n) = (0.3 - 5.0, 0.3 + 5.0, 20_000);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|k| emission(&[lo + (k as f64 + 0.5) * h], &m, 0).unwrap() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(rbf(&[1.0, 2.0], &[1.0, 2.0], 0.7), 1.0);
        let s = 0.5;
        // ||a-b||^2 = 2 sigma
        assert_relative_eq!(rbf(&[0.0, 0.0], &[1.0, 0.0], s), (-1.0f64).exp(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rbf_monotone(d1 in 0.0f64..10.0, d2 in 0.0f64..10.0, s in 0.01f64..10.0) {
            let (a, b) = (rbf(&[0.0], &[d1], s), rbf(&[0.0], &[d2], s));
            prop_assert!((0.0..=1.0).contains(&a));
            if d1 * d1 / (2.0 * s) < 700.0 { prop_assert!(a > 0.0); }
            if d1 < d2 { prop_assert!(a >= b); }
            if d1 > d2 { prop_assert!(a <= b); }
        }

        #[test]
        fn rows_are_normalised(
            f in 1usize..25,
            sigma in 0.05f64..20.0,
            delta in 0.1f64..3.0,
            eps in 0.0f64..1e-2,
            fam in 0usize..4,
            literal in any::<bool>(),
        ) {
            let reading = if literal { BackwardsReading::Literal } else { BackwardsReading::ForwardBand };
            let k = TransitionKernel::new(KernelFamily::ALL[fam], delta)
                .with_sigma(sigma)
                .with_epsilon(eps)
                .with_reading(reading);
            for j in 0..f {
                let (row, _) = transition_row(&k, j, f).unwrap();
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|v| *v >= 0.0));
                match k.family {
                    KernelFamily::StableForward => {
                        for (i, v) in row.iter().enumerate() {
                            if i <= j && !(i == j && j == f - 1) {
                                prop_assert_eq!(*v, 0.0);
                            }
                        }
                    }
                    KernelFamily::GradientPredict => {
                        prop_assert!(row[..j].iter().all(|v| *v == 0.0));
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn stable_forward_rows() {
        let k = TransitionKernel::new(KernelFamily::StableForward, 1.0).with_sigma(1.0);
        assert_eq!(transition_row(&k, 2, 3).unwrap().0, vec![0.0, 0.0, 1.0]);
        let (row, floored) = transition_row(&k, 0, 3).unwrap();
        assert!(!floored);
        assert_eq!(row[0], 0.0);
        assert!((row[1] - 0.6225).abs() < 1e-4, "{row:?}");
        assert!((row[2] - 0.3775).abs() < 1e-4);
    }

    #[test]
    fn periodic_wraps() {
        let k = TransitionKernel::new(KernelFamily::Periodic, 1.0).with_epsilon(0.0);
        assert_eq!(transition_row(&k, 3, 4).unwrap().0, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backwards_readings_differ() {
        let base = TransitionKernel::new(KernelFamily::Backwards, 1.0);
        let (fwd, _) = transition_row(&base, 2, 6).unwrap();
        let (lit, _) = transition_row(&base.with_reading(BackwardsReading::Literal), 2, 6).unwrap();
        assert!(fwd[3] > 0.1 && fwd[0] < 1e-5);
        assert!(lit[0] > 0.01 && lit[4] < 1e-5);
    }

    #[test]
    fn underflow_is_floored() {
        // Non-integer step with a vanishing width leaves every band entry at 0.
        let k = TransitionKernel::new(KernelFamily::StableForward, 1.5).with_sigma(1e-6);
        let (row, floored) = transition_row(&k, 1, 5).unwrap();
        assert!(floored);
        assert_eq!(row, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let m = TransitionMatrix::new(k, 5).unwrap();
        assert_eq!(m.floored_rows().len(), 4);
    }

    #[test]
    fn single_state_mean() {
        let m = MeanTrajectory::isotropic(vec![vec![0.0, 0.0]], 0.1, 1.0).unwrap();
        for fam in KernelFamily::ALL {
            let al = Aligner::new(TransitionKernel::new(fam, 1.0), 1).unwrap();
            let mut s = al.init(&m, &[0.5, 0.5]).unwrap();
            for x in [[1.0, 2.0], [-3.0, 0.0]] {
                let before = s.log_marginal;
                s = al.update(&s, &x, &m).unwrap();
                assert_eq!(s.scaled_joint, vec![1.0]);
                let q = emission(&x, &m, 0).unwrap();
                assert_relative_eq!(s.log_marginal - before, q.ln(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn init_examples() {
        let m = MeanTrajectory::isotropic(
            vec![
                vec![0.0, 0.0],
                vec![1.0, 0.0],
                vec![2.0, 0.0],
                vec![3.0, 0.0],
                vec![4.0, 0.0],
            ],
            0.1,
            0.05,
        )
        .unwrap();
        let k = TransitionKernel::new(KernelFamily::StableForward, 1.0);
        let s = init_alignment(&m, &k, &[0.0, 0.0]).unwrap();
        assert_eq!(s.mode(), 0);
        assert_relative_eq!(s.posterior().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let s = init_alignment(&m, &k, &[1.5, 0.0]).unwrap();
        assert!((s.posterior()[1] - s.posterior()[2]).abs() < 1e-9);
        // log marginal after init is log of the rescale sum
        let direct: f64 = (0..5).map(|i| 0.2 * emission(&[1.5, 0.0], &m, i).unwrap()).sum();
        assert_relative_eq!(s.log_marginal, direct.ln(), epsilon = 1e-12);
    }

    #[test]
    fn far_observation_does_not_underflow() {
        let m = line_mean(10, 1e-4);
        let k = TransitionKernel::new(KernelFamily::StableForward, 1.0);
        let s = init_alignment(&m, &k, &[0.0, 500.0]).unwrap();
        assert_eq!(s.floor_events, 0);
        assert!(s.log_marginal.is_finite());
        let s2 = forward_update(&s, &[0.0, 1e200], &m, &k).unwrap();
        assert_eq!(s2.floor_events, 1);
        assert_relative_eq!(s2.scaled_joint.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(s2.scaled_joint[0], 0.0);
    }

    #[test]
    fn predict_examples() {
        let k = TransitionKernel::new(KernelFamily::StableForward, 1.0);
        let f = 6;
        let mut onehot = vec![0.0; f];
        onehot[2] = 1.0;
        let p = predict_next(&onehot, &k).unwrap();
        let row = transition_row(&k.as_family(KernelFamily::GradientPredict), 2, f)
            .unwrap()
            .0;
        assert_eq!(p, row);
        let mut end = vec![0.0; f];
        end[f - 1] = 1.0;
        assert_eq!(predict_next(&end, &k).unwrap(), end);
    }

    #[test]
    fn predict_matches_dense_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let f = rng.random_range(1..30);
            let k = TransitionKernel::new(KernelFamily::Backwards, rng.random_range(0.3..2.0));
            let mut p: Vec<f64> = (0..f).map(|_| rng.random::<f64>()).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            let got = predict_next(&p, &k).unwrap();
            let g = k.as_family(KernelFamily::GradientPredict);
            for i in 0..f {
                let mut expect = 0.0;
                for j in 0..f {
                    expect += transition_row(&g, j, f).unwrap().0[i] * p[j];
                }
                assert!((got[i] - expect).abs() <= 1e-12);
            }
        }
    }
}
