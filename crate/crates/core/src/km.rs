//! Weighted at-risk and failure processes and the weighted Kaplan-Meier
//! curve for one treatment arm.
//!
//! With per-subject weights `w_i`, the weighted at-risk mass in arm `k` is
//! `Q_hat(t) = (1/n) sum_i w_i 1{T_i >= t, X_i = k}` (closed at `t`) and
//! the weighted failure mass is
//! `F_hat(t) = (1/n) sum_i w_i 1{T_i <= t, event_i = 1, X_i = k}`.
//! The survival curve is the product over failure times `T_j <= t` of
//! `1 - w_j / (n Q_hat(T_j))`, computed as a plain product.

use crate::data::{ArmLabel, Dataset};
use crate::error::{Error, Result};

/// Sorted, prefix-summed view of one arm's weighted counting processes.
/// Evaluation at an arbitrary time is a binary search.
#[derive(Debug, Clone)]
pub struct WeightedProcesses {
    arm: ArmLabel,
    n: usize,
    /// Observed times of the arm's subjects, ascending.
    times: Vec<f64>,
    /// `suffix_weight[i]` = total weight of subjects with time index >= i.
    suffix_weight: Vec<f64>,
    /// Failure times of the arm, ascending.
    event_times: Vec<f64>,
    /// Weights of the failures, aligned with `event_times`.
    event_weights: Vec<f64>,
    /// `event_prefix[j]` = total weight of the first j failures.
    event_prefix: Vec<f64>,
}

impl WeightedProcesses {
    pub fn arm(&self) -> ArmLabel {
        self.arm
    }

    /// Size of the full dataset (not the arm).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Weighted at-risk mass `Q_hat(t)`; uses `T >= t`.
    pub fn q_hat(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x < t);
        self.suffix_weight[idx] / self.n as f64
    }

    /// Weighted cumulative failure mass `F_hat(t)`; uses `T <= t`.
    pub fn f_hat(&self, t: f64) -> f64 {
        let count = self.event_times.partition_point(|&x| x <= t);
        self.event_prefix[count] / self.n as f64
    }

    /// Failure times in this arm, ascending.
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    /// Weights attached to the failures, aligned with [`event_times`].
    ///
    /// [`event_times`]: Self::event_times
    pub fn event_weights(&self) -> &[f64] {
        &self.event_weights
    }

    /// Largest time with positive weighted at-risk mass.
    pub fn last_risk_time(&self) -> f64 {
        *self.times.last().expect("arm is nonempty by construction")
    }
}

/// Build the weighted processes for one arm from a full-length weight
/// vector. Weights must be finite and positive.
pub fn weighted_processes(
    data: &Dataset,
    weights: &[f64],
    arm: ArmLabel,
) -> Result<WeightedProcesses> {
    assert_eq!(weights.len(), data.n(), "one weight per record");
    let mut members: Vec<(f64, u8, f64)> = data
        .records()
        .iter()
        .zip(weights)
        .filter(|(r, _)| arm.matches(r.treatment))
        .map(|(r, &w)| (r.time, r.event, w))
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyArm {
            arm: arm.indicator(),
        });
    }
    if members.iter().any(|&(_, _, w)| !(w.is_finite() && w > 0.0)) {
        return Err(Error::NonFiniteWeight);
    }
    members.sort_by(|a, b| a.0.total_cmp(&b.0));

    let times: Vec<f64> = members.iter().map(|m| m.0).collect();
    let mut suffix_weight = vec![0.0; members.len() + 1];
    for i in (0..members.len()).rev() {
        suffix_weight[i] = suffix_weight[i + 1] + members[i].2;
    }

    let mut event_times = Vec::new();
    let mut event_weights = Vec::new();
    for &(t, event, w) in &members {
        if event == 1 {
            event_times.push(t);
            event_weights.push(w);
        }
    }
    let mut event_prefix = vec![0.0; event_times.len() + 1];
    for (j, &w) in event_weights.iter().enumerate() {
        event_prefix[j + 1] = event_prefix[j] + w;
    }

    Ok(WeightedProcesses {
        arm,
        n: data.n(),
        times,
        suffix_weight,
        event_times,
        event_weights,
        event_prefix,
    })
}

/// A right-continuous survival step function. The value at `t` is the
/// value attached to the largest knot `<= t`, or 1 before the first knot.
/// The curve is only defined up to [`domain_end`](Self::domain_end), the
/// last time with positive weighted at-risk mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    arm: ArmLabel,
    knots: Vec<f64>,
    values: Vec<f64>,
    domain_end: f64,
}

impl SurvivalCurve {
    pub(crate) fn from_parts(
        arm: ArmLabel,
        knots: Vec<f64>,
        values: Vec<f64>,
        domain_end: f64,
    ) -> Self {
        debug_assert_eq!(knots.len(), values.len());
        Self {
            arm,
            knots,
            values,
            domain_end,
        }
    }

    pub fn arm(&self) -> ArmLabel {
        self.arm
    }

    /// Failure times where the curve steps down.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Survival value immediately after each knot.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }
}

/// Weighted Kaplan-Meier curve
/// `S(t) = prod_{failures T_j <= t} [1 - w_j / (n Q_hat(T_j))]`.
///
/// A factor can only drop below zero when external weights let one
/// failure outweigh its own risk set; that is reported as
/// [`Error::DegenerateRiskSet`] rather than producing a negative curve.
/// Factors within floating-point noise of zero are clamped to zero.
pub fn iptw_km(processes: &WeightedProcesses) -> Result<SurvivalCurve> {
    let n = processes.n() as f64;
    let mut values = Vec::with_capacity(processes.event_times().len());
    let mut survival = 1.0;
    for (&t, &w) in processes
        .event_times()
        .iter()
        .zip(processes.event_weights())
    {
        let factor = 1.0 - w / (n * processes.q_hat(t));
        if factor < -1e-12 {
            return Err(Error::DegenerateRiskSet { time: t });
        }
        survival *= factor.max(0.0);
        values.push(survival);
    }
    Ok(SurvivalCurve::from_parts(
        processes.arm(),
        processes.event_times().to_vec(),
        values,
        processes.last_risk_time(),
    ))
}

/// Evaluate a survival curve at `t`, failing outside `[0, domain_end]`.
pub fn survival_at(curve: &SurvivalCurve, t: f64) -> Result<f64> {
    if !(0.0..=curve.domain_end).contains(&t) {
        return Err(Error::UndefinedBeyondLastRisk {
            t,
            domain_end: curve.domain_end,
        });
    }
    let idx = curve.knots.partition_point(|&k| k <= t);
    if idx == 0 {
        Ok(1.0)
    } else {
        Ok(curve.values[idx - 1])
    }
}
