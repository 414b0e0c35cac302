//! Influence-function standard errors for the weighted Kaplan-Meier
//! estimator at a fixed evaluation time.
//!
//! For arm `k` and time `t`, each subject contributes
//!
//! ```text
//! phi1_i = 1{X_i = k} sum_{failures j in arm k, T_j <= min(t, T_i)}
//!              w_j / (n Q_hat(T_j)^2)
//! phi2_i = 1{T_i <= t, event_i = 1, X_i = k} / Q_hat(T_i)
//! phi_i  = S_hat(t) (phi1_i - phi2_i)
//! psi_i  = w_i phi_i + zeta_i' * (1/n) sum_j (dw/dgamma)_j phi_j
//! ```
//!
//! The standard error that accounts for the estimated weights is the
//! sample standard deviation of `psi` over `sqrt(n)`; the weights-held-
//! fixed variant drops the correction term and uses `w_i phi_i` instead.
//! Treatment-difference standard errors use the per-subject contrasts
//! between the two arms' contributions.

use crate::data::{ArmLabel, Dataset};
use crate::error::{Error, Result};
use crate::km::{survival_at, weighted_processes, SurvivalCurve};
use crate::linalg::dot;
use crate::propensity::{weight_gradient, PropensityFit, ScoreInfluence};
use crate::stats;

/// Per-subject influence components at one (time, arm) pair.
///
/// `psi` and `correction` stay empty until [`psi_table`] completes the
/// table.
#[derive(Debug, Clone)]
pub struct InfluenceTable {
    pub t: f64,
    pub arm: ArmLabel,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Averaged weight-gradient term `(1/n) sum_j (dw/dgamma)_j phi_j`.
    pub correction: Vec<f64>,
}

/// What a [`VarianceReport`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportTarget {
    Arm(ArmLabel),
    Difference,
}

impl std::fmt::Display for ReportTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportTarget::Arm(arm) => write!(f, "{arm}"),
            ReportTarget::Difference => write!(f, "difference"),
        }
    }
}

/// Point estimate with both standard errors and a Wald interval (built
/// from the proposed standard error).
#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub t: f64,
    pub target: ReportTarget,
    pub estimate: f64,
    pub se_proposed: f64,
    pub se_gamma_fixed: f64,
    pub ci_level: f64,
    pub ci: (f64, f64),
}

/// Compute `phi1`, `phi2`, and `phi` for every subject at time `t`.
///
/// `phi1` is accumulated through a prefix sum over the arm's sorted
/// failure times, so the whole table costs `O(n log n)`.
pub fn phi_components(
    data: &Dataset,
    fit: &PropensityFit,
    curve: &SurvivalCurve,
    t: f64,
    arm: ArmLabel,
) -> Result<InfluenceTable> {
    if curve.arm() != arm {
        return Err(Error::InvalidConfig(format!(
            "curve is for {}, requested {}",
            curve.arm(),
            arm
        )));
    }
    let processes = weighted_processes(data, &fit.weights, arm)?;
    if !(0.0..=processes.last_risk_time()).contains(&t) {
        return Err(Error::TimeBeyondRiskSupport {
            t,
            domain_end: processes.last_risk_time(),
            arm: arm.indicator(),
        });
    }
    let n = data.n() as f64;
    let survival = survival_at(curve, t)?;

    // Prefix sums of w_j / (n Q_hat(T_j)^2) over the arm's failures.
    let event_times = processes.event_times();
    let mut prefix = Vec::with_capacity(event_times.len() + 1);
    prefix.push(0.0);
    for (&tj, &wj) in event_times.iter().zip(processes.event_weights()) {
        let q = processes.q_hat(tj);
        prefix.push(prefix.last().unwrap() + wj / (n * q * q));
    }

    let mut phi1 = vec![0.0; data.n()];
    let mut phi2 = vec![0.0; data.n()];
    let mut phi = vec![0.0; data.n()];
    for (i, r) in data.records().iter().enumerate() {
        if arm.matches(r.treatment) {
            let horizon = t.min(r.time);
            let count = event_times.partition_point(|&x| x <= horizon);
            phi1[i] = prefix[count];
            if r.event == 1 && r.time <= t {
                phi2[i] = 1.0 / processes.q_hat(r.time);
            }
        }
        phi[i] = survival * (phi1[i] - phi2[i]);
    }

    Ok(InfluenceTable {
        t,
        arm,
        phi1,
        phi2,
        phi,
        psi: Vec::new(),
        correction: Vec::new(),
    })
}

/// Complete an influence table with the weight-gradient correction and the
/// per-subject `psi` values. The correction averages over all subjects,
/// independently of the subject it is applied to.
pub fn psi_table(
    data: &Dataset,
    fit: &PropensityFit,
    influence: &ScoreInfluence,
    table: InfluenceTable,
) -> Result<InfluenceTable> {
    let n = data.n();
    let p = data.p();
    let mut table = table;

    let mut correction = vec![0.0; p];
    for (r, &phi_j) in data.records().iter().zip(&table.phi) {
        let gradient = weight_gradient(&fit.gamma_hat, r)?;
        for (c, g) in correction.iter_mut().zip(&gradient) {
            *c += g * phi_j;
        }
    }
    for c in &mut correction {
        *c /= n as f64;
    }

    let mut psi = Vec::with_capacity(n);
    for i in 0..n {
        psi.push(fit.weights[i] * table.phi[i] + dot(&influence.zeta[i], &correction));
    }

    table.correction = correction;
    table.psi = psi;
    Ok(table)
}

/// Standard error from per-subject influence values:
/// `sqrt(sampleVariance(psi) / n)` with the `n - 1` variance denominator.
pub fn se_proposed(psi: &[f64]) -> Result<f64> {
    if psi.len() < 2 {
        return Err(Error::InsufficientSample);
    }
    Ok((stats::sample_variance(psi) / psi.len() as f64).sqrt())
}

/// Standard error with the weights treated as known: the correction term
/// is dropped, leaving the sample variance of `w_i phi_i`.
pub fn se_gamma_fixed(fit: &PropensityFit, table: &InfluenceTable) -> Result<f64> {
    if table.phi.len() < 2 {
        return Err(Error::InsufficientSample);
    }
    let base: Vec<f64> = fit
        .weights
        .iter()
        .zip(&table.phi)
        .map(|(w, phi)| w * phi)
        .collect();
    Ok((stats::sample_variance(&base) / base.len() as f64).sqrt())
}

/// Report for a single arm at the table's evaluation time.
pub fn arm_report(
    fit: &PropensityFit,
    table: &InfluenceTable,
    curve: &SurvivalCurve,
    ci_level: f64,
) -> Result<VarianceReport> {
    require_completed(table)?;
    let estimate = survival_at(curve, table.t)?;
    let se = se_proposed(&table.psi)?;
    let se_fixed = se_gamma_fixed(fit, table)?;
    Ok(VarianceReport {
        t: table.t,
        target: ReportTarget::Arm(table.arm),
        estimate,
        se_proposed: se,
        se_gamma_fixed: se_fixed,
        ci_level,
        ci: wald_ci(estimate, se, ci_level)?,
    })
}

/// Report for the treated-minus-control survival difference. Both tables
/// must come from the same dataset, fit, and evaluation time.
pub fn difference_report(
    fit: &PropensityFit,
    treated: &InfluenceTable,
    control: &InfluenceTable,
    treated_curve: &SurvivalCurve,
    control_curve: &SurvivalCurve,
    ci_level: f64,
) -> Result<VarianceReport> {
    require_completed(treated)?;
    require_completed(control)?;
    if treated.arm != ArmLabel::Treated
        || control.arm != ArmLabel::Control
        || treated.t != control.t
    {
        return Err(Error::InvalidConfig(
            "difference requires treated and control tables at the same time".to_string(),
        ));
    }
    let t = treated.t;
    let estimate = survival_at(treated_curve, t)? - survival_at(control_curve, t)?;

    let contrasts: Vec<f64> = treated
        .psi
        .iter()
        .zip(&control.psi)
        .map(|(a, b)| a - b)
        .collect();
    let se = se_proposed(&contrasts)?;

    let fixed_contrasts: Vec<f64> = fit
        .weights
        .iter()
        .zip(treated.phi.iter().zip(&control.phi))
        .map(|(w, (a, b))| w * (a - b))
        .collect();
    let se_fixed = se_proposed(&fixed_contrasts)?;

    Ok(VarianceReport {
        t,
        target: ReportTarget::Difference,
        estimate,
        se_proposed: se,
        se_gamma_fixed: se_fixed,
        ci_level,
        ci: wald_ci(estimate, se, ci_level)?,
    })
}

fn require_completed(table: &InfluenceTable) -> Result<()> {
    if table.psi.is_empty() {
        return Err(Error::InvalidConfig(
            "influence table has no psi values; call psi_table first".to_string(),
        ));
    }
    Ok(())
}

/// Two-sided Wald interval `estimate +/- z se` at the given level.
pub fn wald_ci(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    Ok((estimate - z * se, estimate + z * se))
}

/// Standard normal quantile by Acklam's rational approximation (relative
/// error below 1.2e-9 everywhere).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile requires p in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
