//! Reference implementations used by the test suite to validate the
//! optimized estimators.
//!
//! Everything here recomputes its quantities from first principles with
//! direct loops and its own numeric kernels (naive sigmoid, closed-form
//! weights, Gauss-Jordan solves, derivative-free likelihood search), so
//! agreement with the production modules is evidence rather than
//! tautology. None of this is meant for production use; the bootstrap in
//! particular exists only to corroborate the analytic standard error on
//! single datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{validate_dataset_with, ArmLabel, Dataset, SubjectRecord, TieBreak};
use crate::error::{Error, Result};
use crate::km::{iptw_km, survival_at, weighted_processes, SurvivalCurve};
use crate::propensity::{fit_logistic, PropensityFit, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use crate::variance::{InfluenceTable, ReportTarget};

/// Textbook unweighted product-limit estimator for one arm.
pub fn classical_km(data: &Dataset, arm: ArmLabel) -> Result<SurvivalCurve> {
    let mut members: Vec<(f64, u8)> = data
        .records()
        .iter()
        .filter(|r| arm.matches(r.treatment))
        .map(|r| (r.time, r.event))
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyArm {
            arm: arm.indicator(),
        });
    }
    members.sort_by(|a, b| a.0.total_cmp(&b.0));
    let domain_end = members.last().unwrap().0;

    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut survival = 1.0;
    let mut i = 0;
    while i < members.len() {
        let t = members[i].0;
        let at_risk = members[i..].len() as f64;
        let mut deaths = 0.0;
        let mut j = i;
        while j < members.len() && members[j].0 == t {
            if members[j].1 == 1 {
                deaths += 1.0;
            }
            j += 1;
        }
        if deaths > 0.0 {
            survival *= (at_risk - deaths) / at_risk;
            knots.push(t);
            values.push(survival);
        }
        i = j;
    }
    Ok(SurvivalCurve::from_parts(arm, knots, values, domain_end))
}

// Sigmoid in the plain exponential form. The clamp keeps the ratio finite;
// callers stay far away from the clamp in practice.
fn sig(x: f64) -> f64 {
    let x = x.clamp(-500.0, 500.0);
    x.exp() / (1.0 + x.exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Closed-form weights: 1/g(s) = 1 + exp(-s) and 1/(1-g(s)) = 1 + exp(s).
fn weight_direct(record: &SubjectRecord, gamma: &[f64]) -> f64 {
    let s = dot(gamma, &record.covariates);
    if record.treatment == 1 {
        1.0 + (-s).exp()
    } else {
        1.0 + s.exp()
    }
}

// d/dgamma of the closed-form weights: -exp(-s) Z and exp(s) Z.
fn weight_gradient_direct(record: &SubjectRecord, gamma: &[f64]) -> Vec<f64> {
    let s = dot(gamma, &record.covariates);
    let c = if record.treatment == 1 {
        -(-s).exp()
    } else {
        s.exp()
    };
    record.covariates.iter().map(|z| c * z).collect()
}

/// Gauss-Jordan inversion with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn invert(matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = matrix.len();
    let mut aug: Vec<Vec<f64>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        if aug[pivot_row][col].abs() < 1e-300 {
            return Err(Error::SingularInformation);
        }
        aug.swap(col, pivot_row);
        let pivot = aug[col][col];
        for v in &mut aug[col] {
            *v /= pivot;
        }
        for row in 0..n {
            if row != col {
                let factor = aug[row][col];
                for j in 0..2 * n {
                    aug[row][j] -= factor * aug[col][j];
                }
            }
        }
    }
    Ok(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

/// Per-definition evaluation of every influence quantity with direct
/// double loops, `O(n^3)` overall. Test scale only.
#[allow(clippy::needless_range_loop)]
pub fn brute_force_influence(
    data: &Dataset,
    fit: &PropensityFit,
    t: f64,
    arm: ArmLabel,
) -> Result<InfluenceTable> {
    let n = data.n();
    assert!(n <= 64, "brute-force oracle is for test-scale data");
    let records = data.records();
    let gamma = &fit.gamma_hat;
    if !records.iter().any(|r| arm.matches(r.treatment)) {
        return Err(Error::EmptyArm {
            arm: arm.indicator(),
        });
    }

    let weights: Vec<f64> = records.iter().map(|r| weight_direct(r, gamma)).collect();

    // Weighted at-risk mass by full scan.
    let q_hat = |time: f64| -> f64 {
        records
            .iter()
            .zip(&weights)
            .filter(|(r, _)| arm.matches(r.treatment) && r.time >= time)
            .map(|(_, w)| w)
            .sum::<f64>()
            / n as f64
    };
    let last_risk = records
        .iter()
        .filter(|r| arm.matches(r.treatment))
        .fold(0.0_f64, |m, r| m.max(r.time));
    if t > last_risk {
        return Err(Error::TimeBeyondRiskSupport {
            t,
            domain_end: last_risk,
            arm: arm.indicator(),
        });
    }

    // Product-limit survival at t from scratch.
    let mut survival = 1.0;
    for (j, r) in records.iter().enumerate() {
        if arm.matches(r.treatment) && r.event == 1 && r.time <= t {
            survival *= 1.0 - weights[j] / (n as f64 * q_hat(r.time));
        }
    }

    let mut phi1 = vec![0.0; n];
    let mut phi2 = vec![0.0; n];
    let mut phi = vec![0.0; n];
    for i in 0..n {
        if arm.matches(records[i].treatment) {
            for (j, rj) in records.iter().enumerate() {
                if rj.event == 1 && arm.matches(rj.treatment) && rj.time <= t.min(records[i].time) {
                    let q = q_hat(rj.time);
                    phi1[i] += weights[j] / (n as f64 * q * q);
                }
            }
            let ri = &records[i];
            if ri.event == 1 && ri.time <= t {
                phi2[i] = 1.0 / q_hat(ri.time);
            }
        }
        phi[i] = survival * (phi1[i] - phi2[i]);
    }

    // Information matrix by triple loop, then its explicit inverse.
    let p = data.p();
    let mut information = vec![vec![0.0; p]; p];
    for r in records {
        let s = dot(gamma, &r.covariates);
        let v = sig(s) * (1.0 - sig(s));
        for a in 0..p {
            for b in 0..p {
                information[a][b] += v * r.covariates[a] * r.covariates[b] / n as f64;
            }
        }
    }
    let inverse = invert(&information)?;

    let mut correction = vec![0.0; p];
    for (j, rj) in records.iter().enumerate() {
        let gradient = weight_gradient_direct(rj, gamma);
        for (c, g) in correction.iter_mut().zip(&gradient) {
            *c += g * phi[j] / n as f64;
        }
    }

    let mut psi = vec![0.0; n];
    for (i, ri) in records.iter().enumerate() {
        let resid = ri.treatment as f64 - sig(dot(gamma, &ri.covariates));
        let zeta: Vec<f64> = inverse
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&ri.covariates)
                    .map(|(inv, z)| inv * z * resid)
                    .sum::<f64>()
            })
            .collect();
        psi[i] = weights[i] * phi[i] + dot(&zeta, &correction);
    }

    Ok(InfluenceTable {
        t,
        arm,
        phi1,
        phi2,
        phi,
        psi,
        correction,
    })
}

/// Central finite differences of a scalar function, one coordinate at a
/// time.
pub fn finite_diff_gradient<F>(f: F, gamma: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0);
    (0..gamma.len())
        .map(|k| {
            let mut up = gamma.to_vec();
            let mut down = gamma.to_vec();
            up[k] += step;
            down[k] -= step;
            (f(&up) - f(&down)) / (2.0 * step)
        })
        .collect()
}

// Log-likelihood in plain form, guarded against exp overflow.
fn log_likelihood_direct(data: &Dataset, gamma: &[f64]) -> f64 {
    data.records()
        .iter()
        .map(|r| {
            let s = dot(gamma, &r.covariates);
            let log_denom = if s > 35.0 { s } else { (1.0 + s.exp()).ln() };
            r.treatment as f64 * s - log_denom
        })
        .sum()
}

/// Derivative-free likelihood maximization: cyclic coordinate search with
/// golden-section line searches. Slow but independent of the Newton path.
pub fn coordinate_search_mle(data: &Dataset) -> Vec<f64> {
    let p = data.p();
    let mut gamma = vec![0.0; p];
    for _ in 0..300 {
        let mut largest_move = 0.0_f64;
        for k in 0..p {
            let current = gamma[k];
            let objective = |v: f64| {
                let mut candidate = gamma.clone();
                candidate[k] = v;
                log_likelihood_direct(data, &candidate)
            };
            let best = golden_section_max(objective, current - 4.0, current + 4.0);
            largest_move = largest_move.max((best - current).abs());
            gamma[k] = best;
        }
        if largest_move < 1e-10 {
            break;
        }
    }
    gamma
}

fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..200 {
        if fa > fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

/// Nonparametric bootstrap standard error of the survival estimate (or
/// treated-minus-control difference) at time `t`.
///
/// Each resample draws subjects with replacement, refits the propensity
/// model, and recomputes the estimate, so the variability of the
/// estimated weights is part of what the bootstrap measures. Resampled
/// duplicates of a failure create exact ties, which are separated by the
/// deterministic jitter. Fails when more than 5% of resamples abort.
pub fn bootstrap_se(
    data: &Dataset,
    t: f64,
    target: ReportTarget,
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    if resamples < 100 {
        return Err(Error::InvalidConfig(
            "bootstrap needs at least 100 resamples".to_string(),
        ));
    }
    let n = data.n();
    let outcomes: Vec<Result<f64>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, b as u64));
            let records: Vec<SubjectRecord> = (0..n)
                .map(|_| data.records()[rng.random_range(0..n)].clone())
                .collect();
            let resample = validate_dataset_with(records, TieBreak::Jitter)?;
            estimate_target(&resample, t, target)
        })
        .collect();

    let estimates: Vec<f64> = outcomes
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .copied()
        .collect();
    let failures = resamples - estimates.len();
    if failures * 20 > resamples {
        return Err(Error::ExcessiveFailures {
            failures,
            total: resamples,
        });
    }
    // Own standard deviation with denominator B - 1.
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let ss: f64 = estimates.iter().map(|e| (e - mean) * (e - mean)).sum();
    Ok((ss / (estimates.len() - 1) as f64).sqrt())
}

fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn estimate_target(data: &Dataset, t: f64, target: ReportTarget) -> Result<f64> {
    let fit = fit_logistic(data, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)?;
    let arm_estimate = |arm: ArmLabel| -> Result<f64> {
        let processes = weighted_processes(data, &fit.weights, arm)?;
        let curve = iptw_km(&processes)?;
        survival_at(&curve, t)
    };
    match target {
        ReportTarget::Arm(arm) => arm_estimate(arm),
        ReportTarget::Difference => {
            Ok(arm_estimate(ArmLabel::Treated)? - arm_estimate(ArmLabel::Control)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;
    use approx::assert_abs_diff_eq;

    fn rec(time: f64, event: u8, treatment: u8) -> SubjectRecord {
        SubjectRecord::new(time, event, treatment, vec![1.0])
    }

    #[test]
    fn classical_km_hand_computed() {
        let data = validate_dataset(vec![rec(1.0, 1, 1), rec(2.0, 1, 1), rec(1.5, 0, 1)]).unwrap();
        let curve = classical_km(&data, ArmLabel::Treated).unwrap();
        assert_abs_diff_eq!(
            survival_at(&curve, 1.0).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(survival_at(&curve, 2.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn classical_km_without_events_stays_at_one() {
        let data = validate_dataset(vec![rec(1.0, 0, 1), rec(2.0, 0, 1)]).unwrap();
        let curve = classical_km(&data, ArmLabel::Treated).unwrap();
        assert!(curve.knots().is_empty());
        assert_eq!(survival_at(&curve, 1.7).unwrap(), 1.0);
    }

    #[test]
    fn classical_km_empty_arm() {
        let data = validate_dataset(vec![rec(1.0, 1, 1)]).unwrap();
        assert!(matches!(
            classical_km(&data, ArmLabel::Control).unwrap_err(),
            Error::EmptyArm { arm: 0 }
        ));
    }

    #[test]
    fn brute_force_rejects_missing_arm() {
        let data = validate_dataset(vec![rec(1.0, 1, 1), rec(2.0, 0, 1)]).unwrap();
        let fit = PropensityFit::evaluate_at(&data, &[0.0]).unwrap();
        assert!(matches!(
            brute_force_influence(&data, &fit, 1.0, ArmLabel::Control).unwrap_err(),
            Error::EmptyArm { arm: 0 }
        ));
    }

    #[test]
    fn brute_force_is_zero_before_events() {
        let data = validate_dataset(vec![rec(1.0, 1, 1), rec(2.0, 0, 0)]).unwrap();
        let fit = PropensityFit::evaluate_at(&data, &[0.3]).unwrap();
        let table = brute_force_influence(&data, &fit, 0.5, ArmLabel::Treated).unwrap();
        assert!(table.phi.iter().all(|&v| v == 0.0));
        assert!(table.psi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_differences_on_quadratic() {
        let grad = finite_diff_gradient(|g| g.iter().map(|x| x * x).sum(), &[1.0, 2.0], 1e-6);
        assert_abs_diff_eq!(grad[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(grad[1], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn finite_differences_on_constant() {
        let grad = finite_diff_gradient(|_| 3.25, &[0.5, -0.5, 2.0], 1e-6);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gauss_jordan_inverts_identity_like() {
        let m = vec![vec![2.0, 0.0], vec![0.0, 4.0]];
        let inv = invert(&m).unwrap();
        assert_abs_diff_eq!(inv[0][0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(inv[1][1], 0.25, epsilon = 1e-15);
        let singular = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(invert(&singular).is_err());
    }

    #[test]
    fn coordinate_search_matches_closed_form_intercept() {
        // 9 of 12 treated: MLE is logit(0.75) = ln 3.
        let records = (0..12)
            .map(|i| rec(1.0 + i as f64, 0, (i < 9) as u8))
            .collect();
        let data = validate_dataset(records).unwrap();
        let gamma = coordinate_search_mle(&data);
        // Line searches locate the optimum to about sqrt(eps).
        assert_abs_diff_eq!(gamma[0], 3.0_f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn bootstrap_is_deterministic_and_zero_on_degenerate_data() {
        // All events after t: every resample estimates survival 1.
        let records: Vec<SubjectRecord> = (0..30)
            .map(|i| rec(2.0 + i as f64 * 0.01, (i % 2) as u8, (i % 2) as u8))
            .collect();
        let data = validate_dataset(records).unwrap();
        let a = bootstrap_se(&data, 1.0, ReportTarget::Arm(ArmLabel::Treated), 100, 9).unwrap();
        let b = bootstrap_se(&data, 1.0, ReportTarget::Arm(ArmLabel::Treated), 100, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, 0.0);
    }
}
