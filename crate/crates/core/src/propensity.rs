//! Logistic propensity model: maximum-likelihood fit, inverse-probability
//! weights, weight gradients, and the score influence needed for variance
//! estimation.
//!
//! The model is `Pr(X = 1 | Z) = g(gamma' Z)` with `g` the logistic
//! function. Fitting uses Newton-Raphson with the analytic score and
//! Hessian, starting from the zero vector, with step-halving whenever a
//! full step would decrease the log-likelihood. The negated Hessian scaled
//! by `1/n` is exactly the information matrix needed downstream, so it is
//! reported on the fit.

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::linalg::{dot, inf_norm, Cholesky};

/// Default convergence tolerance on the infinity norm of the score.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Default Newton iteration cap.
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
/// Coefficient norm beyond which a non-converged fit is declared separated.
const SEPARATION_CAP: f64 = 30.0;

/// Numerically stable logistic function `g(x) = exp(x) / (1 + exp(x))`.
///
/// Branches on the sign of `x` so neither branch ever exponentiates a
/// positive argument.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A fitted (or fixed-coefficient) propensity model evaluated on a dataset.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Coefficient estimate.
    pub gamma_hat: Vec<f64>,
    /// Information matrix `(1/n) sum g_i (1 - g_i) Z_i Z_i'` at `gamma_hat`.
    pub information: Vec<Vec<f64>>,
    /// Per-subject inverse-probability weights at `gamma_hat`.
    pub weights: Vec<f64>,
    /// Newton iterations performed.
    pub iterations: usize,
    /// Whether the score met the tolerance.
    pub converged: bool,
    /// Infinity norm of the score at `gamma_hat`.
    pub max_score_norm: f64,
}

impl PropensityFit {
    /// Evaluate weights, information, and diagnostics at a fixed
    /// coefficient vector, without optimizing. `converged` is false and
    /// `iterations` is 0; `max_score_norm` reports the score at `gamma`.
    pub fn evaluate_at(data: &Dataset, gamma: &[f64]) -> Result<Self> {
        if gamma.len() != data.p() {
            return Err(Error::InvalidConfig(format!(
                "coefficient length {} does not match covariate dimension {}",
                gamma.len(),
                data.p()
            )));
        }
        let score = score_vector(data, gamma);
        let information = information_matrix(data, gamma);
        let weights = all_weights(data, gamma)?;
        Ok(Self {
            gamma_hat: gamma.to_vec(),
            information,
            weights,
            iterations: 0,
            converged: false,
            max_score_norm: inf_norm(&score),
        })
    }
}

/// Score `sum_i Z_i (X_i - g(gamma' Z_i))`.
fn score_vector(data: &Dataset, gamma: &[f64]) -> Vec<f64> {
    let mut score = vec![0.0; data.p()];
    for r in data.records() {
        let resid = r.treatment as f64 - logistic(dot(gamma, &r.covariates));
        for (s, z) in score.iter_mut().zip(&r.covariates) {
            *s += z * resid;
        }
    }
    score
}

/// `(1/n) sum_i g_i (1 - g_i) Z_i Z_i'`.
// Triangular accumulation reads clearest with plain indices.
#[allow(clippy::needless_range_loop)]
fn information_matrix(data: &Dataset, gamma: &[f64]) -> Vec<Vec<f64>> {
    let p = data.p();
    let n = data.n() as f64;
    let mut info = vec![vec![0.0; p]; p];
    for r in data.records() {
        let s = dot(gamma, &r.covariates);
        let v = logistic(s) * logistic(-s);
        for a in 0..p {
            let za = r.covariates[a] * v;
            for b in 0..=a {
                info[a][b] += za * r.covariates[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[a][b] /= n;
            info[b][a] = info[a][b];
        }
        info[a][a] /= n;
    }
    info
}

fn log_likelihood(data: &Dataset, gamma: &[f64]) -> f64 {
    data.records()
        .iter()
        .map(|r| {
            let s = dot(gamma, &r.covariates);
            // log(1 + exp(s)) without overflow
            let log1p_exp = if s > 0.0 {
                s + (-s).exp().ln_1p()
            } else {
                s.exp().ln_1p()
            };
            r.treatment as f64 * s - log1p_exp
        })
        .sum()
}

fn all_weights(data: &Dataset, gamma: &[f64]) -> Result<Vec<f64>> {
    data.records().iter().map(|r| weight(gamma, r)).collect()
}

struct NewtonOutcome {
    gamma: Vec<f64>,
    iterations: usize,
    max_score_norm: f64,
    // Log-likelihood at the start and after each accepted step. Only
    // inspected by tests.
    #[allow(dead_code)]
    loglik_path: Vec<f64>,
}

fn newton_optimize(data: &Dataset, tolerance: f64, max_iterations: usize) -> Result<NewtonOutcome> {
    let p = data.p();
    let n = data.n() as f64;
    let mut gamma = vec![0.0; p];
    let mut iterations = 0;
    let mut loglik = log_likelihood(data, &gamma);
    let mut loglik_path = vec![loglik];

    let max_score_norm = loop {
        let score = score_vector(data, &gamma);
        let norm = inf_norm(&score);
        if norm <= tolerance {
            break norm;
        }
        if inf_norm(&gamma) > SEPARATION_CAP {
            return Err(Error::Separation {
                cap: SEPARATION_CAP,
                iterations,
                score_norm: norm,
            });
        }
        if iterations >= max_iterations {
            return Err(Error::MaxIterationsExceeded(max_iterations));
        }

        // Negated Hessian is n times the information matrix.
        let info = information_matrix(data, &gamma);
        let chol = Cholesky::decompose(&info).ok_or(Error::SingularInformation)?;
        let step: Vec<f64> = chol.solve(&score).into_iter().map(|s| s / n).collect();

        // Step-halving keeps the log-likelihood nondecreasing. The slack
        // absorbs rounding noise in the likelihood comparison near the
        // optimum, where the full Newton step must still be accepted.
        let slack = 1e-10 * (1.0 + loglik.abs());
        let mut scale = 1.0;
        loop {
            let candidate: Vec<f64> = gamma
                .iter()
                .zip(&step)
                .map(|(g, s)| g + scale * s)
                .collect();
            let candidate_ll = log_likelihood(data, &candidate);
            if candidate_ll >= loglik - slack || scale < 1e-12 {
                gamma = candidate;
                loglik = candidate_ll;
                break;
            }
            scale *= 0.5;
        }
        loglik_path.push(loglik);
        iterations += 1;
    };

    Ok(NewtonOutcome {
        gamma,
        iterations,
        max_score_norm,
        loglik_path,
    })
}

/// Fit the logistic propensity model by Newton-Raphson from the zero
/// vector. The returned fit satisfies
/// `||sum_i Z_i (X_i - g(gamma_hat' Z_i))||_inf <= tolerance` and is
/// deterministic for a given dataset.
pub fn fit_logistic(
    data: &Dataset,
    tolerance: f64,
    max_iterations: usize,
) -> Result<PropensityFit> {
    let outcome = newton_optimize(data, tolerance, max_iterations)?;
    let information = information_matrix(data, &outcome.gamma);
    let weights = all_weights(data, &outcome.gamma)?;
    Ok(PropensityFit {
        gamma_hat: outcome.gamma,
        information,
        weights,
        iterations: outcome.iterations,
        converged: true,
        max_score_norm: outcome.max_score_norm,
    })
}

/// Inverse-probability weight `1 / g(gamma' Z)` for treated subjects and
/// `1 / (1 - g(gamma' Z))` for controls. The complement is evaluated as
/// `g(-gamma' Z)` so it never cancels.
pub fn weight(gamma: &[f64], record: &SubjectRecord) -> Result<f64> {
    let s = dot(gamma, &record.covariates);
    let w = if record.treatment == 1 {
        1.0 / logistic(s)
    } else {
        1.0 / logistic(-s)
    };
    if w.is_finite() {
        Ok(w)
    } else {
        Err(Error::NonFiniteWeight)
    }
}

/// Analytic gradient of [`weight`] with respect to `gamma`:
/// `-(1 - g)/g * Z` for treated subjects, `g/(1 - g) * Z` for controls.
pub fn weight_gradient(gamma: &[f64], record: &SubjectRecord) -> Result<Vec<f64>> {
    let s = dot(gamma, &record.covariates);
    let coefficient = if record.treatment == 1 {
        -logistic(-s) / logistic(s)
    } else {
        logistic(s) / logistic(-s)
    };
    if !coefficient.is_finite() {
        return Err(Error::NonFiniteWeight);
    }
    Ok(record.covariates.iter().map(|z| coefficient * z).collect())
}

/// Per-subject score influence values.
#[derive(Debug, Clone)]
pub struct ScoreInfluence {
    /// `zeta_i = V1_hat^{-1} Z_i (X_i - g(gamma_hat' Z_i))`, one vector per
    /// subject. Their sum vanishes at the maximum-likelihood estimate.
    pub zeta: Vec<Vec<f64>>,
}

/// Compute `zeta_i = V1_hat^{-1} Z_i (X_i - g(gamma_hat' Z_i))` for every
/// subject. Callers normally pass a converged fit; the sum-to-zero property
/// of `zeta` holds only at the maximum-likelihood estimate.
pub fn score_influence(fit: &PropensityFit, data: &Dataset) -> Result<ScoreInfluence> {
    let chol = Cholesky::decompose(&fit.information).ok_or(Error::SingularInformation)?;
    let zeta = data
        .records()
        .iter()
        .map(|r| {
            let resid = r.treatment as f64 - logistic(dot(&fit.gamma_hat, &r.covariates));
            let rhs: Vec<f64> = r.covariates.iter().map(|z| z * resid).collect();
            chol.solve(&rhs)
        })
        .collect();
    Ok(ScoreInfluence { zeta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;
    use approx::assert_abs_diff_eq;

    fn intercept_only(total: usize, treated: usize) -> Dataset {
        let records = (0..total)
            .map(|i| SubjectRecord::new(1.0 + i as f64, 0, (i < treated) as u8, vec![1.0]))
            .collect();
        validate_dataset(records).unwrap()
    }

    #[test]
    fn logistic_at_zero() {
        assert_eq!(logistic(0.0), 0.5);
    }

    #[test]
    fn logistic_complement_sums_to_one() {
        for &x in &[0.1, 1.0, 10.0, 30.0] {
            assert_abs_diff_eq!(logistic(x) + logistic(-x), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn logistic_matches_naive_form_in_safe_range() {
        let mut x: f64 = -20.0;
        while x <= 20.0 {
            let naive = x.exp() / (1.0 + x.exp());
            assert_abs_diff_eq!(logistic(x), naive, epsilon = 1e-14);
            x += 0.37;
        }
    }

    #[test]
    fn logistic_saturates_without_overflow() {
        assert!(logistic(800.0) <= 1.0);
        assert!(logistic(-800.0) >= 0.0);
        assert!(logistic(800.0).is_finite());
    }

    #[test]
    fn intercept_only_balanced_fits_zero() {
        let fit = fit_logistic(&intercept_only(12, 6), 1e-10, 50).unwrap();
        assert_eq!(fit.gamma_hat, vec![0.0]);
        assert_eq!(fit.iterations, 0);
        assert!(fit.converged);
    }

    #[test]
    fn intercept_only_matches_logit_of_mean() {
        let fit = fit_logistic(&intercept_only(12, 9), 1e-12, 50).unwrap();
        // logit(0.75) = ln 3
        assert_abs_diff_eq!(fit.gamma_hat[0], 3.0_f64.ln(), epsilon = 1e-10);
        assert!(fit.max_score_norm <= 1e-12);
    }

    #[test]
    fn separation_is_detected() {
        // The covariate sign predicts treatment perfectly; the small margin
        // keeps the score away from zero until the coefficient cap.
        let records = (0..20)
            .map(|i| {
                let z = if i < 10 { -0.1 } else { 0.1 };
                SubjectRecord::new(1.0 + i as f64, 0, (i >= 10) as u8, vec![1.0, z])
            })
            .collect();
        let data = validate_dataset(records).unwrap();
        let err = fit_logistic(&data, 1e-10, 500).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }));
    }

    #[test]
    fn collinear_covariates_are_singular() {
        let records = (0..10)
            .map(|i| SubjectRecord::new(1.0 + i as f64, 0, (i % 5 < 3) as u8, vec![1.0, 2.0]))
            .collect();
        let data = validate_dataset(records).unwrap();
        assert!(matches!(
            fit_logistic(&data, 1e-10, 50).unwrap_err(),
            Error::SingularInformation
        ));
    }

    #[test]
    fn fitted_weights_are_at_least_one_and_finite() {
        let mut config = crate::simulation::DgpConfig::with_beta0(1.0);
        config.n = 200;
        let data = crate::simulation::generate_sample(&config, 17).unwrap();
        let fit = fit_logistic(&data, 1e-10, 50).unwrap();
        assert!(fit.weights.iter().all(|w| w.is_finite() && *w >= 1.0));
        // The information matrix is symmetric by construction.
        for a in 0..data.p() {
            for b in 0..a {
                assert_eq!(fit.information[a][b], fit.information[b][a]);
            }
        }
    }

    #[test]
    fn weight_at_zero_coefficients_is_two() {
        let treated = SubjectRecord::new(1.0, 1, 1, vec![1.0]);
        let control = SubjectRecord::new(1.0, 1, 0, vec![1.0]);
        assert_eq!(weight(&[0.0], &treated).unwrap(), 2.0);
        assert_eq!(weight(&[0.0], &control).unwrap(), 2.0);
    }

    #[test]
    fn weight_hand_computed_case() {
        let record = SubjectRecord::new(1.0, 1, 1, vec![1.0, 0.0, 1.0, 1.0]);
        let w = weight(&[0.0, 0.0, 0.5, 1.0], &record).unwrap();
        assert_abs_diff_eq!(w, 1.0 + (-1.5_f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn weight_gradient_at_zero() {
        let treated = SubjectRecord::new(1.0, 1, 1, vec![1.0]);
        let control = SubjectRecord::new(1.0, 1, 0, vec![1.0]);
        assert_eq!(weight_gradient(&[0.0], &treated).unwrap(), vec![-1.0]);
        assert_eq!(weight_gradient(&[0.0], &control).unwrap(), vec![1.0]);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn information_matches_naive_triple_loop() {
        let records = vec![
            SubjectRecord::new(1.0, 1, 1, vec![1.0, 0.4, -0.7]),
            SubjectRecord::new(2.0, 0, 0, vec![1.0, -1.1, 0.2]),
            SubjectRecord::new(3.0, 1, 0, vec![1.0, 0.9, 0.9]),
            SubjectRecord::new(4.0, 0, 1, vec![1.0, -0.3, -1.4]),
        ];
        let data = validate_dataset(records).unwrap();
        let gamma = vec![0.2, -0.5, 0.8];
        let info = information_matrix(&data, &gamma);
        let p = data.p();
        for a in 0..p {
            for b in 0..p {
                let mut naive = 0.0;
                for r in data.records() {
                    let s: f64 = gamma.iter().zip(&r.covariates).map(|(g, z)| g * z).sum();
                    let gi = s.exp() / (1.0 + s.exp());
                    naive += gi * (1.0 - gi) * r.covariates[a] * r.covariates[b];
                }
                naive /= data.n() as f64;
                let denom = naive.abs().max(1e-300);
                assert!(((info[a][b] - naive) / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_influence_balanced_intercept_only() {
        let data = intercept_only(12, 6);
        let fit = fit_logistic(&data, 1e-10, 50).unwrap();
        let influence = score_influence(&fit, &data).unwrap();
        for (r, zeta) in data.records().iter().zip(&influence.zeta) {
            let expected = if r.treatment == 1 { 2.0 } else { -2.0 };
            assert_abs_diff_eq!(zeta[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn newton_log_likelihood_is_monotone() {
        let records = (0..40)
            .map(|i| {
                let z = ((i * 7919) % 13) as f64 / 6.5 - 1.0;
                let trt = ((i * 104729) % 5 < 2) as u8;
                SubjectRecord::new(1.0 + i as f64, 0, trt, vec![1.0, z])
            })
            .collect();
        let data = validate_dataset(records).unwrap();
        let outcome = newton_optimize(&data, 1e-10, 50).unwrap();
        assert!(outcome.iterations >= 2);
        for pair in outcome.loglik_path.windows(2) {
            // Nondecreasing up to the acceptance slack.
            assert!(pair[1] >= pair[0] - 1e-9 * (1.0 + pair[0].abs()));
        }
    }
}
