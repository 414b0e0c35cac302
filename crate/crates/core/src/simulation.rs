//! Data generation and the Monte Carlo study comparing the two standard
//! errors against the sampling distribution of the estimator.
//!
//! Covariates are standard normal, treatment is assigned by a logistic
//! model in the covariates, and the latent failure time is exponential
//! with a scale that depends on the same covariates, so treatment and
//! outcome are confounded. Censoring is exponential and independent.
//!
//! Every random draw comes from a stream keyed by
//! `(seed, replication index, subject index)`, so results are identical
//! for any parallelism degree and any scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::path::Path;

use crate::data::{validate_dataset, ArmLabel, Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::km::{iptw_km, survival_at, weighted_processes};
use crate::propensity::{fit_logistic, score_influence, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use crate::stats;
use crate::variance::{normal_quantile, phi_components, psi_table, se_gamma_fixed, se_proposed};

/// Parameters of the generating model.
///
/// The latent failure time is exponential with scale (mean)
/// `exp(eta' Z)` where `eta = eta_base * beta0`; censoring is exponential
/// with mean `censor_scale`. Setting `rate_parameterization` reads both
/// scale parameters as rates instead, for sensitivity checks.
#[derive(Debug, Clone)]
pub struct DgpConfig {
    pub n: usize,
    /// Treatment-model coefficients, intercept first.
    pub gamma0: Vec<f64>,
    /// Failure-scale coefficients before the `beta0` multiplier.
    pub eta_base: Vec<f64>,
    /// Scalar multiplier controlling the covariate-outcome association.
    pub beta0: f64,
    pub censor_scale: f64,
    /// Time at which estimates and standard errors are evaluated.
    pub t_eval: f64,
    pub rate_parameterization: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            gamma0: vec![0.0, 0.0, 0.5, 1.0],
            eta_base: vec![0.0, 1.0, 2.0, 3.0],
            beta0: 0.0,
            censor_scale: 1.0,
            t_eval: 0.5,
            rate_parameterization: false,
        }
    }
}

impl DgpConfig {
    pub fn with_beta0(beta0: f64) -> Self {
        Self {
            beta0,
            ..Self::default()
        }
    }

    /// Number of standard-normal covariates (excluding the constant).
    pub fn covariate_dim(&self) -> usize {
        self.gamma0.len() - 1
    }

    /// Failure-scale coefficients `eta_base * beta0`.
    pub fn eta(&self) -> Vec<f64> {
        self.eta_base.iter().map(|e| e * self.beta0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma0.is_empty() || self.gamma0.len() != self.eta_base.len() {
            return Err(Error::InvalidConfig(
                "gamma0 and eta_base must be nonempty and of equal length".to_string(),
            ));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig("n must be at least 2".to_string()));
        }
        if !(self.censor_scale.is_finite() && self.censor_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "censor_scale must be positive and finite".to_string(),
            ));
        }
        if !(self.t_eval.is_finite() && self.t_eval >= 0.0) {
            return Err(Error::InvalidConfig(
                "t_eval must be nonnegative and finite".to_string(),
            ));
        }
        if !self.beta0.is_finite() {
            return Err(Error::InvalidConfig("beta0 must be finite".to_string()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold indices into a seed, one mixing round per index.
pub(crate) fn derive_key(seed: u64, indices: &[u64]) -> u64 {
    let mut key = splitmix64(seed);
    for &i in indices {
        key = splitmix64(key ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    key
}

/// Draw one dataset from the generating model. Each subject uses its own
/// RNG stream keyed by `(seed, subject index)`, so the result is
/// byte-identical across runs and thread counts.
pub fn generate_sample(config: &DgpConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let dim = config.covariate_dim();
    let eta = config.eta();
    let records: Vec<SubjectRecord> = (0..config.n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_key(seed, &[i as u64]));
            let mut covariates = Vec::with_capacity(dim + 1);
            covariates.push(1.0);
            for _ in 0..dim {
                covariates.push(rng.sample::<f64, _>(StandardNormal));
            }
            let propensity = crate::propensity::logistic(dot(&config.gamma0, &covariates));
            let treatment = (rng.random::<f64>() < propensity) as u8;

            let linear = dot(&eta, &covariates);
            let failure_mean = if config.rate_parameterization {
                (-linear).exp()
            } else {
                linear.exp()
            };
            let censor_mean = if config.rate_parameterization {
                1.0 / config.censor_scale
            } else {
                config.censor_scale
            };
            let latent = -failure_mean * (1.0 - rng.random::<f64>()).ln();
            let censor = -censor_mean * (1.0 - rng.random::<f64>()).ln();

            SubjectRecord::new(
                latent.min(censor),
                (latent <= censor) as u8,
                treatment,
                covariates,
            )
        })
        .collect();
    validate_dataset(records)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nodes and weights integrating `exp(-x^2) f(x)` over the real line.
///
/// Roots of the degree-`n` Hermite polynomial by Newton iteration on the
/// orthonormal recurrence, with the usual asymptotic initial guesses.
pub fn gauss_hermite_rule(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let delta = p1 / pp;
            z -= delta;
            if delta.abs() <= 1e-14 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    let mut rule: Vec<(f64, f64)> = nodes.into_iter().zip(weights).collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

/// Nodes per dimension used by [`true_survival`].
pub const TRUE_SURVIVAL_NODES: usize = 40;

/// Marginal survival probability at `t` implied by the generating model,
/// by tensor-product Gauss-Hermite integration over the covariates.
///
/// The generating model gives every subject the same conditional failure
/// distribution regardless of assigned treatment, so this is the target
/// value for both arms and their difference target is zero.
pub fn true_survival(config: &DgpConfig, t: f64) -> f64 {
    let rule = gauss_hermite_rule(TRUE_SURVIVAL_NODES);
    let eta = config.eta();
    let dim = config.covariate_dim();
    let sqrt2 = std::f64::consts::SQRT_2;

    let conditional = |linear: f64| -> f64 {
        if config.rate_parameterization {
            (-t * linear.exp()).exp()
        } else {
            (-t / linear.exp()).exp()
        }
    };

    if dim == 0 {
        return conditional(eta[0]);
    }

    // Odometer over the tensor grid.
    let mut idx = vec![0usize; dim];
    let mut total = 0.0;
    let mut carry = 0.0;
    loop {
        let mut weight = 1.0;
        let mut linear = eta[0];
        for (d, &i) in idx.iter().enumerate() {
            let (x, w) = rule[i];
            weight *= w;
            linear += eta[d + 1] * sqrt2 * x;
        }
        // Kahan accumulation over the 40^dim terms.
        let y = weight * conditional(linear) - carry;
        let t_new = total + y;
        carry = (t_new - total) - y;
        total = t_new;

        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < rule.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == dim {
                return total / std::f64::consts::PI.powf(dim as f64 / 2.0);
            }
        }
    }
}

/// Per-grid-point aggregate of the Monte Carlo study. Coverage refers to
/// the treated-arm survival interval against the integrated true value.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub beta0: f64,
    /// Replications requested; failed ones are excluded from aggregates.
    pub replications: usize,
    pub failures: usize,
    pub mc_sd_arm1: f64,
    pub mean_se_proposed_arm1: f64,
    pub mean_se_gamma_fixed_arm1: f64,
    pub mc_sd_diff: f64,
    pub mean_se_proposed_diff: f64,
    pub mean_se_gamma_fixed_diff: f64,
    pub coverage_proposed: f64,
    pub coverage_gamma_fixed: f64,
}

/// Column order of the summary CSV.
pub const SUMMARY_COLUMNS: [&str; 11] = [
    "beta0",
    "replications",
    "failures",
    "mc_sd_arm1",
    "mean_se_proposed_arm1",
    "mean_se_gamma_fixed_arm1",
    "mc_sd_diff",
    "mean_se_proposed_diff",
    "mean_se_gamma_fixed_diff",
    "coverage_proposed",
    "coverage_gamma_fixed",
];

impl MonteCarloSummary {
    /// True when more than 5% of the replications failed.
    pub fn excessive_failures(&self) -> bool {
        self.failures * 20 > self.replications
    }

    pub fn csv_record(&self) -> Vec<String> {
        use crate::numfmt::sig17;
        vec![
            sig17(self.beta0),
            self.replications.to_string(),
            self.failures.to_string(),
            sig17(self.mc_sd_arm1),
            sig17(self.mean_se_proposed_arm1),
            sig17(self.mean_se_gamma_fixed_arm1),
            sig17(self.mc_sd_diff),
            sig17(self.mean_se_proposed_diff),
            sig17(self.mean_se_gamma_fixed_diff),
            sig17(self.coverage_proposed),
            sig17(self.coverage_gamma_fixed),
        ]
    }

    pub fn from_csv_record(record: &csv::StringRecord) -> Result<Self> {
        if record.len() != SUMMARY_COLUMNS.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} columns, found {}",
                SUMMARY_COLUMNS.len(),
                record.len()
            )));
        }
        let field = |i: usize| -> Result<f64> {
            record[i].parse().map_err(|_| {
                Error::SchemaMismatch(format!(
                    "column {} is not numeric: {:?}",
                    SUMMARY_COLUMNS[i], &record[i]
                ))
            })
        };
        Ok(Self {
            beta0: field(0)?,
            replications: field(1)? as usize,
            failures: field(2)? as usize,
            mc_sd_arm1: field(3)?,
            mean_se_proposed_arm1: field(4)?,
            mean_se_gamma_fixed_arm1: field(5)?,
            mc_sd_diff: field(6)?,
            mean_se_proposed_diff: field(7)?,
            mean_se_gamma_fixed_diff: field(8)?,
            coverage_proposed: field(9)?,
            coverage_gamma_fixed: field(10)?,
        })
    }
}

/// Write summaries in the fixed 11-column schema.
pub fn write_summary_csv(summaries: &[MonteCarloSummary], path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    writer.write_record(SUMMARY_COLUMNS)?;
    for s in summaries {
        writer.write_record(s.csv_record())?;
    }
    writer.flush()?;
    Ok(())
}

/// Read summaries written by [`write_summary_csv`], verifying the header.
pub fn read_summary_csv(path: &Path) -> Result<Vec<MonteCarloSummary>> {
    if !path.exists() {
        return Err(Error::FileNotFound {
            path: path.display().to_string(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader.headers()?;
    if header.iter().ne(SUMMARY_COLUMNS.iter().copied()) {
        return Err(Error::SchemaMismatch(format!(
            "unexpected header: {:?}",
            header
        )));
    }
    reader
        .records()
        .map(|r| MonteCarloSummary::from_csv_record(&r?))
        .collect()
}

/// One replication's estimates and standard errors.
struct Replication {
    s1: f64,
    diff: f64,
    se_proposed_arm1: f64,
    se_gamma_fixed_arm1: f64,
    se_proposed_diff: f64,
    se_gamma_fixed_diff: f64,
}

fn run_replication(config: &DgpConfig, seed: u64) -> Result<Replication> {
    let data = generate_sample(config, seed)?;
    let fit = fit_logistic(&data, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)?;
    let influence = score_influence(&fit, &data)?;
    let t = config.t_eval;

    let mut tables = Vec::with_capacity(2);
    let mut survivals = [0.0; 2];
    for arm in [ArmLabel::Treated, ArmLabel::Control] {
        let processes = weighted_processes(&data, &fit.weights, arm)?;
        let curve = iptw_km(&processes)?;
        survivals[arm.index()] = survival_at(&curve, t)?;
        let table = phi_components(&data, &fit, &curve, t, arm)?;
        tables.push(psi_table(&data, &fit, &influence, table)?);
    }
    let (treated, control) = (&tables[0], &tables[1]);

    let psi_contrast: Vec<f64> = treated
        .psi
        .iter()
        .zip(&control.psi)
        .map(|(a, b)| a - b)
        .collect();
    let fixed_contrast: Vec<f64> = fit
        .weights
        .iter()
        .zip(treated.phi.iter().zip(&control.phi))
        .map(|(w, (a, b))| w * (a - b))
        .collect();

    Ok(Replication {
        s1: survivals[1],
        diff: survivals[1] - survivals[0],
        se_proposed_arm1: se_proposed(&treated.psi)?,
        se_gamma_fixed_arm1: se_gamma_fixed(&fit, treated)?,
        se_proposed_diff: se_proposed(&psi_contrast)?,
        se_gamma_fixed_diff: se_proposed(&fixed_contrast)?,
    })
}

/// Run the full study over a grid of configurations.
///
/// Replications are independent work units with RNG streams keyed by
/// `(seed, grid index, replication index)`; aggregation happens in
/// replication order, so the output is identical for any `parallelism`
/// (0 picks the rayon default). Failed replications are dropped from the
/// aggregates and counted in `failures`, never retried.
pub fn run_study(
    grid: &[DgpConfig],
    replications: usize,
    seed: u64,
    parallelism: usize,
) -> Result<Vec<MonteCarloSummary>> {
    if replications < 2 {
        return Err(Error::InvalidConfig(
            "at least 2 replications are required".to_string(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    grid.iter()
        .enumerate()
        .map(|(grid_index, config)| {
            config.validate()?;
            let truth = true_survival(config, config.t_eval);
            let outcomes: Vec<Result<Replication>> = pool.install(|| {
                (0..replications)
                    .into_par_iter()
                    .map(|rep| {
                        run_replication(config, derive_key(seed, &[grid_index as u64, rep as u64]))
                    })
                    .collect()
            });
            summarize(config.beta0, replications, outcomes, truth)
        })
        .collect()
}

fn summarize(
    beta0: f64,
    replications: usize,
    outcomes: Vec<Result<Replication>>,
    truth: f64,
) -> Result<MonteCarloSummary> {
    let successes: Vec<Replication> = outcomes.into_iter().filter_map(|r| r.ok()).collect();
    let failures = replications - successes.len();
    if successes.len() < 2 {
        return Err(Error::ExcessiveFailures {
            failures,
            total: replications,
        });
    }
    let column = |f: fn(&Replication) -> f64| -> Vec<f64> { successes.iter().map(f).collect() };
    let z = normal_quantile(0.975);
    let covered = |se: fn(&Replication) -> f64| -> f64 {
        successes
            .iter()
            .filter(|r| (r.s1 - truth).abs() <= z * se(r))
            .count() as f64
            / successes.len() as f64
    };

    Ok(MonteCarloSummary {
        beta0,
        replications,
        failures,
        mc_sd_arm1: stats::sample_sd(&column(|r| r.s1)),
        mean_se_proposed_arm1: stats::mean(&column(|r| r.se_proposed_arm1)),
        mean_se_gamma_fixed_arm1: stats::mean(&column(|r| r.se_gamma_fixed_arm1)),
        mc_sd_diff: stats::sample_sd(&column(|r| r.diff)),
        mean_se_proposed_diff: stats::mean(&column(|r| r.se_proposed_diff)),
        mean_se_gamma_fixed_diff: stats::mean(&column(|r| r.se_gamma_fixed_diff)),
        coverage_proposed: covered(|r| r.se_proposed_arm1),
        coverage_gamma_fixed: covered(|r| r.se_gamma_fixed_arm1),
    })
}
