//! Weighted Kaplan-Meier estimation for observational survival data.
//!
//! Subjects are reweighted by the inverse of the fitted probability of
//! the treatment they actually received, which removes measured
//! confounding from the per-arm survival curves. Standard errors come
//! from per-subject influence values and account for the fact that the
//! weights are estimated; the conservative variant that holds the fitted
//! weights fixed is reported alongside for comparison. A simulation
//! module generates confounded data and measures both standard errors
//! against the sampling distribution of the estimator.
//!
//! Typical flow:
//!
//! ```
//! use wkm_core::data::{read_csv, ArmLabel, ColumnMap, TieBreak};
//! use wkm_core::km::{iptw_km, weighted_processes};
//! use wkm_core::propensity::{fit_logistic, score_influence};
//! use wkm_core::variance::{arm_report, phi_components, psi_table};
//! # use wkm_core::simulation::{generate_sample, DgpConfig};
//! # use wkm_core::data::write_csv;
//! # let dir = tempfile::tempdir().unwrap();
//! # let path = dir.path().join("subjects.csv");
//! # let mut config = DgpConfig::with_beta0(1.0);
//! # config.n = 80;
//! # write_csv(&generate_sample(&config, 1).unwrap(), &path, &ColumnMap::default()).unwrap();
//!
//! let data = read_csv(&path, &ColumnMap::default(), TieBreak::Reject)?;
//! let fit = fit_logistic(&data, 1e-10, 50)?;
//! let influence = score_influence(&fit, &data)?;
//! let arm = ArmLabel::Treated;
//! let curve = iptw_km(&weighted_processes(&data, &fit.weights, arm)?)?;
//! let table = psi_table(&data, &fit, &influence,
//!     phi_components(&data, &fit, &curve, 0.4, arm)?)?;
//! let report = arm_report(&fit, &table, &curve, 0.95)?;
//! println!("S({}) = {} +/- {}", report.t, report.estimate, report.se_proposed);
//! # Ok::<(), wkm_core::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod km;
pub mod numfmt;
pub mod oracle;
pub mod propensity;
pub mod simulation;
pub mod variance;

mod linalg;
mod stats;

pub use data::{ArmLabel, Dataset, SubjectRecord};
pub use error::{Error, Result};
pub use km::SurvivalCurve;
pub use propensity::PropensityFit;
pub use simulation::{DgpConfig, MonteCarloSummary};
pub use variance::{InfluenceTable, VarianceReport};
