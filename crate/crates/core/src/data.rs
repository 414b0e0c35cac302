//! Validated survival datasets and their CSV representation.
//!
//! A record carries an observed time, an event indicator (1 = failure
//! observed, 0 = censored), a binary treatment indicator, and a covariate
//! vector whose first component is always the constant 1. The constant
//! column is managed by this module: CSV files never contain it, and
//! [`read_csv`] prepends it before validation.
//!
//! Failure ties are rejected by default because the estimators assume a
//! continuous event-time distribution. Callers that need to process data
//! with exact ties (for example bootstrap resamples) can opt into a
//! deterministic jitter that separates tied failures, see [`TieBreak`].
//!
//! When a censoring time coincides with a failure time, the censored
//! subject counts as still at risk at that failure (censoring after
//! failure). This is the usual convention and is not configurable.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numfmt;

/// One subject: observed time, event indicator, treatment indicator, and
/// covariates with the leading constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub time: f64,
    pub event: u8,
    pub treatment: u8,
    pub covariates: Vec<f64>,
}

impl SubjectRecord {
    pub fn new(time: f64, event: u8, treatment: u8, covariates: Vec<f64>) -> Self {
        Self {
            time,
            event,
            treatment,
            covariates,
        }
    }
}

/// Potential-outcome arm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArmLabel {
    Control,
    Treated,
}

impl ArmLabel {
    /// The treatment indicator value selecting this arm.
    pub fn indicator(self) -> u8 {
        match self {
            ArmLabel::Control => 0,
            ArmLabel::Treated => 1,
        }
    }

    pub fn index(self) -> usize {
        self.indicator() as usize
    }

    pub fn matches(self, treatment: u8) -> bool {
        self.indicator() == treatment
    }
}

impl std::fmt::Display for ArmLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "arm{}", self.indicator())
    }
}

/// How to handle exactly tied failure times during validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Reject the dataset with [`Error::TiedFailureTimes`].
    #[default]
    Reject,
    /// Separate tied failures by adding `rank * epsilon` within each tie
    /// group (record order, ranks starting at 0), where
    /// `epsilon = 1e-9 * max observed time`. Deterministic.
    Jitter,
}

/// An immutable, validated dataset. Construct through [`validate_dataset`]
/// or [`read_csv`]; all estimators take it by shared reference and it is
/// safe to use from multiple threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    p: usize,
    arm_sizes: [usize; 2],
    arm_events: [usize; 2],
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Covariate dimension including the constant column.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn arm_size(&self, arm: ArmLabel) -> usize {
        self.arm_sizes[arm.index()]
    }

    pub fn arm_events(&self, arm: ArmLabel) -> usize {
        self.arm_events[arm.index()]
    }

    pub fn max_time(&self) -> f64 {
        self.records.iter().fold(0.0_f64, |m, r| m.max(r.time))
    }

    /// Consume the dataset, returning the raw records.
    pub fn into_records(self) -> Vec<SubjectRecord> {
        self.records
    }
}

/// Validate records into a [`Dataset`], rejecting tied failure times.
pub fn validate_dataset(records: Vec<SubjectRecord>) -> Result<Dataset> {
    validate_dataset_with(records, TieBreak::Reject)
}

/// Validate records into a [`Dataset`] with explicit tie handling.
pub fn validate_dataset_with(mut records: Vec<SubjectRecord>, ties: TieBreak) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = records[0].covariates.len();
    for (index, r) in records.iter().enumerate() {
        if r.covariates.len() != p {
            return Err(Error::InconsistentCovariateLength {
                index,
                found: r.covariates.len(),
                expected: p,
            });
        }
        if !(r.time.is_finite() && r.time >= 0.0) {
            return Err(Error::NegativeTime {
                index,
                value: r.time,
            });
        }
        if r.event > 1 {
            return Err(Error::NonBinaryIndicator {
                index,
                field: "event",
                value: r.event as f64,
            });
        }
        if r.treatment > 1 {
            return Err(Error::NonBinaryIndicator {
                index,
                field: "treatment",
                value: r.treatment as f64,
            });
        }
        if r.covariates.first() != Some(&1.0) {
            return Err(Error::MissingInterceptColumn { index });
        }
        if let Some(column) = r.covariates.iter().position(|z| !z.is_finite()) {
            return Err(Error::NonFiniteCovariate { index, column });
        }
    }

    if let Some(tied) = tied_failure_times(&records) {
        match ties {
            TieBreak::Reject => return Err(Error::TiedFailureTimes { times: tied }),
            TieBreak::Jitter => {
                jitter_tied_failures(&mut records);
                if let Some(still) = tied_failure_times(&records) {
                    return Err(Error::TiedFailureTimes { times: still });
                }
            }
        }
    }

    let mut arm_sizes = [0usize; 2];
    let mut arm_events = [0usize; 2];
    for r in &records {
        arm_sizes[r.treatment as usize] += 1;
        arm_events[r.treatment as usize] += r.event as usize;
    }

    Ok(Dataset {
        records,
        p,
        arm_sizes,
        arm_events,
    })
}

/// Distinct failure times that occur more than once, ascending; `None`
/// when there are no ties.
fn tied_failure_times(records: &[SubjectRecord]) -> Option<Vec<f64>> {
    let mut times: Vec<f64> = records
        .iter()
        .filter(|r| r.event == 1)
        .map(|r| r.time)
        .collect();
    times.sort_by(f64::total_cmp);
    let mut tied: Vec<f64> = Vec::new();
    for w in times.windows(2) {
        if w[0] == w[1] && tied.last() != Some(&w[0]) {
            tied.push(w[0]);
        }
    }
    if tied.is_empty() {
        None
    } else {
        Some(tied)
    }
}

fn jitter_tied_failures(records: &mut [SubjectRecord]) {
    let max_time = records.iter().fold(0.0_f64, |m, r| m.max(r.time));
    let epsilon = 1e-9 * max_time;
    // Group failure record indices by exact time; ranks follow record order.
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.event == 1 {
            groups.entry(r.time.to_bits()).or_default().push(i);
        }
    }
    for group in groups.values() {
        if group.len() < 2 {
            continue;
        }
        for (rank, &i) in group.iter().enumerate() {
            records[i].time += rank as f64 * epsilon;
        }
    }
}

/// Column bindings for CSV input and output. `covariates: None` selects
/// every remaining column, in file order.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub time: String,
    pub event: String,
    pub treatment: String,
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            time: "time".to_string(),
            event: "event".to_string(),
            treatment: "treatment".to_string(),
            covariates: None,
        }
    }
}

/// Read a dataset from a headered CSV file. The constant-1 intercept
/// column is prepended to the file's covariates; input files must not
/// contain it. Missing or non-numeric values are errors.
pub fn read_csv(path: &Path, columns: &ColumnMap, ties: TieBreak) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::FileNotFound {
            path: path.display().to_string(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                name: name.to_string(),
            })
    };
    let time_idx = find(&columns.time)?;
    let event_idx = find(&columns.event)?;
    let treatment_idx = find(&columns.treatment)?;
    let covariate_idx: Vec<(usize, String)> = match &columns.covariates {
        Some(names) => names
            .iter()
            .map(|name| Ok((find(name)?, name.clone())))
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != time_idx && *i != event_idx && *i != treatment_idx)
            .map(|(i, h)| (i, h.to_string()))
            .collect(),
    };

    let mut records = Vec::new();
    for (row_0, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = row_0 + 1; // 1-based data row, header excluded
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = row.get(idx).ok_or_else(|| Error::ParseError {
                row: row_no,
                column: name.to_string(),
                message: "missing value".to_string(),
            })?;
            if raw.is_empty() {
                return Err(Error::ParseError {
                    row: row_no,
                    column: name.to_string(),
                    message: "missing value".to_string(),
                });
            }
            raw.parse::<f64>().map_err(|e| Error::ParseError {
                row: row_no,
                column: name.to_string(),
                message: e.to_string(),
            })
        };

        let time = cell(time_idx, &columns.time)?;
        let event = binary_cell(cell(event_idx, &columns.event)?, row_0, "event")?;
        let treatment = binary_cell(cell(treatment_idx, &columns.treatment)?, row_0, "treatment")?;
        let mut covariates = Vec::with_capacity(covariate_idx.len() + 1);
        covariates.push(1.0);
        for (idx, name) in &covariate_idx {
            covariates.push(cell(*idx, name)?);
        }
        records.push(SubjectRecord::new(time, event, treatment, covariates));
    }

    validate_dataset_with(records, ties)
}

fn binary_cell(value: f64, index: usize, field: &'static str) -> Result<u8> {
    if value == 0.0 {
        Ok(0)
    } else if value == 1.0 {
        Ok(1)
    } else {
        Err(Error::NonBinaryIndicator {
            index,
            field,
            value,
        })
    }
}

/// Write a dataset as CSV, dropping the constant intercept column. Values
/// are written with 17 significant digits, so a read-back reproduces the
/// dataset exactly.
pub fn write_csv(dataset: &Dataset, path: &Path, columns: &ColumnMap) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    let covariate_names: Vec<String> = match &columns.covariates {
        Some(names) => names.clone(),
        None => (1..dataset.p()).map(|i| format!("z{i}")).collect(),
    };
    if covariate_names.len() != dataset.p() - 1 {
        return Err(Error::SchemaMismatch(format!(
            "{} covariate names for {} covariate columns",
            covariate_names.len(),
            dataset.p() - 1
        )));
    }
    let mut header = vec![
        columns.time.clone(),
        columns.event.clone(),
        columns.treatment.clone(),
    ];
    header.extend(covariate_names);
    writer.write_record(&header)?;
    for r in dataset.records() {
        let mut row = vec![
            numfmt::sig17(r.time),
            r.event.to_string(),
            r.treatment.to_string(),
        ];
        row.extend(r.covariates.iter().skip(1).map(|&z| numfmt::sig17(z)));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
