//! Resolved analysis configuration and the flat key-value config file.
//!
//! Precedence is flags over config file over defaults.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use wkm_core::data::{ArmLabel, ColumnMap, TieBreak};

/// Which arms an analysis should report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmsRequest {
    Both,
    One(ArmLabel),
}

/// File format for the analyze report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Text,
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub columns: ColumnMap,
    pub times: Vec<f64>,
    pub arms: ArmsRequest,
    pub ci_level: f64,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub ties: TieBreak,
}

/// Raw option bag, either from flags or from a config file line.
#[derive(Debug, Default)]
pub struct AnalysisOptions {
    pub input: Option<PathBuf>,
    pub time_col: Option<String>,
    pub event_col: Option<String>,
    pub treatment_col: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub times: Option<Vec<f64>>,
    pub arms: Option<String>,
    pub ci_level: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub jitter_ties: Option<bool>,
}

impl AnalysisOptions {
    /// Fill unset fields from `fallback`.
    pub fn or(self, fallback: AnalysisOptions) -> AnalysisOptions {
        AnalysisOptions {
            input: self.input.or(fallback.input),
            time_col: self.time_col.or(fallback.time_col),
            event_col: self.event_col.or(fallback.event_col),
            treatment_col: self.treatment_col.or(fallback.treatment_col),
            covariates: self.covariates.or(fallback.covariates),
            times: self.times.or(fallback.times),
            arms: self.arms.or(fallback.arms),
            ci_level: self.ci_level.or(fallback.ci_level),
            out: self.out.or(fallback.out),
            format: self.format.or(fallback.format),
            jitter_ties: self.jitter_ties.or(fallback.jitter_ties),
        }
    }

    pub fn resolve(self) -> Result<AnalysisConfig> {
        let input = self.input.context("--input is required")?;
        let out = self.out.context("--out is required")?;
        let times = self.times.context("--times is required")?;
        if times.is_empty() {
            bail!("at least one evaluation time is required");
        }
        let ci_level = self.ci_level.unwrap_or(0.95);
        if !(ci_level > 0.0 && ci_level < 1.0) {
            bail!("--ci-level must lie strictly between 0 and 1");
        }
        let arms = match self.arms.as_deref().unwrap_or("both") {
            "both" => ArmsRequest::Both,
            "0" | "arm0" | "control" => ArmsRequest::One(ArmLabel::Control),
            "1" | "arm1" | "treated" => ArmsRequest::One(ArmLabel::Treated),
            other => bail!("unknown --arms value '{other}' (use both, 0, or 1)"),
        };
        let format = match self.format.as_deref().unwrap_or("csv") {
            "csv" => OutputFormat::Csv,
            "text" => OutputFormat::Text,
            other => bail!("unknown --format value '{other}' (use csv or text)"),
        };
        let columns = ColumnMap {
            time: self.time_col.unwrap_or_else(|| "time".to_string()),
            event: self.event_col.unwrap_or_else(|| "event".to_string()),
            treatment: self
                .treatment_col
                .unwrap_or_else(|| "treatment".to_string()),
            covariates: self.covariates,
        };
        let ties = if self.jitter_ties.unwrap_or(false) {
            TieBreak::Jitter
        } else {
            TieBreak::Reject
        };
        Ok(AnalysisConfig {
            input,
            columns,
            times,
            arms,
            ci_level,
            out,
            format,
            ties,
        })
    }
}

/// Parse a flat `key = value` config file. Lines starting with `#` and
/// blank lines are ignored; keys match the long flag names.
pub fn read_config_file(path: &Path) -> Result<AnalysisOptions> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut map = HashMap::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("line {}: expected 'key = value'", line_no + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }

    let parse_times = |raw: &String| -> Result<Vec<f64>> {
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad time value '{s}'"))
            })
            .collect()
    };

    Ok(AnalysisOptions {
        input: map.get("input").map(PathBuf::from),
        time_col: map.get("time-col").cloned(),
        event_col: map.get("event-col").cloned(),
        treatment_col: map.get("treatment-col").cloned(),
        covariates: map
            .get("covariates")
            .map(|raw| raw.split(',').map(|s| s.trim().to_string()).collect()),
        times: map.get("times").map(parse_times).transpose()?,
        arms: map.get("arms").cloned(),
        ci_level: map
            .get("ci-level")
            .map(|raw| raw.parse::<f64>().context("bad ci-level"))
            .transpose()?,
        out: map.get("out").map(PathBuf::from),
        format: map.get("format").cloned(),
        jitter_ties: map
            .get("jitter-ties")
            .map(|raw| raw.parse::<bool>().context("bad jitter-ties"))
            .transpose()?,
    })
}
