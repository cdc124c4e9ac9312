//! Versioned machine-readable test report.

use serde::{Deserialize, Serialize};

use crate::error::{PklmError, Result};
use crate::perm_test::{p_value, ProjectionRecord, TestConfig, TestReport, Warning};

pub const SCHEMA_VERSION: &str = "pklm-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEntry {
    pub variable: String,
    pub index: usize,
    /// `null` when no retained projection leaves the variable out of `B`.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub input: Option<String>,
    pub n_rows: usize,
    pub n_cols: usize,
    pub config: TestConfig,
    pub statistic: f64,
    pub null_statistics: Vec<f64>,
    pub p_value: f64,
    pub partial_p_values: Option<Vec<PartialEntry>>,
    pub retained_projections: usize,
    pub skipped_projections: usize,
    pub forest_fits: usize,
    pub warnings: Vec<Warning>,
    pub projections: Vec<ProjectionRecord>,
    /// Only present on request; reports without it are reproducible byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

impl ReportDocument {
    pub fn new(
        report: &TestReport,
        config: &TestConfig,
        variables: &[String],
        n_rows: usize,
        input: Option<String>,
    ) -> Self {
        let partial_p_values = report.partial_p_values.as_ref().map(|values| {
            values
                .iter()
                .enumerate()
                .map(|(index, &p)| PartialEntry {
                    variable: variables.get(index).cloned().unwrap_or_else(|| format!("V{}", index + 1)),
                    index,
                    p_value: p,
                })
                .collect()
        });
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            input,
            n_rows,
            n_cols: variables.len(),
            config: config.clone(),
            statistic: report.statistic,
            null_statistics: report.null_statistics.clone(),
            p_value: report.p_value,
            partial_p_values,
            retained_projections: report.retained_projections,
            skipped_projections: report.skipped_projections,
            forest_fits: report.forest_fits,
            warnings: report.warnings.clone(),
            projections: report.projections.clone(),
            wall_time_seconds: None,
        }
    }

    pub fn no_missingness(&self) -> bool {
        self.warnings.contains(&Warning::NoMissingness)
    }

    /// Recomputes the p-value from the embedded statistics.
    pub fn verify(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(PklmError::InvalidData(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        let expected = p_value(self.statistic, &self.null_statistics);
        if expected != self.p_value {
            return Err(PklmError::InvalidData(format!(
                "p-value {} disagrees with embedded statistics ({expected})",
                self.p_value
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| PklmError::InvalidData(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PklmError::InvalidData(e.to_string()))
    }
}
