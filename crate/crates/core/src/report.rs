//! Structured pass/fail records shared by the checkers, the CLI and the tests.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The check does not apply to this family; never counts as failure.
    Unsupported,
}

/// What `measured` holds. Only exact-identity errors enter
/// [`VerificationReport::max_error`]; finite-difference agreement is limited
/// by truncation, not by the identity under test, and is kept apart.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    #[default]
    Error,
    Count,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// Measured error, rank, or other figure of merit.
    pub measured: f64,
    pub threshold: f64,
    pub status: CheckStatus,
    #[serde(default)]
    pub kind: MeasureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckRecord {
    /// Passes iff `measured <= threshold`.
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        let status = if measured <= threshold {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        CheckRecord {
            name: name.into(),
            measured,
            threshold,
            status,
            kind: MeasureKind::Error,
            note: None,
        }
    }

    pub fn expect(name: impl Into<String>, ok: bool, measured: f64, threshold: f64) -> Self {
        CheckRecord {
            name: name.into(),
            measured,
            threshold,
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            kind: MeasureKind::Error,
            note: None,
        }
    }

    pub fn unsupported(name: impl Into<String>, why: impl Into<String>) -> Self {
        CheckRecord {
            name: name.into(),
            measured: 0.0,
            threshold: 0.0,
            status: CheckStatus::Unsupported,
            kind: MeasureKind::Count,
            note: Some(why.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Marks `measured` as a count (a rank, a number of entries).
    pub fn counting(mut self) -> Self {
        self.kind = MeasureKind::Count;
        self
    }

    pub fn finite_difference(mut self) -> Self {
        self.kind = MeasureKind::FiniteDifference;
        self
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub suite: String,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
    /// Largest error-kind measurement that ran.
    #[serde(default)]
    pub max_error: f64,
}

impl VerificationReport {
    pub fn new(suite: impl Into<String>) -> Self {
        VerificationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            suite: suite.into(),
            checks: Vec::new(),
            pass: true,
            max_error: 0.0,
        }
    }

    pub fn push(&mut self, check: CheckRecord) {
        self.pass &= check.passed();
        if check.kind == MeasureKind::Error && check.status != CheckStatus::Unsupported && check.measured.is_finite() {
            self.max_error = self.max_error.max(check.measured);
        }
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: VerificationReport) {
        for mut c in other.checks {
            c.name = format!("{}/{}", other.suite, c.name);
            self.push(c);
        }
    }

    /// Largest measured value among checks that actually ran.
    pub fn max_measured(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.status != CheckStatus::Unsupported && c.measured.is_finite())
            .fold(0.0, |m, c| m.max(c.measured))
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "suite {}: {}",
            self.suite,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        for c in &self.checks {
            let tag = match c.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Unsupported => "n/a ",
            };
            write!(f, "  [{tag}] {} measured={:.3e} threshold={:.3e}", c.name, c.measured, c.threshold)?;
            if let Some(n) = &c.note {
                write!(f, " ({n})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
