//! Run manifests: everything needed to reproduce a run and its statistics.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use rdmd_core::model::{kappa, lambda_admissible, main_lemma_poly};
use rdmd_core::field::FieldGrid;
use rdmd_core::DerivedConstants;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Spec;
use crate::io::Series;

pub const TOOL: &str = "rdmd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The check could not be decided, e.g. a standard error from one replica.
    Undetermined,
    /// Reported only, never gated.
    Exploratory,
    /// Non-experiment commands.
    Complete,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Fail => 2,
            _ => 0,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Undetermined => "UNDETERMINED",
            Verdict::Exploratory => "EXPLORATORY",
            Verdict::Complete => "COMPLETE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub rho_star: f64,
    pub chi: f64,
    pub f_prime: f64,
    pub g_star: f64,
    pub kappa: f64,
}

impl From<DerivedConstants> for Derived {
    fn from(dc: DerivedConstants) -> Self {
        Self { rho_star: dc.rho_star, chi: dc.chi, f_prime: dc.f_prime, g_star: dc.g_star, kappa: dc.kappa }
    }
}

/// The advisory condition `C0 κ 𝒜(u) < 1`; never fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCondition {
    pub c0: f64,
    pub kappa: f64,
    pub value: f64,
    pub admissible: bool,
}

impl LambdaCondition {
    pub fn evaluate(spec: &Spec, dc: &DerivedConstants) -> Result<Self> {
        let p = spec.model.params()?;
        let k = kappa(dc.rho_star, &p)?;
        let u = p.lambda.abs() / (2.0 * spec.scaling.d as f64 * dc.rho_star);
        Ok(Self {
            c0: spec.c0,
            kappa: k,
            value: spec.c0 * k * main_lemma_poly(u),
            admissible: lambda_admissible(&p, spec.scaling.d, spec.c0)?,
        })
    }
}

/// Statistics produced by an experiment. Everything in here is a
/// deterministic function of the spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub verdict: Verdict,
    pub statistics: Value,
    /// One summary object per replica (per ladder level where relevant).
    pub replicas: Vec<Value>,
    pub warnings: Vec<String>,
    /// Tables written next to the manifest as CSV.
    #[serde(skip)]
    pub series: Vec<Series>,
    /// Field files written next to the manifest.
    #[serde(skip)]
    pub fields: Vec<(String, FieldGrid)>,
    /// Raw files (configuration snapshots) written next to the manifest.
    #[serde(skip)]
    pub blobs: Vec<(String, Vec<u8>)>,
}

impl Report {
    pub fn new(verdict: Verdict, statistics: Value) -> Self {
        Self { verdict, statistics, replicas: Vec::new(), warnings: Vec::new(), series: Vec::new(), fields: Vec::new(), blobs: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub replicas: usize,
    pub spec: Spec,
    pub derived: Derived,
    pub lambda_condition: LambdaCondition,
    pub report: Report,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, spec: &Spec, dc: DerivedConstants, report: Report, wall: f64) -> Result<Self> {
        Ok(Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            seed: spec.seed,
            replicas: spec.replicas,
            spec: spec.clone(),
            derived: dc.into(),
            lambda_condition: LambdaCondition::evaluate(spec, &dc)?,
            report,
            wall_clock_seconds: wall,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Whether `report` reproduces the recorded statistics exactly.
    pub fn reproduces(&self, report: &Report) -> bool {
        let r = &self.report;
        r.verdict == report.verdict
            && r.statistics == report.statistics
            && r.replicas == report.replicas
            && r.warnings == report.warnings
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}
