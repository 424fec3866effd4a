//! Experiment configuration. Files are TOML or JSON; anything left out
//! falls back to the defaults for the experiment kind.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rdmd_core::field::TimeQuadrature;
use rdmd_core::{ModelParams, ScalingParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::presets::{FieldSpec, TimeProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    MartingaleUnity,
    TiltedHydro,
    CltInit,
    BgDecay,
    RateIdentity,
    MdpProbe,
    GeneratorOracle,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::MartingaleUnity,
        Kind::TiltedHydro,
        Kind::CltInit,
        Kind::BgDecay,
        Kind::RateIdentity,
        Kind::MdpProbe,
        Kind::GeneratorOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::MartingaleUnity => "martingale-unity",
            Kind::TiltedHydro => "tilted-hydro",
            Kind::CltInit => "clt-init",
            Kind::BgDecay => "bg-decay",
            Kind::RateIdentity => "rate-identity",
            Kind::MdpProbe => "mdp-probe",
            Kind::GeneratorOracle => "generator-oracle",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .with_context(|| format!("unknown experiment kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, lambda: 0.1 }
    }
}

impl ModelSpec {
    pub fn params(&self) -> Result<ModelParams> {
        Ok(ModelParams::new(self.a, self.b, self.lambda)?)
    }
}

/// `a_n = n^theta` unless `a_n` is given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub d: usize,
    pub n: usize,
    pub theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_n: Option<f64>,
    pub ladder: Vec<usize>,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self { d: 1, n: 64, theta: 0.75, a_n: None, ladder: vec![64, 128, 256] }
    }
}

impl ScalingSpec {
    pub fn at(&self, n: usize) -> Result<ScalingParams> {
        Ok(match self.a_n {
            Some(a) => ScalingParams::new(self.d, n, a)?,
            None => ScalingParams::with_exponent(self.d, n, self.theta)?,
        })
    }

    pub fn single(&self) -> Result<ScalingParams> {
        self.at(self.n)
    }
}

/// Macroscopic grid: `m` nodes per axis and `slices` time steps on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub m: usize,
    pub slices: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { m: 256, slices: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BgSpec {
    /// `r_n = a_n n^{r_exponent}`.
    pub r_exponent: f64,
}

impl Default for BgSpec {
    fn default() -> Self {
        Self { r_exponent: 0.1 }
    }
}

/// Half-space event `{⟨μ_T, J⟩ >= threshold}` for the importance-sampling probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    /// Fourier mode of `J`: 0 for `J ≡ 1`, `k > 0` for `J = cos(2πk u_1)`.
    pub mode: u32,
    pub threshold: f64,
    pub ladder: Vec<usize>,
}

impl Default for MdpSpec {
    fn default() -> Self {
        Self { mode: 0, threshold: 0.5, ladder: vec![64, 128] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub n: usize,
    pub horizon: f64,
    pub glauber: bool,
    /// Initial occupation, one entry per site.
    pub initial: Vec<u8>,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self { n: 3, horizon: 0.1, glauber: true, initial: vec![1, 0, 0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitySpec {
    /// Random test functions for the `ℓ_T = 2[H, J]` check.
    pub random_tests: usize,
    /// Random test functions for the supremum check.
    pub sup_family: usize,
    /// Slice counts for the quadrature refinement order.
    pub quadrature_ladder: Vec<usize>,
    /// Slice counts for the forward-solver self-convergence order.
    pub solver_ladder: Vec<usize>,
    /// Time quadrature for `ℓ_T` and `[H, J]`.
    pub quadrature: Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    Trapezoid,
    EndCorrected,
}

impl Quadrature {
    pub fn rule(self) -> TimeQuadrature {
        match self {
            Quadrature::Trapezoid => TimeQuadrature::Trapezoid,
            Quadrature::EndCorrected => TimeQuadrature::EndCorrected,
        }
    }
}

impl Default for IdentitySpec {
    fn default() -> Self {
        Self { random_tests: 5, sup_family: 20, quadrature_ladder: vec![512, 1024, 2048], solver_ladder: vec![64, 128, 256],
            quadrature: Quadrature::EndCorrected,
        }
    }
}

/// Every PASS/FAIL threshold; echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Martingale unity: `|mean M - 1| < z_max * SE`.
    pub z_max: f64,
    /// Martingale unity: largest acceptable standard error.
    pub se_max: Option<f64>,
    /// Tilted hydrodynamics: largest sup-over-time probe error at the top of the ladder.
    pub hydro_error_max: f64,
    /// Generator oracle: largest total-variation distance.
    pub tv_max: f64,
    /// CLT at t = 0: relative variance tolerance.
    pub clt_rel_tol: f64,
    pub round_trip_tol: f64,
    pub identity_rel_tol: f64,
    pub sup_tol: f64,
    pub q0_sup_tol: f64,
    pub mode_decay_tol: f64,
    pub order_min: f64,
    /// Importance-sampling effective sample size warning level (fraction of replicas).
    pub ess_min_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            z_max: 3.0,
            se_max: Some(0.05),
            hydro_error_max: 0.1,
            tv_max: 0.005,
            clt_rel_tol: 0.05,
            round_trip_tol: 1e-8,
            identity_rel_tol: 1e-6,
            sup_tol: 1e-6,
            q0_sup_tol: 1e-9,
            mode_decay_tol: 1e-10,
            order_min: 1.9,
            ess_min_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    pub seed: u64,
    pub replicas: usize,
    pub model: ModelSpec,
    pub scaling: ScalingSpec,
    pub horizon: f64,
    pub grid: GridSpec,
    /// Control `H`.
    pub control: FieldSpec,
    /// Initial profile `φ`.
    pub initial: FieldSpec,
    /// Probe functions `J`.
    pub probes: Vec<FieldSpec>,
    /// Number of equally spaced sample times in `(0, T]`.
    pub samples: usize,
    pub glauber: bool,
    /// Constant of the λ admissibility condition (advisory only).
    pub c0: f64,
    pub bg: BgSpec,
    pub mdp: MdpSpec,
    pub oracle: OracleSpec,
    pub identity: IdentitySpec,
    pub thresholds: Thresholds,
    /// Write trajectory snapshots (simulate only).
    pub snapshots: bool,
    /// Run the tilted dynamics driven by `control` (simulate only).
    pub tilted: bool,
    /// Density path field file whose rate is evaluated (rate only); when
    /// absent the path is solved from `initial` and `control`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn cosine(amplitude: f64, k: i64) -> FieldSpec {
    FieldSpec::Cosine { amplitude, mode: vec![k], phase: 0.0, time: TimeProfile::default() }
}

/// Unit Gaussian bump of width 0.1 at `center` on the first axis.
fn bump(center: f64) -> FieldSpec {
    FieldSpec::Gaussian { amplitude: 1.0, center: vec![center], width: 0.1, kmax: 12, time: TimeProfile::default() }
}

fn sine(amplitude: f64, k: i64) -> FieldSpec {
    FieldSpec::Cosine { amplitude, mode: vec![k], phase: -std::f64::consts::FRAC_PI_2, time: TimeProfile::default() }
}

impl Default for Spec {
    fn default() -> Self {
        Self {
            kind: None,
            seed: 1,
            replicas: 1,
            model: ModelSpec::default(),
            scaling: ScalingSpec::default(),
            horizon: 1.0,
            grid: GridSpec::default(),
            control: FieldSpec::Zero,
            initial: FieldSpec::Zero,
            probes: vec![cosine(1.0, 1)],
            samples: 10,
            glauber: true,
            c0: 1.0,
            bg: BgSpec::default(),
            mdp: MdpSpec::default(),
            oracle: OracleSpec::default(),
            identity: IdentitySpec::default(),
            thresholds: Thresholds::default(),
            snapshots: false,
            tilted: false,
            path: None,
        }
    }
}

impl Spec {
    /// Defaults for an experiment kind.
    pub fn for_kind(kind: Kind) -> Self {
        let mut s = Spec { kind: Some(kind), ..Spec::default() };
        match kind {
            Kind::MartingaleUnity => {
                s.replicas = 2000;
                s.control = cosine(1.0, 1);
            }
            Kind::TiltedHydro => {
                s.replicas = 200;
                s.control = FieldSpec::Sum { terms: vec![cosine(2.6, 1), FieldSpec::constant(1.3)] };
                s.initial = cosine(0.9, 1);
                s.probes = vec![bump(0.0), bump(0.125), bump(0.875)];
                s.samples = 4;
            }
            Kind::CltInit => {
                s.replicas = 100_000;
                s.control = cosine(1.0, 1);
            }
            Kind::BgDecay => {
                s.replicas = 200;
                s.control = cosine(1.0, 1);
                s.samples = 10;
            }
            Kind::RateIdentity => {
                s.grid = GridSpec { m: 64, slices: 8192 };
                s.control = FieldSpec::Sum {
                    terms: vec![
                        FieldSpec::Cosine {
                            amplitude: 0.8,
                            mode: vec![1],
                            phase: 0.0,
                            time: TimeProfile { poly: vec![1.0, 0.5], ..TimeProfile::default() },
                        },
                        FieldSpec::Cosine {
                            amplitude: 0.3,
                            mode: vec![2],
                            phase: -std::f64::consts::FRAC_PI_2,
                            time: TimeProfile { poly: vec![1.0, 0.5], ..TimeProfile::default() },
                        },
                        FieldSpec::Cosine {
                            amplitude: 0.2,
                            mode: vec![3],
                            phase: 0.0,
                            time: TimeProfile { poly: vec![1.0, -1.0], ..TimeProfile::default() },
                        },
                        FieldSpec::Constant { value: 0.1, time: TimeProfile { poly: vec![0.0, 1.0], ..TimeProfile::default() } },
                    ],
                };
                s.initial = FieldSpec::Sum { terms: vec![cosine(0.3, 1), sine(-0.2, 2), FieldSpec::constant(0.05)] };
            }
            Kind::MdpProbe => {
                s.replicas = 400;
                s.grid = GridSpec { m: 64, slices: 256 };
            }
            Kind::GeneratorOracle => {
                s.replicas = 1_000_000;
            }
        }
        s
    }

    /// Loads a config file (TOML, or JSON for `.json`) over the defaults of
    /// `kind`, or of the kind named in the file.
    pub fn load(path: &Path, kind: Option<Kind>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overrides: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            let t: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            serde_json::to_value(t)?
        };
        let mut spec = Self::from_overrides(overrides, kind)?;
        spec.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    pub fn from_overrides(overrides: Value, kind: Option<Kind>) -> Result<Self> {
        let named = overrides.get("kind").and_then(Value::as_str).map(Kind::from_str).transpose()?;
        if let (Some(a), Some(b)) = (kind, named) {
            if a != b {
                bail!("config is for `{b}` but `{a}` was requested");
            }
        }
        let base = match kind.or(named) {
            Some(k) => Spec::for_kind(k),
            None => Spec::default(),
        };
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, overrides);
        let spec: Spec = serde_json::from_value(merged).context("invalid configuration")?;
        spec.validate()?;
        Ok(spec)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |f: &mut FieldSpec| f.resolve_paths(base);
        fix(&mut self.control);
        fix(&mut self.initial);
        self.probes.iter_mut().for_each(fix);
        if let Some(p) = &mut self.path {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas < 1 {
            bail!("replicas must be at least 1");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bail!("horizon must be positive");
        }
        if self.grid.m < 2 || self.grid.slices < 1 {
            bail!("grid needs m >= 2 and at least one time step");
        }
        if self.samples < 1 {
            bail!("samples must be at least 1");
        }
        if self.scaling.ladder.is_empty() {
            bail!("scaling ladder must not be empty");
        }
        if !(self.c0 > 0.0) {
            bail!("c0 must be positive");
        }
        if !(self.bg.r_exponent > 0.0) {
            bail!("bg.r_exponent must be positive so that r_n > a_n");
        }
        if self.oracle.initial.len() != self.oracle.n || self.oracle.initial.iter().any(|&v| v > 1) {
            bail!("oracle.initial needs one 0/1 entry per site");
        }
        self.model.params()?;
        Ok(())
    }

    pub fn replicas_u64(&self) -> u64 {
        self.replicas as u64
    }

    pub fn time_grid(&self) -> Vec<f64> {
        rdmd_core::field::FieldGrid::uniform_times(self.horizon, self.grid.slices)
    }

    /// `samples` equally spaced times in `(0, T]`.
    pub fn sample_times(&self) -> Vec<f64> {
        (1..=self.samples).map(|i| self.horizon * i as f64 / self.samples as f64).collect()
    }

    pub fn field_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        self.control.collect_files(&mut out);
        self.initial.collect_files(&mut out);
        self.probes.iter().for_each(|p| p.collect_files(&mut out));
        out.extend(self.path.iter().cloned());
        out
    }
}

/// Recursive object merge: `patch` wins, objects merge key by key.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    // tagged field specs are replaced wholesale, not merged
                    Some(slot) if slot.is_object() && v.is_object() && v.get("type").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
