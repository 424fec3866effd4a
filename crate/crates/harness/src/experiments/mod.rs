//! The named experiments. Each takes a resolved [`Spec`] and returns a
//! [`Report`] that depends only on the spec.

use anyhow::{bail, Result};
use rdmd_core::{DerivedConstants, LatticeField, ModelParams, ScalingParams, SimConfig, Torus};

use crate::config::{Kind, Spec};
use crate::manifest::Report;

mod bg_decay;
mod clt_init;
mod generator_oracle;
mod martingale_unity;
mod mdp_probe;
mod rate_identity;
mod tilted_hydro;

pub use generator_oracle::{exact_law, generator_matrix};
pub use mdp_probe::{optimal_tilt, OptimalTilt};

pub fn run(spec: &Spec) -> Result<Report> {
    let Some(kind) = spec.kind else { bail!("the spec does not name an experiment kind") };
    match kind {
        Kind::MartingaleUnity => martingale_unity::run(spec),
        Kind::TiltedHydro => tilted_hydro::run(spec),
        Kind::CltInit => clt_init::run(spec),
        Kind::BgDecay => bg_decay::run(spec),
        Kind::RateIdentity => rate_identity::run(spec),
        Kind::MdpProbe => mdp_probe::run(spec),
        Kind::GeneratorOracle => generator_oracle::run(spec),
    }
}

pub struct Setup {
    pub params: ModelParams,
    pub dc: DerivedConstants,
}

impl Setup {
    pub fn new(spec: &Spec) -> Result<Self> {
        let params = spec.model.params()?;
        let dc = DerivedConstants::new(&params)?;
        Ok(Self { params, dc })
    }

    pub fn sim(&self, spec: &Spec, sc: ScalingParams) -> SimConfig {
        let mut sim = SimConfig::new(sc, self.params, spec.horizon);
        sim.seed = spec.seed;
        sim.sample_times = spec.sample_times();
        sim.glauber_enabled = spec.glauber;
        sim
    }
}

/// Lattice version of a field spec on the spec's time grid.
pub(crate) fn lattice_field(spec: &Spec, f: &crate::presets::FieldSpec, torus: &Torus) -> Result<LatticeField> {
    f.lattice(torus, spec.grid.m, &spec.time_grid())
}

/// Index of `t` on a uniform grid, if it is a grid point.
pub(crate) fn grid_index(times: &[f64], t: f64) -> Result<usize> {
    match times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0)) {
        Some(k) => Ok(k),
        None => bail!("sample time {t} is not on the macroscopic time grid; choose grid.slices divisible by samples"),
    }
}
