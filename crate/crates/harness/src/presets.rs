//! Closed-form field presets and their evaluation on grids and lattices.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rdmd_core::field::FieldGrid;
use rdmd_core::{LatticeField, Torus};
use serde::{Deserialize, Serialize};

use crate::io;

/// Time factor `(c_0 + c_1 t + c_2 t² + ...) · e^{rate (t - shift)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeProfile {
    pub poly: Vec<f64>,
    pub rate: f64,
    pub shift: f64,
}

impl Default for TimeProfile {
    fn default() -> Self {
        Self { poly: vec![1.0], rate: 0.0, shift: 0.0 }
    }
}

impl TimeProfile {
    pub fn at(&self, t: f64) -> f64 {
        let p = self.poly.iter().rev().fold(0.0, |acc, c| acc * t + c);
        if self.rate == 0.0 {
            p
        } else {
            p * (self.rate * (t - self.shift)).exp()
        }
    }

    pub fn is_constant(&self) -> bool {
        self.rate == 0.0 && self.poly.iter().skip(1).all(|&c| c == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    Constant {
        value: f64,
        #[serde(default)]
        time: TimeProfile,
    },
    /// `amplitude · cos(2π k·u + phase)`.
    Cosine {
        amplitude: f64,
        mode: Vec<i64>,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        time: TimeProfile,
    },
    /// Periodised Gaussian bump projected onto `max_i |k_i| <= kmax`.
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
        kmax: usize,
        #[serde(default)]
        time: TimeProfile,
    },
    Sum {
        terms: Vec<FieldSpec>,
    },
    /// A field file (JSON header with binary or CSV values).
    File {
        path: PathBuf,
    },
}

impl FieldSpec {
    pub fn constant(value: f64) -> Self {
        FieldSpec::Constant { value, time: TimeProfile::default() }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            FieldSpec::Zero => true,
            FieldSpec::Constant { value, .. } => *value == 0.0,
            FieldSpec::Cosine { amplitude, .. } | FieldSpec::Gaussian { amplitude, .. } => *amplitude == 0.0,
            FieldSpec::Sum { terms } => terms.iter().all(FieldSpec::is_zero),
            FieldSpec::File { .. } => false,
        }
    }

    pub fn is_time_dependent(&self) -> Result<bool> {
        Ok(match self {
            FieldSpec::Zero => false,
            FieldSpec::Constant { time, .. } | FieldSpec::Cosine { time, .. } | FieldSpec::Gaussian { time, .. } => {
                !time.is_constant()
            }
            FieldSpec::Sum { terms } => {
                let mut any = false;
                for t in terms {
                    any |= t.is_time_dependent()?;
                }
                any
            }
            FieldSpec::File { path } => io::read_field(path)?.slices() > 1,
        })
    }

    pub(crate) fn resolve_paths(&mut self, base: &Path) {
        match self {
            FieldSpec::File { path } if path.is_relative() => *path = base.join(&*path),
            FieldSpec::Sum { terms } => terms.iter_mut().for_each(|t| t.resolve_paths(base)),
            _ => {}
        }
    }

    pub(crate) fn collect_files(&self, out: &mut Vec<PathBuf>) {
        match self {
            FieldSpec::File { path } => out.push(path.clone()),
            FieldSpec::Sum { terms } => terms.iter().for_each(|t| t.collect_files(out)),
            _ => {}
        }
    }

    /// Samples the field on the `m^d` grid at `times`.
    pub fn grid(&self, d: usize, m: usize, times: &[f64]) -> Result<FieldGrid> {
        let zeros = || Ok(FieldGrid::zeros(d, m, times.to_vec())?);
        match self {
            FieldSpec::Zero => zeros(),
            FieldSpec::Constant { value, time } => {
                Ok(FieldGrid::from_fn(d, m, times.to_vec(), |t, _| value * time.at(t))?)
            }
            FieldSpec::Cosine { amplitude, mode, phase, time } => {
                if mode.len() != d {
                    bail!("cosine mode has {} components for a {d}-dimensional grid", mode.len());
                }
                Ok(FieldGrid::from_fn(d, m, times.to_vec(), |t, u| {
                    let arg: f64 = mode.iter().zip(u).map(|(&k, &x)| k as f64 * x).sum();
                    amplitude * (2.0 * PI * arg + phase).cos() * time.at(t)
                })?)
            }
            FieldSpec::Gaussian { amplitude, center, width, kmax, time } => {
                if center.len() != d || !(*width > 0.0) {
                    bail!("gaussian needs a {d}-component center and positive width");
                }
                let g = FieldGrid::from_fn(d, m, times.to_vec(), |t, u| {
                    let mut prod = 1.0;
                    for (x, c) in u.iter().zip(center) {
                        let mut s = 0.0;
                        for image in -2..=2 {
                            let r = x - c - image as f64;
                            s += (-r * r / (2.0 * width * width)).exp();
                        }
                        prod *= s;
                    }
                    amplitude * prod * time.at(t)
                })?;
                Ok(g.band_limited(*kmax))
            }
            FieldSpec::Sum { terms } => {
                let mut acc = FieldGrid::zeros(d, m, times.to_vec())?;
                for term in terms {
                    acc = acc.axpy(1.0, &term.grid(d, m, times)?)?;
                }
                Ok(acc)
            }
            FieldSpec::File { path } => {
                let g = io::read_field(path)?;
                if g.dim() != d || g.side() != m {
                    bail!("{}: grid is d={}, m={}, expected d={d}, m={m}", path.display(), g.dim(), g.side());
                }
                if g.times() == times {
                    Ok(g)
                } else if g.slices() == 1 {
                    let values = g.first().repeat(times.len());
                    Ok(FieldGrid::new(d, m, times.to_vec(), values)?)
                } else {
                    bail!("{}: time slices do not match the configured grid", path.display())
                }
            }
        }
    }

    /// Single spatial slice at time `t`.
    pub fn spatial(&self, d: usize, m: usize, t: f64) -> Result<Vec<f64>> {
        if let FieldSpec::File { path } = self {
            let g = io::read_field(path)?;
            if g.slices() > 1 {
                let k = g.times().iter().position(|&s| s == t).context("field file has no slice at the requested time")?;
                return Ok(g.slice(k).to_vec());
            }
            return Ok(g.first().to_vec());
        }
        Ok(self.grid(d, m, &[t])?.first().to_vec())
    }

    /// The field on lattice sites: a single stationary slice when the spec is
    /// time independent, otherwise one slice per grid time.
    pub fn lattice(&self, torus: &Torus, m: usize, times: &[f64]) -> Result<LatticeField> {
        let grid = if self.is_time_dependent()? { self.grid(torus.dim(), m, times)? } else { self.grid(torus.dim(), m, &[0.0])? };
        Ok(grid.to_lattice(torus)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_evaluation() {
        let p = TimeProfile { poly: vec![1.0, 2.0, 3.0], rate: 0.0, shift: 0.0 };
        assert_eq!(p.at(2.0), 1.0 + 4.0 + 12.0);
        let e = TimeProfile { poly: vec![2.0], rate: -1.5, shift: 1.0 };
        assert!((e.at(1.0) - 2.0).abs() < 1e-15);
        assert!(!e.is_constant());
        assert!(TimeProfile::default().is_constant());
        assert!(TimeProfile { poly: vec![3.0, 0.0], ..TimeProfile::default() }.is_constant());
    }

    #[test]
    fn cosine_on_lattice_is_exact() {
        let f = FieldSpec::Cosine { amplitude: 0.7, mode: vec![2], phase: 0.3, time: TimeProfile::default() };
        let torus = Torus::new(1, 50).unwrap();
        let lf = f.lattice(&torus, 16, &[0.0, 1.0]).unwrap();
        assert!(lf.is_stationary());
        for x in 0..50 {
            let exact = 0.7 * (2.0 * PI * 2.0 * x as f64 / 50.0 + 0.3).cos();
            assert!((lf.slice(0)[x] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn time_dependent_sum() {
        let f = FieldSpec::Sum {
            terms: vec![
                FieldSpec::constant(1.0),
                FieldSpec::Constant { value: 2.0, time: TimeProfile { poly: vec![0.0, 1.0], ..Default::default() } },
            ],
        };
        assert!(f.is_time_dependent().unwrap());
        let g = f.grid(1, 4, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(g.slice(2), &[3.0; 4]);
        assert_eq!(g.slice(1), &[2.0; 4]);
    }

    #[test]
    fn gaussian_is_band_limited() {
        let f = FieldSpec::Gaussian { amplitude: 1.0, center: vec![0.5], width: 0.05, kmax: 4, time: TimeProfile::default() };
        let g = f.grid(1, 64, &[0.0]).unwrap();
        let sp = rdmd_core::field::Spectral::new(1, 64);
        let c = sp.forward(g.first());
        for (idx, v) in c.iter().enumerate() {
            if sp.kmax_abs(idx) > 4 {
                assert!(v.norm() < 1e-15);
            }
        }
        assert!(c[1].norm() > 0.01);
        assert!(f.spatial(2, 8, 0.0).is_err());
    }

    #[test]
    fn serde_shapes() {
        let f: FieldSpec = serde_json::from_str(r#"{"type":"cosine","amplitude":1.0,"mode":[1,0]}"#).unwrap();
        assert!(matches!(f, FieldSpec::Cosine { phase, .. } if phase == 0.0));
        let z: FieldSpec = serde_json::from_str(r#"{"type":"zero"}"#).unwrap();
        assert!(z.is_zero());
        assert!(serde_json::from_str::<FieldSpec>(r#"{"type":"cosine","amplitude":1.0}"#).is_err());
    }
}
