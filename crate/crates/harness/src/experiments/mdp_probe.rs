use std::f64::consts::PI;

use anyhow::{bail, Result};
use rdmd_core::field::{l2_inner, rate_function, solve_forward, TimeQuadrature};
use rdmd_core::observables::{fluctuation_field, MartingaleAccumulator};
use rdmd_core::rng::{stream, Purpose};
use rdmd_core::simulate::{log_density_ratio, run as simulate, sample_tilted_initial, tilted_marginals};
use rdmd_core::{DerivedConstants, TiltControl, Torus};
use serde::Serialize;
use serde_json::json;

use super::Setup;
use crate::config::Spec;
use crate::manifest::{Report, Verdict};
use crate::pool::{run_replicas, stream_id};
use crate::presets::{FieldSpec, TimeProfile};
use crate::stats::{effective_sample_size, kahan, strictly_decreasing};

/// Cheapest macroscopic path reaching `⟨ρ_T, J⟩ = c` for `J ≡ 1` (mode 0)
/// or `J = cos(2πk u_1)`, from linear-quadratic control of one Fourier mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalTilt {
    pub mode: u32,
    pub threshold: f64,
    /// Rate `Q_T` of the optimal path.
    pub rate: f64,
    /// `H(t,u) = control_amplitude · e^{L(T-t)} · J(u)`.
    pub control_amplitude: f64,
    /// `φ(u) = initial_amplitude · J(u)`.
    pub initial_amplitude: f64,
    /// Mode decay rate `L = -4π²k² + F'(ρ*)`.
    pub decay: f64,
}

/// `∫_0^T e^{2L s} ds`.
fn exp_integral(l: f64, t: f64) -> f64 {
    if (l * t).abs() < 1e-12 {
        t
    } else {
        (2.0 * l * t).exp_m1() / (2.0 * l)
    }
}

pub fn optimal_tilt(mode: u32, threshold: f64, horizon: f64, dc: &DerivedConstants) -> OptimalTilt {
    let k2 = (mode as f64).powi(2);
    let l = -4.0 * PI * PI * k2 + dc.f_prime;
    let b = 8.0 * PI * PI * dc.chi * k2 + dc.g_star;
    let w = dc.chi * (2.0 * l * horizon).exp() + b * exp_integral(l, horizon);
    let c = threshold;
    if mode == 0 {
        let nu = c / w;
        OptimalTilt {
            mode,
            threshold,
            rate: c * c / (2.0 * w),
            control_amplitude: nu,
            initial_amplitude: nu * dc.chi * (l * horizon).exp(),
            decay: l,
        }
    } else {
        let mu = c / w;
        OptimalTilt {
            mode,
            threshold,
            rate: c * c / w,
            control_amplitude: 2.0 * mu,
            initial_amplitude: 2.0 * dc.chi * mu * (l * horizon).exp(),
            decay: l,
        }
    }
}

impl OptimalTilt {
    fn shape(&self, d: usize, amplitude: f64, time: TimeProfile) -> FieldSpec {
        if self.mode == 0 {
            FieldSpec::Constant { value: amplitude, time }
        } else {
            let mut k = vec![0i64; d];
            k[0] = self.mode as i64;
            FieldSpec::Cosine { amplitude, mode: k, phase: 0.0, time }
        }
    }

    pub fn control(&self, d: usize, horizon: f64) -> FieldSpec {
        let time = TimeProfile { poly: vec![1.0], rate: -self.decay, shift: horizon };
        self.shape(d, self.control_amplitude, time)
    }

    pub fn initial(&self, d: usize) -> FieldSpec {
        self.shape(d, self.initial_amplitude, TimeProfile::default())
    }

    pub fn probe(&self, d: usize) -> FieldSpec {
        self.shape(d, 1.0, TimeProfile::default())
    }
}

struct Replica {
    log_weight: f64,
    value: f64,
}

pub fn run(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let dc = setup.dc;
    let d = spec.scaling.d;
    let m = spec.grid.m;
    let tilt = optimal_tilt(spec.mdp.mode, spec.mdp.threshold, spec.horizon, &dc);
    if spec.mdp.ladder.is_empty() {
        bail!("mdp.ladder must not be empty");
    }
    let times = spec.time_grid();
    let control = tilt.control(d, spec.horizon);
    let initial = tilt.initial(d);
    let probe = tilt.probe(d);

    // the same path through the field module
    let h_grid = control.grid(d, m, &times)?;
    let phi_grid = initial.grid(d, m, &[0.0])?;
    let path = solve_forward(phi_grid.first(), &h_grid, &dc)?;
    let j_grid = probe.grid(d, m, &[0.0])?;
    let endpoint = l2_inner(path.last(), j_grid.first());
    let numeric = rate_function(&path, &dc, TimeQuadrature::Trapezoid)?;

    let mut levels = Vec::new();
    let mut gaps = Vec::new();
    let mut replicas = Vec::new();
    let mut warnings = Vec::new();
    for (level, &n) in spec.mdp.ladder.iter().enumerate() {
        let sc = spec.scaling.at(n)?;
        let torus = Torus::new(d, n)?;
        let h = control.lattice(&torus, m, &times)?;
        let phi = initial.grid(d, m, &[0.0])?.to_lattice(&torus)?;
        let j = probe.grid(d, m, &[0.0])?.to_lattice(&torus)?;
        let marginals = tilted_marginals(phi.slice(0), &sc, &dc)?;
        let mut sim = setup.sim(spec, sc);
        sim.sample_times = vec![spec.horizon];
        let dynamics = TiltControl::on(h.clone());

        let reps = run_replicas(spec.replicas_u64(), |r| {
            let mut sim = sim.clone();
            sim.stream = stream_id(level, r);
            let mut rng = stream(sim.seed, sim.stream, Purpose::Initial);
            let cfg0 = sample_tilted_initial(phi.slice(0), &sc, &dc, &mut rng)?;
            let density = log_density_ratio(&cfg0, &marginals, dc.rho_star);
            let mut mart = MartingaleAccumulator::new(&torus, &h, &sc, setup.params, dc.rho_star, spec.glauber)?;
            let traj = simulate(&torus, cfg0, &sim, &dynamics, &mut [&mut mart])?;
            Ok(Replica {
                log_weight: density - mart.log_m[0],
                value: fluctuation_field(&traj.final_config, j.slice(0), &sc, dc.rho_star),
            })
        })?;

        let hits: Vec<bool> = reps.iter().map(|r| r.value >= spec.mdp.threshold).collect();
        let w: Vec<f64> = reps.iter().zip(&hits).map(|(r, &hit)| if hit { r.log_weight.exp() } else { 0.0 }).collect();
        let p_hat = kahan(w.iter().copied()) / reps.len() as f64;
        let ess = effective_sample_size(&w);
        let speed = sc.speed();
        let scaled = p_hat.ln() / speed;
        let gap = (scaled + tilt.rate).abs();
        if ess < spec.thresholds.ess_min_fraction * spec.replicas as f64 {
            warnings.push(format!("n={n}: effective sample size {ess:.1} is below {} of the replicas", spec.thresholds.ess_min_fraction));
        }
        let mean_value = kahan(reps.iter().map(|r| r.value)) / reps.len() as f64;
        gaps.push(gap);
        levels.push(json!({
            "n": n,
            "a_n": sc.a_n,
            "speed": speed,
            "p_hat": p_hat,
            "scaled_log_p": if p_hat > 0.0 { Some(scaled) } else { None },
            "minus_rate": -tilt.rate,
            "gap": if p_hat > 0.0 { Some(gap) } else { None },
            "ess": ess,
            "hits": hits.iter().filter(|&&h| h).count(),
            "mean_probe_under_tilt": mean_value,
        }));
        replicas.extend(reps.iter().map(|r| json!({"n": n, "log_weight": r.log_weight, "probe": r.value})));
    }

    let statistics = json!({
        "event": format!("<mu_T, J> >= {}", spec.mdp.threshold),
        "probe_mode": spec.mdp.mode,
        "optimal_tilt": tilt,
        "path_endpoint": endpoint,
        "rate_numeric": {"q0": numeric.q0, "qdyn": numeric.qdyn, "qt": numeric.qt},
        "levels": levels,
        "gap_decreasing": gaps.iter().all(|g| g.is_finite()) && strictly_decreasing(&gaps),
    });
    let mut report = Report::new(Verdict::Exploratory, statistics);
    report.replicas = replicas;
    report.warnings = warnings;
    Ok(report)
}
