use anyhow::Result;
use rdmd_core::field::l2_inner;
use rdmd_core::observables::fluctuation_field;
use rdmd_core::rng::{stream, Purpose};
use rdmd_core::simulate::sample_product_measure;
use rdmd_core::Torus;
use serde_json::json;

use super::Setup;
use crate::config::Spec;
use crate::manifest::{Report, Verdict};
use crate::pool::{run_replicas, stream_id};
use crate::stats::{kahan, Estimate};

/// Samples `ν_ρ*` only. Check (i) gates on the variance of
/// `(a_n/n^{d/2})⟨μ_0, H⟩` against `χ‖H‖²`; check (ii) reports the scaled
/// cumulant `(n^d/a_n²) log E exp{(a_n²/n^d)⟨μ_0,H⟩}` against `(χ/2)‖H‖²`.
pub fn run(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let sc = spec.scaling.single()?;
    let torus = Torus::new(sc.d, sc.n)?;
    let (d, m) = (sc.d, spec.grid.m);
    let grid = spec.control.grid(d, m, &[0.0])?;
    let h = grid.to_lattice(&torus)?;
    let h0 = h.slice(0);
    let norm2 = l2_inner(grid.first(), grid.first());
    let chi = setup.dc.chi;
    let rho = setup.dc.rho_star;
    let vol = torus.volume() as f64;
    let scale = sc.a_n / vol.sqrt();
    let speed = sc.speed();

    let fields = run_replicas(spec.replicas_u64(), |r| {
        let mut rng = stream(spec.seed, stream_id(0, r), Purpose::Initial);
        let cfg = sample_product_measure(rho, torus.volume(), &mut rng)?;
        Ok(fluctuation_field(&cfg, h0, &sc, rho))
    })?;

    let x: Vec<f64> = fields.iter().map(|f| scale * f).collect();
    let est = Estimate::of(&x);
    let variance = est.variance.unwrap_or(f64::NAN);
    let target = chi * norm2;
    let riemann = chi * kahan(h0.iter().map(|v| v * v)) / vol;
    let rel = if target == 0.0 { variance.abs() } else { (variance / target - 1.0).abs() };
    let tol = spec.thresholds.clt_rel_tol;

    // check (ii): exp(speed·⟨μ,H⟩), with the delta-method interval on the log
    let w: Vec<f64> = fields.iter().map(|f| (speed * f).exp()).collect();
    let we = Estimate::of(&w);
    let cumulant = we.mean.ln() / speed;
    let half_width = we.se.map(|se| 1.96 * se / we.mean / speed);
    let limit = 0.5 * chi * norm2;

    let verdict = match est.variance {
        None => Verdict::Undetermined,
        Some(_) => Verdict::from_bool(if target == 0.0 { variance == 0.0 } else { rel < tol }),
    };
    let statistics = json!({
        "n": sc.n,
        "a_n": sc.a_n,
        "samples": spec.replicas,
        "variance": variance,
        "target": target,
        "riemann_target": riemann,
        "relative_error": rel,
        "tolerance": tol,
        "mean": est.mean,
        "scaled_cumulant": cumulant,
        "scaled_cumulant_ci95": half_width.map(|hw| [cumulant - hw, cumulant + hw]),
        "scaled_cumulant_limit": limit,
    });
    let mut report = Report::new(verdict, statistics);
    if verdict == Verdict::Undetermined {
        report.warnings.push("one sample: variance undefined, no verdict".into());
    }
    Ok(report)
}
