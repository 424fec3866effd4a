use anyhow::Result;
use rdmd_core::field::{l2_inner, solve_forward};
use rdmd_core::observables::FluctuationObserver;
use rdmd_core::rng::{stream, Purpose};
use rdmd_core::simulate::{run as simulate, sample_tilted_initial};
use rdmd_core::{LatticeField, TiltControl, Torus};
use serde_json::json;

use super::{grid_index, lattice_field, Setup};
use crate::config::Spec;
use crate::io::Series;
use crate::manifest::{Report, Verdict};
use crate::pool::{run_replicas, stream_id};
use crate::stats::{strictly_decreasing, Estimate};

/// `∫ ρ(t,u) J(t,u) du` at each sample time.
fn predictions(spec: &Spec, setup: &Setup) -> Result<Vec<Vec<f64>>> {
    let (d, m) = (spec.scaling.d, spec.grid.m);
    let times = spec.time_grid();
    let phi = spec.initial.grid(d, m, &[0.0])?;
    let h = spec.control.grid(d, m, &times)?;
    let rho = solve_forward(phi.first(), &h, &setup.dc)?;
    let samples = spec.sample_times();
    let mut out = Vec::with_capacity(spec.probes.len());
    for probe in &spec.probes {
        let j = probe.grid(d, m, &times)?;
        let mut row = Vec::with_capacity(samples.len());
        for &t in &samples {
            let k = grid_index(&times, t)?;
            row.push(l2_inner(rho.slice(k), j.slice(k)));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn run(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let exact = predictions(spec, &setup)?;
    let samples = spec.sample_times();
    let probes = spec.probes.len();

    let mut errors = vec![Vec::new(); probes];
    let mut levels = Vec::new();
    let mut replicas = Vec::new();
    let mut series = Series::new(
        "tilted_hydro",
        &["n", "probe", "t", "mean", "se", "predicted"],
    );

    for (level, &n) in spec.scaling.ladder.iter().enumerate() {
        let sc = spec.scaling.at(n)?;
        let torus = Torus::new(sc.d, n)?;
        let h = lattice_field(spec, &spec.control, &torus)?;
        let phi = spec.initial.grid(sc.d, spec.grid.m, &[0.0])?.to_lattice(&torus)?;
        let fields: Vec<LatticeField> =
            spec.probes.iter().map(|p| lattice_field(spec, p, &torus)).collect::<Result<_>>()?;
        let sim = setup.sim(spec, sc);
        let tilt = TiltControl::on(h);

        let values = run_replicas(spec.replicas_u64(), |r| {
            let mut sim = sim.clone();
            sim.stream = stream_id(level, r);
            let mut rng = stream(sim.seed, sim.stream, Purpose::Initial);
            let cfg0 = sample_tilted_initial(phi.slice(0), &sc, &setup.dc, &mut rng)?;
            let refs: Vec<&LatticeField> = fields.iter().collect();
            let mut obs = FluctuationObserver::new(&refs, &sc, setup.dc.rho_star);
            simulate(&torus, cfg0, &sim, &tilt, &mut [&mut obs])?;
            Ok(obs.series)
        })?;

        let mut level_errors = Vec::with_capacity(probes);
        for p in 0..probes {
            let mut worst: f64 = 0.0;
            for (s, &t) in samples.iter().enumerate() {
                let v: Vec<f64> = values.iter().map(|r| r[p][s]).collect();
                let e = Estimate::of(&v);
                worst = worst.max((e.mean - exact[p][s]).abs());
                series.push(vec![n as f64, p as f64, t, e.mean, e.se.unwrap_or(f64::NAN), exact[p][s]]);
            }
            errors[p].push(worst);
            level_errors.push(worst);
        }
        levels.push(json!({"n": n, "a_n": sc.a_n, "errors": level_errors}));
        replicas.extend(values.iter().map(|v| json!({"n": n, "values": v})));
    }

    let th = spec.thresholds.hydro_error_max;
    let per_probe: Vec<_> = errors
        .iter()
        .map(|e| {
            let decreasing = strictly_decreasing(e);
            let small = e.last().is_some_and(|&v| v < th);
            json!({"errors": e, "strictly_decreasing": decreasing, "below_threshold": small})
        })
        .collect();
    let pass = errors.iter().all(|e| strictly_decreasing(e) && e.last().is_some_and(|&v| v < th));
    let statistics = json!({
        "ladder": spec.scaling.ladder,
        "sample_times": samples,
        "predicted": exact,
        "levels": levels,
        "probes": per_probe,
        "hydro_error_max": th,
    });
    let mut report = Report::new(Verdict::from_bool(pass), statistics);
    report.replicas = replicas;
    report.series.push(series);
    Ok(report)
}
