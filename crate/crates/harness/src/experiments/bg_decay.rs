use anyhow::Result;
use rdmd_core::observables::BgDiagnostics;
use rdmd_core::rng::{stream, Purpose};
use rdmd_core::simulate::{run as simulate, sample_product_measure};
use rdmd_core::{TiltControl, Torus};
use serde_json::json;

use super::{lattice_field, Setup};
use crate::config::Spec;
use crate::io::Series;
use crate::manifest::{Report, Verdict};
use crate::pool::{run_replicas, stream_id};
use crate::stats::{strictly_decreasing, Estimate};

pub fn run(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let rho = setup.dc.rho_star;
    let mut sup1 = Vec::new();
    let mut sup2 = Vec::new();
    let mut levels = Vec::new();
    let mut replicas = Vec::new();
    let mut series = Series::new("bg_decay", &["n", "a_n", "r_n", "mean_sup_I1", "se_sup_I1", "mean_sup_I2", "se_sup_I2"]);

    for (level, &n) in spec.scaling.ladder.iter().enumerate() {
        let sc = spec.scaling.at(n)?;
        let torus = Torus::new(sc.d, n)?;
        let h = lattice_field(spec, &spec.control, &torus)?;
        let r_n = sc.a_n * (n as f64).powf(spec.bg.r_exponent);
        let sim = setup.sim(spec, sc);
        let values = run_replicas(spec.replicas_u64(), |r| {
            let mut sim = sim.clone();
            sim.stream = stream_id(level, r);
            let cfg0 = sample_product_measure(rho, torus.volume(), &mut stream(sim.seed, sim.stream, Purpose::Initial))?;
            let mut bg = BgDiagnostics::new(&torus, &h, &sc, rho, r_n)?;
            simulate(&torus, cfg0, &sim, &TiltControl::off(torus.volume()), &mut [&mut bg])?;
            Ok((bg.sup_i1, bg.sup_i2_max()))
        })?;
        let e1 = Estimate::of(&values.iter().map(|v| v.0).collect::<Vec<_>>());
        let e2 = Estimate::of(&values.iter().map(|v| v.1).collect::<Vec<_>>());
        sup1.push(e1.mean);
        sup2.push(e2.mean);
        series.push(vec![
            n as f64,
            sc.a_n,
            r_n,
            e1.mean,
            e1.se.unwrap_or(f64::NAN),
            e2.mean,
            e2.se.unwrap_or(f64::NAN),
        ]);
        levels.push(json!({"n": n, "a_n": sc.a_n, "r_n": r_n, "sup_I1": e1, "sup_I2": e2}));
        replicas.extend(values.iter().map(|v| json!({"n": n, "sup_I1": v.0, "sup_I2": v.1})));
    }

    let dec1 = strictly_decreasing(&sup1);
    let dec2 = strictly_decreasing(&sup2);
    let degenerate = sup1.iter().chain(&sup2).all(|&v| v == 0.0);
    let verdict = if degenerate { Verdict::Undetermined } else { Verdict::from_bool(dec1 && dec2) };
    let statistics = json!({
        "ladder": spec.scaling.ladder,
        "r_exponent": spec.bg.r_exponent,
        "mean_sup_I1": sup1,
        "mean_sup_I2": sup2,
        "I1_strictly_decreasing": dec1,
        "I2_strictly_decreasing": dec2,
        "levels": levels,
    });
    let mut report = Report::new(verdict, statistics);
    if degenerate {
        report.warnings.push("all integrals vanish identically (H = 0); monotonicity is undefined".into());
    }
    report.replicas = replicas;
    report.series.push(series);
    Ok(report)
}
