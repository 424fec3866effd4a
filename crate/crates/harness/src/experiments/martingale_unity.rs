use anyhow::Result;
use rdmd_core::observables::MartingaleAccumulator;
use rdmd_core::rng::{stream, Purpose};
use rdmd_core::simulate::{run as simulate, sample_product_measure};
use rdmd_core::{TiltControl, Torus};
use serde_json::json;

use super::{lattice_field, Setup};
use crate::config::Spec;
use crate::io::Series;
use crate::manifest::{Report, Verdict};
use crate::pool::{run_replicas, stream_id};
use crate::stats::Estimate;

struct Replica {
    log_m: Vec<f64>,
    events: u64,
}

pub fn run(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let sc = spec.scaling.single()?;
    let torus = Torus::new(sc.d, sc.n)?;
    let h = lattice_field(spec, &spec.control, &torus)?;
    let mut sim = setup.sim(spec, sc);
    sim.sample_times.insert(0, 0.0);
    let rho = setup.dc.rho_star;

    let reps = run_replicas(spec.replicas_u64(), |r| {
        let mut sim = sim.clone();
        sim.stream = stream_id(0, r);
        let cfg0 = sample_product_measure(rho, torus.volume(), &mut stream(sim.seed, sim.stream, Purpose::Initial))?;
        let mut m = MartingaleAccumulator::new(&torus, &h, &sc, setup.params, rho, spec.glauber)?;
        let traj = simulate(&torus, cfg0, &sim, &TiltControl::off(torus.volume()), &mut [&mut m])?;
        Ok(Replica { log_m: m.log_m, events: traj.event_count })
    })?;

    let mut series = Series::new("martingale", &["t", "mean_M", "se_M", "mean_log_M"]);
    for (s, &t) in sim.sample_times.iter().enumerate() {
        let m: Vec<f64> = reps.iter().map(|r| r.log_m[s].exp()).collect();
        let l: Vec<f64> = reps.iter().map(|r| r.log_m[s]).collect();
        let e = Estimate::of(&m);
        series.push(vec![t, e.mean, e.se.unwrap_or(f64::NAN), Estimate::of(&l).mean]);
    }

    let last = sim.sample_times.len() - 1;
    let m_t: Vec<f64> = reps.iter().map(|r| r.log_m[last].exp()).collect();
    let log_m_t: Vec<f64> = reps.iter().map(|r| r.log_m[last]).collect();
    let est = Estimate::of(&m_t);
    let log_est = Estimate::of(&log_m_t);
    let dev = (est.mean - 1.0).abs();
    let th = &spec.thresholds;

    let (verdict, z) = match est.se {
        None => (Verdict::Undetermined, None),
        Some(se) => {
            let within = dev == 0.0 || dev < th.z_max * se;
            let precise = th.se_max.is_none_or(|max| se < max);
            (Verdict::from_bool(within && precise), Some(if se > 0.0 { dev / se } else { 0.0 }))
        }
    };

    let statistics = json!({
        "n": sc.n,
        "a_n": sc.a_n,
        "horizon": spec.horizon,
        "mean_M": est.mean,
        "se_M": est.se,
        "z": z,
        "z_max": th.z_max,
        "se_max": th.se_max,
        "mean_log_M": log_est.mean,
        "var_log_M": log_est.variance,
        "max_M": m_t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "mean_events": Estimate::of(&reps.iter().map(|r| r.events as f64).collect::<Vec<_>>()).mean,
    });
    let mut report = Report::new(verdict, statistics);
    report.replicas = reps.iter().map(|r| json!({"log_M": r.log_m[last], "events": r.events})).collect();
    if verdict == Verdict::Undetermined {
        report.warnings.push("one replica: standard error undefined, no verdict".into());
    }
    report.series.push(series);
    Ok(report)
}
