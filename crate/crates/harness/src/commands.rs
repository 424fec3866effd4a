//! The non-experiment commands and the common run/write/replay plumbing.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rdmd_core::field::{l2_inner, rate_function, scalar_product, solve_forward, FieldGrid, TimeQuadrature};
use rdmd_core::observables::{FluctuationObserver, MartingaleAccumulator};
use rdmd_core::rng::{stream, Purpose};
use rdmd_core::simulate::{run as simulate_run, sample_tilted_initial};
use rdmd_core::{DerivedConstants, LatticeField, Observer, TiltControl, Torus};
use serde_json::json;

use crate::config::{Kind, Spec};
use crate::experiments::{self, Setup};
use crate::io::{self, DataFormat, Series};
use crate::manifest::{Report, RunManifest, Verdict};
use crate::pool::{run_replicas, stream_id};
use crate::stats::Estimate;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Pde,
    /// Rate of the path solved from `initial` and `control`, or of the
    /// path file named in the spec.
    Rate,
    Experiment(Kind),
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::Simulate => "simulate".into(),
            Command::Pde => "pde".into(),
            Command::Rate => "rate".into(),
            Command::Experiment(k) => format!("experiment {k}"),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "simulate" => Command::Simulate,
            "pde" => Command::Pde,
            "rate" => Command::Rate,
            other => match other.strip_prefix("experiment ") {
                Some(k) => Command::Experiment(k.parse()?),
                None => bail!("unknown command `{other}`"),
            },
        })
    }
}

/// Runs `command`, returning the report and the derived constants.
pub fn report(command: &Command, spec: &Spec) -> Result<Report> {
    match command {
        Command::Simulate => simulate(spec),
        Command::Pde => pde(spec),
        Command::Rate => rate(spec),
        Command::Experiment(_) => experiments::run(spec),
    }
}

/// Runs `command` and writes the manifest plus its files into `out`.
pub fn execute(command: &Command, spec: &Spec, out: Option<&Path>) -> Result<RunManifest> {
    let started = Instant::now();
    let rep = report(command, spec)?;
    let dc = DerivedConstants::new(&spec.model.params()?)?;
    let manifest = RunManifest::new(&command.name(), spec, dc, rep, started.elapsed().as_secs_f64())?;
    if let Some(dir) = out {
        write_outputs(dir, &manifest)?;
    }
    Ok(manifest)
}

fn write_outputs(dir: &Path, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for s in &manifest.report.series {
        s.write(dir)?;
    }
    for (name, grid) in &manifest.report.fields {
        io::write_field(&dir.join(format!("{name}.json")), grid, DataFormat::F64le)?;
    }
    for (name, bytes) in &manifest.report.blobs {
        fs::write(dir.join(name), bytes)?;
    }
    manifest.save(&dir.join("manifest.json"))
}

/// Re-runs a manifest; `Ok(true)` when every statistic is reproduced bit for bit.
pub fn replay(manifest: &RunManifest) -> Result<bool> {
    let command = Command::parse(&manifest.command)?;
    let rep = report(&command, &manifest.spec)?;
    Ok(manifest.reproduces(&rep))
}

struct SimReplica {
    probes: Vec<Vec<f64>>,
    log_m: Option<Vec<f64>>,
    counts: Vec<usize>,
    snapshots: Vec<Vec<u8>>,
    events: u64,
}

fn simulate(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let dc = setup.dc;
    let sc = spec.scaling.single()?;
    let torus = Torus::new(sc.d, sc.n)?;
    let h = spec.control.lattice(&torus, spec.grid.m, &spec.time_grid())?;
    let phi = spec.initial.grid(sc.d, spec.grid.m, &[0.0])?.to_lattice(&torus)?;
    let probes: Vec<LatticeField> = spec
        .probes
        .iter()
        .map(|p| p.lattice(&torus, spec.grid.m, &spec.time_grid()))
        .collect::<Result<_>>()?;
    let mut sim = setup.sim(spec, sc);
    sim.sample_times.insert(0, 0.0);
    sim.record_snapshots = spec.snapshots;
    let tilt = if spec.tilted { TiltControl::on(h.clone()) } else { TiltControl::off(torus.volume()) };
    let track_m = !spec.control.is_zero();

    let reps = run_replicas(spec.replicas_u64(), |r| {
        let mut sim = sim.clone();
        sim.stream = stream_id(0, r);
        let cfg0 = sample_tilted_initial(phi.slice(0), &sc, &dc, &mut stream(sim.seed, sim.stream, Purpose::Initial))?;
        let refs: Vec<&LatticeField> = probes.iter().collect();
        let mut obs = FluctuationObserver::new(&refs, &sc, dc.rho_star);
        let mut mart = if track_m {
            Some(MartingaleAccumulator::new(&torus, &h, &sc, setup.params, dc.rho_star, spec.glauber)?)
        } else {
            None
        };
        let traj = {
            let mut list: Vec<&mut dyn Observer> = vec![&mut obs];
            if let Some(m) = mart.as_mut() {
                list.push(m);
            }
            simulate_run(&torus, cfg0, &sim, &tilt, &mut list)?
        };
        Ok(SimReplica {
            probes: obs.series,
            log_m: mart.map(|m| m.log_m),
            counts: traj.particle_counts.clone(),
            snapshots: traj.snapshots.iter().map(|c| c.to_snapshot(&torus)).collect(),
            events: traj.event_count,
        })
    })?;

    let mut columns: Vec<String> = vec!["replica".into(), "t".into()];
    columns.extend((0..spec.probes.len()).map(|j| format!("probe_{j}")));
    columns.push("log_M".into());
    columns.push("particles".into());
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut series = Series::new("trajectory", &cols);
    let mut report_blobs = Vec::new();
    for (r, rep) in reps.iter().enumerate() {
        for (s, &t) in sim.sample_times.iter().enumerate() {
            let mut row = vec![r as f64, t];
            row.extend(rep.probes.iter().map(|p| p[s]));
            row.push(rep.log_m.as_ref().map_or(0.0, |m| m[s]));
            row.push(rep.counts[s] as f64);
            series.push(row);
        }
        for (s, bytes) in rep.snapshots.iter().enumerate() {
            report_blobs.push((format!("snapshot_r{r}_s{s}.rdcf"), bytes.clone()));
        }
    }
    let events = Estimate::of(&reps.iter().map(|r| r.events as f64).collect::<Vec<_>>());
    let statistics = json!({
        "n": sc.n,
        "a_n": sc.a_n,
        "tilted": spec.tilted,
        "sample_times": sim.sample_times,
        "mean_events": events.mean,
    });
    let mut report = Report::new(Verdict::Complete, statistics);
    report.replicas = reps
        .iter()
        .map(|r| {
            json!({
                "events": r.events,
                "final_probes": r.probes.iter().map(|p| p.last().copied()).collect::<Vec<_>>(),
                "final_log_M": r.log_m.as_ref().and_then(|m| m.last().copied()),
                "final_particles": r.counts.last(),
            })
        })
        .collect();
    report.series.push(series);
    report.blobs = report_blobs;
    Ok(report)
}

fn pde(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let (d, m) = (spec.scaling.d, spec.grid.m);
    let times = spec.time_grid();
    let phi = spec.initial.grid(d, m, &[0.0])?;
    let h = spec.control.grid(d, m, &times)?;
    let rho = solve_forward(phi.first(), &h, &setup.dc)?;
    let probes: Vec<FieldGrid> = spec.probes.iter().map(|p| p.grid(d, m, &times)).collect::<Result<_>>()?;
    let mut columns: Vec<String> = vec!["t".into()];
    columns.extend((0..probes.len()).map(|j| format!("probe_{j}")));
    columns.push("l2_norm".into());
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut series = Series::new("pde", &cols);
    for (k, &t) in times.iter().enumerate() {
        let mut row = vec![t];
        row.extend(probes.iter().map(|j| l2_inner(rho.slice(k), j.slice(k))));
        row.push(l2_inner(rho.slice(k), rho.slice(k)).sqrt());
        series.push(row);
    }
    let statistics = json!({
        "m": m,
        "slices": spec.grid.slices,
        "final_probes": probes.iter().map(|j| l2_inner(rho.last(), j.last())).collect::<Vec<_>>(),
        "sup_abs": rho.sup_abs(),
    });
    let mut report = Report::new(Verdict::Complete, statistics);
    report.series.push(series);
    report.fields.push(("rho".into(), rho));
    Ok(report)
}

fn rate(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let (d, m) = (spec.scaling.d, spec.grid.m);
    let quad = TimeQuadrature::Trapezoid;
    let (mu, given) = match &spec.path {
        Some(p) => (io::read_field(p)?, None),
        None => {
            let times = spec.time_grid();
            let phi = spec.initial.grid(d, m, &[0.0])?;
            let h = spec.control.grid(d, m, &times)?;
            (solve_forward(phi.first(), &h, &setup.dc)?, Some(h))
        }
    };
    let rb = rate_function(&mu, &setup.dc, quad)?;
    let direct = match &given {
        Some(h) => Some(scalar_product(h, h, &setup.dc, quad)?),
        None => None,
    };
    let statistics = json!({
        "q0": rb.q0,
        "qdyn": rb.qdyn,
        "qt": rb.qt,
        "h_h_of_given_control": direct,
        "slices": mu.slices() - 1,
    });
    let mut report = Report::new(Verdict::Complete, statistics);
    report.fields.push(("control".into(), rb.control));
    Ok(report)
}
