use std::f64::consts::PI;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdmd_core::field::{
    ell_t, invert_for_control, l2_inner, q0, q_dyn, scalar_product, solve_forward, FieldGrid, Spectral,
};
use rdmd_core::DerivedConstants;
use serde_json::json;

use super::Setup;
use crate::config::Spec;
use crate::manifest::{Report, Verdict};

/// `|a - b| / |b|`, or `|a - b|` when `b = 0`.
fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        (a - b).abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Seven low spatial modes along the first axis, each times a random cubic in `t/T`.
pub(crate) struct TestFunction {
    coeffs: [[f64; 4]; 7],
    horizon: f64,
}

impl TestFunction {
    pub fn random(horizon: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut coeffs = [[0.0; 4]; 7];
        for row in coeffs.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        Self { coeffs, horizon }
    }

    pub fn grid(&self, d: usize, m: usize, times: &[f64]) -> Result<FieldGrid> {
        Ok(FieldGrid::from_fn(d, m, times.to_vec(), |t, u| {
            let x = 2.0 * PI * u[0];
            let s = t / self.horizon;
            let basis = [1.0, x.cos(), x.sin(), (2.0 * x).cos(), (2.0 * x).sin(), (3.0 * x).cos(), (3.0 * x).sin()];
            basis.iter().zip(&self.coeffs).map(|(b, p)| b * (p[0] + s * (p[1] + s * (p[2] + s * p[3])))).sum()
        })?)
    }
}

/// Largest per-mode deviation of the homogeneous solve from `ĉ_k(0) e^{(-4π²|k|²+F')t}`.
fn mode_decay(phi: &[f64], d: usize, m: usize, times: &[f64], dc: &DerivedConstants) -> Result<f64> {
    let zero = FieldGrid::zeros(d, m, times.to_vec())?;
    let rho = solve_forward(phi, &zero, dc)?;
    let sp = Spectral::new(d, m);
    let c0 = sp.forward(phi);
    let mut worst: f64 = 0.0;
    for (j, &t) in times.iter().enumerate() {
        let c = sp.forward(rho.slice(j));
        for idx in 0..sp.points() {
            let exact = c0[idx] * ((-4.0 * PI * PI * sp.k2(idx) + dc.f_prime) * t).exp();
            worst = worst.max((c[idx] - exact).norm());
        }
    }
    Ok(worst)
}

/// Self-convergence order of the forced solve under time-step halving,
/// with a fixed forcing that is smooth but not polynomial in time.
fn solver_order(phi: &[f64], d: usize, m: usize, horizon: f64, ladder: &[usize], dc: &DerivedConstants) -> Result<Vec<f64>> {
    let forcing = |t: f64, u: &[f64]| {
        let x = 2.0 * PI * u[0];
        let s = t / horizon;
        (3.0 * s).sin() * x.cos() + s * s * (2.0 * x).sin() + 0.3 * (2.0 * s).cos()
    };
    let mut sols = Vec::new();
    for &k in ladder {
        let h = FieldGrid::from_fn(d, m, FieldGrid::uniform_times(horizon, k), forcing)?;
        sols.push((k, solve_forward(phi, &h, dc)?));
    }
    let mut diffs = Vec::new();
    for w in sols.windows(2) {
        let ((k0, a), (k1, b)) = (&w[0], &w[1]);
        let stride = k1 / k0;
        let mut worst: f64 = 0.0;
        for j in 0..a.slices() {
            for (p, q) in a.slice(j).iter().zip(b.slice(j * stride)) {
                worst = worst.max((p - q).abs());
            }
        }
        diffs.push(worst);
    }
    Ok(diffs.windows(2).map(|w| (w[0] / w[1]).log2()).collect())
}

pub fn run(spec: &Spec) -> Result<Report> {
    let setup = Setup::new(spec)?;
    let dc = setup.dc;
    let th = &spec.thresholds;
    let (d, m) = (spec.scaling.d, spec.grid.m);
    let times = spec.time_grid();
    let phi = spec.initial.grid(d, m, &[0.0])?;
    let h = spec.control.grid(d, m, &times)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let quad = spec.identity.quadrature.rule();

    let decay = mode_decay(phi.first(), d, m, &times, &dc)?;

    let ladder = &spec.identity.solver_ladder;
    let orders = solver_order(phi.first(), d, m, spec.horizon, ladder, &dc)?;
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);

    let mu = solve_forward(phi.first(), &h, &dc)?;
    let back = invert_for_control(&mu, &dc)?;
    let h_norm = h.l2_norm();
    let diff = back.axpy(-1.0, &h)?.l2_norm();
    let round_trip = if h_norm == 0.0 { diff } else { diff / h_norm };

    let hh = scalar_product(&h, &h, &dc, quad)?;
    let mut ell_dev: f64 = 0.0;
    for _ in 0..spec.identity.random_tests {
        let j = TestFunction::random(spec.horizon, &mut rng).grid(d, m, &times)?;
        let lhs = ell_t(&mu, &j, &dc, quad)?;
        let rhs = 2.0 * scalar_product(&h, &j, &dc, quad)?;
        ell_dev = ell_dev.max(rel(lhs, rhs));
    }

    let (qd, _) = q_dyn(&mu, &dc, quad)?;
    let at_h = ell_t(&mu, &h, &dc, quad)? - hh;
    let attain = rel(qd, hh).max(rel(at_h, hh));
    let mut sup_excess = f64::NEG_INFINITY;
    for _ in 0..spec.identity.sup_family {
        let j = TestFunction::random(spec.horizon, &mut rng).grid(d, m, &times)?;
        let v = ell_t(&mu, &j, &dc, quad)? - scalar_product(&j, &j, &dc, quad)?;
        sup_excess = sup_excess.max(v - hh);
    }

    let q0v = q0(phi.first(), &dc);
    let value = |p: &[f64]| l2_inner(phi.first(), p) - dc.chi / 2.0 * l2_inner(p, p);
    let opt: Vec<f64> = phi.first().iter().map(|v| v / dc.chi).collect();
    let q0_attain = (value(&opt) - q0v).abs();
    let mut q0_excess = f64::NEG_INFINITY;
    for _ in 0..spec.identity.sup_family {
        let p: Vec<f64> = opt.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        q0_excess = q0_excess.max(value(&p) - q0v);
    }

    // Richardson order of the time quadrature of [H, J]
    let j_fn = TestFunction::random(spec.horizon, &mut rng);
    let mut quad_values = Vec::new();
    for &k in &spec.identity.quadrature_ladder {
        let tk = FieldGrid::uniform_times(spec.horizon, k);
        let hk = spec.control.grid(d, m, &tk)?;
        let jk = j_fn.grid(d, m, &tk)?;
        quad_values.push(scalar_product(&hk, &jk, &dc, quad)?);
    }
    let quad_diffs: Vec<f64> = quad_values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let quad_orders: Vec<f64> = quad_diffs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let quad_exact = quad_diffs.iter().all(|&e| e <= 1e-14 * quad_values[0].abs().max(1.0));
    let quad_min = quad_orders.iter().copied().fold(f64::INFINITY, f64::min);

    let checks = [
        ("mode_decay", decay < th.mode_decay_tol),
        ("solver_order", !orders.is_empty() && min_order >= th.order_min),
        ("round_trip", round_trip < th.round_trip_tol),
        ("ell_identity", ell_dev < th.identity_rel_tol),
        ("sup_attained", attain < th.sup_tol),
        ("sup_bound", sup_excess <= th.sup_tol),
        ("q0_sup", q0_attain < th.q0_sup_tol && q0_excess <= th.q0_sup_tol),
        ("quadrature_order", quad_exact || (!quad_orders.is_empty() && quad_min >= th.order_min)),
    ];
    let pass = checks.iter().all(|c| c.1);
    let statistics = json!({
        "grid": {"m": m, "slices": spec.grid.slices},
        "quadrature": spec.identity.quadrature,
        "mode_decay_max_error": decay,
        "solver_ladder": ladder,
        "solver_orders": orders,
        "round_trip_rel_l2": round_trip,
        "ell_identity_max_rel": ell_dev,
        "h_h": hh,
        "q_dyn": qd,
        "sup_attainment_rel": attain,
        "sup_family_max_excess": sup_excess,
        "q0": q0v,
        "q0_attainment": q0_attain,
        "q0_family_max_excess": q0_excess,
        "quadrature_ladder": spec.identity.quadrature_ladder,
        "quadrature_values": quad_values,
        "quadrature_orders": quad_orders,
        "checks": checks.iter().map(|(k, v)| json!({"name": k, "pass": v})).collect::<Vec<_>>(),
    });
    Ok(Report::new(Verdict::from_bool(pass), statistics))
}
