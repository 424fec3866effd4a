use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};
use rdmd_core::simulate::run as simulate;
use rdmd_core::{Configuration, ModelParams, ScalingParams, SimConfig, TiltControl, Torus};
use serde_json::json;

use crate::config::Spec;
use crate::manifest::{Report, Verdict};
use crate::pool::{run_replicas, stream_id};

const MAX_STATES: usize = 1 << 16;

/// Dense generator of the d = 1 chain on `n` sites, written directly from the
/// rates: every ordered bond `(x, x+1)` swaps occupations at rate `n²`, and
/// site `x` flips at rate `(a + (λ/2)(η_{x-1} + η_{x+1}))(1 - η_x) + b η_x`.
/// State `s` has `η_x` as bit `x`; `q[s][s']` is the rate `s → s'`.
pub fn generator_matrix(n: usize, p: &ModelParams, glauber: bool) -> Result<DMatrix<f64>> {
    if n < 2 || n >= usize::BITS as usize || (1usize << n) > MAX_STATES {
        bail!("generator oracle refuses n = {n}: state space exceeds 2^16");
    }
    let states = 1usize << n;
    let n2 = (n * n) as f64;
    let mut q = DMatrix::<f64>::zeros(states, states);
    let bit = |s: usize, x: usize| (s >> x) & 1;
    for s in 0..states {
        for x in 0..n {
            let y = (x + 1) % n;
            if bit(s, x) != bit(s, y) {
                let t = s ^ (1 << x) ^ (1 << y);
                q[(s, t)] += n2;
            }
        }
        if glauber {
            for x in 0..n {
                let left = bit(s, (x + n - 1) % n) as f64;
                let right = bit(s, (x + 1) % n) as f64;
                let rate = if bit(s, x) == 0 { p.a + p.lambda / 2.0 * (left + right) } else { p.b };
                q[(s, s ^ (1 << x))] += rate;
            }
        }
        let out: f64 = (0..states).filter(|&t| t != s).map(|t| q[(s, t)]).sum();
        q[(s, s)] = -out;
    }
    Ok(q)
}

/// Law at time `t` of the chain started from `start`.
pub fn exact_law(q: &DMatrix<f64>, start: usize, t: f64) -> DVector<f64> {
    let p = (q * t).exp();
    p.row(start).transpose()
}

fn state_of(cfg: &Configuration) -> usize {
    (0..cfg.len()).filter(|&x| cfg.get(x)).map(|x| 1usize << x).sum()
}

pub fn run(spec: &Spec) -> Result<Report> {
    let o = &spec.oracle;
    let p = spec.model.params()?;
    if spec.scaling.d != 1 {
        bail!("the generator oracle is defined for d = 1");
    }
    if !(o.horizon >= 0.0 && o.horizon.is_finite()) {
        bail!("oracle.horizon must be non-negative");
    }
    let n = o.n;
    let q = generator_matrix(n, &p, o.glauber)?;
    let start = o.initial.iter().enumerate().filter(|(_, &v)| v == 1).map(|(x, _)| 1usize << x).sum::<usize>();
    let states = 1usize << n;
    let exact = exact_law(&q, start, o.horizon);

    let mut counts = vec![0u64; states];
    if o.horizon == 0.0 {
        counts[start] = spec.replicas_u64();
    } else {
        let sc = match spec.scaling.a_n {
            Some(a) => ScalingParams::new(1, n, a)?,
            None => ScalingParams::with_exponent(1, n, spec.scaling.theta)?,
        };
        let torus = Torus::new(1, n)?;
        let mut sim = SimConfig::new(sc, p, o.horizon);
        sim.seed = spec.seed;
        sim.glauber_enabled = o.glauber;
        let cfg0 = Configuration::from_bits(&o.initial.iter().map(|&v| v == 1).collect::<Vec<_>>());
        let off = TiltControl::off(n);
        let finals = run_replicas(spec.replicas_u64(), |r| {
            let mut sim = sim.clone();
            sim.stream = stream_id(0, r);
            let traj = simulate(&torus, cfg0.clone(), &sim, &off, &mut [])?;
            Ok(state_of(&traj.final_config) as u32)
        })?;
        for s in finals {
            counts[s as usize] += 1;
        }
    }

    let total = spec.replicas as f64;
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let tv = 0.5 * empirical.iter().zip(exact.iter()).map(|(e, x)| (e - x).abs()).sum::<f64>();
    let pass_tv = tv < spec.thresholds.tv_max;

    let k0 = start.count_ones();
    let (sector_exact, sector_empirical) = if o.glauber {
        (None, None)
    } else {
        let off_exact: f64 = (0..states).filter(|s| s.count_ones() != k0).map(|s| exact[s].abs()).sum();
        let off_emp: u64 = (0..states).filter(|s| s.count_ones() != k0).map(|s| counts[s]).sum();
        (Some(off_exact), Some(off_emp))
    };
    let sector_ok = sector_empirical.is_none_or(|c| c == 0) && sector_exact.is_none_or(|m| m < 1e-12);
    let pass = pass_tv && sector_ok;

    let statistics = json!({
        "n": n,
        "states": states,
        "horizon": o.horizon,
        "glauber": o.glauber,
        "start_state": start,
        "total_variation": tv,
        "tv_max": spec.thresholds.tv_max,
        "exact": exact.iter().copied().collect::<Vec<_>>(),
        "counts": counts,
        "exact_mass_off_sector": sector_exact,
        "runs_off_sector": sector_empirical,
    });
    Ok(Report::new(Verdict::from_bool(pass), statistics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_zero() {
        let p = ModelParams::new(1.0, 2.0, 0.3).unwrap();
        let q = generator_matrix(3, &p, true).unwrap();
        for s in 0..8 {
            assert!(q.row(s).sum().abs() < 1e-12);
        }
        // empty state: three creations at rate a
        assert!((q[(0, 0)] + 3.0).abs() < 1e-12);
        // single particle at 0: two exchanges at n², one annihilation b, two creations next to it
        assert!((q[(1, 1)] + (2.0 * 9.0 + 2.0 + 2.0 * (1.0 + 0.15) + 0.0)).abs() < 1e-12);
        assert!(generator_matrix(17, &p, true).is_err());
    }

    #[test]
    fn exclusion_preserves_sectors() {
        let p = ModelParams::new(1.0, 1.0, 0.0).unwrap();
        let q = generator_matrix(4, &p, false).unwrap();
        let law = exact_law(&q, 0b0011, 0.3);
        for s in 0..16usize {
            if s.count_ones() != 2 {
                assert!(law[s].abs() < 1e-14);
            }
        }
        assert!((law.sum() - 1.0).abs() < 1e-12);
        // the sector is mixed towards uniform over its 6 states
        let uniform = exact_law(&q, 0b0011, 50.0);
        assert!((uniform[0b0101] - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn two_state_chain() {
        // n = 2 without exchange effect on symmetric states: from 00 only creations
        let p = ModelParams::new(1.0, 1.0, 0.0).unwrap();
        let q = generator_matrix(2, &p, true).unwrap();
        let law = exact_law(&q, 0, 0.7);
        // sites are independent two-state chains with rates a = b = 1
        let occupied = 0.5 * (1.0 - (-2.0f64 * 0.7).exp());
        assert!((law[0b11] - occupied * occupied).abs() < 1e-12);
    }
}
