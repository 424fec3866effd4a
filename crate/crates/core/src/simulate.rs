//! Exact continuous-time simulation of `L_n = n² L_ex + L_r` and of the
//! tilted, time-inhomogeneous dynamics `L^H_{n,t}`.
//!
//! Both are simulated by uniformization: a single Poisson clock with a
//! constant dominating rate proposes either an exchange across a uniformly
//! chosen ordered bond or a flip at a uniformly chosen site. The proposal is
//! accepted with probability `(true rate at the proposal time) / (bound)`.
//! The tilt factors are bounded uniformly in time because `H` is stored as
//! a piecewise-linear interpolation between time slices, whose extrema are
//! attained at the slices.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::lattice::{flip_rate, Configuration, Event, Torus};
use crate::model::{DerivedConstants, ModelParams, ScalingParams};
use crate::rng::{self, Purpose};

/// A space-time function sampled on lattice sites at a strictly increasing
/// list of times, linearly interpolated in between and held constant
/// outside `[t_0, t_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    volume: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn new(volume: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || values.len() != times.len() * volume {
            return Err(Error::GridMismatch("lattice field values do not match times x volume"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("lattice field times must increase strictly"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::GridMismatch("lattice field values must be finite"));
        }
        Ok(Self { volume, times, values })
    }

    /// A time-independent field.
    pub fn stationary(values: Vec<f64>) -> Self {
        Self { volume: values.len(), times: alloc::vec![0.0], values }
    }

    pub fn zeros(volume: usize) -> Self {
        Self::stationary(alloc::vec![0.0; volume])
    }

    pub fn from_fn(torus: &Torus, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = torus.side() as f64;
        let values = (0..torus.volume())
            .map(|x| {
                let u: Vec<f64> = torus.coords(x).iter().map(|&c| c as f64 / n).collect();
                f(&u)
            })
            .collect();
        Self::stationary(values)
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> usize {
        self.times.len()
    }

    pub fn is_stationary(&self) -> bool {
        self.times.len() == 1
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.volume..(k + 1) * self.volume]
    }

    /// Index `k` with `t_k <= t < t_{k+1}`, starting the search from `hint`.
    #[inline]
    pub fn locate(&self, t: f64, hint: usize) -> usize {
        let last = self.times.len() - 1;
        let mut k = hint.min(last);
        while k < last && t >= self.times[k + 1] {
            k += 1;
        }
        while k > 0 && t < self.times[k] {
            k -= 1;
        }
        k
    }

    /// Start time of slice interval `k`.
    #[inline]
    pub fn slice_start(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// End of slice interval `k`, infinite for the last slice.
    #[inline]
    pub fn slice_end(&self, k: usize) -> f64 {
        self.times.get(k + 1).copied().unwrap_or(f64::INFINITY)
    }

    /// Time derivative at site `x` on interval `k`.
    #[inline]
    pub fn slope(&self, k: usize, x: usize) -> f64 {
        if k + 1 < self.times.len() {
            let h = self.times[k + 1] - self.times[k];
            (self.values[(k + 1) * self.volume + x] - self.values[k * self.volume + x]) / h
        } else {
            0.0
        }
    }

    /// Value at site `x`, time `t`, where `k = locate(t, _)`.
    #[inline]
    pub fn value(&self, k: usize, x: usize, t: f64) -> f64 {
        let base = self.values[k * self.volume + x];
        if k + 1 < self.times.len() {
            let dt = (t - self.times[k]).max(0.0);
            base + self.slope(k, x) * dt
        } else {
            base
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let k = self.locate(t, 0);
        (0..self.volume).map(|x| self.value(k, x, t)).collect()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
    }

    /// `max_{t, x, i} |H_t(x+e_i) - H_t(x)|`.
    pub fn sup_bond_diff(&self, torus: &Torus) -> f64 {
        let mut m = 0.0f64;
        for k in 0..self.slices() {
            let s = self.slice(k);
            for b in 0..torus.bond_count() {
                let (x, y) = torus.bond(b);
                m = m.max(libm::fabs(s[y] - s[x]));
            }
        }
        m
    }

    pub fn sup_abs_slope(&self) -> f64 {
        let mut m = 0.0f64;
        for k in 0..self.slices().saturating_sub(1) {
            for x in 0..self.volume {
                m = m.max(libm::fabs(self.slope(k, x)));
            }
        }
        m
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// The control `H` entering the tilted rates.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltControl {
    pub h: LatticeField,
    pub enabled: bool,
}

impl TiltControl {
    pub fn off(volume: usize) -> Self {
        Self { h: LatticeField::zeros(volume), enabled: false }
    }

    pub fn on(h: LatticeField) -> Self {
        Self { h, enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scaling: ScalingParams,
    pub params: ModelParams,
    pub horizon: f64,
    pub seed: u64,
    /// Replica index selecting the random stream.
    pub stream: u64,
    pub sample_times: Vec<f64>,
    pub glauber_enabled: bool,
    pub record_snapshots: bool,
}

impl SimConfig {
    pub fn new(scaling: ScalingParams, params: ModelParams, horizon: f64) -> Self {
        Self {
            scaling,
            params,
            horizon,
            seed: 0,
            stream: 0,
            sample_times: alloc::vec![horizon],
            glauber_enabled: true,
            record_snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig("horizon must be positive"));
        }
        if self.sample_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("sample times must increase strictly"));
        }
        if self.sample_times.iter().any(|&t| !(0.0..=self.horizon).contains(&t)) {
            return Err(Error::InvalidConfig("sample times must lie in [0, T]"));
        }
        Ok(())
    }

    /// Evenly spaced sample times `0, T/s, ..., T`.
    pub fn even_samples(&mut self, count: usize) {
        self.sample_times = (0..=count).map(|j| self.horizon * j as f64 / count as f64).collect();
    }
}

/// Outcome of a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_times: Vec<f64>,
    pub particle_counts: Vec<usize>,
    pub snapshots: Vec<Configuration>,
    pub event_count: u64,
    pub exchange_count: u64,
    pub flip_count: u64,
    pub proposal_count: u64,
    pub final_config: Configuration,
}

/// Hooks called by [`run`]. Every effective event is reported before it is
/// applied, with the pre-jump configuration.
pub trait Observer {
    fn start(&mut self, _t: f64, _cfg: &Configuration) -> Result<()> {
        Ok(())
    }

    fn before_event(&mut self, _t: f64, _event: &Event, _cfg: &Configuration) -> Result<()> {
        Ok(())
    }

    fn sample(&mut self, _index: usize, _t: f64, _cfg: &Configuration) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, _t: f64, _cfg: &Configuration) -> Result<()> {
        Ok(())
    }
}

/// Product Bernoulli measure `ν_ρ`.
pub fn sample_product_measure<R: Rng + ?Sized>(rho: f64, volume: usize, rng: &mut R) -> Result<Configuration> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(rho));
    }
    let mut cfg = Configuration::empty(volume);
    for x in 0..volume {
        if rng.random::<f64>() < rho {
            cfg.flip(x);
        }
    }
    Ok(cfg)
}

/// Site marginals `ρ* + (a_n/n^d) φ(x/n)` of `ν_{φ,ρ*}`.
pub fn tilted_marginals(phi: &[f64], sc: &ScalingParams, dc: &DerivedConstants) -> Result<Vec<f64>> {
    let eps = sc.tilt_strength();
    phi.iter()
        .enumerate()
        .map(|(site, &f)| {
            let prob = dc.rho_star + eps * f;
            if prob > 0.0 && prob < 1.0 {
                Ok(prob)
            } else {
                Err(Error::MarginalOutOfRange { site, prob })
            }
        })
        .collect()
}

/// Sample `ν_{φ,ρ*}` given `φ` on lattice sites.
pub fn sample_tilted_initial<R: Rng + ?Sized>(
    phi: &[f64],
    sc: &ScalingParams,
    dc: &DerivedConstants,
    rng: &mut R,
) -> Result<Configuration> {
    let marginals = tilted_marginals(phi, sc, dc)?;
    let mut cfg = Configuration::empty(marginals.len());
    for (x, p) in marginals.iter().enumerate() {
        if rng.random::<f64>() < *p {
            cfg.flip(x);
        }
    }
    Ok(cfg)
}

/// `log dν_ρ / dν_marg (η)` for product measures.
pub fn log_density_ratio(cfg: &Configuration, marginals: &[f64], rho: f64) -> f64 {
    let mut acc = crate::sum::KahanSum::default();
    for (x, &p) in marginals.iter().enumerate() {
        acc.add(if cfg.get(x) {
            libm::log(rho / p)
        } else {
            libm::log((1.0 - rho) / (1.0 - p))
        });
    }
    acc.value()
}

/// Expected number of effective events on `[0, T]`, for budgeting:
/// `T (d n^{d+2} 2χ + n^d c̄)`.
pub fn event_count_estimate(sim: &SimConfig) -> u64 {
    let d = sim.scaling.d as f64;
    let n = sim.scaling.n as f64;
    let vol = libm::pow(n, d);
    let rho = crate::model::solve_rho_star(&sim.params).unwrap_or(0.5);
    let exchanges = d * vol * n * n * 2.0 * rho * (1.0 - rho);
    let flips = if sim.glauber_enabled { vol * sim.params.max_flip_rate() } else { 0.0 };
    libm::round(sim.horizon.max(0.0) * (exchanges + flips)) as u64
}

/// Simulate the chain on `[0, T]` from `cfg0`.
pub fn run(
    torus: &Torus,
    cfg0: Configuration,
    sim: &SimConfig,
    tilt: &TiltControl,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    sim.validate()?;
    if torus.dim() != sim.scaling.d || torus.side() != sim.scaling.n || cfg0.len() != torus.volume() {
        return Err(Error::InvalidConfig("configuration, torus and scaling disagree"));
    }
    let tilted = tilt.enabled;
    if tilted && tilt.h.volume() != torus.volume() {
        return Err(Error::InvalidConfig("tilt field does not live on this torus"));
    }

    let mut rng = rng::stream(sim.seed, sim.stream, Purpose::Dynamics);
    let p = &sim.params;
    let n = torus.side() as f64;
    let n2 = n * n;
    let eps = sim.scaling.tilt_strength();
    let h = &tilt.h;

    let (ex_bound, fl_bound) = if tilted {
        (libm::exp(eps * h.sup_bond_diff(torus)), libm::exp(eps * h.sup_abs()))
    } else {
        (1.0, 1.0)
    };
    let bond_rate = n2 * ex_bound;
    let c_bar = p.max_flip_rate();
    let site_bound = c_bar * fl_bound;
    let lambda_ex = bond_rate * torus.bond_count() as f64;
    let lambda_fl = if sim.glauber_enabled { site_bound * torus.volume() as f64 } else { 0.0 };
    let total = lambda_ex + lambda_fl;
    let nb = torus.bond_count();
    let vol = torus.volume();
    let tol = 1.0 + 1e-12;

    let mut cfg = cfg0;
    let mut traj = Trajectory {
        sample_times: sim.sample_times.clone(),
        particle_counts: Vec::with_capacity(sim.sample_times.len()),
        snapshots: Vec::new(),
        event_count: 0,
        exchange_count: 0,
        flip_count: 0,
        proposal_count: 0,
        final_config: Configuration::empty(0),
    };

    for o in observers.iter_mut() {
        o.start(0.0, &cfg)?;
    }

    let mut t = 0.0f64;
    let mut next_sample = 0usize;
    let mut slice = 0usize;
    loop {
        let t_next = if total > 0.0 {
            t + rng.sample::<f64, _>(Exp1) / total
        } else {
            f64::INFINITY
        };
        let limit = t_next.min(sim.horizon);
        while next_sample < sim.sample_times.len() && sim.sample_times[next_sample] <= limit {
            let ts = sim.sample_times[next_sample];
            for o in observers.iter_mut() {
                o.sample(next_sample, ts, &cfg)?;
            }
            traj.particle_counts.push(cfg.particle_count());
            if sim.record_snapshots {
                traj.snapshots.push(cfg.clone());
            }
            next_sample += 1;
        }
        if t_next > sim.horizon {
            break;
        }
        t = t_next;
        traj.proposal_count += 1;

        let u = rng.random::<f64>() * total;
        let event = if u < lambda_ex {
            let b = ((u / bond_rate) as usize).min(nb - 1);
            let (x, y) = torus.bond(b);
            let (ox, oy) = (cfg.get(x), cfg.get(y));
            if ox == oy {
                continue;
            }
            if tilted && ex_bound > 1.0 {
                slice = h.locate(t, slice);
                let dh = h.value(slice, y, t) - h.value(slice, x, t);
                let sign = if ox { 1.0 } else { -1.0 };
                let factor = libm::exp(eps * sign * dh);
                if factor > ex_bound * tol {
                    return Err(Error::RateOverflow { factor, bound: ex_bound });
                }
                if rng.random::<f64>() * ex_bound >= factor {
                    continue;
                }
            }
            Event::Exchange { x, y, axis: b % torus.dim() }
        } else {
            let x = (((u - lambda_ex) / site_bound) as usize).min(vol - 1);
            let mut rate = flip_rate(&cfg, torus, x, p);
            if tilted && fl_bound > 1.0 {
                slice = h.locate(t, slice);
                let sign = if cfg.get(x) { -1.0 } else { 1.0 };
                let factor = libm::exp(eps * sign * h.value(slice, x, t));
                if factor > fl_bound * tol {
                    return Err(Error::RateOverflow { factor, bound: fl_bound });
                }
                rate *= factor;
            }
            if rate > site_bound * tol {
                return Err(Error::RateOverflow { factor: rate, bound: site_bound });
            }
            if rng.random::<f64>() * site_bound >= rate {
                continue;
            }
            Event::Flip { x }
        };

        for o in observers.iter_mut() {
            o.before_event(t, &event, &cfg)?;
        }
        cfg.apply(&event);
        traj.event_count += 1;
        match event {
            Event::Exchange { .. } => traj.exchange_count += 1,
            Event::Flip { .. } => traj.flip_count += 1,
        }
    }

    for o in observers.iter_mut() {
        o.finish(sim.horizon, &cfg)?;
    }
    traj.final_config = cfg;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn setup(n: usize) -> (Torus, SimConfig, DerivedConstants) {
        let sc = ScalingParams::with_exponent(1, n, 0.75).unwrap();
        let p = ModelParams::new(1.0, 1.0, 0.1).unwrap();
        let dc = DerivedConstants::new(&p).unwrap();
        (Torus::new(1, n).unwrap(), SimConfig::new(sc, p, 1.0), dc)
    }

    #[test]
    fn lattice_field_interpolation() {
        let f = LatticeField::new(2, alloc::vec![0.0, 1.0, 3.0], alloc::vec![0.0, 1.0, 2.0, 3.0, 4.0, 3.0]).unwrap();
        assert_eq!(f.locate(0.5, 0), 0);
        assert_eq!(f.locate(1.0, 0), 1);
        assert_eq!(f.locate(7.0, 0), 2);
        assert_eq!(f.locate(0.2, 2), 0);
        assert!((f.value(0, 0, 0.5) - 1.0).abs() < 1e-15);
        assert!((f.value(1, 1, 2.0) - 3.0).abs() < 1e-15);
        assert_eq!(f.value(2, 1, 9.0), 3.0);
        assert_eq!(f.sup_abs(), 4.0);
        assert_eq!(f.sup_abs_slope(), 2.0);
        assert!(LatticeField::new(2, alloc::vec![0.0, 0.0], alloc::vec![0.0; 4]).is_err());
        assert!(LatticeField::new(2, alloc::vec![0.0], alloc::vec![0.0; 3]).is_err());
    }

    #[test]
    fn product_measure_is_deterministic() {
        let a = sample_product_measure(0.3, 500, &mut stream(9, 0, Purpose::Initial)).unwrap();
        let b = sample_product_measure(0.3, 500, &mut stream(9, 0, Purpose::Initial)).unwrap();
        assert_eq!(a, b);
        let z = sample_product_measure(0.0, 500, &mut stream(9, 0, Purpose::Initial)).unwrap();
        assert_eq!(z.particle_count(), 0);
        assert!(sample_product_measure(1.5, 5, &mut stream(9, 0, Purpose::Initial)).is_err());
    }

    #[test]
    fn product_measure_mean() {
        let vol = 1_000_000;
        let c = sample_product_measure(0.5, vol, &mut stream(1, 0, Purpose::Initial)).unwrap();
        let mean = c.particle_count() as f64 / vol as f64;
        assert!((mean - 0.5).abs() < 4.0 * 0.0005);
    }

    #[test]
    fn tilted_initial_cases() {
        let (torus, sim, dc) = setup(256);
        let sc = sim.scaling;
        let zero = alloc::vec![0.0; 256];
        let a = sample_tilted_initial(&zero, &sc, &dc, &mut stream(3, 0, Purpose::Initial)).unwrap();
        let b = sample_product_measure(dc.rho_star, 256, &mut stream(3, 0, Purpose::Initial)).unwrap();
        assert_eq!(a, b);

        let c = 0.8;
        let constant = alloc::vec![c; torus.volume()];
        let mut total = 0usize;
        let reps = 400;
        for r in 0..reps {
            total += sample_tilted_initial(&constant, &sc, &dc, &mut stream(3, r, Purpose::Initial))
                .unwrap()
                .particle_count();
        }
        let p = dc.rho_star + sc.tilt_strength() * c;
        let trials = (reps as usize * 256) as f64;
        let se = (p * (1.0 - p) / trials).sqrt();
        assert!((total as f64 / trials - p).abs() < 4.0 * se);

        let huge = alloc::vec![10.0; 256];
        assert!(matches!(
            sample_tilted_initial(&huge, &sc, &dc, &mut stream(3, 0, Purpose::Initial)),
            Err(Error::MarginalOutOfRange { .. })
        ));
    }

    #[test]
    fn exclusion_conserves_particles() {
        let (torus, mut sim, dc) = setup(64);
        sim.glauber_enabled = false;
        let cfg0 = sample_product_measure(dc.rho_star, 64, &mut stream(0, 0, Purpose::Initial)).unwrap();
        let traj = run(&torus, cfg0.clone(), &sim, &TiltControl::off(64), &mut []).unwrap();
        assert_eq!(traj.final_config.particle_count(), cfg0.particle_count());
        assert_eq!(traj.flip_count, 0);
        assert!(traj.event_count > 10_000);
    }

    #[test]
    fn zero_tilt_reproduces_untilted_run() {
        let (torus, mut sim, dc) = setup(32);
        sim.seed = 11;
        sim.even_samples(4);
        let cfg0 = sample_product_measure(dc.rho_star, 32, &mut stream(11, 0, Purpose::Initial)).unwrap();
        let plain = run(&torus, cfg0.clone(), &sim, &TiltControl::off(32), &mut []).unwrap();
        let zero = run(&torus, cfg0.clone(), &sim, &TiltControl::on(LatticeField::zeros(32)), &mut []).unwrap();
        assert_eq!(plain, zero);
        let again = run(&torus, cfg0, &sim, &TiltControl::off(32), &mut []).unwrap();
        assert_eq!(plain, again);
    }

    #[test]
    fn estimate_scales_with_horizon() {
        let (_, mut sim, _) = setup(64);
        let one = event_count_estimate(&sim);
        assert!(one as f64 > 64f64.powi(3) / 4.0 && (one as f64) < 4.0 * 64f64.powi(3));
        sim.horizon = 2.0;
        let two = event_count_estimate(&sim);
        assert!((two as f64 - 2.0 * one as f64).abs() <= 1.0);
        sim.horizon = 0.0;
        assert_eq!(event_count_estimate(&sim), 0);
    }

    #[test]
    fn rejects_bad_config() {
        let (torus, mut sim, _) = setup(16);
        sim.sample_times = alloc::vec![0.5, 0.2];
        assert!(run(&torus, Configuration::empty(16), &sim, &TiltControl::off(16), &mut []).is_err());
        sim.sample_times = alloc::vec![2.0];
        assert!(run(&torus, Configuration::empty(16), &sim, &TiltControl::off(16), &mut []).is_err());
        sim.sample_times = alloc::vec![1.0];
        assert!(run(&torus, Configuration::empty(15), &sim, &TiltControl::off(16), &mut []).is_err());
    }

    #[test]
    fn density_ratio_is_zero_without_tilt() {
        let c = Configuration::from_bits(&[true, false, true]);
        assert_eq!(log_density_ratio(&c, &[0.4, 0.4, 0.4], 0.4), 0.0);
        let r = log_density_ratio(&c, &[0.5, 0.5, 0.5], 0.4);
        let expect = 2.0 * (0.4f64 / 0.5).ln() + (0.6f64 / 0.5).ln();
        assert!((r - expect).abs() < 1e-14);
    }
}
