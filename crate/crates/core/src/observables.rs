//! Path observables: the fluctuation field, the degree-one and degree-two
//! time integrals, and the exponential martingale `M_t^n(H)`.
//!
//! All observers update lattice sums in O(d) per event and resynchronise
//! against a full recomputation every [`RESYNC_EVERY`] events.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lattice::{flip_rate, Configuration, Event, Torus};
use crate::model::{ModelParams, ScalingParams};
use crate::simulate::{LatticeField, Observer};
use crate::sum::KahanSum;

pub const RESYNC_EVERY: u64 = 10_000;

/// Relative drift tolerated between incremental and recomputed sums.
pub const DRIFT_TOLERANCE: f64 = 1e-7;

/// `⟨μ^n, H⟩ = (1/a_n) Σ_x (η_x - ρ*) H(x/n)`.
pub fn fluctuation_field(cfg: &Configuration, h: &[f64], sc: &ScalingParams, rho_star: f64) -> f64 {
    let mut acc = KahanSum::default();
    for (x, &hx) in h.iter().enumerate() {
        acc.add((cfg.occ(x) - rho_star) * hx);
    }
    acc.value() / sc.a_n
}

/// `V(h) = Σ_x Σ_i η̄_x η̄_{x+e_i} h^i(x)`; `h[i]` is the field for axis `i`.
pub fn degree_two_field<H: AsRef<[f64]>>(cfg: &Configuration, torus: &Torus, h: &[H], rho_star: f64) -> f64 {
    let mut acc = KahanSum::default();
    for (i, hi) in h.iter().enumerate() {
        for (x, &w) in hi.as_ref().iter().enumerate() {
            let y = torus.step_up(x, i);
            acc.add((cfg.occ(x) - rho_star) * (cfg.occ(y) - rho_star) * w);
        }
    }
    acc.value()
}

/// Sites whose occupancy changes under `event`, with the change `δ`.
#[inline]
fn changes(event: &Event, cfg: &Configuration) -> ([(usize, f64); 2], usize) {
    match *event {
        Event::Flip { x } => ([(x, 1.0 - 2.0 * cfg.occ(x)), (0, 0.0)], 1),
        Event::Exchange { x, y, .. } => {
            let dx = cfg.occ(y) - cfg.occ(x);
            ([(x, dx), (y, -dx)], 2)
        }
    }
}

fn check_drift(incremental: f64, recomputed: f64, scale: f64) -> Result<()> {
    if libm::fabs(incremental - recomputed) > DRIFT_TOLERANCE * scale.max(1.0) {
        Err(Error::DriftDetected { incremental, recomputed })
    } else {
        Ok(())
    }
}

/// Incrementally maintained `Σ_x η̄_x f_t(x)` for a piecewise-linear-in-time
/// lattice field, stored as value at the slice start plus slope.
#[derive(Debug, Clone)]
struct DegreeOneSum<'a> {
    field: &'a LatticeField,
    rho: f64,
    slice: usize,
    base: f64,
    slope: f64,
}

impl<'a> DegreeOneSum<'a> {
    fn new(field: &'a LatticeField, rho: f64) -> Self {
        Self { field, rho, slice: 0, base: 0.0, slope: 0.0 }
    }

    fn compute(&self, cfg: &Configuration, slice: usize) -> (f64, f64, f64) {
        let f = self.field.slice(slice);
        let (mut b, mut s) = (KahanSum::default(), KahanSum::default());
        let mut scale = 0.0;
        for (x, &fx) in f.iter().enumerate() {
            let eb = cfg.occ(x) - self.rho;
            b.add(eb * fx);
            s.add(eb * self.field.slope(slice, x));
            scale += libm::fabs(fx);
        }
        (b.value(), s.value(), scale)
    }

    fn rebuild(&mut self, cfg: &Configuration, slice: usize) {
        let (b, s, _) = self.compute(cfg, slice);
        self.slice = slice;
        self.base = b;
        self.slope = s;
    }

    fn resync(&mut self, cfg: &Configuration) -> Result<()> {
        let (b, s, scale) = self.compute(cfg, self.slice);
        check_drift(self.base, b, scale)?;
        self.base = b;
        self.slope = s;
        Ok(())
    }

    #[inline]
    fn value(&self, t: f64) -> f64 {
        self.base + self.slope * (t - self.field.slice_start(self.slice))
    }

    #[inline]
    fn apply(&mut self, event: &Event, cfg: &Configuration) {
        let (ch, len) = changes(event, cfg);
        let f = self.field.slice(self.slice);
        for &(z, delta) in &ch[..len] {
            self.base += delta * f[z];
            self.slope += delta * self.field.slope(self.slice, z);
        }
    }
}

/// Incrementally maintained `Σ_x η̄_x η̄_{x+e_i} f_t(x)` for one axis `i`.
#[derive(Debug, Clone)]
struct DegreeTwoSum<'a> {
    field: &'a LatticeField,
    axis: usize,
    rho: f64,
    slice: usize,
    base: f64,
    slope: f64,
}

impl<'a> DegreeTwoSum<'a> {
    fn new(field: &'a LatticeField, axis: usize, rho: f64) -> Self {
        Self { field, axis, rho, slice: 0, base: 0.0, slope: 0.0 }
    }

    fn compute(&self, cfg: &Configuration, torus: &Torus, slice: usize) -> (f64, f64, f64) {
        let f = self.field.slice(slice);
        let (mut b, mut s) = (KahanSum::default(), KahanSum::default());
        let mut scale = 0.0;
        for (x, &fx) in f.iter().enumerate() {
            let y = torus.step_up(x, self.axis);
            let pair = (cfg.occ(x) - self.rho) * (cfg.occ(y) - self.rho);
            b.add(pair * fx);
            s.add(pair * self.field.slope(slice, x));
            scale += libm::fabs(fx);
        }
        (b.value(), s.value(), scale)
    }

    fn rebuild(&mut self, cfg: &Configuration, torus: &Torus, slice: usize) {
        let (b, s, _) = self.compute(cfg, torus, slice);
        self.slice = slice;
        self.base = b;
        self.slope = s;
    }

    fn resync(&mut self, cfg: &Configuration, torus: &Torus) -> Result<()> {
        let (b, s, scale) = self.compute(cfg, torus, self.slice);
        check_drift(self.base, b, scale)?;
        self.base = b;
        self.slope = s;
        Ok(())
    }

    #[inline]
    fn value(&self, t: f64) -> f64 {
        self.base + self.slope * (t - self.field.slice_start(self.slice))
    }

    fn apply(&mut self, event: &Event, cfg: &Configuration, torus: &Torus) {
        let (ch, len) = changes(event, cfg);
        // pair (x, x+e_i) is indexed by x
        let mut starts = [usize::MAX; 4];
        let mut m = 0;
        for &(z, _) in &ch[..len] {
            for s in [z, torus.step_down(z, self.axis)] {
                if !starts[..m].contains(&s) {
                    starts[m] = s;
                    m += 1;
                }
            }
        }
        let f = self.field.slice(self.slice);
        for &x in &starts[..m] {
            let y = torus.step_up(x, self.axis);
            let before = (cfg.occ(x) - self.rho) * (cfg.occ(y) - self.rho);
            let after = (cfg.occ_after(event, x) - self.rho) * (cfg.occ_after(event, y) - self.rho);
            let dp = after - before;
            self.base += dp * f[x];
            self.slope += dp * self.field.slope(self.slice, x);
        }
    }
}

/// Records `⟨μ_t^n, H_j⟩` at the sample times for a list of fields `H_j`.
pub struct FluctuationObserver<'a> {
    sums: Vec<DegreeOneSum<'a>>,
    a_n: f64,
    events: u64,
    /// `series[j][s]` is the value for field `j` at sample `s`.
    pub series: Vec<Vec<f64>>,
}

impl<'a> FluctuationObserver<'a> {
    pub fn new(fields: &[&'a LatticeField], sc: &ScalingParams, rho_star: f64) -> Self {
        Self {
            sums: fields.iter().map(|f| DegreeOneSum::new(f, rho_star)).collect(),
            a_n: sc.a_n,
            events: 0,
            series: vec![Vec::new(); fields.len()],
        }
    }

    fn sync(&mut self, t: f64, cfg: &Configuration) {
        for s in &mut self.sums {
            let k = s.field.locate(t, s.slice);
            if k != s.slice {
                s.rebuild(cfg, k);
            }
        }
    }
}

impl Observer for FluctuationObserver<'_> {
    fn start(&mut self, _t: f64, cfg: &Configuration) -> Result<()> {
        for s in &mut self.sums {
            s.rebuild(cfg, 0);
        }
        Ok(())
    }

    fn before_event(&mut self, t: f64, event: &Event, cfg: &Configuration) -> Result<()> {
        self.events += 1;
        if self.events % RESYNC_EVERY == 0 {
            for s in &mut self.sums {
                s.resync(cfg)?;
            }
        }
        self.sync(t, cfg);
        for s in &mut self.sums {
            s.apply(event, cfg);
        }
        Ok(())
    }

    fn sample(&mut self, _index: usize, t: f64, cfg: &Configuration) -> Result<()> {
        self.sync(t, cfg);
        for (s, out) in self.sums.iter().zip(self.series.iter_mut()) {
            out.push(s.value(t) / self.a_n);
        }
        Ok(())
    }
}

/// `φ1(z) = (e^z - 1)/z`.
#[inline]
pub(crate) fn phi1(z: f64) -> f64 {
    if libm::fabs(z) < 1e-5 {
        1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))
    } else {
        libm::expm1(z) / z
    }
}

/// `φ2(z) = (e^z - 1 - z)/z²`.
#[inline]
pub(crate) fn phi2(z: f64) -> f64 {
    if libm::fabs(z) < 1e-2 {
        0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0 + z * (1.0 / 720.0 + z / 5040.0))))
    } else {
        (libm::expm1(z) - z) / (z * z)
    }
}

/// `∫_0^h (e^{α + β s} - 1) ds`, accurate for small exponents.
#[inline]
fn exp_minus_one_integral(alpha: f64, beta: f64, h: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    if beta == 0.0 {
        return h * libm::expm1(alpha);
    }
    let z = beta * h;
    h * (libm::expm1(alpha) * phi1(z) + z * phi2(z))
}

/// Exact path-wise evaluation of
///
/// ```text
/// log M_t = (a_n²/n^d)[⟨μ_t,H_t⟩ - ⟨μ_0,H_0⟩ - ∫_0^t ⟨μ_s,∂_s H_s⟩ ds]
///           - ∫_0^t Σ_{x,i} n²(e^{Δ_ex} - 1) + Σ_x c_x (e^{Δ_flip} - 1) ds
/// ```
///
/// with `Δ_ex = (a_n/n^d)(η_x - η_{x+e_i})(H_s(x+e_i) - H_s(x))` and
/// `Δ_flip = (a_n/n^d)(1 - 2η_x) H_s(x)`.
///
/// The compensator is integrated lazily per term: every bond and flip term
/// remembers when it was last integrated and is brought up to date whenever
/// its state is about to change, at slice boundaries of `H`, and at queries.
/// Because `H` is linear in time within a slice, each term integrates in
/// closed form.
pub struct MartingaleAccumulator<'a> {
    torus: &'a Torus,
    h: &'a LatticeField,
    params: ModelParams,
    glauber: bool,
    eps: f64,
    a_n: f64,
    n2: f64,
    field: DegreeOneSum<'a>,
    generator: Option<DegreeOneSum<'a>>,
    initial_field: f64,
    slope_integral: KahanSum,
    generator_integral: KahanSum,
    compensator: KahanSum,
    since_site: Vec<f64>,
    since_bond: Vec<f64>,
    clock: f64,
    events: u64,
    /// `log M` at each sample time.
    pub log_m: Vec<f64>,
}

impl<'a> MartingaleAccumulator<'a> {
    pub fn new(
        torus: &'a Torus,
        h: &'a LatticeField,
        sc: &ScalingParams,
        params: ModelParams,
        rho_star: f64,
        glauber: bool,
    ) -> Result<Self> {
        if h.volume() != torus.volume() {
            return Err(Error::InvalidConfig("martingale field does not live on this torus"));
        }
        if h.times()[0] != 0.0 {
            return Err(Error::InvalidConfig("martingale field must start at t = 0"));
        }
        Ok(Self {
            torus,
            h,
            params,
            glauber,
            eps: sc.tilt_strength(),
            a_n: sc.a_n,
            n2: (torus.side() * torus.side()) as f64,
            field: DegreeOneSum::new(h, rho_star),
            generator: None,
            initial_field: 0.0,
            slope_integral: KahanSum::default(),
            generator_integral: KahanSum::default(),
            compensator: KahanSum::default(),
            since_site: vec![0.0; torus.volume()],
            since_bond: vec![0.0; torus.bond_count()],
            clock: 0.0,
            events: 0,
            log_m: Vec::new(),
        })
    }

    /// Also track `∫⟨μ_s, g_s⟩ ds` for `g = (Δ + F'(ρ*))H` sampled on the
    /// lattice at the same times as `H`; enables [`Self::ell`].
    pub fn with_generator_field(mut self, g: &'a LatticeField) -> Result<Self> {
        if g.times() != self.h.times() || g.volume() != self.h.volume() {
            return Err(Error::GridMismatch("generator field must share the slices of H"));
        }
        self.generator = Some(DegreeOneSum::new(g, self.field.rho));
        Ok(self)
    }

    #[inline]
    fn site_term(&self, x: usize, cfg: &Configuration, slice: usize, t1: f64, t2: f64) -> f64 {
        if !self.glauber {
            return 0.0;
        }
        let sign = 1.0 - 2.0 * cfg.occ(x);
        let alpha = self.eps * sign * self.h.value(slice, x, t1);
        let beta = self.eps * sign * self.h.slope(slice, x);
        flip_rate(cfg, self.torus, x, &self.params) * exp_minus_one_integral(alpha, beta, t2 - t1)
    }

    #[inline]
    fn bond_term(&self, b: usize, cfg: &Configuration, slice: usize, t1: f64, t2: f64) -> f64 {
        let (x, y) = self.torus.bond(b);
        let (ox, oy) = (cfg.occ(x), cfg.occ(y));
        if ox == oy {
            return 0.0;
        }
        let sign = ox - oy;
        let alpha = self.eps * sign * (self.h.value(slice, y, t1) - self.h.value(slice, x, t1));
        let beta = self.eps * sign * (self.h.slope(slice, y) - self.h.slope(slice, x));
        self.n2 * exp_minus_one_integral(alpha, beta, t2 - t1)
    }

    #[inline]
    fn touch_site(&mut self, x: usize, cfg: &Configuration, t: f64) {
        let v = self.site_term(x, cfg, self.field.slice, self.since_site[x], t);
        self.compensator.add(v);
        self.since_site[x] = t;
    }

    #[inline]
    fn touch_bond(&mut self, b: usize, cfg: &Configuration, t: f64) {
        let v = self.bond_term(b, cfg, self.field.slice, self.since_bond[b], t);
        self.compensator.add(v);
        self.since_bond[b] = t;
    }

    fn flush(&mut self, cfg: &Configuration, t: f64) {
        for x in 0..self.since_site.len() {
            self.touch_site(x, cfg, t);
        }
        for b in 0..self.since_bond.len() {
            self.touch_bond(b, cfg, t);
        }
    }

    /// Move the clock to `t` with the configuration frozen, crossing slice
    /// boundaries of `H` as needed.
    fn advance(&mut self, t: f64, cfg: &Configuration) {
        loop {
            let end = self.h.slice_end(self.field.slice);
            let stop = t.min(end);
            let dt = stop - self.clock;
            if dt > 0.0 {
                self.slope_integral.add(self.field.slope * dt);
                if let Some(g) = &self.generator {
                    let mid = 0.5 * (stop + self.clock);
                    self.generator_integral.add(g.value(mid) * dt);
                }
                self.clock = stop;
            }
            if t < end {
                break;
            }
            self.flush(cfg, end);
            let k = self.field.slice + 1;
            self.field.rebuild(cfg, k);
            if let Some(g) = &mut self.generator {
                g.rebuild(cfg, k);
            }
        }
    }

    /// `log M_t` at the current clock; brings every term up to date, O(n^d).
    pub fn log_m_at(&mut self, t: f64, cfg: &Configuration) -> f64 {
        self.advance(t, cfg);
        self.flush(cfg, t);
        self.current()
    }

    fn current(&self) -> f64 {
        let field = self.field.value(self.clock) - self.initial_field - self.slope_integral.value();
        self.eps * field - self.compensator.value()
    }

    /// `ℓ^n_t(μ^n, H) = ⟨μ_t,H_t⟩ - ⟨μ_0,H_0⟩ - ∫_0^t ⟨μ_s,(∂_s + Δ + F')H_s⟩ ds`
    /// at the current clock, when a generator field was supplied.
    pub fn ell(&self) -> Option<f64> {
        self.generator.as_ref().map(|_| {
            (self.field.value(self.clock) - self.initial_field - self.slope_integral.value() - self.generator_integral.value())
                / self.a_n
        })
    }

    /// Path-wise bound on `|log M_t|` from the exact exponent formulas.
    pub fn pathwise_bound(&self, t: f64) -> f64 {
        let vol = self.torus.volume() as f64;
        let sup_h = self.h.sup_abs();
        let sup_dh = self.h.sup_abs_slope();
        let delta = self.h.sup_bond_diff(self.torus);
        let field = self.eps * vol * (2.0 * sup_h + t * sup_dh);
        let bonds = self.torus.bond_count() as f64 * self.n2 * libm::expm1(self.eps * delta);
        let flips = if self.glauber {
            vol * self.params.max_flip_rate() * libm::expm1(self.eps * sup_h)
        } else {
            0.0
        };
        field + t * (bonds + flips)
    }

    fn affected(&mut self, event: &Event, cfg: &Configuration, t: f64) {
        let d = self.torus.dim();
        let (ch, len) = changes(event, cfg);
        for &(z, _) in &ch[..len] {
            self.touch_site(z, cfg, t);
            for j in 0..2 * d {
                let y = self.torus.neighbors(z)[j] as usize;
                self.touch_site(y, cfg, t);
            }
            for i in 0..d {
                self.touch_bond(z * d + i, cfg, t);
                self.touch_bond(self.torus.step_down(z, i) * d + i, cfg, t);
            }
        }
    }
}

impl Observer for MartingaleAccumulator<'_> {
    fn start(&mut self, t: f64, cfg: &Configuration) -> Result<()> {
        self.field.rebuild(cfg, self.h.locate(t, 0));
        if let Some(g) = &mut self.generator {
            g.rebuild(cfg, 0);
        }
        self.initial_field = self.field.value(t);
        self.clock = t;
        self.since_site.iter_mut().for_each(|s| *s = t);
        self.since_bond.iter_mut().for_each(|s| *s = t);
        Ok(())
    }

    fn before_event(&mut self, t: f64, event: &Event, cfg: &Configuration) -> Result<()> {
        self.events += 1;
        if self.events % RESYNC_EVERY == 0 {
            self.field.resync(cfg)?;
            if let Some(g) = &mut self.generator {
                g.resync(cfg)?;
            }
        }
        self.advance(t, cfg);
        self.affected(event, cfg, t);
        self.field.apply(event, cfg);
        if let Some(g) = &mut self.generator {
            g.apply(event, cfg);
        }
        Ok(())
    }

    fn sample(&mut self, _index: usize, t: f64, cfg: &Configuration) -> Result<()> {
        let v = self.log_m_at(t, cfg);
        self.log_m.push(v);
        Ok(())
    }

    fn finish(&mut self, t: f64, cfg: &Configuration) -> Result<()> {
        let v = self.log_m_at(t, cfg);
        let bound = self.pathwise_bound(t);
        if libm::fabs(v) > bound * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::BoundViolated { value: v, bound });
        }
        Ok(())
    }
}

/// Running time integrals
///
/// ```text
/// I₁(t) = ∫_0^t (1/r_n) Σ_x η̄_x(s) H_s(x/n) ds
/// I₂(t) = ∫_0^t (1/a_n) Σ_x η̄_x(s) η̄_{x+e_i}(s) H_s(x/n) ds   (per axis i)
/// ```
///
/// and their running suprema in absolute value. Integrands are linear in
/// time between events, so integrals and suprema are exact.
pub struct BgDiagnostics<'a> {
    torus: &'a Torus,
    r_n: f64,
    a_n: f64,
    one: DegreeOneSum<'a>,
    two: Vec<DegreeTwoSum<'a>>,
    clock: f64,
    events: u64,
    pub i1: f64,
    pub i2: Vec<f64>,
    pub sup_i1: f64,
    pub sup_i2: Vec<f64>,
}

impl<'a> BgDiagnostics<'a> {
    /// `r_n` must exceed `a_n`.
    pub fn new(torus: &'a Torus, h: &'a LatticeField, sc: &ScalingParams, rho_star: f64, r_n: f64) -> Result<Self> {
        if !(r_n > sc.a_n) {
            return Err(Error::InvalidConfig("degree-one normalisation r_n must exceed a_n"));
        }
        if h.volume() != torus.volume() || h.times()[0] != 0.0 {
            return Err(Error::InvalidConfig("diagnostic field must live on this torus from t = 0"));
        }
        let d = torus.dim();
        Ok(Self {
            torus,
            r_n,
            a_n: sc.a_n,
            one: DegreeOneSum::new(h, rho_star),
            two: (0..d).map(|i| DegreeTwoSum::new(h, i, rho_star)).collect(),
            clock: 0.0,
            events: 0,
            i1: 0.0,
            i2: vec![0.0; d],
            sup_i1: 0.0,
            sup_i2: vec![0.0; d],
        })
    }

    /// Default `r_n = a_n n^{0.1}`.
    pub fn default_r_n(sc: &ScalingParams) -> f64 {
        sc.a_n * libm::pow(sc.n as f64, 0.1)
    }

    /// `max_i sup_t |I₂^i(t)|`.
    pub fn sup_i2_max(&self) -> f64 {
        self.sup_i2.iter().fold(0.0, |m, v| m.max(*v))
    }

    /// Integrate `g(s) = g0 + slope (s - t1)` over `[t1, t1 + h]`, updating
    /// the integral and its running supremum.
    fn segment(integral: &mut f64, sup: &mut f64, g0: f64, slope: f64, h: f64) {
        if slope != 0.0 {
            let s = -g0 / slope;
            if s > 0.0 && s < h {
                let v = *integral + g0 * s + 0.5 * slope * s * s;
                *sup = sup.max(libm::fabs(v));
            }
        }
        *integral += g0 * h + 0.5 * slope * h * h;
        *sup = sup.max(libm::fabs(*integral));
    }

    fn advance(&mut self, t: f64, cfg: &Configuration) {
        loop {
            let end = self.one.field.slice_end(self.one.slice);
            let stop = t.min(end);
            let h = stop - self.clock;
            if h > 0.0 {
                let g0 = self.one.value(self.clock) / self.r_n;
                Self::segment(&mut self.i1, &mut self.sup_i1, g0, self.one.slope / self.r_n, h);
                for (i, two) in self.two.iter().enumerate() {
                    let g0 = two.value(self.clock) / self.a_n;
                    Self::segment(&mut self.i2[i], &mut self.sup_i2[i], g0, two.slope / self.a_n, h);
                }
                self.clock = stop;
            }
            if t < end {
                break;
            }
            let k = self.one.slice + 1;
            self.one.rebuild(cfg, k);
            for two in &mut self.two {
                two.rebuild(cfg, self.torus, k);
            }
        }
    }
}

impl Observer for BgDiagnostics<'_> {
    fn start(&mut self, t: f64, cfg: &Configuration) -> Result<()> {
        self.one.rebuild(cfg, 0);
        for two in &mut self.two {
            two.rebuild(cfg, self.torus, 0);
        }
        self.clock = t;
        Ok(())
    }

    fn before_event(&mut self, t: f64, event: &Event, cfg: &Configuration) -> Result<()> {
        self.events += 1;
        if self.events % RESYNC_EVERY == 0 {
            self.one.resync(cfg)?;
            for two in &mut self.two {
                two.resync(cfg, self.torus)?;
            }
        }
        self.advance(t, cfg);
        self.one.apply(event, cfg);
        for two in &mut self.two {
            two.apply(event, cfg, self.torus);
        }
        Ok(())
    }

    fn sample(&mut self, _index: usize, t: f64, cfg: &Configuration) -> Result<()> {
        self.advance(t, cfg);
        Ok(())
    }

    fn finish(&mut self, t: f64, cfg: &Configuration) -> Result<()> {
        self.advance(t, cfg);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DerivedConstants;
    use crate::rng::{stream, Purpose};
    use crate::simulate::{run, sample_product_measure, SimConfig, TiltControl};
    use core::f64::consts::PI;

    #[test]
    fn field_examples() {
        let sc = ScalingParams::new(1, 4, 2.5).unwrap();
        let sc2 = ScalingParams { a_n: 2.0, ..sc };
        let zeros = Configuration::empty(4);
        assert!((fluctuation_field(&zeros, &[1.0; 4], &sc, 0.3) - (-4.0 * 0.3 / 2.5)).abs() < 1e-15);
        let alt = Configuration::from_bits(&[true, false, true, false]);
        assert_eq!(fluctuation_field(&alt, &[1.0; 4], &sc2, 0.5), 0.0);
    }

    #[test]
    fn field_matches_direct_sum() {
        let sc = ScalingParams::new(2, 7, 10.0).unwrap();
        let cfg = sample_product_measure(0.4, 49, &mut stream(2, 0, Purpose::Initial)).unwrap();
        let h: Vec<f64> = (0..49).map(|x| ((x * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let mut direct = 0.0;
        for x in 0..49 {
            direct += (if cfg.get(x) { 1.0 } else { 0.0 } - 0.37) * h[x];
        }
        assert!((fluctuation_field(&cfg, &h, &sc, 0.37) - direct / 10.0).abs() < 1e-12);
    }

    #[test]
    fn degree_two_examples() {
        let t = Torus::new(2, 3).unwrap();
        let ones = Configuration::full(9);
        let h = [vec![1.0; 9], vec![1.0; 9]];
        let v = degree_two_field(&ones, &t, &h, 0.3);
        assert!((v - 2.0 * 9.0 * 0.7 * 0.7).abs() < 1e-12);
        let t1 = Torus::new(1, 8).unwrap();
        let alt = Configuration::from_bits(&[true, false, true, false, true, false, true, false]);
        assert!((degree_two_field(&alt, &t1, &[vec![1.0; 8]], 0.5) + 2.0).abs() < 1e-15);
        assert_eq!(degree_two_field(&alt, &t1, &[vec![0.0; 8]], 0.5), 0.0);
    }

    #[test]
    fn phi_functions_continuous() {
        for z in [-2e-2, -1e-2, -1e-5, 0.0, 1e-5, 1e-2, 3e-2] {
            let e = libm::expm1(z);
            if z != 0.0 {
                assert!((phi1(z) - e / z).abs() < 1e-12);
            }
            assert!((phi1(z * 1.0000001) - phi1(z)).abs() < 1e-8);
            assert!((phi2(z * 1.0000001) - phi2(z)).abs() < 1e-8);
        }
        // ∫_0^1 (e^{0.3 + 0.2 s} - 1) ds
        let exact = ((0.5f64).exp() - (0.3f64).exp()) / 0.2 - 1.0;
        assert!((exp_minus_one_integral(0.3, 0.2, 1.0) - exact).abs() < 1e-14);
    }

    fn small_setup(n: usize) -> (Torus, SimConfig, DerivedConstants) {
        let sc = ScalingParams::with_exponent(1, n, 0.75).unwrap();
        let p = ModelParams::new(1.0, 1.0, 0.1).unwrap();
        let dc = DerivedConstants::new(&p).unwrap();
        let mut sim = SimConfig::new(sc, p, 0.3);
        sim.even_samples(3);
        (Torus::new(1, n).unwrap(), sim, dc)
    }

    #[test]
    fn zero_field_gives_zero_log_m() {
        let (torus, sim, dc) = small_setup(16);
        let h = LatticeField::zeros(16);
        let mut m = MartingaleAccumulator::new(&torus, &h, &sim.scaling, sim.params, dc.rho_star, true).unwrap();
        let cfg0 = sample_product_measure(dc.rho_star, 16, &mut stream(0, 0, Purpose::Initial)).unwrap();
        run(&torus, cfg0, &sim, &TiltControl::off(16), &mut [&mut m]).unwrap();
        assert!(m.log_m.iter().all(|v| *v == 0.0));
        assert_eq!(m.log_m.len(), 4);
    }

    /// Independent route: log M = Σ_jumps ΔX - ∫ Σ_rates (e^{ΔX} - 1),
    /// integrating the compensator by recomputing the full lattice sum on a
    /// fine midpoint grid between events.
    struct BruteForce<'a> {
        torus: &'a Torus,
        h: &'a LatticeField,
        p: ModelParams,
        eps: f64,
        rho: f64,
        jumps: f64,
        comp: f64,
        clock: f64,
    }

    impl BruteForce<'_> {
        fn rate_sum(&self, cfg: &Configuration, t: f64) -> f64 {
            let k = self.h.locate(t, 0);
            let n2 = (self.torus.side() * self.torus.side()) as f64;
            let mut s = 0.0;
            for b in 0..self.torus.bond_count() {
                let (x, y) = self.torus.bond(b);
                let d = self.eps * (cfg.occ(x) - cfg.occ(y)) * (self.h.value(k, y, t) - self.h.value(k, x, t));
                s += n2 * (d.exp() - 1.0);
            }
            for x in 0..self.torus.volume() {
                let d = self.eps * (1.0 - 2.0 * cfg.occ(x)) * self.h.value(k, x, t);
                s += flip_rate(cfg, self.torus, x, &self.p) * (d.exp() - 1.0);
            }
            s
        }

        fn advance(&mut self, t: f64, cfg: &Configuration) {
            let steps = 64;
            let h = (t - self.clock) / steps as f64;
            for j in 0..steps {
                let s = self.clock + (j as f64 + 0.5) * h;
                self.comp += self.rate_sum(cfg, s) * h;
            }
            self.clock = t;
        }

        fn x_value(&self, cfg: &Configuration, t: f64) -> f64 {
            let k = self.h.locate(t, 0);
            (0..cfg.len()).map(|x| self.eps * (cfg.occ(x) - self.rho) * self.h.value(k, x, t)).sum()
        }
    }

    impl Observer for BruteForce<'_> {
        fn before_event(&mut self, t: f64, event: &Event, cfg: &Configuration) -> Result<()> {
            self.advance(t, cfg);
            let mut after = cfg.clone();
            after.apply(event);
            self.jumps += self.x_value(&after, t) - self.x_value(cfg, t);
            Ok(())
        }

        fn finish(&mut self, t: f64, cfg: &Configuration) -> Result<()> {
            self.advance(t, cfg);
            Ok(())
        }
    }

    #[test]
    fn matches_jump_compensator_form() {
        let (torus, mut sim, dc) = small_setup(8);
        sim.horizon = 0.05;
        sim.sample_times = vec![0.05];
        let n = 8;
        // H(t, u) = (1 + 2t) cos(2πu) + 0.5 sin(2πu) t on 4 slices
        let times = vec![0.0, 0.02, 0.04, 0.06];
        let mut values = Vec::new();
        for &t in &times {
            for x in 0..n {
                let u = x as f64 / n as f64;
                values.push(3.0 * ((1.0 + 2.0 * t) * (2.0 * PI * u).cos() + 0.5 * t * (2.0 * PI * u).sin()));
            }
        }
        let h = LatticeField::new(n, times, values).unwrap();
        for replica in 0..3 {
            sim.stream = replica;
            let cfg0 = sample_product_measure(dc.rho_star, n, &mut stream(0, replica, Purpose::Initial)).unwrap();
            let mut m = MartingaleAccumulator::new(&torus, &h, &sim.scaling, sim.params, dc.rho_star, true).unwrap();
            let mut bf = BruteForce {
                torus: &torus,
                h: &h,
                p: sim.params,
                eps: sim.scaling.tilt_strength(),
                rho: dc.rho_star,
                jumps: 0.0,
                comp: 0.0,
                clock: 0.0,
            };
            run(&torus, cfg0, &sim, &TiltControl::off(n), &mut [&mut m, &mut bf]).unwrap();
            let brute = bf.jumps - bf.comp;
            assert!((m.log_m[0] - brute).abs() < 1e-6 * (1.0 + brute.abs()), "{} vs {}", m.log_m[0], brute);
        }
    }

    #[test]
    fn static_field_exact_vs_sliced() {
        // A time-independent H stored on one slice and on many identical
        // slices must give the same log M (exact vs piecewise integration).
        let (torus, sim, dc) = small_setup(16);
        let vals: Vec<f64> = (0..16).map(|x| (2.0 * PI * x as f64 / 16.0).cos()).collect();
        let one = LatticeField::stationary(vals.clone());
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.02).collect();
        let many = LatticeField::new(16, times.clone(), vals.repeat(times.len())).unwrap();
        let cfg0 = sample_product_measure(dc.rho_star, 16, &mut stream(4, 0, Purpose::Initial)).unwrap();
        let mut a = MartingaleAccumulator::new(&torus, &one, &sim.scaling, sim.params, dc.rho_star, true).unwrap();
        let mut b = MartingaleAccumulator::new(&torus, &many, &sim.scaling, sim.params, dc.rho_star, true).unwrap();
        run(&torus, cfg0, &sim, &TiltControl::off(16), &mut [&mut a, &mut b]).unwrap();
        for (x, y) in a.log_m.iter().zip(&b.log_m) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn incremental_field_tracks_recomputation() {
        let (torus, mut sim, dc) = small_setup(32);
        sim.even_samples(50);
        let h = LatticeField::from_fn(&torus, |u| (2.0 * PI * u[0]).sin() + 0.3);
        let mut obs = FluctuationObserver::new(&[&h], &sim.scaling, dc.rho_star);
        sim.record_snapshots = true;
        let cfg0 = sample_product_measure(dc.rho_star, 32, &mut stream(8, 0, Purpose::Initial)).unwrap();
        let traj = run(&torus, cfg0, &sim, &TiltControl::off(32), &mut [&mut obs]).unwrap();
        for (v, snap) in obs.series[0].iter().zip(&traj.snapshots) {
            let direct = fluctuation_field(snap, h.slice(0), &sim.scaling, dc.rho_star);
            assert!((v - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn single_event_field_jumps() {
        let sc = ScalingParams::new(1, 6, 3.0).unwrap();
        let h = LatticeField::stationary(vec![0.1, -0.4, 0.9, 1.3, -2.0, 0.5]);
        let mut s = DegreeOneSum::new(&h, 0.4);
        let mut cfg = Configuration::from_bits(&[true, false, false, true, true, false]);
        s.rebuild(&cfg, 0);
        let flip = Event::Flip { x: 2 };
        let before = s.value(0.0);
        s.apply(&flip, &cfg);
        assert!((s.value(0.0) - before - 0.9).abs() < 1e-15);
        cfg.apply(&flip);
        let ex = Event::Exchange { x: 4, y: 5, axis: 0 };
        let before = s.value(0.0);
        s.apply(&ex, &cfg);
        assert!((s.value(0.0) - before - (0.5 - (-2.0))).abs() < 1e-15);
        cfg.apply(&ex);
        let direct = fluctuation_field(&cfg, h.slice(0), &sc, 0.4) * sc.a_n;
        assert!((s.value(0.0) - direct).abs() < 1e-14);
    }

    #[test]
    fn degree_two_incremental() {
        let torus = Torus::new(2, 4).unwrap();
        let h = LatticeField::stationary((0..16).map(|x| 0.1 * x as f64 - 0.7).collect());
        let mut cfg = sample_product_measure(0.5, 16, &mut stream(3, 0, Purpose::Initial)).unwrap();
        let mut sums: Vec<DegreeTwoSum> = (0..2).map(|i| DegreeTwoSum::new(&h, i, 0.45)).collect();
        for s in &mut sums {
            s.rebuild(&cfg, &torus, 0);
        }
        let events = [
            Event::Flip { x: 5 },
            Event::Exchange { x: 5, y: torus.step_up(5, 0), axis: 0 },
            Event::Exchange { x: 2, y: torus.step_up(2, 1), axis: 1 },
            Event::Flip { x: 15 },
            Event::Exchange { x: 3, y: torus.step_up(3, 0), axis: 0 },
        ];
        for ev in &events {
            for s in &mut sums {
                s.apply(ev, &cfg, &torus);
            }
            cfg.apply(ev);
            for (i, s) in sums.iter().enumerate() {
                let mut fields = [vec![0.0; 16], vec![0.0; 16]];
                fields[i] = h.slice(0).to_vec();
                let direct = degree_two_field(&cfg, &torus, &fields, 0.45);
                assert!((s.value(0.0) - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bg_frozen_dynamics_is_linear() {
        // horizon far shorter than the mean waiting time: no events
        let torus = Torus::new(1, 4).unwrap();
        let sc = ScalingParams::new(1, 4, 2.5).unwrap();
        let p = ModelParams::new(1.0, 1.0, 0.0).unwrap();
        let mut sim = SimConfig::new(sc, p, 1e-9);
        sim.seed = 3;
        let h = LatticeField::stationary(vec![1.0, 2.0, -1.0, 0.5]);
        let cfg0 = Configuration::from_bits(&[true, false, false, true]);
        let mut bg = BgDiagnostics::new(&torus, &h, &sc, 0.5, 3.0).unwrap();
        let traj = run(&torus, cfg0.clone(), &sim, &TiltControl::off(4), &mut [&mut bg]).unwrap();
        assert_eq!(traj.event_count, 0);
        let integrand: f64 = (0..4).map(|x| (cfg0.occ(x) - 0.5) * h.slice(0)[x]).sum::<f64>() / 3.0;
        assert!((bg.i1 - 1e-9 * integrand).abs() < 1e-22);
        assert!(BgDiagnostics::new(&torus, &h, &sc, 0.5, 2.0).is_err());
    }

    #[test]
    fn bg_zero_field() {
        let (torus, sim, dc) = small_setup(16);
        let h = LatticeField::zeros(16);
        let r_n = BgDiagnostics::default_r_n(&sim.scaling);
        let mut bg = BgDiagnostics::new(&torus, &h, &sim.scaling, dc.rho_star, r_n).unwrap();
        let cfg0 = sample_product_measure(dc.rho_star, 16, &mut stream(0, 0, Purpose::Initial)).unwrap();
        run(&torus, cfg0, &sim, &TiltControl::off(16), &mut [&mut bg]).unwrap();
        assert_eq!(bg.sup_i1, 0.0);
        assert_eq!(bg.sup_i2_max(), 0.0);
    }

    #[test]
    fn bg_supremum_inside_segment() {
        let mut i = 0.0;
        let mut sup = 0.0;
        // g(s) = 1 - 2s over [0, 2]: integral peaks at s = 1/2 with 1/4, ends at -2
        BgDiagnostics::segment(&mut i, &mut sup, 1.0, -2.0, 2.0);
        assert!((i + 2.0).abs() < 1e-15);
        assert!((sup - 2.0).abs() < 1e-15);
        let mut i = 0.0;
        let mut sup = 0.0;
        BgDiagnostics::segment(&mut i, &mut sup, 1.0, -2.0, 1.0);
        assert!((sup - 0.25).abs() < 1e-15);
        assert!(i.abs() < 1e-15);
    }
}
