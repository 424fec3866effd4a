//! Macroscopic fields on the unit torus: space-time grids, the spectral
//! solver for the linear hydrodynamic equation
//!
//! ```text
//! ∂_t ρ = (Δ + F'(ρ*)) ρ - 2χ(ρ*) ΔH + G(ρ*) H,    ρ(0) = φ,
//! ```
//!
//! its inverse problem `ρ ↦ H`, and the quadratic rate functional
//! `Q_T = Q_0 + Q_dyn`.
//!
//! Spatial grids have `m` nodes per axis at `j/m`; Fourier coefficients are
//! normalised so that `f(u) = Σ_k f̂_k e^{2πi k·u}`. Every operator used here
//! is a function of `|k|²` only, so spectra of real fields stay conjugate
//! symmetric, including at the Nyquist index.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::lattice::Torus;
use crate::model::DerivedConstants;
use crate::observables::{phi1, phi2};
use crate::simulate::LatticeField;
use crate::sum::KahanSum;

/// Real values on an `m^d × (K+1)` space-time grid, slice-major, first
/// spatial axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    d: usize,
    m: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(d: usize, m: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if d == 0 || m < 2 {
            return Err(Error::GridMismatch("grid needs d >= 1 and m >= 2"));
        }
        let points = m.checked_pow(d as u32).ok_or(Error::GridMismatch("grid too large"))?;
        if times.is_empty() || values.len() != points * times.len() {
            return Err(Error::GridMismatch("grid values do not match m^d x slices"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::GridMismatch("grid times must increase strictly"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::GridMismatch("grid values must be finite"));
        }
        Ok(Self { d, m, times, values })
    }

    /// A single slice at `t = 0`.
    pub fn spatial(d: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(d, m, vec![0.0], values)
    }

    pub fn zeros(d: usize, m: usize, times: Vec<f64>) -> Result<Self> {
        let len = m.pow(d as u32) * times.len();
        Self::new(d, m, times, vec![0.0; len])
    }

    /// `K + 1` equally spaced slices on `[0, horizon]`.
    pub fn uniform_times(horizon: f64, k: usize) -> Vec<f64> {
        (0..=k).map(|j| horizon * j as f64 / k as f64).collect()
    }

    /// Samples `f(t, u)` at every node.
    pub fn from_fn(d: usize, m: usize, times: Vec<f64>, f: impl Fn(f64, &[f64]) -> f64) -> Result<Self> {
        let points = m.pow(d as u32);
        let mut values = Vec::with_capacity(points * times.len());
        let mut u = vec![0.0; d];
        for &t in &times {
            for j in 0..points {
                let mut r = j;
                for c in u.iter_mut() {
                    *c = (r % m) as f64 / m as f64;
                    r /= m;
                }
                values.push(f(t, &u));
            }
        }
        Self::new(d, m, times, values)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.m
    }

    /// Spatial nodes per slice, `m^d`.
    pub fn points(&self) -> usize {
        self.values.len() / self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn slices(&self) -> usize {
        self.times.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let p = self.points();
        &self.values[k * p..(k + 1) * p]
    }

    pub fn first(&self) -> &[f64] {
        self.slice(0)
    }

    pub fn last(&self) -> &[f64] {
        self.slice(self.slices() - 1)
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.d == other.d && self.m == other.m && self.times == other.times
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch("fields live on different grids"))
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect(), ..self.clone() }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Ok(Self { values, ..self.clone() })
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(∫_0^T ‖f_t‖² dt)^{1/2}` with the trapezoid rule; the spatial norm
    /// for a single slice.
    pub fn l2_norm(&self) -> f64 {
        let per: Vec<f64> = (0..self.slices()).map(|k| mean_square(self.slice(k))).collect();
        if self.slices() == 1 {
            per[0].sqrt()
        } else {
            trapezoid(&self.times, &per).sqrt()
        }
    }

    /// Keeps only Fourier modes with `max_i |k_i| <= kmax`.
    pub fn band_limited(&self, kmax: usize) -> Self {
        let sp = Spectral::new(self.d, self.m);
        let mut values = Vec::with_capacity(self.values.len());
        for k in 0..self.slices() {
            let mut c = sp.forward(self.slice(k));
            for (idx, v) in c.iter_mut().enumerate() {
                if sp.kmax_abs(idx) > kmax {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            values.extend(sp.inverse(&c));
        }
        Self { values, ..self.clone() }
    }

    /// Evaluates the trigonometric interpolant of every slice at the lattice
    /// points `x/n`, keeping the slice times.
    pub fn to_lattice(&self, torus: &Torus) -> Result<LatticeField> {
        if torus.dim() != self.d {
            return Err(Error::GridMismatch("torus and grid dimensions differ"));
        }
        let n = torus.side();
        let e = interpolation_matrix(self.m, n);
        let mut values = Vec::with_capacity(torus.volume() * self.slices());
        for k in 0..self.slices() {
            let mut data = self.slice(k).to_vec();
            let mut shape = vec![self.m; self.d];
            for axis in 0..self.d {
                data = resample_axis(&data, &shape, axis, &e, n);
                shape[axis] = n;
            }
            values.extend(data);
        }
        LatticeField::new(torus.volume(), self.times.clone(), values)
    }
}

fn mean_square(v: &[f64]) -> f64 {
    let mut s = KahanSum::default();
    for x in v {
        s.add(x * x);
    }
    s.value() / v.len() as f64
}

/// `E[x][j] = D_m(x/n - j/m)` with the real Dirichlet kernel of the
/// symmetric band `|k| < m/2` (half weight on the Nyquist pair).
fn interpolation_matrix(m: usize, n: usize) -> Vec<f64> {
    let half = m / 2;
    let mut e = vec![0.0; n * m];
    for x in 0..n {
        for j in 0..m {
            let s = x as f64 / n as f64 - j as f64 / m as f64;
            let mut acc = 1.0;
            let top = if m % 2 == 0 { half - 1 } else { half };
            for k in 1..=top {
                acc += 2.0 * (2.0 * PI * k as f64 * s).cos();
            }
            if m % 2 == 0 {
                acc += (PI * m as f64 * s).cos();
            }
            e[x * m + j] = acc / m as f64;
        }
    }
    e
}

fn resample_axis(src: &[f64], shape: &[usize], axis: usize, e: &[f64], n: usize) -> Vec<f64> {
    let m = shape[axis];
    let inner: usize = shape[..axis].iter().product();
    let outer: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; inner * n * outer];
    for o in 0..outer {
        for i in 0..inner {
            for x in 0..n {
                let row = &e[x * m..(x + 1) * m];
                let mut acc = 0.0;
                for (j, w) in row.iter().enumerate() {
                    acc += w * src[i + inner * (j + m * o)];
                }
                out[i + inner * (x + n * o)] = acc;
            }
        }
    }
    out
}

/// Normalised multidimensional FFT on an `m^d` grid together with the
/// wavenumber of every spectral index.
pub struct Spectral {
    d: usize,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k2: Vec<f64>,
    kinf: Vec<usize>,
}

impl Spectral {
    pub fn new(d: usize, m: usize) -> Self {
        let mut planner = FftPlanner::new();
        let points = m.pow(d as u32);
        let mut k2 = Vec::with_capacity(points);
        let mut kinf = Vec::with_capacity(points);
        for idx in 0..points {
            let mut r = idx;
            let (mut s, mut mx) = (0.0, 0);
            for _ in 0..d {
                let k = Self::wavenumber(r % m, m);
                s += (k * k) as f64;
                mx = mx.max(k.unsigned_abs() as usize);
                r /= m;
            }
            k2.push(s);
            kinf.push(mx);
        }
        Self { d, m, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m), k2, kinf }
    }

    /// Signed wavenumber of FFT index `j`; the Nyquist index maps to `-m/2`.
    pub fn wavenumber(j: usize, m: usize) -> i64 {
        if 2 * j < m {
            j as i64
        } else {
            j as i64 - m as i64
        }
    }

    pub fn points(&self) -> usize {
        self.k2.len()
    }

    /// `|k|²` of spectral index `idx`.
    pub fn k2(&self, idx: usize) -> f64 {
        self.k2[idx]
    }

    pub fn kmax_abs(&self, idx: usize) -> usize {
        self.kinf[idx]
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.m;
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut stride = 1;
        for _ in 0..self.d {
            let block = stride * m;
            for start in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[start + off + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[start + off + j * stride] = *v;
                    }
                }
            }
            stride = block;
        }
    }

    /// Fourier coefficients `f̂_k = m^{-d} Σ_j f_j e^{-2πi k·j/m}`.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let scale = 1.0 / self.points() as f64;
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.fwd);
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }

    /// Real part of `Σ_k f̂_k e^{2πi k·j/m}`.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut data = coeffs.to_vec();
        self.transform(&mut data, &self.inv);
        data.iter().map(|c| c.re).collect()
    }

    /// `Σ_k w(|k|²) Re(â_k conj b̂_k)`.
    fn weighted_dot(&self, a: &[Complex64], b: &[Complex64], w: impl Fn(f64) -> f64) -> f64 {
        let mut s = KahanSum::default();
        for (idx, (x, y)) in a.iter().zip(b).enumerate() {
            s.add(w(self.k2[idx]) * (x.re * y.re + x.im * y.im));
        }
        s.value()
    }
}

fn for_grid(g: &FieldGrid) -> Spectral {
    Spectral::new(g.d, g.m)
}

/// `L^2(T^d)` inner product of two band-limited slices.
pub fn l2_inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = KahanSum::default();
    for (x, y) in a.iter().zip(b) {
        s.add(x * y);
    }
    s.value() / a.len() as f64
}

/// Symbol of `Δ + F'(ρ*)` and of `-2χΔ + G` on `|k|²`.
fn linear_symbol(k2: f64, dc: &DerivedConstants) -> f64 {
    -4.0 * PI * PI * k2 + dc.f_prime
}

fn forcing_symbol(k2: f64, dc: &DerivedConstants) -> f64 {
    8.0 * PI * PI * dc.chi * k2 + dc.g_star
}

/// Solves the forced linear equation from `φ` on the slice grid of `h`,
/// mode by mode with the exponential integrator that is exact when `Ĥ_k`
/// is linear between slices.
pub fn solve_forward(phi: &[f64], h: &FieldGrid, dc: &DerivedConstants) -> Result<FieldGrid> {
    if phi.len() != h.points() {
        return Err(Error::GridMismatch("initial profile and control grids differ"));
    }
    let sp = for_grid(h);
    let mut u = sp.forward(phi);
    let mut hk = sp.forward(h.slice(0));
    let mut values = Vec::with_capacity(h.values.len());
    values.extend_from_slice(phi);
    for j in 1..h.slices() {
        let dt = h.times[j] - h.times[j - 1];
        let next = sp.forward(h.slice(j));
        for idx in 0..u.len() {
            let z = linear_symbol(sp.k2[idx], dc) * dt;
            let b = forcing_symbol(sp.k2[idx], dc);
            let f0 = hk[idx] * b;
            let f1 = next[idx] * b;
            u[idx] = u[idx] * z.exp() + f0 * (dt * phi1(z)) + (f1 - f0) * (dt * phi2(z));
        }
        values.extend(sp.inverse(&u));
        hk = next;
    }
    FieldGrid::new(h.d, h.m, h.times.clone(), values)
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    let k = times.len() - 1;
    let h = (times[k] - times[0]) / k as f64;
    if times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
        return Err(Error::GridMismatch("operation needs equally spaced time slices"));
    }
    Ok(h)
}

/// Fourth-order finite-difference time derivative: central on interior
/// slices, one-sided five-point stencils on the two slices at each end.
/// Needs at least five equally spaced slices.
pub fn time_derivative(g: &FieldGrid) -> Result<FieldGrid> {
    let k = g.slices();
    if k < 5 {
        return Err(Error::GridMismatch("time derivative needs at least five slices"));
    }
    let h = uniform_step(&g.times)?;
    let p = g.points();
    let v = |j: usize, x: usize| g.values[j * p + x];
    let mut out = vec![0.0; g.values.len()];
    let c = 1.0 / (12.0 * h);
    for x in 0..p {
        out[x] = c * (-25.0 * v(0, x) + 48.0 * v(1, x) - 36.0 * v(2, x) + 16.0 * v(3, x) - 3.0 * v(4, x));
        out[p + x] = c * (-3.0 * v(0, x) - 10.0 * v(1, x) + 18.0 * v(2, x) - 6.0 * v(3, x) + v(4, x));
        for j in 2..k - 2 {
            out[j * p + x] = c * (v(j - 2, x) - 8.0 * v(j - 1, x) + 8.0 * v(j + 1, x) - v(j + 2, x));
        }
        let l = k - 1;
        out[(l - 1) * p + x] =
            -c * (-3.0 * v(l, x) - 10.0 * v(l - 1, x) + 18.0 * v(l - 2, x) - 6.0 * v(l - 3, x) + v(l - 4, x));
        out[l * p + x] =
            -c * (-25.0 * v(l, x) + 48.0 * v(l - 1, x) - 36.0 * v(l - 2, x) + 16.0 * v(l - 3, x) - 3.0 * v(l - 4, x));
    }
    FieldGrid::new(g.d, g.m, g.times.clone(), out)
}

/// Recovers the control from a density path: per slice,
/// `Ĥ_k = (∂_t ρ̂_k - (-4π²|k|² + F') ρ̂_k) / (8π²χ|k|² + G)`.
pub fn invert_for_control(rho: &FieldGrid, dc: &DerivedConstants) -> Result<FieldGrid> {
    if !(dc.g_star > 0.0) {
        return Err(Error::InvalidParams("G(rho*) must be positive"));
    }
    let drho = time_derivative(rho)?;
    let sp = for_grid(rho);
    let mut values = Vec::with_capacity(rho.values.len());
    for j in 0..rho.slices() {
        let r = sp.forward(rho.slice(j));
        let dr = sp.forward(drho.slice(j));
        let hk: Vec<Complex64> = r
            .iter()
            .zip(&dr)
            .enumerate()
            .map(|(idx, (r, dr))| (dr - r * linear_symbol(sp.k2[idx], dc)) / forcing_symbol(sp.k2[idx], dc))
            .collect();
        values.extend(sp.inverse(&hk));
    }
    FieldGrid::new(rho.d, rho.m, rho.times.clone(), values)
}

/// `(Δ + F'(ρ*)) H` slice by slice.
pub fn generator_image(h: &FieldGrid, dc: &DerivedConstants) -> FieldGrid {
    let sp = for_grid(h);
    let mut values = Vec::with_capacity(h.values.len());
    for j in 0..h.slices() {
        let mut c = sp.forward(h.slice(j));
        for (idx, v) in c.iter_mut().enumerate() {
            *v *= linear_symbol(sp.k2[idx], dc);
        }
        values.extend(sp.inverse(&c));
    }
    FieldGrid { values, ..h.clone() }
}

/// Quadrature rule for time integrals over the slice grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeQuadrature {
    /// Composite trapezoid, second order; any slice spacing.
    #[default]
    Trapezoid,
    /// Trapezoid minus the leading Euler–Maclaurin term `h²/12 (f'(T) - f'(0))`
    /// with fourth-order one-sided end derivatives; fourth order, equally
    /// spaced slices with at least five of them.
    EndCorrected,
}

fn trapezoid(times: &[f64], f: &[f64]) -> f64 {
    let mut s = KahanSum::default();
    for j in 1..times.len() {
        s.add(0.5 * (times[j] - times[j - 1]) * (f[j] + f[j - 1]));
    }
    s.value()
}

impl TimeQuadrature {
    pub fn integrate(self, times: &[f64], f: &[f64]) -> Result<f64> {
        if times.len() != f.len() {
            return Err(Error::GridMismatch("integrand does not match the time grid"));
        }
        if times.len() < 2 {
            return Ok(0.0);
        }
        let base = trapezoid(times, f);
        match self {
            TimeQuadrature::Trapezoid => Ok(base),
            TimeQuadrature::EndCorrected => {
                let k = f.len();
                if k < 5 {
                    return Err(Error::GridMismatch("end-corrected quadrature needs at least five slices"));
                }
                let h = uniform_step(times)?;
                let d0 = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
                let l = k - 1;
                let d1 = (25.0 * f[l] - 48.0 * f[l - 1] + 36.0 * f[l - 2] - 16.0 * f[l - 3] + 3.0 * f[l - 4]) / (12.0 * h);
                Ok(base - h * h / 12.0 * (d1 - d0))
            }
        }
    }
}

/// `[H, J] = χ Σ_i ∫∫ ∂_i H ∂_i J + (G/2) ∫∫ H J`.
pub fn scalar_product(h: &FieldGrid, j: &FieldGrid, dc: &DerivedConstants, quad: TimeQuadrature) -> Result<f64> {
    h.check_same(j)?;
    let sp = for_grid(h);
    let per: Vec<f64> = (0..h.slices())
        .map(|k| {
            let (a, b) = (sp.forward(h.slice(k)), sp.forward(j.slice(k)));
            sp.weighted_dot(&a, &b, |k2| 4.0 * PI * PI * dc.chi * k2 + 0.5 * dc.g_star)
        })
        .collect();
    quad.integrate(&h.times, &per)
}

/// `ℓ_T(μ, J) = ⟨μ_T, J_T⟩ - ⟨μ_0, J_0⟩ - ∫_0^T ⟨μ_s, (∂_s + Δ + F'(ρ*)) J_s⟩ ds`,
/// with `∂_s J` from [`time_derivative`].
pub fn ell_t(mu: &FieldGrid, j: &FieldGrid, dc: &DerivedConstants, quad: TimeQuadrature) -> Result<f64> {
    mu.check_same(j)?;
    let dj = time_derivative(j)?;
    let sp = for_grid(mu);
    let per: Vec<f64> = (0..mu.slices())
        .map(|k| {
            let a = sp.forward(mu.slice(k));
            let b = sp.forward(j.slice(k));
            let db = sp.forward(dj.slice(k));
            sp.weighted_dot(&a, &db, |_| 1.0) + sp.weighted_dot(&a, &b, |k2| linear_symbol(k2, dc))
        })
        .collect();
    let boundary = l2_inner(mu.last(), j.last()) - l2_inner(mu.first(), j.first());
    Ok(boundary - quad.integrate(&mu.times, &per)?)
}

/// `Q_0 = ‖φ‖²_{L²} / (2χ(ρ*))`.
pub fn q0(phi: &[f64], dc: &DerivedConstants) -> f64 {
    mean_square(phi) / (2.0 * dc.chi)
}

/// `Q_dyn(μ) = [H, H]` with `H` recovered from `μ`.
pub fn q_dyn(mu: &FieldGrid, dc: &DerivedConstants, quad: TimeQuadrature) -> Result<(f64, FieldGrid)> {
    let h = invert_for_control(mu, dc)?;
    let q = scalar_product(&h, &h, dc, quad)?;
    Ok((q.max(0.0), h))
}

/// `Q_T = Q_0 + Q_dyn` of a smooth density path and the recovered control.
#[derive(Debug, Clone, PartialEq)]
pub struct RateBreakdown {
    pub q0: f64,
    pub qdyn: f64,
    pub qt: f64,
    pub control: FieldGrid,
}

pub fn rate_function(mu: &FieldGrid, dc: &DerivedConstants, quad: TimeQuadrature) -> Result<RateBreakdown> {
    let q0 = q0(mu.first(), dc);
    let (qdyn, control) = q_dyn(mu, dc, quad)?;
    Ok(RateBreakdown { q0, qdyn, qt: q0 + qdyn, control })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn constants() -> DerivedConstants {
        DerivedConstants::new(&ModelParams::new(1.0, 1.0, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn fourier_round_trip() {
        for (d, m) in [(1, 16), (1, 15), (2, 8), (3, 4)] {
            let g = FieldGrid::from_fn(d, m, vec![0.0], |_, u| {
                u.iter().enumerate().map(|(i, x)| ((i + 1) as f64 * 7.3 * x).sin()).sum::<f64>() + 0.2
            })
            .unwrap();
            let sp = Spectral::new(d, m);
            let back = sp.inverse(&sp.forward(g.first()));
            for (a, b) in back.iter().zip(g.first()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_mode_coefficient() {
        let g = FieldGrid::from_fn(2, 8, vec![0.0], |_, u| (2.0 * PI * (u[0] + 2.0 * u[1])).cos()).unwrap();
        let sp = Spectral::new(2, 8);
        let c = sp.forward(g.first());
        // modes (1,2) and (-1,-2) carry 1/2 each
        let i1 = 1 + 8 * 2;
        let i2 = 7 + 8 * 6;
        assert!((c[i1].re - 0.5).abs() < 1e-14 && (c[i2].re - 0.5).abs() < 1e-14);
        assert_eq!(sp.k2(i1), 5.0);
        let total: f64 = c.iter().map(|z| z.norm()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(FieldGrid::new(1, 4, vec![0.0, 0.0], vec![0.0; 8]).is_err());
        assert!(FieldGrid::new(1, 4, vec![0.0], vec![0.0; 3]).is_err());
        assert!(FieldGrid::new(1, 4, vec![0.0], vec![f64::NAN; 4]).is_err());
        assert!(FieldGrid::new(0, 4, vec![0.0], vec![]).is_err());
    }

    #[test]
    fn homogeneous_decay_examples() {
        let dc = constants();
        let times = FieldGrid::uniform_times(1.0, 40);
        let zero = FieldGrid::zeros(1, 32, times.clone()).unwrap();
        let c = 0.7;
        let rho = solve_forward(&vec![c; 32], &zero, &dc).unwrap();
        for (k, &t) in times.iter().enumerate() {
            for v in rho.slice(k) {
                assert!((v - c * (dc.f_prime * t).exp()).abs() < 1e-12);
            }
        }
        let cos = FieldGrid::from_fn(1, 32, vec![0.0], |_, u| (2.0 * PI * u[0]).cos()).unwrap();
        let rho = solve_forward(cos.first(), &zero, &dc).unwrap();
        let rate = -4.0 * PI * PI + dc.f_prime;
        for (k, &t) in times.iter().enumerate() {
            for (x, v) in rho.slice(k).iter().enumerate() {
                let exact = (rate * t).exp() * (2.0 * PI * x as f64 / 32.0).cos();
                assert!((v - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_control_zero_mode() {
        // ρ' = F'ρ + G h with constant h: ρ = (φ + Gh/F') e^{F't} - Gh/F'
        let dc = constants();
        let times = FieldGrid::uniform_times(2.0, 7);
        let h = FieldGrid::from_fn(1, 8, times.clone(), |_, _| 0.4).unwrap();
        let rho = solve_forward(&[0.1; 8], &h, &dc).unwrap();
        let p = dc.g_star * 0.4 / dc.f_prime;
        for (k, &t) in times.iter().enumerate() {
            assert!((rho.slice(k)[3] - ((0.1 + p) * (dc.f_prime * t).exp() - p)).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_is_exact_on_quartics() {
        let times = FieldGrid::uniform_times(1.0, 10);
        let g = FieldGrid::from_fn(1, 4, times.clone(), |t, u| (t * t * t * t - 2.0 * t) * (1.0 + u[0])).unwrap();
        let dg = time_derivative(&g).unwrap();
        for (k, &t) in times.iter().enumerate() {
            for (x, v) in dg.slice(k).iter().enumerate() {
                let exact = (4.0 * t * t * t - 2.0) * (1.0 + x as f64 / 4.0);
                assert!((v - exact).abs() < 1e-10, "{k} {v} {exact}");
            }
        }
        let short = FieldGrid::zeros(1, 4, FieldGrid::uniform_times(1.0, 3)).unwrap();
        assert!(time_derivative(&short).is_err());
        let uneven = FieldGrid::zeros(1, 4, vec![0.0, 0.1, 0.3, 0.4, 0.5]).unwrap();
        assert!(time_derivative(&uneven).is_err());
    }

    #[test]
    fn quadrature_orders() {
        let f = |t: f64| (3.0 * t).sin() + t * t;
        let exact = (1.0 - (3.0f64).cos()) / 3.0 + 1.0 / 3.0;
        let err = |q: TimeQuadrature, k: usize| {
            let ts = FieldGrid::uniform_times(1.0, k);
            let v: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
            (q.integrate(&ts, &v).unwrap() - exact).abs()
        };
        let o2 = (err(TimeQuadrature::Trapezoid, 32) / err(TimeQuadrature::Trapezoid, 64)).log2();
        let o4 = (err(TimeQuadrature::EndCorrected, 32) / err(TimeQuadrature::EndCorrected, 64)).log2();
        assert!((o2 - 2.0).abs() < 0.05, "{o2}");
        assert!(o4 > 3.8, "{o4}");
    }

    #[test]
    fn scalar_product_examples() {
        let dc = constants();
        let times = FieldGrid::uniform_times(1.0, 8);
        let one = FieldGrid::from_fn(1, 16, times.clone(), |_, _| 1.0).unwrap();
        let cos = FieldGrid::from_fn(1, 16, times.clone(), |_, u| (2.0 * PI * u[0]).cos()).unwrap();
        let q = TimeQuadrature::Trapezoid;
        assert!((scalar_product(&one, &one, &dc, q).unwrap() - dc.g_star / 2.0).abs() < 1e-14);
        assert!(scalar_product(&one, &cos, &dc, q).unwrap().abs() < 1e-14);
        let expected = dc.chi * 4.0 * PI * PI * 0.5 + dc.g_star / 2.0 * 0.5;
        assert!((scalar_product(&cos, &cos, &dc, q).unwrap() - expected).abs() < 1e-12);
        let other = FieldGrid::zeros(1, 8, times).unwrap();
        assert!(scalar_product(&one, &other, &dc, q).is_err());
    }

    #[test]
    fn q0_examples() {
        let half = DerivedConstants { rho_star: 0.5, chi: 0.25, f_prime: -2.0, g_star: 1.0, kappa: 1.0 };
        assert_eq!(q0(&[0.0; 8], &half), 0.0);
        assert!((q0(&[0.3; 8], &half) - 0.09 / 0.5).abs() < 1e-15);
        let cos = FieldGrid::from_fn(1, 16, vec![0.0], |_, u| (2.0 * PI * u[0]).cos()).unwrap();
        assert!((q0(cos.first(), &half) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lattice_transfer() {
        let g = FieldGrid::from_fn(2, 8, vec![0.0, 1.0], |t, u| (1.0 + t) * (2.0 * PI * (u[0] - 3.0 * u[1])).sin() + 0.5)
            .unwrap();
        for n in [8, 12, 20] {
            let torus = Torus::new(2, n).unwrap();
            let lf = g.to_lattice(&torus).unwrap();
            for x in 0..torus.volume() {
                let c = torus.coords(x);
                let u = [c[0] as f64 / n as f64, c[1] as f64 / n as f64];
                for (k, t) in [0.0, 1.0].iter().enumerate() {
                    let exact = (1.0 + t) * (2.0 * PI * (u[0] - 3.0 * u[1])).sin() + 0.5;
                    assert!((lf.slice(k)[x] - exact).abs() < 1e-12);
                }
            }
        }
        assert!(g.to_lattice(&Torus::new(1, 8).unwrap()).is_err());
    }

    #[test]
    fn band_limit_projection() {
        let g = FieldGrid::from_fn(1, 32, vec![0.0], |_, u| (2.0 * PI * u[0]).cos() + (2.0 * PI * 9.0 * u[0]).sin()).unwrap();
        let b = g.band_limited(4);
        for (x, v) in b.first().iter().enumerate() {
            assert!((v - (2.0 * PI * x as f64 / 32.0).cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_path_gives_zero_control() {
        let dc = constants();
        let z = FieldGrid::zeros(1, 16, FieldGrid::uniform_times(1.0, 16)).unwrap();
        let h = invert_for_control(&z, &dc).unwrap();
        assert_eq!(h.sup_abs(), 0.0);
        let rb = rate_function(&z, &dc, TimeQuadrature::Trapezoid).unwrap();
        assert_eq!((rb.q0, rb.qdyn, rb.qt), (0.0, 0.0, 0.0));
    }

    #[test]
    fn q_dyn_is_quadratic() {
        let dc = constants();
        let times = FieldGrid::uniform_times(1.0, 256);
        let h = FieldGrid::from_fn(1, 16, times, |t, u| (1.0 + t) * (2.0 * PI * u[0]).sin()).unwrap();
        let phi = vec![0.0; 16];
        let mu = solve_forward(&phi, &h, &dc).unwrap();
        let (q1, _) = q_dyn(&mu, &dc, TimeQuadrature::Trapezoid).unwrap();
        let (q2, _) = q_dyn(&mu.scaled(2.0), &dc, TimeQuadrature::Trapezoid).unwrap();
        assert!((q2 - 4.0 * q1).abs() < 1e-12 * q2);
    }
}
