//! Scalar model functions: reaction term, noise strength, the stationary
//! density `ρ*`, the main-lemma constant `κ(ρ)`, and the fluctuation scaling.

use crate::error::{Error, Result};

/// Microscopic rates: creation `a`, annihilation `b`, neighbour-assisted
/// creation offset `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(a: f64, b: f64, lambda: f64) -> Result<Self> {
        let p = Self { a, b, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite() && self.lambda.is_finite()) {
            return Err(Error::InvalidParams("rates must be finite"));
        }
        if self.a <= 0.0 {
            return Err(Error::InvalidParams("a must be positive"));
        }
        if self.b <= 0.0 {
            return Err(Error::InvalidParams("b must be positive"));
        }
        if self.a + self.lambda <= 0.0 {
            return Err(Error::InvalidParams("lambda must exceed -a"));
        }
        Ok(())
    }

    /// `min{a, a+λ, b}`, the denominator scale of `κ`.
    pub fn min_rate(&self) -> f64 {
        self.a.min(self.a + self.lambda).min(self.b)
    }

    /// Upper bound of the flip rate over all configurations.
    pub fn max_flip_rate(&self) -> f64 {
        (self.a + self.lambda.max(0.0)).max(self.b)
    }

    /// Lower bound of the flip rate over all configurations.
    pub fn min_flip_rate(&self) -> f64 {
        (self.a + self.lambda.min(0.0)).min(self.b)
    }
}

fn check_density(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::Domain(rho))
    }
}

/// Mean reaction drift `F(ρ) = (a+λρ)(1-ρ) - bρ`.
pub fn reaction(rho: f64, p: &ModelParams) -> Result<f64> {
    check_density(rho)?;
    Ok((p.a + p.lambda * rho) * (1.0 - rho) - p.b * rho)
}

/// Mean flip rate `G(ρ) = E_{ν_ρ}[c_x] = (a+λρ)(1-ρ) + bρ`.
pub fn noise(rho: f64, p: &ModelParams) -> Result<f64> {
    check_density(rho)?;
    Ok((p.a + p.lambda * rho) * (1.0 - rho) + p.b * rho)
}

/// Closed-form derivative `F'(ρ) = λ - a - b - 2λρ`.
pub fn reaction_slope(rho: f64, p: &ModelParams) -> f64 {
    p.lambda - p.a - p.b - 2.0 * p.lambda * rho
}

/// The unique zero of `F` in `(0,1)`.
pub fn solve_rho_star(p: &ModelParams) -> Result<f64> {
    p.validate()?;
    let f = |r: f64| (p.a + p.lambda * r) * (1.0 - r) - p.b * r;
    if p.lambda == 0.0 {
        return Ok(p.a / (p.a + p.b));
    }
    // -λρ² + (λ-a-b)ρ + a = 0. Use the cancellation-free pair of roots.
    let qa = -p.lambda;
    let qb = p.lambda - p.a - p.b;
    let qc = p.a;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc >= 0.0 {
        let sq = libm::sqrt(disc);
        let q = -0.5 * (qb + if qb >= 0.0 { sq } else { -sq });
        let mut candidates = [f64::NAN; 2];
        if q != 0.0 {
            candidates[0] = q / qa;
            candidates[1] = qc / q;
        }
        for r in candidates {
            if r > 0.0 && r < 1.0 && libm::fabs(f(r)) <= 1e-13 * (p.a + p.b + libm::fabs(p.lambda)) {
                return Ok(polish(r, p));
            }
        }
    }
    bisect_root(p)
}

/// One Newton step to clean up the last ulps of the quadratic root.
fn polish(r: f64, p: &ModelParams) -> f64 {
    let f = (p.a + p.lambda * r) * (1.0 - r) - p.b * r;
    let fp = reaction_slope(r, p);
    if fp == 0.0 {
        return r;
    }
    let next = r - f / fp;
    if next > 0.0 && next < 1.0 {
        next
    } else {
        r
    }
}

fn bisect_root(p: &ModelParams) -> Result<f64> {
    let f = |r: f64| (p.a + p.lambda * r) * (1.0 - r) - p.b * r;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if !(f(lo) > 0.0 && f(hi) < 0.0) {
        return Err(Error::Internal("F does not change sign on [0,1]"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let r = 0.5 * (lo + hi);
    if r > 0.0 && r < 1.0 {
        Ok(r)
    } else {
        Err(Error::Internal("no root of F inside (0,1)"))
    }
}

/// `κ(ρ) = 2ρ(1-ρ)|log(ρ/(1-ρ))| / (min{a,a+λ,b} |1-2ρ|)`, continuous at 1/2.
pub fn kappa(rho: f64, p: &ModelParams) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(rho));
    }
    let z = 2.0 * rho - 1.0;
    // |log(ρ/(1-ρ))| / |1-2ρ| = 2 artanh(z)/z = 2(1 + z²/3 + z⁴/5 + ...)
    let ratio = if libm::fabs(z) < 1e-6 {
        2.0 * (1.0 + z * z / 3.0)
    } else {
        libm::fabs(libm::log(rho / (1.0 - rho))) / libm::fabs(z)
    };
    Ok(2.0 * rho * (1.0 - rho) * ratio / p.min_rate())
}

/// `𝒜(u) = u(1+u)`.
pub fn main_lemma_poly(u: f64) -> f64 {
    u * (1.0 + u)
}

/// Smallness condition on `λ`: `C0 κ(ρ*) 𝒜(|λ|/(2dρ*)) < 1`. Advisory only,
/// the constant `C0` is not known explicitly.
pub fn lambda_admissible(p: &ModelParams, d: usize, c0: f64) -> Result<bool> {
    let rho = solve_rho_star(p)?;
    let u = libm::fabs(p.lambda) / (2.0 * d as f64 * rho);
    Ok(c0 * kappa(rho, p)? * main_lemma_poly(u) < 1.0)
}

/// `g_d(n)`: `n` for d=1, `log n` for d=2, `1` otherwise.
pub fn g_d(n: f64, d: usize) -> f64 {
    match d {
        1 => n,
        2 => libm::log(n),
        _ => 1.0,
    }
}

/// Constants of the linearised macroscopic dynamics at `ρ*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub rho_star: f64,
    pub chi: f64,
    pub f_prime: f64,
    pub g_star: f64,
    pub kappa: f64,
}

impl DerivedConstants {
    pub fn new(p: &ModelParams) -> Result<Self> {
        let rho_star = solve_rho_star(p)?;
        Ok(Self {
            rho_star,
            chi: rho_star * (1.0 - rho_star),
            f_prime: reaction_slope(rho_star, p),
            g_star: noise(rho_star, p)?,
            kappa: kappa(rho_star, p)?,
        })
    }
}

/// Lattice dimension, side, and fluctuation scale `a_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub d: usize,
    pub n: usize,
    pub a_n: f64,
    pub theta: Option<f64>,
}

impl ScalingParams {
    /// Validates the strict finite-`n` form of `n^{d-1} sqrt(g_d(n)) < a_n < n^d`.
    pub fn new(d: usize, n: usize, a_n: f64) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidScaling("dimension must be at least 1"));
        }
        if n < 2 {
            return Err(Error::InvalidScaling("lattice side must be at least 2"));
        }
        let (lower, upper) = Self::admissible_range(d, n);
        if !(a_n > lower && a_n < upper) {
            return Err(Error::Scaling { a_n, lower, upper });
        }
        Ok(Self { d, n, a_n, theta: None })
    }

    /// `a_n = n^θ` exactly.
    pub fn with_exponent(d: usize, n: usize, theta: f64) -> Result<Self> {
        let a_n = libm::pow(n as f64, theta);
        let mut s = Self::new(d, n, a_n)?;
        s.theta = Some(theta);
        Ok(s)
    }

    /// Default in d = 1: `a_n = round(n^{3/4})`, the middle of the admissible
    /// exponent window `(1/2, 1)`.
    pub fn default_for(n: usize) -> Result<Self> {
        Self::new(1, n, libm::round(libm::pow(n as f64, 0.75)))
    }

    pub fn admissible_range(d: usize, n: usize) -> (f64, f64) {
        let nf = n as f64;
        let lower = libm::pow(nf, (d - 1) as f64) * libm::sqrt(g_d(nf, d));
        let upper = libm::pow(nf, d as f64);
        (lower, upper)
    }

    pub fn volume(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// `a_n / n^d`, the per-site tilt strength.
    pub fn tilt_strength(&self) -> f64 {
        self.a_n / self.volume() as f64
    }

    /// `a_n² / n^d`, the decay rate of the deviation principle.
    pub fn speed(&self) -> f64 {
        self.a_n * self.a_n / self.volume() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(a: f64, b: f64, l: f64) -> ModelParams {
        ModelParams::new(a, b, l).unwrap()
    }

    /// Bisection on F, written independently of `solve_rho_star`.
    fn bisection_oracle(a: f64, b: f64, l: f64) -> f64 {
        let f = |r: f64| (a + l * r) * (1.0 - r) - b * r;
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > 1e-15 {
            let m = 0.5 * (lo + hi);
            if f(m) > 0.0 {
                lo = m
            } else {
                hi = m
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn reaction_endpoints() {
        let q = p(1.3, 0.7, 0.4);
        assert_eq!(reaction(0.0, &q).unwrap(), 1.3);
        assert_eq!(reaction(1.0, &q).unwrap(), -0.7);
        assert_eq!(reaction(0.5, &p(1.0, 1.0, 0.0)).unwrap(), 0.0);
        assert!(matches!(reaction(1.2, &q), Err(Error::Domain(_))));
    }

    #[test]
    fn rho_star_examples() {
        assert_eq!(solve_rho_star(&p(1.0, 1.0, 0.0)).unwrap(), 0.5);
        assert_eq!(solve_rho_star(&p(2.0, 1.0, 0.0)).unwrap(), 2.0 / 3.0);
        let oracle = bisection_oracle(1.0, 1.0, 0.2);
        // frozen from the bisection oracle
        assert!((oracle - 0.524_937_810_560_445).abs() < 1e-14);
        assert!((solve_rho_star(&p(1.0, 1.0, 0.2)).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn rho_star_negative_lambda_matches_bisection() {
        for &(a, b, l) in &[(1.0, 1.0, -0.9), (0.2, 3.0, -0.19), (5.0, 0.1, 40.0), (1.0, 1.0, 1e-13)] {
            let r = solve_rho_star(&p(a, b, l)).unwrap();
            assert!((r - bisection_oracle(a, b, l)).abs() < 1e-12, "{a} {b} {l}");
        }
    }

    #[test]
    fn noise_examples() {
        let sym = p(1.0, 1.0, 0.0);
        assert_eq!(noise(0.5, &sym).unwrap(), 1.0);
        assert_eq!(noise(0.0, &p(0.3, 2.0, 1.0)).unwrap(), 0.3);
        let g = noise(2.0 / 3.0, &p(2.0, 1.0, 0.0)).unwrap();
        assert!((g - 4.0 / 3.0).abs() < 1e-15);
        assert!(noise(-0.1, &sym).is_err());
        // at ρ*, G = 2bρ*
        let q = p(1.0, 1.0, 0.1);
        let r = solve_rho_star(&q).unwrap();
        assert!((noise(r, &q).unwrap() - 2.0 * r).abs() < 1e-14);
    }

    #[test]
    fn noise_is_mean_flip_rate() {
        // exact expectation of c_x over the 2^{2d+1} local patterns on a d=2 torus
        use crate::lattice::{flip_rate, Configuration, Torus};
        let torus = Torus::new(2, 5).unwrap();
        let x = torus.site(&[2, 2]);
        let mut sites = vec![x];
        sites.extend(torus.neighbors(x).iter().map(|&y| y as usize));
        for (q, rho) in [(p(1.0, 1.0, 0.7), 0.3), (p(0.4, 2.0, -0.3), 0.8), (p(2.0, 0.5, 3.0), 0.55)] {
            let mut mean = 0.0;
            for mask in 0..1u32 << sites.len() {
                let mut cfg = Configuration::empty(torus.volume());
                let mut w = 1.0;
                for (i, &s) in sites.iter().enumerate() {
                    let on = mask >> i & 1 == 1;
                    cfg.set(s, on);
                    w *= if on { rho } else { 1.0 - rho };
                }
                mean += w * flip_rate(&cfg, &torus, x, &q);
            }
            assert!((mean - noise(rho, &q).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn kappa_examples() {
        let sym = p(1.0, 1.0, 0.0);
        assert!((kappa(0.5, &sym).unwrap() - 1.0).abs() < 1e-15);
        assert!((kappa(0.5 + 1e-9, &sym).unwrap() - 1.0).abs() < 1e-12);
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let direct = 2.0 * s * (1.0 - s) / (1.0 - 2.0 * s).abs();
        assert!((kappa(s, &sym).unwrap() - direct).abs() < 1e-14);
        assert!((kappa(s, &sym).unwrap() - 0.850_918_128_239_321_5).abs() < 1e-12);
        for eps in [1e-7, 1e-3, 0.2] {
            let l = kappa(0.5 - eps, &sym).unwrap();
            let r = kappa(0.5 + eps, &sym).unwrap();
            assert!((l - r).abs() < 1e-12);
        }
        // continuity across the series switch
        let inside = kappa(0.5 + 0.49e-6, &sym).unwrap();
        let outside = kappa(0.5 + 0.51e-6, &sym).unwrap();
        assert!((inside - outside).abs() < 1e-10);
        assert!(kappa(0.0, &sym).is_err());
        assert!(kappa(1.0, &sym).is_err());
    }

    #[test]
    fn lambda_admissibility() {
        assert!(lambda_admissible(&p(1.0, 1.0, 0.0), 1, 1e6).unwrap());
        // κ(ρ*)𝒜(0.1/(2ρ*)) ≈ 0.10704 for a=b=1, λ=0.1 (direct evaluation)
        assert!(lambda_admissible(&p(1.0, 1.0, 0.1), 1, 1.0).unwrap());
        let q = p(1.0, 1.0, 0.1);
        let rho = solve_rho_star(&q).unwrap();
        let prod = kappa(rho, &q).unwrap() * main_lemma_poly(0.1 / (2.0 * rho));
        assert!((prod - 0.107_036_327_860_056_8).abs() < 1e-12);
        assert!(!lambda_admissible(&q, 1, 1.5 / prod).unwrap());
    }

    #[test]
    fn g_d_cases() {
        assert_eq!(g_d(10.0, 1), 10.0);
        assert_eq!(g_d(10.0, 3), 1.0);
        assert!((g_d(core::f64::consts::E.powi(2), 2) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn scaling_window() {
        assert!(ScalingParams::with_exponent(1, 64, 0.75).is_ok());
        assert!(matches!(ScalingParams::new(1, 64, 8.0), Err(Error::Scaling { .. })));
        assert!(ScalingParams::new(1, 64, 64.0).is_err());
        assert!(ScalingParams::new(1, 64, 8.01).is_ok());
        assert!(ScalingParams::new(1, 1, 1.0).is_err());
        assert!(ScalingParams::new(0, 8, 4.0).is_err());
        let s = ScalingParams::default_for(64).unwrap();
        assert_eq!(s.a_n, 23.0);
        // d = 3: lower bound n^2
        assert!(ScalingParams::new(3, 8, 64.0).is_err());
        assert!(ScalingParams::new(3, 8, 65.0).is_ok());
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 1.0, 0.0).is_err());
        assert!(ModelParams::new(1.0, 0.0, 0.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, -1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, -0.999).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn params() -> impl Strategy<Value = ModelParams> {
            (0.01f64..10.0, 0.01f64..10.0, -0.999f64..10.0)
                .prop_map(|(a, b, f)| ModelParams { a, b, lambda: f * a })
        }

        proptest! {
            #[test]
            fn root_is_zero(q in params()) {
                let r = solve_rho_star(&q).unwrap();
                prop_assert!(r > 0.0 && r < 1.0);
                prop_assert!(reaction(r, &q).unwrap().abs() < 1e-12);
            }

            #[test]
            fn slope_matches_finite_difference(q in params()) {
                let r = solve_rho_star(&q).unwrap();
                let h = 1e-5;
                let fd = (reaction(r + h, &q).unwrap() - reaction(r - h, &q).unwrap()) / (2.0 * h);
                prop_assert!((fd - reaction_slope(r, &q)).abs() < 1e-8);
            }

            #[test]
            fn noise_positive(q in params(), rho in 0.0f64..=1.0) {
                prop_assert!(noise(rho, &q).unwrap() > 0.0);
            }

            #[test]
            fn linear_case_is_exact(a in 0.01f64..10.0, b in 0.01f64..10.0) {
                let q = ModelParams { a, b, lambda: 0.0 };
                prop_assert_eq!(solve_rho_star(&q).unwrap(), a / (a + b));
            }
        }
    }
}
