//! Replica statistics.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error; `se` is `None` below two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub count: usize,
    pub mean: f64,
    pub variance: Option<f64>,
    pub se: Option<f64>,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        let mean = if count == 0 { f64::NAN } else { kahan(values.iter().copied()) / count as f64 };
        if count < 2 {
            return Self { count, mean, variance: None, se: None };
        }
        let var = kahan(values.iter().map(|v| (v - mean) * (v - mean))) / (count - 1) as f64;
        Self { count, mean, variance: Some(var), se: Some((var / count as f64).sqrt()) }
    }
}

pub fn kahan(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// `log(mean(exp(x)))`, computed stably.
pub fn log_mean_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    (kahan(x.iter().map(|v| (v - m).exp())) / x.len() as f64).ln() + m
}

/// Kish effective sample size `(Σw)² / Σw²`.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s = kahan(w.iter().copied());
    let s2 = kahan(w.iter().map(|v| v * v));
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}
