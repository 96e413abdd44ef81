//! Synthetic spike signals, accelerometer-style preprocessing, and the
//! statistical metrics used to compare estimators.
//!
//! Generation is fully deterministic given a seed; parallel batch runs should
//! derive one seed per instance with [`derived_seed`].

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::exact::NONZERO_TOL;
use crate::{Error, Result};

/// Parameters for one synthetic instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Signal length.
    pub n: usize,
    /// Number of spikes drawn (overlaps allowed).
    pub s: usize,
    /// Length of each spike.
    pub h: usize,
    /// Noise scale.
    pub sigma: f64,
    /// RNG seed.
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.h == 0 {
            return Err(Error::InvalidInput(
                "signal length and spike length must be positive".into(),
            ));
        }
        if self.h * self.s > self.n {
            return Err(Error::InvalidInput(format!(
                "spikes cover h*s = {} slots but the signal has only {}",
                self.h * self.s,
                self.n
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise scale {} out of range",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Covariance of a Brownian bridge sampled at `h` interior points:
/// `B_ij = i (h + 1 - j) / (h + 1)` for `i <= j`, one-based.
pub fn brownian_bridge_cov(h: usize) -> DMatrix<f64> {
    let denom = (h + 1) as f64;
    DMatrix::from_fn(h, h, |r, c| {
        let (i, j) = (r.min(c) + 1, r.max(c) + 1);
        (i as f64) * (denom - j as f64) / denom
    })
}

fn bridge_factor(h: usize) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let b = brownian_bridge_cov(h);
    for jitter in [0.0, 1e-12, 1e-11, 1e-10] {
        let mut m = b.clone();
        for i in 0..h {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c);
        }
    }
    Err(Error::Solver(format!(
        "bridge covariance for h = {h} is not positive definite"
    )))
}

/// Sparse nonnegative signal built from `s` Brownian-bridge spikes of length
/// `h` at uniform random positions; overlapping spikes add up.
pub fn gen_true_signal(cfg: &SyntheticConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut y_hat = vec![0.0; cfg.n];
    if cfg.s == 0 {
        return Ok(y_hat);
    }
    let chol = bridge_factor(cfg.h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.s {
        let start = rng.gen_range(0..=cfg.n - cfg.h);
        let z = DVector::from_fn(cfg.h, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = chol.l() * z;
        for i in 0..cfg.h {
            y_hat[start + i] += v[i].abs();
        }
    }
    Ok(y_hat)
}

/// One draw from N(0, sigma^2) conditioned on being at least `lower`.
/// Rejection sampling, switching to inverse-CDF when the acceptance rate
/// drops below 1%.
fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64, lower: f64) -> f64 {
    if sigma == 0.0 {
        return lower.max(0.0);
    }
    let std = Normal::new(0.0, 1.0).unwrap();
    let alpha = lower / sigma;
    if 1.0 - std.cdf(alpha) >= 0.01 {
        loop {
            let draw = sigma * rng.sample::<f64, _>(StandardNormal);
            if draw >= lower {
                return draw;
            }
        }
    }
    let u = rng.gen_range(std.cdf(alpha)..1.0);
    sigma * std.inverse_cdf(u)
}

/// Adds truncated-normal noise (lower bound `-y_hat_i`, so observations stay
/// nonnegative) and rescales to unit infinity norm. Returns the noisy signal
/// and the true signal rescaled by the same factor.
pub fn add_noise_and_scale(y_hat: &[f64], sigma: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise scale {sigma} out of range"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<f64> = y_hat
        .iter()
        .map(|&v| v + truncated_normal(&mut rng, sigma, -v))
        .collect();
    let mut y_true = y_hat.to_vec();
    let peak = y.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak > 0.0 {
        y.iter_mut().for_each(|v| *v /= peak);
        y_true.iter_mut().for_each(|v| *v /= peak);
    }
    Ok((y, y_true))
}

/// Mean absolute successive difference over consecutive windows, rescaled to
/// unit infinity norm. A trailing partial window is dropped.
pub fn windowed_mad(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 2, "windows must hold at least two samples");
    let mut out: Vec<f64> = series
        .chunks_exact(window)
        .map(|w| {
            let total: f64 = w.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
            total / (window - 1) as f64
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |a, &v| a.max(v));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    out
}

/// Estimator quality relative to a known true signal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SignalMetrics {
    /// `||y_true||^2 / ||y_true - y_noisy||^2`; infinite when noise-free.
    pub snr: f64,
    /// `||y_true - x_star||^2 / ||y_true||^2`.
    pub error: f64,
    /// Entries reported nonzero where the true signal is zero.
    pub false_pos: usize,
    /// True nonzeros the estimate misses.
    pub false_neg: usize,
    /// Symmetric difference of the supports; equals false_pos + false_neg.
    pub sparsity_mismatch: usize,
}

pub fn metrics(x_star: &[f64], y_true: &[f64], y_noisy: &[f64]) -> Result<SignalMetrics> {
    if x_star.len() != y_true.len() || y_noisy.len() != y_true.len() {
        return Err(Error::InvalidInput("metric inputs differ in length".into()));
    }
    let sq = |s: f64, d: f64| s + d * d;
    let power = y_true.iter().fold(0.0, |s, &v| sq(s, v));
    if power == 0.0 {
        return Err(Error::InvalidInput(
            "error metric undefined for an all-zero true signal".into(),
        ));
    }
    let noise = y_true
        .iter()
        .zip(y_noisy)
        .fold(0.0, |s, (&t, &o)| sq(s, t - o));
    let resid = x_star
        .iter()
        .zip(y_true)
        .fold(0.0, |s, (&x, &t)| sq(s, t - x));
    let mut false_pos = 0;
    let mut false_neg = 0;
    let mut mismatch = 0;
    for (&x, &t) in x_star.iter().zip(y_true) {
        let on_est = x.abs() > NONZERO_TOL;
        let on_true = t.abs() > NONZERO_TOL;
        false_pos += usize::from(on_est && !on_true);
        false_neg += usize::from(on_true && !on_est);
        mismatch += usize::from(on_est != on_true);
    }
    Ok(SignalMetrics {
        snr: if noise > 0.0 { power / noise } else { f64::INFINITY },
        error: resid / power,
        false_pos,
        false_neg,
        sparsity_mismatch: mismatch,
    })
}

/// Splitmix64 of `base + index`; spreads consecutive indices across the seed
/// space for parallel batch generation.
pub fn derived_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index).wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
