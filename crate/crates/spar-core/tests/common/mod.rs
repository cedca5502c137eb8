//! Shared oracles for the integration suites: quadrature, KS statistics,
//! scalar maximum likelihood, and synthetic samplers with known laws.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spar_core::matrix::Matrix;
use spar_core::preprocess::PolarSample;
use spar_core::spar::{gpd_nll, Reparam};
use statrs::distribution::Normal;

/// Composite Simpson integration of `f` over `[a, b]` with `n` (even)
/// intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let x = a + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

pub fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// One-sample Kolmogorov–Smirnov distance against a CDF.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let c = cdf(x);
        d = d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Asymptotic one-sample KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    ((-0.5 * (alpha / 2.0).ln()).sqrt()) / (n as f64).sqrt()
}

/// Coordinate-descent maximum-likelihood fit of constant GPD `(σ, ξ)`.
pub fn scalar_gpd_mle(excesses: &[f64]) -> (f64, f64) {
    let mean = excesses.iter().sum::<f64>() / excesses.len() as f64;
    let nll = |s: f64, x: f64| -> f64 {
        excesses.iter().map(|&y| gpd_nll(y, s, x, Reparam::Direct).0).sum::<f64>()
            / excesses.len() as f64
    };
    let (mut s, mut x) = (mean, 0.1);
    for step in [0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 0.0003] {
        loop {
            let mut improved = false;
            for (ds, dx) in [(step, 0.0), (-step, 0.0), (0.0, 0.3 * step), (0.0, -0.3 * step)] {
                let (ns, nx) = (s + ds, x + dx);
                if ns > 1e-3 && nx > -0.49 && nx < 0.49 && nll(ns, nx) < nll(s, x) {
                    s = ns;
                    x = nx;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }
    (s, x)
}

/// `n` draws from the isotropic bivariate standard normal as a polar
/// sample: angles uniform on the circle, radii Rayleigh(1).
pub fn gaussian_polar(n: usize, seed: u64) -> PolarSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Matrix::zeros(n, 2);
    for i in 0..n {
        x.row_mut(i)[0] = rng.sample(rand_distr::StandardNormal);
        x.row_mut(i)[1] = rng.sample(rand_distr::StandardNormal);
    }
    spar_core::preprocess::to_polar(&x).unwrap()
}

/// Polar sample with uniform circle angles and radii from a mixture:
/// mass `1−α` uniform on `(0.05·u0, u0)`, mass `α` on `u0 + GPD(σ, ξ)`.
/// The `(1−α)`-quantile of the radius is exactly `u0` at every angle.
pub fn grafted_polar(n: usize, u0: f64, sigma: f64, xi: f64, alpha: f64, seed: u64) -> PolarSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spar_core::gpd::GpdParams::new(sigma, xi).unwrap();
    let mut w = Matrix::zeros(n, 2);
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        w.row_mut(i)[0] = theta.cos();
        w.row_mut(i)[1] = theta.sin();
        if rng.random::<f64>() < alpha {
            r.push(u0 + spar_core::gpd::gpd_sample(1, &params, &mut rng).unwrap()[0]);
        } else {
            r.push(u0 * (0.05 + 0.95 * rng.random::<f64>()));
        }
    }
    PolarSample::new(r, w).unwrap()
}

/// Exact constant-output networks for hand-built models.
pub fn constant_threshold_net(d: usize, u0: f64) -> spar_core::neural::MlpParams {
    spar_core::neural::MlpParams::from_parts(
        d,
        vec![1],
        vec![vec![0.0; d]],
        vec![vec![u0.ln()]],
        vec![spar_core::neural::Head::Exponential],
    )
    .unwrap()
}

pub fn constant_gpd_net(d: usize, sigma: f64, xi: f64) -> spar_core::neural::MlpParams {
    let nu = sigma * (1.0 + xi);
    spar_core::neural::MlpParams::from_parts(
        d,
        vec![2],
        vec![vec![0.0; 2 * d]],
        vec![vec![nu.ln(), (std::f64::consts::PI * xi).tan()]],
        vec![spar_core::neural::Head::Exponential, spar_core::neural::Head::ScaledTangent],
    )
    .unwrap()
}

/// Assemble a SPAR model from a polar training sample and fitted networks,
/// with an identity-like marginal transform (ν = 1, m* = 0).
pub fn model_from_polar(
    polar: &PolarSample,
    alpha: f64,
    threshold_net: spar_core::neural::MlpParams,
    gpd_net: spar_core::neural::MlpParams,
) -> spar_core::SparModel {
    let d = polar.dim();
    let u = threshold_net.forward_batch(polar.angles()).unwrap();
    let mut exc = Vec::new();
    let mut body = Vec::new();
    for t in 0..polar.len() {
        if polar.radii()[t] > u.row(t)[0] {
            exc.push(t);
        } else {
            body.push(t);
        }
    }
    let centred = spar_core::preprocess::from_polar(polar);
    spar_core::spar::assemble_model(
        d,
        alpha,
        Reparam::Orthogonal,
        spar_core::preprocess::MarginalTransform::new(vec![1.0; d], vec![0.0; d]).unwrap(),
        threshold_net,
        gpd_net,
        polar.angles().select_rows(&exc),
        centred.select_rows(&body),
    )
    .unwrap()
}

/// 360 unit vectors evenly spaced on the circle.
pub fn circle_probes() -> Vec<[f64; 2]> {
    (0..360)
        .map(|k| {
            let theta = k as f64 / 360.0 * std::f64::consts::TAU;
            [theta.cos(), theta.sin()]
        })
        .collect()
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    num / (da * db).sqrt()
}
