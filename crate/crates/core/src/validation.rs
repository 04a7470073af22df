//! Monte Carlo checks of the coupling matrix-element statistics and of Haar
//! eigenvector moments against their exact finite-N values.

use crate::ensemble::{sample_haar_unitary, InteractionPhases, SubsystemDims};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use faer::c64;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const CHUNK: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub quantity: String,
    pub analytic: f64,
    pub monte_carlo: f64,
    pub standard_error: f64,
    pub n_samples: usize,
}

impl MomentReport {
    pub fn from_samples(quantity: impl Into<String>, analytic: f64, samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { quantity: quantity.into(), analytic, monte_carlo: mean, standard_error: se, n_samples: n }
    }

    /// Deviation in units of the standard error.
    pub fn z_score(&self) -> f64 {
        let d = (self.monte_carlo - self.analytic).abs();
        if self.standard_error > 0.0 {
            d / self.standard_error
        } else if d <= 1e-12 * self.analytic.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn passes(&self) -> bool {
        self.z_score() <= 3.0
    }
}

impl std::fmt::Display for MomentReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<40} analytic {:>12.6e}  mc {:>12.6e} ± {:>10.3e}  z {:>5.2}  {}",
            self.quantity,
            self.analytic,
            self.monte_carlo,
            self.standard_error,
            self.z_score(),
            if self.passes() { "PASS" } else { "FAIL" }
        )
    }
}

/// Runs `per_sample` over `n` samples in fixed chunks, each with its own
/// stream seeded from `rng`, so the output is independent of scheduling.
fn sample_parallel<R, T, F>(n: usize, rng: &mut R, per_sample: F) -> Vec<T>
where
    R: Rng + ?Sized,
    T: Send,
    F: Fn(&mut StreamRng) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let seeds: Vec<u64> = (0..chunks).map(|_| rng.random()).collect();
    let parts: Vec<Vec<T>> = seeds
        .into_par_iter()
        .enumerate()
        .map(|(c, seed)| {
            let mut r = StreamRng::seed_from_u64(seed);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| per_sample(&mut r)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// The first `rows` rows of a Haar unitary: Gram-Schmidt on Gaussian vectors
/// has exactly the Haar marginal.
pub fn haar_rows<R: Rng + ?Sized>(n: usize, rows: usize, rng: &mut R) -> Vec<Vec<c64>> {
    let mut out: Vec<Vec<c64>> = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut v: Vec<c64> = (0..n).map(|_| c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        for u in &out {
            let proj: c64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (x, a) in v.iter_mut().zip(u) {
                *x -= proj * a;
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= norm);
        out.push(v);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairType {
    /// j ≠ j′, k ≠ k′
    BothOff,
    /// j = j′, k ≠ k′
    JEqual,
    /// j ≠ j′, k = k′
    KEqual,
    Diagonal,
}

impl PairType {
    pub const ALL: [PairType; 4] = [PairType::BothOff, PairType::JEqual, PairType::KEqual, PairType::Diagonal];

    fn deltas(self) -> (bool, bool) {
        match self {
            PairType::BothOff => (false, false),
            PairType::JEqual => (true, false),
            PairType::KEqual => (false, true),
            PairType::Diagonal => (true, true),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PairType::BothOff => "both_off",
            PairType::JEqual => "j_equal",
            PairType::KEqual => "k_equal",
            PairType::Diagonal => "diagonal",
        }
    }
}

impl std::str::FromStr for PairType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PairType::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown pair type '{s}'")))
    }
}

/// π²(1+δ_jj′)(1+δ_kk′) / (3(N_A+1)(N_B+1)).
pub fn v_variance_analytic(dims: SubsystemDims, pair: PairType) -> f64 {
    let (dj, dk) = pair.deltas();
    let f = |d: bool| if d { 2.0 } else { 1.0 };
    PI * PI * f(dj) * f(dk) / (3.0 * (dims.n_a() as f64 + 1.0) * (dims.n_b() as f64 + 1.0))
}

// 𝒱 = Σ_ab conj(u_ja) u_j′a conj(u_kb) u_k′b 2πξ_ab = αᵀ (2πΞ) β
fn v_element(alpha: &[c64], beta: &[c64], xi: &InteractionPhases) -> c64 {
    let nb = beta.len();
    let x = xi.as_slice();
    let mut acc = c64::new(0.0, 0.0);
    for (a, &al) in alpha.iter().enumerate() {
        let row = &x[a * nb..(a + 1) * nb];
        let mut inner = c64::new(0.0, 0.0);
        for (b, &be) in beta.iter().enumerate() {
            inner += be * row[b];
        }
        acc += al * inner;
    }
    acc * (2.0 * PI)
}

fn pair_weights(u: &[c64], v: &[c64]) -> Vec<c64> {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).collect()
}

fn check_samples(n_samples: usize, min: usize) -> Result<()> {
    if n_samples < min {
        return Err(Error::InsufficientSampling { distinct: n_samples, required: min });
    }
    Ok(())
}

fn v_samples<R: Rng + ?Sized>(dims: SubsystemDims, pair: PairType, n_samples: usize, rng: &mut R) -> Vec<c64> {
    let (dj, dk) = pair.deltas();
    sample_parallel(n_samples, rng, |r| {
        let ua = haar_rows(dims.n_a(), if dj { 1 } else { 2 }, r);
        let ub = haar_rows(dims.n_b(), if dk { 1 } else { 2 }, r);
        let xi = InteractionPhases::sample(dims, r);
        let alpha = pair_weights(&ua[0], ua.last().expect("row"));
        let beta = pair_weights(&ub[0], ub.last().expect("row"));
        v_element(&alpha, &beta, &xi)
    })
}

/// ⟨|𝒱_{jk,j′k′}|²⟩ over fresh unitaries and phases.
pub fn v_element_variance<R: Rng + ?Sized>(
    dims: SubsystemDims,
    pair: PairType,
    n_samples: usize,
    rng: &mut R,
) -> Result<MomentReport> {
    check_samples(n_samples, 1000)?;
    let x: Vec<f64> = v_samples(dims, pair, n_samples, rng).iter().map(|z| z.norm_sqr()).collect();
    Ok(MomentReport::from_samples(
        format!("<|V|^2> {} ({},{})", pair.label(), dims.n_a(), dims.n_b()),
        v_variance_analytic(dims, pair),
        &x,
    ))
}

/// Covariances ⟨x_jk x_j′k′⟩ of rescaled diagonal elements, against
/// (1+δ_jj′)(1+δ_kk′)/4. Reports self, same-j, same-k and distinct pairs.
pub fn diag_covariance<R: Rng + ?Sized>(dims: SubsystemDims, n_samples: usize, rng: &mut R) -> Result<Vec<MomentReport>> {
    check_samples(n_samples, 1000)?;
    let scale = v_variance_analytic(dims, PairType::Diagonal).sqrt();
    let rows = sample_parallel(n_samples, rng, |r| {
        let ua = haar_rows(dims.n_a(), 2, r);
        let ub = haar_rows(dims.n_b(), 2, r);
        let xi = InteractionPhases::sample(dims, r);
        let sq = |u: &[c64]| u.iter().map(|z| c64::new(z.norm_sqr(), 0.0)).collect::<Vec<_>>();
        let (a0, a1, b0, b1) = (sq(&ua[0]), sq(&ua[1]), sq(&ub[0]), sq(&ub[1]));
        let x = |a: &[c64], b: &[c64]| v_element(a, b, &xi).re / scale;
        let (x00, x01, x10, x11) = (x(&a0, &b0), x(&a0, &b1), x(&a1, &b0), x(&a1, &b1));
        [x00 * x00, x00 * x01, x00 * x10, x00 * x11]
    });
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let tag = format!("({},{})", dims.n_a(), dims.n_b());
    Ok(vec![
        MomentReport::from_samples(format!("<x_jk x_jk> {tag}"), 1.0, &col(0)),
        MomentReport::from_samples(format!("<x_jk x_jk'> {tag}"), 0.5, &col(1)),
        MomentReport::from_samples(format!("<x_jk x_j'k> {tag}"), 0.5, &col(2)),
        MomentReport::from_samples(format!("<x_jk x_j'k'> {tag}"), 0.25, &col(3)),
    ])
}

/// ⟨|z_i|⁴⟩, ⟨|z_i|²|z_j|²⟩, ⟨|z_i|⁸⟩, ⟨|z_i|⁴|z_j|⁴⟩ for Haar columns.
pub fn haar_moments<R: Rng + ?Sized>(n: usize, n_samples: usize, rng: &mut R) -> Result<Vec<MomentReport>> {
    if n == 0 {
        return Err(Error::InvalidDimension("Haar moments need n >= 1".into()));
    }
    check_samples(n_samples, 2)?;
    let rows = sample_parallel(n_samples, rng, |r| {
        // full unitaries for small n, the exact column marginal otherwise
        let col: Vec<f64> = if n <= 16 {
            let u = sample_haar_unitary(n, r).expect("valid dimension");
            (0..n).map(|i| u.get(i, 0).norm_sqr()).collect()
        } else {
            haar_rows(n, 1, r).remove(0).iter().map(|z| z.norm_sqr()).collect()
        };
        let p0 = col[0];
        let p1 = if n > 1 { col[1] } else { f64::NAN };
        [p0 * p0, p0 * p1, p0.powi(4), p0 * p0 * p1 * p1]
    });
    let nf = n as f64;
    let c = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let mut out = vec![MomentReport::from_samples(format!("<|z_i|^4> N={n}"), 2.0 / (nf * (nf + 1.0)), &c(0))];
    let d4 = nf * (nf + 1.0) * (nf + 2.0) * (nf + 3.0);
    if n > 1 {
        out.push(MomentReport::from_samples(format!("<|z_i|^2|z_j|^2> N={n}"), 1.0 / (nf * (nf + 1.0)), &c(1)));
    }
    out.push(MomentReport::from_samples(format!("<|z_i|^8> N={n}"), 24.0 / d4, &c(2)));
    if n > 1 {
        out.push(MomentReport::from_samples(format!("<|z_i|^4|z_j|^4> N={n}"), 4.0 / d4, &c(3)));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentialReport {
    pub ks_statistic: f64,
    pub ks_threshold: f64,
    pub mean: MomentReport,
    pub variance: MomentReport,
}

impl ExponentialReport {
    pub fn passes(&self) -> bool {
        self.ks_statistic < self.ks_threshold && self.mean.passes() && self.variance.passes()
    }
}

/// KS test of w = |𝒱|²/⟨|𝒱|²⟩ for off-diagonal elements against e^{−w}.
pub fn off_diagonal_exponential_check<R: Rng + ?Sized>(
    dims: SubsystemDims,
    n_samples: usize,
    rng: &mut R,
) -> Result<ExponentialReport> {
    check_samples(n_samples, 10_000)?;
    let scale = v_variance_analytic(dims, PairType::BothOff);
    let mut w: Vec<f64> = v_samples(dims, PairType::BothOff, n_samples, rng).iter().map(|z| z.norm_sqr() / scale).collect();
    let tag = format!("({},{})", dims.n_a(), dims.n_b());
    let mean = MomentReport::from_samples(format!("mean w {tag}"), 1.0, &w);
    // squared deviations from the exact mean estimate the variance
    let dev: Vec<f64> = w.iter().map(|x| (x - 1.0).powi(2)).collect();
    let variance = MomentReport::from_samples(format!("var w {tag}"), 1.0, &dev);
    w.sort_by(f64::total_cmp);
    let n = w.len() as f64;
    let ks = w
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-x).exp();
            (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    Ok(ExponentialReport { ks_statistic: ks, ks_threshold: 1.36 / n.sqrt(), mean, variance })
}

/// Every check at the given sample count; used by the `validate` command.
pub fn standard_suite<R: Rng + ?Sized>(n_samples: usize, rng: &mut R) -> Result<(Vec<MomentReport>, Vec<ExponentialReport>)> {
    let n = n_samples.max(1000);
    let mut reports = Vec::new();
    for d in [SubsystemDims::new(2, 2)?, SubsystemDims::new(10, 20)?, SubsystemDims::new(50, 50)?] {
        for pair in PairType::ALL {
            reports.push(v_element_variance(d, pair, n, rng)?);
        }
    }
    reports.extend(diag_covariance(SubsystemDims::new(50, 50)?, n, rng)?);
    for dim in [1, 2, 4, 50] {
        reports.extend(haar_moments(dim, n, rng)?);
    }
    let exp = vec![off_diagonal_exponential_check(SubsystemDims::new(50, 50)?, n.max(10_000), rng)?];
    Ok((reports, exp))
}
