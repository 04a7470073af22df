//! Infinite-time averages of S₂, the equilibrium and relaxation measures,
//! and histogram densities of S̄₂.

use crate::dynamics::{clamp_s2, BatchPropagator, PureState, SparseState, SpectralDecomposition};
use crate::ensemble::{CouplingStrength, SubsystemDims};
use crate::error::{Error, Result};
use crate::linalg;
use faer::{c64, Mat, MatRef};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Minimum number of distinct iteration counts in an empirical window.
pub const MIN_DISTINCT_SAMPLES: usize = 10;
pub const DEFAULT_WINDOW: [f64; 2] = [2.0, 4.0];
pub const DEFAULT_WINDOW_SAMPLES: usize = 200;

// ---------------------------------------------------------------- exact ITA

/// Gram matrix `G[m, m'] = tr(ρ_A^m ρ_A^{m'}) + tr(ρ_B^m ρ_B^{m'})` over the
/// eigenvectors, so that `μ̄₂ = pᵀ G p − Σ_m p_m² μ₂(m)`.
pub struct ItaGram {
    dims: SubsystemDims,
    gram: Mat<f64>,
}

impl ItaGram {
    pub fn new(sd: &SpectralDecomposition, dims: SubsystemDims) -> Result<Self> {
        let m = dims.total();
        if sd.dim() != m {
            return Err(Error::DimensionMismatch { expected: m, got: sd.dim() });
        }
        sd.check_nondegenerate()?;
        let (na, nb) = (dims.n_a(), dims.n_b());
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
            .into_par_iter()
            .map(|c| {
                let col = sd.eigenvectors.col(c).try_as_col_major().expect("contiguous column").as_slice();
                let x = MatRef::from_column_major_slice(col, nb, na);
                let mut ra = Mat::<c64>::zeros(na, na);
                linalg::gemm(ra.as_mut(), x.transpose(), x.conjugate());
                let mut rb = Mat::<c64>::zeros(nb, nb);
                linalg::gemm(rb.as_mut(), x, x.adjoint());
                (flatten_hermitian(&ra), flatten_hermitian(&rb))
            })
            .collect();
        let ra = Mat::<f64>::from_fn(m, na * na, |i, j| rows[i].0[j]);
        let rb = Mat::<f64>::from_fn(m, nb * nb, |i, j| rows[i].1[j]);
        drop(rows);
        let mut gram = Mat::<f64>::zeros(m, m);
        linalg::gemm_real(gram.as_mut(), ra.as_ref(), ra.transpose());
        let mut gb = Mat::<f64>::zeros(m, m);
        linalg::gemm_real(gb.as_mut(), rb.as_ref(), rb.transpose());
        gram += &gb;
        Ok(Self { dims, gram })
    }

    /// Eigenvector purity μ₂(m) = G[m, m] / 2.
    pub fn eigenvector_purity(&self, m: usize) -> f64 {
        0.5 * self.gram[(m, m)]
    }

    /// S̄₂ from eigenbasis occupation probabilities.
    pub fn s2bar(&self, p: &[f64]) -> Result<f64> {
        let m = self.dims.total();
        if p.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: p.len() });
        }
        let pm = MatRef::from_column_major_slice(p, m, 1);
        Ok(self.s2bar_batch(pm)[0])
    }

    /// S̄₂ for every column of an occupation-probability matrix.
    pub fn s2bar_batch(&self, weights: MatRef<'_, f64>) -> Vec<f64> {
        let m = self.dims.total();
        let s = weights.ncols();
        let mut gp = Mat::<f64>::zeros(m, s);
        linalg::gemm_real(gp.as_mut(), self.gram.as_ref(), weights);
        (0..s)
            .map(|q| {
                let mut mu = 0.0;
                for r in 0..m {
                    let pr = weights[(r, q)];
                    mu += pr * gp[(r, q)] - pr * pr * 0.5 * self.gram[(r, r)];
                }
                clamp_s2(1.0 - mu, self.dims)
            })
            .collect()
    }
}

// Real vector v(ρ) with v(ρ)·v(σ) = tr(ρσ) for Hermitian ρ, σ.
fn flatten_hermitian(rho: &Mat<c64>) -> Vec<f64> {
    let n = rho.nrows();
    let r2 = std::f64::consts::SQRT_2;
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        v.push(rho[(i, i)].re);
    }
    for j in 0..n {
        for i in 0..j {
            v.push(r2 * rho[(i, j)].re);
            v.push(r2 * rho[(i, j)].im);
        }
    }
    v
}

/// Exact infinite-time average of S₂ assuming distinct level spacings.
pub fn infinite_time_avg_exact(state0: &PureState, sd: &SpectralDecomposition, dims: SubsystemDims) -> Result<f64> {
    if state0.dim() != dims.total() {
        return Err(Error::DimensionMismatch { expected: dims.total(), got: state0.dim() });
    }
    let gram = ItaGram::new(sd, dims)?;
    let p: Vec<f64> = sd.coefficients(state0).iter().map(|z| z.norm_sqr()).collect();
    gram.s2bar(&p)
}

/// Exact S̄₂ for many sparse states sharing one decomposition.
pub fn infinite_time_avg_exact_batch(
    gram: &ItaGram,
    propagator: &BatchPropagator<'_>,
    states: &[SparseState],
) -> Vec<f64> {
    // bounded memory: one M × 1024 weight block at a time
    states
        .chunks(1024)
        .flat_map(|chunk| {
            let w = propagator.eigen_weights(chunk);
            gram.s2bar_batch(w.as_ref())
        })
        .collect()
}

// ---------------------------------------------------------------- empirical ITA

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// NaN for a single sample; written as JSON null.
    #[serde(deserialize_with = "nan_from_null")]
    pub std_error: f64,
    pub samples: usize,
}

fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nans_from_nulls<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

/// Distinct iteration counts for `n_samples` uniform times in the window.
pub fn window_iterations<R: Rng + ?Sized>(
    coupling: &CouplingStrength,
    window: [f64; 2],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let [lo, hi] = window;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("bad window [{lo}, {hi}]")));
    }
    if lo < 2.0 {
        log::warn!("averaging window starts at t = {lo}, before saturation");
    }
    let (n_lo, n_hi) = (coupling.iterations(lo)?, coupling.iterations(hi)?);
    iteration_samples(n_lo, n_hi, n_samples, rng)
}

/// Distinct uniform integers in `[n_lo, n_hi]`, sorted.
pub fn iteration_samples<R: Rng + ?Sized>(n_lo: u64, n_hi: u64, n_samples: usize, rng: &mut R) -> Result<Vec<u64>> {
    let available = n_hi.saturating_sub(n_lo) + 1;
    if (available as usize) < MIN_DISTINCT_SAMPLES {
        return Err(Error::InsufficientSampling { distinct: available as usize, required: MIN_DISTINCT_SAMPLES });
    }
    let mut ns: Vec<u64> = (0..n_samples).map(|_| rng.random_range(n_lo..=n_hi)).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < MIN_DISTINCT_SAMPLES {
        return Err(Error::InsufficientSampling { distinct: ns.len(), required: MIN_DISTINCT_SAMPLES });
    }
    Ok(ns)
}

/// Mean of `sampler(n)` over the given iteration counts.
pub fn time_average<F: FnMut(u64) -> Result<f64>>(iterations: &[u64], mut sampler: F) -> Result<Estimate> {
    let values = iterations.iter().map(|&n| sampler(n)).collect::<Result<Vec<_>>>()?;
    mean_estimate(&values)
}

/// Empirical S̄₂: mean S₂ over uniform times in a window (rescaled units).
pub fn infinite_time_avg_empirical<R, F>(
    sampler: F,
    coupling: &CouplingStrength,
    window: [f64; 2],
    n_samples: usize,
    rng: &mut R,
) -> Result<Estimate>
where
    R: Rng + ?Sized,
    F: FnMut(u64) -> Result<f64>,
{
    let ns = window_iterations(coupling, window, n_samples, rng)?;
    time_average(&ns, sampler)
}

/// Empirical S̄₂ over a window given in raw iteration counts; usable at Λ = 0.
pub fn infinite_time_avg_iterations<R, F>(sampler: F, n_window: [u64; 2], n_samples: usize, rng: &mut R) -> Result<Estimate>
where
    R: Rng + ?Sized,
    F: FnMut(u64) -> Result<f64>,
{
    let ns = iteration_samples(n_window[0], n_window[1], n_samples, rng)?;
    time_average(&ns, sampler)
}

/// S₂ of every state at every window iteration count, time-major.
#[derive(Clone, Debug)]
pub struct WindowSamples {
    pub iterations: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

impl WindowSamples {
    pub fn collect(propagator: &BatchPropagator<'_>, iterations: &[u64]) -> Self {
        let values = iterations.iter().map(|&n| propagator.linear_entropies(n)).collect();
        Self { iterations: iterations.to_vec(), values }
    }

    /// Per-state time averages.
    pub fn state_means(&self) -> Vec<f64> {
        let states = self.values.first().map_or(0, Vec::len);
        let mut acc = vec![0.0; states];
        for row in &self.values {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.values.len() as f64;
        acc.into_iter().map(|a| a / n).collect()
    }

    pub fn merge(parts: Vec<WindowSamples>) -> Result<Self> {
        let mut it = parts.into_iter();
        let mut out = it.next().ok_or_else(|| Error::InvalidParameter("nothing to merge".into()))?;
        for p in it {
            if p.iterations.len() != out.iterations.len() {
                return Err(Error::DimensionMismatch { expected: out.iterations.len(), got: p.iterations.len() });
            }
            for (row, extra) in out.values.iter_mut().zip(p.values) {
                row.extend(extra);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- measures

pub fn mean_estimate(x: &[f64]) -> Result<Estimate> {
    if x.is_empty() {
        return Err(Error::InsufficientSampling { distinct: 0, required: 1 });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std_error = if x.len() > 1 { (unbiased_variance(x, mean) / n).sqrt() } else { f64::NAN };
    Ok(Estimate { mean, std_error, samples: x.len() })
}

// shifted by the first sample so constant input gives exactly zero
fn unbiased_variance(x: &[f64], mean: f64) -> f64 {
    let k = x[0];
    let n = x.len() as f64;
    let s: f64 = x.iter().map(|v| (v - k).powi(2)).sum();
    let d = mean - k;
    ((s - n * d * d) / (n - 1.0)).max(0.0)
}

/// σ²(X) = Var(X)/⟨X⟩², unbiased variance.
pub fn equilibrium_measure(s2bar_samples: &[f64]) -> Result<f64> {
    normalized_variance(s2bar_samples)
}

fn normalized_variance(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::InsufficientSampling { distinct: x.len(), required: 2 });
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    if mean == 0.0 {
        return Err(Error::UndefinedMeasure("normalized variance of zero-mean samples".into()));
    }
    Ok(unbiased_variance(x, mean) / (mean * mean))
}

/// Normalized variance with a jackknife standard error.
pub fn normalized_variance_estimate(x: &[f64]) -> Result<Estimate> {
    let value = normalized_variance(x)?;
    let n = x.len();
    if n < 3 {
        return Ok(Estimate { mean: value, std_error: f64::NAN, samples: n });
    }
    let s1: f64 = x.iter().sum();
    let s2: f64 = x.iter().map(|v| v * v).sum();
    let m = (n - 1) as f64;
    let loo: Vec<f64> = x
        .iter()
        .map(|&v| {
            let mean = (s1 - v) / m;
            let var = ((s2 - v * v) - m * mean * mean) / (m - 1.0);
            var / (mean * mean)
        })
        .collect();
    let lm = loo.iter().sum::<f64>() / n as f64;
    let jk = loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>() * (n as f64 - 1.0) / n as f64;
    Ok(Estimate { mean: value, std_error: jk.sqrt(), samples: n })
}

pub const MIN_RELAXATION_MEMBERS: usize = 100;

/// Time average of the across-ensemble normalized variance σ²(S₂(t)).
/// `samples_at_times[i]` holds the ensemble of S₂ values at the i-th time.
pub fn relaxation_measure(samples_at_times: &[Vec<f64>]) -> Result<Estimate> {
    if samples_at_times.is_empty() {
        return Err(Error::InsufficientSampling { distinct: 0, required: 1 });
    }
    let members = samples_at_times.iter().map(Vec::len).min().unwrap_or(0);
    if members < MIN_RELAXATION_MEMBERS {
        return Err(Error::InsufficientSampling { distinct: members, required: MIN_RELAXATION_MEMBERS });
    }
    let per_time = samples_at_times.iter().map(|s| normalized_variance(s)).collect::<Result<Vec<_>>>()?;
    let mean = per_time.iter().sum::<f64>() / per_time.len() as f64;
    // consecutive times are correlated; the error uses the ensemble size
    let typical = normalized_variance_estimate(&samples_at_times[samples_at_times.len() / 2])?;
    Ok(Estimate { mean, std_error: typical.std_error, samples: members })
}

// ---------------------------------------------------------------- densities

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binning {
    Log,
    Linear,
}

impl std::str::FromStr for Binning {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Binning::Log),
            "linear" => Ok(Binning::Linear),
            other => Err(Error::InvalidParameter(format!("unknown binning '{other}'"))),
        }
    }
}

pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramDensity {
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    pub counts: Vec<u64>,
    pub total_count: u64,
    /// Samples below the first edge, counted into the first bin.
    pub underflow: u64,
}

impl HistogramDensity {
    /// Σ density · width.
    pub fn integral(&self) -> f64 {
        self.density.iter().zip(self.bin_edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum()
    }

    fn from_edges(samples: &[f64], bin_edges: Vec<f64>, log: bool) -> Self {
        let bins = bin_edges.len() - 1;
        let (lo, hi) = (bin_edges[0], bin_edges[bins]);
        let mut counts = vec![0u64; bins];
        let mut underflow = 0;
        for &x in samples {
            let i = if x < lo {
                underflow += 1;
                0
            } else if x >= hi {
                bins - 1
            } else {
                let f = if log { (x / lo).ln() / (hi / lo).ln() } else { (x - lo) / (hi - lo) };
                let mut i = ((f * bins as f64) as usize).min(bins - 1);
                // guard against rounding at interior edges
                while i > 0 && x < bin_edges[i] {
                    i -= 1;
                }
                while i + 1 < bins && x >= bin_edges[i + 1] {
                    i += 1;
                }
                i
            };
            counts[i] += 1;
        }
        let total = samples.len() as f64;
        let density = counts
            .iter()
            .zip(bin_edges.windows(2))
            .map(|(&c, w)| c as f64 / (total * (w[1] - w[0])))
            .collect();
        Self { bin_edges, density, counts, total_count: samples.len() as u64, underflow }
    }
}

/// Normalized histogram over the sample range.
pub fn s2bar_density(samples: &[f64], binning: Binning, bins: usize) -> Result<HistogramDensity> {
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientSampling { distinct: 0, required: 1 });
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite sample {x}")));
    }
    if samples.len() <= bins {
        log::warn!("{} samples for {bins} bins", samples.len());
    }
    let log = binning == Binning::Log;
    let floor = |x: f64| if log { x.max(LOG_FLOOR) } else { x };
    let lo = floor(samples.iter().copied().fold(f64::INFINITY, f64::min));
    let hi = floor(samples.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let edges = if hi > lo {
        make_edges(lo, hi, bins, binning)
    } else {
        // a single value sits in the middle of the first bin
        if log {
            let r = 1.0 + 1e-6;
            make_edges(lo / r, lo * r.powi(2 * bins as i32 - 1), bins, binning)
        } else {
            let d = 1e-6 * lo.abs().max(1e-6);
            make_edges(lo - d, lo + d * (2 * bins - 1) as f64, bins, binning)
        }
    };
    Ok(HistogramDensity::from_edges(samples, edges, log))
}

/// Histogram on fixed edges; out-of-range samples fall in the end bins.
pub fn s2bar_density_on(samples: &[f64], bin_edges: Vec<f64>, binning: Binning) -> Result<HistogramDensity> {
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("bin edges must be strictly increasing".into()));
    }
    if binning == Binning::Log && bin_edges[0] <= 0.0 {
        return Err(Error::InvalidParameter("log bins need positive edges".into()));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientSampling { distinct: 0, required: 1 });
    }
    Ok(HistogramDensity::from_edges(samples, bin_edges, binning == Binning::Log))
}

pub fn make_edges(lo: f64, hi: f64, bins: usize, binning: Binning) -> Vec<f64> {
    let mut e: Vec<f64> = match binning {
        Binning::Linear => (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect(),
        Binning::Log => {
            let r = (hi / lo).ln();
            (0..=bins).map(|i| lo * (r * i as f64 / bins as f64).exp()).collect()
        }
    };
    e[0] = lo;
    e[bins] = hi;
    e
}

// ---------------------------------------------------------------- summary

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub states_per_realization: usize,
    pub realizations: usize,
}

impl SampleCounts {
    pub fn total(&self) -> usize {
        self.states_per_realization * self.realizations
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub t_grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    #[serde(deserialize_with = "nans_from_nulls")]
    pub mean_curve_std_error: Vec<f64>,
    pub s2bar_samples: Vec<f64>,
    pub mean_s2bar: Estimate,
    /// `None` when fewer than two S̄₂ samples or a zero mean.
    pub equilibrium_measure: Option<Estimate>,
    pub relaxation_measure: Option<Estimate>,
    pub sample_counts: SampleCounts,
}

impl EnsembleSummary {
    /// `traces[state][time]`.
    pub fn from_parts(
        t_grid: Vec<f64>,
        traces: &[Vec<f64>],
        s2bar_samples: Vec<f64>,
        window: &WindowSamples,
        sample_counts: SampleCounts,
    ) -> Result<Self> {
        let (mean_curve, mean_curve_std_error) = mean_curve(traces, t_grid.len())?;
        let mean_s2bar = mean_estimate(&s2bar_samples)?;
        let equilibrium_measure = optional_measure(normalized_variance_estimate(&s2bar_samples))?;
        let relaxation_measure = optional_measure(relaxation_measure(&window.values))?;
        Ok(Self {
            t_grid,
            mean_curve,
            mean_curve_std_error,
            s2bar_samples,
            mean_s2bar,
            equilibrium_measure,
            relaxation_measure,
            sample_counts,
        })
    }
}

fn optional_measure(r: Result<Estimate>) -> Result<Option<Estimate>> {
    match r {
        Ok(e) => Ok(Some(e)),
        Err(Error::InsufficientSampling { .. } | Error::UndefinedMeasure(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Pointwise mean and standard error over traces of equal length.
pub fn mean_curve(traces: &[Vec<f64>], len: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if traces.is_empty() {
        return Err(Error::InsufficientSampling { distinct: 0, required: 1 });
    }
    if let Some(t) = traces.iter().find(|t| t.len() != len) {
        return Err(Error::DimensionMismatch { expected: len, got: t.len() });
    }
    let mut means = Vec::with_capacity(len);
    let mut errs = Vec::with_capacity(len);
    let mut col = vec![0.0; traces.len()];
    for i in 0..len {
        for (c, t) in col.iter_mut().zip(traces) {
            *c = t[i];
        }
        let e = mean_estimate(&col)?;
        means.push(e.mean);
        errs.push(e.std_error);
    }
    Ok((means, errs))
}
