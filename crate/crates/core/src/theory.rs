//! Closed-form and quadrature predictions for the mean linear entropy,
//! its saturation and fluctuations, and the E⊗E distribution of S̄₂.
//!
//! Times are rescaled, `t = n·D·√Λ` with `D = 2π/N`.

use crate::ensemble::SubsystemDims;
use crate::error::{Error, Result};
use libm::erf;
use quadrature::double_exponential::integrate;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

fn pi32() -> f64 {
    PI * PI.sqrt()
}

/// Long-time limit of [`c_function`], (5/8)π^{3/2}.
pub const C_LIMIT: f64 = 5.0 / 8.0 * 5.568_327_996_831_708;
/// Long-time limit of [`c2_function`], (3/16)π^{3/2}.
pub const C2_LIMIT: f64 = 3.0 / 16.0 * 5.568_327_996_831_708;

const C2_TOLERANCE: f64 = 1e-6;

// ---------------------------------------------------------------- ultraweak

/// `⟨c_A⟩⟨c_B⟩(1 − e^{−2t²})`.
pub fn ultraweak_curve(t: f64, mean_c2_a: f64, mean_c2_b: f64) -> f64 {
    mean_c2_a * mean_c2_b * (1.0 - (-2.0 * t * t).exp())
}

pub fn cc_saturation(k_a: usize, k_b: usize) -> f64 {
    (1.0 - 1.0 / k_a as f64) * (1.0 - 1.0 / k_b as f64)
}

pub fn rr_saturation(k_a: usize, k_b: usize) -> f64 {
    let r = |k: usize| (k as f64 - 1.0) / (k as f64 + 1.0);
    r(k_a) * r(k_b)
}

/// Relaxation measure for coherent states, `2/(K_A(K_A−1)K_B(K_B−1))`.
pub fn cc_relaxation(k_a: usize, k_b: usize) -> Result<f64> {
    if k_a < 2 || k_b < 2 {
        return Err(Error::UndefinedMeasure(format!(
            "coherent relaxation needs K >= 2 on both sides, got ({k_a}, {k_b})"
        )));
    }
    let (a, b) = (k_a as f64, k_b as f64);
    Ok(2.0 / (a * (a - 1.0) * b * (b - 1.0)))
}

/// Equilibrium fluctuation σ²(S̄₂)/⟨S̄₂⟩² for random states.
pub fn rr_equilibrium(k_a: usize, k_b: usize) -> f64 {
    let (a, b) = (k_a as f64, k_b as f64);
    let num = 4.0 * (a.powi(3) + b.powi(3) + 4.0 * (a * a + b * b) + a + b - 8.0);
    let den = |k: f64| k.powi(3) + 4.0 * k * k + k - 6.0;
    num / (den(a) * den(b))
}

pub fn rr_equilibrium_asymptote(k_a: usize, k_b: usize) -> f64 {
    4.0 / (k_a as f64).powi(3) + 4.0 / (k_b as f64).powi(3)
}

/// Equilibrium fluctuation plus the temporal part `2⟨c⁴_A⟩⟨c⁴_B⟩/(⟨c_A⟩²⟨c_B⟩²)`.
pub fn relaxation_decomposition(
    sigma2_eq: f64,
    mean_c4_a: f64,
    mean_c4_b: f64,
    mean_c2_a: f64,
    mean_c2_b: f64,
) -> Result<f64> {
    if !(mean_c2_a > 0.0 && mean_c2_b > 0.0) {
        return Err(Error::UndefinedMeasure("zero mean coherence".into()));
    }
    Ok(sigma2_eq + 2.0 * mean_c4_a * mean_c4_b / (mean_c2_a * mean_c2_a * mean_c2_b * mean_c2_b))
}

// ---------------------------------------------------------------- weak coupling

/// C(2;t), the E⊗E mean in units of √Λ.
pub fn c_function(t: f64) -> f64 {
    if t == f64::INFINITY {
        return C_LIMIT;
    }
    let p = pi32();
    PI * t * (3.0 * (-t * t).exp() - 0.5 * (-4.0 * t * t).exp())
        + p * erf(t) * (0.5 + 3.0 * t * t)
        + p * erf(2.0 * t) * (0.125 - 3.0 * t * t)
}

// h(a) = ∫₀¹ (1−q²)² e^{−a(1−q²)} dq, with s = 1 − q so that 1 − q² = s(2 − s)
fn h_weight(a: f64, tol: f64) -> (f64, f64) {
    let f = |s: f64| {
        let v = s * (2.0 - s);
        v * v * (-a * v).exp()
    };
    let split = (25.0 / a.max(1e-300)).min(1.0);
    let first = integrate(f, 0.0, split, tol);
    let mut value = first.integral;
    let mut err = first.error_estimate;
    if split < 1.0 {
        let rest = integrate(f, split, 1.0, tol);
        value += rest.integral;
        err += rest.error_estimate;
    }
    (value, err)
}

// radial weight: C₂(t) = ∫₀^∞ g(r) sin⁴(tr/2) dr
fn radial_weight(r: f64) -> f64 {
    r * r * h_weight(r * r / 4.0, 1e-13).0
}

/// C₂(2;t) by adaptive quadrature after the change of variables z = r q,
/// 4w = r²(1 − q²).
pub fn c2_function(t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("t must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    const R_MAX: f64 = 1000.0;
    // beyond R_MAX, g(r) ≤ 64/r⁴
    let tail = 64.0 / (3.0 * R_MAX.powi(3));
    let far = t >= 12.0;
    let width = if far { 2.0 } else { (PI / t).min(2.0) };
    let panels = (R_MAX / width).ceil() as usize;
    let per_panel = 0.1 * C2_TOLERANCE / panels as f64;
    let mut total = 0.0;
    let mut err = 0.0;
    for p in 0..panels {
        let a = p as f64 * width;
        let b = ((p + 1) as f64 * width).min(R_MAX);
        let out = if far {
            // oscillating terms of sin⁴ are below e^{-t²}
            integrate(|r| 0.375 * radial_weight(r), a, b, per_panel)
        } else {
            integrate(|r| radial_weight(r) * (0.5 * t * r).sin().powi(4), a, b, per_panel)
        };
        total += out.integral;
        err += out.error_estimate;
    }
    let achieved = err + tail;
    if !(achieved <= C2_TOLERANCE) || !total.is_finite() {
        return Err(Error::Quadrature { achieved, tolerance: C2_TOLERANCE });
    }
    Ok(total + if far { 0.375 * tail } else { 0.0 })
}

/// C₂ sampled on a uniform grid over [0, t_max] and interpolated by a
/// natural cubic spline; the limit is returned beyond t_max.
#[derive(Clone, Debug)]
pub struct C2Table {
    step: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl C2Table {
    pub const T_MAX: f64 = 12.0;

    pub fn new(points: usize) -> Result<Self> {
        if points < 4 {
            return Err(Error::InvalidParameter(format!("C2 table needs >= 4 points, got {points}")));
        }
        let step = Self::T_MAX / (points - 1) as f64;
        let values = (0..points).map(|i| c2_function(i as f64 * step)).collect::<Result<Vec<_>>>()?;
        let second = natural_spline_second_derivatives(&values, step);
        Ok(Self { step, values, second })
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let last = self.values.len() - 1;
        if t >= Self::T_MAX {
            return C2_LIMIT;
        }
        let i = ((t / self.step) as usize).min(last - 1);
        let h = self.step;
        let a = ((i + 1) as f64 * h - t) / h;
        let b = 1.0 - a;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a.powi(3) - a) * self.second[i] + (b.powi(3) - b) * self.second[i + 1]) * h * h / 6.0
    }
}

fn natural_spline_second_derivatives(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    // tridiagonal system (1, 4, 1) m = 6 Δ²y / h², m₀ = m_{n−1} = 0
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let rhs = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
        let denom = 4.0 - c[i - 1];
        c[i] = 1.0 / denom;
        d[i] = (rhs - d[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d[i] - c[i] * m[i + 1];
    }
    m
}

/// Shared table with step 0.05, built on first use.
pub fn c2_table() -> Result<&'static C2Table> {
    static TABLE: OnceLock<std::result::Result<C2Table, String>> = OnceLock::new();
    TABLE
        .get_or_init(|| C2Table::new(241).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::InvalidParameter(format!("C2 table: {e}")))
}

pub fn ee_mean_curve(t: f64, lambda: f64) -> f64 {
    c_function(t) * lambda.sqrt()
}

pub fn ee_saturation(lambda: f64) -> f64 {
    C_LIMIT * lambda.sqrt()
}

/// `[C(2;t) + 2⟨c_B⟩ C₂(2;t)] √Λ`, C₂ taken from the shared table.
pub fn ec_mean_curve(t: f64, lambda: f64, mean_c2_b: f64) -> Result<f64> {
    let c2 = if mean_c2_b == 0.0 { 0.0 } else { c2_table()?.eval(t) };
    Ok((c_function(t) + 2.0 * mean_c2_b * c2) * lambda.sqrt())
}

/// `π^{3/2}(5 + 3⟨c_B⟩)/8 · √Λ`.
pub fn ec_saturation(lambda: f64, mean_c2_b: f64) -> f64 {
    pi32() * (5.0 + 3.0 * mean_c2_b) / 8.0 * lambda.sqrt()
}

/// `4πt√Λ + 2⟨c_A⟩⟨c_B⟩t²`.
pub fn weak_combined_short(t: f64, lambda: f64, mean_c2_a: f64, mean_c2_b: f64) -> f64 {
    4.0 * PI * t * lambda.sqrt() + 2.0 * mean_c2_a * mean_c2_b * t * t
}

/// Time at which the linear and quadratic short-time terms are equal.
pub fn crossover_time(lambda: f64, mean_c2_a: f64, mean_c2_b: f64) -> f64 {
    let c = mean_c2_a * mean_c2_b;
    if c <= 0.0 {
        return f64::INFINITY;
    }
    2.0 * PI * lambda.sqrt() / c
}

// ---------------------------------------------------------------- strong coupling

/// `1 − 1/N_A − 1/N_B`.
pub fn haar_saturation(dims: SubsystemDims) -> f64 {
    1.0 - 1.0 / dims.n_a() as f64 - 1.0 / dims.n_b() as f64
}

/// Mean purity of a Haar-random pure state.
pub fn lubkin_purity(dims: SubsystemDims) -> f64 {
    let (a, b) = (dims.n_a() as f64, dims.n_b() as f64);
    (a + b) / (a * b + 1.0)
}

pub fn strong_curve(t: f64, lambda: f64, dims: SubsystemDims) -> f64 {
    let s = haar_saturation(dims);
    s * (1.0 - (-4.0 * PI * t * lambda.sqrt() / s).exp())
}

pub fn intermediate_curve(t: f64, lambda: f64, dims: SubsystemDims) -> f64 {
    let s = haar_saturation(dims);
    s * (1.0 - (-c_function(t) * lambda.sqrt() / s).exp())
}

// ---------------------------------------------------------------- two-level model

/// Second Schmidt eigenvalue of a pair of nearly degenerate levels with
/// unperturbed spacing `s` (units of D) and coupling intensity `w`.
pub fn two_level_schmidt(t: f64, lambda: f64, s: f64, w: f64) -> f64 {
    let g = 4.0 * lambda * w;
    let r2 = s * s + g;
    if r2 == 0.0 {
        return 0.0;
    }
    let arg = t / (2.0 * lambda.sqrt()) * r2.sqrt();
    g / r2 * arg.sin().powi(2)
}

/// `2 Σ_l (λ_l − λ_l²)` over independent two-level mixings `(s, w)`.
pub fn ee_trace_model(t: f64, lambda: f64, neighbors: &[(f64, f64)]) -> f64 {
    neighbors
        .iter()
        .map(|&(s, w)| {
            let l = two_level_schmidt(t, lambda, s, w);
            2.0 * (l - l * l)
        })
        .sum()
}

/// Two-level shift with degenerate perturbation theory:
/// `sign(s + 2√Λ Δx) √((s + 2√Λ Δx)² + 4Λw)`.
pub fn regularized_spacing(s: f64, lambda: f64, x_jk: f64, x_jpkp: f64, w: f64) -> f64 {
    let shifted = s + 2.0 * lambda.sqrt() * (x_jk - x_jpkp);
    let mag = (shifted * shifted + 4.0 * lambda * w).sqrt();
    if shifted < 0.0 {
        -mag
    } else {
        mag
    }
}

// ---------------------------------------------------------------- S̄₂ density

/// Density of `u = ⟨λ₂⟩` in the two-level model, for `u ∈ (0, 1/6]`.
pub fn ee_u_density(u: f64, lambda: f64) -> f64 {
    if !(u > 0.0 && u < 0.25) || !(lambda > 0.0) {
        return 0.0;
    }
    let q = 1.0 - 4.0 * u;
    let f = u / (lambda * q);
    let pref = 2.0 / (lambda * q * q);
    let len = 1.0 / (2.0 + f.sqrt());
    let scale = (0.5f64).min(0.5 * PI.sqrt() * f.powf(-1.5));
    let tol = 1e-12 * scale;
    let upper = 50.0 * len;
    let panels = 10;
    let mut total = 0.0;
    for p in 0..panels {
        let a = upper * p as f64 / panels as f64;
        let b = upper * (p + 1) as f64 / panels as f64;
        total += integrate(|s| s * s * (-2.0 * s - s * s * f).exp(), a, b, tol / panels as f64).integral;
    }
    pref * total
}

fn u_of_x(x: f64) -> f64 {
    x / (2.0 * (1.0 + (1.0 - 3.0 * x).sqrt()))
}

/// Density of the infinite-time average S̄₂ for E⊗E states.
pub fn ee_s2bar_density(x: f64, lambda: f64) -> f64 {
    if !(x > 0.0 && x < 1.0 / 3.0) {
        log::warn!("S2bar density evaluated outside (0, 1/3) at x = {x}");
        return 0.0;
    }
    ee_u_density(u_of_x(x), lambda) / (4.0 * (1.0 - 3.0 * x).sqrt())
}

/// Probability that S̄₂ lies in `[a, b]`, integrated in u so the endpoint
/// divergence at x = 1/3 never enters.
pub fn ee_density_mass(lambda: f64, a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && a <= b) {
        return Err(Error::InvalidParameter(format!("bad interval [{a}, {b}]")));
    }
    let third = 1.0 / 3.0;
    let (ua, ub) = (u_of_x(a.min(third)), u_of_x(b.min(third)));
    if ub <= ua {
        return Ok(0.0);
    }
    // log-spaced panels resolve the √Λ-scale core
    let lo = ua.max(1e-14);
    let mut edges = vec![ua];
    let n = 60;
    let ratio = (ub / lo).powf(1.0 / n as f64);
    let mut e = lo;
    for _ in 0..n {
        e *= ratio;
        edges.push(e.min(ub));
    }
    let mut total = 0.0;
    let mut err = 0.0;
    for w in edges.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let out = integrate(|u| ee_u_density(u, lambda), w[0], w[1], 1e-10);
        total += out.integral;
        err += out.error_estimate;
    }
    if err > 1e-6 {
        return Err(Error::Quadrature { achieved: err, tolerance: 1e-6 });
    }
    Ok(total)
}

/// `(x, P(x))` at `points` log-spaced abscissae in `[x_min, x_max]`.
pub fn ee_density_curve(lambda: f64, x_min: f64, x_max: f64, points: usize) -> Vec<(f64, f64)> {
    if points == 0 {
        return Vec::new();
    }
    let ratio = if points > 1 { (x_max / x_min).powf(1.0 / (points - 1) as f64) } else { 1.0 };
    (0..points)
        .map(|i| {
            let x = x_min * ratio.powi(i as i32);
            (x, ee_s2bar_density(x, lambda))
        })
        .collect()
}

// ---------------------------------------------------------------- curves

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "ultraweak")]
    Ultraweak,
    #[serde(rename = "weak_EE")]
    WeakEE,
    #[serde(rename = "weak_EC")]
    WeakEC,
    #[serde(rename = "weak_combined")]
    WeakCombined,
    #[serde(rename = "intermediate")]
    Intermediate,
    #[serde(rename = "strong")]
    Strong,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Ultraweak => "ultraweak",
            Regime::WeakEE => "weak_EE",
            Regime::WeakEC => "weak_EC",
            Regime::WeakCombined => "weak_combined",
            Regime::Intermediate => "intermediate",
            Regime::Strong => "strong",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryCurve {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub regime_tag: Regime,
}

impl TheoryCurve {
    pub fn new(t_grid: Vec<f64>, values: Vec<f64>, regime_tag: Regime) -> Result<Self> {
        if t_grid.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: t_grid.len(), got: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParameter(format!("theory value {v} is not finite and non-negative")));
        }
        Ok(Self { t_grid, values, regime_tag })
    }
}
