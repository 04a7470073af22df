//! The random-matrix transition ensemble for two coupled chaotic subsystems.
//!
//! A realization is a pair of Haar unitaries `U_A`, `U_B` and a table of
//! interaction phases `xi_ab`, uniform on (-1/2, 1/2]. The coupled Floquet
//! operator is `(U_A ⊗ U_B) · diag(exp(i 2π ε xi_ab))` in the row-major product
//! basis `(a, b) -> a * n_b + b`.
//!
//! The coupling strength is carried both as the bare parameter `ε` and as the
//! universal transition parameter `Λ`, related exactly by
//!
//! ```text
//! Λ(ε) = N_A² N_B² [1 - sin²(πε)/(πε)²] / (4π² (N_A+1)(N_B+1))
//! ```

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::SeedTag;
use faer::{c64, Mat, MatRef};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct SubsystemDims {
    n_a: usize,
    n_b: usize,
}

impl SubsystemDims {
    pub fn new(n_a: usize, n_b: usize) -> Result<Self> {
        if n_a < 2 || n_b < 2 {
            return Err(Error::InvalidDimension(format!(
                "subsystem dimensions must be at least 2, got ({n_a}, {n_b})"
            )));
        }
        if n_a > n_b {
            return Err(Error::InvalidDimension(format!(
                "expected n_a <= n_b, got ({n_a}, {n_b})"
            )));
        }
        Ok(Self { n_a, n_b })
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn total(&self) -> usize {
        self.n_a * self.n_b
    }

    /// Mean spacing of the coupled quasi-energy spectrum, 2π/(N_A N_B).
    pub fn mean_spacing(&self) -> f64 {
        TAU / (self.total() as f64)
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        a * self.n_b + b
    }
}

impl TryFrom<[usize; 2]> for SubsystemDims {
    type Error = Error;
    fn try_from(v: [usize; 2]) -> Result<Self> {
        Self::new(v[0], v[1])
    }
}

impl From<SubsystemDims> for [usize; 2] {
    fn from(d: SubsystemDims) -> Self {
        [d.n_a, d.n_b]
    }
}

#[derive(Clone, Debug)]
pub struct UnitaryMatrix {
    mat: Mat<c64>,
}

impl UnitaryMatrix {
    pub const TOLERANCE: f64 = 1e-12;

    /// Wraps a square matrix after checking unitarity.
    pub fn new(mat: Mat<c64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::InvalidDimension(format!(
                "unitary must be square and non-empty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let residual = linalg::unitarity_residual(mat.as_ref());
        if residual > Self::TOLERANCE {
            return Err(Error::NonUnitary { residual });
        }
        Ok(Self { mat })
    }

    pub(crate) fn from_trusted(mat: Mat<c64>) -> Self {
        Self { mat }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mat: Mat::<c64>::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_ref(&self) -> MatRef<'_, c64> {
        self.mat.as_ref()
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        self.mat[(i, j)]
    }

    pub fn residual(&self) -> f64 {
        linalg::unitarity_residual(self.mat.as_ref())
    }

    pub fn into_inner(self) -> Mat<c64> {
        self.mat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionPhases {
    n_a: usize,
    n_b: usize,
    xi: Vec<f64>,
}

impl InteractionPhases {
    pub fn new(dims: SubsystemDims, xi: Vec<f64>) -> Result<Self> {
        if xi.len() != dims.total() {
            return Err(Error::DimensionMismatch { expected: dims.total(), got: xi.len() });
        }
        if let Some(bad) = xi.iter().find(|&&x| !(x > -0.5 && x <= 0.5)) {
            return Err(Error::InvalidParameter(format!("phase {bad} outside (-1/2, 1/2]")));
        }
        Ok(Self { n_a: dims.n_a, n_b: dims.n_b, xi })
    }

    pub fn sample<R: Rng + ?Sized>(dims: SubsystemDims, rng: &mut R) -> Self {
        // 1/2 - U[0,1) lies in (-1/2, 1/2]
        let xi = (0..dims.total()).map(|_| 0.5 - rng.random::<f64>()).collect();
        Self { n_a: dims.n_a, n_b: dims.n_b, xi }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.xi[a * self.n_b + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.xi
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingStrength {
    pub epsilon: f64,
    pub lambda: f64,
    pub mean_spacing: f64,
}

impl CouplingStrength {
    pub fn from_epsilon(epsilon: f64, dims: SubsystemDims) -> Result<Self> {
        Ok(Self { epsilon, lambda: lambda_from_epsilon(epsilon, dims)?, mean_spacing: dims.mean_spacing() })
    }

    pub fn from_lambda(lambda: f64, dims: SubsystemDims) -> Result<Self> {
        Ok(Self { epsilon: epsilon_from_lambda(lambda, dims)?, lambda, mean_spacing: dims.mean_spacing() })
    }

    /// Rescaled time per Floquet iteration, D·√Λ.
    pub fn time_step(&self) -> f64 {
        self.mean_spacing * self.lambda.sqrt()
    }

    /// Nearest integer iteration count for rescaled time `t`.
    pub fn iterations(&self, t: f64) -> Result<u64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("rescaled time must be finite and >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(0);
        }
        if self.lambda <= 0.0 {
            return Err(Error::UndefinedRescaling);
        }
        Ok((t / self.time_step()).round() as u64)
    }

    pub fn rescaled_time(&self, n: u64) -> f64 {
        n as f64 * self.time_step()
    }
}

/// 1 - sin²(x)/x², stable for small x.
fn one_minus_sinc_sq(x: f64) -> f64 {
    let x = x.abs();
    if x > 1.0 {
        let s = x.sin() / x;
        return 1.0 - s * s;
    }
    // Σ_{k≥2} (-1)^k 2^{2k-1} x^{2k-2} / (2k)!
    let x2 = x * x;
    let mut term = 8.0 * x2 / 24.0; // k = 2
    let mut sum = term;
    let mut k = 2.0f64;
    loop {
        // ratio between consecutive terms
        term *= -4.0 * x2 / ((2.0 * k + 1.0) * (2.0 * k + 2.0));
        k += 1.0;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

fn lambda_prefactor(dims: SubsystemDims) -> f64 {
    let (na, nb) = (dims.n_a as f64, dims.n_b as f64);
    na * na * nb * nb / (4.0 * PI * PI * (na + 1.0) * (nb + 1.0))
}

pub fn lambda_from_epsilon(epsilon: f64, dims: SubsystemDims) -> Result<f64> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    Ok(lambda_prefactor(dims) * one_minus_sinc_sq(PI * epsilon))
}

/// Largest Λ reachable for ε in [0, 1].
pub fn lambda_supremum(dims: SubsystemDims) -> f64 {
    lambda_prefactor(dims) * one_minus_sinc_sq(PI)
}

pub fn epsilon_from_lambda(lambda: f64, dims: SubsystemDims) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let sup = lambda_supremum(dims);
    if lambda > sup {
        return Err(Error::LambdaOutOfRange { lambda, supremum: sup });
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = lambda_from_epsilon(mid, dims)?;
        if v < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Haar-distributed unitary: QR of a complex Ginibre matrix with the phases of
/// the R diagonal moved into Q.
pub fn sample_haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<UnitaryMatrix> {
    if dim == 0 {
        return Err(Error::InvalidDimension("unitary dimension must be >= 1".into()));
    }
    linalg::seq();
    let mut entries = Vec::with_capacity(dim * dim);
    for _ in 0..dim * dim {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        entries.push(c64::new(re, im));
    }
    let z = Mat::<c64>::from_fn(dim, dim, |i, j| entries[j * dim + i]);
    let qr = z.qr();
    let q = qr.compute_Q();
    let r = qr.R();
    let phases: Vec<c64> = (0..dim)
        .map(|k| {
            let d = r[(k, k)];
            let n = d.norm();
            if n > 0.0 { d / n } else { c64::new(1.0, 0.0) }
        })
        .collect();
    let u = Mat::<c64>::from_fn(dim, dim, |i, j| q[(i, j)] * phases[j]);
    Ok(UnitaryMatrix::from_trusted(u))
}

#[derive(Clone, Debug)]
pub struct TransitionRealization {
    pub dims: SubsystemDims,
    pub u_a: UnitaryMatrix,
    pub u_b: UnitaryMatrix,
    pub phases: InteractionPhases,
    pub coupling: CouplingStrength,
    pub seed_tag: SeedTag,
}

impl TransitionRealization {
    /// Assembles a realization from explicit parts.
    pub fn from_parts(
        dims: SubsystemDims,
        u_a: UnitaryMatrix,
        u_b: UnitaryMatrix,
        phases: InteractionPhases,
        coupling: CouplingStrength,
        seed_tag: SeedTag,
    ) -> Result<Self> {
        if u_a.dim() != dims.n_a {
            return Err(Error::DimensionMismatch { expected: dims.n_a, got: u_a.dim() });
        }
        if u_b.dim() != dims.n_b {
            return Err(Error::DimensionMismatch { expected: dims.n_b, got: u_b.dim() });
        }
        if phases.shape() != (dims.n_a, dims.n_b) {
            return Err(Error::DimensionMismatch { expected: dims.total(), got: phases.xi.len() });
        }
        Ok(Self { dims, u_a, u_b, phases, coupling, seed_tag })
    }

    /// Same draw at a different coupling strength.
    pub fn with_coupling(&self, coupling: CouplingStrength) -> Self {
        Self { coupling, ..self.clone() }
    }
}

pub fn sample_realization(dims: SubsystemDims, coupling: CouplingStrength, seed_tag: SeedTag) -> Result<TransitionRealization> {
    let mut rng = seed_tag.rng();
    let u_a = sample_haar_unitary(dims.n_a, &mut rng)?;
    let u_b = sample_haar_unitary(dims.n_b, &mut rng)?;
    let phases = InteractionPhases::sample(dims, &mut rng);
    Ok(TransitionRealization { dims, u_a, u_b, phases, coupling, seed_tag })
}

/// `(U_A ⊗ U_B) · diag(exp(i 2π ε xi_ab))`.
pub fn build_floquet(r: &TransitionRealization) -> UnitaryMatrix {
    let dims = r.dims;
    let (na, nb) = (dims.n_a, dims.n_b);
    let m = dims.total();
    let diag: Vec<c64> = r.phases.as_slice().iter().map(|&x| c64::cis(TAU * r.coupling.epsilon * x)).collect();
    let ua = r.u_a.as_ref();
    let ub = r.u_b.as_ref();
    let mut out = Mat::<c64>::zeros(m, m);
    for a2 in 0..na {
        for b2 in 0..nb {
            let col = a2 * nb + b2;
            let d = diag[col];
            for a in 0..na {
                let x = ua[(a, a2)] * d;
                for b in 0..nb {
                    out[(a * nb + b, col)] = x * ub[(b, b2)];
                }
            }
        }
    }
    UnitaryMatrix::from_trusted(out)
}
