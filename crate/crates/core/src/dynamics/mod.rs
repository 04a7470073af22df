//! Spectral propagation of bipartite pure states and their entanglement.
//!
//! The coupled Floquet operator is diagonalized once per realization; a state
//! after `n` iterations is `V · diag(e^{i n θ}) · V† · ψ₀`. Rescaled time is
//! `t = n · D · √Λ` with `n` rounded to the nearest integer.

mod batch;

pub use batch::{BatchPropagator, SparseState};

use crate::ensemble::{build_floquet, CouplingStrength, SubsystemDims, TransitionRealization, UnitaryMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::SeedTag;
use crate::states::{product_state, ProductStateSpec};
use faer::{c64, Mat, MatRef, Side};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: Vec<c64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<c64>) -> Result<Self> {
        let s = Self { amplitudes };
        let n = s.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("state norm {n} differs from 1")));
        }
        Ok(s)
    }

    pub(crate) fn from_trusted(amplitudes: Vec<c64>) -> Self {
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &[c64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

fn check_dim(state: &PureState, dims: SubsystemDims) -> Result<()> {
    if state.dim() != dims.total() {
        return Err(Error::DimensionMismatch { expected: dims.total(), got: state.dim() });
    }
    Ok(())
}

/// Amplitudes `ψ[a·n_b + b]` viewed as the n_b × n_a column-major matrix `X[b, a]`.
fn amplitude_matrix(amps: &[c64], dims: SubsystemDims) -> MatRef<'_, c64> {
    MatRef::from_column_major_slice(amps, dims.n_b(), dims.n_a())
}

/// Reduced density matrix of subsystem A or B.
pub fn reduced_density(state: &PureState, dims: SubsystemDims, subsystem: Subsystem) -> Result<Mat<c64>> {
    check_dim(state, dims)?;
    let x = amplitude_matrix(&state.amplitudes, dims);
    Ok(match subsystem {
        // ρ_A[a, a'] = Σ_b X[b, a] conj(X[b, a'])  =  (Xᵀ conj(X))[a, a']
        Subsystem::A => {
            let mut out = Mat::<c64>::zeros(dims.n_a(), dims.n_a());
            linalg::gemm(out.as_mut(), x.transpose(), x.conjugate());
            out
        }
        // ρ_B[b, b'] = Σ_a X[b, a] conj(X[b', a])  =  (X X†)[b, b']
        Subsystem::B => {
            let mut out = Mat::<c64>::zeros(dims.n_b(), dims.n_b());
            linalg::gemm(out.as_mut(), x, x.adjoint());
            out
        }
    })
}

/// tr(ρ_A²) from raw amplitudes as the squared Frobenius norm of the n_a × n_a
/// Gram matrix of the amplitude matrix.
pub(crate) fn purity_of(amps: &[c64], dims: SubsystemDims, scratch: &mut Mat<c64>) -> f64 {
    let x = amplitude_matrix(amps, dims);
    linalg::gemm(scratch.as_mut(), x.adjoint(), x);
    let mut s = 0.0;
    for j in 0..dims.n_a() {
        for i in 0..dims.n_a() {
            s += scratch[(i, j)].norm_sqr();
        }
    }
    s
}

pub(crate) fn s2_of(amps: &[c64], dims: SubsystemDims, scratch: &mut Mat<c64>) -> f64 {
    clamp_s2(1.0 - purity_of(amps, dims, scratch), dims)
}

/// Removes rounding excursions outside [0, 1 - 1/n_a].
pub(crate) fn clamp_s2(s2: f64, dims: SubsystemDims) -> f64 {
    s2.clamp(0.0, 1.0 - 1.0 / dims.n_a() as f64)
}

pub fn purity(state: &PureState, dims: SubsystemDims) -> Result<f64> {
    check_dim(state, dims)?;
    let mut scratch = Mat::<c64>::zeros(dims.n_a(), dims.n_a());
    Ok(purity_of(&state.amplitudes, dims, &mut scratch))
}

/// S₂ = 1 - tr(ρ_A²).
pub fn linear_entropy(state: &PureState, dims: SubsystemDims) -> Result<f64> {
    Ok(1.0 - purity(state, dims)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchmidtSpectrum {
    pub eigenvalues: Vec<f64>,
}

impl SchmidtSpectrum {
    pub fn purity(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l * l).sum()
    }
}

fn hermitian_eigenvalues_desc(rho: &Mat<c64>) -> Result<Vec<f64>> {
    linalg::seq();
    let mut ev = rho
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigensolver { seed_tag: "reduced density".into(), message: format!("{e:?}") })?;
    ev.reverse();
    Ok(ev)
}

pub fn schmidt_spectrum_of(state: &PureState, dims: SubsystemDims, subsystem: Subsystem) -> Result<SchmidtSpectrum> {
    let rho = reduced_density(state, dims, subsystem)?;
    let mut ev = hermitian_eigenvalues_desc(&rho)?;
    for l in ev.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let total: f64 = ev.iter().sum();
    if (total - 1.0).abs() < 1e-10 && total > 0.0 {
        for l in ev.iter_mut() {
            *l /= total;
        }
    }
    Ok(SchmidtSpectrum { eigenvalues: ev })
}

/// Eigenvalues of ρ_A, descending.
pub fn schmidt_spectrum(state: &PureState, dims: SubsystemDims) -> Result<SchmidtSpectrum> {
    schmidt_spectrum_of(state, dims, Subsystem::A)
}

/// Eigenphases in [0, 2π), ascending, with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenphases: Vec<f64>,
    pub eigenvectors: Mat<c64>,
    pub min_gap: f64,
}

impl SpectralDecomposition {
    pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

    pub fn dim(&self) -> usize {
        self.eigenphases.len()
    }

    fn from_unsorted(values: Vec<f64>, vectors: Mat<c64>) -> Self {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
        let eigenphases: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let eigenvectors = Mat::<c64>::from_fn(vectors.nrows(), n, |r, c| vectors[(r, order[c])]);
        let min_gap = circular_min_gap(&eigenphases);
        Self { eigenphases, eigenvectors, min_gap }
    }

    /// max |V diag(e^{iθ}) V† - U|.
    pub fn reconstruction_residual(&self, u: &UnitaryMatrix) -> f64 {
        let n = self.dim();
        let scaled = Mat::<c64>::from_fn(n, n, |i, j| self.eigenvectors[(i, j)] * c64::cis(self.eigenphases[j]));
        let mut rec = Mat::<c64>::zeros(n, n);
        linalg::gemm(rec.as_mut(), scaled.as_ref(), self.eigenvectors.adjoint());
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                worst = worst.max((rec[(i, j)] - u.get(i, j)).norm());
            }
        }
        worst
    }

    /// Decomposition of `U_A ⊗ U_B` composed from the factors' decompositions.
    pub fn from_product(a: &SpectralDecomposition, b: &SpectralDecomposition) -> Self {
        let (na, nb) = (a.dim(), b.dim());
        let mut phases = Vec::with_capacity(na * nb);
        for j in 0..na {
            for k in 0..nb {
                phases.push((a.eigenphases[j] + b.eigenphases[k]).rem_euclid(TAU));
            }
        }
        let vectors = Mat::<c64>::from_fn(na * nb, na * nb, |r, c| {
            let (x, y) = (r / nb, r % nb);
            let (j, k) = (c / nb, c % nb);
            a.eigenvectors[(x, j)] * b.eigenvectors[(y, k)]
        });
        Self::from_unsorted(phases, vectors)
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.min_gap < Self::DEGENERACY_THRESHOLD {
            return Err(Error::DegenerateSpectrum { min_gap: self.min_gap, threshold: Self::DEGENERACY_THRESHOLD });
        }
        Ok(())
    }

    /// Coefficients ⟨m|ψ⟩ in the eigenbasis.
    pub fn coefficients(&self, state: &PureState) -> Vec<c64> {
        let n = self.dim();
        let mut out = vec![c64::new(0.0, 0.0); n];
        for (m, o) in out.iter_mut().enumerate() {
            let col = self.eigenvectors.col(m);
            let mut acc = c64::new(0.0, 0.0);
            for (i, &z) in state.amplitudes.iter().enumerate() {
                acc += col[i].conj() * z;
            }
            *o = acc;
        }
        out
    }
}

pub fn circular_min_gap(sorted_phases: &[f64]) -> f64 {
    let n = sorted_phases.len();
    if n < 2 {
        return TAU;
    }
    let mut gap = sorted_phases[0] + TAU - sorted_phases[n - 1];
    for w in sorted_phases.windows(2) {
        gap = gap.min(w[1] - w[0]);
    }
    gap
}

fn wrap_phase(z: c64) -> f64 {
    let p = z.arg().rem_euclid(TAU);
    if p >= TAU { 0.0 } else { p }
}

pub fn decompose(floquet: &UnitaryMatrix) -> Result<SpectralDecomposition> {
    decompose_tagged(floquet, None)
}

/// As [`decompose`], naming the realization in eigensolver errors.
pub fn decompose_tagged(floquet: &UnitaryMatrix, tag: Option<SeedTag>) -> Result<SpectralDecomposition> {
    let (values, mut vectors) = linalg::eig(floquet.as_ref()).map_err(|message| Error::Eigensolver {
        seed_tag: tag.map(|t| t.to_string()).unwrap_or_else(|| "unknown".into()),
        message,
    })?;
    linalg::orthonormalize(&mut vectors);
    let phases = values.iter().map(|&z| wrap_phase(z)).collect();
    Ok(SpectralDecomposition::from_unsorted(phases, vectors))
}

/// Eigenbases of `U_A` and `U_B`, the reference frame in which initial states
/// are specified.
#[derive(Clone, Debug)]
pub struct LocalBasis {
    pub dims: SubsystemDims,
    pub a: SpectralDecomposition,
    pub b: SpectralDecomposition,
}

impl LocalBasis {
    pub fn of(r: &TransitionRealization) -> Result<Self> {
        Ok(Self { dims: r.dims, a: decompose_tagged(&r.u_a, Some(r.seed_tag))?, b: decompose_tagged(&r.u_b, Some(r.seed_tag))? })
    }

    /// `(W_A ⊗ W_B) ψ`: local-eigenbasis amplitudes to computational ones.
    pub fn to_computational(&self, state: &PureState) -> Result<PureState> {
        check_dim(state, self.dims)?;
        let x = amplitude_matrix(&state.amplitudes, self.dims);
        // X' = W_B X W_Aᵀ
        let mut tmp = Mat::<c64>::zeros(self.dims.n_b(), self.dims.n_a());
        linalg::gemm(tmp.as_mut(), self.b.eigenvectors.as_ref(), x);
        let mut out = Mat::<c64>::zeros(self.dims.n_b(), self.dims.n_a());
        linalg::gemm(out.as_mut(), tmp.as_ref(), self.a.eigenvectors.transpose());
        Ok(PureState::from_trusted(column_major(&out)))
    }

    /// Re-expresses coupled eigenvectors in the local eigenbasis,
    /// `(W_A ⊗ W_B)† V`. Entanglement is invariant under this change.
    pub fn transform(&self, sd: &SpectralDecomposition) -> SpectralDecomposition {
        let (na, nb) = (self.dims.n_a(), self.dims.n_b());
        let m = self.dims.total();
        let wb_adj = self.b.eigenvectors.adjoint();
        let wa_conj = self.a.eigenvectors.conjugate();
        let mut vectors = Mat::<c64>::zeros(m, m);
        let mut tmp = Mat::<c64>::zeros(nb, na);
        let mut out = Mat::<c64>::zeros(nb, na);
        for c in 0..m {
            let col = sd.eigenvectors.col(c).try_as_col_major().expect("contiguous column").as_slice();
            let x = MatRef::from_column_major_slice(col, nb, na);
            // X' = W_B† X conj(W_A)
            linalg::gemm(tmp.as_mut(), wb_adj, x);
            linalg::gemm(out.as_mut(), tmp.as_ref(), wa_conj);
            for a in 0..na {
                for b in 0..nb {
                    vectors[(a * nb + b, c)] = out[(b, a)];
                }
            }
        }
        SpectralDecomposition { eigenphases: sd.eigenphases.clone(), eigenvectors: vectors, min_gap: sd.min_gap }
    }
}

fn column_major(x: &Mat<c64>) -> Vec<c64> {
    let mut v = Vec::with_capacity(x.nrows() * x.ncols());
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            v.push(x[(i, j)]);
        }
    }
    v
}

pub fn evolve_iterations(state0: &PureState, sd: &SpectralDecomposition, n: u64) -> Result<PureState> {
    if state0.dim() != sd.dim() {
        return Err(Error::DimensionMismatch { expected: sd.dim(), got: state0.dim() });
    }
    if n == 0 {
        return Ok(state0.clone());
    }
    let c = sd.coefficients(state0);
    let nf = n as f64;
    let mut out = vec![c64::new(0.0, 0.0); sd.dim()];
    for (m, cm) in c.iter().enumerate() {
        let z = cm * c64::cis((nf * sd.eigenphases[m]).rem_euclid(TAU));
        let col = sd.eigenvectors.col(m);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * z;
        }
    }
    Ok(PureState::from_trusted(out))
}

pub fn evolve(state0: &PureState, sd: &SpectralDecomposition, t: f64, coupling: &CouplingStrength) -> Result<PureState> {
    let n = coupling.iterations(t)?;
    evolve_iterations(state0, sd, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeGrid {
    /// 60 points: t = 0, 20 geometric points on [1e-3, 0.25], 39 linear on [0.3, 4].
    Default,
    Linear { start: f64, end: f64, points: usize },
    Explicit { times: Vec<f64> },
}

impl TimeGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match self {
            TimeGrid::Default => {
                let mut v = vec![0.0];
                let ratio = (0.25f64 / 1e-3).powf(1.0 / 19.0);
                v.extend((0..20).map(|k| 1e-3 * ratio.powi(k)));
                v.extend((0..39).map(|k| 0.3 + 3.7 * k as f64 / 38.0));
                v
            }
            TimeGrid::Linear { start, end, points } => {
                if *points < 2 {
                    return Err(Error::Config("linear grid needs at least 2 points".into()));
                }
                (0..*points).map(|k| start + (end - start) * k as f64 / (*points - 1) as f64).collect()
            }
            TimeGrid::Explicit { times } => times.clone(),
        };
        validate_grid(&pts)?;
        Ok(pts)
    }
}

pub fn validate_grid(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::Config("empty time grid".into()));
    }
    if t.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Config("time grid entries must be finite and >= 0".into()));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("time grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyTrace {
    pub rescaled_times: Vec<f64>,
    pub iteration_counts: Vec<u64>,
    pub s2_values: Vec<f64>,
    pub coupling: CouplingStrength,
}

/// Builds the product state in the local eigenbasis, maps it to the
/// computational basis and records S₂ along the grid.
pub fn entropy_trace<R: Rng + ?Sized>(
    spec: &ProductStateSpec,
    rng: &mut R,
    realization: &TransitionRealization,
    sd: &SpectralDecomposition,
    time_grid: &[f64],
) -> Result<EntropyTrace> {
    validate_grid(time_grid)?;
    let dims = realization.dims;
    if spec.spec_a.dim() != dims.n_a() || spec.spec_b.dim() != dims.n_b() {
        return Err(Error::DimensionMismatch { expected: dims.total(), got: spec.spec_a.dim() * spec.spec_b.dim() });
    }
    let coupling = realization.coupling;
    let iteration_counts = time_grid.iter().map(|&t| coupling.iterations(t)).collect::<Result<Vec<_>>>()?;
    let (a, b) = spec.sample(rng)?;
    let local = product_state(&a, &b);
    let basis = LocalBasis::of(realization)?;
    let psi0 = basis.to_computational(&local)?;
    let mut scratch = Mat::<c64>::zeros(dims.n_a(), dims.n_a());
    let mut s2_values = Vec::with_capacity(time_grid.len());
    for &n in &iteration_counts {
        let psi = evolve_iterations(&psi0, sd, n)?;
        s2_values.push(s2_of(psi.amplitudes(), dims, &mut scratch));
    }
    Ok(EntropyTrace { rescaled_times: time_grid.to_vec(), iteration_counts, s2_values, coupling })
}

/// Samples, builds and decomposes one realization; resamples (bumping the
/// attempt counter) when the spectrum is degenerate.
pub fn sample_decomposed(
    dims: SubsystemDims,
    coupling: CouplingStrength,
    master: u64,
    cell: u64,
    index: u64,
) -> Result<(TransitionRealization, SpectralDecomposition)> {
    for attempt in 0..8 {
        let tag = SeedTag::realization(master, cell, index, attempt);
        let r = crate::ensemble::sample_realization(dims, coupling, tag)?;
        let sd = decompose_tagged(&build_floquet(&r), Some(tag))?;
        if sd.min_gap >= SpectralDecomposition::DEGENERACY_THRESHOLD {
            return Ok((r, sd));
        }
        log::warn!("realization {tag}: min gap {:e} below threshold, resampling", sd.min_gap);
    }
    Err(Error::DegenerateSpectrum { min_gap: 0.0, threshold: SpectralDecomposition::DEGENERACY_THRESHOLD })
}
