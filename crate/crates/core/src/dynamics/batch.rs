//! Batched evolution of many initial states under one decomposition.
//!
//! Initial states are sparse in the local eigenbasis (K_A·K_B non-zeros), so
//! two strategies are available per state:
//!
//! - direct: `ψ(n) = V (e^{inθ} ∘ c)` with `c = V† ψ₀`, cost M² per state;
//! - column: build the propagator columns `U_n[:, J]` for the union `J` of
//!   supports once, cost M²·|J|, then each state is a K_A·K_B-term sum.
//!
//! The choice depends only on the supports, never on thread count, and every
//! dense product runs on fixed-width column chunks, so results are identical
//! however the chunks are scheduled.

use super::{s2_of, PureState, SpectralDecomposition};
use crate::ensemble::SubsystemDims;
use crate::error::{Error, Result};
use crate::linalg;
use crate::states::SubsystemState;
use faer::{c64, Mat};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::TAU;

const CHUNK: usize = 128;
/// States with more non-zeros get their eigen-coefficients from a dense product.
const DENSE_COEFF_NNZ: usize = 32;

/// Largest support that still goes through the column strategy.
fn direct_nnz(m: usize) -> usize {
    (m / 16).max(64)
}

/// A state given by its non-zero amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseState {
    pub entries: Vec<(usize, c64)>,
}

impl SparseState {
    pub fn from_product(a: &SubsystemState, b: &SubsystemState) -> Self {
        let nb = b.dim();
        let sb = b.support();
        let mut entries = Vec::new();
        for (i, za) in a.support() {
            for &(k, zb) in &sb {
                entries.push((i * nb + k, za * zb));
            }
        }
        Self { entries }
    }

    pub fn from_pure(state: &PureState) -> Self {
        let entries = state
            .amplitudes()
            .iter()
            .enumerate()
            .filter(|(_, z)| z.re != 0.0 || z.im != 0.0)
            .map(|(i, &z)| (i, z))
            .collect();
        Self { entries }
    }

    pub fn to_pure(&self, dim: usize) -> PureState {
        let mut v = vec![c64::new(0.0, 0.0); dim];
        for &(i, z) in &self.entries {
            v[i] = z;
        }
        PureState::from_trusted(v)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

pub struct BatchPropagator<'a> {
    sd: &'a SpectralDecomposition,
    dims: SubsystemDims,
    n_states: usize,
    direct: Vec<usize>,
    direct_coeffs: Mat<c64>,
    columns: Vec<usize>,
    sparse: Vec<(usize, Vec<(usize, c64)>)>,
}

impl<'a> BatchPropagator<'a> {
    pub fn new(sd: &'a SpectralDecomposition, dims: SubsystemDims, states: &[SparseState]) -> Result<Self> {
        let m = dims.total();
        if sd.dim() != m {
            return Err(Error::DimensionMismatch { expected: m, got: sd.dim() });
        }
        for s in states {
            if let Some(&(i, _)) = s.entries.iter().find(|(i, _)| *i >= m) {
                return Err(Error::DimensionMismatch { expected: m, got: i + 1 });
            }
        }
        let limit = direct_nnz(m);
        let small: Vec<usize> = (0..states.len()).filter(|&s| states[s].nnz() <= limit).collect();
        let mut union: BTreeMap<usize, usize> = BTreeMap::new();
        for &s in &small {
            for &(i, _) in &states[s].entries {
                union.insert(i, 0);
            }
        }
        let use_columns = !small.is_empty() && union.len() < small.len();
        let (mut direct, mut sparse, mut columns) = (Vec::new(), Vec::new(), Vec::new());
        if use_columns {
            for (pos, (_, slot)) in union.iter_mut().enumerate() {
                *slot = pos;
            }
            columns = union.keys().copied().collect();
            for s in 0..states.len() {
                if states[s].nnz() <= limit {
                    let mapped = states[s].entries.iter().map(|&(i, z)| (union[&i], z)).collect();
                    sparse.push((s, mapped));
                } else {
                    direct.push(s);
                }
            }
        } else {
            direct = (0..states.len()).collect();
        }
        let picked: Vec<&SparseState> = direct.iter().map(|&s| &states[s]).collect();
        let direct_coeffs = coefficient_matrix(sd, &picked);
        Ok(Self { sd, dims, n_states: states.len(), direct, direct_coeffs, columns, sparse })
    }

    pub fn len(&self) -> usize {
        self.n_states
    }

    pub fn is_empty(&self) -> bool {
        self.n_states == 0
    }

    fn phases(&self, n: u64) -> Vec<c64> {
        let nf = n as f64;
        self.sd.eigenphases.iter().map(|&th| c64::cis((nf * th).rem_euclid(TAU))).collect()
    }

    /// S₂ of every state after `n` Floquet iterations, in input order.
    pub fn linear_entropies(&self, n: u64) -> Vec<f64> {
        let m = self.dims.total();
        let dims = self.dims;
        let phase = self.phases(n);
        let v = self.sd.eigenvectors.as_ref();
        let mut out = vec![0.0; self.n_states];

        // direct strategy
        let n_direct = self.direct.len();
        let chunks: Vec<Vec<f64>> = (0..n_direct.div_ceil(CHUNK))
            .into_par_iter()
            .map(|ci| {
                let lo = ci * CHUNK;
                let w = CHUNK.min(n_direct - lo);
                let b = Mat::<c64>::from_fn(m, w, |r, q| self.direct_coeffs[(r, lo + q)] * phase[r]);
                let mut psi = Mat::<c64>::zeros(m, w);
                linalg::gemm(psi.as_mut(), v, b.as_ref());
                let mut scratch = Mat::<c64>::zeros(dims.n_a(), dims.n_a());
                (0..w)
                    .map(|q| {
                        let col = psi.col(q).try_as_col_major().expect("contiguous").as_slice();
                        s2_of(col, dims, &mut scratch)
                    })
                    .collect()
            })
            .collect();
        for (ci, vals) in chunks.into_iter().enumerate() {
            for (q, s2) in vals.into_iter().enumerate() {
                out[self.direct[ci * CHUNK + q]] = s2;
            }
        }

        // column strategy
        if !self.sparse.is_empty() {
            let nj = self.columns.len();
            let blocks: Vec<Mat<c64>> = (0..nj.div_ceil(CHUNK))
                .into_par_iter()
                .map(|ci| {
                    let lo = ci * CHUNK;
                    let w = CHUNK.min(nj - lo);
                    // U_n[:, j] = V (e^{inθ} ∘ conj(V[j, :]))
                    let b = Mat::<c64>::from_fn(m, w, |r, q| v[(self.columns[lo + q], r)].conj() * phase[r]);
                    let mut u = Mat::<c64>::zeros(m, w);
                    linalg::gemm(u.as_mut(), v, b.as_ref());
                    u
                })
                .collect();
            let column = |pos: usize| blocks[pos / CHUNK].col(pos % CHUNK);
            let vals: Vec<f64> = self
                .sparse
                .par_iter()
                .map_init(
                    || (vec![c64::new(0.0, 0.0); m], Mat::<c64>::zeros(dims.n_a(), dims.n_a())),
                    |(psi, scratch), (_, entries)| {
                        psi.iter_mut().for_each(|z| *z = c64::new(0.0, 0.0));
                        for &(pos, z) in entries {
                            let col = column(pos).try_as_col_major().expect("contiguous").as_slice();
                            for (p, c) in psi.iter_mut().zip(col) {
                                *p += c * z;
                            }
                        }
                        s2_of(psi, dims, scratch)
                    },
                )
                .collect();
            for ((s, _), s2) in self.sparse.iter().zip(vals) {
                out[*s] = s2;
            }
        }
        out
    }

    /// Occupation probabilities |⟨m|ψ₀⟩|² over the eigenbasis, one column per state.
    pub fn eigen_weights(&self, states: &[SparseState]) -> Mat<f64> {
        let refs: Vec<&SparseState> = states.iter().collect();
        let c = coefficient_matrix(self.sd, &refs);
        Mat::<f64>::from_fn(c.nrows(), c.ncols(), |r, q| c[(r, q)].norm_sqr())
    }
}

/// `V† ψ₀` for every state, one column each. Dense states go through a
/// matrix product on fixed chunks; sparse ones are summed directly.
fn coefficient_matrix(sd: &SpectralDecomposition, states: &[&SparseState]) -> Mat<c64> {
    let m = sd.dim();
    let blocks: Vec<Mat<c64>> = (0..states.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let chunk = &states[ci * CHUNK..(ci * CHUNK + CHUNK).min(states.len())];
            let dense: Vec<usize> = (0..chunk.len()).filter(|&q| chunk[q].nnz() > DENSE_COEFF_NNZ).collect();
            let mut out = Mat::<c64>::zeros(m, chunk.len());
            if !dense.is_empty() {
                let mut psi = Mat::<c64>::zeros(m, dense.len());
                for (d, &q) in dense.iter().enumerate() {
                    for &(i, z) in &chunk[q].entries {
                        psi[(i, d)] = z;
                    }
                }
                let mut c = Mat::<c64>::zeros(m, dense.len());
                linalg::gemm(c.as_mut(), sd.eigenvectors.adjoint(), psi.as_ref());
                for (d, &q) in dense.iter().enumerate() {
                    out.col_mut(q).copy_from(c.col(d));
                }
            }
            for (q, s) in chunk.iter().enumerate() {
                if s.nnz() <= DENSE_COEFF_NNZ {
                    for (r, z) in eigen_coefficients(sd, s).into_iter().enumerate() {
                        out[(r, q)] = z;
                    }
                }
            }
            out
        })
        .collect();
    let mut all = Mat::<c64>::zeros(m, states.len());
    for (ci, b) in blocks.into_iter().enumerate() {
        for q in 0..b.ncols() {
            all.col_mut(ci * CHUNK + q).copy_from(b.col(q));
        }
    }
    all
}

/// `V† ψ₀` for a sparse `ψ₀`.
pub(crate) fn eigen_coefficients(sd: &SpectralDecomposition, s: &SparseState) -> Vec<c64> {
    let m = sd.dim();
    let v = &sd.eigenvectors;
    let mut c = vec![c64::new(0.0, 0.0); m];
    for &(i, z) in &s.entries {
        for (mm, cm) in c.iter_mut().enumerate() {
            *cm += v[(i, mm)].conj() * z;
        }
    }
    c
}
