//! Unentangled initial states built on subsets of the subsystem eigenbases.
//!
//! - `C`: equal-modulus superposition with independent uniform phases.
//! - `R`: Haar-random unit vector in the K-dimensional subspace.
//! - `E`: a single eigenstate.

use crate::dynamics::PureState;
use crate::error::{Error, Result};
use faer::c64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateKind {
    C,
    R,
    E,
}

impl StateKind {
    pub fn label(&self) -> &'static str {
        match self {
            StateKind::C => "C",
            StateKind::R => "R",
            StateKind::E => "E",
        }
    }

    /// Ensemble mean of c2 for a K-element subset.
    pub fn mean_c2(&self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            StateKind::C => 1.0 - 1.0 / k,
            StateKind::R => (k - 1.0) / (k + 1.0),
            StateKind::E => 0.0,
        }
    }

    /// Ensemble mean of c4 for a K-element subset.
    pub fn mean_c4(&self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            StateKind::C => (k - 1.0) / (k * k * k),
            StateKind::R => 4.0 * (k - 1.0) / ((k + 1.0) * (k + 2.0) * (k + 3.0)),
            StateKind::E => 0.0,
        }
    }
}

impl std::str::FromStr for StateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "c" => Ok(StateKind::C),
            "R" | "r" => Ok(StateKind::R),
            "E" | "e" => Ok(StateKind::E),
            _ => Err(Error::InvalidSpec(format!("unknown state kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemStateSpec {
    kind: StateKind,
    subset: Vec<usize>,
    dim: usize,
}

impl SubsystemStateSpec {
    pub fn new(kind: StateKind, subset: Vec<usize>, dim: usize) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::InvalidSpec("empty basis subset".into()));
        }
        if kind == StateKind::E && subset.len() != 1 {
            return Err(Error::InvalidSpec(format!("E-kind needs exactly one index, got {}", subset.len())));
        }
        if let Some(&bad) = subset.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidSpec(format!("index {bad} outside subsystem of dimension {dim}")));
        }
        let mut sorted = subset.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSpec("subset indices must be distinct".into()));
        }
        Ok(Self { kind, subset, dim })
    }

    /// The K lowest eigenbasis indices.
    pub fn lowest(kind: StateKind, k: usize, dim: usize) -> Result<Self> {
        Self::new(kind, (0..k).collect(), dim)
    }

    pub fn random_subset<R: Rng + ?Sized>(kind: StateKind, k: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if k > dim {
            return Err(Error::InvalidSpec(format!("K = {k} exceeds dimension {dim}")));
        }
        let mut idx = sample(rng, dim, k).into_vec();
        idx.sort_unstable();
        Self::new(kind, idx, dim)
    }

    pub fn eigenstate(j: usize, dim: usize) -> Result<Self> {
        Self::new(StateKind::E, vec![j], dim)
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn k(&self) -> usize {
        self.subset.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductStateSpec {
    pub spec_a: SubsystemStateSpec,
    pub spec_b: SubsystemStateSpec,
}

impl ProductStateSpec {
    pub fn new(spec_a: SubsystemStateSpec, spec_b: SubsystemStateSpec) -> Self {
        Self { spec_a, spec_b }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(SubsystemState, SubsystemState)> {
        let a = make_subsystem_state(&self.spec_a, rng)?;
        let b = make_subsystem_state(&self.spec_b, rng)?;
        Ok((a, b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemState {
    coefficients: Vec<c64>,
}

impl SubsystemState {
    pub fn new(coefficients: Vec<c64>) -> Result<Self> {
        let norm: f64 = coefficients.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("state norm² {norm} differs from 1")));
        }
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[c64] {
        &self.coefficients
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// Non-zero entries as (index, amplitude).
    pub fn support(&self) -> Vec<(usize, c64)> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, z)| z.re != 0.0 || z.im != 0.0)
            .map(|(i, &z)| (i, z))
            .collect()
    }
}

pub fn make_subsystem_state<R: Rng + ?Sized>(spec: &SubsystemStateSpec, rng: &mut R) -> Result<SubsystemState> {
    let mut z = vec![c64::new(0.0, 0.0); spec.dim];
    let k = spec.k();
    match spec.kind {
        StateKind::E => z[spec.subset[0]] = c64::new(1.0, 0.0),
        StateKind::C => {
            let amp = 1.0 / (k as f64).sqrt();
            for &i in &spec.subset {
                z[i] = c64::from_polar(amp, TAU * rng.random::<f64>());
            }
        }
        StateKind::R => {
            let mut norm = 0.0;
            for &i in &spec.subset {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                z[i] = c64::new(re, im);
                norm += z[i].norm_sqr();
            }
            let s = 1.0 / norm.sqrt();
            for &i in &spec.subset {
                z[i] *= s;
            }
        }
    }
    Ok(SubsystemState { coefficients: z })
}

/// 1 - Σ|z|⁴.
pub fn coherence_c2(state: &SubsystemState) -> f64 {
    1.0 - state.coefficients.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>()
}

/// Σ_{j≠j'} |z_j|⁴ |z_j'|⁴.
pub fn coherence_c4(state: &SubsystemState) -> f64 {
    let q: Vec<f64> = state.coefficients.iter().map(|z| z.norm_sqr().powi(2)).collect();
    let s: f64 = q.iter().sum();
    let s2: f64 = q.iter().map(|x| x * x).sum();
    (s * s - s2).max(0.0)
}

/// Kronecker product in the row-major (a, b) ordering.
pub fn product_state(a: &SubsystemState, b: &SubsystemState) -> PureState {
    let nb = b.dim();
    let mut amps = vec![c64::new(0.0, 0.0); a.dim() * nb];
    for (i, &za) in a.coefficients.iter().enumerate() {
        if za.re == 0.0 && za.im == 0.0 {
            continue;
        }
        for (k, &zb) in b.coefficients.iter().enumerate() {
            amps[i * nb + k] = za * zb;
        }
    }
    PureState::from_trusted(amps)
}

/// Product state checked against expected subsystem dimensions.
pub fn product_state_checked(a: &SubsystemState, b: &SubsystemState, dims: crate::ensemble::SubsystemDims) -> Result<PureState> {
    if a.dim() != dims.n_a() {
        return Err(Error::DimensionMismatch { expected: dims.n_a(), got: a.dim() });
    }
    if b.dim() != dims.n_b() {
        return Err(Error::DimensionMismatch { expected: dims.n_b(), got: b.dim() });
    }
    Ok(product_state(a, b))
}
