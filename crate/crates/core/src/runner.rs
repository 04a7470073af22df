//! Config-driven parameter sweeps.
//!
//! A run enumerates cells `(Λ, kind pair, K)`. Realizations are shared by all
//! cells with the same Λ: each one is sampled, decomposed and moved to the
//! local eigenbasis once, then every cell draws its own initial states on it.
//! All randomness comes from [`SeedTag`] streams keyed by the cell label, so
//! outputs are byte-identical for a given config and seed.

use crate::dynamics::{sample_decomposed, LocalBasis, SparseState, SpectralDecomposition, TimeGrid};
use crate::ensemble::{lambda_supremum, CouplingStrength, SubsystemDims};
use crate::error::{Error, Result};
use crate::rng::{domain, SeedTag};
use crate::states::{make_subsystem_state, StateKind, SubsystemStateSpec};
use crate::stats::{
    infinite_time_avg_exact_batch, s2bar_density, window_iterations, Binning, EnsembleSummary, ItaGram,
    SampleCounts, WindowSamples, DEFAULT_WINDOW, DEFAULT_WINDOW_SAMPLES,
};
use crate::theory::{self, Regime};
use crate::dynamics::BatchPropagator;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// When set, relative output directories are resolved against this path.
pub const OUTPUT_ROOT_ENV: &str = "BRMT_OUTPUT_ROOT";

/// Coherent-state overlays switch from the short-time expansion to the
/// ultraweak curve here when `1e-5 < Λ < 1e-2`.
pub const WEAK_SHORT_TIME: f64 = 0.2;

// ---------------------------------------------------------------- config

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KindPair {
    pub a: StateKind,
    pub b: StateKind,
}

impl KindPair {
    pub fn new(a: StateKind, b: StateKind) -> Self {
        Self { a, b }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.a.label(), self.b.label())
    }

    pub fn is_coherent(&self) -> bool {
        self.a != StateKind::E && self.b != StateKind::E
    }

    /// Subset sizes for a nominal K; E sides always take one index.
    pub fn subset_sizes(&self, k: usize) -> (usize, usize) {
        let size = |kind| if kind == StateKind::E { 1 } else { k };
        (size(self.a), size(self.b))
    }
}

impl fmt::Display for KindPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for KindPair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.chars();
        match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => Ok(Self::new(a.to_string().parse()?, b.to_string().parse()?)),
            _ => Err(Error::Config(format!("kind pair must be two letters from C/R/E, got {s:?}"))),
        }
    }
}

impl Serialize for KindPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for KindPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Subset choice for C and R sides. E sides always draw their index at
/// random. With `Lowest`, all states of a realization share the same
/// levels, so ensemble averages over level statistics only see one
/// configuration per realization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetRule {
    Lowest,
    #[default]
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum S2barMethod {
    #[default]
    Exact,
    Empirical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    pub binning: Binning,
    pub bins: usize,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { binning: Binning::Log, bins: 30 }
    }
}

fn default_k_values() -> Vec<usize> {
    vec![2]
}

fn default_window() -> [f64; 2] {
    DEFAULT_WINDOW
}

fn default_window_samples() -> usize {
    DEFAULT_WINDOW_SAMPLES
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: SubsystemDims,
    pub lambdas: Vec<f64>,
    pub ensembles: Vec<KindPair>,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    /// Falls back to [`protocol_counts`] when absent.
    #[serde(default)]
    pub states_per_realization: Option<usize>,
    #[serde(default)]
    pub realizations: Option<usize>,
    #[serde(default = "default_time_grid")]
    pub time_grid: TimeGrid,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_window")]
    pub saturation_window: [f64; 2],
    #[serde(default = "default_window_samples")]
    pub window_samples: usize,
    #[serde(default)]
    pub subset: SubsetRule,
    #[serde(default)]
    pub s2bar: S2barMethod,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default = "default_true")]
    pub write_traces: bool,
}

fn default_time_grid() -> TimeGrid {
    TimeGrid::Default
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.ensembles.is_empty() {
            return Err(Error::Config("lambdas and ensembles must be non-empty".into()));
        }
        let sup = lambda_supremum(self.dims);
        for &l in &self.lambdas {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!("lambda {l} must be finite and non-negative")));
            }
            if l > sup {
                return Err(Error::LambdaOutOfRange { lambda: l, supremum: sup });
            }
        }
        if self.states_per_realization == Some(0) || self.realizations == Some(0) {
            return Err(Error::Config("sample counts must be at least 1".into()));
        }
        let needs_k = self.ensembles.iter().any(|p| p.a != StateKind::E || p.b != StateKind::E);
        if needs_k && self.k_values.is_empty() {
            return Err(Error::Config("k_values must be non-empty".into()));
        }
        let max_k = self.dims.n_a().min(self.dims.n_b());
        if let Some(&k) = self.k_values.iter().find(|&&k| k == 0 || k > max_k) {
            return Err(Error::Config(format!("K = {k} outside 1..={max_k}")));
        }
        self.time_grid.points()?;
        let [lo, hi] = self.saturation_window;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("bad saturation window [{lo}, {hi}]")));
        }
        if self.window_samples == 0 || self.histogram.bins == 0 {
            return Err(Error::Config("window_samples and histogram bins must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted) JSON form.
    pub fn config_hash(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(hex::encode(Sha256::digest(value.to_string().as_bytes())))
    }

    /// Cells in run order: Λ-major, then ensembles, then K. E⊗E ignores K.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out: Vec<CellSpec> = Vec::new();
        for &lambda in &self.lambdas {
            for &kinds in &self.ensembles {
                let ks = if kinds.is_coherent() || kinds.a != kinds.b { self.k_values.clone() } else { vec![1] };
                for k in ks {
                    let (k_a, k_b) = kinds.subset_sizes(k);
                    let cell = CellSpec { lambda, kinds, k_a, k_b, subset: self.subset };
                    if !out.contains(&cell) {
                        out.push(cell);
                    }
                }
            }
        }
        out
    }

    pub fn counts_for(&self, cell: &CellSpec) -> Option<SampleCounts> {
        let proto = protocol_counts(cell.lambda, cell.kinds);
        let states = self.states_per_realization.or(proto.map(|p| p.states_per_realization))?;
        let realizations = self.realizations.or(proto.map(|p| p.realizations))?;
        Some(SampleCounts { states_per_realization: states, realizations })
    }
}

/// Default sample counts: the reference protocol with state counts divided by 10.
pub fn protocol_counts(lambda: f64, kinds: KindPair) -> Option<SampleCounts> {
    const TABLE: [(f64, [Option<(usize, usize)>; 5]); 6] = [
        (1e-6, [Some((1250, 5)), Some((2500, 5)), Some((2500, 20)), Some((2500, 20)), Some((2500, 5))]),
        (1e-4, [Some((1250, 5)), Some((750, 5)), None, None, None]),
        (1e-3, [Some((750, 5)), Some((750, 5)), None, None, None]),
        (1e-2, [Some((2500, 5)), Some((2500, 5)), None, None, None]),
        (1.0, [Some((2500, 2)), Some((2500, 2)), None, None, None]),
        (10.0, [Some((50, 5)), Some((50, 5)), None, None, None]),
    ];
    use StateKind::*;
    let col = match (kinds.a, kinds.b) {
        (C, C) => 0,
        (R, R) => 1,
        (E, E) => 2,
        (E, C) | (C, E) => 3,
        (E, R) | (R, E) => 4,
        _ => return None,
    };
    let (_, row) = TABLE.iter().find(|(l, _)| ((lambda - l) / l).abs() < 1e-9)?;
    row[col].map(|(s, r)| SampleCounts { states_per_realization: (s / 10).max(1), realizations: r })
}

/// Resolves `dir` against an optional root override.
pub fn resolve_output_dir(dir: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir.to_path_buf(),
    }
}

// ---------------------------------------------------------------- cells

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSpec {
    pub lambda: f64,
    pub kinds: KindPair,
    pub k_a: usize,
    pub k_b: usize,
    pub subset: SubsetRule,
}

impl CellSpec {
    pub fn new(lambda: f64, kinds: KindPair, k: usize) -> Self {
        let (k_a, k_b) = kinds.subset_sizes(k);
        Self { lambda, kinds, k_a, k_b, subset: SubsetRule::default() }
    }

    /// Directory name, e.g. `lambda_1e-6_CC_K50`.
    pub fn label(&self) -> String {
        let k = if self.kinds.a == StateKind::E { self.k_b } else { self.k_a };
        format!("lambda_{:e}_{}_K{}", self.lambda, self.kinds, k)
    }

    fn seed_cell(&self) -> u64 {
        let d = Sha256::digest(self.label().as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }

    pub fn mean_c2(&self) -> (f64, f64) {
        (self.kinds.a.mean_c2(self.k_a), self.kinds.b.mean_c2(self.k_b))
    }

    /// Initial states of one realization, in the local eigenbasis.
    pub fn sample_states(&self, dims: SubsystemDims, master: u64, realization: usize, count: usize) -> Result<Vec<SparseState>> {
        let cell = self.seed_cell();
        (0..count)
            .into_par_iter()
            .map(|s| {
                let mut rng = SeedTag::state(master, cell, realization as u64, s as u64).rng();
                let mut spec = |kind, k, dim| match self.subset {
                    SubsetRule::Lowest if kind != StateKind::E => SubsystemStateSpec::lowest(kind, k, dim),
                    _ => SubsystemStateSpec::random_subset(kind, k, dim, &mut rng),
                };
                let spec_a = spec(self.kinds.a, self.k_a, dims.n_a())?;
                let spec_b = spec(self.kinds.b, self.k_b, dims.n_b())?;
                let a = make_subsystem_state(&spec_a, &mut rng)?;
                let b = make_subsystem_state(&spec_b, &mut rng)?;
                Ok(SparseState::from_product(&a, &b))
            })
            .collect()
    }

    pub fn window_iterations(&self, coupling: &CouplingStrength, window: [f64; 2], samples: usize, master: u64) -> Result<Vec<u64>> {
        let mut rng = SeedTag::new(master, [domain::WINDOW, self.seed_cell(), 0, 0]).rng();
        window_iterations(coupling, window, samples, &mut rng)
    }

    pub fn regime(&self, t: f64) -> Regime {
        overlay_regime(self.lambda, self.kinds, t)
    }

    /// Theory prediction for the ensemble mean at rescaled time `t`.
    pub fn theory(&self, t: f64, dims: SubsystemDims) -> Result<(f64, Regime)> {
        let (ca, cb) = self.mean_c2();
        let lambda = self.lambda;
        let regime = self.regime(t);
        let v = match regime {
            Regime::Strong => theory::strong_curve(t, lambda, dims),
            Regime::Intermediate => theory::intermediate_curve(t, lambda, dims),
            Regime::WeakEE => theory::ee_mean_curve(t, lambda),
            Regime::WeakEC => theory::ec_mean_curve(t, lambda, if self.kinds.a == StateKind::E { cb } else { ca })?,
            Regime::Ultraweak => theory::ultraweak_curve(t, ca, cb),
            Regime::WeakCombined => theory::weak_combined_short(t, lambda, ca, cb),
        };
        Ok((v, regime))
    }

    /// Long-time limit of [`CellSpec::theory`].
    pub fn theory_saturation(&self, dims: SubsystemDims) -> f64 {
        let (ca, cb) = self.mean_c2();
        match self.regime(f64::INFINITY) {
            Regime::Strong | Regime::Intermediate => theory::haar_saturation(dims),
            Regime::WeakEE => theory::ee_saturation(self.lambda),
            Regime::WeakEC => theory::ec_saturation(self.lambda, if self.kinds.a == StateKind::E { cb } else { ca }),
            Regime::Ultraweak | Regime::WeakCombined => ca * cb,
        }
    }
}

/// Which theory curve a cell is compared with.
pub fn overlay_regime(lambda: f64, kinds: KindPair, t: f64) -> Regime {
    let e_count = (kinds.a == StateKind::E) as u8 + (kinds.b == StateKind::E) as u8;
    if lambda > 1.0 {
        Regime::Strong
    } else if lambda >= 1e-2 {
        Regime::Intermediate
    } else if e_count == 2 {
        Regime::WeakEE
    } else if e_count == 1 {
        Regime::WeakEC
    } else if lambda <= 1e-5 || t > WEAK_SHORT_TIME {
        Regime::Ultraweak
    } else {
        Regime::WeakCombined
    }
}

// ---------------------------------------------------------------- simulation

/// One realization in the local eigenbasis, ready to propagate.
pub struct PreparedRealization {
    pub index: usize,
    pub seed_tag: SeedTag,
    pub coupling: CouplingStrength,
    pub sd: SpectralDecomposition,
    pub gram: Option<ItaGram>,
}

pub fn prepare_realization(
    dims: SubsystemDims,
    lambda: f64,
    master: u64,
    index: usize,
    with_gram: bool,
) -> Result<PreparedRealization> {
    let coupling = CouplingStrength::from_lambda(lambda, dims)?;
    let (r, sd) = sample_decomposed(dims, coupling, master, lambda.to_bits(), index as u64)?;
    let sd = LocalBasis::of(&r)?.transform(&sd);
    let gram = if with_gram { Some(ItaGram::new(&sd, dims)?) } else { None };
    Ok(PreparedRealization { index, seed_tag: r.seed_tag, coupling, sd, gram })
}

/// Per-realization output of one cell.
#[derive(Clone, Debug)]
pub struct CellRealization {
    /// `traces[state][time]`.
    pub traces: Vec<Vec<f64>>,
    pub s2bar: Vec<f64>,
    pub window: WindowSamples,
}

pub fn simulate_cell_realization(
    prep: &PreparedRealization,
    states: &[SparseState],
    dims: SubsystemDims,
    grid_iterations: &[u64],
    window_iterations: &[u64],
) -> Result<CellRealization> {
    let prop = BatchPropagator::new(&prep.sd, dims, states)?;
    let mut traces = vec![Vec::with_capacity(grid_iterations.len()); states.len()];
    for &n in grid_iterations {
        for (tr, v) in traces.iter_mut().zip(prop.linear_entropies(n)) {
            tr.push(v);
        }
    }
    let window = WindowSamples::collect(&prop, window_iterations);
    let s2bar = match &prep.gram {
        Some(g) => infinite_time_avg_exact_batch(g, &prop, states),
        None => window.state_means(),
    };
    Ok(CellRealization { traces, s2bar, window })
}

/// Like [`simulate_cell_realization`] for several cells at once, sharing one
/// propagator; returns one result per input group.
pub fn simulate_group(
    prep: &PreparedRealization,
    groups: &[Vec<SparseState>],
    dims: SubsystemDims,
    grid_iterations: &[u64],
    window_iterations: &[u64],
) -> Result<Vec<CellRealization>> {
    let all: Vec<SparseState> = groups.iter().flatten().cloned().collect();
    let joint = simulate_cell_realization(prep, &all, dims, grid_iterations, window_iterations)?;
    let mut traces = joint.traces.into_iter();
    let mut s2bar = joint.s2bar.into_iter();
    let mut lo = 0;
    Ok(groups
        .iter()
        .map(|g| {
            let hi = lo + g.len();
            let window = WindowSamples {
                iterations: joint.window.iterations.clone(),
                values: joint.window.values.iter().map(|row| row[lo..hi].to_vec()).collect(),
            };
            lo = hi;
            CellRealization { traces: traces.by_ref().take(g.len()).collect(), s2bar: s2bar.by_ref().take(g.len()).collect(), window }
        })
        .collect())
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub lambda: f64,
    pub index: usize,
    pub seed_tag: Option<String>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub cell: String,
    pub realization: Option<usize>,
    pub states: usize,
    /// Seed path of state `s` is this template with `{state}` replaced.
    pub state_seed_template: Option<String>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub realizations: Vec<RealizationRecord>,
    pub tasks: Vec<TaskRecord>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn failures(&self) -> usize {
        self.realizations.iter().filter(|r| r.error.is_some()).count() + self.tasks.iter().filter(|t| t.error.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub lambda: f64,
    pub kinds: KindPair,
    pub k_a: usize,
    pub k_b: usize,
    pub dims: SubsystemDims,
    pub s2bar_method: S2barMethod,
    pub theory_saturation: f64,
    #[serde(flatten)]
    pub summary: EnsembleSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub t: f64,
    pub simulated_mean: f64,
    pub theory: f64,
    pub regime: Regime,
}

/// Simulated mean curve next to the matching theory curve.
pub fn emit_overlays(cell: &CellSpec, dims: SubsystemDims, summary: &EnsembleSummary) -> Result<Vec<OverlayRow>> {
    summary
        .t_grid
        .iter()
        .zip(&summary.mean_curve)
        .map(|(&t, &m)| {
            let (theory, regime) = cell.theory(t, dims)?;
            Ok(OverlayRow { t, simulated_mean: m, theory, regime })
        })
        .collect()
}

// ---------------------------------------------------------------- run

struct CellAccumulator {
    cell: CellSpec,
    counts: SampleCounts,
    window_iters: Vec<u64>,
    rows: Vec<(usize, CellRealization)>,
}

/// Runs every cell of `config` and writes per-cell outputs plus `manifest.json`.
/// Relative output directories honour [`OUTPUT_ROOT_ENV`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
    let out = resolve_output_dir(&config.output_dir, root.as_deref());
    ensure_writable(&out)?;
    let started = Instant::now();
    let grid = config.time_grid.points()?;
    let mut manifest = RunManifest {
        config_hash: config.config_hash()?,
        version: VERSION.to_string(),
        master_seed: config.master_seed,
        output_dir: out.clone(),
        realizations: Vec::new(),
        tasks: Vec::new(),
        total_seconds: 0.0,
    };
    write_json(&out.join("config.json"), config)?;

    let cells = config.cells();
    let mut lambdas: Vec<f64> = Vec::new();
    for c in &cells {
        if !lambdas.contains(&c.lambda) {
            lambdas.push(c.lambda);
        }
    }
    for lambda in lambdas {
        run_lambda(config, &out, &grid, lambda, &cells, &mut manifest)?;
    }
    manifest.total_seconds = started.elapsed().as_secs_f64();
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn failed_task(cell: &CellSpec, realization: Option<usize>, err: &Error) -> TaskRecord {
    log::error!("cell {} realization {realization:?}: {err}", cell.label());
    TaskRecord {
        cell: cell.label(),
        realization,
        states: 0,
        state_seed_template: None,
        seconds: 0.0,
        error: Some(err.to_string()),
    }
}

fn run_lambda(
    config: &ExperimentConfig,
    out: &Path,
    grid: &[f64],
    lambda: f64,
    cells: &[CellSpec],
    manifest: &mut RunManifest,
) -> Result<()> {
    let dims = config.dims;
    let master = config.master_seed;
    let setup = CouplingStrength::from_lambda(lambda, dims)
        .and_then(|c| grid.iter().map(|&t| c.iterations(t)).collect::<Result<Vec<_>>>().map(|g| (c, g)));
    let (coupling, grid_iters) = match setup {
        Ok(v) => v,
        Err(e) => {
            for cell in cells.iter().filter(|c| c.lambda == lambda) {
                manifest.tasks.push(failed_task(cell, None, &e));
            }
            return Ok(());
        }
    };
    let mut accs = Vec::new();
    for cell in cells.iter().filter(|c| c.lambda == lambda) {
        let Some(counts) = config.counts_for(cell) else {
            let e = Error::Config(format!("no protocol default for {}; set sample counts explicitly", cell.label()));
            manifest.tasks.push(failed_task(cell, None, &e));
            continue;
        };
        match cell.window_iterations(&coupling, config.saturation_window, config.window_samples, master) {
            Ok(window_iters) => accs.push(CellAccumulator { cell: *cell, counts, window_iters, rows: Vec::new() }),
            Err(e) => manifest.tasks.push(failed_task(cell, None, &e)),
        }
    }
    let n_real = accs.iter().map(|a| a.counts.realizations).max().unwrap_or(0);
    for r in 0..n_real {
        let t0 = Instant::now();
        let prep = prepare_realization(dims, lambda, master, r, config.s2bar == S2barMethod::Exact);
        let mut record = RealizationRecord { lambda, index: r, seed_tag: None, seconds: t0.elapsed().as_secs_f64(), error: None };
        let prep = match prep {
            Ok(p) => {
                record.seed_tag = Some(p.seed_tag.to_string());
                manifest.realizations.push(record);
                p
            }
            Err(e) => {
                log::error!("lambda {lambda} realization {r}: {e}");
                record.error = Some(e.to_string());
                manifest.realizations.push(record);
                continue;
            }
        };
        for acc in accs.iter_mut().filter(|a| r < a.counts.realizations) {
            let t0 = Instant::now();
            let n = acc.counts.states_per_realization;
            let result = acc
                .cell
                .sample_states(dims, master, r, n)
                .and_then(|states| simulate_cell_realization(&prep, &states, dims, &grid_iters, &acc.window_iters));
            match result {
                Ok(data) => {
                    manifest.tasks.push(TaskRecord {
                        cell: acc.cell.label(),
                        realization: Some(r),
                        states: n,
                        state_seed_template: Some(format!(
                            "{master}/{}/{}/{r}/{{state}}",
                            domain::STATE,
                            acc.cell.seed_cell()
                        )),
                        seconds: t0.elapsed().as_secs_f64(),
                        error: None,
                    });
                    acc.rows.push((r, data));
                }
                Err(e) => manifest.tasks.push(failed_task(&acc.cell, Some(r), &e)),
            }
        }
    }
    for acc in accs {
        if let Err(e) = write_cell(config, out, grid, &grid_iters, acc.cell, acc.counts, acc.rows) {
            if matches!(e, Error::Io { .. }) {
                return Err(e);
            }
            manifest.tasks.push(failed_task(&acc.cell, None, &e));
        }
    }
    Ok(())
}

fn write_cell(
    config: &ExperimentConfig,
    out: &Path,
    grid: &[f64],
    grid_iters: &[u64],
    cell: CellSpec,
    counts: SampleCounts,
    rows: Vec<(usize, CellRealization)>,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InsufficientSampling { distinct: 0, required: 1 });
    }
    let dir = out.join(cell.label());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    if config.write_traces {
        let mut w = csv_writer(&dir.join("traces.csv"))?;
        w.write_record(["t", "n", "s2", "realization", "state"])?;
        for (r, data) in &rows {
            for (s, tr) in data.traces.iter().enumerate() {
                for ((t, n), v) in grid.iter().zip(grid_iters).zip(tr) {
                    w.serialize((t, n, v, r, s))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("traces.csv"), e))?;
    }

    let mut w = csv_writer(&dir.join("s2bar.csv"))?;
    w.write_record(["realization", "state", "s2bar"])?;
    for (r, data) in &rows {
        for (s, v) in data.s2bar.iter().enumerate() {
            w.serialize((r, s, v))?;
        }
    }
    w.flush().map_err(|e| Error::io(dir.join("s2bar.csv"), e))?;

    let realizations = rows.len();
    let mut traces = Vec::new();
    let mut s2bar = Vec::new();
    let mut windows = Vec::new();
    for (_, data) in rows {
        traces.extend(data.traces);
        s2bar.extend(data.s2bar);
        windows.push(data.window);
    }
    let window = WindowSamples::merge(windows)?;
    let counts = SampleCounts { states_per_realization: counts.states_per_realization, realizations };
    let summary = EnsembleSummary::from_parts(grid.to_vec(), &traces, s2bar, &window, counts)?;

    let hist = s2bar_density(&summary.s2bar_samples, config.histogram.binning, config.histogram.bins)?;
    let mut w = csv_writer(&dir.join("histogram.csv"))?;
    w.write_record(["bin_lo", "bin_hi", "density", "count"])?;
    for ((e, d), c) in hist.bin_edges.windows(2).zip(&hist.density).zip(&hist.counts) {
        w.serialize((e[0], e[1], d, c))?;
    }
    w.flush().map_err(|e| Error::io(dir.join("histogram.csv"), e))?;

    let overlays = emit_overlays(&cell, config.dims, &summary)?;
    let mut w = csv_writer(&dir.join("overlays.csv"))?;
    for row in &overlays {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("overlays.csv"), e))?;

    let cs = CellSummary {
        cell: cell.label(),
        lambda: cell.lambda,
        kinds: cell.kinds,
        k_a: cell.k_a,
        k_b: cell.k_b,
        dims: config.dims,
        s2bar_method: config.s2bar,
        theory_saturation: cell.theory_saturation(config.dims),
        summary,
    };
    write_json(&dir.join("summary.json"), &cs)
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
