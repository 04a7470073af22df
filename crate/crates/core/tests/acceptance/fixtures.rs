//! Shared simulations. Each coupling strength is simulated once; all cells
//! at that strength use the same realizations.

use bipartite_rmt::c64;
use bipartite_rmt::dynamics::SparseState;
use bipartite_rmt::ensemble::{CouplingStrength, SubsystemDims};
use bipartite_rmt::rng::{domain, SeedTag};
use bipartite_rmt::runner::{prepare_realization, simulate_group, CellRealization, CellSpec, KindPair};
use bipartite_rmt::states::StateKind;
use bipartite_rmt::stats::{
    mean_curve, normalized_variance_estimate, relaxation_measure, window_iterations, WindowSamples,
};
use std::time::Instant;

pub const SEED: u64 = 20_211_027;
const WEAK_REALIZATIONS: usize = 16;
const EC_STATES: usize = 1500;
const COUPLED_REALIZATIONS: usize = 2;
const RELAX_STATES: usize = 25;
const RELAX_WINDOW: usize = 100;

pub struct CellData {
    pub cell: CellSpec,
    pub grid: Vec<f64>,
    /// `traces[state][time]`.
    pub traces: Vec<Vec<f64>>,
    pub s2bar: Vec<f64>,
    pub windows: Vec<WindowSamples>,
}

impl CellData {
    fn new(cell: CellSpec, grid: &[f64]) -> Self {
        Self { cell, grid: grid.to_vec(), traces: Vec::new(), s2bar: Vec::new(), windows: Vec::new() }
    }

    fn absorb(&mut self, r: CellRealization) {
        self.traces.extend(r.traces);
        self.s2bar.extend(r.s2bar);
        if !r.window.iterations.is_empty() {
            self.windows.push(r.window);
        }
    }

    pub fn name(&self) -> String {
        let k = if self.cell.kinds.a == StateKind::E { self.cell.k_b } else { self.cell.k_a };
        format!("{} K={k}", self.cell.kinds)
    }

    pub fn mean_curve(&self) -> Vec<f64> {
        mean_curve(&self.traces, self.grid.len()).expect("traces").0
    }

    pub fn mean_curve_se(&self) -> Vec<f64> {
        mean_curve(&self.traces, self.grid.len()).expect("traces").1
    }

    /// Mean of the mean curve over grid points in `[lo, hi]`.
    pub fn window_mean(&self, lo: f64, hi: f64) -> f64 {
        let m = self.mean_curve();
        let v: Vec<f64> = self.grid.iter().zip(&m).filter(|(t, _)| **t >= lo && **t <= hi).map(|(_, v)| *v).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn mean_s2bar(&self) -> f64 {
        self.s2bar.iter().sum::<f64>() / self.s2bar.len() as f64
    }

    pub fn equilibrium(&self) -> f64 {
        normalized_variance_estimate(&self.s2bar).expect("equilibrium measure").mean
    }

    pub fn relaxation(&self) -> f64 {
        let merged = WindowSamples::merge(self.windows.clone()).expect("window samples");
        relaxation_measure(&merged.values).expect("relaxation measure").mean
    }
}

fn pair(s: &str) -> KindPair {
    s.parse().expect("kind pair")
}

fn iterations(coupling: &CouplingStrength, grid: &[f64]) -> Vec<u64> {
    grid.iter().map(|&t| coupling.iterations(t).expect("positive coupling")).collect()
}

fn common_window(coupling: &CouplingStrength, tag: u64, samples: usize) -> Vec<u64> {
    let mut rng = SeedTag::new(SEED, [domain::WINDOW, tag, 0, 0]).rng();
    window_iterations(coupling, [2.0, 4.0], samples, &mut rng).expect("window")
}

fn run_group(
    prep: &bipartite_rmt::runner::PreparedRealization,
    dims: SubsystemDims,
    cells: &mut [CellData],
    counts: &[usize],
    grid_iters: &[u64],
    window: &[u64],
) {
    let groups: Vec<Vec<SparseState>> = cells
        .iter()
        .zip(counts)
        .map(|(c, &n)| c.cell.sample_states(dims, SEED, prep.index, n).expect("states"))
        .collect();
    let out = simulate_group(prep, &groups, dims, grid_iters, window).expect("simulation");
    for (c, r) in cells.iter_mut().zip(out) {
        c.absorb(r);
    }
}

/// Λ = 1e-6 on (50, 50).
pub struct WeakFixture {
    pub lambda: f64,
    pub coherent: Vec<CellData>,
    pub ec: Vec<CellData>,
    pub ee: CellData,
    /// Window samples only, over every realization. For C⊗C with K = N all
    /// states of one realization coincide, so the spread across the
    /// ensemble comes from the realizations.
    pub relax: Vec<CellData>,
}

impl WeakFixture {
    pub fn build() -> Self {
        let lambda = 1e-6;
        let dims = SubsystemDims::new(50, 50).unwrap();
        let coupling = CouplingStrength::from_lambda(lambda, dims).unwrap();

        let mut grid = vec![0.0];
        grid.extend((0..16).map(|i| 1e-3 * 120f64.powf(i as f64 / 15.0)));
        grid.extend((0..11).map(|i| 0.2 + 0.1 * i as f64));
        grid.extend((0..9).map(|i| 1.4 + 0.2 * i as f64));
        let sparse_grid = [0.0, 0.01, 0.03, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 1.0, 1.5, 2.0, 2.5, 3.0];

        let mut small: Vec<CellData> = Vec::new();
        for kinds in ["CC", "RR"] {
            for k in [2, 4, 6, 10] {
                small.push(CellData::new(CellSpec::new(lambda, pair(kinds), k), &grid));
            }
        }
        small.push(CellData::new(CellSpec::new(lambda, pair("CC"), 50), &grid));
        small.push(CellData::new(CellSpec::new(lambda, pair("RR"), 50), &grid));
        // the mean curve scatters more between realizations than between
        // states, so few states over many realizations
        let mut counts = vec![200; 8];
        counts.extend([20, 40]);

        let mut ec: Vec<CellData> = Vec::new();
        for kinds in ["EC", "ER"] {
            for k in [2, 4, 6] {
                ec.push(CellData::new(CellSpec::new(lambda, pair(kinds), k), &sparse_grid));
            }
        }
        let mut ee = CellData::new(CellSpec::new(lambda, pair("EE"), 1), &sparse_grid);

        let (grid_iters, sparse_iters) = (iterations(&coupling, &grid), iterations(&coupling, &sparse_grid));
        let mut relax: Vec<CellData> = Vec::new();
        for (kinds, ks) in [("CC", [4, 6, 10, 50].as_slice()), ("RR", [6, 10, 50].as_slice())] {
            for &k in ks {
                relax.push(CellData::new(CellSpec::new(lambda, pair(kinds), k), &[]));
            }
        }
        let relax_counts = vec![RELAX_STATES; relax.len()];
        let window = common_window(&coupling, 1, RELAX_WINDOW);
        // every product eigenstate |jk⟩ of the uncoupled system
        let basis: Vec<SparseState> =
            (0..dims.total()).map(|i| SparseState { entries: vec![(i, c64::new(1.0, 0.0))] }).collect();

        let start = Instant::now();
        for r in 0..WEAK_REALIZATIONS {
            let prep = prepare_realization(dims, lambda, SEED, r, true).expect("realization");
            run_group(&prep, dims, &mut small, &counts, &grid_iters, &[]);
            run_group(&prep, dims, &mut relax, &relax_counts, &[], &window);
            let mut groups: Vec<Vec<SparseState>> =
                ec.iter().map(|c| c.cell.sample_states(dims, SEED, r, EC_STATES).expect("states")).collect();
            groups.push(basis.clone());
            let mut out = simulate_group(&prep, &groups, dims, &sparse_iters, &[]).expect("simulation");
            ee.absorb(out.pop().unwrap());
            for (c, o) in ec.iter_mut().zip(out) {
                c.absorb(o);
            }
            eprintln!("weak realization {r}: done at {:.0} s", start.elapsed().as_secs_f64());
        }
        Self { lambda, coherent: small, ec, ee, relax }
    }

    pub fn cell(&self, a: StateKind, b: StateKind, k: usize) -> &CellData {
        self.coherent
            .iter()
            .find(|c| c.cell.kinds == KindPair::new(a, b) && c.cell.k_a == k)
            .expect("cell present in fixture")
    }

    pub fn relax_cell(&self, a: StateKind, b: StateKind, k: usize) -> &CellData {
        self.relax
            .iter()
            .find(|c| c.cell.kinds == KindPair::new(a, b) && c.cell.k_a == k)
            .expect("cell present in fixture")
    }

    /// The eight C⊗C / R⊗R cells with K ∈ {2, 6, 10, 50}.
    pub fn law_cells(&self) -> impl Iterator<Item = &CellData> {
        self.coherent.iter().filter(|c| [2, 6, 10, 50].contains(&c.cell.k_a))
    }
}

/// R⊗R with K = 2 and 50 on (50, 50) at a coupling of order one or larger.
pub struct CoupledFixture {
    pub lambda: f64,
    pub dims: SubsystemDims,
    pub cells: Vec<CellData>,
}

impl CoupledFixture {
    pub fn build(lambda: f64, states: usize) -> Self {
        let dims = SubsystemDims::new(50, 50).unwrap();
        let coupling = CouplingStrength::from_lambda(lambda, dims).unwrap();
        // every iteration up to t = 0.3, then a coarse tail
        let n_fine = coupling.iterations(0.3).unwrap();
        let mut grid: Vec<f64> = (0..=n_fine).map(|n| coupling.rescaled_time(n)).collect();
        let n_fine = n_fine.min(60);
        grid.truncate(n_fine as usize + 1);
        let last = *grid.last().unwrap();
        grid.extend((1..=30).map(|i| 0.1 * i as f64).filter(|t| *t > last + 1e-9));
        let grid_iters = iterations(&coupling, &grid);
        let grid: Vec<f64> = grid_iters.iter().map(|&n| coupling.rescaled_time(n)).collect();
        let window = common_window(&coupling, 2, 50);

        let mut cells = vec![
            CellData::new(CellSpec::new(lambda, pair("RR"), 2), &grid),
            CellData::new(CellSpec::new(lambda, pair("RR"), 50), &grid),
        ];
        let start = Instant::now();
        for r in 0..COUPLED_REALIZATIONS {
            let prep = prepare_realization(dims, lambda, SEED, r, true).expect("realization");
            run_group(&prep, dims, &mut cells, &[states, states], &grid_iters, &window);
            eprintln!("Λ={lambda} realization {r}: done at {:.0} s", start.elapsed().as_secs_f64());
        }
        Self { lambda, dims, cells }
    }
}
