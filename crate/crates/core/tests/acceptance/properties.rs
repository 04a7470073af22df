//! Structural invariants on a small system, plus end-to-end determinism.

use crate::Line;
use crate::fixtures::SEED;
use bipartite_rmt::dynamics::{
    evolve_iterations, purity, sample_decomposed, schmidt_spectrum_of, BatchPropagator, Subsystem,
};
use bipartite_rmt::ensemble::{build_floquet, CouplingStrength, SubsystemDims};
use bipartite_rmt::rng::{domain, SeedTag};
use bipartite_rmt::runner::{prepare_realization, run_experiment, simulate_cell_realization, CellSpec, ExperimentConfig};
use bipartite_rmt::states::StateKind;
use bipartite_rmt::stats::{equilibrium_measure, iteration_samples, relaxation_measure, WindowSamples};
use bipartite_rmt::{theory, unitarity_residual};
use std::path::Path;

pub fn run() -> Line {
    let mut failures: Vec<String> = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            eprintln!("  property failed: {what}");
            failures.push(what);
        }
    };
    let dims = SubsystemDims::new(6, 7).unwrap();
    let pmin = 1.0 / 6.0;
    let mut checks = 0;

    for (i, lambda) in [0.0, 1e-4, 0.3, 0.7].into_iter().enumerate() {
        let coupling = if lambda == 0.0 { CouplingStrength::from_epsilon(0.0, dims) } else { CouplingStrength::from_lambda(lambda, dims) }.unwrap();
        let (r, sd) = sample_decomposed(dims, coupling, SEED, 100 + i as u64, 0).unwrap();
        let res = unitarity_residual(build_floquet(&r).as_ref());
        check(res < 1e-10, format!("Floquet unitarity residual {res:e} at Λ={lambda}"));
        checks += 1;

        let cell = CellSpec::new(lambda, "CR".parse().unwrap(), 3);
        let states = cell.sample_states(dims, SEED, i, 20).unwrap();
        for st in &states {
            let psi0 = st.to_pure(dims.total());
            for n in [0, 1, 7, 100, 5000] {
                let psi = evolve_iterations(&psi0, &sd, n).unwrap();
                let norm = psi.norm();
                let (sa, sb) = (
                    schmidt_spectrum_of(&psi, dims, Subsystem::A).unwrap(),
                    schmidt_spectrum_of(&psi, dims, Subsystem::B).unwrap(),
                );
                let spec_gap = sa.eigenvalues.iter().zip(&sb.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let p = purity(&psi, dims).unwrap();
                check((norm - 1.0).abs() < 1e-10, format!("norm {norm} at Λ={lambda}, n={n}"));
                check(spec_gap < 1e-10, format!("Schmidt spectra differ by {spec_gap:e}"));
                check(p >= pmin - 1e-12 && p <= 1.0 + 1e-12, format!("purity {p} outside [1/6, 1]"));
                check(sb.eigenvalues[6..].iter().all(|l| l.abs() < 1e-10), "rank of ρ_B exceeds 6".into());
                checks += 4;
            }
        }
    }

    // the temporal part only adds to the equilibrium fluctuation
    for k in 2..=6 {
        for kind in [StateKind::C, StateKind::R] {
            let (c2, c4) = (kind.mean_c2(k), kind.mean_c4(k));
            let sigma2 = if kind == StateKind::R { theory::rr_equilibrium(k, k) } else { 0.0 };
            let total = theory::relaxation_decomposition(sigma2, c4, c4, c2, c2).unwrap();
            check(total >= sigma2, format!("decomposition below σ² for {kind:?} K={k}"));
            checks += 1;
        }
    }
    let prep = prepare_realization(dims, 1e-3, SEED, 0, true).unwrap();
    let cell = CellSpec::new(1e-3, "RR".parse().unwrap(), 3);
    let states = cell.sample_states(dims, SEED, 0, 300).unwrap();
    let mut rng = SeedTag::new(SEED, [domain::WINDOW, 20, 0, 0]).rng();
    let ns = iteration_samples(1_000, 1_000_000, 100, &mut rng).unwrap();
    let prop = BatchPropagator::new(&prep.sd, dims, &states).unwrap();
    let window = WindowSamples::collect(&prop, &ns);
    let (relax, eq) = (relaxation_measure(&window.values).unwrap().mean, equilibrium_measure(&window.state_means()).unwrap());
    check(relax >= eq, format!("relaxation {relax:.3e} below equilibrium {eq:.3e}"));
    checks += 1;

    // thread count does not change results
    let grid: Vec<u64> = vec![0, 3, 50, 400];
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let st = cell.sample_states(dims, SEED, 0, 40).unwrap();
                simulate_cell_realization(&prep, &st, dims, &grid, &ns[..20]).unwrap()
            })
    };
    let (one, four) = (in_pool(1), in_pool(4));
    check(
        one.traces == four.traces && one.s2bar == four.s2bar && one.window.values == four.window.values,
        "results depend on the thread count".into(),
    );
    checks += 1;

    // reruns are byte-identical
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let cfg = ExperimentConfig::from_json(&format!(
            r#"{{"dims":[6,7],"lambdas":[1e-3,0.5],"ensembles":["CC","EE","ER"],"k_values":[2,3],
                "states_per_realization":12,"realizations":2,"window_samples":30,"master_seed":{SEED},
                "output_dir":{:?}}}"#,
            d.path()
        ))
        .unwrap();
        let manifest = run_experiment(&cfg).unwrap();
        check(manifest.failures() == 0, format!("{} failed tasks in the determinism run", manifest.failures()));
    }
    let (same, files) = compare_trees(dirs[0].path(), dirs[1].path());
    check(same, "rerun outputs differ".into());
    checks += 3;

    let n_failed = failures.len();
    Line::new(
        12,
        n_failed == 0,
        format!(
            "invariants: {checks} checks on (6,7) (unitarity, norm, Schmidt symmetry, purity bounds, variance decomposition, \
             thread independence, {files} output files byte-identical on rerun), {n_failed} failed"
        ),
    )
}

/// Compares every file except the manifest (timings) and the config echo (output path).
fn compare_trees(a: &Path, b: &Path) -> (bool, usize) {
    let mut same = true;
    let mut count = 0;
    for entry in walk(a) {
        let rel = entry.strip_prefix(a).unwrap();
        if rel.file_name().is_some_and(|n| n == "manifest.json" || n == "config.json") {
            continue;
        }
        let (x, y) = (std::fs::read(&entry).unwrap(), std::fs::read(b.join(rel)).unwrap_or_default());
        same &= x == y;
        count += 1;
    }
    (same && count > 0, count)
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}
