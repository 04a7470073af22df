//! Acceptance suite: the twelve headline checks at their stated tolerances,
//! one PASS/FAIL line each. Expect roughly fifty minutes on one core.

mod fixtures;
mod properties;

use bipartite_rmt::ensemble::SubsystemDims;
use bipartite_rmt::rng::{domain, SeedTag};
use bipartite_rmt::states::StateKind;
use bipartite_rmt::theory;
use bipartite_rmt::validation::standard_suite;
use fixtures::{CellData, CoupledFixture, WeakFixture, SEED};
use std::process::ExitCode;
use std::time::Instant;

struct Line {
    id: usize,
    pass: bool,
    text: String,
}

impl Line {
    fn new(id: usize, pass: bool, text: String) -> Self {
        println!("[{}] {id:>2} {text}", if pass { "PASS" } else { "FAIL" });
        Self { id, pass, text }
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut lines = Vec::new();

    let weak = WeakFixture::build();
    lines.push(ultraweak_law(&weak));
    lines.push(universal_collapse(&weak));
    lines.push(saturation_values(&weak));
    lines.push(fluctuation_measures(&weak));
    lines.push(ee_weak_regime(&weak));
    lines.push(ec_curves(&weak));
    lines.push(crossover_times(&weak));
    drop(weak);

    let strong = CoupledFixture::build(10.0, 50);
    lines.push(strong_regime(&strong));
    drop(strong);
    let inter = CoupledFixture::build(1.0, 100);
    lines.push(intermediate_regime(&inter));
    drop(inter);

    lines.push(exact_ita_oracle());
    lines.push(validation_suite());
    lines.push(properties::run());

    println!();
    println!("acceptance summary ({:.0} s)", start.elapsed().as_secs_f64());
    for l in &lines {
        println!("[{}] {:>2} {}", if l.pass { "PASS" } else { "FAIL" }, l.id, l.text);
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    // failures are reported, not fatal, unless strict mode is requested
    let strict = std::env::var("BRMT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

/// Like `f64::max`, but a NaN wins.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// max over `t ≤ t_max` of |sim − theory|.
fn sup_error(cell: &CellData, t_max: f64, theory: impl Fn(f64) -> f64) -> f64 {
    let mean = cell.mean_curve();
    cell.grid.iter().zip(&mean).filter(|(t, _)| **t <= t_max).map(|(&t, m)| (m - theory(t)).abs()).fold(0.0, nan_max)
}

fn ultraweak_law(w: &WeakFixture) -> Line {
    let mut worst = (0.0, String::new());
    for cell in w.law_cells() {
        let (ca, cb) = cell.cell.mean_c2();
        let rel = sup_error(cell, 3.0, |t| theory::ultraweak_curve(t, ca, cb)) / (ca * cb);
        eprintln!("  law {}: sup error {:.2}% of saturation ({} states)", cell.name(), 100.0 * rel, cell.s2bar.len());
        if !(rel <= worst.0) {
            worst = (rel, cell.name());
        }
    }
    Line::new(
        1,
        worst.0 <= 0.05,
        format!("ultraweak Gaussian law: worst sup-norm {:.2}% of saturation ({}), tolerance 5%", 100.0 * worst.0, worst.1),
    )
}

fn universal_collapse(w: &WeakFixture) -> Line {
    let curves: Vec<(String, Vec<f64>)> = w
        .law_cells()
        .map(|c| {
            let mean = c.mean_curve();
            let sat = c.window_mean(2.0, 3.0);
            (c.name(), c.grid.iter().zip(&mean).filter(|(t, _)| **t <= 3.0).map(|(_, m)| m / sat).collect())
        })
        .collect();
    let mut worst = (0.0, String::new());
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let d = curves[i].1.iter().zip(&curves[j].1).map(|(a, b)| (a - b).abs()).fold(0.0, nan_max);
            if !(d <= worst.0) {
                worst = (d, format!("{} vs {}", curves[i].0, curves[j].0));
            }
        }
    }
    Line::new(
        2,
        worst.0 <= 0.03,
        format!("universal collapse: worst pairwise sup-norm {:.2}% ({}), tolerance 3%", 100.0 * worst.0, worst.1),
    )
}

fn saturation_values(w: &WeakFixture) -> Line {
    let cc = w.cell(StateKind::C, StateKind::C, 50).mean_s2bar();
    let rr = w.cell(StateKind::R, StateKind::R, 50).mean_s2bar();
    let (ecc, err) = (0.9604, (49.0f64 / 51.0).powi(2));
    let (dc, dr) = ((cc - ecc).abs() / ecc, (rr - err).abs() / err);
    Line::new(
        3,
        dc <= 0.02 && dr <= 0.02,
        format!(
            "saturation: CC K=50 {cc:.4} (expect 0.9604, off {:.2}%), RR K=50 {rr:.4} (expect {err:.4}, off {:.2}%), tolerance 2%",
            100.0 * dc,
            100.0 * dr
        ),
    )
}

fn fluctuation_measures(w: &WeakFixture) -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [4, 6, 10, 50] {
        let sim = w.relax_cell(StateKind::C, StateKind::C, k).relaxation();
        let th = theory::cc_relaxation(k, k).expect("K >= 2");
        let ratio = sim / th;
        ok &= (1.0 / 1.5..=1.5).contains(&ratio);
        parts.push(format!("CC K={k} relax x{ratio:.2}"));
    }
    // the relaxation measure adds the temporal term to σ²(S̄₂); the two agree
    // only to leading order in K
    for k in [6, 10, 50] {
        let eq_th = theory::rr_equilibrium(k, k);
        let (c2, c4) = (StateKind::R.mean_c2(k), StateKind::R.mean_c4(k));
        let rl_th = theory::relaxation_decomposition(eq_th, c4, c4, c2, c2).expect("coherence > 0");
        let eq = w.cell(StateKind::R, StateKind::R, k).equilibrium() / eq_th - 1.0;
        let rl_sim = w.relax_cell(StateKind::R, StateKind::R, k).relaxation();
        let rl = rl_sim / rl_th - 1.0;
        eprintln!("  RR K={k}: relaxation / σ²(S̄₂) theory {:.2}", rl_sim / eq_th);
        ok &= eq.abs() <= 0.2 && rl.abs() <= 0.2;
        parts.push(format!("RR K={k} eq {:+.0}% relax {:+.0}%", 100.0 * eq, 100.0 * rl));
    }
    Line::new(4, ok, format!("fluctuation measures: {} (tolerances x1.5 and 20%)", parts.join(", ")))
}

fn ee_weak_regime(w: &WeakFixture) -> Line {
    let lambda = w.lambda;
    let ee = &w.ee;
    let mean = ee.mean_curve();
    let (num, den) = ee
        .grid
        .iter()
        .zip(&mean)
        .filter(|(t, _)| **t <= 0.05)
        .fold((0.0, 0.0), |(n, d), (t, m)| (n + t * m, d + t * t));
    let slope = num / den;
    let slope_th = 4.0 * std::f64::consts::PI * lambda.sqrt();
    let slope_err = (slope - slope_th).abs() / slope_th;

    let long = ee.mean_s2bar();
    let long_th = theory::ee_saturation(lambda);
    let long_err = (long - long_th).abs() / long_th;

    // density on twelve log bins over [1e-5, 0.3]
    let n = ee.s2bar.len() as f64;
    let edges: Vec<f64> = (0..=12).map(|i| 1e-5 * (0.3f64 / 1e-5).powf(i as f64 / 12.0)).collect();
    let mut worst_ratio: f64 = 1.0;
    for e in edges.windows(2) {
        let count = ee.s2bar.iter().filter(|&&x| x >= e[0] && x < e[1]).count() as f64;
        let th = theory::ee_density_mass(lambda, e[0], e[1]).expect("density quadrature");
        let ratio = count / (n * th);
        eprintln!("  density [{:.2e}, {:.2e}): {count} samples, sim/theory {ratio:.3}", e[0], e[1]);
        if (ratio.ln()).abs() > worst_ratio.ln().abs() {
            worst_ratio = ratio;
        }
    }
    let density_ok = (0.5..=2.0).contains(&worst_ratio);

    // local maximum just below 1/3 and the drop above it
    let dens = |a: f64, b: f64| ee.s2bar.iter().filter(|&&x| x >= a && x < b).count() as f64 / (n * (b - a));
    let (below, edge, above) = (dens(0.2, 0.3), dens(0.3, 1.0 / 3.0), dens(1.0 / 3.0, 0.45));
    let feature_ok = edge > below && above < 0.5 * edge;

    Line::new(
        5,
        slope_err <= 0.10 && long_err <= 0.15 && density_ok && feature_ok,
        format!(
            "E⊗E weak regime ({} states): slope off {:.1}% (tol 10%), long-time mean {:.3e} vs {:.3e} off {:.1}% (tol 15%), \
             worst density ratio {:.2} (tol x2), density near 1/3: {:.3} / {:.3} / {:.3} on [0.2,0.3) [0.3,1/3) [1/3,0.45)",
            ee.s2bar.len(),
            100.0 * slope_err,
            long,
            long_th,
            100.0 * long_err,
            worst_ratio,
            below,
            edge,
            above
        ),
    )
}

fn ec_curves(w: &WeakFixture) -> Line {
    let mut worst = (0.0, String::new());
    for cell in &w.ec {
        let cb = cell.cell.kinds.b.mean_c2(cell.cell.k_b);
        let sat = theory::ec_saturation(w.lambda, cb);
        let rel = sup_error(cell, 3.0, |t| theory::ec_mean_curve(t, w.lambda, cb).expect("C2 table")) / sat;
        eprintln!("  {}: sup error {:.1}% of saturation ({} states)", cell.name(), 100.0 * rel, cell.s2bar.len());
        if !(rel <= worst.0) {
            worst = (rel, cell.name());
        }
    }
    Line::new(6, worst.0 <= 0.15, format!("E⊗C / E⊗R curves: worst sup-norm {:.1}% of saturation ({}), tolerance 15%", 100.0 * worst.0, worst.1))
}

/// Fits `⟨S₂⟩/t = a + b t` on the short-time grid; `t* = a/b`.
fn crossover_fit(cell: &CellData) -> f64 {
    let mean = cell.mean_curve();
    let pts: Vec<(f64, f64)> =
        cell.grid.iter().zip(&mean).filter(|(t, _)| **t > 0.0 && **t <= 0.12).map(|(&t, &m)| (t, m / t)).collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    a / b
}

fn crossover_times(w: &WeakFixture) -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, expect) in [(2, 0.056), (4, 0.017), (50, 0.0068)] {
        let t = crossover_fit(w.cell(StateKind::R, StateKind::R, k));
        let err = (t - expect).abs() / expect;
        ok &= err <= 0.25;
        parts.push(format!("K={k} {t:.4} (expect {expect}, off {:.0}%)", 100.0 * err));
    }
    Line::new(7, ok, format!("crossover times (R⊗R): {}, tolerance 25%", parts.join(", ")))
}

/// Two-sided z threshold whose family-wise level over `m` comparisons
/// equals that of a single 3σ test.
fn sidak_z(m: usize) -> f64 {
    let alpha = libm::erfc(3.0 / std::f64::consts::SQRT_2);
    let per = 1.0 - (1.0 - alpha).powf(1.0 / m as f64);
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if libm::erfc(mid / std::f64::consts::SQRT_2) > per {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn strong_regime(f: &CoupledFixture) -> Line {
    let dims = f.dims;
    let sat_th = theory::haar_saturation(dims);
    let mut ok = true;
    let mut parts = Vec::new();
    for cell in &f.cells {
        let curve = sup_error(cell, f64::INFINITY, |t| theory::strong_curve(t, f.lambda, dims)) / sat_th;
        let sat = cell.mean_s2bar();
        let (eq, rl) = (cell.equilibrium(), cell.relaxation());
        let sat_err = (sat - 0.96).abs() / 0.96;
        ok &= curve <= 0.05 && sat_err <= 0.01 && eq < 1e-3 && rl < 1e-3;
        parts.push(format!(
            "{}: sup {:.1}%, saturation {sat:.4}, measures {eq:.1e}/{rl:.1e}",
            cell.name(),
            100.0 * curve
        ));
    }
    let (a, b) = (&f.cells[0], &f.cells[1]);
    let (ma, mb) = (a.mean_curve(), b.mean_curve());
    let (sa, sb) = (a.mean_curve_se(), b.mean_curve_se());
    let mut zmax: f64 = 0.0;
    let mut m = 0;
    for i in 0..ma.len() {
        let se = (sa[i].powi(2) + sb[i].powi(2)).sqrt();
        let diff = (ma[i] - mb[i]).abs();
        // at t = 0 every state is a product state; the spread is rounding
        if se < 1e-12 {
            ok &= diff < 1e-10;
        } else {
            let z = diff / se;
            if z > zmax {
                eprintln!("  K=2 vs K=50 at t={:.4}: {:.6} vs {:.6}, z {z:.2}", f.cells[0].grid[i], ma[i], mb[i]);
            }
            zmax = zmax.max(z);
            m += 1;
        }
    }
    let zc = sidak_z(m);
    ok &= zmax <= zc;
    Line::new(
        8,
        ok,
        format!(
            "strong regime (Λ=10): {}; K=2 vs K=50 max |z| {zmax:.2} over {m} times (limit {zc:.2}); tolerances 5%, 0.96±1%, <1e-3",
            parts.join("; ")
        ),
    )
}

fn intermediate_regime(f: &CoupledFixture) -> Line {
    let dims = f.dims;
    let sat = theory::intermediate_curve(f64::INFINITY, f.lambda, dims);
    let mut worst = (0.0, String::new());
    for cell in &f.cells {
        let rel = sup_error(cell, f64::INFINITY, |t| theory::intermediate_curve(t, f.lambda, dims)) / sat;
        eprintln!("  {}: sup error {:.1}%, saturation {:.4}", cell.name(), 100.0 * rel, cell.mean_s2bar());
        if !(rel <= worst.0) {
            worst = (rel, cell.name());
        }
    }
    Line::new(9, worst.0 <= 0.10, format!("intermediate regime (Λ=1): worst sup-norm {:.1}% ({}), tolerance 10%", 100.0 * worst.0, worst.1))
}

fn exact_ita_oracle() -> Line {
    use bipartite_rmt::dynamics::{evolve_iterations, linear_entropy, PureState};
    use bipartite_rmt::runner::{prepare_realization, CellSpec};
    use bipartite_rmt::stats::{infinite_time_avg_exact, infinite_time_avg_iterations};

    let dims = SubsystemDims::new(8, 8).unwrap();
    let lambda = 0.5;
    let window = [2.0, 2000.0];
    let specs = [("CC", 2), ("RR", 3), ("EE", 1), ("EC", 4), ("ER", 2)];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (r, (pair, k)) in specs.iter().enumerate() {
        let prep = prepare_realization(dims, lambda, SEED, r, false).unwrap();
        let cell = CellSpec::new(lambda, pair.parse().unwrap(), *k);
        let states = cell.sample_states(dims, SEED, r, 10).unwrap();
        let (n_lo, n_hi) = (prep.coupling.iterations(window[0]).unwrap(), prep.coupling.iterations(window[1]).unwrap());
        for (s, st) in states.iter().enumerate() {
            let psi: PureState = st.to_pure(dims.total());
            let exact = infinite_time_avg_exact(&psi, &prep.sd, dims).unwrap();
            let mut rng = SeedTag::new(SEED, [domain::WINDOW, 10, r as u64, s as u64]).rng();
            let est = infinite_time_avg_iterations(
                |n| linear_entropy(&evolve_iterations(&psi, &prep.sd, n)?, dims),
                [n_lo, n_hi],
                400,
                &mut rng,
            )
            .unwrap();
            let z = (exact - est.mean).abs() / est.std_error;
            worst = worst.max(z);
            count += 1;
        }
    }
    Line::new(
        10,
        worst <= 3.0,
        format!(
            "exact vs empirical S̄₂ on (8,8), Λ={lambda}, {count} states across five kinds: worst |z| {worst:.2}, tolerance 3 combined SE"
        ),
    )
}

fn validation_suite() -> Line {
    let t0 = Instant::now();
    let mut rng = SeedTag::new(SEED, [domain::VALIDATION, 0, 0, 0]).rng();
    let (moments, exps) = standard_suite(100_000, &mut rng).unwrap();
    let mut failed = Vec::new();
    for m in &moments {
        eprintln!("  {m}");
        if !m.passes() {
            failed.push(m.quantity.clone());
        }
    }
    for e in &exps {
        eprintln!("  exponential law: KS {:.4} (threshold {:.4})", e.ks_statistic, e.ks_threshold);
        if !e.passes() {
            failed.push("exponential law".into());
        }
    }
    let zmax = moments.iter().map(|m| m.z_score().abs()).fold(0.0, f64::max);
    Line::new(
        11,
        failed.is_empty(),
        format!(
            "validation suite, 1e5 samples: {} moment reports + {} distribution checks, max |z| {zmax:.2}, {} failed{} ({:.0} s)",
            moments.len(),
            exps.len(),
            failed.len(),
            if failed.is_empty() { String::new() } else { format!(": {}", failed.join(", ")) },
            t0.elapsed().as_secs_f64()
        ),
    )
}
