//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails. `ACCEPTANCE_ONLY=3,7` restricts the run.

use moire_core::atomic::{assemble_h_d0, build_vd, ibp_identity_check, rank_bound_scan, AtomicDiscretization, SyntheticPotential, ZetaRoute};
use moire_core::effmodel::{
    band_structure, bm_potential, exact_dos, free_dirac_dos, generic_potential, moire_bz_grid, moire_path, textbook_layer_shift, DiracKinetic,
};
use moire_core::hscalc::{build_aae, build_quadrature, default_delta_y, eig_matrix_function, hs_with_rule, HsRule, TestFunction};
use moire_core::lattice::{combo, make_bz_grid, rot_j, twist_from_degrees, twist_from_eps, Cell, Lattice2D, Vec2};
use moire_core::linalg::{self, c64, CMat};
use moire_core::semiclassical::{dos_coefficients, DensityEvaluator, KappaDisc, SymbolBundle, XGrid};
use moire_core::weylbench::{
    compose_residual, loglog_slope, trace_check, trace_window, AdTerm, ComposeOptions, Cutoff, LatticeSymbol, RandomSymbolSpec, Window,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Chiral-limit bandwidth ratio (1.08 deg over 3 deg), frozen from the first run.
const MAGIC_RATIO_BASELINE: f64 = 8.233432274813e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let (_, u) = linalg::eigh(&linalg::hermitize(&g)).unwrap();
    let lam: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let m = CMat::from_fn(n, n, |i, j| (0..n).map(|k| u[(i, k)] * lam[k] * u[(j, k)].conj()).sum());
    linalg::hermitize(&m)
}

fn hs_oracle() -> Outcome {
    let f = TestFunction::bump(0.0, 1.0).unwrap();
    let aae = build_aae(&f, 8, default_delta_y(&f)).unwrap();
    let rule = HsRule::new(&aae, &build_quadrature(&aae, 200, 200).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let a = random_hermitian(&mut rng, 4);
        let hs = hs_with_rule(&a, &rule).unwrap().value;
        let ex = eig_matrix_function(&a, &f).unwrap().value;
        worst = worst.max(linalg::max_abs_diff(&hs, &ex));
    }
    outcome(worst <= 1e-6, format!("max |HS - eig| over 500 matrices = {worst:.3e} (tol 1e-6)"))
}

fn free_dirac() -> Outcome {
    let lat = Lattice2D::natural();
    let kin = DiracKinetic::new(1.0, &lat).unwrap();
    let pot = bm_potential(0.0, 0.0, &lat).unwrap();
    let f = TestFunction::bump(0.06, 0.04).unwrap();
    let tw = twist_from_eps(0.1).unwrap();
    let lambda = 8.0 * f.support_radius() / kin.vf;
    let grid = moire_bz_grid(&tw, &pot, 24).unwrap();
    let r = exact_dos(&f, &tw, &kin, &pot, lambda, &grid).unwrap();
    let want = free_dirac_dos(&f, kin.vf);
    let rel = (r.value / want - 1.0).abs();
    outcome(rel <= 0.01, format!("exact {:.6e} vs closed form {want:.6e}, relative {rel:.3e} (tol 1e-2)", r.value))
}

fn moyal_order() -> Outcome {
    let lat = Lattice2D::natural();
    let fiber = vec![[0, 0], [4, 0], [0, 4]];
    let spec = RandomSymbolSpec { shortest: true, ..Default::default() };
    let w = Window::new(6, 2).unwrap();
    let eps = [0.2, 0.1, 0.05];
    let (mut min_full, mut max_ablated) = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..10u64 {
        let a = LatticeSymbol::random(&lat, fiber.clone(), &spec, 100 + 2 * seed).unwrap();
        let b = LatticeSymbol::random(&lat, fiber.clone(), &spec, 101 + 2 * seed).unwrap();
        let full: Vec<f64> = eps.iter().map(|&e| compose_residual(&a, &b, e, &w, &ComposeOptions::default()).unwrap()).collect();
        let drop = ComposeOptions { ad: AdTerm::Drop, ..Default::default() };
        let abl: Vec<f64> = eps.iter().map(|&e| compose_residual(&a, &b, e, &w, &drop).unwrap()).collect();
        min_full = min_full.min(loglog_slope(&eps, &full));
        max_ablated = max_ablated.max(loglog_slope(&eps, &abl));
    }
    outcome(
        min_full >= 2.7 && max_ablated < 2.3,
        format!("smallest slope {min_full:.3} (need >= 2.7), largest ablated slope {max_ablated:.3} (need < 2.3)"),
    )
}

fn trace_formula() -> Outcome {
    let lat = Lattice2D::natural();
    let eps = 0.1;
    let mut unit = LatticeSymbol::scalar(&lat);
    unit.add_entry([0, 0], [0, 0], 0, 0, c64::new(1.0, 0.0)).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for n in [4usize, 8, 16] {
        let chi = Cutoff::new(n).unwrap();
        let w = trace_window(&unit, eps, &chi).unwrap();
        let t = trace_check(&unit, &chi, eps, &w).unwrap();
        let dev = (t.lhs / t.rhs - 1.0).norm();
        ok &= dev <= 1.0 / n as f64;
        detail.push_str(&format!("N={n}: |lhs/rhs-1|={dev:.3e}; "));
    }
    let fiber = vec![[0, 0], [4, 0], [0, 4]];
    let spec = RandomSymbolSpec { mean_zero: true, n_terms: 6, q_max: 2, rho_max: 1, ..Default::default() };
    let chi = Cutoff::new(16).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let s = LatticeSymbol::random(&lat, fiber.clone(), &spec, seed).unwrap();
        let w = trace_window(&s, eps, &chi).unwrap();
        let t = trace_check(&s, &chi, eps, &w).unwrap();
        worst = worst.max(t.lhs.norm() / t.scale);
    }
    ok &= worst <= 1e-3;
    detail.push_str(&format!("mean-zero |lhs|/scale={worst:.3e} (tol 1e-3)"));
    outcome(ok, detail)
}

/// Window and grids shared by the expansion criteria.
fn window() -> TestFunction {
    TestFunction::gauss_bump(0.05, 0.25, 1.0).unwrap()
}

fn coefficients(bundle: &SymbolBundle, f: &TestFunction) -> [f64; 3] {
    let ev = DensityEvaluator::new(bundle, f);
    let disc = KappaDisc::for_support(f, bundle, 0.03).unwrap();
    let xg = XGrid::new(bundle, 8).unwrap();
    dos_coefficients(&ev, &disc, &xg).unwrap().map(|c| c.value)
}

fn expansion_vs_exact() -> Outcome {
    let lat = Lattice2D::natural();
    let kin = DiracKinetic::new(1.0, &lat).unwrap();
    let pot = generic_potential(0.05, 0.08, 0.04, &lat).unwrap();
    let f = window();
    let c = coefficients(&SymbolBundle::new(&kin, &pot), &f);
    // (eps, Lambda, k-grid side): converged to < 1e-9 relative in both
    let runs = [(0.08, 2.0, 3), (0.04, 1.4, 2), (0.02, 1.4, 1)];
    let mut eps = Vec::new();
    let mut res = Vec::new();
    for (e, lambda, n) in runs {
        let tw = twist_from_eps(e).unwrap();
        let grid = moire_bz_grid(&tw, &pot, n).unwrap();
        let v = exact_dos(&f, &tw, &kin, &pot, lambda, &grid).unwrap().value;
        eps.push(e);
        res.push((v - (c[0] + e * c[1] + e * e * c[2])).abs());
    }
    let slope = loglog_slope(&eps, &res);
    outcome(
        slope >= 2.3,
        format!("c = [{:.6e}, {:.6e}, {:.6e}], residuals {:?}, slope {slope:.3} (need >= 2.3)", c[0], c[1], c[2], res.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>()),
    )
}

fn bm_odd_terms() -> Outcome {
    let lat = Lattice2D::natural();
    let kin = DiracKinetic::new(1.0, &lat).unwrap();
    let pot = bm_potential(0.05, 0.08, &lat).unwrap();
    let c = coefficients(&SymbolBundle::new(&kin, &pot), &window());
    let ratio = c[1].abs() / c[0].abs();
    outcome(ratio <= 1e-3, format!("|c1|/|c0| = {ratio:.3e} (c0 = {:.6e}, c1 = {:.3e}; tol 1e-3)", c[0], c[1]))
}

/// Five points spread over the unit cell of `(b1, b2)` (rank-1 lattice).
fn five(b1: Vec2, b2: Vec2) -> Vec<Vec2> {
    (0..5).map(|i| combo(b1, b2, (i as f64 + 0.5) / 5.0, ((2 * i) % 5) as f64 / 5.0 + 0.1)).collect()
}

fn atomic_lemma() -> Outcome {
    let lat = Lattice2D::natural();
    let pot = SyntheticPotential::with_defaults(lat);
    let disc = AtomicDiscretization::for_potential(&pot, 3.0, 0.5).unwrap();
    let fine = disc.refined(&lat, 1.5).unwrap();
    let m = build_vd(&pot).max_abs();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lowest = f64::INFINITY;
    for _ in 0..25 {
        let k = combo(lat.a1s, lat.a2s, rng.random(), rng.random());
        let x = combo(rot_j(lat.a1), rot_j(lat.a2), rng.random(), rng.random());
        let ev = linalg::eigvalsh(&assemble_h_d0(k, x, &disc, &pot)).unwrap();
        lowest = lowest.min(ev[0]);
    }
    let bound_ok = lowest >= -m;
    let ks = five(lat.a1s, lat.a2s);
    let xs = five(rot_j(lat.a1), rot_j(lat.a2));
    let samples: Vec<(Vec2, Vec2)> = ks.iter().flat_map(|&k| xs.iter().map(move |&x| (k, x))).collect();
    let energy = -1.925;
    let base = rank_bound_scan(energy, &disc, &pot, &samples).unwrap();
    let refined = rank_bound_scan(energy, &fine, &pot, &samples).unwrap();
    let constant = base.counts.iter().all(|&c| c == base.m_e);
    let stable = refined.counts == base.counts;
    outcome(
        bound_ok && constant && stable,
        format!(
            "min eig {lowest:.4} >= -max|V_d| = {:.4}; m_E(E={energy}) = {} on all 25 points: {constant}; refined (m {} -> {}) m_E = {}, pointwise equal: {stable}",
            -m,
            base.m_e,
            disc.dim(),
            fine.dim(),
            refined.m_e
        ),
    )
}

fn ibp_identity() -> Outcome {
    let lat = Lattice2D::natural();
    let pot = SyntheticPotential::with_defaults(lat);
    let f = TestFunction::bump(-2.0, 0.8).unwrap();
    let disc = AtomicDiscretization::for_potential(&pot, 4.5, 0.8).unwrap();
    let gx = make_bz_grid(&lat, Cell::Moire, 1).unwrap();
    let mut rels = Vec::new();
    // each step refines the plane-wave ball and the k-grid together
    for (gmax, nk) in [(4.5, 8), (6.0, 10), (7.5, 12)] {
        let d = disc.with_gmax(&lat, gmax).unwrap();
        let gk = make_bz_grid(&lat, Cell::Reciprocal, nk).unwrap();
        rels.push(ibp_identity_check(&f, &ZetaRoute::DividedDifference, &d, &pot, &gk, &gx).unwrap().relative_difference);
    }
    let ok = rels[0] <= 0.05 && rels[1] < rels[0] && rels[2] < rels[1];
    outcome(ok, format!("relative differences at (Gmax, k-grid) (4.5, 8), (6, 10), (7.5, 12): {:?} (need first <= 5e-2, decreasing)", rels.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>()))
}

fn magic_angle() -> Outcome {
    let lat = Lattice2D::natural();
    let kin = DiracKinetic::new(1.0, &lat).unwrap().with_layer_shift(textbook_layer_shift(&lat));
    // w_AB = 110 meV in units of hbar vF kD
    let pot = bm_potential(0.0, 0.110 / 9.79, &lat).unwrap();
    let width = |deg: f64| {
        let tw = twist_from_degrees(deg).unwrap();
        let lambda = 6.0 * tw.eps * 2.0 * 3f64.sqrt() * lat.kd;
        let path = moire_path(&kin, &tw, &pot, 12);
        band_structure(&path, &tw, &kin, &pot, lambda).unwrap().middle_bandwidth()
    };
    let (w1, w3) = (width(1.08), width(3.0));
    let ratio = w1 / w3;
    let mut ok = ratio < 0.2;
    let mut detail = format!("bandwidth {w1:.4e} at 1.08 deg, {w3:.4e} at 3 deg, ratio {ratio:.6e} (need < 0.2)");
    if MAGIC_RATIO_BASELINE.is_finite() {
        let same = (ratio - MAGIC_RATIO_BASELINE).abs() <= 1e-9 * MAGIC_RATIO_BASELINE;
        ok &= same;
        detail.push_str(&format!("; baseline {MAGIC_RATIO_BASELINE:.12e} reproduced: {same}"));
    } else {
        detail.push_str(&format!("; baseline not frozen, got {ratio:.12e}"));
    }
    outcome(ok, detail)
}

fn main() {
    // libtest flags passed by `cargo test` are accepted and ignored
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "HS functional calculus vs eigendecomposition", hs_oracle),
        (2, "free Dirac density of states", free_dirac),
        (3, "Moyal composition order and ablation guard", moyal_order),
        (4, "trace formula", trace_formula),
        (5, "semiclassical expansion vs exact density of states", expansion_vs_exact),
        (6, "vanishing odd coefficient for the BM potential", bm_odd_terms),
        (7, "atomic spectral bounds", atomic_lemma),
        (8, "integration-by-parts identity", ibp_identity),
        (9, "magic-angle bandwidth", magic_angle),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let r = run();
        let tag = if r.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {tag}: {name}: {} [{:.1}s]", r.detail, t.elapsed().as_secs_f64());
        if !r.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
