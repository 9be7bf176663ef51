use moire_core::atomic::{build_vd, SyntheticPotential};
use moire_core::effmodel::{assemble_fiber, generic_potential, DiracKinetic};
use moire_core::hscalc::{divided_difference, eig_matrix_function, TestFunction};
use moire_core::lattice::{add, c_of_eps, dot, rot_j, twist_from_eps, Lattice2D};
use moire_core::linalg::{self, c64, CMat};
use moire_core::semiclassical::{DensityEvaluator, SymbolBundle, XGrid};
use moire_core::weylbench::{quantize, quantize_twisted, LatticeSymbol, RandomSymbolSpec, Window};
use proptest::prelude::*;
use std::f64::consts::PI;

fn hermitian(vals: &[f64]) -> CMat {
    let n = 3;
    let m = CMat::from_fn(n, n, |i, j| c64::new(vals[i * n + j], vals[(j * n + i + 4) % 9]));
    linalg::hermitize(&m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn divided_differences_are_symmetric(a in -0.9f64..0.9, b in -0.9f64..0.9, c in -0.9f64..0.9) {
        let f = TestFunction::bump(0.0, 1.0).unwrap();
        let x = divided_difference(&f, &[a, b, c]);
        for p in [[b, a, c], [c, b, a], [a, c, b]] {
            prop_assert!((divided_difference(&f, &p) - x).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn matrix_function_is_linear_in_f(vals in prop::collection::vec(-0.6f64..0.6, 9), s in -2.0f64..2.0) {
        let a = hermitian(&vals);
        let f1 = TestFunction::bump(0.2, 0.9).unwrap();
        let f2 = TestFunction::gauss_bump(-0.1, 0.3, 1.2).unwrap();
        let sum = TestFunction::combine(vec![(1.0, f1.clone()), (s, f2.clone())]);
        let lhs = eig_matrix_function(&a, &sum).unwrap().value;
        let mut rhs = eig_matrix_function(&a, &f1).unwrap().value;
        linalg::axpy(&mut rhs, c64::new(s, 0.0), &eig_matrix_function(&a, &f2).unwrap().value);
        prop_assert!(linalg::max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn twist_function_identities(eps in 1e-6f64..0.49) {
        let c = c_of_eps(eps);
        prop_assert!((c * (1.0 + (1.0 - eps * eps).sqrt()) - eps).abs() < 1e-15);
        let tw = twist_from_eps(eps).unwrap();
        prop_assert!((tw.g_eps - eps * c).abs() < 1e-15);
        prop_assert!((tw.eta - (tw.theta / 2.0).tan()).abs() < 1e-14);
    }

    #[test]
    fn fibers_are_hermitian(q1 in -0.1f64..0.1, q2 in -0.1f64..0.1, eps in 0.04f64..0.06) {
        let lat = Lattice2D::natural();
        let kin = DiracKinetic::new(1.0, &lat).unwrap();
        let pot = generic_potential(0.05, 0.08, 0.04, &lat).unwrap();
        let tw = twist_from_eps(eps).unwrap();
        let fib = assemble_fiber(add(lat.k, [q1, q2]), &tw, &kin, &pot, 0.8).unwrap();
        prop_assert!(linalg::hermiticity_defect(&fib.matrix) == 0.0);
    }

    #[test]
    fn quantization_is_linear(seed in 0u64..1000, s in -2.0f64..2.0, eps in 0.05f64..0.3) {
        let lat = Lattice2D::natural();
        let spec = RandomSymbolSpec::default();
        let a = LatticeSymbol::random(&lat, vec![[0, 0], [1, 0]], &spec, seed).unwrap();
        let b = LatticeSymbol::random(&lat, vec![[0, 0], [1, 0]], &spec, seed + 1).unwrap();
        let w = Window::new(2, 1).unwrap();
        let sum = a.add(&b.scale(c64::new(s, 0.0)));
        for twisted in [false, true] {
            let q = |x: &LatticeSymbol| if twisted { quantize_twisted(x, eps, &w) } else { quantize(x, eps, &w) }.unwrap().to_dense();
            let mut rhs = q(&a);
            linalg::axpy(&mut rhs, c64::new(s, 0.0), &q(&b));
            prop_assert!(linalg::max_abs_diff(&q(&sum), &rhs) < 1e-12);
        }
    }

    #[test]
    fn hermitian_symbols_quantize_to_hermitian_interiors(seed in 0u64..1000, eps in 0.05f64..0.3) {
        let lat = Lattice2D::natural();
        let spec = RandomSymbolSpec { hermitian: true, ..Default::default() };
        let a = LatticeSymbol::random(&lat, vec![[0, 0], [1, 0], [0, 1]], &spec, seed).unwrap();
        let w = Window::new(4, 2).unwrap();
        prop_assert!(quantize(&a, eps, &w).unwrap().interior_hermiticity_defect() < 1e-12);
        prop_assert!(quantize_twisted(&a, eps, &w).unwrap().interior_hermiticity_defect() < 1e-12);
    }

    #[test]
    fn bilayer_potential_is_periodic_in_stacking(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, s1 in -3.0f64..3.0, s2 in -3.0f64..3.0, z in -4.0f64..4.0, n1 in -2i64..3, n2 in -2i64..3) {
        let lat = Lattice2D::natural();
        let pot = SyntheticPotential::with_defaults(lat);
        let vd = build_vd(&pot);
        let shift = rot_j(lat.site(n1, n2));
        let a = vd.eval([x1, x2], [s1, s2], z);
        let b = vd.eval([x1, x2], add([s1, s2], shift), z);
        prop_assert!((a - b).abs() < 1e-11);
    }

    #[test]
    fn lattice_duality(n1 in -3i64..4, n2 in -3i64..4, m1 in -3i64..4, m2 in -3i64..4) {
        let lat = Lattice2D::natural();
        let p = dot(lat.site(n1, n2), lat.recip(m1, m2)) / (2.0 * PI);
        prop_assert!((p - p.round()).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn densities_are_periodic_in_x(k1 in -0.5f64..0.5, k2 in -0.5f64..0.5, x1 in 0.0f64..1.0, x2 in 0.0f64..1.0) {
        let lat = Lattice2D::natural();
        let kin = DiracKinetic::new(1.0, &lat).unwrap();
        let pot = generic_potential(0.05, 0.08, 0.04, &lat).unwrap();
        let b = SymbolBundle::new(&kin, &pot);
        let f = TestFunction::gauss_bump(0.05, 0.25, 1.0).unwrap();
        let ev = DensityEvaluator::new(&b, &f);
        let g = XGrid::new(&b, 1).unwrap();
        let x = [x1 * g.p1[0] + x2 * g.p2[0], x1 * g.p1[1] + x2 * g.p2[1]];
        for j in 0..3 {
            let a = ev.density(j, [k1, k2], x).unwrap().value;
            let c = ev.density(j, [k1, k2], add(x, add(g.p1, g.p2))).unwrap().value;
            prop_assert!((a - c).abs() <= 1e-10 * (1.0 + a.abs()), "j={} {} {}", j, a, c);
        }
    }
}
