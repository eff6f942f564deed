//! Structural invariants of the discretization, checked on random small
//! polygonal meshes, random degree layouts and random anisotropic tensors.

use nalgebra::DVector;
use proptest::prelude::*;

use padg::adaptivity::{degree_from_indicator, kmeans2, smooth_update, transfer_vector};
use padg::assembly::{assemble_operators, fiber_tensor, update_operators, Discretization, ModelCoefficients};
use padg::basis::{build_dof_map, DegreeField};
use padg::indicator::{element_components, jump_terms, oscillation_term, residual_term, IndicatorInputs};
use padg::ionic::{CubicParams, IonicModel};
use padg::meshgen::{voronoi_rectangle, RectMeshSpec};
use padg::timestepping::{CnStepper, SolverState};
use padg::Vec2;

const P_MAX: usize = 4;

#[derive(Debug, Clone)]
struct Case {
    n_cells: usize,
    seed: u64,
    aspect: f64,
    tensors: (f64, f64, f64),
    degrees: Vec<usize>,
    other: Vec<usize>,
    coeffs: Vec<f64>,
}

fn case() -> impl Strategy<Value = Case> {
    (8usize..=50, any::<u64>(), 0.5f64..2.0, (0.05f64..1.0, 0.05f64..1.0, 0.0f64..std::f64::consts::PI)).prop_flat_map(
        |(n, seed, aspect, tensors)| {
            let degs = prop::collection::vec(1usize..=P_MAX, 2 * n);
            let coeffs = prop::collection::vec(-1.0f64..1.0, 2 * n * 15);
            (Just(n), Just(seed), Just(aspect), Just(tensors), degs.clone(), degs, coeffs).prop_map(
                |(n_cells, seed, aspect, tensors, degrees, other, coeffs)| Case {
                    n_cells,
                    seed,
                    aspect,
                    tensors,
                    degrees,
                    other,
                    coeffs,
                },
            )
        },
    )
}

/// Discretization of the case plus its two degree layouts (trimmed to the
/// generated cell count, which may differ slightly from the target).
fn build(c: &Case) -> (Discretization, DegreeField, DegreeField) {
    let spec = RectMeshSpec {
        min: Vec2::zeros(),
        max: Vec2::new(c.aspect, 1.0),
        n_cells: c.n_cells,
        interfaces: vec![0.5 * c.aspect],
        lloyd: 5,
        seed: c.seed,
    };
    let mesh = voronoi_rectangle(&spec).unwrap();
    let n = mesh.num_cells();
    let (s1, s2, angle) = c.tensors;
    let sigma: Vec<_> = mesh
        .cell_material
        .iter()
        .map(|&m| if m == 0 { fiber_tensor(s1, s2, Vec2::new(angle.cos(), angle.sin())) } else { fiber_tensor(s2, 0.3 * s1, Vec2::new(1.0, 0.0)) })
        .collect();
    let deg = |v: &[usize]| DegreeField::new((0..n).map(|k| v[k % v.len()]).collect()).unwrap();
    let d0 = deg(&c.degrees);
    let d1 = deg(&c.other);
    (Discretization::new(mesh, sigma, P_MAX, 10.0), d0, d1)
}

fn random_vector(c: &Case, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |i, _| c.coeffs[i % c.coeffs.len()] + 0.001 * i as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stiffness_symmetric_with_constant_kernel_and_mass_spd(c in case()) {
        let (disc, d0, _) = build(&c);
        let ops = assemble_operators(&disc, &d0);
        let a = ops.dense_stiffness(&disc, false);
        let scale = a.amax();
        prop_assert!((&a - a.transpose()).amax() <= 1e-12 * scale);
        let one = ops.constant_vector(&disc, 1.0);
        prop_assert!(ops.apply_stiffness(&disc, &one).amax() <= 1e-10 * scale);
        prop_assert!((&a * &one).amax() <= 1e-10 * scale);
        let m = ops.dense_mass();
        prop_assert!((&m - m.transpose()).amax() <= 1e-13 * m.amax());
        let eig = m.symmetric_eigenvalues();
        prop_assert!(eig.min() > 0.0, "smallest mass eigenvalue {}", eig.min());
        prop_assert!(m.cholesky().is_some());
    }

    #[test]
    fn update_equals_fresh_assembly(c in case()) {
        let (disc, d0, d1) = build(&c);
        let ops0 = assemble_operators(&disc, &d0);
        let fresh = assemble_operators(&disc, &d1);
        let up = update_operators(&disc, &ops0, &d1).unwrap();
        let (a_up, a_fr) = (up.dense_stiffness(&disc, false), fresh.dense_stiffness(&disc, false));
        prop_assert!((&a_up - &a_fr).amax() <= 1e-12 * a_fr.amax());
        prop_assert!((up.dense_mass() - fresh.dense_mass()).amax() <= 1e-12);
        prop_assert_eq!(up.dofmap.total(), fresh.dofmap.total());
    }

    #[test]
    fn transfer_up_then_down_is_identity(c in case()) {
        let (_, d0, d1) = build(&c);
        let lo = build_dof_map(&d0);
        let hi = build_dof_map(&DegreeField::new(d0.as_slice().iter().zip(d1.as_slice()).map(|(a, b)| *a.max(b)).collect()).unwrap());
        let v = random_vector(&c, lo.total());
        let up = transfer_vector(&v, &lo, &hi).unwrap();
        let back = transfer_vector(&up, &hi, &lo).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn indicator_is_root_sum_square_of_components(c in case()) {
        let (disc, d0, _) = build(&c);
        let ops = assemble_operators(&disc, &d0);
        let n = ops.dofmap.total();
        let u = random_vector(&c, n) * 40.0 - DVector::from_element(n, 30.0);
        let u_prev = &u * 0.97;
        let model = IonicModel::Cubic(CubicParams::default());
        let src = |x: Vec2| (3.0 * x.x).sin() + x.y;
        let inp = IndicatorInputs {
            disc: &disc,
            ops: &ops,
            model: &model,
            coeffs: ModelCoefficients::default(),
            u: &u,
            u_prev: &u_prev,
            y: &[],
            dt: 0.01,
            source: Some(&src),
        };
        let r = residual_term(&inp).unwrap();
        let jumps = jump_terms(&inp).unwrap();
        let osc = oscillation_term(&inp).unwrap();
        for k in 0..disc.num_elements() {
            let comp = element_components(&inp, k).unwrap();
            let (jn, jj, jt) = jumps[k];
            let rss = (r[k] * r[k] + jn * jn + jj * jj + jt * jt + osc[k] * osc[k]).sqrt();
            prop_assert!((comp.combine() - rss).abs() <= 1e-12 * rss.max(f64::MIN_POSITIVE), "element {}", k);
        }
    }

    #[test]
    fn diffusion_conserves_charge(c in case()) {
        let (disc, d0, _) = build(&c);
        let ops = assemble_operators(&disc, &d0);
        let no_reaction = IonicModel::Cubic(CubicParams { a: 0.0, ..Default::default() });
        let mut st = CnStepper::new(&disc, &ops, ModelCoefficients::default(), 0.05).unwrap();
        let one = ops.constant_vector(&disc, 1.0);
        let u0 = random_vector(&c, ops.dofmap.total()) + &one * 2.0;
        let charge = |u: &DVector<f64>| one.dot(&ops.apply_mass(u));
        let q0 = charge(&u0);
        let mut s = SolverState::new(u0, vec![]);
        for k in 0..100 {
            st.step(&disc, &ops, &no_reaction, &mut s, k as f64 * 0.05, None::<&fn(Vec2, f64) -> f64>).unwrap();
        }
        prop_assert!((charge(&s.u) - q0).abs() <= 1e-10 * q0.abs(), "{} vs {}", charge(&s.u), q0);
    }
}

/// Minimum within-cluster sum of squares over every split of the sorted data.
fn brute_force_two_means(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let sse = |xs: &[f64]| {
        let m = mean(xs);
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, v[0], v[0]);
    for s in 1..v.len() {
        let cost = sse(&v[..s]) + sse(&v[s..]);
        if cost < best.0 {
            best = (cost, mean(&v[..s]), mean(&v[s..]));
        }
    }
    (best.1, best.2)
}

fn indicator_values() -> impl Strategy<Value = Vec<f64>> {
    // a decaying bulk plus a sparse high tail, the shape indicator fields have
    let bulk = prop::collection::vec(0.0f64..1.0, 5..200);
    let tail = prop::collection::vec(2.0f64..50.0, 1..20);
    (bulk, tail, any::<bool>()).prop_map(|(mut b, t, log)| {
        b.extend(t);
        if log {
            b.iter_mut().for_each(|x| *x = x.powi(3));
        }
        b
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kmeans_matches_exhaustive_partition(v in indicator_values()) {
        let (c1, c2) = kmeans2(&v);
        let (b1, b2) = brute_force_two_means(&v);
        let tol = 1e-12 * b2.abs().max(1.0);
        prop_assert!((c1 - b1).abs() <= tol && (c2 - b2).abs() <= tol, "lloyd ({c1}, {c2}) vs oracle ({b1}, {b2})");
    }

    #[test]
    fn degree_law_is_monotone_and_bounded(t1 in 0.0f64..100.0, t2 in 0.0f64..100.0, thr in 1e-6f64..10.0, p_max in 1usize..8) {
        let (a, b) = (degree_from_indicator(t1.min(t2), thr, p_max), degree_from_indicator(t1.max(t2), thr, p_max));
        prop_assert!(1 <= a && a <= b && b <= p_max);
    }

    #[test]
    fn smoothing_moves_one_step_towards_target(old in 1usize..8, target in 1usize..8) {
        let new = smooth_update(old, target);
        prop_assert!(new.abs_diff(old) <= 1);
        prop_assert!(new.abs_diff(target) == old.abs_diff(target).saturating_sub(1));
    }
}

#[test]
fn degree_law_truth_table() {
    assert_eq!(kmeans2(&[1.0, 1.0, 1.0, 9.0, 9.0]), (1.0, 9.0));
    assert_eq!(kmeans2(&[4.0; 6]), (4.0, 4.0));
    let (c1, c2) = kmeans2(&[0.1, 0.2, 0.15, 5.0, 4.8, 5.2, 0.12]);
    assert!((c1 - 0.1425).abs() < 1e-14 && (c2 - 5.0).abs() < 1e-14);
    // (τ, threshold, p_max) → degree
    let table = [
        (0.7, 0.7, 5, 3),
        (1e300, 1.0, 5, 5),
        (0.0, 1.0, 5, 1),
        (1e-9, 1.0, 5, 1),
        (1.0, 1.0, 4, 2),
        (3.0, 1.0, 4, 4),
    ];
    for (tau, thr, p, want) in table {
        assert_eq!(degree_from_indicator(tau, thr, p), want, "tau {tau} thr {thr} p_max {p}");
    }
    for (old, target, want) in [(5, 2, 4), (1, 4, 2), (3, 3, 3), (2, 1, 1), (4, 5, 5)] {
        assert_eq!(smooth_update(old, target), want);
    }
}
