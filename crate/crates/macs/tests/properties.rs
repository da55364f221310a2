//! Randomized property tests for the algebraic invariants that everything
//! else leans on.

use macs::mat;
use macs::model::{build_s, gamma_alpha, stage_payoff, Hypothesis};
use macs::synthesis::demo_cone;
use macs::valuefn::{evaluate, update_z, DataMoment};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec_strategy(len: usize) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-2.0..2.0f64, len).prop_map(DVector::from_vec)
}

fn hypothesis_strategy() -> impl Strategy<Value = (Hypothesis, usize, usize)> {
    (1..=3usize, 1..=3usize).prop_flat_map(|(n, m)| {
        let a = proptest::collection::vec(-1.5..1.5f64, n * n);
        let b = proptest::collection::vec(-1.5..1.5f64, n * m);
        let r = proptest::collection::vec(-1.0..1.0f64, (n + m) * (n + m));
        (a, b, r).prop_map(move |(a, b, r)| {
            let a = DMatrix::from_vec(n, n, a);
            let b = DMatrix::from_vec(n, m, b);
            let r = DMatrix::from_vec(n + m, n + m, r);
            let mm = mat::symmetrize(
                &(&r.transpose() * &r * 0.3 + DMatrix::identity(n + m, n + m) * 0.01),
            );
            (Hypothesis::new(a, b, mm).unwrap(), n, m)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The stacked S-matrix quadratic form is the stage payoff, for any
    /// hypothesis, gain level and point.
    #[test]
    fn s_matrix_matches_stage_payoff(
        (h, n, m) in hypothesis_strategy(),
        gamma in 1.05..4.0f64,
        coords in proptest::collection::vec(-2.0..2.0f64, 9),
    ) {
        let x = DVector::from_iterator(n, coords[0..n].iter().copied());
        let u = DVector::from_iterator(m, coords[3..3 + m].iter().copied());
        let xp = DVector::from_iterator(n, coords[6..6 + n].iter().copied());
        let via_s = build_s(&h, gamma).quadratic_form(&x, &u, &xp).unwrap();
        let direct = stage_payoff(&h, gamma, &x, &u, &xp).unwrap();
        prop_assert!((via_s - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    /// With zero disturbance (x+ = Ax + Bu) the payoff is the bare stage
    /// cost, hence nonnegative.
    #[test]
    fn zero_disturbance_payoff_is_stage_cost(
        (h, n, m) in hypothesis_strategy(),
        gamma in 1.05..4.0f64,
        coords in proptest::collection::vec(-2.0..2.0f64, 6),
    ) {
        let x = DVector::from_iterator(n, coords[0..n].iter().copied());
        let u = DVector::from_iterator(m, coords[3..3 + m].iter().copied());
        let xp = h.a() * &x + h.b() * &u;
        let payoff = stage_payoff(&h, gamma, &x, &u, &xp).unwrap();
        let xu = mat::concat(&[&x, &u]);
        let cost = mat::quad_form(h.m(), &xu);
        prop_assert!((payoff - cost).abs() <= 1e-9 * (1.0 + cost.abs()));
        prop_assert!(payoff >= -1e-12);
    }

    /// gamma_alpha is >= 1, increasing, and inverts as alpha = (g^2-1)/(2g).
    #[test]
    fn gamma_alpha_inverts(alpha in 0.0..10.0f64) {
        let g = gamma_alpha(alpha).unwrap();
        prop_assert!(g >= 1.0);
        prop_assert!(gamma_alpha(alpha + 0.1).unwrap() > g);
        let back = (g * g - 1.0) / (2.0 * g);
        prop_assert!((back - alpha).abs() <= 1e-9 * (1.0 + alpha));
    }

    /// The cone value is 1-homogeneous in Z jointly with 2-homogeneity in
    /// (x, u): scaling data by c and the point by sqrt(c) scales the value
    /// by c.
    #[test]
    fn cone_value_is_homogeneous(
        c in 0.1..5.0f64,
        x in vec_strategy(1),
        u in vec_strategy(1),
        triple in proptest::collection::vec(-1.5..1.5f64, 3),
    ) {
        let cone = demo_cone();
        let z0 = DataMoment::zeros(1, 1);
        let z = update_z(
            &z0,
            &DVector::from_row_slice(&triple[0..1]),
            &DVector::from_row_slice(&triple[1..2]),
            &DVector::from_row_slice(&triple[2..3]),
        ).unwrap();
        let v = evaluate(&cone, &z, &x, &u).unwrap();
        let zc = DataMoment::new(z.matrix() * c, 1, 1).unwrap();
        let s = c.sqrt();
        let vc = evaluate(&cone, &zc, &(&x * s), &(&u * s)).unwrap();
        prop_assert!((vc - c * v).abs() <= 1e-9 * (1.0 + v.abs()));
    }

    /// update_z adds exactly one outer product and preserves positive
    /// semidefiniteness.
    #[test]
    fn update_z_adds_one_outer_product(
        triples in proptest::collection::vec(
            proptest::collection::vec(-2.0..2.0f64, 3), 1..5),
    ) {
        let mut z = DataMoment::zeros(1, 1);
        let mut expected = DMatrix::zeros(3, 3);
        for t in &triples {
            z = update_z(
                &z,
                &DVector::from_row_slice(&t[0..1]),
                &DVector::from_row_slice(&t[1..2]),
                &DVector::from_row_slice(&t[2..3]),
            ).unwrap();
            expected += mat::outer(&DVector::from_row_slice(t));
        }
        prop_assert!(mat::max_abs_diff(z.matrix(), &expected) <= 1e-12);
        prop_assert!(mat::min_eigenvalue(z.matrix()) >= -1e-9);
    }
}
