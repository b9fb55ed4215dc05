use nsp_core::linops::BlockLayout;
use nsp_core::prox::{project_l1_ball, NormKind, Penalty};
use nsp_core::vector;
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = NormKind> {
    prop_oneof![Just(NormKind::Euclidean), Just(NormKind::L1), Just(NormKind::Linf)]
}

/// Vector length, block size, two vectors and a penalty.
fn case() -> impl Strategy<Value = (BlockLayout, Vec<f64>, Vec<f64>, Penalty)> {
    (1usize..4, 1usize..6, kind(), 0.05f64..5.0).prop_flat_map(|(d, nb, kind, lambda)| {
        let n = d * nb;
        (
            Just(BlockLayout::uniform(n, d).unwrap()),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
            Just(Penalty::new(lambda, kind).unwrap()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn moreau_decomposition((layout, u, _v, pen) in case()) {
        let p = pen.prox_conjugate(&layout, &u, 1.0).unwrap();
        let s = pen.prox_primal(&layout, &u, 1.0).unwrap();
        for i in 0..u.len() {
            prop_assert!((p[i] + s[i] - u[i]).abs() <= 1e-12 * (1.0 + u[i].abs()));
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent((layout, u, _v, pen) in case()) {
        let p = pen.prox_conjugate(&layout, &u, 1.0).unwrap();
        let (_, m) = pen.max_dual_norm(&layout, &p).unwrap();
        prop_assert!(m <= pen.lambda() * (1.0 + 1e-12));
        let pp = pen.prox_conjugate(&layout, &p, 1.0).unwrap();
        prop_assert_eq!(pp, p);
    }

    #[test]
    fn projection_is_firmly_nonexpansive((layout, u, v, pen) in case()) {
        let pu = pen.prox_conjugate(&layout, &u, 1.0).unwrap();
        let pv = pen.prox_conjugate(&layout, &v, 1.0).unwrap();
        let dp = vector::sub(&pu, &pv);
        let du = vector::sub(&u, &v);
        prop_assert!(vector::norm_sq(&dp) <= vector::dot(&dp, &du) + 1e-9 * (1.0 + vector::norm_sq(&du)));
        let su = pen.prox_primal(&layout, &u, 1.0).unwrap();
        let sv = pen.prox_primal(&layout, &v, 1.0).unwrap();
        prop_assert!(vector::dist(&su, &sv) <= vector::norm(&du) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn projection_does_not_depend_on_scale((layout, u, _v, pen) in case(), scale in 1e-3f64..1e3) {
        prop_assert_eq!(
            pen.prox_conjugate(&layout, &u, scale).unwrap(),
            pen.prox_conjugate(&layout, &u, 1.0).unwrap()
        );
    }

    /// Variational inequality of a projection onto a convex set:
    /// ⟨u − P(u), z − P(u)⟩ ≤ 0 for every feasible z.
    #[test]
    fn projection_variational_inequality((layout, u, v, pen) in case()) {
        let p = pen.prox_conjugate(&layout, &u, 1.0).unwrap();
        let z = pen.prox_conjugate(&layout, &v, 1.0).unwrap();
        let lhs = vector::dot(&vector::sub(&u, &p), &vector::sub(&z, &p));
        prop_assert!(lhs <= 1e-9 * (1.0 + vector::norm_sq(&u) + vector::norm_sq(&v)));
    }

    /// The primal prox minimizes `½‖z − u‖² + H(z)`: compare against random
    /// competitors near the returned point.
    #[test]
    fn primal_prox_is_minimal((layout, u, v, pen) in case(), t in 0.0f64..1.0) {
        let s = pen.prox_primal(&layout, &u, 1.0).unwrap();
        let obj = |z: &[f64]| 0.5 * vector::dist(z, &u).powi(2) + pen.value(&layout, z).unwrap();
        let competitor: Vec<f64> = s.iter().zip(&v).map(|(a, b)| a + t * 0.1 * b).collect();
        prop_assert!(obj(&s) <= obj(&competitor) + 1e-10 * (1.0 + obj(&s)));
    }

    #[test]
    fn l1_ball_projection_sums_to_radius(v in prop::collection::vec(-5.0f64..5.0, 1..12), r in 0.1f64..4.0) {
        let p = project_l1_ball(&v, r).unwrap();
        let l1: f64 = p.iter().map(|x| x.abs()).sum();
        let v1: f64 = v.iter().map(|x| x.abs()).sum();
        if v1 <= r {
            prop_assert_eq!(p, v);
        } else {
            prop_assert!((l1 - r).abs() <= 1e-12 * r.max(1.0));
            for (a, b) in p.iter().zip(&v) {
                prop_assert!(a * b >= 0.0 && a.abs() <= b.abs());
            }
        }
    }
}
