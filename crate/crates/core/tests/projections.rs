use pice_core::matspace::{mat_to_vec, proj_ball, proj_intersection, proj_psd, vec_to_mat, BallRadius};
use pice_core::nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-50.0f64..50.0, n * n).prop_map(move |v| {
        let a = DMatrix::from_vec(n, n, v);
        (&a + a.transpose()) * 0.5
    })
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

proptest! {
    #[test]
    fn psd_projection_is_nearest(h in symmetric(5), other in symmetric(5)) {
        let p = proj_psd(&h).unwrap();
        prop_assert!(min_eig(&p) > -1e-9);
        // Obtuse-angle characterisation against a feasible point.
        let c = proj_psd(&other).unwrap();
        let inner = (&h - &p).dot(&(&c - &p));
        prop_assert!(inner <= 1e-7 * (1.0 + h.norm() * c.norm()));
    }

    #[test]
    fn intersection_is_ball_of_psd(h in symmetric(5), delta in 1.0f64..200.0) {
        let d = BallRadius::new(delta).unwrap();
        let p = proj_intersection(&h, d).unwrap();
        prop_assert!(p.norm() <= delta * (1.0 + 1e-12));
        prop_assert!(min_eig(&p) > -1e-9);
        let q = proj_ball(&proj_psd(&h).unwrap(), d);
        prop_assert!((p - q).norm() < 1e-9);
    }

    #[test]
    fn coefficient_map_round_trips(v in prop::collection::vec(-10.0f64..10.0, 15)) {
        let v = DVector::from_vec(v);
        let m = vec_to_mat(&v).unwrap();
        prop_assert!((&m - m.transpose()).norm() == 0.0);
        let back = mat_to_vec(&m).unwrap();
        prop_assert!((back - v).amax() < 1e-12);
    }

    #[test]
    fn psd_input_is_fixed(a in prop::collection::vec(-3.0f64..3.0, 25)) {
        let a = DMatrix::from_vec(5, 5, a);
        let h = &a * a.transpose();
        let p = proj_psd(&h).unwrap();
        prop_assert!((&p - &h).norm() <= 1e-9 * (1.0 + h.norm()));
    }
}
