//! Property tests for the invariants of the data model and the integrator.

use geod::consistency::{check_pairwise, enforce_pairwise_rotations, pairwise_average_rotation};
use geod::graph::{symmetrize, Pose, PoseGraph, RelativeMeasurement};
use geod::so3::{
    chordal_distance, exp_map, geodesic_distance, hat, is_rotation, log_map, matrix_to_quat, quat_to_matrix,
    random_rotation, rotation_angle, vee, Mat3, Vec3,
};
use geod::solver::{evaluate_objective, Solver, SolverConfig, TranslationMode};
use proptest::prelude::*;

fn vec3(bound: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-bound..bound).prop_map(Vec3::from)
}

/// Tangent vectors with norm at most `max_angle`.
fn tangent(max_angle: f64) -> impl Strategy<Value = Vec3> {
    (vec3(1.0), 0.0..max_angle).prop_map(|(v, a)| {
        if v.norm() < 1e-9 {
            Vec3::zeros()
        } else {
            v.normalize() * a
        }
    })
}

fn rotation() -> impl Strategy<Value = Mat3> {
    any::<u64>().prop_map(random_rotation)
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(10.0), rotation()).prop_map(|(t, r)| Pose::new(t, r))
}

/// Small connected graph with independent measurements in both directions.
fn noisy_graph() -> impl Strategy<Value = PoseGraph> {
    (3usize..8)
        .prop_flat_map(|n| {
            let extra = prop::collection::vec((0..n, 0..n), 0..n);
            let meas = prop::collection::vec((vec3(3.0), rotation()), 4 * n * n);
            (Just(n), extra, meas)
        })
        .prop_map(|(n, extra, meas)| {
            let mut pairs: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
            pairs.extend(extra.into_iter().filter(|(a, b)| a != b).map(|(a, b)| (a.min(b), a.max(b))));
            pairs.sort_unstable();
            pairs.dedup();
            let mut ms = Vec::new();
            let mut k = 0;
            for (a, b) in pairs {
                for (i, j) in [(a, b), (b, a)] {
                    let (t, r) = meas[k];
                    k += 1;
                    // keep rotations well inside the log domain
                    let r = exp_map(&(log_map(&r).unwrap_or_else(|_| Vec3::zeros()) * 0.8));
                    ms.push(RelativeMeasurement::new(i, j, t, r));
                }
            }
            PoseGraph::build(n, ms).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exp_lands_on_so3(v in vec3(20.0)) {
        prop_assert!(is_rotation(&exp_map(&v), 1e-12));
    }

    #[test]
    fn log_inverts_exp(v in tangent(std::f64::consts::PI - 1e-3)) {
        let back = log_map(&exp_map(&v)).unwrap();
        prop_assert!((back - v).norm() < 1e-9);
    }

    #[test]
    fn vee_inverts_hat(v in vec3(100.0)) {
        prop_assert_eq!(vee(&hat(&v)).unwrap(), v);
    }

    #[test]
    fn geodesic_is_a_metric(a in rotation(), b in rotation(), c in rotation()) {
        let (ab, ba) = (geodesic_distance(&a, &b), geodesic_distance(&b, &a));
        if let (Ok(ab), Ok(ba)) = (ab, ba) {
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=std::f64::consts::PI).contains(&ab));
            if let (Ok(bc), Ok(ac)) = (geodesic_distance(&b, &c), geodesic_distance(&a, &c)) {
                prop_assert!(ac <= ab + bc + 1e-9);
            }
        }
        prop_assert!(geodesic_distance(&a, &a).unwrap() < 1e-7);
    }

    #[test]
    fn chordal_is_monotone_in_angle(v in tangent(std::f64::consts::PI - 1e-3), r in rotation()) {
        let theta = v.norm();
        let d = chordal_distance(&r, &(r * exp_map(&v)));
        prop_assert!((d - 2.0 * 2f64.sqrt() * (theta / 2.0).sin()).abs() < 1e-9);
    }

    #[test]
    fn quaternion_round_trip(r in rotation()) {
        let q = matrix_to_quat(&r);
        prop_assert!(q[3] >= 0.0);
        prop_assert!((quat_to_matrix(q) - r).norm() < 1e-12);
    }

    #[test]
    fn pose_inverse_composes_to_identity(p in pose(), q in pose()) {
        let e = p.compose(&p.inverse());
        prop_assert!(e.t.norm() < 1e-12 && (e.r - Mat3::identity()).norm() < 1e-12);
        let rel = p.relative_to(&q);
        let q2 = p.compose(&rel);
        prop_assert!((q2.t - q.t).norm() < 1e-9 && (q2.r - q.r).norm() < 1e-12);
    }

    #[test]
    fn symmetrize_is_idempotent_and_pairs_everything(g in noisy_graph(), drop_mask in any::<u64>()) {
        // drop one direction of some edges, then restore
        let directed: Vec<RelativeMeasurement> = g
            .measurements()
            .iter()
            .enumerate()
            .filter(|(k, m)| m.src < m.dst || drop_mask >> (k % 64) & 1 == 0)
            .map(|(_, m)| *m)
            .collect();
        let once = symmetrize(&directed);
        prop_assert_eq!(symmetrize(&once), once.clone());
        let rebuilt = PoseGraph::build(g.n(), once).unwrap();
        prop_assert_eq!(rebuilt.num_directed(), g.num_directed());
    }

    #[test]
    fn enforcement_pairs_rotations(g in noisy_graph()) {
        let e = enforce_pairwise_rotations(&g).unwrap();
        let rep = check_pairwise(&e, 1e-9, f64::INFINITY);
        prop_assert!(rep.pairwise_rot_max_defect.unwrap() < 1e-9);
        for (a, b) in g.measurements().iter().zip(e.measurements()) {
            prop_assert_eq!(a.t_rel, b.t_rel);
        }
    }

    #[test]
    fn pairwise_average_is_the_geodesic_midpoint(a in rotation(), v in tangent(2.5)) {
        // r_ji^T = a exp(v); the average sits halfway between a and a exp(v)
        let r_ij = a;
        let r_ji = (a * exp_map(&v)).transpose();
        let avg = pairwise_average_rotation(&r_ij, &r_ji).unwrap();
        let d1 = rotation_angle(&(r_ij.transpose() * avg));
        let d2 = rotation_angle(&(r_ji * avg));
        prop_assert!((d1 - d2).abs() < 1e-9);
        prop_assert!((d1 - v.norm() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn objective_is_gauge_invariant(g in noisy_graph(), gauge in pose(), seed in any::<u64>()) {
        let est: Vec<Pose> = (0..g.n())
            .map(|k| Pose::new(Vec3::new(k as f64, 0.5, -1.0), random_rotation(seed.wrapping_add(k as u64))))
            .collect();
        let moved: Vec<Pose> = est.iter().map(|p| gauge.compose(p)).collect();
        if let (Ok(a), Ok(b)) = (evaluate_objective(&est, &g), evaluate_objective(&moved, &g)) {
            prop_assert!((a.geodesic - b.geodesic).abs() < 1e-8 * (1.0 + a.geodesic));
            prop_assert!((a.chordal - b.chordal).abs() < 1e-8 * (1.0 + a.chordal));
            prop_assert!(a.geodesic >= 0.0 && a.chordal >= 0.0);
        }
    }

    #[test]
    fn steps_stay_on_so3(g in noisy_graph(), seed in any::<u64>()) {
        let est: Vec<Pose> = (0..g.n())
            .map(|k| Pose::new(Vec3::zeros(), random_rotation(seed.wrapping_add(k as u64))))
            .collect();
        let cfg = SolverConfig { max_iters: 20, translation_mode: TranslationMode::OnlineAveraged, ..Default::default() };
        if let Ok(solver) = Solver::new(&g, cfg) {
            if let Ok(res) = solver.solve(est) {
                for p in &res.estimates {
                    prop_assert!(is_rotation(&p.r, 1e-10));
                }
            }
        }
    }

    #[test]
    fn translation_sum_is_conserved_without_measurements(ts in prop::collection::vec(vec3(10.0), 2..9)) {
        // path graph with zero translations and identity rotations
        let n = ts.len();
        let ms: Vec<RelativeMeasurement> = (1..n)
            .flat_map(|v| [
                RelativeMeasurement::new(v - 1, v, Vec3::zeros(), Mat3::identity()),
                RelativeMeasurement::new(v, v - 1, Vec3::zeros(), Mat3::identity()),
            ])
            .collect();
        let g = PoseGraph::build(n, ms).unwrap();
        let init: Vec<Pose> = ts.iter().map(|t| Pose::new(*t, Mat3::identity())).collect();
        let solver = Solver::new(&g, SolverConfig { translation_mode: TranslationMode::Raw, ..Default::default() }).unwrap();
        let s1 = solver.step(&solver.initial_state(init.clone()).unwrap()).unwrap();
        let before: Vec3 = init.iter().map(|p| p.t).sum();
        let after: Vec3 = s1.estimates.iter().map(|p| p.t).sum();
        prop_assert!((before - after).norm() < 1e-9);
    }
}
