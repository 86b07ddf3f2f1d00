//! Monte-Carlo checks of the random generators against independent samplers
//! and closed-form distributions.

use geod::graph::Pose;
use geod::so3::{log_map, random_rotation_with, Mat3, Vec3};
use geod::synth::{corrupt_measurements, generate_ground_truth, NoiseModel, ScenarioSpec};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Haar sampler built independently: QR of a Gaussian matrix with the sign
/// of R's diagonal absorbed, then reflected into SO(3).
fn qr_haar(rng: &mut ChaCha8Rng) -> Mat3 {
    let g = DMatrix::<f64>::from_fn(3, 3, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for c in 0..3 {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    let mut m = Mat3::from_iterator(q.iter().copied());
    if m.determinant() < 0.0 {
        m.column_mut(0).neg_mut();
    }
    m
}

#[test]
fn haar_trace_mean_is_zero() {
    // E[tr R] = 0 under Haar measure on SO(3)
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1_000_000;
    let mean = (0..n).map(|_| random_rotation_with(&mut rng).trace()).sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.02, "mean trace {mean}");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reference = (0..200_000).map(|_| qr_haar(&mut rng).trace()).sum::<f64>() / 200_000.0;
    assert!(reference.abs() < 0.02, "reference sampler mean trace {reference}");
}

#[test]
fn haar_angle_density_chi_square() {
    // rotation angle density (1 - cos t) / pi on [0, pi]; equal-probability bins
    let bins = 20;
    let cdf = |t: f64| (t - t.sin()) / std::f64::consts::PI;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| {
            let p = k as f64 / bins as f64;
            // invert the cdf by bisection
            let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < p { lo = mid } else { hi = mid }
            }
            0.5 * (lo + hi)
        })
        .collect();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let r = random_rotation_with(&mut rng);
        let theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        let k = edges.partition_point(|&e| e <= theta).clamp(1, bins) - 1;
        counts[k] += 1;
    }
    let expected = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 95% quantile of chi-square with 19 degrees of freedom
    assert!(chi2 < 30.144, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn rotation_noise_magnitude() {
    // |nu| for nu ~ N(0, kappa^2 I3) has mean 2 kappa sqrt(2/pi)
    let kappa = 0.524;
    let gt = generate_ground_truth(&ScenarioSpec::sphere(50, 544), 0).unwrap();
    let mut total = 0.0;
    let mut count = 0usize;
    for seed in 0..40 {
        let g = corrupt_measurements(&gt, &NoiseModel { tau: 0.5, kappa, seed }).unwrap();
        for m in g.measurements() {
            let truth = gt.poses[m.src].relative_to(&gt.poses[m.dst]);
            total += log_map(&(truth.r.transpose() * m.r_rel)).unwrap().norm();
            count += 1;
        }
    }
    let mean = total / count as f64;
    let expected = kappa * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((mean - expected).abs() < 0.05 * expected, "mean {mean} vs {expected}");
}

#[test]
fn translation_noise_variance() {
    let tau = 0.5;
    let gt = generate_ground_truth(&ScenarioSpec::grid([3, 3, 3]), 0).unwrap();
    let mut sq = 0.0;
    let mut count = 0usize;
    for seed in 0..200 {
        let g = corrupt_measurements(&gt, &NoiseModel { tau, kappa: 0.0, seed }).unwrap();
        for m in g.measurements() {
            let truth: Pose = gt.poses[m.src].relative_to(&gt.poses[m.dst]);
            let e: Vec3 = m.t_rel - truth.t;
            sq += e.norm_squared();
            count += 3;
        }
    }
    let var = sq / count as f64;
    assert!((var - tau * tau).abs() < 0.03 * tau * tau, "variance {var}");
}
