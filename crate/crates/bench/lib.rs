//! Benchmark fixtures shared by the criterion targets in `benches/`.

use geod::consistency::enforce_pairwise_rotations;
use geod::graph::{Pose, PoseGraph};
use geod::synth::{corrupt_measurements, generate_ground_truth, gps_init, NoiseModel, ScenarioSpec};

/// Pairwise-averaged noisy sphere with a GPS-like start.
pub fn sphere_problem(n: usize, target: usize, seed: u64) -> (PoseGraph, Vec<Pose>) {
    let gt = generate_ground_truth(&ScenarioSpec::sphere(n, target), seed).expect("valid spec");
    let noise = NoiseModel { seed, ..Default::default() };
    let g = enforce_pairwise_rotations(&corrupt_measurements(&gt, &noise).expect("connected"))
        .expect("noise stays inside the log domain");
    let init = gps_init(&gt.poses, noise.tau, noise.kappa, seed + 1);
    (g, init)
}
