//! Synthetic datasets: ground-truth topologies, the relative-measurement noise
//! model and the initialization schemes.
//!
//! All randomness flows from a seeded ChaCha8 stream; identical inputs give
//! identical datasets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::consistency::compose_along_tree;
use crate::error::{Error, Result};
use crate::graph::{spanning_tree, Pose, PoseGraph, RelativeMeasurement};
use crate::so3::{exp_map, random_rotation_with, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Random,
    Circle,
    Grid,
    Sphere,
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "circle" => Ok(Self::Circle),
            "grid" => Ok(Self::Grid),
            "sphere" => Ok(Self::Sphere),
            other => Err(Error::InvalidConfig(format!("unknown topology `{other}`"))),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Circle => "circle",
            Self::Grid => "grid",
            Self::Sphere => "sphere",
        })
    }
}

/// Noise on relative measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Translation standard deviation per axis, meters.
    pub tau: f64,
    /// Rotation standard deviation per tangent axis, radians.
    pub kappa: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            tau: 0.5,
            kappa: 0.524,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noise_free() -> Self {
        Self {
            tau: 0.0,
            kappa: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.kappa >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise.tau and noise.kappa must be non-negative (got {}, {})",
                self.tau, self.kappa
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub topology: Topology,
    pub n: usize,
    /// Random topology: sampling ball and edge radius, meters.
    pub comm_radius: f64,
    /// Random topology: minimum distance between vertices, meters.
    pub min_separation: f64,
    /// Grid topology: lattice size along x, y, z.
    pub grid_dims: [usize; 3],
    /// Grid topology: lattice spacing, meters.
    pub spacing: f64,
    /// Circle and sphere radius, meters.
    pub radius: f64,
    /// Circle: each vertex links to this many successors along the ring.
    pub circle_neighbors: usize,
    /// Circle/sphere: number of directed measurements to produce. Overrides
    /// `circle_neighbors` for circles.
    pub target_measurements: Option<usize>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            topology: Topology::Sphere,
            n: 50,
            comm_radius: 2.0,
            min_separation: 0.25,
            grid_dims: [3, 3, 3],
            spacing: 1.0,
            radius: 3.0,
            circle_neighbors: 1,
            target_measurements: None,
        }
    }
}

impl ScenarioSpec {
    pub fn random(n: usize) -> Self {
        Self {
            topology: Topology::Random,
            n,
            ..Default::default()
        }
    }

    /// Ring of `n` vertices, `300` directed measurements when `n = 25`.
    pub fn circle(n: usize) -> Self {
        Self {
            topology: Topology::Circle,
            n,
            radius: 5.0,
            circle_neighbors: if n >= 13 { 6 } else { 1 },
            ..Default::default()
        }
    }

    pub fn grid(dims: [usize; 3]) -> Self {
        Self {
            topology: Topology::Grid,
            n: dims.iter().product(),
            grid_dims: dims,
            ..Default::default()
        }
    }

    /// Fibonacci sphere; `target` directed measurements (544 for n = 50).
    pub fn sphere(n: usize, target: usize) -> Self {
        Self {
            topology: Topology::Sphere,
            n,
            target_measurements: Some(target),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 2 {
            return bad(format!("spec.n must be at least 2, got {}", self.n));
        }
        match self.topology {
            Topology::Random if !(self.comm_radius > 0.0) => {
                bad(format!("spec.comm_radius must be positive, got {}", self.comm_radius))
            }
            Topology::Random if !(self.min_separation >= 0.0 && self.min_separation < self.comm_radius) => bad(
                format!("spec.min_separation must lie in [0, comm_radius), got {}", self.min_separation),
            ),
            Topology::Grid if self.grid_dims.iter().product::<usize>() != self.n => bad(format!(
                "spec.grid_dims {:?} do not multiply to spec.n = {}",
                self.grid_dims, self.n
            )),
            Topology::Grid if !(self.spacing > 0.0) => {
                bad(format!("spec.spacing must be positive, got {}", self.spacing))
            }
            Topology::Circle | Topology::Sphere if !(self.radius > 0.0) => {
                bad(format!("spec.radius must be positive, got {}", self.radius))
            }
            Topology::Circle if self.target_measurements.is_none() && self.circle_neighbors == 0 => {
                bad("spec.circle_neighbors must be at least 1".into())
            }
            _ => Ok(()),
        }
    }
}

/// Ground-truth poses plus the undirected edge list `(i, j)`, `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub poses: Vec<Pose>,
    pub edges: Vec<(usize, usize)>,
}

/// Vertex positions and undirected edges of a topology.
type Layout = (Vec<Vec3>, Vec<(usize, usize)>);

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

pub fn generate_ground_truth(spec: &ScenarioSpec, seed: u64) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (positions, mut edges) = match spec.topology {
        Topology::Random => random_topology(spec, &mut rng)?,
        Topology::Circle => circle_topology(spec)?,
        Topology::Grid => grid_topology(spec),
        Topology::Sphere => sphere_topology(spec)?,
    };
    edges.sort_unstable();
    edges.dedup();
    let poses = positions
        .into_iter()
        .map(|t| Pose::new(t, random_rotation_with(&mut rng)))
        .collect();
    let gt = GroundTruth { poses, edges };
    // connectivity is part of the contract for every topology
    PoseGraph::build(gt.poses.len(), ground_truth_measurements(&gt))?;
    Ok(gt)
}

fn random_topology(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<Layout> {
    let mut pts = vec![Vec3::zeros()];
    while pts.len() < spec.n {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let anchor = pts[rng.random_range(0..pts.len())];
            let offset = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            if offset.norm() > 1.0 {
                continue;
            }
            let p = anchor + offset * spec.comm_radius;
            if pts.iter().all(|q| (q - p).norm() >= spec.min_separation) {
                pts.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::GenerationFailed(format!(
                "could not place vertex {} after {MAX_PLACEMENT_ATTEMPTS} attempts",
                pts.len()
            )));
        }
    }
    let mut edges = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if (pts[i] - pts[j]).norm() <= spec.comm_radius {
                edges.push((i, j));
            }
        }
    }
    Ok((pts, edges))
}

fn circle_topology(spec: &ScenarioSpec) -> Result<Layout> {
    let n = spec.n;
    let k = match spec.target_measurements {
        Some(target) if target % (2 * n) == 0 && target / (2 * n) >= 1 => target / (2 * n),
        Some(target) => {
            return Err(Error::InvalidConfig(format!(
                "circle target_measurements {target} is not a positive multiple of 2n = {}",
                2 * n
            )))
        }
        None => spec.circle_neighbors,
    };
    if 2 * k >= n && n > 2 && k > (n - 1) / 2 {
        return Err(Error::InvalidConfig(format!(
            "circle with n = {n} cannot have {k} distinct successors per vertex"
        )));
    }
    let pts = (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            Vec3::new(spec.radius * a.cos(), spec.radius * a.sin(), 0.0)
        })
        .collect();
    let edges = (0..n)
        .flat_map(|i| (1..=k).map(move |s| {
            let j = (i + s) % n;
            (i.min(j), i.max(j))
        }))
        .collect();
    Ok((pts, edges))
}

fn grid_topology(spec: &ScenarioSpec) -> Layout {
    let [a, b, c] = spec.grid_dims;
    let idx = |x: usize, y: usize, z: usize| x + a * (y + b * z);
    let mut pts = Vec::with_capacity(a * b * c);
    let mut edges = Vec::new();
    for z in 0..c {
        for y in 0..b {
            for x in 0..a {
                pts.push(Vec3::new(x as f64, y as f64, z as f64) * spec.spacing);
                if x + 1 < a {
                    edges.push((idx(x, y, z), idx(x + 1, y, z)));
                }
                if y + 1 < b {
                    edges.push((idx(x, y, z), idx(x, y + 1, z)));
                }
                if z + 1 < c {
                    edges.push((idx(x, y, z), idx(x, y, z + 1)));
                }
            }
        }
    }
    (pts, edges)
}

/// Fibonacci-spiral points, chained in spiral order, then densified with the
/// shortest remaining pairs until the target edge count is reached. Without a
/// target every vertex is linked to its four nearest neighbors.
fn sphere_topology(spec: &ScenarioSpec) -> Result<Layout> {
    let n = spec.n;
    let golden = PI * (3.0 - 5f64.sqrt());
    let pts: Vec<Vec3> = (0..n)
        .map(|k| {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let rho = (1.0 - y * y).sqrt();
            let phi = golden * k as f64;
            Vec3::new(rho * phi.cos(), y, rho * phi.sin()) * spec.radius
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|k| (k, k + 1)).collect();
    let mut pairs: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| (i + 2..n).map(move |j| (i, j)))
        .map(|(i, j)| ((pts[i] - pts[j]).norm(), i, j))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    match spec.target_measurements {
        Some(target) => {
            if target % 2 != 0 || target / 2 < n - 1 || target / 2 > n * (n - 1) / 2 {
                return Err(Error::InvalidConfig(format!(
                    "sphere target_measurements {target} must be even and between {} and {}",
                    2 * (n - 1),
                    n * (n - 1)
                )));
            }
            let extra = target / 2 - edges.len();
            edges.extend(pairs.iter().take(extra).map(|&(_, i, j)| (i, j)));
        }
        None => {
            for i in 0..n {
                let mut near: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| ((pts[i] - pts[j]).norm(), j))
                    .collect();
                near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                edges.extend(near.iter().take(4).map(|&(_, j)| (i.min(j), i.max(j))));
            }
        }
    }
    Ok((pts, edges))
}

/// Exact measurements from ground truth, both directions of every edge.
pub fn ground_truth_measurements(gt: &GroundTruth) -> Vec<RelativeMeasurement> {
    gt.edges
        .iter()
        .flat_map(|&(i, j)| {
            [
                RelativeMeasurement::from_pose(i, j, &gt.poses[i].relative_to(&gt.poses[j])),
                RelativeMeasurement::from_pose(j, i, &gt.poses[j].relative_to(&gt.poses[i])),
            ]
        })
        .collect()
}

fn gaussian3<R: Rng>(rng: &mut R, std: f64) -> Vec3 {
    if std == 0.0 {
        return Vec3::zeros();
    }
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
}

/// Independently corrupts both directions of every edge:
/// `t_ij = R_i^T (t_j - t_i) + N(0, tau^2 I)`, `R_ij = R_i^T R_j exp(nu)` with
/// `nu ~ N(0, kappa^2 I)`.
pub fn corrupt_measurements(gt: &GroundTruth, noise: &NoiseModel) -> Result<PoseGraph> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut ms = Vec::with_capacity(2 * gt.edges.len());
    for &(a, b) in &gt.edges {
        for (i, j) in [(a, b), (b, a)] {
            let (pi, pj) = (&gt.poses[i], &gt.poses[j]);
            let t = pi.r.transpose() * (pj.t - pi.t) + gaussian3(&mut rng, noise.tau);
            let r = pi.r.transpose() * pj.r * exp_map(&gaussian3(&mut rng, noise.kappa));
            ms.push(RelativeMeasurement::new(i, j, t, r));
        }
    }
    PoseGraph::build(gt.poses.len(), ms)
}

/// GPS-like initialization: `t + N(0, tau^2 I)`, `R exp(nu)`,
/// `nu ~ N(0, kappa^2 I)`.
pub fn gps_init(poses: &[Pose], tau_init: f64, kappa_init: f64, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poses
        .iter()
        .map(|p| {
            let t = p.t + gaussian3(&mut rng, tau_init);
            let r = p.r * exp_map(&gaussian3(&mut rng, kappa_init));
            Pose::new(t, r)
        })
        .collect()
}

/// Chains measurements along the breadth-first tree from `root`, which is
/// placed at the identity.
pub fn spanning_tree_init(g: &PoseGraph, root: usize) -> Result<Vec<Pose>> {
    let tree = spanning_tree(g, root)?;
    Ok(compose_along_tree(g, &tree))
}

pub fn identity_init(n: usize) -> Vec<Pose> {
    vec![Pose::identity(); n]
}
