//! Measurement consistency: global (every cycle composes to identity),
//! pairwise (the two directions of an edge are exact inverses) and minimal
//! (graph-wide sums of rotation logs and translations vanish).
//!
//! Also holds the transforms that establish the pairwise condition before and
//! during solving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{spanning_tree, LocalEdge, Pose, PoseGraph};
use crate::so3::{exp_map, log_map, rotation_angle, Mat3, Vec3};

pub const DEFAULT_TOL_ROT: f64 = 1e-6;
pub const DEFAULT_TOL_TRANS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleDefect {
    /// Largest rotation angle of a composed cycle, radians.
    pub rotation: f64,
    /// Largest translation norm of a composed cycle, meters.
    pub translation: f64,
    pub cycles_checked: usize,
}

/// Fields are `None` when the corresponding check was not run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub pairwise_rot_max_defect: Option<f64>,
    pub pairwise_trans_max_defect: Option<f64>,
    pub pairwise_pass: Option<bool>,
    pub minimal_rot_defect: Option<f64>,
    pub minimal_trans_defect: Option<f64>,
    pub global_checked: bool,
    pub global_max_cycle_defect: Option<CycleDefect>,
}

impl ConsistencyReport {
    /// Field-wise merge, preferring values present in `other`.
    pub fn merge(mut self, other: ConsistencyReport) -> Self {
        self.pairwise_rot_max_defect = other.pairwise_rot_max_defect.or(self.pairwise_rot_max_defect);
        self.pairwise_trans_max_defect = other
            .pairwise_trans_max_defect
            .or(self.pairwise_trans_max_defect);
        self.pairwise_pass = other.pairwise_pass.or(self.pairwise_pass);
        self.minimal_rot_defect = other.minimal_rot_defect.or(self.minimal_rot_defect);
        self.minimal_trans_defect = other.minimal_trans_defect.or(self.minimal_trans_defect);
        self.global_checked |= other.global_checked;
        self.global_max_cycle_defect = other.global_max_cycle_defect.or(self.global_max_cycle_defect);
        self
    }
}

/// Max over undirected edges of `angle(R_ij R_ji)` and `|t_ij + R_ij t_ji|`.
pub fn check_pairwise(g: &PoseGraph, tol_rot: f64, tol_trans: f64) -> ConsistencyReport {
    let mut rot: f64 = 0.0;
    let mut trans: f64 = 0.0;
    for m in g.measurements().iter().filter(|m| m.src < m.dst) {
        let back = g.measurement(m.dst, m.src).expect("paired");
        rot = rot.max(rotation_angle(&(m.r_rel * back.r_rel)));
        trans = trans.max((m.t_rel + m.r_rel * back.t_rel).norm());
    }
    ConsistencyReport {
        pairwise_rot_max_defect: Some(rot),
        pairwise_trans_max_defect: Some(trans),
        pairwise_pass: Some(rot < tol_rot && trans < tol_trans),
        ..Default::default()
    }
}

/// Norms of the sums of `log(R_ij)^vee` and `t_ij` over all directed
/// measurements.
pub fn check_minimal(g: &PoseGraph) -> Result<ConsistencyReport> {
    let mut rot_sum = Vec3::zeros();
    let mut trans_sum = Vec3::zeros();
    for m in g.measurements() {
        rot_sum += log_map(&m.r_rel).map_err(|e| e.with_edge(m.src, m.dst))?;
        trans_sum += m.t_rel;
    }
    Ok(ConsistencyReport {
        minimal_rot_defect: Some(rot_sum.norm()),
        minimal_trans_defect: Some(trans_sum.norm()),
        ..Default::default()
    })
}

/// Composes measurements around the fundamental cycles of the breadth-first
/// tree rooted at vertex 0: every directed measurement that is not a
/// parent-to-child tree edge closes one cycle. At most `cycle_basis_limit`
/// cycles are checked.
pub fn check_global(g: &PoseGraph, cycle_basis_limit: usize) -> ConsistencyReport {
    let mut defect = CycleDefect::default();
    if g.n() > 0 {
        let tree = spanning_tree(g, 0).expect("PoseGraph is connected");
        let poses = compose_along_tree(g, &tree);
        for m in g.measurements() {
            if defect.cycles_checked >= cycle_basis_limit {
                break;
            }
            if tree.parent[m.dst] == Some(m.src) {
                continue;
            }
            let pi = &poses[m.src];
            let pj = &poses[m.dst];
            let predicted = pi.compose(&m.as_pose());
            defect.rotation = defect
                .rotation
                .max(rotation_angle(&(pj.r.transpose() * predicted.r)));
            defect.translation = defect.translation.max((predicted.t - pj.t).norm());
            defect.cycles_checked += 1;
        }
    }
    ConsistencyReport {
        global_checked: true,
        global_max_cycle_defect: Some(defect),
        ..Default::default()
    }
}

/// Poses obtained by chaining measurements down the tree from an identity root.
pub(crate) fn compose_along_tree(g: &PoseGraph, tree: &crate::graph::SpanningTree) -> Vec<Pose> {
    let mut poses = vec![Pose::identity(); g.n()];
    for &v in tree.order.iter().skip(1) {
        let p = tree.parent[v].expect("non-root vertex has a parent");
        let m = g.measurement(p, v).expect("tree edges are graph edges");
        poses[v] = poses[p].compose(&m.as_pose());
    }
    poses
}

/// Geodesic midpoint correction for one direction of an edge:
/// `R_ij exp(1/2 log(R_ij^T R_ji^T))`.
pub fn pairwise_average_rotation(r_ij: &Mat3, r_ji: &Mat3) -> Result<Mat3> {
    let half = 0.5 * log_map(&(r_ij.transpose() * r_ji.transpose()))?;
    Ok(r_ij * exp_map(&half))
}

/// Replaces every rotation measurement by its pairwise average so that
/// `R'_ij R'_ji = I` on every edge. Translations are left untouched.
pub fn enforce_pairwise_rotations(g: &PoseGraph) -> Result<PoseGraph> {
    g.map_measurements(|m| {
        let back = g.measurement(m.dst, m.src).expect("paired");
        let r = pairwise_average_rotation(&m.r_rel, &back.r_rel)
            .map_err(|e| e.with_edge(m.src, m.dst))?;
        Ok(crate::graph::RelativeMeasurement { r_rel: r, ..*m })
    })
}

/// `1/2 (t_ij - R_ij t_ji)` with `R_ij = R_i^T R_j` the current estimate of
/// the relative rotation.
pub fn averaged_translation(t_ij: &Vec3, t_ji: &Vec3, r_ij_est: &Mat3) -> Vec3 {
    0.5 * (t_ij - r_ij_est * t_ji)
}

/// Translation control with online pairwise averaging:
/// `sum_j (t_j - t_i) + 1/2 (R_j t_ji - R_i t_ij)`.
///
/// `neighbor_poses[k]` is the current estimate of `edges[k].neighbor`.
pub fn averaged_velocity_control(
    i: usize,
    own: &Pose,
    edges: &[LocalEdge],
    neighbor_poses: &[Pose],
) -> Result<Vec3> {
    if edges.len() != neighbor_poses.len() {
        let missing = edges
            .get(neighbor_poses.len())
            .map(|e| e.neighbor)
            .unwrap_or(usize::MAX);
        return Err(Error::MissingNeighborData {
            vertex: i,
            neighbor: missing,
        });
    }
    let mut nu = Vec3::zeros();
    for (e, pj) in edges.iter().zip(neighbor_poses) {
        nu += (pj.t - own.t) + 0.5 * (pj.r * e.t_ji - own.r * e.t_ij);
    }
    Ok(nu)
}

/// Runs pairwise, minimal and (bounded) global checks.
pub fn full_report(
    g: &PoseGraph,
    tol_rot: f64,
    tol_trans: f64,
    cycle_basis_limit: usize,
) -> Result<ConsistencyReport> {
    Ok(check_pairwise(g, tol_rot, tol_trans)
        .merge(check_minimal(g)?)
        .merge(check_global(g, cycle_basis_limit)))
}
