//! Discretized GeoD consensus.
//!
//! Every vertex runs the kinematics `t' = nu`, `R' = R hat(omega)` with
//!
//! ```text
//! nu_i    = sum_j  t_j - t_i - R_i t_ij
//! omega_i = sum_j  log(R_i^T R_j R_ij^T)^vee
//! ```
//!
//! integrated with a fixed step: `t += dt nu`, `R <- R exp(dt omega)`. All
//! controls of one iteration are computed from the previous iterate (Jacobi
//! style) and neighbors are always summed in ascending id order, so the
//! per-node kernel [`node_controls`] produces bit-identical results whether it
//! runs here or inside a distributed worker.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consistency::{averaged_translation, averaged_velocity_control};
use crate::error::{Error, Result};
use crate::graph::{local_edges, LocalEdge, Pose, PoseGraph};
use crate::so3::{exp_map, log_map, reorthonormalize, rotation_angle, Vec3};

/// How the translation control treats the two measurements of an edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationMode {
    /// Average `t_ij` with the neighbor's `t_ji` using the current relative
    /// rotation estimate, every step.
    #[default]
    PerStepAveraged,
    /// `sum_j (t_j - t_i) + 1/2 (R_j t_ji - R_i t_ij)`.
    OnlineAveraged,
    /// Plain `sum_j t_j - t_i - R_i t_ij`.
    Raw,
}

impl FromStr for TranslationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_step_averaged" | "per-step-averaged" | "averaged" => Ok(Self::PerStepAveraged),
            "online_averaged" | "online-averaged" | "online" => Ok(Self::OnlineAveraged),
            "raw" => Ok(Self::Raw),
            other => Err(Error::InvalidConfig(format!(
                "unknown translation mode `{other}` (expected per_step_averaged, online_averaged or raw)"
            ))),
        }
    }
}

impl fmt::Display for TranslationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerStepAveraged => "per_step_averaged",
            Self::OnlineAveraged => "online_averaged",
            Self::Raw => "raw",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Integration step, seconds.
    pub dt: f64,
    /// Stop once consecutive geodesic objectives differ by less than this.
    pub stop_tol: f64,
    pub max_iters: usize,
    pub translation_mode: TranslationMode,
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            stop_tol: 1e-2,
            max_iters: 20_000,
            translation_mode: TranslationMode::PerStepAveraged,
            record_history: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "stop_tol must be positive, got {}",
                self.stop_tol
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    /// Rejects `dt * max_degree >= 2` and warns at `>= 1`.
    pub fn check_step_size(&self, g: &PoseGraph) -> Result<()> {
        let max_degree = g.max_degree();
        let product = self.dt * max_degree as f64;
        if product >= 2.0 {
            return Err(Error::StepSizeUnstable {
                dt: self.dt,
                max_degree,
            });
        }
        if product >= 1.0 {
            log::warn!(
                "dt * max_degree = {product:.3} >= 1; linear consensus may oscillate or diverge"
            );
        }
        Ok(())
    }
}

/// Linear (`nu`, m/s) and angular (`omega`, rad/s) control of one vertex.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Controls {
    pub nu: Vec3,
    pub omega: Vec3,
}

impl Controls {
    pub fn is_exactly_zero(&self) -> bool {
        self.nu == Vec3::zeros() && self.omega == Vec3::zeros()
    }

    pub fn max_norm(&self) -> f64 {
        self.nu.norm().max(self.omega.norm())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Translation squares plus squared geodesic rotation residuals.
    pub geodesic: f64,
    /// Translation squares plus squared Frobenius rotation residuals.
    pub chordal: f64,
    pub rotation_only: f64,
    pub translation_only: f64,
}

/// One row of the objective history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub geodesic: f64,
    pub chordal: f64,
    pub max_control_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub estimates: Vec<Pose>,
    pub iter: usize,
    /// Controls evaluated at `estimates`.
    pub controls: Vec<Controls>,
    pub objective: ObjectiveValue,
    pub history: Vec<HistoryEntry>,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub estimates: Vec<Pose>,
    pub history: Vec<HistoryEntry>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: ObjectiveValue,
}

/// Controls of one vertex from its own pose and its neighbors' poses.
/// `neighbor_poses[k]` belongs to `edges[k].neighbor`.
pub fn node_controls(
    i: usize,
    own: &Pose,
    edges: &[LocalEdge],
    neighbor_poses: &[Pose],
    mode: TranslationMode,
) -> Result<Controls> {
    if edges.len() != neighbor_poses.len() {
        let neighbor = edges.get(neighbor_poses.len()).map_or(usize::MAX, |e| e.neighbor);
        return Err(Error::MissingNeighborData { vertex: i, neighbor });
    }
    let mut omega = Vec3::zeros();
    for (e, pj) in edges.iter().zip(neighbor_poses) {
        let residual = own.r.transpose() * pj.r * e.r_ij.transpose();
        omega += log_map(&residual).map_err(|err| err.with_edge(i, e.neighbor))?;
    }
    let nu = match mode {
        TranslationMode::Raw => edges
            .iter()
            .zip(neighbor_poses)
            .fold(Vec3::zeros(), |acc, (e, pj)| acc + (pj.t - own.t - own.r * e.t_ij)),
        TranslationMode::PerStepAveraged => {
            edges.iter().zip(neighbor_poses).fold(Vec3::zeros(), |acc, (e, pj)| {
                let r_ij_est = own.r.transpose() * pj.r;
                let t_avg = averaged_translation(&e.t_ij, &e.t_ji, &r_ij_est);
                acc + (pj.t - own.t - own.r * t_avg)
            })
        }
        TranslationMode::OnlineAveraged => averaged_velocity_control(i, own, edges, neighbor_poses)?,
    };
    Ok(Controls { nu, omega })
}

/// One explicit step on SE(3): Euler on translation, exact group update on
/// rotation, then drift correction.
pub fn integrate_pose(pose: &Pose, controls: &Controls, dt: f64) -> Pose {
    Pose {
        t: pose.t + controls.nu * dt,
        r: reorthonormalize(pose.r * exp_map(&(controls.omega * dt))),
    }
}

/// Per-vertex local edge tables, built once per graph.
#[derive(Clone, Debug)]
pub struct LocalProblem {
    edges: Vec<Vec<LocalEdge>>,
}

impl LocalProblem {
    pub fn new(g: &PoseGraph) -> Self {
        Self {
            edges: (0..g.n()).map(|i| local_edges(g, i)).collect(),
        }
    }

    pub fn edges(&self, i: usize) -> &[LocalEdge] {
        &self.edges[i]
    }

    pub fn n(&self) -> usize {
        self.edges.len()
    }

    pub fn controls(&self, estimates: &[Pose], mode: TranslationMode) -> Result<Vec<Controls>> {
        let mut buf = Vec::new();
        (0..self.n())
            .map(|i| {
                buf.clear();
                buf.extend(self.edges[i].iter().map(|e| estimates[e.neighbor]));
                node_controls(i, &estimates[i], &self.edges[i], &buf, mode)
            })
            .collect()
    }
}

/// `omega_i`: vee of the summed residual logs over the neighbors of `i`.
pub fn rotation_control(i: usize, estimates: &[Pose], g: &PoseGraph) -> Result<Vec3> {
    let edges = local_edges(g, i);
    let nbrs: Vec<Pose> = edges.iter().map(|e| estimates[e.neighbor]).collect();
    Ok(node_controls(i, &estimates[i], &edges, &nbrs, TranslationMode::Raw)?.omega)
}

/// `nu_i` in the requested mode.
pub fn translation_control(
    i: usize,
    estimates: &[Pose],
    g: &PoseGraph,
    mode: TranslationMode,
) -> Result<Vec3> {
    let edges = local_edges(g, i);
    let nbrs: Vec<Pose> = edges.iter().map(|e| estimates[e.neighbor]).collect();
    Ok(node_controls(i, &estimates[i], &edges, &nbrs, mode)?.nu)
}

pub fn evaluate_objective(estimates: &[Pose], g: &PoseGraph) -> Result<ObjectiveValue> {
    let mut out = ObjectiveValue::default();
    for m in g.measurements() {
        let pi = &estimates[m.src];
        let pj = &estimates[m.dst];
        let trans_sq = (pj.t - pi.t - pi.r * m.t_rel).norm_squared();
        let rel = pi.r.transpose() * pj.r;
        let theta = log_map(&(rel * m.r_rel.transpose()))
            .map_err(|e| e.with_edge(m.src, m.dst))?
            .norm();
        let frob_sq = (rel - m.r_rel).norm_squared();
        out.translation_only += trans_sq;
        out.rotation_only += theta * theta;
        out.geodesic += trans_sq + theta * theta;
        out.chordal += trans_sq + frob_sq;
    }
    Ok(out)
}

/// `V = sum over directed measurements of 1/2 |log(R_i^T R_j R_ij^T)^vee|^2`.
pub fn evaluate_lyapunov(estimates: &[Pose], g: &PoseGraph) -> Result<f64> {
    let mut v = 0.0;
    for m in g.measurements() {
        let residual = estimates[m.src].r.transpose() * estimates[m.dst].r * m.r_rel.transpose();
        let x = log_map(&residual).map_err(|e| e.with_edge(m.src, m.dst))?;
        v += 0.5 * x.norm_squared();
    }
    Ok(v)
}

/// True iff every edge residual angle is at most `pi/2 - epsilon`.
pub fn in_basin(estimates: &[Pose], g: &PoseGraph, epsilon: f64) -> bool {
    let bound = std::f64::consts::FRAC_PI_2 - epsilon;
    g.measurements().iter().all(|m| {
        let residual = estimates[m.src].r.transpose() * estimates[m.dst].r * m.r_rel.transpose();
        rotation_angle(&residual) <= bound
    })
}

/// True iff every `|nu_i|` and `|omega_i|` is below `tol`.
pub fn is_equilibrium(
    estimates: &[Pose],
    g: &PoseGraph,
    tol: f64,
    mode: TranslationMode,
) -> Result<bool> {
    let controls = LocalProblem::new(g).controls(estimates, mode)?;
    Ok(controls
        .iter()
        .all(|c| c.nu.norm() < tol && c.omega.norm() < tol))
}

/// Applies the rigid transform that maps `estimates[anchor]` onto
/// `reference[anchor]` to every estimate.
pub fn align_gauge(estimates: &[Pose], reference: &[Pose], anchor: usize) -> Vec<Pose> {
    let g = reference[anchor].compose(&estimates[anchor].inverse());
    estimates.iter().map(|p| g.compose(p)).collect()
}

/// Stepping engine for one graph and configuration.
pub struct Solver<'g> {
    graph: &'g PoseGraph,
    local: LocalProblem,
    config: SolverConfig,
}

impl<'g> Solver<'g> {
    pub fn new(graph: &'g PoseGraph, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        config.check_step_size(graph)?;
        Ok(Self {
            graph,
            local: LocalProblem::new(graph),
            config,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn initial_state(&self, init: Vec<Pose>) -> Result<SolverState> {
        if init.len() != self.graph.n() {
            return Err(Error::InvalidConfig(format!(
                "initialization has {} poses for a graph with {} vertices",
                init.len(),
                self.graph.n()
            )));
        }
        let controls = self.local.controls(&init, self.config.translation_mode)?;
        let objective = evaluate_objective(&init, self.graph)?;
        let mut state = SolverState {
            estimates: init,
            iter: 0,
            controls,
            objective,
            history: Vec::new(),
        };
        self.record(&mut state);
        Ok(state)
    }

    /// Advances every vertex simultaneously using the controls stored in
    /// `state` (computed from the previous iterate).
    pub fn step(&self, state: &SolverState) -> Result<SolverState> {
        let dt = self.config.dt;
        let estimates: Vec<Pose> = state
            .estimates
            .iter()
            .zip(&state.controls)
            .map(|(p, c)| integrate_pose(p, c, dt))
            .collect();
        let controls = self.local.controls(&estimates, self.config.translation_mode)?;
        let objective = evaluate_objective(&estimates, self.graph)?;
        let mut next = SolverState {
            estimates,
            iter: state.iter + 1,
            controls,
            objective,
            history: state.history.clone(),
        };
        self.record(&mut next);
        Ok(next)
    }

    /// Runs until consecutive geodesic objectives differ by less than
    /// `stop_tol`, or `max_iters` steps. `observer` sees every iterate,
    /// starting with the initialization at iteration 0.
    pub fn solve_with_observer<F>(&self, init: Vec<Pose>, mut observer: F) -> Result<SolveResult>
    where
        F: FnMut(usize, &[Pose]),
    {
        let mut state = self.initial_state(init)?;
        observer(0, &state.estimates);
        let mut converged = state.controls.iter().all(Controls::is_exactly_zero);
        while !converged && state.iter < self.config.max_iters {
            let prev = state.objective.geodesic;
            state = self.step_in_place(state)?;
            observer(state.iter, &state.estimates);
            converged = (state.objective.geodesic - prev).abs() < self.config.stop_tol;
        }
        Ok(SolveResult {
            iterations: state.iter,
            converged,
            objective: state.objective,
            history: state.history,
            estimates: state.estimates,
        })
    }

    pub fn solve(&self, init: Vec<Pose>) -> Result<SolveResult> {
        self.solve_with_observer(init, |_, _| {})
    }

    fn step_in_place(&self, mut state: SolverState) -> Result<SolverState> {
        let dt = self.config.dt;
        for (p, c) in state.estimates.iter_mut().zip(&state.controls) {
            *p = integrate_pose(p, c, dt);
        }
        state.controls = self.local.controls(&state.estimates, self.config.translation_mode)?;
        state.objective = evaluate_objective(&state.estimates, self.graph)?;
        state.iter += 1;
        self.record(&mut state);
        Ok(state)
    }

    fn record(&self, state: &mut SolverState) {
        if self.config.record_history {
            state.history.push(HistoryEntry {
                iter: state.iter,
                geodesic: state.objective.geodesic,
                chordal: state.objective.chordal,
                max_control_norm: state
                    .controls
                    .iter()
                    .map(Controls::max_norm)
                    .fold(0.0, f64::max),
            });
        }
    }
}

/// One simultaneous step from `state` on `g`.
pub fn step(state: &SolverState, g: &PoseGraph, config: &SolverConfig) -> Result<SolverState> {
    Solver::new(g, config.clone())?.step(state)
}

pub fn solve(g: &PoseGraph, init: Vec<Pose>, config: &SolverConfig) -> Result<SolveResult> {
    Solver::new(g, config.clone())?.solve(init)
}
