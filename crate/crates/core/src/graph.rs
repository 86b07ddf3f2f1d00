//! Pose-graph data model.
//!
//! Every undirected edge is stored as its two directed measurements. Vertex
//! ids are dense `0..n`; measurements are kept sorted by `(src, dst)` so the
//! outgoing measurements of a vertex form one contiguous, neighbor-ordered
//! slice.

use std::collections::{HashSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub t: Vec3,
    pub r: Mat3,
}

impl Pose {
    pub fn new(t: Vec3, r: Mat3) -> Self {
        Self { t, r }
    }

    pub fn identity() -> Self {
        Self {
            t: Vec3::zeros(),
            r: Mat3::identity(),
        }
    }

    /// `self * other` as rigid transforms.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            t: self.t + self.r * other.t,
            r: self.r * other.r,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.r.transpose();
        Pose {
            t: -(rt * self.t),
            r: rt,
        }
    }

    /// Pose of `other` expressed in the frame of `self`.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Noisy pose of `dst` measured in the frame of `src`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeMeasurement {
    pub src: usize,
    pub dst: usize,
    pub t_rel: Vec3,
    pub r_rel: Mat3,
}

impl RelativeMeasurement {
    pub fn new(src: usize, dst: usize, t_rel: Vec3, r_rel: Mat3) -> Self {
        Self {
            src,
            dst,
            t_rel,
            r_rel,
        }
    }

    pub fn from_pose(src: usize, dst: usize, rel: &Pose) -> Self {
        Self::new(src, dst, rel.t, rel.r)
    }

    pub fn as_pose(&self) -> Pose {
        Pose::new(self.t_rel, self.r_rel)
    }

    /// The exact SE(3) inverse, as a measurement in the opposite direction.
    pub fn inverted(&self) -> Self {
        let rt = self.r_rel.transpose();
        Self {
            src: self.dst,
            dst: self.src,
            t_rel: -(rt * self.t_rel),
            r_rel: rt,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoseGraph {
    n: usize,
    measurements: Vec<RelativeMeasurement>,
    /// CSR offsets into `measurements`, one range per source vertex.
    offsets: Vec<usize>,
}

impl PoseGraph {
    /// Validates and indexes a paired measurement set.
    pub fn build(n: usize, mut measurements: Vec<RelativeMeasurement>) -> Result<Self> {
        for m in &measurements {
            for id in [m.src, m.dst] {
                if id >= n {
                    return Err(Error::DanglingVertexId { id, n });
                }
            }
            if m.src == m.dst {
                return Err(Error::SelfLoop { id: m.src });
            }
        }
        measurements.sort_by_key(|m| (m.src, m.dst));
        if let Some(w) = measurements
            .windows(2)
            .find(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst))
        {
            return Err(Error::DuplicateEdge {
                src: w[0].src,
                dst: w[0].dst,
            });
        }

        let mut offsets = vec![0; n + 1];
        for m in &measurements {
            offsets[m.src + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let graph = Self {
            n,
            measurements,
            offsets,
        };

        for m in &graph.measurements {
            if graph.measurement(m.dst, m.src).is_none() {
                return Err(Error::MissingCompanion {
                    src: m.src,
                    dst: m.dst,
                });
            }
        }
        let reached = graph.reachable_from(0);
        if reached < n {
            return Err(Error::DisconnectedGraph { reached, n });
        }
        Ok(graph)
    }

    /// [`symmetrize`] followed by [`PoseGraph::build`].
    pub fn build_symmetrized(n: usize, measurements: Vec<RelativeMeasurement>) -> Result<Self> {
        Self::build(n, symmetrize(&measurements))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// All directed measurements, sorted by `(src, dst)`.
    pub fn measurements(&self) -> &[RelativeMeasurement] {
        &self.measurements
    }

    pub fn num_directed(&self) -> usize {
        self.measurements.len()
    }

    pub fn num_edges(&self) -> usize {
        self.measurements.len() / 2
    }

    /// Outgoing measurements of `i`, ordered by ascending neighbor id.
    pub fn outgoing(&self, i: usize) -> &[RelativeMeasurement] {
        &self.measurements[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn neighbors(&self, i: usize) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.outgoing(i).iter().map(|m| m.dst)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn measurement(&self, src: usize, dst: usize) -> Option<&RelativeMeasurement> {
        let out = self.outgoing(src);
        out.binary_search_by_key(&dst, |m| m.dst)
            .ok()
            .map(|k| &out[k])
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.measurement(i, j).is_some()
    }

    /// Undirected edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.measurements
            .iter()
            .filter(|m| m.src < m.dst)
            .map(|m| (m.src, m.dst))
    }

    /// Same topology, new measurement values. `f` sees each measurement in
    /// `(src, dst)` order.
    pub fn map_measurements<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&RelativeMeasurement) -> Result<RelativeMeasurement>,
    {
        let mut out = Vec::with_capacity(self.measurements.len());
        for m in &self.measurements {
            let new = f(m)?;
            debug_assert_eq!((new.src, new.dst), (m.src, m.dst));
            out.push(new);
        }
        Ok(Self {
            n: self.n,
            measurements: out,
            offsets: self.offsets.clone(),
        })
    }

    fn reachable_from(&self, root: usize) -> usize {
        if self.n == 0 {
            return 0;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count
    }
}

/// Adds the exact inverse of every directed measurement whose opposite
/// direction is missing. Already-paired input is returned unchanged.
pub fn symmetrize(measurements: &[RelativeMeasurement]) -> Vec<RelativeMeasurement> {
    let present: HashSet<(usize, usize)> = measurements.iter().map(|m| (m.src, m.dst)).collect();
    let mut out = measurements.to_vec();
    let mut added = HashSet::new();
    for m in measurements {
        if !present.contains(&(m.dst, m.src)) && added.insert((m.dst, m.src)) {
            out.push(m.inverted());
        }
    }
    out
}

/// Graph Laplacian `L = D - A`.
#[derive(Clone, Debug, PartialEq)]
pub struct Laplacian(pub DMatrix<f64>);

impl Laplacian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Second-smallest eigenvalue (algebraic connectivity).
    pub fn lambda2(&self) -> Option<f64> {
        self.eigenvalues().get(1).copied()
    }
}

pub fn laplacian(g: &PoseGraph) -> Laplacian {
    let n = g.n();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = g.degree(i) as f64;
        for j in g.neighbors(i) {
            l[(i, j)] = -1.0;
        }
    }
    Laplacian(l)
}

/// Breadth-first spanning tree. Neighbors are visited in ascending id order so
/// the tree is deterministic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanningTree {
    pub root: usize,
    /// `parent[root]` is `None`.
    pub parent: Vec<Option<usize>>,
    /// Vertices in visitation order, root first.
    pub order: Vec<usize>,
}

impl SpanningTree {
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(child, p)| p.map(|p| (p, child)))
    }
}

pub fn spanning_tree(g: &PoseGraph, root: usize) -> Result<SpanningTree> {
    let n = g.n();
    if root >= n {
        return Err(Error::DanglingVertexId { id: root, n });
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for j in g.neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                parent[j] = Some(i);
                queue.push_back(j);
            }
        }
    }
    if order.len() < n {
        return Err(Error::DisconnectedGraph {
            reached: order.len(),
            n,
        });
    }
    Ok(SpanningTree {
        root,
        parent,
        order,
    })
}

/// What vertex `i` knows about the edge to one neighbor `j`: its own outgoing
/// measurement `(t_ij, R_ij)` and the neighbor's translation measurement
/// `t_ji` (exchanged once before solving).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalEdge {
    pub neighbor: usize,
    pub t_ij: Vec3,
    pub r_ij: Mat3,
    pub t_ji: Vec3,
}

/// Local edge data for vertex `i`, ascending by neighbor id.
pub fn local_edges(g: &PoseGraph, i: usize) -> Vec<LocalEdge> {
    g.outgoing(i)
        .iter()
        .map(|m| {
            let back = g
                .measurement(m.dst, m.src)
                .expect("paired measurements are a PoseGraph invariant");
            LocalEdge {
                neighbor: m.dst,
                t_ij: m.t_rel,
                r_ij: m.r_rel,
                t_ji: back.t_rel,
            }
        })
        .collect()
}

/// Summary statistics used by the CLI `info` command.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DegreeStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

pub fn degree_stats(g: &PoseGraph) -> DegreeStats {
    let degrees: Vec<usize> = (0..g.n()).map(|i| g.degree(i)).collect();
    DegreeStats {
        min: degrees.iter().copied().min().unwrap_or(0),
        max: degrees.iter().copied().max().unwrap_or(0),
        mean: if degrees.is_empty() {
            0.0
        } else {
            degrees.iter().sum::<usize>() as f64 / degrees.len() as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{random_rotation, rot_z};

    fn unit(src: usize, dst: usize) -> RelativeMeasurement {
        RelativeMeasurement::new(src, dst, Vec3::zeros(), Mat3::identity())
    }

    fn undirected(edges: &[(usize, usize)]) -> Vec<RelativeMeasurement> {
        edges
            .iter()
            .flat_map(|&(i, j)| [unit(i, j), unit(j, i)])
            .collect()
    }

    pub(crate) fn path3() -> PoseGraph {
        PoseGraph::build(3, undirected(&[(0, 1), (1, 2)])).unwrap()
    }

    fn complete(n: usize) -> PoseGraph {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        PoseGraph::build(n, undirected(&edges)).unwrap()
    }

    #[test]
    fn two_node_graph() {
        let g = PoseGraph::build(2, undirected(&[(0, 1)])).unwrap();
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(g.neighbors(1).collect::<Vec<_>>(), vec![0]);
        assert_eq!(g.num_directed(), 2);
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn path_accepted_and_disconnected_rejected() {
        let g = path3();
        assert_eq!(g.neighbors(1).collect::<Vec<_>>(), vec![0, 2]);
        let err = PoseGraph::build(3, undirected(&[(0, 1)])).unwrap_err();
        assert!(matches!(err, Error::DisconnectedGraph { reached: 2, n: 3 }));
    }

    #[test]
    fn build_errors() {
        let err = PoseGraph::build(2, vec![unit(0, 5), unit(5, 0)]).unwrap_err();
        assert!(matches!(err, Error::DanglingVertexId { id: 5, n: 2 }));
        let err = PoseGraph::build(2, vec![unit(0, 1), unit(1, 0), unit(0, 1)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateEdge { src: 0, dst: 1 }));
        let err = PoseGraph::build(2, vec![unit(0, 1)]).unwrap_err();
        assert!(matches!(err, Error::MissingCompanion { src: 0, dst: 1 }));
        let err = PoseGraph::build(2, vec![unit(1, 1)]).unwrap_err();
        assert!(matches!(err, Error::SelfLoop { id: 1 }));
        assert!(PoseGraph::build_symmetrized(2, vec![unit(0, 1)]).is_ok());
    }

    #[test]
    fn symmetrize_inverts_missing_directions() {
        let r = random_rotation(3);
        let t = Vec3::new(1.0, -2.0, 0.5);
        let out = symmetrize(&[RelativeMeasurement::new(0, 1, t, r)]);
        assert_eq!(out.len(), 2);
        let back = out[1];
        assert_eq!((back.src, back.dst), (1, 0));
        assert_eq!(back.r_rel, r.transpose());
        assert_eq!(back.t_rel, -(r.transpose() * t));

        let paired = out.clone();
        assert_eq!(symmetrize(&paired), paired);
        // synthesized halves compose to the identity
        let cycle = out[0].as_pose().compose(&out[1].as_pose());
        assert!(cycle.t.norm() < 1e-15);
        assert!((cycle.r - Mat3::identity()).norm() < 1e-15);
    }

    #[test]
    fn laplacian_of_path_and_complete() {
        let l = laplacian(&path3());
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l.0, expected);
        // path-3 spectrum is {0, 1, 3}
        let ev = l.eigenvalues();
        assert!(ev[0].abs() < 1e-12);
        assert!((ev[1] - 1.0).abs() < 1e-12);
        assert!((ev[2] - 3.0).abs() < 1e-12);

        let k3 = laplacian(&complete(3));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k3.0[(i, j)], if i == j { 2.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn laplacian_row_sums_zero() {
        let l = laplacian(&complete(5));
        let ones = nalgebra::DVector::from_element(5, 1.0);
        assert_eq!(&l.0 * ones, nalgebra::DVector::zeros(5));
        assert!(l.lambda2().unwrap() > 1e-12);
    }

    #[test]
    fn spanning_tree_examples() {
        let t = spanning_tree(&path3(), 0).unwrap();
        assert_eq!(t.parent, vec![None, Some(0), Some(1)]);

        let star = PoseGraph::build(5, undirected(&[(2, 0), (2, 1), (2, 3), (2, 4)])).unwrap();
        let t = spanning_tree(&star, 2).unwrap();
        for v in [0, 1, 3, 4] {
            assert_eq!(t.parent[v], Some(2));
        }
        assert_eq!(t.order, vec![2, 0, 1, 3, 4]);
    }

    #[test]
    fn max_degree_examples() {
        assert_eq!(path3().max_degree(), 2);
        let k4 = complete(4);
        assert_eq!(k4.max_degree(), 3);
        let l = laplacian(&k4);
        let diag_max = (0..4).map(|i| l.0[(i, i)]).fold(0.0, f64::max);
        assert_eq!(diag_max as usize, k4.max_degree());
    }

    #[test]
    fn measurement_lookup() {
        let m = RelativeMeasurement::new(0, 1, Vec3::x(), rot_z(0.3));
        let g = PoseGraph::build_symmetrized(2, vec![m]).unwrap();
        assert_eq!(g.measurement(0, 1), Some(&m));
        assert!(g.measurement(1, 0).is_some());
        assert!(!g.has_edge(0, 0));
    }
}
