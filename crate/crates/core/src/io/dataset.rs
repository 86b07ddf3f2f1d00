//! Native JSON dataset: optional generation metadata, vertex poses and
//! directed measurements. Rotations are stored as 9 row-major entries so a
//! round trip is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{symmetrize, Pose, PoseGraph, RelativeMeasurement};
use crate::io::g2o::G2oDocument;
use crate::so3::{project_to_so3, Mat3, Vec3};
use crate::synth::{corrupt_measurements, generate_ground_truth, NoiseModel, ScenarioSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: usize,
    pub t: [f64; 3],
    pub r: [f64; 9],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub src: usize,
    pub dst: usize,
    pub t: [f64; 3],
    pub r: [f64; 9],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Whether `vertices` are ground truth (generated) or initial guesses
    /// (imported).
    #[serde(default)]
    pub ground_truth: bool,
    /// External ids, kept when importing from g2o.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<i64>>,
    pub vertices: Vec<VertexRecord>,
    pub measurements: Vec<MeasurementRecord>,
}

/// Configuration consumed by dataset generation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub spec: ScenarioSpec,
    pub noise: NoiseModel,
    pub seed: u64,
}

fn mat_to_row_major(m: &Mat3) -> [f64; 9] {
    let mut a = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            a[3 * r + c] = m[(r, c)];
        }
    }
    a
}

fn row_major_to_mat(a: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(a)
}

fn vec_arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl Dataset {
    /// Generates ground truth and noisy measurements.
    pub fn generate(config: &GenerateConfig) -> Result<Self> {
        let gt = generate_ground_truth(&config.spec, config.seed)?;
        let g = corrupt_measurements(&gt, &config.noise)?;
        let mut ds = Self::from_parts(&gt.poses, g.measurements(), true);
        ds.spec = Some(config.spec.clone());
        ds.noise = Some(config.noise);
        ds.seed = Some(config.seed);
        Ok(ds)
    }

    pub fn from_parts(poses: &[Pose], measurements: &[RelativeMeasurement], ground_truth: bool) -> Self {
        Self {
            spec: None,
            noise: None,
            seed: None,
            ground_truth,
            ids: None,
            vertices: poses
                .iter()
                .enumerate()
                .map(|(id, p)| VertexRecord {
                    id,
                    t: vec_arr(&p.t),
                    r: mat_to_row_major(&p.r),
                })
                .collect(),
            measurements: measurements
                .iter()
                .map(|m| MeasurementRecord {
                    src: m.src,
                    dst: m.dst,
                    t: vec_arr(&m.t_rel),
                    r: mat_to_row_major(&m.r_rel),
                })
                .collect(),
        }
    }

    pub fn from_g2o(doc: &G2oDocument, symmetrized: bool) -> Self {
        let ms = if symmetrized {
            symmetrize(&doc.measurements)
        } else {
            doc.measurements.clone()
        };
        Self {
            ids: Some(doc.ids.clone()),
            ..Self::from_parts(&doc.poses, &ms, false)
        }
    }

    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    /// Vertex poses by dense id. Ids must be exactly `0..n`; rotations are
    /// projected onto SO(3) to absorb text rounding.
    pub fn poses(&self) -> Result<Vec<Pose>> {
        let mut poses = vec![None; self.n()];
        for v in &self.vertices {
            let slot = poses.get_mut(v.id).ok_or(Error::DanglingVertexId { id: v.id, n: self.n() })?;
            if slot.is_some() {
                return Err(Error::InvalidConfig(format!("vertex {} listed twice", v.id)));
            }
            *slot = Some(Pose::new(Vec3::from(v.t), project_to_so3(&row_major_to_mat(&v.r))));
        }
        Ok(poses.into_iter().map(|p| p.expect("ids cover 0..n")).collect())
    }

    pub fn relative_measurements(&self) -> Vec<RelativeMeasurement> {
        self.measurements
            .iter()
            .map(|m| {
                RelativeMeasurement::new(m.src, m.dst, Vec3::from(m.t), project_to_so3(&row_major_to_mat(&m.r)))
            })
            .collect()
    }

    /// Whether every measurement has its opposite direction.
    pub fn is_paired(&self) -> bool {
        let set: std::collections::HashSet<(usize, usize)> =
            self.measurements.iter().map(|m| (m.src, m.dst)).collect();
        set.iter().all(|&(i, j)| set.contains(&(j, i)))
    }

    /// The paired graph; directed-only measurements are completed with their
    /// exact inverses.
    pub fn graph(&self) -> Result<PoseGraph> {
        if !self.is_paired() {
            log::info!("dataset is directed-only; adding inverse measurements");
        }
        PoseGraph::build_symmetrized(self.n(), self.relative_measurements())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::check_global;

    #[test]
    fn json_round_trip_is_exact() {
        let cfg = GenerateConfig {
            spec: ScenarioSpec::grid([3, 3, 3]),
            ..Default::default()
        };
        let ds = Dataset::generate(&cfg).unwrap();
        let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(ds, back);
        assert_eq!(ds.graph().unwrap().num_directed(), 108);
    }

    #[test]
    fn noise_free_grid_is_globally_consistent() {
        let cfg = GenerateConfig {
            spec: ScenarioSpec::grid([3, 3, 3]),
            noise: NoiseModel::noise_free(),
            seed: 3,
        };
        let g = Dataset::generate(&cfg).unwrap().graph().unwrap();
        let d = check_global(&g, usize::MAX).global_max_cycle_defect.unwrap();
        assert!(d.rotation < 1e-9 && d.translation < 1e-9);
    }

    #[test]
    fn bad_vertex_ids() {
        let mut ds = Dataset::from_parts(&[Pose::identity(); 2], &[], true);
        ds.vertices[1].id = 5;
        assert!(matches!(ds.poses(), Err(Error::DanglingVertexId { id: 5, .. })));
        ds.vertices[1].id = 0;
        assert!(ds.poses().is_err());
    }

    #[test]
    fn minimal_json_accepted() {
        let text = r#"{"vertices":[{"id":0,"t":[0,0,0],"r":[1,0,0,0,1,0,0,0,1]},
                                   {"id":1,"t":[1,0,0],"r":[1,0,0,0,1,0,0,0,1]}],
                       "measurements":[{"src":0,"dst":1,"t":[1,0,0],"r":[1,0,0,0,1,0,0,0,1]}]}"#;
        let ds = Dataset::from_json(text).unwrap();
        assert!(!ds.is_paired());
        assert_eq!(ds.graph().unwrap().num_directed(), 2);
    }
}
