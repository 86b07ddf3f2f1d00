//! `VERTEX_SE3:QUAT` / `EDGE_SE3:QUAT` text format.
//!
//! An edge `i j` encodes the pose of `j` in the frame of `i`. Quaternions are
//! scalar-last and normalized on ingest. Information matrices are kept for
//! round-tripping only; the objective is unweighted.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::graph::{Pose, PoseGraph, RelativeMeasurement};
use crate::so3::{matrix_to_quat, quat_to_matrix, Vec3};

pub const VERTEX_TAG: &str = "VERTEX_SE3:QUAT";
pub const EDGE_TAG: &str = "EDGE_SE3:QUAT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum G2oKind {
    VertexSe3Quat,
    EdgeSe3Quat,
    Other,
}

/// One parsed line. `ids` holds one id for vertices and two for edges.
#[derive(Clone, Debug, PartialEq)]
pub struct G2oRecord {
    pub kind: G2oKind,
    pub ids: Vec<i64>,
    pub translation: Vec3,
    /// `[qx, qy, qz, qw]`, unit norm.
    pub quaternion: [f64; 4],
    pub info_upper: Option<[f64; 21]>,
}

/// A parsed file with external ids remapped to dense `0..n` in ascending
/// order.
#[derive(Clone, Debug, Default)]
pub struct G2oDocument {
    /// `ids[k]` is the external id of dense vertex `k`.
    pub ids: Vec<i64>,
    pub poses: Vec<Pose>,
    /// Directed measurements in file order.
    pub measurements: Vec<RelativeMeasurement>,
    /// Upper-triangular information per measurement, if present in the file.
    pub info: Vec<Option<[f64; 21]>>,
    /// Lines with an unrecognized tag.
    pub skipped: usize,
}

impl G2oDocument {
    pub fn n(&self) -> usize {
        self.poses.len()
    }

    /// Builds the paired graph. Directed-only input must be symmetrized.
    pub fn to_pose_graph(&self, symmetrize: bool) -> Result<PoseGraph> {
        if symmetrize {
            PoseGraph::build_symmetrized(self.n(), self.measurements.clone())
        } else {
            PoseGraph::build(self.n(), self.measurements.clone())
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        token: String::new(),
        reason: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        token: tok.to_string(),
        reason: format!("invalid {what}"),
    })
}

fn parse_quat<'a>(toks: &mut impl Iterator<Item = &'a str>, line: usize) -> Result<[f64; 4]> {
    let mut q = [0.0; 4];
    for v in q.iter_mut() {
        *v = parse_num(toks.next(), line, "quaternion component")?;
    }
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Parse {
            line,
            token: format!("{q:?}"),
            reason: "quaternion has zero or non-finite norm".into(),
        });
    }
    Ok(q.map(|v| v / norm))
}

/// Parses one non-empty line.
pub fn parse_record(text: &str, line: usize) -> Result<G2oRecord> {
    let mut toks = text.split_whitespace();
    let tag = toks.next().unwrap_or("");
    let kind = match tag {
        VERTEX_TAG => G2oKind::VertexSe3Quat,
        EDGE_TAG => G2oKind::EdgeSe3Quat,
        _ => {
            return Ok(G2oRecord {
                kind: G2oKind::Other,
                ids: Vec::new(),
                translation: Vec3::zeros(),
                quaternion: [0.0, 0.0, 0.0, 1.0],
                info_upper: None,
            })
        }
    };
    let n_ids = if kind == G2oKind::EdgeSe3Quat { 2 } else { 1 };
    let mut ids = Vec::with_capacity(n_ids);
    for _ in 0..n_ids {
        ids.push(parse_num::<i64>(toks.next(), line, "vertex id")?);
    }
    let mut t = Vec3::zeros();
    for k in 0..3 {
        t[k] = parse_num(toks.next(), line, "translation component")?;
    }
    let quaternion = parse_quat(&mut toks, line)?;
    let info_upper = if kind == G2oKind::EdgeSe3Quat {
        let rest: Vec<&str> = toks.collect();
        match rest.len() {
            0 => None,
            21 => {
                let mut info = [0.0; 21];
                for (v, tok) in info.iter_mut().zip(rest) {
                    *v = parse_num(Some(tok), line, "information entry")?;
                }
                Some(info)
            }
            k => {
                return Err(Error::Parse {
                    line,
                    token: rest.join(" "),
                    reason: format!("expected 0 or 21 information entries, found {k}"),
                })
            }
        }
    } else {
        if let Some(extra) = toks.next() {
            return Err(Error::Parse {
                line,
                token: extra.to_string(),
                reason: "trailing token after vertex record".into(),
            });
        }
        None
    };
    Ok(G2oRecord {
        kind,
        ids,
        translation: t,
        quaternion,
        info_upper,
    })
}

/// Reads a whole g2o stream.
///
/// Vertices are optional: if the file declares none, every vertex referenced
/// by an edge gets an identity pose. If it declares some, every edge endpoint
/// must be declared.
pub fn parse_g2o<R: BufRead>(reader: R) -> Result<G2oDocument> {
    let mut vertices: BTreeMap<i64, Pose> = BTreeMap::new();
    let mut edges: Vec<(i64, i64, Pose, Option<[f64; 21]>)> = Vec::new();
    let mut skipped = 0;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec = parse_record(trimmed, k + 1)?;
        let pose = Pose::new(rec.translation, quat_to_matrix(rec.quaternion));
        match rec.kind {
            G2oKind::VertexSe3Quat => {
                if vertices.insert(rec.ids[0], pose).is_some() {
                    return Err(Error::Parse {
                        line: k + 1,
                        token: rec.ids[0].to_string(),
                        reason: "vertex declared twice".into(),
                    });
                }
            }
            G2oKind::EdgeSe3Quat => edges.push((rec.ids[0], rec.ids[1], pose, rec.info_upper)),
            G2oKind::Other => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} g2o records of unsupported kind");
    }

    if vertices.is_empty() {
        for (i, j, _, _) in &edges {
            vertices.entry(*i).or_insert_with(Pose::identity);
            vertices.entry(*j).or_insert_with(Pose::identity);
        }
    } else {
        let declared = vertices.len();
        let mut referenced: std::collections::BTreeSet<i64> = vertices.keys().copied().collect();
        for (i, j, _, _) in &edges {
            referenced.insert(*i);
            referenced.insert(*j);
        }
        if referenced.len() != declared {
            return Err(Error::InconsistentVertexCount {
                declared,
                referenced: referenced.len(),
            });
        }
    }

    let ids: Vec<i64> = vertices.keys().copied().collect();
    let dense = |id: i64| ids.binary_search(&id).expect("all ids registered");
    let measurements = edges
        .iter()
        .map(|(i, j, p, _)| RelativeMeasurement::from_pose(dense(*i), dense(*j), p))
        .collect();
    let info = edges.iter().map(|e| e.3).collect();
    Ok(G2oDocument {
        poses: vertices.into_values().collect(),
        ids,
        measurements,
        info,
        skipped,
    })
}

pub fn parse_g2o_str(text: &str) -> Result<G2oDocument> {
    parse_g2o(text.as_bytes())
}

/// Upper triangle of the 6x6 identity, row-major.
pub fn identity_info() -> [f64; 21] {
    let mut info = [0.0; 21];
    let mut k = 0;
    for r in 0..6 {
        for c in r..6 {
            info[k] = if r == c { 1.0 } else { 0.0 };
            k += 1;
        }
    }
    info
}

fn write_pose<W: Write>(out: &mut W, p: &Pose) -> Result<()> {
    let q = matrix_to_quat(&p.r);
    write!(
        out,
        "{} {} {} {} {} {} {}",
        p.t.x, p.t.y, p.t.z, q[0], q[1], q[2], q[3]
    )?;
    Ok(())
}

/// Writes vertices `0..n` with external ids `ids` (dense ids when `None`)
/// followed by `measurements` in the given order. Missing information
/// matrices are written as identity.
pub fn write_g2o<W: Write>(
    out: &mut W,
    poses: &[Pose],
    measurements: &[RelativeMeasurement],
    ids: Option<&[i64]>,
    info: Option<&[Option<[f64; 21]>]>,
) -> Result<()> {
    let ext = |k: usize| ids.map_or(k as i64, |ids| ids[k]);
    for (k, p) in poses.iter().enumerate() {
        write!(out, "{VERTEX_TAG} {} ", ext(k))?;
        write_pose(out, p)?;
        writeln!(out)?;
    }
    let default_info = identity_info();
    for (k, m) in measurements.iter().enumerate() {
        write!(out, "{EDGE_TAG} {} {} ", ext(m.src), ext(m.dst))?;
        write_pose(out, &m.as_pose())?;
        let inf = info.and_then(|v| v.get(k).copied().flatten()).unwrap_or(default_info);
        for v in inf {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes a parsed document back out, preserving ids and information.
pub fn write_document<W: Write>(out: &mut W, doc: &G2oDocument) -> Result<()> {
    write_g2o(out, &doc.poses, &doc.measurements, Some(&doc.ids), Some(&doc.info))
}
