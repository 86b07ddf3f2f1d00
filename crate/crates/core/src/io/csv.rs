//! CSV exports for plotting: trajectories and objective histories.
//!
//! Floats use Rust's shortest round-trip formatting, so re-importing is
//! exact for the stored values.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::graph::Pose;
use crate::so3::{matrix_to_quat, quat_to_matrix, Vec3};
use crate::solver::HistoryEntry;

pub const TRAJECTORY_HEADER: [&str; 8] = ["id", "tx", "ty", "tz", "qx", "qy", "qz", "qw"];
pub const HISTORY_HEADER: [&str; 4] = ["iter", "geodesic", "chordal", "max_control_norm"];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            token: String::new(),
            reason: format!("{other:?}"),
        },
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    let tok = rec.get(k).ok_or_else(|| Error::Parse {
        line,
        token: String::new(),
        reason: format!("missing column {k}"),
    })?;
    tok.trim().parse().map_err(|_| Error::Parse {
        line,
        token: tok.to_string(),
        reason: format!("invalid value in column {k}"),
    })
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(csv_err)?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            token: header.iter().collect::<Vec<_>>().join(","),
            reason: format!("expected header {}", expected.join(",")),
        });
    }
    Ok(())
}

/// `id,tx,ty,tz,qx,qy,qz,qw`, one row per pose.
pub fn export_trajectory_csv<W: Write>(out: W, poses: &[Pose]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for (id, p) in poses.iter().enumerate() {
        let q = matrix_to_quat(&p.r);
        let row = [id as f64, p.t.x, p.t.y, p.t.z, q[0], q[1], q[2], q[3]].map(|v| v.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<Pose>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &TRAJECTORY_HEADER)?;
    let mut poses = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let id: usize = field(&rec, 0)?;
        if id != poses.len() {
            return Err(Error::Parse {
                line: rec.position().map_or(0, |p| p.line() as usize),
                token: id.to_string(),
                reason: format!("expected id {}", poses.len()),
            });
        }
        let t = Vec3::new(field(&rec, 1)?, field(&rec, 2)?, field(&rec, 3)?);
        let q = [field(&rec, 4)?, field(&rec, 5)?, field(&rec, 6)?, field(&rec, 7)?];
        poses.push(Pose::new(t, quat_to_matrix(q)));
    }
    Ok(poses)
}

/// `iter,geodesic,chordal,max_control_norm`.
pub fn export_history_csv<W: Write>(out: W, history: &[HistoryEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER).map_err(csv_err)?;
    for h in history {
        w.write_record([
            h.iter.to_string(),
            h.geodesic.to_string(),
            h.chordal.to_string(),
            h.max_control_norm.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv<R: Read>(input: R) -> Result<Vec<HistoryEntry>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &HISTORY_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(HistoryEntry {
                iter: field(&rec, 0)?,
                geodesic: field(&rec, 1)?,
                chordal: field(&rec, 2)?,
                max_control_norm: field(&rec, 3)?,
            })
        })
        .collect()
}
