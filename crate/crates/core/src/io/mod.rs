//! File formats: g2o benchmark files, the native JSON dataset and CSV exports.

pub mod csv;
pub mod dataset;
pub mod g2o;

pub use self::csv::{
    export_history_csv, export_trajectory_csv, read_history_csv, read_trajectory_csv,
};
pub use self::dataset::{Dataset, GenerateConfig, MeasurementRecord, VertexRecord};
pub use self::g2o::{parse_g2o, write_g2o, G2oDocument, G2oKind, G2oRecord};
