//! File formats: point files with sidecars, CSV tables, SVG scatter plots
//! and JSON checkpoints.

mod checkpoint;
mod points;
mod svg;
mod table;

pub use checkpoint::{Checkpoint, ParamRecord, FORMAT as CHECKPOINT_FORMAT, VERSION as CHECKPOINT_VERSION};
pub use points::{read_point_dir, read_points, read_sidecar, sidecar_path, write_points, Sidecar, POINT_EXT};
pub use svg::scatter;
pub use table::{write_numeric, CsvOut};
