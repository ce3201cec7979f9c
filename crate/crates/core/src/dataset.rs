//! Recording ingestion and persistence.
//!
//! Recordings are exchanged as UTF-8 CSV with a mandatory header row and the
//! fourteen columns listed in [`COLUMNS`]. Positions are in centimetres in
//! headset coordinates; directions are unitless and need not be normalized.
//! An empty `gt_depth_cm` cell means the depth is unknown (inference data).

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::vec3::Vec3;

pub const COLUMNS: [&str; 14] = [
    "subject_id",
    "frame_index",
    "origin_l_x",
    "origin_l_y",
    "origin_l_z",
    "origin_r_x",
    "origin_r_y",
    "origin_r_z",
    "dir_l_x",
    "dir_l_y",
    "dir_l_z",
    "dir_r_x",
    "dir_r_y",
    "dir_r_z",
];

pub const DEPTH_COLUMN: &str = "gt_depth_cm";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{col}`: cannot parse {value:?} as a number")]
    NonNumericCell {
        row: usize,
        col: String,
        value: String,
    },
    #[error("row {row}: zero-length {eye} direction vector")]
    ZeroDirectionVector { row: usize, eye: &'static str },
    #[error("row {row}: ground-truth depth must be finite and non-negative, got {value}")]
    InvalidDepth { row: usize, value: f64 },
    #[error("row {row}: non-finite value in column `{col}`")]
    NonFinite { row: usize, col: String },
    #[error("subject `{subject}` has frame index {frame} more than once")]
    DuplicateFrame { subject: String, frame: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// One binocular measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub subject_id: String,
    pub frame_index: u64,
    pub origin_l: Vec3,
    pub origin_r: Vec3,
    pub dir_l: Vec3,
    pub dir_r: Vec3,
    /// Ground-truth focal depth in cm, when known.
    pub gt_depth: Option<f64>,
}

/// All samples of one subject, ordered by strictly increasing frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecording {
    pub subject_id: String,
    pub samples: Vec<GazeSample>,
}

impl SubjectRecording {
    /// Sorts `samples` by frame index and checks the recording invariants.
    pub fn new(
        subject_id: impl Into<String>,
        mut samples: Vec<GazeSample>,
    ) -> Result<Self, DatasetError> {
        let subject_id = subject_id.into();
        samples.sort_by_key(|s| s.frame_index);
        for pair in samples.windows(2) {
            if pair[0].frame_index == pair[1].frame_index {
                return Err(DatasetError::DuplicateFrame {
                    subject: subject_id,
                    frame: pair[0].frame_index,
                });
            }
        }
        debug_assert!(samples.iter().all(|s| s.subject_id == subject_id));
        Ok(Self {
            subject_id,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn header_index(headers: &csv::StringRecord) -> Result<Vec<usize>, DatasetError> {
    COLUMNS
        .iter()
        .chain(std::iter::once(&DEPTH_COLUMN))
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| DatasetError::MissingColumn((*name).to_string()))
        })
        .collect()
}

fn parse_cell(
    record: &csv::StringRecord,
    idx: usize,
    row: usize,
    col: &str,
) -> Result<f64, DatasetError> {
    let raw = record.get(idx).unwrap_or("").trim();
    let value: f64 = raw.parse().map_err(|_| DatasetError::NonNumericCell {
        row,
        col: col.to_string(),
        value: raw.to_string(),
    })?;
    if !value.is_finite() {
        return Err(DatasetError::NonFinite {
            row,
            col: col.to_string(),
        });
    }
    Ok(value)
}

/// Parses recordings from any CSV reader. `row` numbers in errors are
/// 1-based data rows (the header is not counted).
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<SubjectRecording>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let idx = header_index(rdr.headers()?)?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<GazeSample>> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let subject_id = record.get(idx[0]).unwrap_or("").trim().to_string();
        let frame_raw = record.get(idx[1]).unwrap_or("").trim();
        let frame_index: u64 = frame_raw
            .parse()
            .map_err(|_| DatasetError::NonNumericCell {
                row,
                col: COLUMNS[1].to_string(),
                value: frame_raw.to_string(),
            })?;
        let mut v = [0.0; 12];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse_cell(&record, idx[k + 2], row, COLUMNS[k + 2])?;
        }
        let dir_l = Vec3::new(v[6], v[7], v[8]);
        let dir_r = Vec3::new(v[9], v[10], v[11]);
        if dir_l.norm() <= 0.0 {
            return Err(DatasetError::ZeroDirectionVector { row, eye: "left" });
        }
        if dir_r.norm() <= 0.0 {
            return Err(DatasetError::ZeroDirectionVector { row, eye: "right" });
        }
        let depth_raw = record.get(idx[14]).unwrap_or("").trim();
        let gt_depth = if depth_raw.is_empty() {
            None
        } else {
            let d = depth_raw
                .parse::<f64>()
                .map_err(|_| DatasetError::NonNumericCell {
                    row,
                    col: DEPTH_COLUMN.to_string(),
                    value: depth_raw.to_string(),
                })?;
            if !d.is_finite() || d < 0.0 {
                return Err(DatasetError::InvalidDepth { row, value: d });
            }
            Some(d)
        };
        if !groups.contains_key(&subject_id) {
            order.push(subject_id.clone());
        }
        groups
            .entry(subject_id.clone())
            .or_default()
            .push(GazeSample {
                subject_id,
                frame_index,
                origin_l: Vec3::new(v[0], v[1], v[2]),
                origin_r: Vec3::new(v[3], v[4], v[5]),
                dir_l,
                dir_r,
                gt_depth,
            });
    }

    order
        .into_iter()
        .map(|id| {
            let samples = groups.remove(&id).unwrap_or_default();
            SubjectRecording::new(id, samples)
        })
        .collect()
}

/// Loads recordings grouped by subject in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<SubjectRecording>, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file))
}

/// Writes recordings; floats use the shortest representation that parses
/// back to the identical value.
pub fn write_csv<W: std::io::Write>(
    recordings: &[SubjectRecording],
    writer: W,
) -> Result<(), DatasetError> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    let mut header: Vec<&str> = COLUMNS.to_vec();
    header.push(DEPTH_COLUMN);
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(15);
    for rec in recordings {
        for s in &rec.samples {
            row.clear();
            row.push(s.subject_id.clone());
            row.push(s.frame_index.to_string());
            for v in [s.origin_l, s.origin_r, s.dir_l, s.dir_r] {
                for c in v.to_array() {
                    row.push(c.to_string());
                }
            }
            row.push(s.gt_depth.map(|d| d.to_string()).unwrap_or_default());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(
    recordings: &[SubjectRecording],
    path: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    write_csv(recordings, std::io::BufWriter::new(file))
}

/// Total number of samples across recordings.
pub fn sample_count(recordings: &[SubjectRecording]) -> usize {
    recordings.iter().map(SubjectRecording::len).sum()
}
