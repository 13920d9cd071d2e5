//! File formats: prediction-stream CSV (ingest and export), the model
//! checkpoint, evaluation reports, ablation tables and PGM heatmap dumps.
//!
//! CSV schema (header required, UTF-8, '.' decimal, comma separator):
//! `person_id,t,p_l_x_cm,p_l_y_cm,p_r_x_cm,p_r_y_cm` plus optional
//! ground truth `g_x_cm,g_y_cm`, optional validity label `v` (0/1) and
//! optional per-frame gaze origin `o_x_cm,o_y_cm,o_z_cm`. Unknown
//! columns are rejected. Export uses the same schema with the refined
//! columns `b,p_cal_x_cm,p_cal_y_cm,p_ref_x_cm,p_ref_y_cm` appended.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gaze_refine::geometry::GazeOrigin;
use gaze_refine::pipeline::{AblationRow, RefinedStream};
use gaze_refine::pt::PtModel;
use gaze_refine::raster::{Heatmap, HeatmapSpec};
use gaze_refine::sim::{GazeSample, GazeStream};
use gaze_refine::PoG;
use serde::{Deserialize, Serialize};

/// Data-level failures (exit code 3).
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("duplicate sample index: person {person_id:?}, t {t}")]
    DuplicateIndex { person_id: String, t: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

const REQUIRED_COLUMNS: [&str; 6] =
    ["person_id", "t", "p_l_x_cm", "p_l_y_cm", "p_r_x_cm", "p_r_y_cm"];
const OPTIONAL_COLUMNS: [&str; 6] = ["g_x_cm", "g_y_cm", "v", "o_x_cm", "o_y_cm", "o_z_cm"];

struct Columns {
    /// Column index per known header name.
    index: HashMap<String, usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, DataError> {
        let mut index = HashMap::new();
        for (i, name) in header.iter().enumerate() {
            if !REQUIRED_COLUMNS.contains(&name) && !OPTIONAL_COLUMNS.contains(&name) {
                return Err(DataError::Schema(format!("unknown column {name:?}")));
            }
            if index.insert(name.to_string(), i).is_some() {
                return Err(DataError::Schema(format!("repeated column {name:?}")));
            }
        }
        for required in REQUIRED_COLUMNS {
            if !index.contains_key(required) {
                return Err(DataError::Schema(format!("missing column {required:?}")));
            }
        }
        // the paired optional groups must be complete to be usable
        for group in [&["g_x_cm", "g_y_cm"][..], &["o_x_cm", "o_y_cm", "o_z_cm"][..]] {
            let present = group.iter().filter(|c| index.contains_key(**c)).count();
            if present != 0 && present != group.len() {
                return Err(DataError::Schema(format!(
                    "incomplete column group {group:?}"
                )));
            }
        }
        Ok(Self { index })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.index.get(name).and_then(|&i| record.get(i))
    }
}

fn parse_field<T: std::str::FromStr>(
    columns: &Columns,
    record: &csv::StringRecord,
    name: &str,
    line: u64,
) -> Result<T, DataError> {
    let raw = columns
        .get(record, name)
        .ok_or(DataError::Parse { line, msg: format!("short row, no field {name:?}") })?;
    raw.trim().parse().map_err(|_| DataError::Parse {
        line,
        msg: format!("cannot parse {name:?} from {raw:?}"),
    })
}

/// Reads a prediction CSV into streams grouped by person, samples
/// sorted by `(person_id, t)`.
pub fn read_streams(path: &Path) -> Result<Vec<GazeStream>, DataError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let columns = Columns::from_header(reader.headers().map_err(|e| DataError::Parse {
        line: 1,
        msg: e.to_string(),
    })?)?;
    let has_gt = columns.index.contains_key("g_x_cm");
    let has_v = columns.index.contains_key("v");
    let has_origin = columns.index.contains_key("o_x_cm");

    let mut by_person: HashMap<String, Vec<GazeSample>> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 2; // 1-based, after the header
        let record = record.map_err(|e| DataError::Parse { line, msg: e.to_string() })?;
        let person_id: String = parse_field(&columns, &record, "person_id", line)?;
        let t: u64 = parse_field(&columns, &record, "t", line)?;
        let p_left = PoG::cm(
            parse_field(&columns, &record, "p_l_x_cm", line)?,
            parse_field(&columns, &record, "p_l_y_cm", line)?,
        );
        let p_right = PoG::cm(
            parse_field(&columns, &record, "p_r_x_cm", line)?,
            parse_field(&columns, &record, "p_r_y_cm", line)?,
        );
        let ground_truth = if has_gt {
            Some(PoG::cm(
                parse_field(&columns, &record, "g_x_cm", line)?,
                parse_field(&columns, &record, "g_y_cm", line)?,
            ))
        } else {
            None
        };
        let valid = if has_v {
            let flag: u8 = parse_field(&columns, &record, "v", line)?;
            match flag {
                0 => Some(false),
                1 => Some(true),
                other => {
                    return Err(DataError::Parse {
                        line,
                        msg: format!("validity flag must be 0 or 1, got {other}"),
                    })
                }
            }
        } else {
            None
        };
        let origin = if has_origin {
            Some(GazeOrigin::new(
                parse_field(&columns, &record, "o_x_cm", line)?,
                parse_field(&columns, &record, "o_y_cm", line)?,
                parse_field(&columns, &record, "o_z_cm", line)?,
            ))
        } else {
            None
        };
        if !by_person.contains_key(&person_id) {
            order.push(person_id.clone());
        }
        by_person.entry(person_id).or_default().push(GazeSample {
            t,
            p_left,
            p_right,
            origin,
            ground_truth,
            valid,
        });
    }

    order.sort();
    let mut streams = Vec::with_capacity(order.len());
    for person_id in order {
        let mut samples = by_person.remove(&person_id).expect("collected above");
        samples.sort_by_key(|smp| smp.t);
        for pair in samples.windows(2) {
            if pair[0].t == pair[1].t {
                return Err(DataError::DuplicateIndex { person_id, t: pair[0].t });
            }
        }
        streams.push(GazeStream { person_id, samples });
    }
    Ok(streams)
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips, stable across runs
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Writes streams in the ingest schema (ground truth / validity /
/// origin columns included only when any sample carries them).
pub fn write_streams(path: &Path, streams: &[GazeStream]) -> Result<(), DataError> {
    let any = |f: fn(&GazeSample) -> bool| {
        streams.iter().flat_map(|st| &st.samples).any(f)
    };
    let has_gt = any(|smp| smp.ground_truth.is_some());
    let has_v = any(|smp| smp.valid.is_some());
    let has_origin = any(|smp| smp.origin.is_some());

    let mut out = BufWriter::new(File::create(path)?);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    if has_gt {
        header.extend(["g_x_cm", "g_y_cm"]);
    }
    if has_v {
        header.push("v");
    }
    if has_origin {
        header.extend(["o_x_cm", "o_y_cm", "o_z_cm"]);
    }
    writeln!(out, "{}", header.join(","))?;
    for stream in streams {
        for smp in &stream.samples {
            let mut fields = vec![
                stream.person_id.clone(),
                smp.t.to_string(),
                fmt_f64(smp.p_left.x),
                fmt_f64(smp.p_left.y),
                fmt_f64(smp.p_right.x),
                fmt_f64(smp.p_right.y),
            ];
            if has_gt {
                let g = smp.ground_truth.unwrap_or(PoG::cm(f64::NAN, f64::NAN));
                fields.push(fmt_f64(g.x));
                fields.push(fmt_f64(g.y));
            }
            if has_v {
                fields.push(match smp.valid {
                    Some(true) | None => "1".to_string(),
                    Some(false) => "0".to_string(),
                });
            }
            if has_origin {
                let o = smp.origin.as_ref();
                let (x, y, z) =
                    o.map_or((f64::NAN, f64::NAN, f64::NAN), |o| (o.o[0], o.o[1], o.o[2]));
                fields.push(fmt_f64(x));
                fields.push(fmt_f64(y));
                fields.push(fmt_f64(z));
            }
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes refined streams: the ingest schema plus
/// `b,p_cal_x_cm,p_cal_y_cm,p_ref_x_cm,p_ref_y_cm`.
pub fn write_refined(path: &Path, streams: &[RefinedStream]) -> Result<(), DataError> {
    let has_gt = streams
        .iter()
        .flat_map(|st| &st.samples)
        .any(|smp| smp.ground_truth.is_some());
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec!["person_id", "t", "p_x_cm", "p_y_cm"];
    if has_gt {
        header.extend(["g_x_cm", "g_y_cm"]);
    }
    header.extend(["b", "p_cal_x_cm", "p_cal_y_cm", "p_ref_x_cm", "p_ref_y_cm"]);
    writeln!(out, "{}", header.join(","))?;
    for stream in streams {
        for smp in &stream.samples {
            let mut fields = vec![
                stream.person_id.clone(),
                smp.t.to_string(),
                fmt_f64(smp.p_initial.x),
                fmt_f64(smp.p_initial.y),
            ];
            if has_gt {
                let g = smp.ground_truth.unwrap_or(PoG::cm(f64::NAN, f64::NAN));
                fields.push(fmt_f64(g.x));
                fields.push(fmt_f64(g.y));
            }
            fields.push(if smp.b { "1" } else { "0" }.to_string());
            fields.push(fmt_f64(smp.p_calibrated.x));
            fields.push(fmt_f64(smp.p_calibrated.y));
            fields.push(fmt_f64(smp.p_final.x));
            fields.push(fmt_f64(smp.p_final.y));
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Model checkpoint: layer shapes and row-major parameters, plus the
/// training-split reference mean `g_tr` and the heatmap geometry the
/// model was trained on. Version bumps on any layout change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: PtModel,
    /// Reference mean gaze of the training split, cm.
    pub g_tr: [f64; 2],
    pub heatmap: HeatmapSpec,
    /// Per-epoch mean training loss.
    pub loss_trace: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, ckpt)
        .map_err(|e| DataError::Checkpoint(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let file = File::open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(file)
        .map_err(|e| DataError::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(DataError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    Ok(ckpt)
}

/// Writes an ablation table as CSV.
pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "requested,effective,error_cm,error_px,error_deg")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.requested,
            row.effective,
            fmt_f64(row.refined.cm),
            fmt_f64(row.refined.px),
            fmt_f64(row.refined.degrees)
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Dumps a heatmap as a plain-text PGM (P2, maxval 255, row-major),
/// values scaled so the map peak hits 255.
pub fn write_pgm(path: &Path, map: &Heatmap) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "P2")?;
    writeln!(out, "{} {}", map.w(), map.h())?;
    writeln!(out, "255")?;
    let peak = map.peak().max(f64::MIN_POSITIVE);
    for row in 0..map.h() {
        let line: Vec<String> = (0..map.w())
            .map(|col| format!("{}", (map.get(row, col) / peak * 255.0).round() as u32))
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}
