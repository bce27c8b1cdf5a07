//! File formats. Record files are JSON Lines, one scene per line; every
//! float is written as decimal text with 9 significant digits.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::GroundTruthObject;
use crate::postprocess::FinalPrediction;

use super::synth::{Proposal, Scene};

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant decimal digits.
pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_significant(n.as_f64().expect("f64 number"));
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Compact JSON with every float rounded.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
    round_value(&mut v);
    Ok(v.to_string())
}

/// Pretty JSON with every float rounded, newline-terminated.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", to_json_line(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_pretty(value)?).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Detections file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsRecord {
    pub image_id: String,
    pub proposals: Vec<Proposal>,
}

/// Ground-truth file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub objects: Vec<GroundTruthObject>,
}

/// Predictions file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsRecord {
    pub image_id: String,
    pub predictions: Vec<FinalPrediction>,
}

pub fn scenes_to_records(scenes: &[Scene]) -> (Vec<DetectionsRecord>, Vec<GroundTruthRecord>) {
    scenes
        .iter()
        .map(|s| {
            (
                DetectionsRecord {
                    image_id: s.image_id.clone(),
                    proposals: s.proposals.clone(),
                },
                GroundTruthRecord {
                    image_id: s.image_id.clone(),
                    objects: s.gts.clone(),
                },
            )
        })
        .unzip()
}

/// Joins detection and ground-truth records line by line; image ids must
/// agree. Scenes built this way carry no proposal origins.
pub fn records_to_scenes(
    detections: Vec<DetectionsRecord>,
    gts: Vec<GroundTruthRecord>,
    gt_path: &Path,
) -> Result<Vec<Scene>> {
    if detections.len() != gts.len() {
        return Err(Error::Schema {
            path: gt_path.to_path_buf(),
            line: detections.len().min(gts.len()) + 1,
            message: format!(
                "{} detection records vs {} ground-truth records",
                detections.len(),
                gts.len()
            ),
        });
    }
    detections
        .into_iter()
        .zip(gts)
        .enumerate()
        .map(|(i, (d, g))| {
            if d.image_id != g.image_id {
                return Err(Error::Schema {
                    path: gt_path.to_path_buf(),
                    line: i + 1,
                    message: format!("image_id {:?} does not match detections {:?}", g.image_id, d.image_id),
                });
            }
            Ok(Scene {
                image_id: d.image_id,
                gts: g.objects,
                proposals: d.proposals,
                origins: Vec::new(),
            })
        })
        .collect()
}

pub fn read_scenes(detections: &Path, gts: &Path) -> Result<Vec<Scene>> {
    records_to_scenes(read_jsonl(detections)?, read_jsonl(gts)?, gts)
}

pub fn write_scenes(scenes: &[Scene], detections: &Path, gts: &Path) -> Result<()> {
    let (d, g) = scenes_to_records(scenes);
    write_jsonl(detections, &d)?;
    write_jsonl(gts, &g)
}
