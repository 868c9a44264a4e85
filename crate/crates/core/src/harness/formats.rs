//! Readers and writers for detections, result tables, models and GP
//! parameters. CSV artifacts carry trailing `config_hash,seed` columns.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::eval::{Detection, EvalResult};
use crate::gp::{GpHyperParams, GpHyperRecord};
use crate::proposals::{csv_error, csv_field};
use crate::structsvm::WeightVector;

/// Identifies the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStamp {
    pub config_hash: String,
    pub seed: u64,
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>, DataError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        }
    }
    let f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    Ok(BufWriter::new(f))
}

/// Writes a CSV given a header and pre-formatted rows, appending the
/// provenance columns.
pub fn write_csv(path: &Path, header: &str, rows: &[String], prov: &RunStamp) -> Result<(), DataError> {
    let mut w = create(path)?;
    let io = |e| DataError::io(path, e);
    writeln!(w, "{header},config_hash,seed").map_err(io)?;
    for r in rows {
        writeln!(w, "{r},{},{}", prov.config_hash, prov.seed).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Detections sorted by image, category, descending score, then box.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        a.image
            .cmp(&b.image)
            .then_with(|| a.category.cmp(&b.category))
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.bbox.lex_cmp(&b.bbox))
    });
}

/// `image_id,category,u1,v1,u2,v2,score`
pub fn write_detections(path: &Path, dets: &[Detection], prov: &RunStamp) -> Result<(), DataError> {
    let rows: Vec<String> = dets
        .iter()
        .map(|d| {
            let [u1, v1, u2, v2] = d.bbox.coords();
            format!("{},{},{u1:?},{v1:?},{u2:?},{v2:?},{:?}", csv_field(&d.image), csv_field(&d.category), d.score)
        })
        .collect();
    write_csv(path, "image_id,category,u1,v1,u2,v2,score", &rows, prov)
}

#[derive(Deserialize)]
struct DetectionRow {
    image_id: String,
    category: String,
    u1: f64,
    v1: f64,
    u2: f64,
    v2: f64,
    score: f64,
}

/// Reads detections; extra columns are ignored.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(|e| csv_error(path, e))? {
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse = |msg: String| DataError::Parse { path: path.to_path_buf(), line, msg };
        let row: DetectionRow = record.deserialize(Some(&headers)).map_err(|e| parse(format!("{:?}", e.kind())))?;
        let bbox = crate::geometry::BoundingBox::new(row.u1, row.v1, row.u2, row.v2).map_err(|e| parse(e.to_string()))?;
        if !row.score.is_finite() {
            return Err(parse("score is not finite".into()));
        }
        out.push(Detection { image: row.image_id, category: row.category, bbox, score: row.score });
    }
    Ok(out)
}

/// `method,iou_threshold,category,ap`, one row per (method, threshold, category)
/// with `category = "mAP"` for the mean.
pub fn ap_rows(method: &str, results: &[EvalResult], with_categories: bool) -> Vec<String> {
    let mut rows = Vec::new();
    for r in results {
        rows.push(format!("{method},{},mAP,{:?}", r.iou_threshold, r.map));
        if with_categories {
            for (cat, c) in &r.per_category {
                rows.push(format!("{method},{},{},{:?}", r.iou_threshold, csv_field(cat), c.ap));
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub w: Vec<f64>,
    pub config_hash: String,
    pub seed: u64,
}

/// `{category: {"w": [...], "config_hash", "seed"}}`
pub type ModelFile = BTreeMap<String, ModelEntry>;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| DataError::Invalid { path: path.to_path_buf(), msg: e.to_string() })?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| DataError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse { path: path.to_path_buf(), line: e.line(), msg: e.to_string() })
}

pub fn read_model(path: &Path) -> Result<BTreeMap<String, WeightVector>, DataError> {
    let file: ModelFile = read_json(path)?;
    Ok(file.into_iter().map(|(k, v)| (k, WeightVector::new(v.w))).collect())
}

/// GP parameters per category. The key `"*"` applies to every category
/// without its own entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GpParams {
    pub by_category: BTreeMap<String, GpHyperParams>,
}

impl GpParams {
    pub fn shared(h: GpHyperParams) -> Self {
        Self { by_category: [("*".to_string(), h)].into_iter().collect() }
    }

    pub fn get(&self, category: &str) -> Option<&GpHyperParams> {
        self.by_category.get(category).or_else(|| self.by_category.get("*"))
    }

    /// Writes `{category: {"beta","m0","eta","lambda","note"}}`.
    pub fn write(&self, path: &Path, note: &str) -> Result<(), DataError> {
        let map: BTreeMap<&String, GpHyperRecord> = self
            .by_category
            .iter()
            .map(|(k, h)| (k, GpHyperRecord { note: note.to_string(), ..GpHyperRecord::from(h) }))
            .collect();
        write_json(path, &map)
    }

    /// Accepts either a per-category map or a single record (shared).
    pub fn read(path: &Path) -> Result<Self, DataError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OnDisk {
            Single(GpHyperRecord),
            Map(BTreeMap<String, GpHyperRecord>),
        }
        let invalid = |e: crate::error::GpError| DataError::Invalid { path: path.to_path_buf(), msg: e.to_string() };
        Ok(match read_json::<OnDisk>(path)? {
            OnDisk::Single(r) => Self::shared(GpHyperParams::try_from(&r).map_err(invalid)?),
            OnDisk::Map(m) => Self {
                by_category: m
                    .iter()
                    .map(|(k, r)| Ok((k.clone(), GpHyperParams::try_from(r).map_err(invalid)?)))
                    .collect::<Result<_, DataError>>()?,
            },
        })
    }
}
