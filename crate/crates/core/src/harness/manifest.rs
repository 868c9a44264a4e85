//! Dataset manifest: JSON Lines, one image per line.
//!
//! ```text
//! {"id":"img001","w":500,"h":375,"split":"test","objects":[{"cat":"dog","box":[48,240,195,371],"difficult":false}]}
//! ```

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::eval::GroundTruth;
use crate::geometry::BoundingBox;
use crate::scoring::GroundTruthIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub cat: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default)]
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default)]
    pub objects: Vec<ObjectRecord>,
}

impl ImageRecord {
    /// The image rectangle `(0, 0, w, h)`.
    pub fn frame(&self) -> BoundingBox {
        BoundingBox::new(0.0, 0.0, self.w, self.h).expect("validated image size")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub images: Vec<ImageRecord>,
}

impl Manifest {
    /// Checks unique ids, positive sizes and in-bounds boxes.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.id.as_str()) {
                return Err(format!("duplicate image id {}", img.id));
            }
            if !(img.w > 0.0 && img.h > 0.0 && img.w.is_finite() && img.h.is_finite()) {
                return Err(format!("image {} has invalid size {}x{}", img.id, img.w, img.h));
            }
            if let Some(o) = img.objects.iter().find(|o| !img.frame().contains(&o.bbox)) {
                return Err(format!("image {}: box {} lies outside the image", img.id, o.bbox));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
        let mut images = Vec::new();
        for (k, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DataError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ImageRecord = serde_json::from_str(&line)
                .map_err(|e| DataError::Parse { path: path.to_path_buf(), line: k + 1, msg: e.to_string() })?;
            images.push(rec);
        }
        let m = Self { images };
        m.validate().map_err(|msg| DataError::Invalid { path: path.to_path_buf(), msg })?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for img in &self.images {
            let line = serde_json::to_string(img).expect("manifest records serialize");
            writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
        }
        w.flush().map_err(|e| DataError::io(path, e))
    }

    /// Images tagged with `split`; with no split tags at all, every image.
    pub fn split(&self, split: &str) -> Vec<&ImageRecord> {
        if self.images.iter().all(|i| i.split.is_none()) {
            return self.images.iter().collect();
        }
        self.images.iter().filter(|i| i.split.as_deref() == Some(split)).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn categories(&self) -> BTreeSet<String> {
        self.images.iter().flat_map(|i| i.objects.iter().map(|o| o.cat.clone())).collect()
    }

    /// Ground truth of the given images, in manifest order.
    pub fn ground_truth<'a>(images: impl IntoIterator<Item = &'a ImageRecord>) -> Vec<GroundTruth> {
        images
            .into_iter()
            .flat_map(|img| {
                img.objects.iter().map(move |o| GroundTruth {
                    image: img.id.clone(),
                    category: o.cat.clone(),
                    bbox: o.bbox,
                    difficult: o.difficult,
                })
            })
            .collect()
    }

    pub fn gt_index(&self) -> GroundTruthIndex {
        self.images
            .iter()
            .map(|img| (img.id.clone(), img.objects.iter().map(|o| (o.cat.clone(), o.bbox)).collect()))
            .collect()
    }
}
