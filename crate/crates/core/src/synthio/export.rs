use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::records::{decode_feature, encode_feature};
use crate::eval::{Detection, EvalReport};
use crate::features::ClassPrototype;
use crate::geometry::BoundingBox;
use crate::postproc::rank_by_score;
use crate::{Error, Result};

pub const DETECTIONS_FILE: &str = "detections.tsv";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";

const DETECTIONS_HEADER: [&str; 7] = ["image_id", "class_id", "score", "x1", "y1", "x2", "y2"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportPaths {
    pub detections: PathBuf,
    pub report_text: PathBuf,
    pub report_json: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    image_id: String,
    class_id: u32,
    score: f64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Keeps the `max_per_image` best detections of each image and writes them, grouped by image
/// in first-appearance order and by descending score within an image, together with the
/// report in text and JSON form.
pub fn export_run(
    dets: &[Detection<f64>],
    report: &EvalReport,
    dir: &Path,
    max_per_image: usize,
) -> Result<ExportPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        let g = groups.entry(&d.image_id).or_insert_with(|| {
            order.push(&d.image_id);
            Vec::new()
        });
        g.push(i);
    }

    let path = dir.join(DETECTIONS_FILE);
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(DETECTIONS_HEADER)
        .map_err(|e| Error::Format(e.to_string()))?;
    for image in order {
        let idx = &groups[image];
        for k in rank_by_score(idx.iter().map(|&i| dets[i].score)).into_iter().take(max_per_image) {
            let d = &dets[idx[k]];
            w.serialize(DetectionRow {
                image_id: d.image_id.clone(),
                class_id: d.class_id,
                score: d.score,
                x1: d.bbox.x1,
                y1: d.bbox.y1,
                x2: d.bbox.x2,
                y2: d.bbox.y2,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

    let report_text = dir.join(REPORT_TEXT_FILE);
    std::fs::write(&report_text, report.to_text()).map_err(|e| Error::io(&report_text, e))?;
    let report_json = dir.join(REPORT_JSON_FILE);
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    std::fs::write(&report_json, json).map_err(|e| Error::io(&report_json, e))?;

    Ok(ExportPaths {
        detections: path,
        report_text,
        report_json,
    })
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::load(path, None, e))?;
    let header = r.headers().map_err(|e| Error::load(path, None, e))?;
    if header.iter().ne(DETECTIONS_HEADER) {
        return Err(Error::load(path, None, "unexpected detections header"));
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<DetectionRow>().enumerate() {
        let row = row.map_err(|e| Error::load(path, Some(i), e))?;
        let bbox = BoundingBox::new(row.x1, row.y1, row.x2, row.y2)
            .map_err(|e| Error::load(path, Some(i), e))?;
        out.push(Detection {
            image_id: row.image_id,
            class_id: row.class_id,
            score: row.score,
            bbox,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrototypeRecord {
    class_id: u32,
    support_count: usize,
    vector: String,
}

/// One JSON line per prototype; vectors are stored as base64 little-endian `f32`.
pub fn write_prototypes(path: &Path, protos: &[ClassPrototype<f64>]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for p in protos {
        let rec = PrototypeRecord {
            class_id: p.class_id,
            support_count: p.support_count,
            vector: encode_feature(&p.vector),
        };
        writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes"))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_prototypes(path: &Path) -> Result<Vec<ClassPrototype<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<ClassPrototype<f64>> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |m: String| Error::load(path, Some(i), m);
        let rec: PrototypeRecord = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        let vector = decode_feature(&rec.vector).map_err(|e| fail(e.to_string()))?;
        let vector = crate::features::l2_normalize(&vector).map_err(|e| fail(e.to_string()))?;
        if out.iter().any(|p| p.class_id == rec.class_id) {
            return Err(fail(format!("duplicate prototype for class {}", rec.class_id)));
        }
        out.push(ClassPrototype {
            class_id: rec.class_id,
            vector,
            support_count: rec.support_count.max(1),
        });
    }
    out.sort_by_key(|p| p.class_id);
    Ok(out)
}
