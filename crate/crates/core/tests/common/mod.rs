//! Builders for small hand-written datasets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fsdiff_core::features::{FeatureMap, FeatureVector};
use fsdiff_core::geometry::BinaryMask;
use fsdiff_core::synthio::{
    encode_feature, write_feature_map, GroundTruthRecord, ImageRecord, ImageRole, Manifest, MaskRecord,
    ProposalRecord, SupportRecord, FORMAT_VERSION, MANIFEST_FILE,
};

pub const SIZE: u32 = 32;
pub const DIM: usize = 4;

pub fn one_hot(c: usize) -> FeatureVector<f64> {
    let mut v = vec![0.0; DIM];
    v[c] = 1.0;
    FeatureVector(v)
}

/// Rectangle mask covering pixels `[x1, x2) x [y1, y2)`.
pub fn rect_mask(x1: u32, y1: u32, x2: u32, y2: u32) -> BinaryMask {
    let px: Vec<bool> = (0..SIZE * SIZE)
        .map(|i| {
            let (x, y) = (i % SIZE, i / SIZE);
            x >= x1 && x < x2 && y >= y1 && y < y2
        })
        .collect();
    BinaryMask::from_raster(SIZE, SIZE, &px).unwrap()
}

pub fn proposal(image: &str, r: [u32; 4], score: f64, feature: Option<&FeatureVector<f64>>) -> ProposalRecord {
    ProposalRecord {
        image_id: image.into(),
        bbox: r.map(f64::from),
        mask: Some(MaskRecord::from(&rect_mask(r[0], r[1], r[2], r[3]))),
        score,
        feature: feature.map(encode_feature),
    }
}

pub fn gt(image: &str, class_id: u32, r: [u32; 4]) -> GroundTruthRecord {
    GroundTruthRecord { image_id: image.into(), class_id, bbox: r.map(f64::from) }
}

pub struct Fixture {
    pub num_classes: u32,
    pub query_ids: Vec<String>,
    pub proposals: Vec<ProposalRecord>,
    pub ground_truth: Vec<GroundTruthRecord>,
    /// Query images that get a dense map filled with the given class direction.
    pub query_maps: Vec<(String, usize)>,
}

impl Fixture {
    pub fn new(num_classes: u32, query_ids: &[&str]) -> Self {
        Self {
            num_classes,
            query_ids: query_ids.iter().map(|s| s.to_string()).collect(),
            proposals: Vec::new(),
            ground_truth: Vec::new(),
            query_maps: Vec::new(),
        }
    }
}

fn constant_map(c: usize) -> FeatureMap<f64> {
    let g = 4;
    let mut data = vec![0.0; DIM * g * g];
    data[c * g * g..(c + 1) * g * g].fill(1.0);
    FeatureMap::new(DIM, g, g, data, SIZE, SIZE).unwrap()
}

fn jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let s: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(path, s).unwrap();
}

/// One single-shot support per class whose map is the class's one-hot direction.
pub fn write(dir: &Path, fixture: &Fixture) -> PathBuf {
    std::fs::create_dir_all(dir.join("features")).unwrap();
    let mut images = Vec::new();
    let mut supports = Vec::new();
    for c in 0..fixture.num_classes {
        let id = format!("s{c}");
        let rel = format!("features/{id}.fmap");
        write_feature_map(&dir.join(&rel), &constant_map(c as usize)).unwrap();
        images.push(ImageRecord { id: id.clone(), width: SIZE, height: SIZE, role: ImageRole::Support, feature_map: Some(rel) });
        supports.push(SupportRecord {
            image_id: id,
            class_id: c,
            bbox: [4.0, 4.0, 20.0, 20.0],
            mask: Some(MaskRecord::from(&rect_mask(4, 4, 20, 20))),
        });
    }
    for q in &fixture.query_ids {
        let rel = fixture.query_maps.iter().find(|(id, _)| id == q).map(|(id, c)| {
            let rel = format!("features/{id}.fmap");
            write_feature_map(&dir.join(&rel), &constant_map(*c)).unwrap();
            rel
        });
        images.push(ImageRecord { id: q.clone(), width: SIZE, height: SIZE, role: ImageRole::Query, feature_map: rel });
    }
    jsonl(&dir.join("supports.jsonl"), &supports);
    jsonl(&dir.join("proposals.jsonl"), &fixture.proposals);
    jsonl(&dir.join("ground_truth.jsonl"), &fixture.ground_truth);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        num_classes: fixture.num_classes,
        shots: 1,
        images,
        supports: "supports.jsonl".into(),
        proposals: "proposals.jsonl".into(),
        ground_truth: "ground_truth.jsonl".into(),
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}
