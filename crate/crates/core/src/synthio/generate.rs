//! Seeded synthetic corpora with controlled over-fragmentation.
//!
//! Every query image holds a few non-overlapping objects. Each object yields one whole-object
//! proposal (mask equal to the object mask) and several fragments: sub-rectangles of the
//! object or of an earlier fragment, intersected with that parent's mask, so every fragment is
//! a subset of its object. Fragment scores are drawn below whole-object scores and ordered by
//! fragment area. Background distractors carry features unrelated to any class.
//!
//! Randomness comes from ChaCha8 streams derived from the seed: stream 0 draws the class
//! directions, stream `1 + i` drives query image `i`, and stream `2^32 + k` drives support
//! image `k`. Images are therefore generated independently and in parallel.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fmap::write_feature_map;
use super::records::{
    encode_feature, GroundTruthRecord, ImageRecord, ImageRole, Manifest, MaskRecord, ProposalRecord,
    SupportRecord,
};
use super::{FORMAT_VERSION, MANIFEST_FILE};
use crate::features::{l2_normalize, FeatureMap, FeatureVector};
use crate::geometry::{BinaryMask, BoundingBox};
use crate::{Error, Result};

/// Inclusive integer range, written `lo..hi` or a single value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: u32,
    pub hi: u32,
}

impl IntRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: u32) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        rng.random_range(self.lo..=self.hi)
    }
}

impl fmt::Display for IntRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

impl FromStr for IntRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parse = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("bad range bound `{t}`: {e}"));
        let r = match s.split_once("..") {
            Some((a, b)) => Self::new(parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let v = parse(s)?;
                Self::new(v, v)
            }
        };
        if r.lo > r.hi {
            return Err(format!("empty range `{s}`"));
        }
        Ok(r)
    }
}

/// Closed float range `[lo, hi]`, written `lo..hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloatRange {
    pub lo: f64,
    pub hi: f64,
}

impl FloatRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl fmt::Display for FloatRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

impl FromStr for FloatRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (a, b) = s.split_once("..").ok_or_else(|| format!("expected `lo..hi`, got `{s}`"))?;
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad range bound `{t}`: {e}"));
        let r = Self::new(parse(a)?, parse(b)?);
        if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
            return Err(format!("empty or non-finite range `{s}`"));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Number of query images.
    pub images: usize,
    pub num_classes: u32,
    /// Support annotations per class, one support image each.
    pub shots: u32,
    pub objects_per_image: IntRange,
    pub fragments_per_object: IntRange,
    pub distractors_per_image: IntRange,
    pub feature_dim: usize,
    /// Mixing weight of isotropic noise in every planted feature.
    pub feature_noise: f64,
    pub fragment_score_range: FloatRange,
    pub whole_score_range: FloatRange,
    /// Permit fragment and whole-object score ranges to overlap.
    pub allow_score_overlap: bool,
    /// Probability that a fragment is cut from an earlier fragment instead of the object.
    pub nest_probability: f64,
    /// Square image side in pixels.
    pub image_size: u32,
    /// Square feature grid side in cells.
    pub grid_size: usize,
    /// Write dense feature maps for query images and omit per-proposal features.
    pub query_feature_maps: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            images: 50,
            num_classes: 3,
            shots: 2,
            objects_per_image: IntRange::new(2, 4),
            fragments_per_object: IntRange::new(3, 6),
            distractors_per_image: IntRange::new(0, 2),
            feature_dim: 64,
            feature_noise: 0.15,
            fragment_score_range: FloatRange::new(0.05, 0.45),
            whole_score_range: FloatRange::new(0.55, 0.95),
            allow_score_overlap: false,
            nest_probability: 0.5,
            image_size: 192,
            grid_size: 24,
            query_feature_maps: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.images == 0 || self.num_classes == 0 || self.shots == 0 || self.feature_dim == 0 {
            return bad("images, num_classes, shots and feature_dim must be >= 1".into());
        }
        if self.objects_per_image.lo == 0 {
            return bad("objects_per_image must be >= 1".into());
        }
        for r in [self.objects_per_image, self.fragments_per_object, self.distractors_per_image] {
            if r.lo > r.hi {
                return bad(format!("empty range {r}"));
            }
        }
        if !(0.0..1.0).contains(&self.feature_noise) {
            return bad(format!("feature_noise {} not in [0, 1)", self.feature_noise));
        }
        if !(0.0..=1.0).contains(&self.nest_probability) {
            return bad(format!("nest_probability {} not in [0, 1]", self.nest_probability));
        }
        for r in [self.fragment_score_range, self.whole_score_range] {
            if !(r.lo >= 0.01 && r.hi <= 1.0 && r.lo <= r.hi) {
                return bad(format!("score range {r} must lie within [0.01, 1]"));
            }
        }
        if !self.allow_score_overlap && self.whole_score_range.lo <= self.fragment_score_range.hi {
            return bad(format!(
                "whole_score_range {} must lie strictly above fragment_score_range {}",
                self.whole_score_range, self.fragment_score_range
            ));
        }
        if self.image_size < 32 {
            return bad("image_size must be >= 32".into());
        }
        if self.grid_size == 0 || self.grid_size > self.image_size as usize {
            return bad("grid_size must be in 1..=image_size".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationSummary {
    pub manifest: PathBuf,
    pub images: usize,
    pub objects: usize,
    pub fragments: usize,
    pub distractors: usize,
    pub supports: usize,
}

const PLACEMENT_ATTEMPTS: usize = 200;
const FRAGMENT_ATTEMPTS: usize = 50;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn unit_noise(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn mix(base: &[f64], noise: &[f64], eps: f64) -> FeatureVector<f64> {
    let v = FeatureVector(base.iter().zip(noise).map(|(b, n)| (1.0 - eps) * b + eps * n).collect());
    l2_normalize(&v).unwrap_or(v)
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl Rect {
    fn overlaps(&self, o: &Rect, margin: u32) -> bool {
        self.x0 < o.x1 + margin && o.x0 < self.x1 + margin && self.y0 < o.y1 + margin && o.y0 < self.y1 + margin
    }
}

struct Object {
    class_id: u32,
    mask: BinaryMask,
    rect: Rect,
}

fn raster(size: u32, f: impl Fn(u32, u32) -> bool) -> BinaryMask {
    let px: Vec<bool> = (0..size * size).map(|i| f(i % size, i / size)).collect();
    BinaryMask::from_raster(size, size, &px).expect("square raster")
}

fn place_rect(
    rng: &mut ChaCha8Rng,
    size: u32,
    frac: (f64, f64),
    taken: &[Rect],
    margin: u32,
) -> Option<Rect> {
    let lo = ((size as f64 * frac.0) as u32).max(2);
    let hi = ((size as f64 * frac.1) as u32).max(lo);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let w = rng.random_range(lo..=hi);
        let h = rng.random_range(lo..=hi);
        let x0 = rng.random_range(0..=size - w);
        let y0 = rng.random_range(0..=size - h);
        let r = Rect { x0, y0, x1: x0 + w, y1: y0 + h };
        if taken.iter().all(|t| !t.overlaps(&r, margin)) {
            return Some(r);
        }
    }
    None
}

fn object_in(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, rect: Rect, class_id: u32) -> Object {
    let ellipse = rng.random_bool(0.5);
    let mask = if ellipse {
        let cx = (rect.x0 + rect.x1) as f64 / 2.0;
        let cy = (rect.y0 + rect.y1) as f64 / 2.0;
        let rx = (rect.x1 - rect.x0) as f64 / 2.0;
        let ry = (rect.y1 - rect.y0) as f64 / 2.0;
        raster(cfg.image_size, |x, y| {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            dx * dx + dy * dy <= 1.0
        })
    } else {
        raster(cfg.image_size, |x, y| x >= rect.x0 && x < rect.x1 && y >= rect.y0 && y < rect.y1)
    };
    Object { class_id, mask, rect }
}

fn tight_box(m: &BinaryMask) -> BoundingBox<f64> {
    m.bounding_box().expect("generated masks are non-empty")
}

fn tight_rect(m: &BinaryMask) -> Rect {
    let b = tight_box(m);
    Rect { x0: b.x1 as u32, y0: b.y1 as u32, x1: b.x2 as u32, y1: b.y2 as u32 }
}

/// Sub-rectangle of `parent_rect` with each side 20-60% of the parent, intersected with
/// `parent_mask`.
fn cut_fragment(rng: &mut ChaCha8Rng, size: u32, parent_mask: &BinaryMask, parent_rect: Rect) -> Option<BinaryMask> {
    let pw = parent_rect.x1 - parent_rect.x0;
    let ph = parent_rect.y1 - parent_rect.y0;
    for _ in 0..FRAGMENT_ATTEMPTS {
        let w = ((pw as f64 * rng.random_range(0.2..=0.6)).round() as u32).clamp(1, pw);
        let h = ((ph as f64 * rng.random_range(0.2..=0.6)).round() as u32).clamp(1, ph);
        let x0 = parent_rect.x0 + rng.random_range(0..=pw - w);
        let y0 = parent_rect.y0 + rng.random_range(0..=ph - h);
        let window = raster(size, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h);
        let m = parent_mask.intersection(&window).expect("same dims");
        if !m.is_empty() {
            return Some(m);
        }
    }
    None
}

/// Dense map whose cells mix each object's class direction by the fraction of the cell the
/// object covers, with random background directions elsewhere, plus feature noise.
fn dense_features(
    rng: &mut ChaCha8Rng,
    cfg: &GeneratorConfig,
    objects: &[Object],
    class_dirs: &[Vec<f64>],
) -> FeatureMap<f64> {
    let g = cfg.grid_size;
    let size = cfg.image_size as usize;
    let rasters: Vec<Vec<bool>> = objects.iter().map(|o| o.mask.to_raster()).collect();
    let dim = cfg.feature_dim;
    let mut cells: Vec<Vec<f64>> = Vec::with_capacity(g * g);
    for u in 0..g {
        let (py0, py1) = (u * size / g, ((u + 1) * size / g).max(u * size / g + 1));
        for v in 0..g {
            let (px0, px1) = (v * size / g, ((v + 1) * size / g).max(v * size / g + 1));
            let n_px = ((py1 - py0) * (px1 - px0)) as f64;
            let background = unit_noise(rng, dim);
            let mut base = vec![0.0; dim];
            let mut covered = 0.0;
            for (o, r) in objects.iter().zip(&rasters) {
                let mut hits = 0usize;
                for y in py0..py1 {
                    hits += r[y * size + px0..y * size + px1].iter().filter(|&&p| p).count();
                }
                let frac = hits as f64 / n_px;
                covered += frac;
                for (b, d) in base.iter_mut().zip(&class_dirs[o.class_id as usize]) {
                    *b += frac * d;
                }
            }
            let rest = (1.0 - covered).max(0.0);
            for (b, n) in base.iter_mut().zip(&background) {
                *b += rest * n;
            }
            let noise = unit_noise(rng, dim);
            cells.push(
                base.iter()
                    .zip(&noise)
                    .map(|(b, n)| (1.0 - cfg.feature_noise) * b + cfg.feature_noise * n)
                    .collect(),
            );
        }
    }
    let mut data = vec![0.0; dim * g * g];
    for (k, cell) in cells.iter().enumerate() {
        for (c, &x) in cell.iter().enumerate() {
            data[c * g * g + k] = x as f32 as f64;
        }
    }
    FeatureMap::new(dim, g, g, data, cfg.image_size, cfg.image_size).expect("finite generated features")
}

struct QueryOutput {
    id: String,
    proposals: Vec<ProposalRecord>,
    ground_truth: Vec<GroundTruthRecord>,
    feature_map: Option<FeatureMap<f64>>,
    fragments: usize,
    distractors: usize,
}

fn box_array(b: &BoundingBox<f64>) -> [f64; 4] {
    b.to_array()
}

fn generate_query(cfg: &GeneratorConfig, index: usize, class_dirs: &[Vec<f64>]) -> Result<QueryOutput> {
    let mut rng = stream(cfg.seed, 1 + index as u64);
    let id = format!("q{index:04}");
    let size = cfg.image_size;
    let n_objects = cfg.objects_per_image.sample(&mut rng);
    let mut taken = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..n_objects {
        let rect = place_rect(&mut rng, size, (0.2, 0.45), &taken, 2).ok_or_else(|| {
            Error::Generation(format!("image {id}: no room for {n_objects} objects"))
        })?;
        taken.push(rect);
        let class_id = rng.random_range(0..cfg.num_classes);
        objects.push(object_in(&mut rng, cfg, rect, class_id));
    }

    let feature = |rng: &mut ChaCha8Rng, class_id: u32| {
        let noise = unit_noise(rng, cfg.feature_dim);
        mix(&class_dirs[class_id as usize], &noise, cfg.feature_noise)
    };
    let mut proposals: Vec<(BinaryMask, f64, FeatureVector<f64>)> = Vec::new();
    let mut ground_truth = Vec::new();
    let mut fragments = 0;
    for o in &objects {
        ground_truth.push(GroundTruthRecord {
            image_id: id.clone(),
            class_id: o.class_id,
            bbox: box_array(&tight_box(&o.mask)),
        });
        let f = feature(&mut rng, o.class_id);
        proposals.push((o.mask.clone(), cfg.whole_score_range.sample(&mut rng), f));

        let n_frag = cfg.fragments_per_object.sample(&mut rng) as usize;
        let mut frags: Vec<BinaryMask> = Vec::with_capacity(n_frag);
        for _ in 0..n_frag {
            let nest = !frags.is_empty() && rng.random_bool(cfg.nest_probability);
            let (pm, pr) = if nest {
                let p = &frags[rng.random_range(0..frags.len())];
                (p.clone(), tight_rect(p))
            } else {
                (o.mask.clone(), o.rect)
            };
            let m = cut_fragment(&mut rng, size, &pm, pr)
                .ok_or_else(|| Error::Generation(format!("image {id}: could not cut a fragment")))?;
            frags.push(m);
        }
        let mut scores: Vec<f64> = (0..n_frag).map(|_| cfg.fragment_score_range.sample(&mut rng)).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let mut by_area: Vec<usize> = (0..n_frag).collect();
        by_area.sort_by_key(|&k| std::cmp::Reverse(frags[k].area()));
        let mut assigned = vec![0.0; n_frag];
        for (rank, &k) in by_area.iter().enumerate() {
            assigned[k] = scores[rank];
        }
        for (m, s) in frags.into_iter().zip(assigned) {
            let f = feature(&mut rng, o.class_id);
            proposals.push((m, s, f));
        }
        fragments += n_frag;
    }

    let n_distractors = cfg.distractors_per_image.sample(&mut rng);
    for _ in 0..n_distractors {
        let rect = place_rect(&mut rng, size, (0.05, 0.15), &taken, 1)
            .ok_or_else(|| Error::Generation(format!("image {id}: no room for distractors")))?;
        taken.push(rect);
        let m = raster(size, |x, y| x >= rect.x0 && x < rect.x1 && y >= rect.y0 && y < rect.y1);
        let s = cfg.fragment_score_range.sample(&mut rng);
        let f = FeatureVector(unit_noise(&mut rng, cfg.feature_dim));
        proposals.push((m, s, f));
    }
    proposals.shuffle(&mut rng);

    let feature_map = cfg
        .query_feature_maps
        .then(|| dense_features(&mut rng, cfg, &objects, class_dirs));
    let proposals = proposals
        .into_iter()
        .map(|(m, score, f)| ProposalRecord {
            image_id: id.clone(),
            bbox: box_array(&tight_box(&m)),
            mask: Some(MaskRecord::from(&m)),
            score,
            feature: (!cfg.query_feature_maps).then(|| encode_feature(&f)),
        })
        .collect();
    Ok(QueryOutput {
        id,
        proposals,
        ground_truth,
        feature_map,
        fragments,
        distractors: n_distractors as usize,
    })
}

struct SupportOutput {
    id: String,
    record: SupportRecord,
    feature_map: FeatureMap<f64>,
}

fn generate_support(cfg: &GeneratorConfig, index: usize, class_dirs: &[Vec<f64>]) -> Result<SupportOutput> {
    let mut rng = stream(cfg.seed, (1u64 << 32) + index as u64);
    let class_id = (index / cfg.shots as usize) as u32;
    let shot = index % cfg.shots as usize;
    let id = format!("s{class_id}_{shot}");
    let rect = place_rect(&mut rng, cfg.image_size, (0.3, 0.6), &[], 0)
        .ok_or_else(|| Error::Generation(format!("support {id}: placement failed")))?;
    let object = object_in(&mut rng, cfg, rect, class_id);
    let feature_map = dense_features(&mut rng, cfg, std::slice::from_ref(&object), class_dirs);
    Ok(SupportOutput {
        record: SupportRecord {
            image_id: id.clone(),
            class_id,
            bbox: box_array(&tight_box(&object.mask)),
            mask: Some(MaskRecord::from(&object.mask)),
        },
        id,
        feature_map,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(&r).expect("records serialize"));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes a synthetic dataset into `out_dir` (created if missing). Output bytes depend only
/// on the configuration.
pub fn generate_dataset(cfg: &GeneratorConfig, out_dir: &Path) -> Result<GenerationSummary> {
    cfg.validate()?;
    let mut class_rng = stream(cfg.seed, 0);
    let class_dirs: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| unit_noise(&mut class_rng, cfg.feature_dim))
        .collect();

    let queries: Vec<QueryOutput> = (0..cfg.images)
        .into_par_iter()
        .map(|i| generate_query(cfg, i, &class_dirs))
        .collect::<Result<_>>()?;
    let supports: Vec<SupportOutput> = (0..(cfg.num_classes * cfg.shots) as usize)
        .into_par_iter()
        .map(|i| generate_support(cfg, i, &class_dirs))
        .collect::<Result<_>>()?;

    let feat_dir = out_dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut images = Vec::new();
    for s in &supports {
        let rel = format!("features/{}.fmap", s.id);
        write_feature_map(&out_dir.join(&rel), &s.feature_map)?;
        images.push(ImageRecord {
            id: s.id.clone(),
            width: cfg.image_size,
            height: cfg.image_size,
            role: ImageRole::Support,
            feature_map: Some(rel),
        });
    }
    for q in &queries {
        let rel = q.feature_map.as_ref().map(|fm| {
            let rel = format!("features/{}.fmap", q.id);
            (rel, fm)
        });
        if let Some((rel, fm)) = &rel {
            write_feature_map(&out_dir.join(rel), fm)?;
        }
        images.push(ImageRecord {
            id: q.id.clone(),
            width: cfg.image_size,
            height: cfg.image_size,
            role: ImageRole::Query,
            feature_map: rel.map(|(r, _)| r),
        });
    }

    write_jsonl(&out_dir.join("supports.jsonl"), supports.iter().map(|s| &s.record))?;
    write_jsonl(&out_dir.join("proposals.jsonl"), queries.iter().flat_map(|q| &q.proposals))?;
    write_jsonl(&out_dir.join("ground_truth.jsonl"), queries.iter().flat_map(|q| &q.ground_truth))?;
    let cfg_path = out_dir.join("generator.json");
    let cfg_text = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    std::fs::write(&cfg_path, cfg_text).map_err(|e| Error::io(&cfg_path, e))?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        num_classes: cfg.num_classes,
        shots: cfg.shots,
        images,
        supports: "supports.jsonl".into(),
        proposals: "proposals.jsonl".into(),
        ground_truth: "ground_truth.jsonl".into(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(GenerationSummary {
        manifest: manifest_path,
        images: queries.len(),
        objects: queries.iter().map(|q| q.ground_truth.len()).sum(),
        fragments: queries.iter().map(|q| q.fragments).sum(),
        distractors: queries.iter().map(|q| q.distractors).sum(),
        supports: supports.len(),
    })
}
