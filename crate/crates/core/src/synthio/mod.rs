//! On-disk interchange formats and the seeded synthetic corpus generator.
//!
//! A dataset directory holds a JSON manifest, three line-delimited JSON record files
//! (supports, query proposals, ground truth) and one binary feature-map blob per image that
//! needs dense features. `docs/FORMAT.md` in the repository describes each file byte by byte.

mod dataset;
mod export;
mod fmap;
mod generate;
mod records;

pub use dataset::{load_dataset, Dataset, ImageInfo, LoadStats, QueryImage, QueryProposal};
pub use export::{
    export_run, load_detections, read_prototypes, write_prototypes, ExportPaths, DETECTIONS_FILE,
    REPORT_JSON_FILE, REPORT_TEXT_FILE,
};
pub use fmap::{decode_feature_map, encode_feature_map, read_feature_map, write_feature_map, FMAP_MAGIC, FMAP_VERSION};
pub use generate::{generate_dataset, FloatRange, GenerationSummary, GeneratorConfig, IntRange};
pub use records::{
    decode_feature, encode_feature, GroundTruthRecord, ImageRecord, ImageRole, Manifest, MaskRecord,
    ProposalRecord, SupportRecord,
};

/// Manifest format revision understood by this build.
pub const FORMAT_VERSION: u32 = 1;
/// Proposals scoring below this are discarded at load time.
pub const SCORE_FLOOR: f64 = 0.01;
/// At most this many proposals per image survive loading (highest scores first).
pub const MAX_PROPOSALS_PER_IMAGE: usize = 500;
pub const MANIFEST_FILE: &str = "manifest.json";
