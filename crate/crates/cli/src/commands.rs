use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use fsdiff_core::eval::EvalReport;
use fsdiff_core::pipeline::{
    prototypes_for, refine_and_evaluate, run_end_to_end, run_query_stage, Method, PipelineConfig, PrototypeSource,
    RunOutput,
};
use fsdiff_core::synthio::{
    export_run, generate_dataset, load_dataset, read_prototypes, write_prototypes, GenerationSummary, GeneratorConfig,
};
use fsdiff_core::DiffusionParams;

use crate::args::{CompareArgs, DiffusionArgs, GenArgs, OutputArgs, PipelineArgs, RunArgs, SweepArgs};
use crate::config::ConfigFile;
use crate::CliError;

pub const DEFAULT_OUT: &str = "fsdiff-out";
pub const PROTOTYPES_FILE: &str = "prototypes.jsonl";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const COMPARE_FILE: &str = "compare.tsv";

const GEN_KEYS: &[&str] = &[
    "seed",
    "images",
    "classes",
    "shots",
    "objects",
    "fragments",
    "distractors",
    "feature-dim",
    "noise",
    "fragment-scores",
    "whole-scores",
    "allow-score-overlap",
    "nest-probability",
    "image-size",
    "grid-size",
    "query-feature-maps",
];
const DIFFUSION_KEYS: &[&str] = &["alpha", "lambda", "tau", "max-steps"];
const PIPELINE_KEYS: &[&str] = &[
    "method",
    "max-output",
    "nms-iou",
    "softnms-sigma",
    "wbf-iou",
    "jobs",
    "prototypes",
    "support-seed",
];
const SWEEP_KEYS: &[&str] = &["lambdas", "alphas", "steps"];

fn load_config(o: &OutputArgs, known: &[&[&str]]) -> Result<(ConfigFile, PathBuf), CliError> {
    let cfg = match &o.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    cfg.check_keys(&known.concat())?;
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((cfg, out))
}

fn usage(e: fsdiff_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn resolve_gen(a: &GenArgs) -> Result<(GeneratorConfig, PathBuf), CliError> {
    let (f, out) = load_config(&a.output, &[GEN_KEYS])?;
    let d = GeneratorConfig::default();
    let cfg = GeneratorConfig {
        seed: f.pick(a.seed, "seed", d.seed)?,
        images: f.pick(a.images, "images", d.images)?,
        num_classes: f.pick(a.classes, "classes", d.num_classes)?,
        shots: f.pick(a.shots, "shots", d.shots)?,
        objects_per_image: f.pick(a.objects, "objects", d.objects_per_image)?,
        fragments_per_object: f.pick(a.fragments, "fragments", d.fragments_per_object)?,
        distractors_per_image: f.pick(a.distractors, "distractors", d.distractors_per_image)?,
        feature_dim: f.pick(a.feature_dim, "feature-dim", d.feature_dim)?,
        feature_noise: f.pick(a.noise, "noise", d.feature_noise)?,
        fragment_score_range: f.pick(a.fragment_scores, "fragment-scores", d.fragment_score_range)?,
        whole_score_range: f.pick(a.whole_scores, "whole-scores", d.whole_score_range)?,
        allow_score_overlap: a.allow_score_overlap
            || f.get("allow-score-overlap")?.unwrap_or(d.allow_score_overlap),
        nest_probability: f.pick(a.nest_probability, "nest-probability", d.nest_probability)?,
        image_size: f.pick(a.image_size, "image-size", d.image_size)?,
        grid_size: f.pick(a.grid_size, "grid-size", d.grid_size)?,
        query_feature_maps: a.query_feature_maps
            || f.get("query-feature-maps")?.unwrap_or(d.query_feature_maps),
    };
    cfg.validate().map_err(usage)?;
    Ok((cfg, out))
}

fn diffusion_params(a: &DiffusionArgs, f: &ConfigFile) -> Result<DiffusionParams<f64>, CliError> {
    let d = DiffusionParams::default();
    Ok(DiffusionParams {
        alpha: f.pick(a.alpha, "alpha", d.alpha)?,
        lambda: f.pick(a.lambda, "lambda", d.lambda)?,
        tau: f.pick(a.tau, "tau", d.tau)?,
        max_steps: f.pick(a.max_steps, "max-steps", d.max_steps)?,
    })
}

fn pipeline_config(
    a: &PipelineArgs,
    method: Option<Method>,
    diffusion: DiffusionParams<f64>,
    f: &ConfigFile,
) -> Result<PipelineConfig, CliError> {
    let d = PipelineConfig::default();
    let prototypes = match a.prototypes.clone().or(f.get::<PathBuf>("prototypes")?) {
        Some(p) => PrototypeSource::Given(read_prototypes(&p)?),
        None => PrototypeSource::Supports,
    };
    Ok(PipelineConfig {
        diffusion,
        method: f.pick(method, "method", d.method)?,
        max_output: f.pick(a.max_output, "max-output", d.max_output)?,
        nms_iou: f.pick(a.nms_iou, "nms-iou", d.nms_iou)?,
        soft_nms_sigma: f.pick(a.softnms_sigma, "softnms-sigma", d.soft_nms_sigma)?,
        wbf_iou: f.pick(a.wbf_iou, "wbf-iou", d.wbf_iou)?,
        jobs: f.pick(a.jobs, "jobs", d.jobs)?,
        prototypes,
        support_seed: a.support_seed.or(f.get("support-seed")?),
    })
}

pub fn resolve_run(a: &RunArgs) -> Result<(PipelineConfig, PathBuf), CliError> {
    let (f, out) = load_config(&a.output, &[DIFFUSION_KEYS, PIPELINE_KEYS])?;
    let cfg = pipeline_config(&a.pipeline, a.method, diffusion_params(&a.diffusion, &f)?, &f)?;
    cfg.validate().map_err(usage)?;
    Ok((cfg, out))
}

pub fn resolve_compare(a: &CompareArgs) -> Result<(PipelineConfig, PathBuf), CliError> {
    let (f, out) = load_config(&a.output, &[DIFFUSION_KEYS, PIPELINE_KEYS])?;
    let cfg = pipeline_config(&a.pipeline, None, diffusion_params(&a.diffusion, &f)?, &f)?;
    cfg.validate().map_err(usage)?;
    Ok((cfg, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub steps: Vec<usize>,
}

impl Default for SweepGrid {
    /// The lambda-by-alpha grid at 30 steps.
    fn default() -> Self {
        Self {
            lambdas: vec![0.3, 0.5, 1.0],
            alphas: vec![0.0, 0.3, 0.5],
            steps: vec![30],
        }
    }
}

impl SweepGrid {
    /// Drops repeated values, keeping the first occurrence.
    pub fn dedup(&mut self) {
        fn keep_first<T: PartialEq + Copy>(v: &mut Vec<T>) {
            let mut seen = Vec::new();
            v.retain(|x| {
                let new = !seen.contains(x);
                seen.push(*x);
                new
            });
        }
        keep_first(&mut self.lambdas);
        keep_first(&mut self.alphas);
        keep_first(&mut self.steps);
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.lambdas.iter().flat_map(move |&l| {
            self.alphas
                .iter()
                .flat_map(move |&a| self.steps.iter().map(move |&s| (l, a, s)))
        })
    }
}

fn list<T>(f: &ConfigFile, flag: &[T], key: &str, default: Vec<T>) -> Result<Vec<T>, CliError>
where
    T: FromStr + Clone,
    T::Err: std::fmt::Display,
{
    if !flag.is_empty() {
        return Ok(flag.to_vec());
    }
    match f.get::<String>(key)? {
        None => Ok(default),
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|e| CliError::Usage(format!("bad `{key}` entry `{t}`: {e}")))
            })
            .collect(),
    }
}

pub fn resolve_sweep(a: &SweepArgs) -> Result<(SweepGrid, PipelineConfig, PathBuf), CliError> {
    let keys = [&["tau"][..], PIPELINE_KEYS, SWEEP_KEYS];
    let (f, out) = load_config(&a.output, &keys)?;
    let d = SweepGrid::default();
    let mut grid = SweepGrid {
        lambdas: list(&f, &a.lambdas, "lambdas", d.lambdas)?,
        alphas: list(&f, &a.alphas, "alphas", d.alphas)?,
        steps: list(&f, &a.steps, "steps", d.steps)?,
    };
    grid.dedup();
    if grid.lambdas.is_empty() || grid.alphas.is_empty() || grid.steps.is_empty() {
        return Err(CliError::Usage("sweep grids must be nonempty".into()));
    }
    let diffusion = DiffusionParams {
        tau: f.pick(a.tau, "tau", DiffusionParams::default().tau)?,
        ..DiffusionParams::default()
    };
    let cfg = pipeline_config(&a.pipeline, a.method, diffusion, &f)?;
    if !matches!(cfg.method, Method::Diffusion | Method::DiffusionNms) {
        return Err(CliError::Usage(format!("sweep needs a diffusion method, got `{}`", cfg.method)));
    }
    cfg.validate().map_err(usage)?;
    Ok((grid, cfg, out))
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Core(fsdiff_core::Error::Io { path: out.to_path_buf(), source: e }))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Core(fsdiff_core::Error::Io { path: path.to_path_buf(), source: e }))
}

pub fn cmd_gen(cfg: &GeneratorConfig, out: &Path) -> Result<GenerationSummary, CliError> {
    Ok(generate_dataset(cfg, out)?)
}

/// Runs the pipeline and writes detections, the report and the prototypes into `out`.
pub fn cmd_run(manifest: &Path, cfg: &PipelineConfig, out: &Path) -> Result<RunOutput, CliError> {
    let run = run_end_to_end(manifest, cfg)?;
    export_run(&run.detections, &run.report, out, cfg.max_output)?;
    write_prototypes(&out.join(PROTOTYPES_FILE), &run.prototypes)?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub alpha: f64,
    pub max_steps: usize,
    /// `Err` holds the reason the cell failed.
    pub result: Result<EvalReport, String>,
    pub ms_per_image: f64,
}

/// Evaluates every grid cell on one set of matched proposals. A failing cell is recorded and
/// the sweep moves on.
pub fn cmd_sweep(
    manifest: &Path,
    grid: &SweepGrid,
    base: &PipelineConfig,
    out: &Path,
    timing: bool,
) -> Result<Vec<SweepRow>, CliError> {
    let ds = load_dataset(manifest).map_err(|e| e.in_stage("load"))?;
    let protos = prototypes_for(&ds, base)?;
    let matched = run_query_stage(&ds, &protos, base.jobs).map_err(|e| e.in_stage("query"))?;
    let n_images = matched.len().max(1) as f64;
    let rows: Vec<SweepRow> = grid
        .cells()
        .map(|(lambda, alpha, max_steps)| {
            let cfg = PipelineConfig {
                diffusion: DiffusionParams { alpha, lambda, max_steps, ..base.diffusion },
                ..base.clone()
            };
            let t0 = Instant::now();
            let result = refine_and_evaluate(&ds, &matched, &cfg)
                .map(|(_, r)| r)
                .map_err(|e| e.to_string());
            if let Err(e) = &result {
                log::warn!("sweep cell lambda={lambda} alpha={alpha} steps={max_steps} failed: {e}");
            }
            SweepRow {
                lambda,
                alpha,
                max_steps,
                result,
                ms_per_image: t0.elapsed().as_secs_f64() * 1e3 / n_images,
            }
        })
        .collect();
    create_dir(out)?;
    write_file(&out.join(SWEEP_FILE), &sweep_table(&rows, timing))?;
    Ok(rows)
}

fn one_line(s: &str) -> String {
    s.replace(['\t', '\n'], " ")
}

/// Tab-separated table with a header row.
pub fn sweep_table(rows: &[SweepRow], timing: bool) -> String {
    let mut s = String::from("lambda\talpha\tmax_steps\tnAP\tnAP50\tnAP75\tms_per_image\tstatus\n");
    for r in rows {
        let ms = if timing { format!("{:.3}", r.ms_per_image) } else { "-".into() };
        let _ = match &r.result {
            Ok(rep) => writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{ms}\tok",
                r.lambda, r.alpha, r.max_steps, rep.n_ap, rep.n_ap50, rep.n_ap75
            ),
            Err(e) => writeln!(
                s,
                "{}\t{}\t{}\t-\t-\t-\t{ms}\tfailed: {}",
                r.lambda,
                r.alpha,
                r.max_steps,
                one_line(e)
            ),
        };
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompareStatus {
    Ok(EvalReport),
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: Method,
    pub status: CompareStatus,
}

impl CompareRow {
    pub fn report(&self) -> Option<&EvalReport> {
        match &self.status {
            CompareStatus::Ok(r) => Some(r),
            _ => None,
        }
    }
}

/// Runs every method on the same matched proposals, in the fixed method order.
pub fn cmd_compare(manifest: &Path, base: &PipelineConfig, out: &Path) -> Result<Vec<CompareRow>, CliError> {
    let ds = load_dataset(manifest).map_err(|e| e.in_stage("load"))?;
    let protos = prototypes_for(&ds, base)?;
    let matched = run_query_stage(&ds, &protos, base.jobs).map_err(|e| e.in_stage("query"))?;
    let rows: Vec<CompareRow> = Method::ALL
        .into_iter()
        .map(|method| {
            let status = if method == Method::SoftMerge && !ds.masks_complete() {
                let why = "some proposals have no mask".to_string();
                eprintln!("note: skipping {method}: {why}");
                CompareStatus::Skipped(why)
            } else {
                match refine_and_evaluate(&ds, &matched, &PipelineConfig { method, ..base.clone() }) {
                    Ok((_, r)) => CompareStatus::Ok(r),
                    Err(e) => CompareStatus::Failed(e.to_string()),
                }
            };
            CompareRow { method, status }
        })
        .collect();
    create_dir(out)?;
    write_file(&out.join(COMPARE_FILE), &compare_table(&rows))?;
    Ok(rows)
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::from("method\tnAP\tnAP50\tnAP75\tstatus\n");
    for r in rows {
        let _ = match &r.status {
            CompareStatus::Ok(rep) => writeln!(s, "{}\t{}\t{}\t{}\tok", r.method, rep.n_ap, rep.n_ap50, rep.n_ap75),
            CompareStatus::Skipped(why) => writeln!(s, "{}\t-\t-\t-\tskipped: {}", r.method, one_line(why)),
            CompareStatus::Failed(why) => writeln!(s, "{}\t-\t-\t-\tfailed: {}", r.method, one_line(why)),
        };
    }
    s
}
