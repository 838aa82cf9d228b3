//! Website fingerprinting subcommands.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use netside::countermeasures::{apply_countermeasure, CountermeasureParams, CountermeasureSpec, Scheme};
use netside::preprocess::{read_features, write_features, FeatureMeta};
use netside::rng;
use netside::svm::{self, cross_validate, cross_validate_features, CvReport};
use netside::synth::{
    assemble_web_trace, gen_web_sessions, observed_frames, round_robin_schedule, NoiseSpec, ProfileSet, FRAME_US,
};
use netside::trace::io::{read_labels, read_trace, write_labels, write_trace};
use netside::trace::{reconstruct_packet_events, slice_labeled_frames};
use netside::webclassify::{
    cascade_classify, ccr_matrix_csv, ccr_matrix_table, one_vs_all, one_vs_one_matrix, stage_report_csv, tree_classify,
    CascadeSelection, Dataset, EvalConfig, MultiReport, TreeSelection,
};
use netside::{Error, FeatureKind, Frame, Result, SvmParams, Transform};
use rayon::prelude::*;
use serde::Serialize;

use crate::artifact::{self, header_value, open, read_text, Ctx};

pub const TRACE_FILE: &str = "trace.csv";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Args, Debug, Clone, Serialize)]
pub struct SvmArgs {
    /// Soft-margin penalty C.
    #[arg(long, default_value_t = 256.0)]
    pub c: f64,
    /// RBF kernel width.
    #[arg(long, default_value_t = 9.54e-7)]
    pub gamma: f64,
    /// onion, tf_cosine or packet_counts.
    #[arg(long, default_value = "packet_counts")]
    pub transform: FeatureKind,
    /// Packets at or below this size are dropped before the transform.
    #[arg(long, default_value_t = 100)]
    pub cutoff: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

impl SvmArgs {
    pub fn params(&self) -> Result<SvmParams> {
        let p = SvmParams { c: self.c, gamma: self.gamma, ..SvmParams::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn eval(&self) -> Result<EvalConfig> {
        Ok(EvalConfig {
            params: self.params()?,
            transform: Transform::new(self.transform, self.cutoff),
            folds: self.folds,
        })
    }
}

/// Loads a `gen-web` directory and cuts it into labeled frames.
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    let trace_path = dir.join(TRACE_FILE);
    let labels_path = dir.join(LABELS_FILE);
    let trace = read_trace(open(&trace_path)?)?;
    let labels = read_labels(open(&labels_path)?)?;
    let events = reconstruct_packet_events(&trace)?;
    Ok(slice_labeled_frames(&events, &labels, FRAME_US))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::from_frames(load_frames(dir)?)
}

fn parse_pair(urls: &Option<String>, available: &[String]) -> Result<(String, String)> {
    match urls {
        Some(s) => {
            let parts: Vec<&str> = s.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [a, b] if a != b => Ok((a.to_string(), b.to_string())),
                _ => Err(Error::Config(format!("--urls expects two distinct comma-separated ids, got `{s}`"))),
            }
        }
        None if available.len() == 2 => Ok((available[0].clone(), available[1].clone())),
        None if available.len() < 2 => {
            Err(Error::InsufficientData(format!("{} URL(s) in the data, need two", available.len())))
        }
        None => Err(Error::Config(format!("{} URLs in the data; pick two with --urls a,b", available.len()))),
    }
}

fn pair_frames(frames: Vec<Frame>, pair: &(String, String)) -> Result<(Vec<Frame>, Vec<String>)> {
    let keep: Vec<Frame> =
        frames.into_iter().filter(|f| f.label.as_deref().is_some_and(|l| l == pair.0 || l == pair.1)).collect();
    let labels: Vec<String> = keep.iter().map(|f| f.label.clone().unwrap_or_default()).collect();
    for u in [&pair.0, &pair.1] {
        if !labels.contains(u) {
            return Err(Error::InsufficientData(format!("no frames for `{u}`")));
        }
    }
    Ok((keep, labels))
}

fn url_ids(frames: &[Frame]) -> Vec<String> {
    frames.iter().filter_map(|f| f.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

fn cv_csv(r: &CvReport) -> String {
    let mut out = String::from("fold,ccr\n");
    for (i, c) in r.fold_ccrs.iter().enumerate() {
        let _ = writeln!(out, "{},{c:.6}", i + 1);
    }
    let _ = writeln!(out, "mean,{:.6}", r.ccr);
    out
}

fn cv_summary(r: &CvReport) -> Vec<String> {
    vec![format!(
        "result: ccr {:.6}, {}/{} correct, classes -1={} +1={}",
        r.ccr, r.correct, r.total, r.classes.0, r.classes.1
    )]
}

#[derive(Args, Debug, Serialize)]
pub struct GenWeb {
    /// TOML file of `[[profile]]` tables and an optional `[noise]` table.
    #[arg(long)]
    pub profiles: PathBuf,
    /// Requests per URL.
    #[arg(long, default_value_t = 150)]
    pub frames: usize,
    /// Countermeasure file (TOML) applied to the sessions before sampling.
    #[arg(long)]
    pub countermeasure: Option<PathBuf>,
    /// Overrides the background packet rate.
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl GenWeb {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let set = ProfileSet::from_toml(&read_text(&self.profiles)?)?;
        let mut noise = set.noise.clone().unwrap_or_default();
        if let Some(r) = self.noise_rate {
            noise.rate_pps = r;
        }
        if self.frames == 0 {
            return Err(Error::Config("--frames must be >= 1".into()));
        }
        let schedule = round_robin_schedule(&set.url_ids(), self.frames, FRAME_US, rng::mix(ctx.seed, 1));
        let mut sessions = gen_web_sessions(&set.profile, &schedule, rng::mix(ctx.seed, 2))?;
        if let Some(p) = &self.countermeasure {
            let spec = CountermeasureSpec::from_toml(&read_text(p)?)?;
            sessions = apply_countermeasure(&sessions, &spec)?;
        }
        let trace = assemble_web_trace(&sessions, &schedule, &noise, rng::mix(ctx.seed, 3))?;
        let dir = self.out.clone().unwrap_or_else(artifact::out_dir);
        ctx.write_with(&dir.join(TRACE_FILE), |w, h| write_trace(w, &trace, h))?;
        ctx.write_with(&dir.join(LABELS_FILE), |w, h| write_labels(w, &schedule, h))?;
        println!("{} requests, {} samples -> {}", schedule.len(), trace.samples.len(), dir.display());
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct Extract {
    /// Directory written by gen-web.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "packet_counts")]
    pub transform: FeatureKind,
    #[arg(long, default_value_t = 100)]
    pub cutoff: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Extract {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let frames = load_frames(&self.data)?;
        let fitted = Transform::new(self.transform, self.cutoff).fit(&frames);
        let rows: Vec<(String, netside::FeatureVector)> =
            frames.iter().map(|f| (f.label.clone().unwrap_or_default(), fitted.apply(f))).collect();
        let meta = FeatureMeta {
            kind: self.transform,
            cutoff_bytes: self.cutoff,
            frame_us: FRAME_US,
            dim: fitted.dim(),
            vocabulary: fitted.vocab.sizes.clone(),
            provenance: Default::default(),
        };
        let path = ctx.out_path(self.out.as_deref(), "features.csv");
        let meta_line = format!("feature_meta: {}", serde_json::to_string(&meta)?);
        ctx.write_with(&path, |w, h| {
            let mut h = h.to_vec();
            h.push(meta_line);
            write_features(w, &rows, &h)
        })?;
        println!("{} frames, dim {} -> {}", rows.len(), meta.dim, path.display());
        Ok(())
    }
}

fn load_features(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let text = read_text(path)?;
    let meta: FeatureMeta = match header_value(&text, "feature_meta") {
        Some(v) => serde_json::from_str(&v)?,
        None => return Err(Error::Schema(format!("{}: missing `# feature_meta:` header", path.display()))),
    };
    let rows = read_features(text.as_bytes(), meta.kind)?;
    Ok((rows.iter().map(|r| r.1.values.clone()).collect(), rows.into_iter().map(|r| r.0).collect()))
}

/// Feature rows, their -1/+1 labels, and the (negative, positive) names.
type BinaryFeatures = (Vec<Vec<f64>>, Vec<i8>, (String, String));

/// Restricts features to a pair of labels and maps them to -1/+1 (sorted).
fn binary_features(x: Vec<Vec<f64>>, labels: Vec<String>, urls: &Option<String>) -> Result<BinaryFeatures> {
    let available: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let pair = parse_pair(urls, &available)?;
    let (neg, pos) = if pair.0 <= pair.1 { pair } else { (pair.1, pair.0) };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (v, l) in x.into_iter().zip(labels) {
        if l == neg {
            xs.push(v);
            ys.push(-1);
        } else if l == pos {
            xs.push(v);
            ys.push(1);
        }
    }
    Ok((xs, ys, (neg, pos)))
}

#[derive(Args, Debug, Serialize)]
pub struct Train {
    /// Feature CSV written by extract.
    #[arg(long)]
    pub features: PathBuf,
    /// Labels to separate, `a,b`. Needed when the file has more than two.
    #[arg(long)]
    pub urls: Option<String>,
    #[arg(long, default_value_t = 256.0)]
    pub c: f64,
    #[arg(long, default_value_t = 9.54e-7)]
    pub gamma: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Train {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let (x, labels) = load_features(&self.features)?;
        let (x, y, (neg, pos)) = binary_features(x, labels, &self.urls)?;
        let params = SvmParams { c: self.c, gamma: self.gamma, ..SvmParams::default() };
        params.validate()?;
        let model = svm::train(&x, &y, &params)?.with_labels(neg, pos);
        let mut correct = 0;
        for (xi, yi) in x.iter().zip(&y) {
            if svm::predict(&model, xi)?.1 == *yi {
                correct += 1;
            }
        }
        let path = ctx.out_path(self.out.as_deref(), "model.json");
        ctx.write_json(&path, &model)?;
        println!(
            "{} support vectors, training accuracy {:.4} ({correct}/{}) -> {}",
            model.support_vectors.len(),
            correct as f64 / x.len() as f64,
            x.len(),
            path.display()
        );
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct Cv {
    /// Directory written by gen-web; the transform is refit in every fold.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub data: Option<PathBuf>,
    /// Feature CSV written by extract.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// The two URLs to separate, `a,b`.
    #[arg(long)]
    pub urls: Option<String>,
    #[command(flatten)]
    pub svm: SvmArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Cv {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let params = self.svm.params()?;
        let report = if let Some(fpath) = &self.features {
            let (x, labels) = load_features(fpath)?;
            let (x, y, classes) = binary_features(x, labels, &self.urls)?;
            let mut r = cross_validate_features(&x, &y, self.svm.folds, &params, ctx.seed)?;
            r.classes = classes;
            r
        } else {
            let dir = self.data.as_ref().expect("clap requires data or features");
            let frames = load_frames(dir)?;
            let pair = parse_pair(&self.urls, &url_ids(&frames))?;
            let (frames, labels) = pair_frames(frames, &pair)?;
            let transform = Transform::new(self.svm.transform, self.svm.cutoff);
            cross_validate(&frames, &labels, self.svm.folds, &params, &transform, ctx.seed)?
        };
        let path = ctx.out_path(self.out.as_deref(), "cv.csv");
        ctx.write_text(&path, &cv_summary(&report), &cv_csv(&report))?;
        println!("ccr {:.6} ({}/{}) -> {}", report.ccr, report.correct, report.total, path.display());
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct Matrix1v1 {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub svm: SvmArgs,
    /// CSV path; a plaintext table is written next to it.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Matrix1v1 {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let ds = load_dataset(&self.data)?;
        let m = one_vs_one_matrix(&ds, &self.svm.eval()?, ctx.seed)?;
        let path = ctx.out_path(self.out.as_deref(), "ccr_matrix.csv");
        ctx.write_text(&path, &[], &ccr_matrix_csv(&m))?;
        let table = ccr_matrix_table(&m);
        ctx.write_text(&path.with_extension("txt"), &[], &table)?;
        print!("{table}");
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct OneVsAll {
    #[arg(long)]
    pub data: PathBuf,
    /// Single target URL; every URL when omitted.
    #[arg(long)]
    pub target: Option<String>,
    #[command(flatten)]
    pub svm: SvmArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl OneVsAll {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let ds = load_dataset(&self.data)?;
        let cfg = self.svm.eval()?;
        let targets: Vec<String> = match &self.target {
            Some(t) => vec![t.clone()],
            None => ds.urls.clone(),
        };
        let results: Vec<Result<CvReport>> = targets.par_iter().map(|t| one_vs_all(&ds, t, &cfg, ctx.seed)).collect();
        let mut body = String::from("url,ccr,correct,total\n");
        for (t, r) in targets.iter().zip(results) {
            let r = r?;
            let _ = writeln!(body, "{t},{:.6},{},{}", r.ccr, r.correct, r.total);
        }
        let path = ctx.out_path(self.out.as_deref(), "one_vs_all.csv");
        ctx.write_text(&path, &[], &body)?;
        print!("{body}");
        Ok(())
    }
}

fn write_multi(ctx: &Ctx, out: Option<&Path>, name: &str, r: &MultiReport) -> Result<()> {
    let path = ctx.out_path(out, name);
    let extra = vec![format!(
        "result: scheme {} selection {} final_ccr {:.6} ({}/{}) chance {:.6}",
        r.scheme, r.selection, r.final_ccr, r.correct, r.total, r.chance
    )];
    ctx.write_text(&path, &extra, &stage_report_csv(r))?;
    println!("final ccr {:.6} ({}/{}), chance {:.6} -> {}", r.final_ccr, r.correct, r.total, r.chance, path.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct Cascade {
    #[arg(long)]
    pub data: PathBuf,
    /// random, greedy, greedy_paired or greedy_similar.
    #[arg(long, default_value = "random")]
    pub selection: CascadeSelection,
    #[command(flatten)]
    pub svm: SvmArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Cascade {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let ds = load_dataset(&self.data)?;
        let r = cascade_classify(&ds, self.selection, &self.svm.eval()?, ctx.seed)?;
        write_multi(ctx, self.out.as_deref(), "cascade.csv", &r)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct Tree {
    #[arg(long)]
    pub data: PathBuf,
    /// random, fixed or greedy.
    #[arg(long, default_value = "greedy")]
    pub selection: TreeSelection,
    #[command(flatten)]
    pub svm: SvmArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Tree {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let ds = load_dataset(&self.data)?;
        let r = tree_classify(&ds, self.selection, &self.svm.eval()?, ctx.seed)?;
        write_multi(ctx, self.out.as_deref(), "tree.csv", &r)
    }
}

/// Binary CV CCR of `pair` after observing `sessions` through the counters.
pub fn observed_ccr(
    sessions: &[Frame],
    schedule: &[(u64, String)],
    noise: &NoiseSpec,
    pair: &(String, String),
    cfg: &EvalConfig,
    seed: u64,
) -> Result<CvReport> {
    let frames = observed_frames(sessions, schedule, noise, rng::mix(seed, 3))?;
    let (frames, labels) = pair_frames(frames, pair)?;
    cross_validate(&frames, &labels, cfg.folds, &cfg.params, &cfg.transform, rng::mix(seed, 4))
}

#[derive(Args, Debug, Serialize)]
pub struct CounterEval {
    /// Profile TOML, as for gen-web.
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long, default_value_t = 150)]
    pub frames: usize,
    /// Comma-separated scheme names, or `all`.
    #[arg(long, default_value = "all")]
    pub schemes: String,
    /// TOML with a `[params]` table overriding the scheme defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// The two URLs to separate; the first two profiles when omitted.
    #[arg(long)]
    pub urls: Option<String>,
    #[command(flatten)]
    pub svm: SvmArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl CounterEval {
    fn schemes(&self) -> Result<Vec<Scheme>> {
        if self.schemes.trim() == "all" {
            return Ok(Scheme::ALL.to_vec());
        }
        self.schemes.split(',').map(|s| s.trim().parse()).collect()
    }

    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let set = ProfileSet::from_toml(&read_text(&self.profiles)?)?;
        let ids = set.url_ids();
        let pair = match &self.urls {
            Some(_) => parse_pair(&self.urls, &ids)?,
            None if ids.len() >= 2 => (ids[0].clone(), ids[1].clone()),
            None => return Err(Error::InsufficientData("need at least two profiles".into())),
        };
        let params = match &self.params {
            Some(p) => CountermeasureParams::from_toml(&read_text(p)?)?,
            None => CountermeasureParams::default(),
        };
        let noise = set.noise.clone().unwrap_or_default();
        let cfg = self.svm.eval()?;
        let schemes = self.schemes()?;
        let schedule = round_robin_schedule(&ids, self.frames, FRAME_US, rng::mix(ctx.seed, 1));
        let sessions = gen_web_sessions(&set.profile, &schedule, rng::mix(ctx.seed, 2))?;

        let mut runs: Vec<Option<Scheme>> = vec![None];
        runs.extend(schemes.iter().copied().map(Some));
        let results: Vec<Result<CvReport>> = runs
            .par_iter()
            .map(|s| {
                let shaped = match s {
                    None => sessions.clone(),
                    Some(s) => {
                        let spec = CountermeasureSpec { scheme: *s, params, seed: rng::mix(ctx.seed, 5) };
                        apply_countermeasure(&sessions, &spec)?
                    }
                };
                observed_ccr(&shaped, &schedule, &noise, &pair, &cfg, ctx.seed)
            })
            .collect();
        let mut body = String::from("scheme,class,ccr,correct,total\n");
        for (s, r) in runs.iter().zip(results) {
            let r = r?;
            let (name, class) = match s {
                None => ("none", "baseline"),
                Some(s) if s.is_padding() => (s.as_str(), "padding"),
                Some(s) => (s.as_str(), "insertion"),
            };
            let _ = writeln!(body, "{name},{class},{:.6},{},{}", r.ccr, r.correct, r.total);
        }
        let extra = vec![format!("countermeasure_params: {}", serde_json::to_string(&params)?)];
        let path = ctx.out_path(self.out.as_deref(), "countermeasures.csv");
        ctx.write_text(&path, &extra, &body)?;
        print!("{body}");
        Ok(())
    }
}

/// `lo:hi` or `lo:hi:step` over log2 exponents.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad range `{s}`"))))
        .collect::<Result<_>>()?;
    let (lo, hi, step) = match parts.as_slice() {
        [lo, hi] => (*lo, *hi, 1.0),
        [lo, hi, step] => (*lo, *hi, *step),
        _ => return Err(Error::Config(format!("range `{s}` must be lo:hi or lo:hi:step"))),
    };
    if step.is_nan() || step <= 0.0 || hi < lo {
        return Err(Error::Config(format!("range `{s}` is empty")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

#[derive(Args, Debug, Serialize)]
pub struct Sweep {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub urls: Option<String>,
    /// log2(C) range, `lo:hi[:step]`.
    #[arg(long, default_value = "-2:16", allow_hyphen_values = true)]
    pub c_range: String,
    /// log2(gamma) range, `lo:hi[:step]`.
    #[arg(long, default_value = "-24:0", allow_hyphen_values = true)]
    pub gamma_range: String,
    #[arg(long, default_value = "packet_counts")]
    pub transform: FeatureKind,
    #[arg(long, default_value_t = 100)]
    pub cutoff: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Sweep {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let cs = parse_range(&self.c_range)?;
        let gs = parse_range(&self.gamma_range)?;
        let frames = load_frames(&self.data)?;
        let pair = parse_pair(&self.urls, &url_ids(&frames))?;
        let (frames, labels) = pair_frames(frames, &pair)?;
        let transform = Transform::new(self.transform, self.cutoff);
        let grid: Vec<(f64, f64)> = cs.iter().flat_map(|&c| gs.iter().map(move |&g| (c, g))).collect();
        let cells: Vec<String> = grid
            .par_iter()
            .map(|&(lc, lg)| {
                let params = SvmParams { c: lc.exp2(), gamma: lg.exp2(), ..SvmParams::default() };
                match cross_validate(&frames, &labels, self.folds, &params, &transform, ctx.seed) {
                    Ok(r) => format!("{lc},{lg},{:.6},ok", r.ccr),
                    Err(Error::NonConvergence { .. }) => format!("{lc},{lg},,nonconverged"),
                    Err(e) => format!("{lc},{lg},,error: {}", e.to_string().replace(',', ";")),
                }
            })
            .collect();
        let mut body = String::from("log2_c,log2_gamma,ccr,status\n");
        for c in cells {
            body.push_str(&c);
            body.push('\n');
        }
        let path = ctx.out_path(self.out.as_deref(), "sweep.csv");
        ctx.write_text(&path, &[], &body)?;
        println!("{} cells -> {}", grid.len(), path.display());
        Ok(())
    }
}
