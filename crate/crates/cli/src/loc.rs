//! Map traffic generation and location inference subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use netside::locinfer::{
    average_download_rate, classify_path, detect_motion_onset, estimate_distance, fit_inverse_speed,
    mean_byte_interval, mean_tile_interval, rate_series, DistanceParams, EnvCentroids, RateSeries, SpeedModel,
    SpeedUnit, DEFAULT_BASELINE_S, DEFAULT_K_SIGMA,
};
use netside::synth::{
    gen_map_trace, route_profiles, Direction, Environment, MapModel, NoiseSpec, PathSpec, LOCATIONS, ROUTE_STEPS,
};
use netside::trace::io::{read_trace, write_trace};
use netside::{CounterTrace, Error, Result, Scope};
use serde::Serialize;

use crate::artifact::{open, read_json_result, Ctx};

fn load_trace(path: &Path) -> Result<CounterTrace> {
    read_trace(open(path)?)
}

fn meta_f64(trace: &CounterTrace, key: &str) -> Option<f64> {
    trace.meta.get(key).and_then(|v| v.parse().ok())
}

fn still_prefix(trace: &CounterTrace) -> Option<f64> {
    meta_f64(trace, "still_prefix_s").filter(|p| *p > 0.0)
}

#[derive(Args, Debug, Serialize)]
pub struct GenMap {
    /// Nominal speed, mph.
    #[arg(long, default_value_t = 30.0)]
    pub speed: f64,
    /// Seconds per step.
    #[arg(long, default_value_t = 10.0)]
    pub interval: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: u32,
    /// Preset location name; sets origin, environment and density scale.
    #[arg(long)]
    pub location: Option<String>,
    #[arg(long, default_value = "rural")]
    pub environment: Environment,
    #[arg(long, default_value = "north")]
    pub direction: Direction,
    #[arg(long, default_value_t = 1.0)]
    pub density_scale: f64,
    /// Drive route 1..=6 of the built-in route set (16 steps).
    #[arg(long)]
    pub route: Option<usize>,
    /// Steps route 6 shares with route 1.
    #[arg(long, default_value_t = 12)]
    pub shared: usize,
    /// Speed swing of the route profiles.
    #[arg(long, default_value_t = 0.6)]
    pub amp: f64,
    /// app or device.
    #[arg(long, default_value = "device")]
    pub scope: Scope,
    /// Stationary seconds before motion starts.
    #[arg(long, default_value_t = 0.0)]
    pub prefix: f64,
    #[arg(long, default_value_t = 4.0)]
    pub noise_rate: f64,
    /// Relative per-step distance jitter.
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    #[arg(long, default_value_t = 2.0)]
    pub density_urban: f64,
    #[arg(long, default_value_t = 1.0)]
    pub density_rural: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl GenMap {
    fn path(&self) -> Result<PathSpec> {
        let mut path = PathSpec {
            direction: self.direction,
            environment: self.environment,
            density_scale: self.density_scale,
            ..PathSpec::at_speed(self.speed, self.interval, self.steps)
        };
        if let Some(name) = &self.location {
            let loc = LOCATIONS
                .iter()
                .find(|l| l.name.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Config(format!("unknown location `{name}`")))?;
            path.origin = (loc.lat, loc.lon);
            path.environment = loc.environment;
            path.density_scale = loc.density_scale;
        }
        if let Some(k) = self.route {
            let routes = route_profiles(self.shared, self.amp);
            if !(1..=routes.len()).contains(&k) {
                return Err(Error::Config(format!("--route must be in 1..={}", routes.len())));
            }
            path.speed_profile = routes[k - 1].clone();
            path.n_steps = ROUTE_STEPS as u32;
        }
        Ok(path)
    }

    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let path = self.path()?;
        let model = MapModel {
            jitter: self.jitter,
            density_urban: self.density_urban,
            density_rural: self.density_rural,
            ..MapModel::default()
        };
        let noise = NoiseSpec { rate_pps: self.noise_rate, ..NoiseSpec::default() };
        let mut trace = gen_map_trace(&path, &model, &noise, self.scope, self.prefix, ctx.seed)?;
        if let Some(k) = self.route {
            trace = trace.with_meta("route", format!("route{k}"));
        }
        let out = ctx.out_path(self.out.as_deref(), "trace.csv");
        ctx.write_with(&out, |w, h| write_trace(w, &trace, h))?;
        println!(
            "{} samples, {} mi -> {}",
            trace.samples.len(),
            trace.meta.get("distance_mi").map_or("?", String::as_str),
            out.display()
        );
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct LocMotion {
    #[arg(long)]
    pub trace: PathBuf,
    /// Stationary baseline window, seconds.
    #[arg(long, default_value_t = DEFAULT_BASELINE_S)]
    pub baseline: f64,
    /// Threshold in baseline standard deviations.
    #[arg(long, default_value_t = DEFAULT_K_SIGMA)]
    pub k: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl LocMotion {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let trace = load_trace(&self.trace)?;
        let onset = detect_motion_onset(&trace, self.baseline, self.k)?;
        let cell = onset.map_or(String::new(), |t| format!("{t:.6}"));
        let path = ctx.out_path(self.out.as_deref(), "motion.csv");
        ctx.write_text(&path, &[], &format!("onset_s\n{cell}\n"))?;
        match onset {
            Some(t) => println!("onset {t:.3} s"),
            None => println!("no onset"),
        }
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct LocSpeed {
    /// Fit from labeled traces (their `mean_speed_mph` header).
    #[arg(long, num_args = 1..)]
    pub fit: Vec<PathBuf>,
    /// Fit from a `speed_mph,interval` CSV instead.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// per_tile (app level) or per_byte (device level).
    #[arg(long, default_value = "per_byte")]
    pub unit: SpeedUnit,
    /// Predict with a model written by an earlier fit.
    #[arg(long, requires = "trace")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

fn interval_of(trace: &CounterTrace, unit: SpeedUnit) -> Result<f64> {
    match unit {
        SpeedUnit::PerTile => mean_tile_interval(trace),
        SpeedUnit::PerByte => mean_byte_interval(trace, still_prefix(trace).unwrap_or(0.0)),
    }
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(open(path)?);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["speed_mph", "interval"] {
        return Err(Error::Schema(format!("{}: expected header `speed_mph,interval`", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

impl LocSpeed {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        if let Some(model_path) = &self.model {
            let model: SpeedModel = read_json_result(model_path)?;
            let trace = load_trace(self.trace.as_ref().expect("clap requires trace"))?;
            let interval = interval_of(&trace, model.unit)?;
            let speed = model.predict_speed(interval);
            let path = ctx.out_path(self.out.as_deref(), "speed.csv");
            ctx.write_text(&path, &[], &format!("interval,speed_mph\n{interval:.9},{speed:.6}\n"))?;
            println!("speed {speed:.3} mph");
            return Ok(());
        }
        let points = match &self.points {
            Some(p) => read_points(p)?,
            None if !self.fit.is_empty() => self
                .fit
                .iter()
                .map(|p| {
                    let t = load_trace(p)?;
                    let speed = meta_f64(&t, "mean_speed_mph")
                        .ok_or_else(|| Error::Schema(format!("{}: no mean_speed_mph header", p.display())))?;
                    Ok((speed, interval_of(&t, self.unit)?))
                })
                .collect::<Result<Vec<_>>>()?,
            None => return Err(Error::Config("give --fit traces, --points or --model with --trace".into())),
        };
        let model = fit_inverse_speed(&points, self.unit)?;
        let path = ctx.out_path(self.out.as_deref(), "speed_model.json");
        ctx.write_json(&path, &model)?;
        println!(
            "a = {:.9e} ({}), variance {:.3e}, {} points",
            model.a,
            model.unit.as_str(),
            model.coeff_variance,
            points.len()
        );
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct LocDistance {
    #[arg(long)]
    pub trace: PathBuf,
    /// Map bytes per tile. Defaults to the generator's value for the
    /// trace's scope.
    #[arg(long)]
    pub tile_bytes: Option<f64>,
    #[arg(long, default_value_t = 0.125)]
    pub tile_miles: f64,
    /// Stationary lead-in for background removal; read from the trace header
    /// when omitted.
    #[arg(long)]
    pub still_prefix: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl LocDistance {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let trace = load_trace(&self.trace)?;
        let model = MapModel::default();
        let default_tile = match trace.scope {
            Scope::App => model.tile_bytes,
            Scope::Device => model.device_tile_bytes(),
        };
        let params = DistanceParams {
            tile_bytes: self.tile_bytes.unwrap_or(default_tile),
            tile_miles: self.tile_miles,
            still_prefix_s: self.still_prefix.or_else(|| still_prefix(&trace)),
        };
        let d = estimate_distance(&trace, &params)?;
        let path = ctx.out_path(self.out.as_deref(), "distance.csv");
        ctx.write_text(&path, &[], &format!("distance_mi\n{d:.6}\n"))?;
        println!("distance {d:.3} mi");
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct LocEnv {
    /// Labeled traces (their `environment` header) to learn centroids from.
    #[arg(long, num_args = 1..)]
    pub train: Vec<PathBuf>,
    /// Centroids written by an earlier run.
    #[arg(long, conflicts_with = "train")]
    pub centroids: Option<PathBuf>,
    /// Traces to classify.
    #[arg(long, num_args = 1..)]
    pub classify: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl LocEnv {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let dir = self.out.clone().unwrap_or_else(crate::artifact::out_dir);
        let centroids = if let Some(p) = &self.centroids {
            read_json_result::<EnvCentroids>(p)?
        } else if !self.train.is_empty() {
            let samples = self
                .train
                .iter()
                .map(|p| {
                    let t = load_trace(p)?;
                    let env: Environment = t
                        .meta
                        .get("environment")
                        .ok_or_else(|| Error::Schema(format!("{}: no environment header", p.display())))?
                        .parse()?;
                    Ok((env, average_download_rate(&t)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let c = EnvCentroids::learn(&samples)?;
            ctx.write_json(&dir.join("env_centroids.json"), &c)?;
            println!("centroids: urban {:.3} B/s, rural {:.3} B/s", c.urban_rate, c.rural_rate);
            c
        } else {
            return Err(Error::Config("give --train traces or --centroids".into()));
        };
        if self.classify.is_empty() {
            return Ok(());
        }
        let mut body = String::from("trace,avg_rx_rate,environment\n");
        for p in &self.classify {
            let t = load_trace(p)?;
            let rate = average_download_rate(&t)?;
            let env = centroids.classify_rate(rate);
            let _ = writeln!(body, "{},{rate:.6},{}", p.display(), env.as_str());
        }
        ctx.write_text(&dir.join("env.csv"), &[], &body)?;
        print!("{body}");
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct LocPath {
    /// Directory of labeled route traces. The label is the `route` header,
    /// or the file stem.
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Rate series bucket, seconds.
    #[arg(long, default_value_t = 1.0)]
    pub period: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Labeled series of every `.csv` in `dir`, sorted by file name.
pub fn labeled_series(dir: &Path, period: f64) -> Result<Vec<(String, String, RateSeries)>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| crate::artifact::io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let t = load_trace(p)?;
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let label = t.meta.get("route").cloned().unwrap_or_else(|| stem.clone());
            Ok((stem, label, rate_series(&t, period)?))
        })
        .collect()
}

impl LocPath {
    pub fn run(&self, ctx: &Ctx) -> Result<()> {
        let labeled = labeled_series(&self.labeled, self.period)?;
        if labeled.is_empty() {
            return Err(Error::InsufficientData(format!("no .csv traces in {}", self.labeled.display())));
        }
        let unlabeled = rate_series(&load_trace(&self.unlabeled)?, self.period)?;
        let candidates: Vec<(String, RateSeries)> = labeled.iter().map(|(_, l, s)| (l.clone(), s.clone())).collect();
        let m = classify_path(&unlabeled, &candidates)?;
        let mut body = String::from("file,label,pcc\n");
        for ((file, label, _), r) in labeled.iter().zip(&m.pccs) {
            let cell = r.map_or(String::new(), |r| format!("{r:.6}"));
            let _ = writeln!(body, "{file},{label},{cell}");
        }
        let path = ctx.out_path(self.out.as_deref(), "path.csv");
        ctx.write_text(&path, &[format!("result: label {}", m.label)], &body)?;
        println!("label {}", m.label);
        print!("{body}");
        Ok(())
    }
}
