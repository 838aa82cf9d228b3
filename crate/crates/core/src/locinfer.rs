//! Location inference from map-navigation traffic: motion onset, inverse
//! speed fit, distance from tile bytes, urban/rural nearest centroid and
//! max-correlation path matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Environment;
use crate::trace::{deltas, CounterTrace};
use crate::US_PER_S;

pub const DEFAULT_BASELINE_S: f64 = 10.0;
pub const DEFAULT_K_SIGMA: f64 = 3.0;
const ROLLING_WINDOW_US: u64 = US_PER_S;
const BASELINE_STRIDE_US: u64 = 100_000;
const PERSISTENCE_US: u64 = 2 * US_PER_S;
/// Silence that separates two tile bursts.
const BURST_GAP_US: u64 = 1_000_000;

/// Byte rate (bytes/s) on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub values: Vec<f64>,
    pub period_s: f64,
}

impl RateSeries {
    pub fn new(values: Vec<f64>, period_s: f64) -> Result<RateSeries> {
        if !(period_s > 0.0) {
            return Err(Error::InvalidInput("period must be > 0".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput("rates must be finite and >= 0".into()));
        }
        Ok(RateSeries { values, period_s })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, k: f64) -> RateSeries {
        RateSeries { values: self.values.iter().map(|v| v * k).collect(), period_s: self.period_s }
    }
}

/// Cumulative rx+tx bytes at time `t`, linearly interpolated between samples.
fn cumulative_at(times: &[u64], cum: &[f64], t: u64) -> f64 {
    match times.binary_search(&t) {
        Ok(i) => cum[i],
        Err(0) => cum[0],
        Err(i) if i >= times.len() => cum[cum.len() - 1],
        Err(i) => {
            let (t0, t1) = (times[i - 1] as f64, times[i] as f64);
            cum[i - 1] + (cum[i] - cum[i - 1]) * (t as f64 - t0) / (t1 - t0)
        }
    }
}

/// Resamples a trace's total (rx+tx) byte rate into `period_s` buckets.
/// Counters are linearly interpolated between readings, so a reading gap
/// spreads its bytes evenly. A trailing partial bucket is dropped.
pub fn rate_series(trace: &CounterTrace, period_s: f64) -> Result<RateSeries> {
    if !(period_s > 0.0) {
        return Err(Error::InvalidInput("period must be > 0".into()));
    }
    deltas(trace)?;
    let times: Vec<u64> = trace.samples.iter().map(|s| s.t_us).collect();
    let cum: Vec<f64> = trace.samples.iter().map(|s| (s.rx_bytes + s.tx_bytes) as f64).collect();
    let period_us = period_s * 1e6;
    let span = (trace.end_us() - trace.start_us()) as f64;
    let n = (span / period_us + 1e-9).floor() as usize;
    let start = trace.start_us();
    let mut values = Vec::with_capacity(n);
    let mut prev = cumulative_at(&times, &cum, start);
    for i in 0..n {
        let edge = start + ((i + 1) as f64 * period_us).round() as u64;
        let c = cumulative_at(&times, &cum, edge);
        values.push(((c - prev) / period_s).max(0.0));
        prev = c;
    }
    RateSeries::new(values, period_s)
}

/// Sample Pearson correlation. Series are truncated to the shorter length.
pub fn pearson(s1: &RateSeries, s2: &RateSeries) -> Result<f64> {
    if (s1.period_s - s2.period_s).abs() > 1e-12 * s1.period_s.max(s2.period_s) {
        return Err(Error::InvalidInput(format!("series periods differ ({} s vs {} s)", s1.period_s, s2.period_s)));
    }
    pearson_slices(&s1.values, &s2.values)
}

pub fn pearson_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return Err(Error::InsufficientData(format!("correlation needs >= 2 points, got {n}")));
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("constant series".into()));
    }
    // sqrt of the product keeps the result symmetric in its arguments
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMatch {
    pub label: String,
    pub index: usize,
    /// Correlation with every labeled series; `None` where undefined.
    pub pccs: Vec<Option<f64>>,
}

/// Label of the labeled series with the highest correlation; the first one
/// wins ties. Candidates whose correlation is undefined are skipped.
pub fn classify_path(unlabeled: &RateSeries, labeled: &[(String, RateSeries)]) -> Result<PathMatch> {
    if labeled.is_empty() {
        return Err(Error::InsufficientData("no labeled series".into()));
    }
    let pccs: Vec<Option<f64>> = labeled.iter().map(|(_, s)| pearson(unlabeled, s).ok()).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in pccs.iter().enumerate() {
        if let Some(r) = *r {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
    }
    let (index, _) =
        best.ok_or_else(|| Error::UndefinedCorrelation("no candidate has a defined correlation".into()))?;
    Ok(PathMatch { label: labeled[index].0.clone(), index, pccs })
}

/// Per-interval (end time, rx+tx bytes) with nonzero traffic.
fn byte_events(trace: &CounterTrace) -> Result<Vec<(u64, u64)>> {
    let start = trace.start_us();
    Ok(deltas(trace)?
        .into_iter()
        .filter(|d| d.rx_bytes + d.tx_bytes > 0)
        .map(|d| (d.t_us - start, d.rx_bytes + d.tx_bytes))
        .collect())
}

struct Rolling {
    times: Vec<u64>,
    prefix: Vec<u64>,
}

impl Rolling {
    fn new(events: &[(u64, u64)]) -> Rolling {
        let times = events.iter().map(|e| e.0).collect();
        let mut prefix = vec![0];
        for e in events {
            prefix.push(prefix.last().unwrap() + e.1);
        }
        Rolling { times, prefix }
    }

    /// Bytes in `(t - window, t]`.
    fn bytes_ending(&self, t: u64, window: u64) -> u64 {
        let hi = self.times.partition_point(|&x| x <= t);
        let lo = self.times.partition_point(|&x| x + window <= t);
        self.prefix[hi] - self.prefix[lo.min(hi)]
    }
}

/// First time (seconds from trace start) at which the 1 s rolling byte rate
/// rises above `mean + k_sigma * stdev` of the baseline window and stays
/// above it for the next 2 s. The baseline is sampled on a 100 ms grid.
///
/// A completely silent baseline leaves no noise to reject, so there the
/// first byte after the baseline is the onset.
pub fn detect_motion_onset(trace: &CounterTrace, baseline_window_s: f64, k_sigma: f64) -> Result<Option<f64>> {
    if !(baseline_window_s >= 1.0) {
        return Err(Error::InvalidInput("baseline window must be >= 1 s".into()));
    }
    if trace.duration_s() <= baseline_window_s {
        return Err(Error::InsufficientData(format!(
            "trace of {:.3} s is not longer than the {baseline_window_s} s baseline",
            trace.duration_s()
        )));
    }
    let events = byte_events(trace)?;
    let rolling = Rolling::new(&events);
    let baseline_us = (baseline_window_s * 1e6).round() as u64;
    let times = &rolling.times;

    if rolling.bytes_ending(baseline_us, baseline_us) == 0 {
        return Ok(times.iter().find(|&&t| t > baseline_us).map(|&t| t as f64 / 1e6));
    }

    let base: Vec<f64> = (ROLLING_WINDOW_US..=baseline_us)
        .step_by(BASELINE_STRIDE_US as usize)
        .map(|t| rolling.bytes_ending(t, ROLLING_WINDOW_US) as f64)
        .collect();
    let mean = base.iter().sum::<f64>() / base.len() as f64;
    let var = base.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / base.len() as f64;
    let threshold = mean + k_sigma * var.sqrt();
    let above = |t: u64| rolling.bytes_ending(t, ROLLING_WINDOW_US) as f64 > threshold;

    let end = trace.end_us() - trace.start_us();
    for &t in times.iter() {
        if t <= baseline_us || !above(t) {
            continue;
        }
        let hold_until = t + PERSISTENCE_US;
        if hold_until > end {
            break;
        }
        // the rolling rate only drops when an event leaves the window, so it
        // is enough to check those instants
        let lo = times.partition_point(|&x| x + ROLLING_WINDOW_US <= t);
        let sustained =
            times[lo..].iter().map(|&e| e + ROLLING_WINDOW_US).take_while(|&drop| drop <= hold_until).all(above);
        if sustained {
            return Ok(Some(t as f64 / 1e6));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedUnit {
    /// Seconds per byte.
    PerByte,
    /// Seconds between tiles.
    PerTile,
}

impl SpeedUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeedUnit::PerByte => "per_byte",
            SpeedUnit::PerTile => "per_tile",
        }
    }
}

impl std::str::FromStr for SpeedUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "per_byte" => Ok(SpeedUnit::PerByte),
            "per_tile" => Ok(SpeedUnit::PerTile),
            other => Err(Error::Config(format!("unknown speed unit `{other}`"))),
        }
    }
}

/// `y = a / x` with `x` in mph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedModel {
    pub a: f64,
    pub unit: SpeedUnit,
    pub coeff_variance: f64,
}

impl SpeedModel {
    pub fn predict_interval(&self, speed_mph: f64) -> f64 {
        self.a / speed_mph
    }

    pub fn predict_speed(&self, interval: f64) -> f64 {
        self.a / interval
    }

    pub fn ssr(&self, points: &[(f64, f64)]) -> f64 {
        ssr(self.a, points)
    }
}

fn ssr(a: f64, points: &[(f64, f64)]) -> f64 {
    points.iter().map(|&(x, y)| (y - a / x).powi(2)).sum()
}

/// Least squares for `y = a / x`: `a = sum(y/x) / sum(1/x^2)`. The variance
/// is the residual variance over `sum(1/x^2)`.
pub fn fit_inverse_speed(points: &[(f64, f64)], unit: SpeedUnit) -> Result<SpeedModel> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!("speed fit needs >= 2 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0) || !p.1.is_finite()) {
        return Err(Error::InvalidInput(format!("speed fit point ({}, {}) rejected: speed must be > 0", p.0, p.1)));
    }
    let sxx: f64 = points.iter().map(|p| 1.0 / (p.0 * p.0)).sum();
    let sxy: f64 = points.iter().map(|p| p.1 / p.0).sum();
    let a = sxy / sxx;
    if !(a > 0.0) {
        return Err(Error::InvalidInput(format!("fitted coefficient {a} is not positive")));
    }
    let coeff_variance = ssr(a, points) / (points.len() - 1) as f64 / sxx;
    Ok(SpeedModel { a, unit, coeff_variance })
}

/// Start times (seconds from trace start) of traffic bursts separated by at
/// least one second of silence.
pub fn burst_starts(trace: &CounterTrace) -> Result<Vec<f64>> {
    let mut starts = Vec::new();
    let mut last: Option<u64> = None;
    for (t, _) in byte_events(trace)? {
        if last.is_none_or(|l| t > l + BURST_GAP_US) {
            starts.push(t as f64 / 1e6);
        }
        last = Some(t);
    }
    Ok(starts)
}

/// Mean spacing between tile bursts of an app-level trace.
pub fn mean_tile_interval(trace: &CounterTrace) -> Result<f64> {
    let starts = burst_starts(trace)?;
    if starts.len() < 2 {
        return Err(Error::InsufficientData(format!("{} tile burst(s), need >= 2", starts.len())));
    }
    Ok((starts[starts.len() - 1] - starts[0]) / (starts.len() - 1) as f64)
}

/// Seconds per byte between `from_s` and the end of the trace.
pub fn mean_byte_interval(trace: &CounterTrace, from_s: f64) -> Result<f64> {
    let from_us = (from_s * 1e6).round() as u64;
    let bytes: u64 = byte_events(trace)?.iter().filter(|e| e.0 > from_us).map(|e| e.1).sum();
    if bytes == 0 {
        return Err(Error::InsufficientData("no bytes after the start point".into()));
    }
    Ok((trace.duration_s() - from_s) / bytes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceParams {
    pub tile_bytes: f64,
    pub tile_miles: f64,
    /// Leading stationary stretch used to estimate and remove background
    /// traffic. `None` integrates every byte.
    pub still_prefix_s: Option<f64>,
}

impl Default for DistanceParams {
    fn default() -> Self {
        DistanceParams { tile_bytes: 1000.0, tile_miles: 0.125, still_prefix_s: None }
    }
}

/// Map bytes divided by bytes per tile, times miles per tile.
pub fn estimate_distance(trace: &CounterTrace, params: &DistanceParams) -> Result<f64> {
    if !(params.tile_bytes > 0.0) || !(params.tile_miles > 0.0) {
        return Err(Error::InvalidInput("tile size and tile miles must be > 0".into()));
    }
    let (rx, tx) = trace.total_bytes();
    let mut bytes = (rx + tx) as f64;
    if let Some(prefix) = params.still_prefix_s {
        let dur = trace.duration_s();
        if !(prefix > 0.0) || prefix >= dur {
            return Err(Error::InsufficientData(format!("still prefix {prefix} s does not fit a {dur:.3} s trace")));
        }
        let prefix_us = (prefix * 1e6).round() as u64;
        let background: u64 = byte_events(trace)?.iter().filter(|e| e.0 <= prefix_us).map(|e| e.1).sum();
        let rate = background as f64 / prefix;
        bytes = (bytes - background as f64 - rate * (dur - prefix)).max(0.0);
    }
    Ok(bytes / params.tile_bytes * params.tile_miles)
}

/// Mean download (rx) rate over the trace, bytes/s.
pub fn average_download_rate(trace: &CounterTrace) -> Result<f64> {
    let dur = trace.duration_s();
    if trace.samples.len() < 2 || dur <= 0.0 {
        return Err(Error::EmptyTrace(trace.samples.len()));
    }
    Ok(trace.total_bytes().0 as f64 / dur)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvCentroids {
    pub urban_rate: f64,
    pub rural_rate: f64,
}

impl EnvCentroids {
    /// Class means of labeled average rates.
    pub fn learn(samples: &[(Environment, f64)]) -> Result<EnvCentroids> {
        let mean = |env: Environment| {
            let v: Vec<f64> = samples.iter().filter(|s| s.0 == env).map(|s| s.1).collect();
            if v.is_empty() {
                Err(Error::InsufficientData(format!("no {} training samples", env.as_str())))
            } else {
                Ok(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        let c = EnvCentroids { urban_rate: mean(Environment::Urban)?, rural_rate: mean(Environment::Rural)? };
        if c.urban_rate <= c.rural_rate {
            return Err(Error::InvalidInput(format!(
                "urban centroid {} must exceed rural centroid {}",
                c.urban_rate, c.rural_rate
            )));
        }
        Ok(c)
    }

    /// Nearest centroid; exact ties go to urban.
    pub fn classify_rate(&self, rate: f64) -> Environment {
        if (rate - self.urban_rate).abs() <= (rate - self.rural_rate).abs() {
            Environment::Urban
        } else {
            Environment::Rural
        }
    }
}

pub fn classify_environment(trace: &CounterTrace, centroids: &EnvCentroids) -> Result<Environment> {
    Ok(centroids.classify_rate(average_download_rate(trace)?))
}
