//! Map-tile traffic under emulated motion.
//!
//! Motion is continuous within each step of a [`PathSpec`]. A tile is fetched
//! every `tile_miles` travelled (the first one as soon as motion starts), as a
//! short burst of packets. At device level the navigation app additionally
//! streams companion data proportional to distance, sized so the byte
//! inter-arrival time follows `device_byte_coeff / speed`, and background
//! noise is mixed in.

use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locinfer::{rate_series, RateSeries};
use crate::rng::{self, Rng};
use crate::synth::NoiseSpec;
use crate::trace::{CounterTrace, PacketEvent, SamplingSpec, Scope};

pub type Level = Scope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    NorthEast,
    East,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::North, Direction::NorthEast, Direction::East];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::NorthEast => "northeast",
            Direction::East => "east",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "north" => Ok(Direction::North),
            "northeast" => Ok(Direction::NorthEast),
            "east" => Ok(Direction::East),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Urban,
    Rural,
}

impl Environment {
    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Urban => "urban",
            Environment::Rural => "rural",
        }
    }
}

impl std::str::FromStr for Environment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "urban" => Ok(Environment::Urban),
            "rural" => Ok(Environment::Rural),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

/// An emulated traversal: `n_steps` steps of `step_distance_mi` every
/// `step_interval_s` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSpec {
    /// (latitude, longitude) in degrees.
    pub origin: (f64, f64),
    pub direction: Direction,
    pub n_steps: u32,
    pub step_interval_s: f64,
    pub step_distance_mi: f64,
    pub environment: Environment,
    /// Per-location multiplier on the environment's tile density.
    pub density_scale: f64,
    /// Per-step distance multipliers, cycled. Empty means constant speed.
    pub speed_profile: Vec<f64>,
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec {
            origin: (42.35, -71.11),
            direction: Direction::North,
            n_steps: 10,
            step_interval_s: 5.0,
            step_distance_mi: 30.0 * 5.0 / 3600.0,
            environment: Environment::Urban,
            density_scale: 1.0,
            speed_profile: Vec::new(),
        }
    }
}

impl PathSpec {
    /// Constant-speed path whose steps are sized to `speed_mph`.
    pub fn at_speed(speed_mph: f64, step_interval_s: f64, n_steps: u32) -> Self {
        PathSpec {
            n_steps,
            step_interval_s,
            step_distance_mi: speed_mph * step_interval_s / 3600.0,
            ..Default::default()
        }
    }

    /// Nominal speed ignoring the speed profile.
    pub fn speed_mph(&self) -> f64 {
        self.step_distance_mi / self.step_interval_s * 3600.0
    }

    pub fn motion_duration_s(&self) -> f64 {
        self.n_steps as f64 * self.step_interval_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        if !(self.step_interval_s > 0.0) {
            return Err(Error::Config("step_interval_s must be > 0".into()));
        }
        if !(self.step_distance_mi >= 0.0) || !(self.density_scale > 0.0) {
            return Err(Error::Config("step distance must be >= 0 and density scale > 0".into()));
        }
        if self.speed_profile.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::Config("speed profile multipliers must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapModel {
    /// Mean bytes of one tile as seen by the map app.
    pub tile_bytes: f64,
    /// Edge length of a tile.
    pub tile_miles: f64,
    pub density_urban: f64,
    pub density_rural: f64,
    pub packet_size_bytes: u32,
    pub burst_ms: f64,
    /// Relative noise on tile sizes, tile timing and per-step speed.
    pub jitter: f64,
    /// Device-level seconds-per-byte times mph.
    pub device_byte_coeff: f64,
}

impl Default for MapModel {
    fn default() -> Self {
        MapModel {
            tile_bytes: 1000.0,
            tile_miles: 0.125,
            density_urban: 2.0,
            density_rural: 1.0,
            packet_size_bytes: 500,
            burst_ms: 200.0,
            jitter: 0.05,
            device_byte_coeff: 0.0071617,
        }
    }
}

impl MapModel {
    pub fn noiseless() -> Self {
        MapModel { jitter: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tile_bytes > 0.0) || !(self.tile_miles > 0.0) {
            return Err(Error::Config("tile_bytes and tile_miles must be > 0".into()));
        }
        if !(self.density_urban > self.density_rural) || !(self.density_rural > 0.0) {
            return Err(Error::Config("need density_urban > density_rural > 0".into()));
        }
        if self.packet_size_bytes == 0 || !(self.device_byte_coeff > 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::Config("packet size, device coefficient must be > 0, jitter >= 0".into()));
        }
        Ok(())
    }

    pub fn density(&self, env: Environment) -> f64 {
        match env {
            Environment::Urban => self.density_urban,
            Environment::Rural => self.density_rural,
        }
    }

    /// Tile inter-arrival coefficient: seconds per tile times mph.
    pub fn app_tile_coeff(&self) -> f64 {
        self.tile_miles * 3600.0
    }

    /// Device-level bytes per app-level tile byte.
    pub fn device_gain(&self) -> f64 {
        self.app_tile_coeff() / (self.tile_bytes * self.device_byte_coeff)
    }

    /// Device-level map bytes per tile at density 1.
    pub fn device_tile_bytes(&self) -> f64 {
        self.tile_bytes * self.device_gain().max(1.0)
    }
}

/// Generated map traffic with its ground truth.
#[derive(Debug, Clone)]
pub struct MapEvents {
    /// All events, sorted by time.
    pub events: Vec<PacketEvent>,
    pub map_bytes: u64,
    pub noise_bytes: u64,
    pub tile_times_us: Vec<u64>,
    pub distance_mi: f64,
    pub motion_start_us: u64,
    pub end_us: u64,
}

struct Segment {
    t0_s: f64,
    dur_s: f64,
    d0: f64,
    dist: f64,
}

struct Motion {
    segs: Vec<Segment>,
    total: f64,
}

impl Motion {
    fn new(path: &PathSpec, jitter: f64, rng: &mut Rng) -> Motion {
        let mut segs = Vec::with_capacity(path.n_steps as usize);
        let (mut t, mut d) = (0.0, 0.0);
        for i in 0..path.n_steps as usize {
            let mult =
                if path.speed_profile.is_empty() { 1.0 } else { path.speed_profile[i % path.speed_profile.len()] };
            let z: f64 = StandardNormal.sample(rng);
            let dist = path.step_distance_mi * mult * (1.0 + jitter * z).max(0.0);
            segs.push(Segment { t0_s: t, dur_s: path.step_interval_s, d0: d, dist });
            t += path.step_interval_s;
            d += dist;
        }
        Motion { segs, total: d }
    }

    fn seg_at(&self, d: f64) -> &Segment {
        self.segs
            .iter()
            .find(|s| s.dist > 0.0 && d < s.d0 + s.dist)
            .or_else(|| self.segs.iter().rev().find(|s| s.dist > 0.0))
            .expect("moving segment")
    }

    /// Seconds since motion start at which distance `d` is reached.
    fn time_at(&self, d: f64) -> f64 {
        let s = self.seg_at(d);
        s.t0_s + (d - s.d0) / s.dist * s.dur_s
    }

    fn speed_at(&self, d: f64) -> f64 {
        let s = self.seg_at(d);
        s.dist / s.dur_s * 3600.0
    }
}

fn push_burst(t_us: u64, bytes: u64, packet: u64, burst_us: f64, out: &mut Vec<PacketEvent>) {
    let n = bytes.div_ceil(packet).max(1);
    for i in 0..n {
        let size = if i + 1 == n { bytes - packet * (n - 1) } else { packet };
        let t = t_us + (i as f64 * burst_us / n as f64) as u64;
        out.push(PacketEvent::incoming(t, size));
    }
}

/// Event-level map traffic for one traversal.
pub fn gen_map_events(
    path: &PathSpec,
    model: &MapModel,
    noise: &NoiseSpec,
    level: Level,
    still_prefix_s: f64,
    seed: u64,
) -> Result<MapEvents> {
    path.validate()?;
    model.validate()?;
    noise.validate()?;
    if !(still_prefix_s >= 0.0) {
        return Err(Error::Config("still prefix must be >= 0".into()));
    }
    let mut rng = rng::seeded(seed);
    let motion = Motion::new(path, model.jitter, &mut rng);
    let start_s = still_prefix_s;
    let motion_start_us = (start_s * 1e6).round() as u64;
    let density = model.density(path.environment) * path.density_scale;
    let packet = model.packet_size_bytes as u64;
    let burst_us = model.burst_ms * 1e3;

    let mut map_events = Vec::new();
    let mut tile_times_us = Vec::new();
    let mut k = 0u64;
    while (k as f64) * model.tile_miles < motion.total {
        let d = k as f64 * model.tile_miles;
        let mut t = motion.time_at(d);
        if k > 0 && model.jitter > 0.0 {
            let local = model.tile_miles / motion.speed_at(d) * 3600.0;
            let z: f64 = StandardNormal.sample(&mut rng);
            t = (t + model.jitter * local * z).max(0.0);
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        let size = (model.tile_bytes * density * (1.0 + model.jitter * z)).round().max(1.0) as u64;
        let t_us = ((start_s + t) * 1e6).round() as u64;
        tile_times_us.push(t_us);
        push_burst(t_us, size, packet, burst_us, &mut map_events);
        k += 1;
    }

    if level == Scope::Device && motion.total > 0.0 {
        let gain = model.device_gain();
        if gain > 1.0 {
            let bytes_per_mile = (gain - 1.0) * model.tile_bytes * density / model.tile_miles;
            let per_mile = bytes_per_mile / packet as f64;
            let gap = Exp::new(per_mile).expect("positive rate");
            let mut d = 0.0;
            loop {
                d += gap.sample(&mut rng);
                if d >= motion.total {
                    break;
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                let size = (packet as f64 * (1.0 + model.jitter * z)).round().max(1.0) as u64;
                let t_us = ((start_s + motion.time_at(d)) * 1e6).round() as u64;
                map_events.push(PacketEvent::incoming(t_us, size));
            }
        }
    }

    let motion_end_us = ((start_s + path.motion_duration_s()) * 1e6).round() as u64;
    let last_map = map_events.iter().map(|e| e.t_us + 1).max().unwrap_or(0);
    let end_us = motion_end_us.max(last_map);

    let map_bytes: u64 = map_events.iter().map(|e| e.magnitude()).sum();
    let mut events = map_events;
    let mut noise_bytes = 0;
    if level == Scope::Device {
        let ns = noise.events(0, end_us, &mut rng);
        noise_bytes = ns.iter().map(|e| e.magnitude()).sum();
        events.extend(ns);
    }
    events.sort_by_key(|e| e.t_us);

    Ok(MapEvents { events, map_bytes, noise_bytes, tile_times_us, distance_mi: motion.total, motion_start_us, end_us })
}

/// Counter trace for one traversal, sampled at 0.5 ms.
pub fn gen_map_trace(
    path: &PathSpec,
    model: &MapModel,
    noise: &NoiseSpec,
    level: Level,
    still_prefix_s: f64,
    seed: u64,
) -> Result<CounterTrace> {
    let gen = gen_map_events(path, model, noise, level, still_prefix_s, seed)?;
    let trace = CounterTrace::from_events(level, &gen.events, SamplingSpec::default(), 0, gen.end_us);
    let mean_speed =
        if path.motion_duration_s() > 0.0 { gen.distance_mi / path.motion_duration_s() * 3600.0 } else { 0.0 };
    Ok(trace
        .with_meta("level", level.as_str())
        .with_meta("environment", path.environment.as_str())
        .with_meta("direction", path.direction.as_str())
        .with_meta("lat", path.origin.0)
        .with_meta("lon", path.origin.1)
        .with_meta("speed_mph", format!("{:.6}", path.speed_mph()))
        .with_meta("mean_speed_mph", format!("{mean_speed:.6}"))
        .with_meta("distance_mi", format!("{:.6}", gen.distance_mi))
        .with_meta("map_bytes", gen.map_bytes)
        .with_meta("noise_bytes", gen.noise_bytes)
        .with_meta("still_prefix_s", still_prefix_s)
        .with_meta("seed", seed))
}

/// Device-level byte-rate series of one traversal (no still prefix) at
/// `resample_hz`.
pub fn gen_path_profile_series(
    path: &PathSpec,
    model: &MapModel,
    noise: &NoiseSpec,
    resample_hz: f64,
    seed: u64,
) -> Result<RateSeries> {
    if !(resample_hz > 0.0) {
        return Err(Error::Config("resample_hz must be > 0".into()));
    }
    let trace = gen_map_trace(path, model, noise, Scope::Device, 0.0, seed)?;
    rate_series(&trace, 1.0 / resample_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locinfer::pearson;

    fn mean_tile_gap(times: &[u64]) -> f64 {
        let gaps: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) as f64 / 1e6).collect();
        gaps.iter().sum::<f64>() / gaps.len() as f64
    }

    #[test]
    fn tile_interval_follows_speed() {
        let model = MapModel::noiseless();
        let slow = PathSpec::at_speed(20.0, 10.0, 20);
        let fast = PathSpec { step_interval_s: 5.0, ..slow.clone() };
        assert!((fast.speed_mph() - 40.0).abs() < 1e-9);
        let a = gen_map_events(&slow, &model, &NoiseSpec::silent(), Scope::App, 0.0, 1).unwrap();
        let b = gen_map_events(&fast, &model, &NoiseSpec::silent(), Scope::App, 0.0, 1).unwrap();
        let (ga, gb) = (mean_tile_gap(&a.tile_times_us), mean_tile_gap(&b.tile_times_us));
        assert!((ga - 450.0 / 20.0).abs() < 1e-3, "{ga}");
        assert!((ga / gb - 2.0).abs() < 1e-3);
    }

    #[test]
    fn app_level_is_silent_before_motion() {
        let path = PathSpec::at_speed(30.0, 5.0, 10);
        let trace = gen_map_trace(&path, &MapModel::default(), &NoiseSpec::default(), Scope::App, 15.0, 9).unwrap();
        for s in &trace.samples {
            if s.t_us < 15_000_000 {
                assert_eq!(s.rx_bytes + s.tx_bytes, 0, "bytes at {}", s.t_us);
            }
        }
        assert!(trace.total_bytes().0 > 0);
    }

    #[test]
    fn urban_to_rural_byte_ratio_tracks_density() {
        let model = MapModel { density_urban: 2.0, density_rural: 1.0, ..MapModel::default() };
        let urban = PathSpec { environment: Environment::Urban, ..PathSpec::at_speed(40.0, 10.0, 30) };
        let rural = PathSpec { environment: Environment::Rural, ..urban.clone() };
        let (mut u, mut r) = (0u64, 0u64);
        for seed in 0..10 {
            u += gen_map_events(&urban, &model, &NoiseSpec::silent(), Scope::Device, 0.0, seed).unwrap().map_bytes;
            r += gen_map_events(&rural, &model, &NoiseSpec::silent(), Scope::Device, 0.0, seed).unwrap().map_bytes;
        }
        let ratio = u as f64 / r as f64;
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn deterministic_and_conserving() {
        let path = PathSpec::at_speed(25.0, 4.0, 10);
        let model = MapModel::default();
        let a = gen_map_trace(&path, &model, &NoiseSpec::default(), Scope::Device, 15.0, 42).unwrap();
        let b = gen_map_trace(&path, &model, &NoiseSpec::default(), Scope::Device, 15.0, 42).unwrap();
        assert_eq!(a, b);
        let ev = gen_map_events(&path, &model, &NoiseSpec::default(), Scope::Device, 15.0, 42).unwrap();
        let (rx, tx) = a.total_bytes();
        assert_eq!(rx + tx, ev.map_bytes + ev.noise_bytes);
    }

    #[test]
    fn device_coefficient_by_construction() {
        let model = MapModel::noiseless();
        for speed in [10.0, 35.0, 60.0] {
            let path = PathSpec { environment: Environment::Rural, ..PathSpec::at_speed(speed, 10.0, 30) };
            let mut bytes = 0u64;
            for seed in 0..5 {
                bytes +=
                    gen_map_events(&path, &model, &NoiseSpec::silent(), Scope::Device, 0.0, seed).unwrap().map_bytes;
            }
            let s_per_byte = 5.0 * path.motion_duration_s() / bytes as f64;
            let a = s_per_byte * speed;
            assert!((a / model.device_byte_coeff - 1.0).abs() < 0.05, "speed {speed}: a={a}");
        }
    }

    #[test]
    fn constant_speed_series_is_flat_and_still_path_is_noise_floor() {
        let model = MapModel::default();
        let path = PathSpec::at_speed(40.0, 10.0, 12);
        let s = gen_path_profile_series(&path, &model, &NoiseSpec::default(), 0.2, 5).unwrap();
        let mean = s.values.iter().sum::<f64>() / s.values.len() as f64;
        let max_dev = s.values.iter().map(|v| (v - mean).abs() / mean).fold(0.0, f64::max);
        assert!(max_dev < 0.35, "max relative deviation {max_dev}");

        let still = PathSpec { step_distance_mi: 0.0, ..path };
        let s = gen_path_profile_series(&still, &model, &NoiseSpec::default(), 1.0, 5).unwrap();
        let mean = s.values.iter().sum::<f64>() / s.values.len() as f64;
        let floor = NoiseSpec::default().mean_bytes_per_s();
        assert!(mean < 3.0 * floor, "{mean} vs floor {floor}");
    }

    #[test]
    fn shared_segments_raise_correlation() {
        let model = MapModel::default();
        let noise = NoiseSpec::default();
        let base = PathSpec::at_speed(30.0, 20.0, 12);
        let a = PathSpec {
            speed_profile: vec![1.0, 1.8, 0.4, 1.2, 0.6, 1.6, 0.3, 1.4, 0.8, 1.9, 0.5, 1.1],
            ..base.clone()
        };
        // first half identical to `a`
        let b = PathSpec {
            speed_profile: vec![1.0, 1.8, 0.4, 1.2, 0.6, 1.6, 1.5, 0.4, 1.7, 0.3, 1.2, 0.6],
            ..base.clone()
        };
        let c = PathSpec { speed_profile: vec![0.5, 0.6, 1.7, 0.4, 1.8, 0.3, 1.0, 1.4, 0.6, 0.8, 1.9, 1.3], ..base };
        let mean_series = |p: &PathSpec| {
            let runs: Vec<RateSeries> =
                (0..5).map(|s| gen_path_profile_series(p, &model, &noise, 1.0, s).unwrap()).collect();
            let n = runs.iter().map(|r| r.values.len()).min().unwrap();
            let values = (0..n).map(|i| runs.iter().map(|r| r.values[i]).sum::<f64>() / 5.0).collect();
            RateSeries { values, period_s: 1.0 }
        };
        let (ma, mb, mc) = (mean_series(&a), mean_series(&b), mean_series(&c));
        let shared = pearson(&ma, &mb).unwrap();
        let disjoint = pearson(&ma, &mc).unwrap();
        assert!(shared > disjoint, "shared {shared} disjoint {disjoint}");
    }
}
