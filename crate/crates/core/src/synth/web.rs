//! Per-URL browsing sessions on a fixed request schedule.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::synth::{draw_count, NoiseSpec, SizeDist};
use crate::trace::{
    reconstruct_packet_events, slice_labeled_frames, CounterTrace, Frame, PacketEvent, SamplingSpec, Scope,
};

/// Request cadence and frame length.
pub const FRAME_US: u64 = 30_000_000;

/// Arrival-time distribution of a session's packets within its frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BurstShape {
    Uniform { span_s: f64 },
    Exponential { mean_s: f64 },
}

impl Default for BurstShape {
    fn default() -> Self {
        BurstShape::Uniform { span_s: 30.0 }
    }
}

impl BurstShape {
    fn sample_us(&self, frame_us: u64, rng: &mut Rng) -> u64 {
        let limit = frame_us.saturating_sub(1) as f64;
        let t = match self {
            BurstShape::Uniform { span_s } => rng.random::<f64>() * (span_s * 1e6).min(frame_us as f64),
            BurstShape::Exponential { mean_s } => {
                let exp = Exp::new(1.0 / mean_s.max(1e-6)).expect("positive mean");
                let mut t = limit;
                for _ in 0..32 {
                    let x = exp.sample(rng) * 1e6;
                    if x < frame_us as f64 {
                        t = x;
                        break;
                    }
                }
                t
            }
        };
        (t as u64).min(limit as u64)
    }
}

/// Traffic statistics of one website, as seen per request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrlProfile {
    pub url_id: String,
    /// (mean, stdev) incoming packets per frame.
    pub in_pkts: (f64, f64),
    pub out_pkts: (f64, f64),
    pub in_sizes: SizeDist,
    pub out_sizes: SizeDist,
    #[serde(default)]
    pub burst: BurstShape,
}

impl UrlProfile {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.in_pkts, self.out_pkts);
        if a.0 < 0.0 || a.1 < 0.0 || b.0 < 0.0 || b.1 < 0.0 {
            return Err(Error::Config(format!("{}: packet means and stdevs must be >= 0", self.url_id)));
        }
        self.in_sizes.validate()?;
        self.out_sizes.validate()
    }

    /// A copy under another identifier (identical-profile controls).
    pub fn renamed(&self, url_id: impl Into<String>) -> UrlProfile {
        UrlProfile { url_id: url_id.into(), ..self.clone() }
    }

    /// One session, event times relative to the request.
    pub fn session(&self, frame_us: u64, rng: &mut Rng) -> Vec<PacketEvent> {
        let n_in = draw_count(self.in_pkts.0, self.in_pkts.1, rng);
        let n_out = draw_count(self.out_pkts.0, self.out_pkts.1, rng);
        let mut ev = Vec::with_capacity((n_in + n_out) as usize);
        for _ in 0..n_in {
            let t = self.burst.sample_us(frame_us, rng);
            ev.push(PacketEvent::incoming(t, self.in_sizes.sample(rng)));
        }
        for _ in 0..n_out {
            let t = self.burst.sample_us(frame_us, rng);
            ev.push(PacketEvent::outgoing(t, self.out_sizes.sample(rng)));
        }
        ev.sort_by_key(|e| e.t_us);
        ev
    }
}

/// Profile configuration file: `[[profile]]` tables plus optional `[noise]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub profile: Vec<UrlProfile>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

impl ProfileSet {
    pub fn from_toml(text: &str) -> Result<ProfileSet> {
        let set: ProfileSet = toml::from_str(text)?;
        for p in &set.profile {
            p.validate()?;
        }
        if let Some(n) = &set.noise {
            n.validate()?;
        }
        Ok(set)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile set serializes")
    }

    pub fn url_ids(&self) -> Vec<String> {
        self.profile.iter().map(|p| p.url_id.clone()).collect()
    }
}

/// `frames_per_url` requests to each URL in shuffled order, one every
/// `interval_us`.
pub fn round_robin_schedule(
    url_ids: &[String],
    frames_per_url: usize,
    interval_us: u64,
    seed: u64,
) -> Vec<(u64, String)> {
    let mut order: Vec<&String> = url_ids.iter().flat_map(|u| std::iter::repeat_n(u, frames_per_url)).collect();
    order.shuffle(&mut rng::seeded(seed));
    order.into_iter().enumerate().map(|(i, u)| (i as u64 * interval_us, u.clone())).collect()
}

/// Draws one labeled session frame per scheduled request. Frame event times
/// are relative to the request; request `i` uses its own derived stream.
pub fn gen_web_sessions(profiles: &[UrlProfile], schedule: &[(u64, String)], seed: u64) -> Result<Vec<Frame>> {
    let by_id: HashMap<&str, &UrlProfile> = profiles.iter().map(|p| (p.url_id.as_str(), p)).collect();
    for p in profiles {
        p.validate()?;
    }
    schedule
        .iter()
        .enumerate()
        .map(|(i, (_, url))| {
            let profile =
                by_id.get(url.as_str()).ok_or_else(|| Error::Config(format!("no profile for url `{url}`")))?;
            let mut rng = rng::derived(seed, i as u64);
            Ok(Frame::new(profile.session(FRAME_US, &mut rng), FRAME_US, Some(url.clone())))
        })
        .collect()
}

/// Device-level trace from session frames placed at their request times plus
/// background noise. The trace spans at least one frame.
pub fn assemble_web_trace(
    sessions: &[Frame],
    schedule: &[(u64, String)],
    noise: &NoiseSpec,
    seed: u64,
) -> Result<CounterTrace> {
    if sessions.len() != schedule.len() {
        return Err(Error::InvalidInput(format!(
            "{} sessions for {} scheduled requests",
            sessions.len(),
            schedule.len()
        )));
    }
    if schedule.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::InvalidInput("schedule must be sorted by request time".into()));
    }
    noise.validate()?;
    let end_us = schedule.last().map_or(0, |(t, _)| *t) + FRAME_US;
    let mut events: Vec<PacketEvent> = sessions
        .iter()
        .zip(schedule)
        .flat_map(|(f, (t0, _))| {
            f.events.iter().map(move |e| PacketEvent { t_us: t0 + e.t_us, size_bytes: e.size_bytes })
        })
        .collect();
    let mut noise_rng = rng::derived(seed, u64::MAX);
    events.extend(noise.events(0, end_us, &mut noise_rng));
    events.sort_by_key(|e| e.t_us);
    Ok(CounterTrace::from_events(Scope::Device, &events, SamplingSpec::default(), 0, end_us)
        .with_meta("requests", schedule.len())
        .with_meta("seed", seed))
}

pub fn gen_web_trace(
    profiles: &[UrlProfile],
    schedule: &[(u64, String)],
    noise: &NoiseSpec,
    seed: u64,
) -> Result<CounterTrace> {
    let sessions = gen_web_sessions(profiles, schedule, seed)?;
    assemble_web_trace(&sessions, schedule, noise, seed)
}

/// What a counter-polling observer recovers from `sessions`: the assembled
/// trace, reconstructed into events and cut back into labeled frames.
pub fn observed_frames(
    sessions: &[Frame],
    schedule: &[(u64, String)],
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<Frame>> {
    let trace = assemble_web_trace(sessions, schedule, noise, seed)?;
    let events = reconstruct_packet_events(&trace)?;
    Ok(slice_labeled_frames(&events, schedule, FRAME_US))
}
