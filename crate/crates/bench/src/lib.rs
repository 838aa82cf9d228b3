//! Shared fixtures for the benchmarks.

use netside::synth::{
    assemble_web_trace, gen_web_sessions, observed_frames, round_robin_schedule, BurstShape, NoiseSpec, SizeDist,
    UrlProfile, FRAME_US,
};
use netside::{CounterTrace, Frame};

fn profile(id: &str, n_in: f64, n_out: f64) -> UrlProfile {
    UrlProfile {
        url_id: id.into(),
        in_pkts: (n_in, 1.0 + 0.08 * n_in),
        out_pkts: (n_out, 1.0 + 0.08 * n_out),
        in_sizes: SizeDist::Uniform { min: 200, max: 1400 },
        out_sizes: SizeDist::Uniform { min: 100, max: 400 },
        burst: BurstShape::Exponential { mean_s: 4.0 },
    }
}

/// Two-URL browsing session set: schedule and request-relative frames.
pub fn web_sessions(per_url: usize) -> (Vec<(u64, String)>, Vec<Frame>) {
    let profiles = vec![profile("a", 10.0, 5.0), profile("b", 13.5, 5.0)];
    let ids: Vec<String> = profiles.iter().map(|p| p.url_id.clone()).collect();
    let schedule = round_robin_schedule(&ids, per_url, FRAME_US, 1);
    let sessions = gen_web_sessions(&profiles, &schedule, 2).expect("valid profiles");
    (schedule, sessions)
}

pub fn web_trace(per_url: usize) -> CounterTrace {
    let (schedule, sessions) = web_sessions(per_url);
    assemble_web_trace(&sessions, &schedule, &NoiseSpec::default(), 3).expect("valid trace")
}

/// Frames as an observer would slice them, labels attached.
pub fn web_frames(per_url: usize) -> Vec<Frame> {
    let (schedule, sessions) = web_sessions(per_url);
    observed_frames(&sessions, &schedule, &NoiseSpec::default(), 3).expect("valid trace")
}

pub fn labels(frames: &[Frame]) -> Vec<String> {
    frames.iter().map(|f| f.label.clone().unwrap_or_default()).collect()
}
