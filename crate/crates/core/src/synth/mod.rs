//! Synthetic counter traces with known ground truth.
//!
//! Two generation processes are modelled: map-tile downloads under emulated
//! motion ([`map`]) and per-URL browsing sessions ([`web`]). Both mix in a
//! homogeneous Poisson background ([`NoiseSpec`]) at device level. Every
//! generator is a pure function of its inputs and a seed.

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trace::PacketEvent;

pub mod map;
pub mod presets;
pub mod web;

pub use map::{
    gen_map_events, gen_map_trace, gen_path_profile_series, Direction, Environment, Level, MapEvents, MapModel,
    PathSpec,
};
pub use presets::{route_profiles, walsh_profile, Location, LOCATIONS, ROUTE_STEPS};
pub use web::{
    assemble_web_trace, gen_web_sessions, gen_web_trace, observed_frames, round_robin_schedule, BurstShape, ProfileSet,
    UrlProfile, FRAME_US,
};

/// Packet-size distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDist {
    Fixed {
        size: u32,
    },
    Uniform {
        min: u32,
        max: u32,
    },
    /// `(size, probability)` pairs; probabilities sum to 1.
    Discrete {
        values: Vec<(u32, f64)>,
    },
}

impl SizeDist {
    pub fn validate(&self) -> Result<()> {
        match self {
            SizeDist::Fixed { size } if *size == 0 => Err(Error::Config("packet size must be > 0".into())),
            SizeDist::Uniform { min, max } if *min == 0 || min > max => {
                Err(Error::Config(format!("bad uniform size range [{min}, {max}]")))
            }
            SizeDist::Discrete { values } => {
                if values.is_empty() || values.iter().any(|(s, p)| *s == 0 || *p < 0.0) {
                    return Err(Error::Config("discrete sizes must be > 0 with p >= 0".into()));
                }
                let total: f64 = values.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::Config(format!("size probabilities sum to {total}, not 1")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> u64 {
        match self {
            SizeDist::Fixed { size } => *size as u64,
            SizeDist::Uniform { min, max } => rng.random_range(*min..=*max) as u64,
            SizeDist::Discrete { values } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (s, p) in values {
                    acc += p;
                    if u < acc {
                        return *s as u64;
                    }
                }
                values.last().map_or(1, |(s, _)| *s as u64)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            SizeDist::Fixed { size } => *size as f64,
            SizeDist::Uniform { min, max } => (*min as f64 + *max as f64) / 2.0,
            SizeDist::Discrete { values } => values.iter().map(|(s, p)| *s as f64 * p).sum(),
        }
    }
}

/// Background traffic from other processes on the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rate_pps: f64,
    pub size_dist: SizeDist,
    /// Fraction of noise packets that are incoming.
    pub incoming_fraction: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { rate_pps: 4.0, size_dist: SizeDist::Uniform { min: 20, max: 60 }, incoming_fraction: 0.5 }
    }
}

impl NoiseSpec {
    pub fn silent() -> Self {
        NoiseSpec { rate_pps: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_pps >= 0.0) || !self.rate_pps.is_finite() {
            return Err(Error::Config(format!("noise rate must be >= 0, got {}", self.rate_pps)));
        }
        if !(0.0..=1.0).contains(&self.incoming_fraction) {
            return Err(Error::Config("incoming_fraction must be in [0, 1]".into()));
        }
        self.size_dist.validate()
    }

    /// Mean background byte rate.
    pub fn mean_bytes_per_s(&self) -> f64 {
        self.rate_pps * self.size_dist.mean()
    }

    /// Poisson arrivals on `[start_us, end_us)`.
    pub fn events(&self, start_us: u64, end_us: u64, rng: &mut Rng) -> Vec<PacketEvent> {
        let mut out = Vec::new();
        if self.rate_pps <= 0.0 || end_us <= start_us {
            return out;
        }
        let gap = Exp::new(self.rate_pps).expect("positive rate");
        let mut t = start_us as f64;
        loop {
            t += gap.sample(rng) * 1e6;
            if t >= end_us as f64 {
                break;
            }
            let size = self.size_dist.sample(rng);
            let incoming = rng.random::<f64>() < self.incoming_fraction;
            out.push(if incoming {
                PacketEvent::incoming(t as u64, size)
            } else {
                PacketEvent::outgoing(t as u64, size)
            });
        }
        out
    }
}

/// Integer draw from a normal distribution, rounded and clamped at zero.
pub(crate) fn draw_count(mean: f64, sd: f64, rng: &mut Rng) -> u64 {
    let z: f64 = rand_distr::StandardNormal.sample(rng);
    (mean + sd * z).round().max(0.0) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn size_dist_validation() {
        assert!(SizeDist::Uniform { min: 10, max: 5 }.validate().is_err());
        assert!(SizeDist::Discrete { values: vec![(100, 0.5), (200, 0.4)] }.validate().is_err());
        assert!(SizeDist::Discrete { values: vec![(100, 0.5), (200, 0.5)] }.validate().is_ok());
        assert!(SizeDist::Fixed { size: 0 }.validate().is_err());
    }

    #[test]
    fn noise_rate_matches_poisson_mean() {
        let noise = NoiseSpec { rate_pps: 10.0, ..Default::default() };
        let ev = noise.events(0, 1_000_000_000, &mut rng::seeded(3));
        // 10000 expected, sd 100
        assert!((ev.len() as f64 - 10_000.0).abs() < 400.0, "{}", ev.len());
        assert!(ev.windows(2).all(|w| w[0].t_us <= w[1].t_us));
    }

    #[test]
    fn zero_rate_is_silent() {
        assert!(NoiseSpec::silent().events(0, 10_000_000, &mut rng::seeded(1)).is_empty());
    }

    #[test]
    fn negative_rate_rejected() {
        assert!(NoiseSpec { rate_pps: -1.0, ..Default::default() }.validate().is_err());
    }
}
