//! Traffic-shaping defenses applied to session frames: five padding
//! schemes, the pad-to-max variants, and three insertion schemes.
//!
//! Padding grows `|size|` and keeps sign, count and order. Insertion adds
//! packets at uniform random times and never touches the originals.

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trace::{Frame, PacketEvent};
use crate::US_PER_S;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    RandomSessionPad,
    RandomPacketPad,
    PadToCeilings,
    ExponentialPad,
    LinearPad,
    PadToMax,
    RandomPacketPadToMax,
    RandomInsertions,
    UniformAdding,
    SessionRandomAdding,
}

impl Scheme {
    pub const ALL: [Scheme; 10] = [
        Scheme::RandomSessionPad,
        Scheme::RandomPacketPad,
        Scheme::PadToCeilings,
        Scheme::ExponentialPad,
        Scheme::LinearPad,
        Scheme::PadToMax,
        Scheme::RandomPacketPadToMax,
        Scheme::RandomInsertions,
        Scheme::UniformAdding,
        Scheme::SessionRandomAdding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::RandomSessionPad => "random_session_pad",
            Scheme::RandomPacketPad => "random_packet_pad",
            Scheme::PadToCeilings => "pad_to_ceilings",
            Scheme::ExponentialPad => "exponential_pad",
            Scheme::LinearPad => "linear_pad",
            Scheme::PadToMax => "pad_to_max",
            Scheme::RandomPacketPadToMax => "random_packet_pad_to_max",
            Scheme::RandomInsertions => "random_insertions",
            Scheme::UniformAdding => "uniform_adding",
            Scheme::SessionRandomAdding => "session_random_adding",
        }
    }

    /// Resizes packets only.
    pub fn is_padding(self) -> bool {
        !self.is_insertion()
    }

    pub fn is_insertion(self) -> bool {
        matches!(self, Scheme::RandomInsertions | Scheme::UniformAdding | Scheme::SessionRandomAdding)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().replace('-', "_");
        Scheme::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| Error::Config(format!("unknown countermeasure scheme `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountermeasureParams {
    /// Random pad bounds, bytes, inclusive.
    pub pad_min: u64,
    pub pad_max: u64,
    pub ceiling: u64,
    pub linear_pad: u64,
    pub max_size: u64,
    /// Per-packet probability for `random_packet_pad_to_max`.
    pub pad_to_max_prob: f64,
    pub insertion_rate_pps: f64,
    pub insert_min: u64,
    pub insert_max: u64,
    /// Per-frame probability for `session_random_adding`.
    pub session_prob: f64,
}

impl Default for CountermeasureParams {
    fn default() -> Self {
        CountermeasureParams {
            pad_min: 0,
            pad_max: 255,
            ceiling: 128,
            linear_pad: 100,
            max_size: 1500,
            pad_to_max_prob: 0.5,
            insertion_rate_pps: 5.0,
            insert_min: 100,
            insert_max: 1500,
            session_prob: 0.5,
        }
    }
}

impl CountermeasureParams {
    /// The `[params]` table of a countermeasure file; other keys are ignored, so a
    /// full countermeasure file can be reused for every scheme.
    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            #[serde(default)]
            params: CountermeasureParams,
        }
        let doc: Doc = toml::from_str(text)?;
        CountermeasureSpec { scheme: Scheme::LinearPad, params: doc.params, seed: 0 }.validate()?;
        Ok(doc.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountermeasureSpec {
    pub scheme: Scheme,
    #[serde(default)]
    pub params: CountermeasureParams,
    #[serde(default)]
    pub seed: u64,
}

impl CountermeasureSpec {
    pub fn new(scheme: Scheme, seed: u64) -> Self {
        CountermeasureSpec { scheme, params: CountermeasureParams::default(), seed }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: CountermeasureSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if p.pad_min > p.pad_max {
            return Err(Error::Config(format!("pad_min {} exceeds pad_max {}", p.pad_min, p.pad_max)));
        }
        if p.ceiling == 0 || p.max_size == 0 {
            return Err(Error::Config("ceiling and max_size must be > 0".into()));
        }
        if p.insert_min == 0 || p.insert_min > p.insert_max {
            return Err(Error::Config(format!("bad insertion size range [{}, {}]", p.insert_min, p.insert_max)));
        }
        for (name, v) in [("pad_to_max_prob", p.pad_to_max_prob), ("session_prob", p.session_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(p.insertion_rate_pps >= 0.0) || !p.insertion_rate_pps.is_finite() {
            return Err(Error::Config("insertion rate must be >= 0".into()));
        }
        Ok(())
    }
}

fn resize(frame: &Frame, mut f: impl FnMut(u64) -> u64) -> Frame {
    let events = frame
        .events
        .iter()
        .map(|e| {
            let m = f(e.magnitude()).max(e.magnitude());
            PacketEvent { t_us: e.t_us, size_bytes: e.size_bytes.signum() * m as i64 }
        })
        .collect();
    Frame { events, duration_us: frame.duration_us, label: frame.label.clone() }
}

fn random_packet(t_us: u64, p: &CountermeasureParams, rng: &mut Rng) -> PacketEvent {
    let size = rng.random_range(p.insert_min..=p.insert_max);
    if rng.random::<bool>() {
        PacketEvent::incoming(t_us, size)
    } else {
        PacketEvent::outgoing(t_us, size)
    }
}

/// Merges inserted packets into the frame; originals keep their order and
/// come first on equal timestamps.
fn merge(frame: &Frame, mut extra: Vec<PacketEvent>) -> Frame {
    extra.sort_by_key(|e| e.t_us);
    let mut events = Vec::with_capacity(frame.events.len() + extra.len());
    let mut it = extra.into_iter().peekable();
    for e in &frame.events {
        while it.peek().is_some_and(|x| x.t_us < e.t_us) {
            events.push(it.next().unwrap());
        }
        events.push(*e);
    }
    events.extend(it);
    Frame { events, duration_us: frame.duration_us, label: frame.label.clone() }
}

fn random_insertions(frame: &Frame, p: &CountermeasureParams, rng: &mut Rng) -> Frame {
    let mean = p.insertion_rate_pps * frame.duration_us as f64 / 1e6;
    if mean <= 0.0 || frame.duration_us == 0 {
        return frame.clone();
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    let extra = (0..n).map(|_| random_packet(rng.random_range(0..frame.duration_us), p, rng)).collect();
    merge(frame, extra)
}

/// Tops every 1 s bin up to the busiest bin's packet count.
fn uniform_adding(frame: &Frame, p: &CountermeasureParams, rng: &mut Rng) -> Frame {
    let bins = frame.duration_us.div_ceil(US_PER_S) as usize;
    if bins == 0 {
        return frame.clone();
    }
    let mut counts = vec![0usize; bins];
    for e in &frame.events {
        counts[((e.t_us / US_PER_S) as usize).min(bins - 1)] += 1;
    }
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut extra = Vec::new();
    for (b, &c) in counts.iter().enumerate() {
        let lo = b as u64 * US_PER_S;
        let hi = ((b as u64 + 1) * US_PER_S).min(frame.duration_us);
        for _ in c..target {
            extra.push(random_packet(rng.random_range(lo..hi), p, rng));
        }
    }
    merge(frame, extra)
}

pub fn apply_to_frame(frame: &Frame, spec: &CountermeasureSpec, rng: &mut Rng) -> Frame {
    let p = &spec.params;
    match spec.scheme {
        Scheme::RandomSessionPad => {
            let pad = rng.random_range(p.pad_min..=p.pad_max);
            resize(frame, |m| m + pad)
        }
        Scheme::RandomPacketPad => resize(frame, |m| m + rng.random_range(p.pad_min..=p.pad_max)),
        Scheme::PadToCeilings => resize(frame, |m| m.div_ceil(p.ceiling) * p.ceiling),
        Scheme::ExponentialPad => resize(frame, u64::next_power_of_two),
        Scheme::LinearPad => resize(frame, |m| m + p.linear_pad),
        Scheme::PadToMax => resize(frame, |_| p.max_size),
        Scheme::RandomPacketPadToMax => {
            resize(frame, |m| if rng.random::<f64>() < p.pad_to_max_prob { p.max_size } else { m })
        }
        Scheme::RandomInsertions => random_insertions(frame, p, rng),
        Scheme::UniformAdding => uniform_adding(frame, p, rng),
        Scheme::SessionRandomAdding => {
            if rng.random::<f64>() < p.session_prob {
                random_insertions(frame, p, rng)
            } else {
                frame.clone()
            }
        }
    }
}

/// Applies the scheme to every frame; frame `i` uses its own stream derived
/// from `spec.seed`.
pub fn apply_countermeasure(frames: &[Frame], spec: &CountermeasureSpec) -> Result<Vec<Frame>> {
    spec.validate()?;
    Ok(frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| apply_to_frame(f, spec, &mut rng::derived(spec.seed, i as u64)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{filter_packets, transform_packet_counts};
    use proptest::prelude::*;

    fn frame(sizes: &[i64]) -> Frame {
        let events =
            sizes.iter().enumerate().map(|(i, &s)| PacketEvent { t_us: i as u64 * 1000, size_bytes: s }).collect();
        Frame::new(events, 30_000_000, Some("x".into()))
    }

    fn sizes(f: &Frame) -> Vec<i64> {
        f.events.iter().map(|e| e.size_bytes).collect()
    }

    fn run(scheme: Scheme, f: &Frame) -> Frame {
        apply_countermeasure(std::slice::from_ref(f), &CountermeasureSpec::new(scheme, 1)).unwrap().remove(0)
    }

    #[test]
    fn examples() {
        assert_eq!(sizes(&run(Scheme::PadToMax, &frame(&[200, -300]))), vec![1500, -1500]);
        assert_eq!(sizes(&run(Scheme::LinearPad, &frame(&[200]))), vec![300]);
        let mut spec = CountermeasureSpec::new(Scheme::RandomInsertions, 3);
        spec.params.insertion_rate_pps = 0.0;
        let f = frame(&[200, -300, 700]);
        assert_eq!(apply_countermeasure(std::slice::from_ref(&f), &spec).unwrap()[0], f);
    }

    #[test]
    fn params_from_spec_file() {
        let spec = "scheme = \"pad_to_max\"\nseed = 4\n[params]\nlinear_pad = 40\nmax_size = 1200\n";
        let p = CountermeasureParams::from_toml(spec).unwrap();
        assert_eq!((p.linear_pad, p.max_size, p.ceiling), (40, 1200, 128));
        assert_eq!(CountermeasureParams::from_toml("").unwrap(), CountermeasureParams::default());
        assert!(CountermeasureParams::from_toml("[params]\npad_min = 9\npad_max = 3\n").is_err());
        assert!(CountermeasureParams::from_toml("[params]\nbogus = 1\n").is_err());
    }

    #[test]
    fn rounding_schemes() {
        assert_eq!(sizes(&run(Scheme::PadToCeilings, &frame(&[1, 128, -129, 300]))), vec![128, 128, -256, 384]);
        assert_eq!(sizes(&run(Scheme::ExponentialPad, &frame(&[3, 64, -65, 1000]))), vec![4, 64, -128, 1024]);
        // a packet above max is left alone rather than shrunk
        assert_eq!(sizes(&run(Scheme::PadToMax, &frame(&[2000]))), vec![2000]);
    }

    #[test]
    fn session_pad_is_one_amount_per_frame() {
        let f = frame(&[100, -200, 300, 400]);
        let out = run(Scheme::RandomSessionPad, &f);
        let pads: Vec<i64> =
            out.events.iter().zip(&f.events).map(|(a, b)| a.size_bytes.abs() - b.size_bytes.abs()).collect();
        assert!(pads.iter().all(|&p| p == pads[0] && (0..=255).contains(&p)));
    }

    #[test]
    fn uniform_adding_flattens_packet_counts() {
        let mut events = vec![];
        for i in 0..10 {
            events.push(PacketEvent::incoming(100 + i, 500));
        }
        events.push(PacketEvent::outgoing(5_500_000, 300));
        let f = Frame::new(events, 10_000_000, None);
        let out = run(Scheme::UniformAdding, &f);
        let mut counts = [0; 10];
        for e in &out.events {
            counts[(e.t_us / 1_000_000) as usize] += 1;
        }
        assert_eq!(counts, [10; 10]);
        assert_eq!(out.events.len(), 100);
    }

    #[test]
    fn session_adding_touches_some_frames_only() {
        let frames: Vec<Frame> = (0..200).map(|_| frame(&[500, -300])).collect();
        let out = apply_countermeasure(&frames, &CountermeasureSpec::new(Scheme::SessionRandomAdding, 4)).unwrap();
        let changed = out.iter().filter(|f| f.events.len() > 2).count();
        assert!((70..=130).contains(&changed), "{changed}");
    }

    #[test]
    fn insertion_mean_matches_rate() {
        let frames: Vec<Frame> = (0..400).map(|_| frame(&[500])).collect();
        let out = apply_countermeasure(&frames, &CountermeasureSpec::new(Scheme::RandomInsertions, 8)).unwrap();
        let added: Vec<f64> = out.iter().map(|f| (f.events.len() - 1) as f64).collect();
        let mean = added.iter().sum::<f64>() / added.len() as f64;
        // Poisson(150) per frame: sd of the mean is sqrt(150 / 400)
        assert!((mean - 150.0).abs() < 3.0 * (150.0f64 / 400.0).sqrt(), "{mean}");
    }

    #[test]
    fn spec_config() {
        let spec =
            CountermeasureSpec::from_toml("scheme = \"pad_to_ceilings\"\nseed = 9\n[params]\nceiling = 64\n").unwrap();
        assert_eq!(spec.scheme, Scheme::PadToCeilings);
        assert_eq!(spec.params.ceiling, 64);
        assert_eq!(spec.params.max_size, 1500);
        assert_eq!(CountermeasureSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        assert!(matches!(CountermeasureSpec::from_toml("scheme = \"bogus\""), Err(Error::Config(_))));
        assert!(matches!("bogus".parse::<Scheme>(), Err(Error::Config(_))));
        assert!(CountermeasureSpec::from_toml("scheme = \"pad_to_max\"\n[params]\nsession_prob = 2.0\n").is_err());
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        prop::collection::vec((1i64..1600, any::<bool>(), 0u64..30_000_000), 0..60).prop_map(|v| {
            let mut events: Vec<PacketEvent> =
                v.into_iter().map(|(s, d, t)| PacketEvent { t_us: t, size_bytes: if d { s } else { -s } }).collect();
            events.sort_by_key(|e| e.t_us);
            Frame::new(events, 30_000_000, None)
        })
    }

    proptest! {
        #[test]
        fn padding_preserves_count_order_sign_and_grows(f in arb_frame(), seed in any::<u64>()) {
            for scheme in Scheme::ALL.into_iter().filter(|s| s.is_padding()) {
                let out = apply_countermeasure(std::slice::from_ref(&f), &CountermeasureSpec::new(scheme, seed)).unwrap().remove(0);
                prop_assert_eq!(out.events.len(), f.events.len());
                for (a, b) in out.events.iter().zip(&f.events) {
                    prop_assert_eq!(a.t_us, b.t_us);
                    prop_assert_eq!(a.size_bytes.signum(), b.size_bytes.signum());
                    prop_assert!(a.magnitude() >= b.magnitude());
                }
            }
        }

        #[test]
        fn insertion_keeps_originals(f in arb_frame(), seed in any::<u64>()) {
            for scheme in Scheme::ALL.into_iter().filter(|s| s.is_insertion()) {
                let out = apply_countermeasure(std::slice::from_ref(&f), &CountermeasureSpec::new(scheme, seed)).unwrap().remove(0);
                // the originals appear as a subsequence, in order
                let mut it = out.events.iter();
                for e in &f.events {
                    prop_assert!(it.any(|x| x == e));
                }
                prop_assert!(out.events.windows(2).all(|w| w[0].t_us <= w[1].t_us));
                prop_assert!(out.events.iter().all(|e| e.t_us < out.duration_us && e.size_bytes != 0));
            }
        }

        #[test]
        fn padding_leaves_counts_unchanged_above_cutoff(f in arb_frame(), seed in any::<u64>()) {
            let above = filter_packets(&f, 100);
            let base = transform_packet_counts(&filter_packets(&above, 100));
            for scheme in Scheme::ALL.into_iter().filter(|s| s.is_padding()) {
                let out = apply_countermeasure(std::slice::from_ref(&above), &CountermeasureSpec::new(scheme, seed)).unwrap().remove(0);
                prop_assert_eq!(transform_packet_counts(&filter_packets(&out, 100)), base.clone());
            }
        }

        #[test]
        fn deterministic_per_seed(f in arb_frame(), seed in any::<u64>()) {
            for scheme in Scheme::ALL {
                let spec = CountermeasureSpec::new(scheme, seed);
                let frames = vec![f.clone(), f.clone()];
                prop_assert_eq!(apply_countermeasure(&frames, &spec).unwrap(), apply_countermeasure(&frames, &spec).unwrap());
            }
        }
    }
}
