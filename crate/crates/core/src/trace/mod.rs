//! Counter traces, packet events and frames.
//!
//! A [`CounterTrace`] is what an unprivileged observer actually sees: cumulative
//! byte and packet counters sampled over time. [`reconstruct_packet_events`]
//! turns it back into signed [`PacketEvent`]s, and [`slice_frames`] cuts those
//! into fixed windows, one per website request.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod io;

/// Default look-ahead for attaching orphan byte deltas to a packet delta.
pub const DEFAULT_MATCH_WINDOW_US: u64 = 50_000;

/// Nominal counter sampling period (0.5 ms).
pub const DEFAULT_SAMPLE_PERIOD_US: u64 = 500;

/// Whose traffic the counters cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    App,
    Device,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::App => "app",
            Scope::Device => "device",
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "app" | "app-level" => Ok(Scope::App),
            "device" | "device-level" => Ok(Scope::Device),
            other => Err(Error::Config(format!("unknown scope `{other}`"))),
        }
    }
}

/// One reading of the cumulative counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CounterSample {
    pub t_us: u64,
    pub rx_bytes: u64,
    pub tx_bytes: u64,
    pub rx_pkts: u64,
    pub tx_pkts: u64,
}

impl CounterSample {
    fn decreased_from(&self, prev: &CounterSample) -> bool {
        self.rx_bytes < prev.rx_bytes
            || self.tx_bytes < prev.tx_bytes
            || self.rx_pkts < prev.rx_pkts
            || self.tx_pkts < prev.tx_pkts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterTrace {
    pub scope: Scope,
    pub samples: Vec<CounterSample>,
    /// Free-form labels (location, url, speed, ...).
    pub meta: BTreeMap<String, String>,
}

/// Difference between consecutive samples; `t_us` is the end of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterDelta {
    pub t_us: u64,
    pub rx_bytes: u64,
    pub tx_bytes: u64,
    pub rx_pkts: u64,
    pub tx_pkts: u64,
}

/// A reconstructed packet. Positive sizes are incoming, negative outgoing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketEvent {
    pub t_us: u64,
    pub size_bytes: i64,
}

impl PacketEvent {
    pub fn incoming(t_us: u64, bytes: u64) -> Self {
        PacketEvent { t_us, size_bytes: bytes as i64 }
    }

    pub fn outgoing(t_us: u64, bytes: u64) -> Self {
        PacketEvent { t_us, size_bytes: -(bytes as i64) }
    }

    pub fn is_incoming(&self) -> bool {
        self.size_bytes > 0
    }

    pub fn magnitude(&self) -> u64 {
        self.size_bytes.unsigned_abs()
    }
}

/// A fixed-duration window of events attributed to one request. Event times
/// are relative to the frame start.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Frame {
    pub events: Vec<PacketEvent>,
    pub duration_us: u64,
    pub label: Option<String>,
}

impl Frame {
    pub fn new(events: Vec<PacketEvent>, duration_us: u64, label: Option<String>) -> Self {
        Frame { events, duration_us, label }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// How synthetic events are turned into counter readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub period_us: u64,
    /// Delay between a packet's bytes and its packet count becoming visible.
    pub packet_lag_us: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec { period_us: DEFAULT_SAMPLE_PERIOD_US, packet_lag_us: 0 }
    }
}

impl CounterTrace {
    /// Builds a trace, checking that sample times strictly increase.
    pub fn new(scope: Scope, samples: Vec<CounterSample>) -> Result<Self> {
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].t_us <= w[0].t_us {
                return Err(Error::NonMonotonicTime { index: i + 1 });
            }
        }
        Ok(CounterTrace { scope, samples, meta: BTreeMap::new() })
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn start_us(&self) -> u64 {
        self.samples.first().map_or(0, |s| s.t_us)
    }

    pub fn end_us(&self) -> u64 {
        self.samples.last().map_or(0, |s| s.t_us)
    }

    pub fn duration_s(&self) -> f64 {
        (self.end_us() - self.start_us()) as f64 / 1e6
    }

    /// Total (rx, tx) bytes between the first and last sample.
    pub fn total_bytes(&self) -> (u64, u64) {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => (b.rx_bytes - a.rx_bytes, b.tx_bytes - a.tx_bytes),
            _ => (0, 0),
        }
    }

    /// Samples the cumulative counters produced by `events`.
    ///
    /// A sample is emitted at both ends of every sampling period in which a
    /// counter changed, plus one at `start_us` and one at `end_us`. An event's
    /// bytes show up in the period containing `t_us`; its packet count in the
    /// period containing `t_us + packet_lag_us`.
    pub fn from_events(
        scope: Scope,
        events: &[PacketEvent],
        sampling: SamplingSpec,
        start_us: u64,
        end_us: u64,
    ) -> CounterTrace {
        let period = sampling.period_us.max(1);
        // bucket index -> [rx_bytes, tx_bytes, rx_pkts, tx_pkts]
        let mut buckets: BTreeMap<u64, [u64; 4]> = BTreeMap::new();
        for ev in events {
            let t = ev.t_us.max(start_us);
            let byte_bucket = (t - start_us) / period;
            let pkt_bucket = (t + sampling.packet_lag_us - start_us) / period;
            let incoming = ev.is_incoming();
            let (bi, pi) = if incoming { (0, 2) } else { (1, 3) };
            buckets.entry(byte_bucket).or_default()[bi] += ev.magnitude();
            buckets.entry(pkt_bucket).or_default()[pi] += 1;
        }

        let mut samples = Vec::with_capacity(buckets.len() + 2);
        let mut acc = CounterSample { t_us: start_us, ..Default::default() };
        samples.push(acc);
        for (bucket, inc) in buckets {
            // An unchanged reading just before the change keeps every nonzero
            // delta one period long, so silent stretches stay visible.
            let open = start_us + bucket * period;
            if open > acc.t_us {
                acc.t_us = open;
                samples.push(acc);
            }
            acc.t_us = start_us + (bucket + 1) * period;
            acc.rx_bytes += inc[0];
            acc.tx_bytes += inc[1];
            acc.rx_pkts += inc[2];
            acc.tx_pkts += inc[3];
            samples.push(acc);
        }
        if end_us > acc.t_us {
            acc.t_us = end_us;
            samples.push(acc);
        }
        CounterTrace { scope, samples, meta: BTreeMap::new() }
    }
}

/// Consecutive differences of a trace.
pub fn deltas(trace: &CounterTrace) -> Result<Vec<CounterDelta>> {
    if trace.samples.len() < 2 {
        return Err(Error::EmptyTrace(trace.samples.len()));
    }
    trace
        .samples
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (a, b) = (&w[0], &w[1]);
            if b.decreased_from(a) {
                return Err(Error::CounterReset { index: i + 1 });
            }
            Ok(CounterDelta {
                t_us: b.t_us,
                rx_bytes: b.rx_bytes - a.rx_bytes,
                tx_bytes: b.tx_bytes - a.tx_bytes,
                rx_pkts: b.rx_pkts - a.rx_pkts,
                tx_pkts: b.tx_pkts - a.tx_pkts,
            })
        })
        .collect()
}

/// Splits a trace wherever any counter goes backwards (reboot or wrap). Each
/// piece keeps the scope and metadata of the original.
pub fn split_at_resets(trace: &CounterTrace) -> Vec<CounterTrace> {
    let mut pieces = Vec::new();
    let mut current: Vec<CounterSample> = Vec::new();
    for s in &trace.samples {
        if let Some(prev) = current.last() {
            if s.decreased_from(prev) {
                pieces.push(std::mem::take(&mut current));
            }
        }
        current.push(*s);
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces.into_iter().map(|samples| CounterTrace { scope: trace.scope, samples, meta: trace.meta.clone() }).collect()
}

#[derive(Default)]
struct DirectionMatcher {
    pending_bytes: u64,
    pending_bytes_t: u64,
    pending_pkts: u64,
    pending_pkts_t: u64,
}

impl DirectionMatcher {
    fn step(&mut self, t: u64, bytes: u64, pkts: u64, window_us: u64, out: &mut Vec<(u64, u64)>) {
        if self.pending_bytes > 0 && t - self.pending_bytes_t > window_us {
            out.push((self.pending_bytes_t, self.pending_bytes));
            self.pending_bytes = 0;
        }
        if self.pending_pkts > 0 && t - self.pending_pkts_t > window_us {
            self.pending_pkts = 0;
        }

        let total_bytes = bytes + self.pending_bytes;
        let total_pkts = pkts + self.pending_pkts;
        if total_pkts > 0 && total_bytes > 0 {
            let at = if pkts > 0 { t } else { self.pending_pkts_t };
            split_bytes(at, total_bytes, total_pkts, out);
            self.pending_bytes = 0;
            self.pending_pkts = 0;
        } else if total_pkts > 0 {
            if self.pending_pkts == 0 {
                self.pending_pkts_t = t;
            }
            self.pending_pkts = total_pkts;
        } else if total_bytes > 0 {
            if self.pending_bytes == 0 {
                self.pending_bytes_t = t;
            }
            self.pending_bytes = total_bytes;
        }
    }

    fn finish(&mut self, out: &mut Vec<(u64, u64)>) {
        if self.pending_bytes > 0 {
            out.push((self.pending_bytes_t, self.pending_bytes));
            self.pending_bytes = 0;
        }
    }
}

/// `bytes` over `pkts` packets, remainder on the last. Never emits an empty
/// packet: with fewer bytes than packets, one packet per byte is emitted.
fn split_bytes(t: u64, bytes: u64, pkts: u64, out: &mut Vec<(u64, u64)>) {
    let n = pkts.min(bytes);
    let base = bytes / n;
    for _ in 0..n - 1 {
        out.push((t, base));
    }
    out.push((t, bytes - base * (n - 1)));
}

/// Reconstructs signed packet events with the default 50 ms matching window.
pub fn reconstruct_packet_events(trace: &CounterTrace) -> Result<Vec<PacketEvent>> {
    reconstruct_with_window(trace, DEFAULT_MATCH_WINDOW_US)
}

/// Reconstructs packet events from counter deltas.
///
/// An interval with `n > 0` packets and `b` bytes yields `n` events at the
/// interval end, sized `b / n` with the remainder on the last. Bytes seen
/// without a packet delta wait for the next interval that has one, up to
/// `window_us`; packet deltas without bytes likewise wait for bytes. Bytes
/// that never find a packet become a single event so byte totals are always
/// conserved; packets that never find bytes are dropped.
pub fn reconstruct_with_window(trace: &CounterTrace, window_us: u64) -> Result<Vec<PacketEvent>> {
    let ds = deltas(trace)?;
    let mut rx = DirectionMatcher::default();
    let mut tx = DirectionMatcher::default();
    let mut rx_out = Vec::new();
    let mut tx_out = Vec::new();
    for d in &ds {
        rx.step(d.t_us, d.rx_bytes, d.rx_pkts, window_us, &mut rx_out);
        tx.step(d.t_us, d.tx_bytes, d.tx_pkts, window_us, &mut tx_out);
    }
    rx.finish(&mut rx_out);
    tx.finish(&mut tx_out);

    let mut events: Vec<PacketEvent> = rx_out
        .into_iter()
        .map(|(t, b)| PacketEvent::incoming(t, b))
        .chain(tx_out.into_iter().map(|(t, b)| PacketEvent::outgoing(t, b)))
        .collect();
    events.sort_by_key(|e| e.t_us);
    Ok(events)
}

/// One frame per request time holding the events in
/// `[request, request + duration_us)`, re-based to the frame start.
pub fn slice_frames(events: &[PacketEvent], request_times: &[u64], duration_us: u64) -> Vec<Frame> {
    let sorted;
    let events = if events.windows(2).all(|w| w[0].t_us <= w[1].t_us) {
        events
    } else {
        let mut v = events.to_vec();
        v.sort_by_key(|e| e.t_us);
        sorted = v;
        &sorted
    };
    request_times
        .iter()
        .map(|&start| {
            let end = start.saturating_add(duration_us);
            let lo = events.partition_point(|e| e.t_us < start);
            let hi = events.partition_point(|e| e.t_us < end);
            let evs =
                events[lo..hi].iter().map(|e| PacketEvent { t_us: e.t_us - start, size_bytes: e.size_bytes }).collect();
            Frame::new(evs, duration_us, None)
        })
        .collect()
}

/// [`slice_frames`] with a label attached to each frame.
pub fn slice_labeled_frames(events: &[PacketEvent], requests: &[(u64, String)], duration_us: u64) -> Vec<Frame> {
    let times: Vec<u64> = requests.iter().map(|(t, _)| *t).collect();
    slice_frames(events, &times, duration_us)
        .into_iter()
        .zip(requests)
        .map(|(mut f, (_, label))| {
            f.label = Some(label.clone());
            f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(t: u64, rxb: u64, txb: u64, rxp: u64, txp: u64) -> CounterSample {
        CounterSample { t_us: t, rx_bytes: rxb, tx_bytes: txb, rx_pkts: rxp, tx_pkts: txp }
    }

    fn trace(samples: Vec<CounterSample>) -> CounterTrace {
        CounterTrace::new(Scope::Device, samples).unwrap()
    }

    #[test]
    fn single_difference() {
        let t = trace(vec![sample(0, 0, 0, 0, 0), sample(1000, 500, 0, 1, 0)]);
        let d = deltas(&t).unwrap();
        assert_eq!(d, vec![CounterDelta { t_us: 1000, rx_bytes: 500, tx_bytes: 0, rx_pkts: 1, tx_pkts: 0 }]);
    }

    #[test]
    fn constant_counters_give_zero_deltas() {
        let t = trace((0..5).map(|i| sample(i * 500, 42, 7, 3, 1)).collect());
        assert!(deltas(&t)
            .unwrap()
            .iter()
            .all(|d| d.rx_bytes == 0 && d.tx_bytes == 0 && d.rx_pkts == 0 && d.tx_pkts == 0));
    }

    #[test]
    fn three_sample_arithmetic() {
        let t = trace(vec![sample(0, 0, 0, 0, 0), sample(500, 100, 0, 1, 0), sample(1000, 250, 0, 2, 0)]);
        let rx: Vec<u64> = deltas(&t).unwrap().iter().map(|d| d.rx_bytes).collect();
        assert_eq!(rx, vec![100, 150]);
    }

    #[test]
    fn too_few_samples() {
        let t = trace(vec![sample(0, 0, 0, 0, 0)]);
        assert!(matches!(deltas(&t), Err(Error::EmptyTrace(1))));
        assert!(matches!(reconstruct_packet_events(&t), Err(Error::EmptyTrace(1))));
    }

    #[test]
    fn non_increasing_time_rejected() {
        let r = CounterTrace::new(Scope::App, vec![sample(5, 0, 0, 0, 0), sample(5, 1, 0, 1, 0)]);
        assert!(matches!(r, Err(Error::NonMonotonicTime { index: 1 })));
    }

    #[test]
    fn reset_is_error_and_split_point() {
        let t = trace(vec![
            sample(0, 0, 0, 0, 0),
            sample(500, 900, 10, 3, 1),
            sample(1000, 20, 0, 1, 0),
            sample(1500, 120, 0, 2, 0),
        ]);
        assert!(matches!(deltas(&t), Err(Error::CounterReset { index: 2 })));
        let parts = split_at_resets(&t);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].samples.len(), 2);
        assert_eq!(parts[1].samples[0].rx_bytes, 20);
        assert_eq!(deltas(&parts[1]).unwrap()[0].rx_bytes, 100);
    }

    #[test]
    fn even_split() {
        let t = trace(vec![sample(0, 0, 0, 0, 0), sample(500, 300, 0, 2, 0)]);
        let ev = reconstruct_packet_events(&t).unwrap();
        assert_eq!(ev, vec![PacketEvent::incoming(500, 150), PacketEvent::incoming(500, 150)]);
    }

    #[test]
    fn orphan_bytes_attach_forward() {
        let t = trace(vec![sample(0, 0, 0, 0, 0), sample(500, 100, 0, 0, 0), sample(1000, 100, 0, 1, 0)]);
        let ev = reconstruct_packet_events(&t).unwrap();
        assert_eq!(ev, vec![PacketEvent::incoming(1000, 100)]);
    }

    #[test]
    fn remainder_on_last() {
        let t = trace(vec![sample(0, 0, 0, 0, 0), sample(500, 0, 100, 0, 3)]);
        let sizes: Vec<i64> = reconstruct_packet_events(&t).unwrap().iter().map(|e| e.size_bytes).collect();
        assert_eq!(sizes, vec![-33, -33, -34]);
    }

    #[test]
    fn orphan_bytes_beyond_window_kept_as_standalone_event() {
        let t = trace(vec![sample(0, 0, 0, 0, 0), sample(1_000, 80, 0, 0, 0), sample(200_000, 80, 0, 1, 0)]);
        let ev = reconstruct_packet_events(&t).unwrap();
        assert_eq!(ev, vec![PacketEvent::incoming(1_000, 80)]);
    }

    #[test]
    fn lagging_packet_count_matches_earlier_bytes() {
        let events = vec![PacketEvent::incoming(10_000, 700), PacketEvent::outgoing(90_000, 60)];
        let spec = SamplingSpec { period_us: 500, packet_lag_us: 3_000 };
        let t = CounterTrace::from_events(Scope::Device, &events, spec, 0, 200_000);
        let ev = reconstruct_packet_events(&t).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].size_bytes, 700);
        assert_eq!(ev[1].size_bytes, -60);
        assert!(ev[0].t_us >= 10_000 && ev[0].t_us <= 13_500);
    }

    #[test]
    fn fewer_bytes_than_packets_never_emits_zero() {
        let t = trace(vec![sample(0, 0, 0, 0, 0), sample(500, 2, 0, 5, 0)]);
        let ev = reconstruct_packet_events(&t).unwrap();
        assert_eq!(ev.len(), 2);
        assert!(ev.iter().all(|e| e.size_bytes != 0));
    }

    #[test]
    fn frames_basic() {
        let s = 1_000_000;
        let events = vec![PacketEvent::incoming(s, 10), PacketEvent::incoming(31 * s, 20)];
        let frames = slice_frames(&events, &[0, 30 * s], 30 * s);
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].events, vec![PacketEvent::incoming(s, 10)]);
        assert_eq!(frames[1].events, vec![PacketEvent::incoming(s, 20)]);
    }

    #[test]
    fn empty_frame_and_half_open_boundary() {
        let s = 1_000_000;
        let events = vec![PacketEvent::incoming(30 * s, 10)];
        let frames = slice_frames(&events, &[0, 100 * s], 30 * s);
        assert!(frames[0].is_empty());
        assert!(frames[1].is_empty());
        let frames = slice_frames(&events, &[30 * s], 30 * s);
        assert_eq!(frames[0].events[0].t_us, 0);
    }

    #[test]
    fn labeled_frames_carry_label() {
        let events = vec![PacketEvent::outgoing(5, 10)];
        let f = slice_labeled_frames(&events, &[(0, "a.com".into())], 10);
        assert_eq!(f[0].label.as_deref(), Some("a.com"));
    }

    proptest! {
        #[test]
        fn roundtrip_one_packet_per_interval(
            gaps in prop::collection::vec(1u64..40, 1..60),
            sizes in prop::collection::vec(1i64..3000, 60),
            dirs in prop::collection::vec(any::<bool>(), 60),
        ) {
            let period = 500u64;
            let mut t = 0u64;
            let mut events = Vec::new();
            for (i, g) in gaps.iter().enumerate() {
                t += g * period;
                let s = if dirs[i] { sizes[i] } else { -sizes[i] };
                events.push(PacketEvent { t_us: t + 17, size_bytes: s });
            }
            let spec = SamplingSpec { period_us: period, packet_lag_us: 0 };
            let trace = CounterTrace::from_events(Scope::Device, &events, spec, 0, t + 10 * period);
            let rec = reconstruct_packet_events(&trace).unwrap();
            prop_assert_eq!(rec.len(), events.len());
            for (a, b) in events.iter().zip(&rec) {
                prop_assert_eq!(a.size_bytes, b.size_bytes);
                prop_assert!(b.t_us >= a.t_us && b.t_us - a.t_us <= period);
            }
        }

        #[test]
        fn byte_totals_conserved(
            raw in prop::collection::vec((0u64..5, 0u64..2000, 0u64..4, 0u64..2000, 0u64..4), 2..80),
            window in 0u64..5_000,
        ) {
            let mut acc = CounterSample::default();
            let mut samples = vec![acc];
            for (i, (dt, rb, rp, tb, tp)) in raw.iter().enumerate() {
                acc.t_us += 500 * (dt + 1);
                acc.rx_bytes += rb;
                acc.rx_pkts += rp;
                acc.tx_bytes += tb;
                acc.tx_pkts += tp;
                let _ = i;
                samples.push(acc);
            }
            let trace = CounterTrace::new(Scope::Device, samples).unwrap();
            let ev = reconstruct_with_window(&trace, window).unwrap();
            let (rx, tx) = trace.total_bytes();
            let inc: i64 = ev.iter().filter(|e| e.size_bytes > 0).map(|e| e.size_bytes).sum();
            let out: i64 = ev.iter().filter(|e| e.size_bytes < 0).map(|e| -e.size_bytes).sum();
            prop_assert_eq!(inc as u64, rx);
            prop_assert_eq!(out as u64, tx);
            prop_assert!(ev.iter().all(|e| e.size_bytes != 0));
        }

        #[test]
        fn reslicing_a_frame_is_identity(
            times in prop::collection::vec(0u64..30_000_000, 0..50),
        ) {
            let mut times = times;
            times.sort();
            let events: Vec<PacketEvent> =
                times.iter().map(|&t| PacketEvent::incoming(t, 100)).collect();
            let frame = Frame::new(events, 30_000_000, None);
            let again = slice_frames(&frame.events, &[0], frame.duration_us);
            prop_assert_eq!(&again[0], &frame);
        }
    }
}
