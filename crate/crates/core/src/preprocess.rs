//! Frame filtering and the three feature transforms.
//!
//! Feature transforms consume filtered frames of signed packet events
//! (positive = incoming). `packet_counts` is the 2-D (incoming, outgoing)
//! count; `tf_cosine` is a log term-frequency vector over signed packet sizes
//! with cosine normalization; `onion` is a fixed-layout statistical summary
//! with coarse rounding.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::io::{split_preamble, write_preamble};
use crate::trace::Frame;

pub const DEFAULT_CUTOFF_BYTES: u64 = 100;

/// Direction-change markers kept by the onion transform.
pub const ONION_MARKERS: usize = 16;
pub const ONION_DIM: usize = 2 * ONION_MARKERS + 6;

const BYTE_MARKER_STEP: f64 = 600.0;
const TOTAL_BYTES_STEP: f64 = 10_000.0;
const TOTAL_PKTS_STEP: f64 = 15.0;
const PERCENT_STEP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Onion,
    TfCosine,
    PacketCounts,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Onion => "onion",
            FeatureKind::TfCosine => "tf_cosine",
            FeatureKind::PacketCounts => "packet_counts",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "onion" => Ok(FeatureKind::Onion),
            "tf_cosine" | "tf" => Ok(FeatureKind::TfCosine),
            "packet_counts" | "counts" => Ok(FeatureKind::PacketCounts),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Keeps events with `|size| >= cutoff_bytes`.
pub fn filter_packets(frame: &Frame, cutoff_bytes: u64) -> Frame {
    Frame {
        events: frame.events.iter().copied().filter(|e| e.magnitude() >= cutoff_bytes).collect(),
        duration_us: frame.duration_us,
        label: frame.label.clone(),
    }
}

pub fn transform_packet_counts(frame: &Frame) -> FeatureVector {
    let incoming = frame.events.iter().filter(|e| e.size_bytes > 0).count();
    let outgoing = frame.events.iter().filter(|e| e.size_bytes < 0).count();
    FeatureVector { kind: FeatureKind::PacketCounts, values: vec![incoming as f64, outgoing as f64] }
}

/// Ordered set of signed packet sizes indexing a tf-cosine vector.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub sizes: Vec<i64>,
}

impl Vocabulary {
    pub fn build<'a>(frames: impl IntoIterator<Item = &'a Frame>) -> Vocabulary {
        let set: BTreeSet<i64> = frames.into_iter().flat_map(|f| f.events.iter().map(|e| e.size_bytes)).collect();
        Vocabulary { sizes: set.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

/// tf-cosine over the frame's own sizes.
pub fn transform_tf_cosine(frame: &Frame) -> FeatureVector {
    transform_tf_cosine_with(frame, &Vocabulary::build([frame]))
}

/// `log(1 + f)` per vocabulary size, divided by the Euclidean norm. Sizes
/// outside the vocabulary are dropped; an all-zero vector stays zero.
pub fn transform_tf_cosine_with(frame: &Frame, vocab: &Vocabulary) -> FeatureVector {
    let mut counts = vec![0u64; vocab.len()];
    for e in &frame.events {
        if let Ok(i) = vocab.sizes.binary_search(&e.size_bytes) {
            counts[i] += 1;
        }
    }
    let mut values: Vec<f64> = counts.iter().map(|&f| (f as f64).ln_1p()).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    FeatureVector { kind: FeatureKind::TfCosine, values }
}

/// Nearest multiple of `step`, ties toward +inf.
pub fn round_to(x: f64, step: f64) -> f64 {
    (x / step + 0.5).floor() * step
}

/// Fixed layout: 16 byte markers, 16 packet markers, total in/out bytes,
/// total in/out packets, distinct packet sizes, incoming percentage.
///
/// A marker is written each time the direction changes and describes the run
/// that just ended: its signed byte sum (rounded to 600) and its packet count.
pub fn transform_onion(frame: &Frame) -> FeatureVector {
    let mut byte_markers = Vec::new();
    let mut pkt_markers = Vec::new();
    let mut run: Option<(bool, i64, u64)> = None;
    for e in &frame.events {
        let incoming = e.size_bytes > 0;
        run = match run {
            Some((dir, bytes, pkts)) if dir == incoming => Some((dir, bytes + e.size_bytes, pkts + 1)),
            Some((_, bytes, pkts)) => {
                byte_markers.push(round_to(bytes as f64, BYTE_MARKER_STEP));
                pkt_markers.push(pkts as f64);
                Some((incoming, e.size_bytes, 1))
            }
            None => Some((incoming, e.size_bytes, 1)),
        };
    }
    byte_markers.resize(ONION_MARKERS, 0.0);
    pkt_markers.resize(ONION_MARKERS, 0.0);

    let (mut in_bytes, mut out_bytes, mut in_pkts, mut out_pkts) = (0u64, 0u64, 0u64, 0u64);
    for e in &frame.events {
        if e.size_bytes > 0 {
            in_bytes += e.magnitude();
            in_pkts += 1;
        } else {
            out_bytes += e.magnitude();
            out_pkts += 1;
        }
    }
    let distinct: BTreeSet<u64> = frame.events.iter().map(|e| e.magnitude()).collect();
    let total = in_pkts + out_pkts;
    let pct = if total == 0 { 0.0 } else { 100.0 * in_pkts as f64 / total as f64 };

    let mut values = byte_markers;
    values.extend(pkt_markers);
    values.extend([
        round_to(in_bytes as f64, TOTAL_BYTES_STEP),
        round_to(out_bytes as f64, TOTAL_BYTES_STEP),
        round_to(in_pkts as f64, TOTAL_PKTS_STEP),
        round_to(out_pkts as f64, TOTAL_PKTS_STEP),
        distinct.len() as f64,
        round_to(pct, PERCENT_STEP),
    ]);
    FeatureVector { kind: FeatureKind::Onion, values }
}

/// Filter cutoff plus transform; `fit` learns whatever the transform needs
/// from training frames (the tf-cosine vocabulary).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub kind: FeatureKind,
    pub cutoff_bytes: u64,
}

impl Default for Transform {
    fn default() -> Self {
        Transform { kind: FeatureKind::PacketCounts, cutoff_bytes: DEFAULT_CUTOFF_BYTES }
    }
}

impl Transform {
    pub fn new(kind: FeatureKind, cutoff_bytes: u64) -> Self {
        Transform { kind, cutoff_bytes }
    }

    pub fn fit<'a>(&self, training: impl IntoIterator<Item = &'a Frame>) -> FittedTransform {
        let vocab = match self.kind {
            FeatureKind::TfCosine => {
                let filtered: Vec<Frame> = training.into_iter().map(|f| filter_packets(f, self.cutoff_bytes)).collect();
                Vocabulary::build(&filtered)
            }
            _ => Vocabulary::default(),
        };
        FittedTransform { transform: *self, vocab }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    pub transform: Transform,
    pub vocab: Vocabulary,
}

impl FittedTransform {
    pub fn apply(&self, frame: &Frame) -> FeatureVector {
        let f = filter_packets(frame, self.transform.cutoff_bytes);
        match self.transform.kind {
            FeatureKind::PacketCounts => transform_packet_counts(&f),
            FeatureKind::TfCosine => transform_tf_cosine_with(&f, &self.vocab),
            FeatureKind::Onion => transform_onion(&f),
        }
    }

    pub fn dim(&self) -> usize {
        match self.transform.kind {
            FeatureKind::PacketCounts => 2,
            FeatureKind::TfCosine => self.vocab.len(),
            FeatureKind::Onion => ONION_DIM,
        }
    }
}

/// Sidecar metadata for a feature dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub kind: FeatureKind,
    pub cutoff_bytes: u64,
    pub frame_us: u64,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabulary: Vec<i64>,
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
}

/// One row per frame: label, then the feature values.
pub fn write_features<W: Write>(mut w: W, rows: &[(String, FeatureVector)], preamble: &[String]) -> Result<()> {
    write_preamble(&mut w, preamble)?;
    let dim = rows.first().map_or(0, |(_, v)| v.values.len());
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    csv.write_record(&header)?;
    for (label, v) in rows {
        if v.values.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.values.len() });
        }
        let mut rec = vec![label.clone()];
        rec.extend(v.values.iter().map(|x| format!("{x}")));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(mut r: R, kind: FeatureKind) -> Result<Vec<(String, FeatureVector)>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let (_, body) = split_preamble(&text);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::Schema("feature file must start with a `label` column".into()));
    }
    let dim = header.len() - 1;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::Schema(format!("row has {} columns, expected {}", rec.len(), dim + 1)));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Schema(format!("bad feature value `{s}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((rec[0].to_string(), FeatureVector { kind, values }));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::PacketEvent;
    use proptest::prelude::*;

    fn frame(sizes: &[i64]) -> Frame {
        let events =
            sizes.iter().enumerate().map(|(i, &s)| PacketEvent { t_us: i as u64 * 10, size_bytes: s }).collect();
        Frame::new(events, 30_000_000, None)
    }

    #[test]
    fn filter_examples() {
        let f = frame(&[50, 150, -200]);
        let sizes: Vec<i64> = filter_packets(&f, 100).events.iter().map(|e| e.size_bytes).collect();
        assert_eq!(sizes, vec![150, -200]);
        assert_eq!(filter_packets(&f, 0), f);
        assert!(filter_packets(&frame(&[10, -20]), 100).is_empty());
    }

    #[test]
    fn packet_counts_examples() {
        let mut sizes = vec![300; 10];
        sizes.extend([-150; 5]);
        assert_eq!(transform_packet_counts(&frame(&sizes)).values, vec![10.0, 5.0]);
        assert_eq!(transform_packet_counts(&frame(&[])).values, vec![0.0, 0.0]);
    }

    #[test]
    fn tf_cosine_examples() {
        assert_eq!(transform_tf_cosine(&frame(&[500, 500, 500])).values, vec![1.0]);
        let v = transform_tf_cosine(&frame(&[500, -200])).values;
        for x in v {
            assert!((x - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        }
        // {a:3, b:1} -> (ln 4, ln 2) / |.| = (2, 1)/sqrt 5
        let v = transform_tf_cosine(&frame(&[700, 700, 700, 900])).values;
        assert!((v[0] - 0.894_427_190_999_916).abs() < 1e-12);
        assert!((v[1] - 0.447_213_595_499_958).abs() < 1e-12);
        assert!(transform_tf_cosine(&frame(&[])).values.is_empty());
    }

    #[test]
    fn tf_cosine_drops_unseen_sizes() {
        let vocab = Vocabulary { sizes: vec![-300, 500] };
        let v = transform_tf_cosine_with(&frame(&[500, 999]), &vocab);
        assert_eq!(v.values, vec![0.0, 1.0]);
        let z = transform_tf_cosine_with(&frame(&[999]), &vocab);
        assert_eq!(z.values, vec![0.0, 0.0]);
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(round_to(12345.0, 10_000.0), 10_000.0);
        assert_eq!(round_to(15_000.0, 10_000.0), 20_000.0);
        assert_eq!(round_to(14_999.0, 10_000.0), 10_000.0);
        assert_eq!(round_to(7.0, 15.0), 0.0);
        assert_eq!(round_to(7.5, 15.0), 15.0);
        assert_eq!(round_to(8.0, 15.0), 15.0);
        assert_eq!(round_to(299.0, 600.0), 0.0);
        assert_eq!(round_to(300.0, 600.0), 600.0);
        assert_eq!(round_to(-300.0, 600.0), 0.0);
        assert_eq!(round_to(-301.0, 600.0), -600.0);
        assert_eq!(round_to(72.5, 5.0), 75.0);
        assert_eq!(round_to(72.4, 5.0), 70.0);
    }

    #[test]
    fn onion_layout() {
        let v = transform_onion(&frame(&[12345])).values;
        assert_eq!(v.len(), ONION_DIM);
        assert_eq!(v[32], 10_000.0);

        let only_in = transform_onion(&frame(&[400, 500, 600])).values;
        assert!(only_in[..32].iter().all(|&x| x == 0.0));
        assert_eq!(only_in[37], 100.0);

        let mut sizes = vec![200; 7];
        sizes.extend([-300; 3]);
        let v = transform_onion(&frame(&sizes)).values;
        assert_eq!(v[37], 70.0);
        assert_eq!(v[34], 0.0); // 7 in packets -> 0
        assert_eq!(v[35], 0.0); // 3 out packets -> 0
        assert_eq!(v[36], 2.0); // distinct |size|: 200, 300
                                // one direction change: run of 7 x 200 = 1400 -> 1200, 7 packets
        assert_eq!(v[0], 1200.0);
        assert_eq!(v[16], 7.0);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn onion_marker_truncation() {
        let sizes: Vec<i64> = (0..40).map(|i| if i % 2 == 0 { 700 } else { -700 }).collect();
        let v = transform_onion(&frame(&sizes)).values;
        assert_eq!(v.len(), ONION_DIM);
        assert!(v[..16].iter().all(|&x| x.abs() == 600.0));
        assert!(v[16..32].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn fitted_transform_builds_vocab_from_training_only() {
        let t = Transform::new(FeatureKind::TfCosine, 100);
        let fitted = t.fit([&frame(&[500, 50, -300])]);
        assert_eq!(fitted.vocab.sizes, vec![-300, 500]);
        assert_eq!(fitted.dim(), 2);
        assert_eq!(fitted.apply(&frame(&[500, 800])).values, vec![0.0, 1.0]);
    }

    #[test]
    fn feature_dump_roundtrip() {
        let rows = vec![
            ("a".to_string(), FeatureVector { kind: FeatureKind::PacketCounts, values: vec![1.0, 2.5] }),
            ("b".to_string(), FeatureVector { kind: FeatureKind::PacketCounts, values: vec![3.0, 0.0] }),
        ];
        let mut buf = Vec::new();
        write_features(&mut buf, &rows, &["netside".into()]).unwrap();
        assert_eq!(read_features(buf.as_slice(), FeatureKind::PacketCounts).unwrap(), rows);
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        prop::collection::vec((1i64..3000, any::<bool>()), 0..80).prop_map(|v| {
            let sizes: Vec<i64> = v.into_iter().map(|(s, d)| if d { s } else { -s }).collect();
            frame(&sizes)
        })
    }

    proptest! {
        #[test]
        fn tf_cosine_unit_norm(f in arb_frame()) {
            let v = transform_tf_cosine(&f);
            if f.is_empty() {
                prop_assert_eq!(v.norm(), 0.0);
            } else {
                prop_assert!((v.norm() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn filter_idempotent(f in arb_frame(), cutoff in 0u64..2000) {
            let once = filter_packets(&f, cutoff);
            prop_assert_eq!(filter_packets(&once, cutoff), once);
        }

        #[test]
        fn packet_counts_ignore_order_and_sizes_above_cutoff(
            f in arb_frame(),
            bump in 0i64..5000,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let base = transform_packet_counts(&filter_packets(&f, 100));
            let mut shuffled = f.clone();
            shuffled.events.shuffle(&mut crate::rng::seeded(seed));
            for e in shuffled.events.iter_mut() {
                if e.magnitude() >= 100 {
                    e.size_bytes += e.size_bytes.signum() * bump;
                }
            }
            prop_assert_eq!(transform_packet_counts(&filter_packets(&shuffled, 100)), base);
        }

        #[test]
        fn onion_totals_stable_within_rounding_cell(cell in 0u64..20, offset in 0u64..5000, delta in 0u64..2500) {
            // both totals sit in [cell*10000 - 5000, cell*10000 + 5000)
            let lo = (cell * 10_000).saturating_sub(5000);
            let a = lo + offset;
            let b = (a + delta).min(cell * 10_000 + 4_999);
            let va = transform_onion(&frame(&[a.max(1) as i64])).values[32];
            let vb = transform_onion(&frame(&[b.max(1) as i64])).values[32];
            prop_assert_eq!(va, vb);
        }
    }
}
