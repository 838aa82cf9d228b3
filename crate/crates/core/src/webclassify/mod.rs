//! Website identification schemes built from binary SVMs: the pairwise CCR
//! matrix, one-vs-all, and the multi-class cascade and pairwise tree.

mod multiclass;
mod report;

pub use multiclass::{cascade_classify, tree_classify, CascadeSelection, MultiReport, StageReport, TreeSelection};
pub use report::{ccr_matrix_csv, ccr_matrix_table, stage_report_csv};

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Transform;
use crate::rng;
use crate::svm::{cross_validate, CvReport, SvmParams};
use crate::trace::Frame;

/// Labeled frames grouped by URL, URLs in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub urls: Vec<String>,
    pub frames: Vec<Vec<Frame>>,
}

impl Dataset {
    /// Groups frames by label; unlabeled frames are rejected.
    pub fn from_frames(frames: impl IntoIterator<Item = Frame>) -> Result<Dataset> {
        let mut by: BTreeMap<String, Vec<Frame>> = BTreeMap::new();
        for f in frames {
            let label = f.label.clone().ok_or_else(|| Error::InvalidInput("frame without a label".into()))?;
            by.entry(label).or_default().push(f);
        }
        Ok(Dataset { urls: by.keys().cloned().collect(), frames: by.into_values().collect() })
    }

    pub fn len(&self) -> usize {
        self.urls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.urls.is_empty()
    }

    pub fn index_of(&self, url: &str) -> Option<usize> {
        self.urls.binary_search_by(|u| u.as_str().cmp(url)).ok()
    }

    pub fn subset(&self, urls: &[usize]) -> Dataset {
        let mut pick: Vec<usize> = urls.to_vec();
        pick.sort_by(|&a, &b| self.urls[a].cmp(&self.urls[b]));
        Dataset {
            urls: pick.iter().map(|&i| self.urls[i].clone()).collect(),
            frames: pick.iter().map(|&i| self.frames[i].clone()).collect(),
        }
    }

    /// Per-URL seeded split; the first part gets `round(train_fraction * n)`
    /// frames of each URL.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, (url, frames)) in self.urls.iter().zip(&self.frames).enumerate() {
            let mut idx: Vec<usize> = (0..frames.len()).collect();
            idx.shuffle(&mut rng::derived(seed, url_hash(url) ^ i as u64));
            let cut = (train_fraction * frames.len() as f64).round() as usize;
            let (a, b) = idx.split_at(cut.min(frames.len()));
            let mut a = a.to_vec();
            let mut b = b.to_vec();
            a.sort_unstable();
            b.sort_unstable();
            train.push(a.iter().map(|&j| frames[j].clone()).collect());
            test.push(b.iter().map(|&j| frames[j].clone()).collect());
        }
        (Dataset { urls: self.urls.clone(), frames: train }, Dataset { urls: self.urls.clone(), frames: test })
    }
}

/// FNV-1a, used to give a URL pair a seed that does not depend on ordering.
pub(crate) fn url_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn pair_seed(seed: u64, a: &str, b: &str) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    rng::mix(seed, url_hash(lo) ^ url_hash(hi).rotate_left(17))
}

/// Settings shared by every binary evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub params: SvmParams,
    pub transform: Transform,
    pub folds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { params: SvmParams::default(), transform: Transform::default(), folds: 5 }
    }
}

/// Cross-validated CCR of one URL pair.
pub fn one_vs_one(dataset: &Dataset, a: usize, b: usize, cfg: &EvalConfig, seed: u64) -> Result<CvReport> {
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for i in [a, b] {
        for f in &dataset.frames[i] {
            frames.push(f.clone());
            labels.push(dataset.urls[i].clone());
        }
    }
    let s = pair_seed(seed, &dataset.urls[a], &dataset.urls[b]);
    cross_validate(&frames, &labels, cfg.folds, &cfg.params, &cfg.transform, s)
}

/// Pairwise CCRs. Failing pairs get an error entry instead of a value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcrMatrix {
    pub url_ids: Vec<String>,
    /// Full symmetric matrix; the diagonal and failed pairs are `None`.
    pub values: Vec<Vec<Option<f64>>>,
    pub errors: BTreeMap<String, String>,
}

impl CcrMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.url_ids.iter().position(|u| u == a)?;
        let j = self.url_ids.iter().position(|u| u == b)?;
        self.values[i][j]
    }

    /// Upper-triangle cells with a value.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let n = self.url_ids.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if let Some(v) = self.values[i][j] {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn mean(&self) -> Option<f64> {
        let p = self.pairs();
        if p.is_empty() {
            None
        } else {
            Some(p.iter().map(|c| c.2).sum::<f64>() / p.len() as f64)
        }
    }

    /// Mean CCR of URL `i` against the URLs in `others`.
    pub fn mean_against(&self, i: usize, others: &[usize]) -> f64 {
        let v: Vec<f64> = others.iter().filter(|&&j| j != i).filter_map(|&j| self.values[i][j]).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

pub fn one_vs_one_matrix(dataset: &Dataset, cfg: &EvalConfig, seed: u64) -> Result<CcrMatrix> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need >= 2 URLs, got {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<Result<CvReport>> = pairs.par_iter().map(|&(i, j)| one_vs_one(dataset, i, j, cfg, seed)).collect();
    let mut values = vec![vec![None; n]; n];
    let mut errors = BTreeMap::new();
    for (&(i, j), r) in pairs.iter().zip(results) {
        match r {
            Ok(rep) => {
                values[i][j] = Some(rep.ccr);
                values[j][i] = Some(rep.ccr);
            }
            Err(e) => {
                errors.insert(format!("{}|{}", dataset.urls[i], dataset.urls[j]), e.to_string());
            }
        }
    }
    Ok(CcrMatrix { url_ids: dataset.urls.clone(), values, errors })
}

pub const REST_LABEL: &str = "*rest*";

/// Target URL against every other URL pooled. The pool is subsampled to the
/// target's frame count, drawing evenly across pooled URLs.
pub fn one_vs_all(dataset: &Dataset, target_url: &str, cfg: &EvalConfig, seed: u64) -> Result<CvReport> {
    let t = dataset
        .index_of(target_url)
        .ok_or_else(|| Error::InvalidInput(format!("target `{target_url}` not in dataset")))?;
    let rest: Vec<usize> = (0..dataset.len()).filter(|&i| i != t).collect();
    if rest.is_empty() {
        return Err(Error::InsufficientData("no URLs besides the target".into()));
    }
    let want = dataset.frames[t].len();
    // a pool of one URL keeps its own label, so this reduces to one-vs-one
    let rest_label = if rest.len() == 1 { dataset.urls[rest[0]].clone() } else { REST_LABEL.to_string() };

    let mut rng = rng::derived(seed, url_hash(target_url));
    let mut queues: Vec<Vec<usize>> = rest
        .iter()
        .map(|&i| {
            let mut idx: Vec<usize> = (0..dataset.frames[i].len()).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    let pool_total: usize = queues.iter().map(Vec::len).sum();
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    if pool_total <= want {
        for (q, &i) in rest.iter().enumerate() {
            chosen.extend((0..dataset.frames[i].len()).map(|j| (q, j)));
        }
    } else {
        let mut order: Vec<usize> = (0..rest.len()).collect();
        while chosen.len() < want {
            order.shuffle(&mut rng);
            for &q in &order {
                if chosen.len() == want {
                    break;
                }
                if let Some(j) = queues[q].pop() {
                    chosen.push((q, j));
                }
            }
        }
        chosen.sort_unstable();
    }

    let mut frames: Vec<Frame> = dataset.frames[t].clone();
    let mut labels = vec![target_url.to_string(); frames.len()];
    for (q, j) in chosen {
        frames.push(dataset.frames[rest[q]][j].clone());
        labels.push(rest_label.clone());
    }
    let s = if rest.len() == 1 { pair_seed(seed, target_url, &rest_label) } else { seed };
    cross_validate(&frames, &labels, cfg.folds, &cfg.params, &cfg.transform, s)
}

/// Random element helper shared by the multi-class schemes.
pub(crate) fn pick<T: Copy>(items: &[T], rng: &mut rng::Rng) -> T {
    *items.choose(rng).expect("non-empty")
}
