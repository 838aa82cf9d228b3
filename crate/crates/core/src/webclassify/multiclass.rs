//! Multi-class identification by recursive halving (cascade) and by pairwise
//! elimination rounds (tree). Both train on a per-URL 80% split and report on
//! the held-out 20%.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{one_vs_one_matrix, pick, CcrMatrix, Dataset, EvalConfig};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::svm::FrameClassifier;
use crate::trace::Frame;

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeSelection {
    Random,
    /// Seed URL at random, then keep adding the URL with the highest mean
    /// pairwise CCR against the group to the same group until it is half full.
    Greedy,
    /// Seed URL at random into one group, its highest-CCR partner into the
    /// other; repeat over the remaining URLs.
    GreedyPaired,
    /// Seed URL at random, then keep adding the URL with the lowest mean
    /// pairwise CCR (the most confusable one) until half full.
    GreedySimilar,
}

impl CascadeSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            CascadeSelection::Random => "random",
            CascadeSelection::Greedy => "greedy",
            CascadeSelection::GreedyPaired => "greedy_paired",
            CascadeSelection::GreedySimilar => "greedy_similar",
        }
    }
}

impl std::str::FromStr for CascadeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "random" => Ok(CascadeSelection::Random),
            "greedy" => Ok(CascadeSelection::Greedy),
            "greedy_paired" => Ok(CascadeSelection::GreedyPaired),
            "greedy_similar" => Ok(CascadeSelection::GreedySimilar),
            other => Err(Error::Config(format!("unknown cascade selection `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeSelection {
    Random,
    /// Lexicographic pairing of URL ids.
    Fixed,
    /// First URL at random, partner with the highest pairwise CCR.
    Greedy,
}

impl TreeSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            TreeSelection::Random => "random",
            TreeSelection::Fixed => "fixed",
            TreeSelection::Greedy => "greedy",
        }
    }
}

impl std::str::FromStr for TreeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(TreeSelection::Random),
            "fixed" => Ok(TreeSelection::Fixed),
            "greedy" => Ok(TreeSelection::Greedy),
            other => Err(Error::Config(format!("unknown tree selection `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    /// 1-based depth.
    pub stage_index: usize,
    /// URLs still in play when the stage starts.
    pub group_size: usize,
    /// Test frames still correct before / after this stage.
    pub entered: usize,
    pub survived: usize,
    /// `survived / entered`.
    pub stage_ccr: f64,
    /// `survived / total`.
    pub successive_ccr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiReport {
    pub scheme: String,
    pub selection: String,
    pub stages: Vec<StageReport>,
    pub correct: usize,
    pub total: usize,
    pub final_ccr: f64,
    pub chance: f64,
}

fn check(dataset: &Dataset) -> Result<()> {
    if dataset.len() < 2 {
        return Err(Error::InsufficientData(format!("need >= 2 URLs, got {}", dataset.len())));
    }
    Ok(())
}

fn test_items(test: &Dataset) -> Vec<(usize, &Frame)> {
    test.frames.iter().enumerate().flat_map(|(u, fs)| fs.iter().map(move |f| (u, f))).collect()
}

/// Builds stage reports from the stage at which each test frame was lost.
fn stage_reports(lost_at: &[Option<usize>], group_sizes: &[usize]) -> (Vec<StageReport>, usize) {
    let total = lost_at.len();
    let mut stages = Vec::with_capacity(group_sizes.len());
    let mut alive = total;
    for (s, &size) in group_sizes.iter().enumerate() {
        let lost = lost_at.iter().filter(|l| **l == Some(s)).count();
        let survived = alive - lost;
        stages.push(StageReport {
            stage_index: s + 1,
            group_size: size,
            entered: alive,
            survived,
            stage_ccr: if alive == 0 { 0.0 } else { survived as f64 / alive as f64 },
            successive_ccr: if total == 0 { 0.0 } else { survived as f64 / total as f64 },
        });
        alive = survived;
    }
    (stages, alive)
}

fn argmax_by(cands: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let mut best = cands[0];
    let mut best_v = score(best);
    for &c in &cands[1..] {
        let v = score(c);
        if v > best_v {
            best = c;
            best_v = v;
        }
    }
    best
}

fn split_group(
    urls: &[usize],
    sel: CascadeSelection,
    matrix: Option<&CcrMatrix>,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let half = urls.len().div_ceil(2);
    match sel {
        CascadeSelection::Random => {
            let mut v = urls.to_vec();
            v.shuffle(rng);
            let right = v.split_off(half);
            (v, right)
        }
        CascadeSelection::Greedy | CascadeSelection::GreedySimilar => {
            let m = matrix.expect("greedy needs a matrix");
            let sign = if sel == CascadeSelection::Greedy { 1.0 } else { -1.0 };
            let mut group = vec![pick(urls, rng)];
            let mut rest: Vec<usize> = urls.iter().copied().filter(|u| *u != group[0]).collect();
            while group.len() < half {
                let next = argmax_by(&rest, |u| sign * m.mean_against(u, &group));
                group.push(next);
                rest.retain(|&u| u != next);
            }
            (group, rest)
        }
        CascadeSelection::GreedyPaired => {
            let m = matrix.expect("greedy needs a matrix");
            let mut rest = urls.to_vec();
            let (mut left, mut right) = (Vec::new(), Vec::new());
            while !rest.is_empty() {
                let u = pick(&rest, rng);
                rest.retain(|&x| x != u);
                left.push(u);
                if !rest.is_empty() {
                    let v = argmax_by(&rest, |x| m.mean_against(u, &[x]));
                    rest.retain(|&x| x != v);
                    right.push(v);
                }
            }
            (left, right)
        }
    }
}

struct CascadeNode {
    urls: Vec<usize>,
    children: Option<(usize, usize)>,
    depth: usize,
}

fn group_frames<'a>(train: &'a Dataset, left: &[usize], right: &[usize]) -> (Vec<&'a Frame>, Vec<i8>) {
    let mut frames = Vec::new();
    let mut y = Vec::new();
    for (set, label) in [(left, 1i8), (right, -1i8)] {
        for &u in set {
            for f in &train.frames[u] {
                frames.push(f);
                y.push(label);
            }
        }
    }
    (frames, y)
}

/// Recursive halving down to single URLs. Stage `s` is depth `s` of the
/// split tree.
pub fn cascade_classify(
    dataset: &Dataset,
    selection: CascadeSelection,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<MultiReport> {
    check(dataset)?;
    let (train, test) = dataset.split(TRAIN_FRACTION, seed);
    let matrix = match selection {
        CascadeSelection::Random => None,
        _ => Some(one_vs_one_matrix(&train, cfg, rng::mix(seed, 1))?),
    };

    let mut rng = rng::derived(seed, 2);
    let mut nodes = vec![CascadeNode { urls: (0..dataset.len()).collect(), children: None, depth: 0 }];
    let mut i = 0;
    while i < nodes.len() {
        if nodes[i].urls.len() > 1 {
            let (l, r) = split_group(&nodes[i].urls, selection, matrix.as_ref(), &mut rng);
            let depth = nodes[i].depth + 1;
            let li = nodes.len();
            nodes.push(CascadeNode { urls: l, children: None, depth });
            nodes.push(CascadeNode { urls: r, children: None, depth });
            nodes[i].children = Some((li, li + 1));
        }
        i += 1;
    }

    let internal: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].children.is_some()).collect();
    let trained: Vec<Result<FrameClassifier>> = internal
        .par_iter()
        .map(|&i| {
            let (l, r) = nodes[i].children.unwrap();
            let (frames, y) = group_frames(&train, &nodes[l].urls, &nodes[r].urls);
            FrameClassifier::fit(&frames, &y, &cfg.transform, &cfg.params)
        })
        .collect();
    let mut classifiers = BTreeMap::new();
    for (&i, c) in internal.iter().zip(trained) {
        classifiers.insert(i, c?);
    }

    let n_stages = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    let mut group_sizes = vec![0; n_stages];
    for n in nodes.iter().filter(|n| n.children.is_some()) {
        group_sizes[n.depth] = group_sizes[n.depth].max(n.urls.len());
    }

    let items = test_items(&test);
    let lost_at: Vec<Result<Option<usize>>> = items
        .par_iter()
        .map(|&(u, f)| {
            let mut at = 0;
            while let Some((l, r)) = nodes[at].children {
                let side = if classifiers[&at].predict(f)? > 0 { l } else { r };
                if !nodes[side].urls.contains(&u) {
                    return Ok(Some(nodes[at].depth));
                }
                at = side;
            }
            Ok(None)
        })
        .collect();
    let lost_at = lost_at.into_iter().collect::<Result<Vec<_>>>()?;
    let (stages, correct) = stage_reports(&lost_at, &group_sizes);
    Ok(MultiReport {
        scheme: "cascade".into(),
        selection: selection.as_str().into(),
        stages,
        correct,
        total: items.len(),
        final_ccr: if items.is_empty() { 0.0 } else { correct as f64 / items.len() as f64 },
        chance: 1.0 / dataset.len() as f64,
    })
}

fn first_round_order(n: usize, sel: TreeSelection, matrix: Option<&CcrMatrix>, rng: &mut Rng) -> Vec<usize> {
    match sel {
        TreeSelection::Fixed => (0..n).collect(),
        TreeSelection::Random => {
            let mut v: Vec<usize> = (0..n).collect();
            v.shuffle(rng);
            v
        }
        TreeSelection::Greedy => {
            let m = matrix.expect("greedy needs a matrix");
            let mut rest: Vec<usize> = (0..n).collect();
            let mut order = Vec::with_capacity(n);
            while !rest.is_empty() {
                let u = pick(&rest, rng);
                rest.retain(|&x| x != u);
                order.push(u);
                if !rest.is_empty() {
                    let v = argmax_by(&rest, |x| m.mean_against(u, &[x]));
                    rest.retain(|&x| x != v);
                    order.push(v);
                }
            }
            order
        }
    }
}

/// Pairwise elimination: URLs meet in a fixed bracket, the classifier for each
/// match picks a winner per test frame, winners meet in the next round. An
/// odd slot out gets a bye.
pub fn tree_classify(dataset: &Dataset, selection: TreeSelection, cfg: &EvalConfig, seed: u64) -> Result<MultiReport> {
    check(dataset)?;
    let n = dataset.len();
    let (train, test) = dataset.split(TRAIN_FRACTION, seed);
    let matrix = match selection {
        TreeSelection::Greedy => Some(one_vs_one_matrix(&train, cfg, rng::mix(seed, 1))?),
        _ => None,
    };
    let mut rng = rng::derived(seed, 2);
    let order = first_round_order(n, selection, matrix.as_ref(), &mut rng);

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let trained: Vec<Result<FrameClassifier>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (frames, y) = group_frames(&train, &[i], &[j]);
            FrameClassifier::fit(&frames, &y, &cfg.transform, &cfg.params)
        })
        .collect();
    let mut models = BTreeMap::new();
    for (&p, m) in pairs.iter().zip(trained) {
        models.insert(p, m?);
    }

    let mut group_sizes = Vec::new();
    let mut k = n;
    while k > 1 {
        group_sizes.push(k);
        k = k.div_ceil(2);
    }

    let items = test_items(&test);
    let lost_at: Vec<Result<Option<usize>>> = items
        .par_iter()
        .map(|&(u, f)| {
            let mut alive = order.clone();
            let mut stage = 0;
            while alive.len() > 1 {
                let mut next = Vec::with_capacity(alive.len().div_ceil(2));
                for m in alive.chunks(2) {
                    if let [a, b] = *m {
                        let (lo, hi) = (a.min(b), a.max(b));
                        let winner = if models[&(lo, hi)].predict(f)? > 0 { lo } else { hi };
                        next.push(winner);
                    } else {
                        next.push(m[0]);
                    }
                }
                if !next.contains(&u) {
                    return Ok(Some(stage));
                }
                alive = next;
                stage += 1;
            }
            Ok(None)
        })
        .collect();
    let lost_at = lost_at.into_iter().collect::<Result<Vec<_>>>()?;
    let (stages, correct) = stage_reports(&lost_at, &group_sizes);
    Ok(MultiReport {
        scheme: "tree".into(),
        selection: selection.as_str().into(),
        stages,
        correct,
        total: items.len(),
        final_ccr: if items.is_empty() { 0.0 } else { correct as f64 / items.len() as f64 },
        chance: 1.0 / n as f64,
    })
}
