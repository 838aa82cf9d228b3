use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{predict, train, SvmModel, SvmParams};
use crate::error::{Error, Result};
use crate::preprocess::{FittedTransform, Transform};
use crate::rng;
use crate::trace::Frame;

/// A transform fitted on training frames plus the SVM trained on its output.
#[derive(Debug, Clone)]
pub struct FrameClassifier {
    pub transform: FittedTransform,
    pub model: SvmModel,
}

impl FrameClassifier {
    pub fn fit(frames: &[&Frame], y: &[i8], transform: &Transform, params: &SvmParams) -> Result<FrameClassifier> {
        let fitted = transform.fit(frames.iter().copied());
        let x: Vec<Vec<f64>> = frames.iter().map(|f| fitted.apply(f).values).collect();
        let model = train(&x, y, params)?;
        Ok(FrameClassifier { transform: fitted, model })
    }

    pub fn decision_value(&self, frame: &Frame) -> Result<f64> {
        self.model.decision_value(&self.transform.apply(frame).values)
    }

    pub fn predict(&self, frame: &Frame) -> Result<i8> {
        Ok(predict(&self.model, &self.transform.apply(frame).values)?.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    /// Mean of the per-fold CCRs.
    pub ccr: f64,
    pub fold_ccrs: Vec<f64>,
    pub correct: usize,
    pub total: usize,
    /// Class names mapped to `-1` and `+1`.
    pub classes: (String, String),
}

/// Fold index per sample. Each class is shuffled and dealt round-robin, with
/// the starting fold rotated between classes to keep fold sizes even.
pub fn stratified_folds(class_of: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be >= 2, got {k}")));
    }
    let classes: BTreeSet<usize> = class_of.iter().copied().collect();
    let mut fold = vec![0; class_of.len()];
    let mut rng = rng::seeded(seed);
    let mut offset = 0;
    for c in classes {
        let mut idx: Vec<usize> = (0..class_of.len()).filter(|&i| class_of[i] == c).collect();
        if idx.len() < k {
            return Err(Error::InsufficientData(format!("class {c} has {} samples, need >= {k}", idx.len())));
        }
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = (pos + offset) % k;
        }
        offset += idx.len();
    }
    Ok(fold)
}

fn binary_classes(labels: &[String]) -> Result<(String, String, Vec<i8>)> {
    let set: BTreeSet<&String> = labels.iter().collect();
    if set.len() != 2 {
        return Err(Error::InvalidInput(format!("binary cross-validation needs 2 classes, got {}", set.len())));
    }
    let mut it = set.into_iter();
    let neg = it.next().unwrap().clone();
    let pos = it.next().unwrap().clone();
    let y = labels.iter().map(|l| if *l == pos { 1 } else { -1 }).collect();
    Ok((neg, pos, y))
}

fn run_folds<F>(y: &[i8], k: usize, seed: u64, eval_fold: F) -> Result<(Vec<f64>, usize, usize)>
where
    F: Fn(&[usize], &[usize]) -> Result<usize> + Sync,
{
    let class_of: Vec<usize> = y.iter().map(|&v| usize::from(v > 0)).collect();
    let folds = stratified_folds(&class_of, k, seed)?;
    let results: Vec<Result<(usize, usize)>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let test_idx: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            Ok((eval_fold(&train_idx, &test_idx)?, test_idx.len()))
        })
        .collect();
    let mut fold_ccrs = Vec::with_capacity(k);
    let (mut correct, mut total) = (0, 0);
    for r in results {
        let (c, t) = r?;
        fold_ccrs.push(c as f64 / t as f64);
        correct += c;
        total += t;
    }
    Ok((fold_ccrs, correct, total))
}

/// Stratified k-fold CV on labeled frames. The transform is refitted on each
/// training split, so no vocabulary leaks from the held-out fold.
pub fn cross_validate(
    frames: &[Frame],
    labels: &[String],
    k: usize,
    params: &SvmParams,
    transform: &Transform,
    seed: u64,
) -> Result<CvReport> {
    if frames.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: frames.len(), got: labels.len() });
    }
    params.validate()?;
    let (neg, pos, y) = binary_classes(labels)?;
    let (fold_ccrs, correct, total) = run_folds(&y, k, seed, |train_idx, test_idx| {
        let tf: Vec<&Frame> = train_idx.iter().map(|&i| &frames[i]).collect();
        let ty: Vec<i8> = train_idx.iter().map(|&i| y[i]).collect();
        let clf = FrameClassifier::fit(&tf, &ty, transform, params)?;
        let mut ok = 0;
        for &i in test_idx {
            if clf.predict(&frames[i])? == y[i] {
                ok += 1;
            }
        }
        Ok(ok)
    })?;
    let ccr = fold_ccrs.iter().sum::<f64>() / fold_ccrs.len() as f64;
    Ok(CvReport { ccr, fold_ccrs, correct, total, classes: (neg, pos) })
}

/// Stratified k-fold CV on precomputed feature rows with labels in {-1, +1}.
pub fn cross_validate_features(x: &[Vec<f64>], y: &[i8], k: usize, params: &SvmParams, seed: u64) -> Result<CvReport> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    params.validate()?;
    let (fold_ccrs, correct, total) = run_folds(y, k, seed, |train_idx, test_idx| {
        let tx: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<i8> = train_idx.iter().map(|&i| y[i]).collect();
        let model = train(&tx, &ty, params)?;
        let mut ok = 0;
        for &i in test_idx {
            if predict(&model, &x[i])?.1 == y[i] {
                ok += 1;
            }
        }
        Ok(ok)
    })?;
    let ccr = fold_ccrs.iter().sum::<f64>() / fold_ccrs.len() as f64;
    Ok(CvReport { ccr, fold_ccrs, correct, total, classes: ("-1".into(), "+1".into()) })
}
