use super::*;
use crate::preprocess::{FeatureKind, Transform};
use crate::rng;
use crate::trace::{Frame, PacketEvent};
use approx::assert_relative_eq;
use proptest::prelude::*;

fn params(c: f64, gamma: f64) -> SvmParams {
    SvmParams { c, gamma, ..Default::default() }
}

/// Equality constraint residual and box feasibility.
fn assert_feasible(sol: &DualSolution, y: &[i8], c: f64) {
    let bal: f64 = sol.alpha.iter().zip(y).map(|(a, &v)| a * v as f64).sum();
    assert!(bal.abs() <= 1e-6 * c.max(1.0), "y'a = {bal}");
    assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
}

#[test]
fn kernel_examples() {
    assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 3.0).unwrap(), 1.0);
    assert_eq!(rbf_kernel(&[1.0, 2.0], &[-7.0, 9.0], 0.0).unwrap(), 1.0);
    assert_relative_eq!(rbf_kernel(&[0.0], &[1.0], std::f64::consts::LN_2).unwrap(), 0.5, epsilon = 1e-15);
    assert!(matches!(rbf_kernel(&[0.0], &[1.0, 2.0], 1.0), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn gram_examples() {
    assert_eq!(gram_matrix(&[vec![3.0]], 1.0).unwrap().values, vec![1.0]);
    assert_eq!(gram_matrix(&[vec![3.0, 1.0], vec![3.0, 1.0]], 2.0).unwrap().values, vec![1.0; 4]);
    assert!(gram_matrix(&[], 1.0).is_err());
}

#[test]
fn gram_is_psd() {
    let mut r = rng::seeded(11);
    for _ in 0..20 {
        let n = r.random_range(2..12);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let g = gram_matrix(&x, r.random_range(0.01..3.0)).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(n, n, &g.values);
        assert_eq!(m, m.transpose());
        let min = m.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-8 * n as f64, "min eigenvalue {min}");
    }
}

#[test]
fn two_point_toy_matches_grid_optimum() {
    let x = vec![vec![0.0], vec![1.0]];
    let y = [1, -1];
    let p = params(1000.0, 1.0);
    let model = train(&x, &y, &p).unwrap();
    let gram = gram_matrix(&x, p.gamma).unwrap();
    let sol = solve_dual(&gram, &y, &p).unwrap();
    assert_feasible(&sol, &y, p.c);

    // balance forces a1 = a2; search that line on a fine grid
    let mut best = f64::NEG_INFINITY;
    let mut best_a = 0.0;
    for k in 0..=200_000 {
        let a = k as f64 * 1e-5 * 4.0;
        let obj = dual_objective(&gram, &y, &[a, a]);
        if obj > best {
            best = obj;
            best_a = a;
        }
    }
    let got = dual_objective(&gram, &y, &sol.alpha);
    assert!((got - best).abs() <= 1e-3 * best.abs(), "solver {got} grid {best} at {best_a}");

    assert!(predict(&model, &[0.2]).unwrap().0 > 0.0);
    assert!(predict(&model, &[0.5]).unwrap().0.abs() < 1e-3);
    // a free support vector sits on its margin
    assert!((predict(&model, &[0.0]).unwrap().0 - 1.0).abs() < 1e-3);
    assert!((predict(&model, &[1.0]).unwrap().0 + 1.0).abs() < 1e-3);
}

#[test]
fn xor_is_learned() {
    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let y = [1, 1, -1, -1];
    let model = train(&x, &y, &params(10.0, 1.0)).unwrap();
    for (xi, &yi) in x.iter().zip(&y) {
        assert_eq!(predict(&model, xi).unwrap().1, yi);
    }
}

#[test]
fn separable_clusters() {
    let mut r = rng::seeded(5);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..40 {
        let cls = if i % 2 == 0 { 1 } else { -1 };
        let cx = 3.0 * cls as f64;
        x.push(vec![cx + r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
        y.push(cls);
    }
    let p = params(100.0, 0.5);
    let model = train(&x, &y, &p).unwrap();
    for (xi, &yi) in x.iter().zip(&y) {
        assert_eq!(predict(&model, xi).unwrap().1, yi);
    }
    let bal: f64 = model.alphas_signed.iter().sum();
    assert!(bal.abs() <= 1e-6, "sum a_i y_i = {bal}");
    assert!(model.alphas_signed.iter().all(|a| a.abs() <= p.c));
}

#[test]
fn zero_alpha_model_uses_bias_sign() {
    let m = SvmModel {
        support_vectors: vec![],
        alphas_signed: vec![],
        bias: -0.3,
        params: SvmParams::default(),
        label_map: None,
        iterations: 0,
    };
    assert_eq!(predict(&m, &[1.0, 2.0]).unwrap(), (-0.3, -1));
    let tie = SvmModel { bias: 0.0, ..m };
    assert_eq!(predict(&tie, &[5.0]).unwrap().1, 1);
}

#[test]
fn training_errors() {
    let p = SvmParams::default();
    assert!(matches!(train(&[vec![0.0], vec![1.0]], &[1, 1], &p), Err(Error::SingleClass(2))));
    assert!(train(&[vec![0.0]], &[1], &p).is_err());
    assert!(train(&[vec![0.0], vec![1.0]], &[1, 0], &p).is_err());
    let tiny = SvmParams { max_iter: 1, ..params(10.0, 1.0) };
    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    assert!(matches!(train(&x, &[1, 1, -1, -1], &tiny), Err(Error::NonConvergence { iterations: 1, .. })));
    assert!(train(&x, &[1, 1, -1, -1], &params(-1.0, 1.0)).is_err());
}

#[test]
fn duplicating_a_point_keeps_predictions() {
    let x = vec![vec![0.0, 0.0], vec![0.5, 0.2], vec![4.0, 4.0], vec![4.5, 3.8]];
    let y = [1, 1, -1, -1];
    let p = params(10.0, 0.2);
    let base = train(&x, &y, &p).unwrap();
    let mut x2 = x.clone();
    x2.push(x[1].clone());
    let mut y2 = y.to_vec();
    y2.push(1);
    let dup = train(&x2, &y2, &p).unwrap();
    for probe in [[0.2, 0.1], [1.0, 1.0], [3.5, 3.5], [5.0, 5.0], [0.0, 3.0]] {
        assert_eq!(predict(&base, &probe).unwrap().1, predict(&dup, &probe).unwrap().1);
    }
}

#[test]
fn json_roundtrip_keeps_decisions() {
    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let model = train(&x, &[1, 1, -1, -1], &params(10.0, 1.0)).unwrap().with_labels("b.com", "a.com");
    let back = SvmModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back.label_map, model.label_map);
    for probe in [[0.3, 0.9], [0.5, 0.5], [2.0, -1.0]] {
        let (a, b) = (model.decision_value(&probe).unwrap(), back.decision_value(&probe).unwrap());
        assert!((a - b).abs() <= 1e-12);
    }
    assert_eq!(back.label_name(1), Some("a.com"));
    assert!(SvmModel::from_json("{\"nope\": 1}").is_err());
}

fn count_frame(incoming: usize, outgoing: usize, label: &str) -> Frame {
    let mut events: Vec<PacketEvent> = (0..incoming).map(|i| PacketEvent::incoming(i as u64 * 1000, 500)).collect();
    events.extend((0..outgoing).map(|i| PacketEvent::outgoing(500 + i as u64 * 1000, 300)));
    events.sort_by_key(|e| e.t_us);
    Frame::new(events, 30_000_000, Some(label.into()))
}

#[test]
fn cv_chance_and_perfect() {
    let t = Transform::new(FeatureKind::PacketCounts, 100);
    let p = params(256.0, 0.01);
    let mut same = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let l = if i % 2 == 0 { "a" } else { "b" };
        same.push(count_frame(10, 5, l));
        labels.push(l.to_string());
    }
    let r = cross_validate(&same, &labels, 5, &p, &t, 3).unwrap();
    assert!((r.ccr - 0.5).abs() <= 0.1, "{}", r.ccr);

    let apart: Vec<Frame> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| if l == "a" { count_frame(10 + i % 3, 5, l) } else { count_frame(40 + i % 3, 20, l) })
        .collect();
    let r = cross_validate(&apart, &labels, 5, &p, &t, 3).unwrap();
    assert_eq!(r.ccr, 1.0);
    assert_eq!((r.correct, r.total), (40, 40));
    assert_eq!(r.classes, ("a".to_string(), "b".to_string()));
}

#[test]
fn cv_rejects_small_classes() {
    let frames = vec![count_frame(1, 1, "a"), count_frame(2, 2, "b"), count_frame(3, 3, "b")];
    let labels: Vec<String> = ["a", "b", "b"].iter().map(|s| s.to_string()).collect();
    let t = Transform::default();
    assert!(matches!(
        cross_validate(&frames, &labels, 2, &SvmParams::default(), &t, 1),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn folds_are_stratified_and_seeded() {
    let classes: Vec<usize> = (0..53).map(|i| usize::from(i % 3 == 0)).collect();
    let f = stratified_folds(&classes, 5, 9).unwrap();
    assert_eq!(f, stratified_folds(&classes, 5, 9).unwrap());
    for fold in 0..5 {
        for c in 0..2 {
            let n_c = classes.iter().filter(|&&x| x == c).count();
            let in_fold = (0..53).filter(|&i| f[i] == fold && classes[i] == c).count();
            assert!(in_fold == n_c / 5 || in_fold == n_c / 5 + 1);
        }
    }
}

proptest! {
    #[test]
    fn dual_is_feasible_and_kkt_holds(
        pts in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 2), any::<bool>()), 2..12),
        c in 0.1f64..50.0,
        gamma in 0.05f64..3.0,
    ) {
        let x: Vec<Vec<f64>> = pts.iter().map(|p| p.0.clone()).collect();
        let mut y: Vec<i8> = pts.iter().map(|p| if p.1 { 1 } else { -1 }).collect();
        y[0] = 1;
        y[1] = -1;
        let p = params(c, gamma);
        let gram = gram_matrix(&x, gamma).unwrap();
        let sol = solve_dual(&gram, &y, &p).unwrap();
        assert_feasible(&sol, &y, c);
        prop_assert!(sol.gap < p.tolerance);
    }
}
