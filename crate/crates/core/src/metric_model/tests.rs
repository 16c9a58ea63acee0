use proptest::prelude::*;

use super::*;
use crate::numkit::{dot, norm2};

fn small_model(seed: u64, with_adapter: bool) -> MetricModel {
    let cfg = ModelConfig { input_dim: 6, embedding_dim: 5, subcenters: 3, scale: 30.0, dropout: 0.2, with_adapter };
    let margins = MarginSchedule { m_min: 0.005, m_max: 0.45, lambda: 0.25, margins: vec![0.45, 0.2, 0.05, 0.005] };
    let classes = (0..4).map(|c| format!("k{c}")).collect();
    let mut m = MetricModel::init(&cfg, classes, margins, seed).unwrap();
    // move away from the symmetric initialization so every tensor carries signal
    let mut rng = RngStream::new(seed ^ 0xABCD);
    for id in m.param_ids() {
        let p = m.param_mut(id).unwrap();
        for v in p.data_mut() {
            *v += 0.3 * rng.gaussian();
        }
    }
    m.head.bn_running_var.iter_mut().for_each(|v| *v = 0.5 + rng.uniform());
    m.head.bn_running_mean.iter_mut().for_each(|v| *v = rng.gaussian());
    m
}

fn batch(seed: u64, b: usize, d: usize) -> (Matrix, Vec<usize>) {
    let mut rng = RngStream::new(seed);
    let x = Matrix::from_fn(b, d, |_, _| rng.gaussian());
    let labels = (0..b).map(|_| rng.below(4)).collect();
    (x, labels)
}

/// Central finite differences on every coordinate of every tensor.
fn finite_difference_check(model: &MetricModel, x: &Matrix, labels: &[usize], mode: Mode, mask: Option<Matrix>) -> f64 {
    let pass = model.loss_with_mask(x, labels, mode, mask.clone()).unwrap();
    let grads = model_backward(&pass, labels, model, 1.0).unwrap();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for id in model.param_ids() {
        let analytic = grads.get(id).unwrap();
        let n = model.param(id).unwrap().data().len();
        for i in 0..n {
            let mut plus = model.clone();
            plus.param_mut(id).unwrap().data_mut()[i] += eps;
            let mut minus = model.clone();
            minus.param_mut(id).unwrap().data_mut()[i] -= eps;
            let lp = plus.loss_with_mask(x, labels, mode, mask.clone()).unwrap().loss;
            let lm = minus.loss_with_mask(x, labels, mode, mask.clone()).unwrap().loss;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            assert!(rel <= 1e-4, "{id}[{i}]: analytic {a:e}, numeric {numeric:e}, rel {rel:e}");
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_train_mode() {
    for seed in 0..3 {
        let model = small_model(seed, true);
        let (x, labels) = batch(100 + seed, 8, 6);
        let mut rng = RngStream::new(seed);
        let mask = draw_dropout_mask(&mut rng, 8, 6, 0.2).unwrap();
        finite_difference_check(&model, &x, &labels, Mode::Train, mask);
    }
}

#[test]
fn gradients_match_finite_differences_eval_mode_without_adapter() {
    let model = small_model(7, false);
    let (x, labels) = batch(8, 5, 6);
    finite_difference_check(&model, &x, &labels, Mode::Eval, None);
}

#[test]
fn zero_loss_scale_gives_zero_gradients() {
    let model = small_model(1, true);
    let (x, labels) = batch(2, 6, 6);
    let pass = model.loss_with_mask(&x, &labels, Mode::Train, None).unwrap();
    let grads = model_backward(&pass, &labels, &model, 0.0).unwrap();
    for (id, g) in grads.iter() {
        assert!(g.data().iter().all(|&v| v == 0.0), "{id}");
    }
    assert_eq!(grads.ids(), model.param_ids());
}

#[test]
fn duplicated_batch_keeps_mean_gradients() {
    let mut model = small_model(3, true);
    model.head.dropout_rate = 0.0;
    let (x, labels) = batch(4, 5, 6);
    let mut rows = (0..5).collect::<Vec<_>>();
    rows.extend(0..5);
    let x2 = x.select_rows(&rows);
    let labels2: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    let g1 =
        model_backward(&model.loss_with_mask(&x, &labels, Mode::Train, None).unwrap(), &labels, &model, 1.0).unwrap();
    let g2 = model_backward(&model.loss_with_mask(&x2, &labels2, Mode::Train, None).unwrap(), &labels2, &model, 1.0)
        .unwrap();
    for id in model.param_ids() {
        let diff = g1.get(id).unwrap().max_abs_diff(g2.get(id).unwrap()).unwrap();
        assert!(diff <= 1e-9, "{id}: {diff:e}");
    }
}

#[test]
fn backward_rejects_mismatched_labels() {
    let model = small_model(1, true);
    let (x, labels) = batch(2, 4, 6);
    let pass = model.loss_with_mask(&x, &labels, Mode::Train, None).unwrap();
    let other: Vec<usize> = labels.iter().map(|l| (l + 1) % 4).collect();
    assert!(model_backward(&pass, &other, &model, 1.0).is_err());
}

#[test]
fn embed_is_unit_norm_deterministic_and_permutation_equivariant() {
    let model = small_model(5, true);
    let (x, _) = batch(6, 7, 6);
    let e1 = embed(&x, &model).unwrap();
    assert_eq!(e1, embed(&x, &model).unwrap());
    for n in e1.row_norms() {
        assert!((n - 1.0).abs() <= 1e-9);
    }
    let perm = [3, 0, 6, 1, 5, 2, 4];
    let ep = embed(&x.select_rows(&perm), &model).unwrap();
    assert!(ep.max_abs_diff(&e1.select_rows(&perm)).unwrap() == 0.0);
}

/// Plain single-center ArcFace logits, written independently of the
/// subcenter code path.
fn single_center_logits(e: &Matrix, w: &Matrix, labels: &[usize], margins: &[f64], s: f64) -> Matrix {
    Matrix::from_fn(e.rows(), w.rows(), |r, c| {
        let cos = dot(e.row(r), w.row(c)) / (norm2(e.row(r)) * norm2(w.row(c)));
        if c != labels[r] {
            return s * cos;
        }
        let m = margins[c];
        let th = (std::f64::consts::PI - m).cos();
        if cos > th {
            let theta = cos.clamp(-1.0 + 1e-7, 1.0 - 1e-7).acos();
            s * (theta + m).cos()
        } else {
            s * (cos - m * m.sin())
        }
    })
}

#[test]
fn single_subcenter_matches_plain_arcface() {
    for seed in 0..5 {
        let mut rng = RngStream::new(seed);
        let w = Matrix::from_fn(6, 8, |_, _| rng.gaussian());
        let e = Matrix::from_fn(10, 8, |_, _| rng.gaussian());
        let labels: Vec<usize> = (0..10).map(|_| rng.below(6)).collect();
        let margins: Vec<f64> = (0..6).map(|_| 0.45 * rng.uniform()).collect();
        let af = ArcFaceParams {
            subcenters: w.clone(),
            k: 1,
            scale: 30.0,
            margins: MarginSchedule { m_min: 0.0, m_max: 0.45, lambda: 0.25, margins: margins.clone() },
        };
        let out = arcface_forward(&e, &labels, &af).unwrap();
        let reference = single_center_logits(&e, &w, &labels, &margins, 30.0);
        assert!(out.logits.max_abs_diff(&reference).unwrap() <= 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for with_adapter in [true, false] {
        let model = small_model(9, with_adapter);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        model.save(&p).unwrap();
        let back = MetricModel::load(&p).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_container().to_bytes(), model.to_container().to_bytes());
    }
}

#[test]
fn init_is_seeded() {
    let a = small_model(4, true);
    let b = small_model(4, true);
    let c = small_model(5, true);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let cfg = ModelConfig { input_dim: 4, embedding_dim: 3, ..ModelConfig::default() };
    let m = MetricModel::init(&cfg, vec!["a".into(), "b".into()], MarginSchedule::constant(2, 0.1), 1).unwrap();
    let a = m.head.adapter.as_ref().unwrap();
    assert_eq!(a.weight, Matrix::identity(4));
    assert!(a.bias.data().iter().all(|&v| v == 0.0));
    assert!(m.head.bn_gamma.data().iter().all(|&v| v == 1.0));
    assert!(MetricModel::init(&cfg, vec!["a".into()], MarginSchedule::constant(2, 0.1), 1).is_err());
}

fn two_class_loss(angle: f64, margin: f64) -> f64 {
    // class 0 center on e1, class 1 on e2; the sample stays orthogonal to e2
    let af = ArcFaceParams {
        subcenters: Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap(),
        k: 1,
        scale: 30.0,
        margins: MarginSchedule { m_min: 0.0, m_max: 0.45, lambda: 0.25, margins: vec![margin, margin] },
    };
    let e = Matrix::from_rows(&[vec![angle.cos(), 0.0, angle.sin()]]).unwrap();
    arcface_forward(&e, &[0], &af).unwrap().loss
}

proptest! {
    #[test]
    fn margins_only_penalize(t in -0.999f64..0.999, m in 0.0f64..0.45) {
        let (v, _, primary) = target_logit(t, m);
        prop_assume!(primary);
        prop_assert!(v <= t + 1e-12);
    }

    #[test]
    fn target_logit_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0, m in 0.0f64..0.45) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(target_logit(lo, m).0 <= target_logit(hi, m).0 + 1e-12);
    }

    #[test]
    fn lower_target_cosine_never_lowers_loss(a1 in 0.0f64..3.1, a2 in 0.0f64..3.1, m in 0.0f64..0.45) {
        // larger angle means smaller target cosine
        let (small, large) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        prop_assert!(two_class_loss(large, m) >= two_class_loss(small, m) - 1e-9);
    }

    #[test]
    fn margin_schedule_is_monotone(counts in proptest::collection::vec(1usize..200, 1..30)) {
        let stats = crate::datastore::ClassStats::from_counts(
            counts.iter().enumerate().map(|(i, &n)| (format!("k{i:03}"), n)).collect()
        ).unwrap();
        let s = compute_dynamic_margins(&stats, 0.005, 0.45, 0.25).unwrap();
        let pairs: Vec<(usize, f64)> = stats.counts.values().cloned().zip(s.margins.iter().cloned()).collect();
        for &(n1, m1) in &pairs {
            prop_assert!((0.005..=0.45).contains(&m1));
            for &(n2, m2) in &pairs {
                if n1 <= n2 {
                    prop_assert!(m1 >= m2);
                }
            }
        }
    }
}
