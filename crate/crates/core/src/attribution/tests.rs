use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::datagen::{generate_game, GeneratorConfig, Task};
use crate::encoding::{build_windows, FeatureSchema};
use crate::models::{Architecture, ModelHandle};
use proptest::prelude::*;

/// Two classes with `P(1 | X) = sigmoid(w . X)`, differentiated on the tape.
struct LinearSigmoid {
    w: Tensor,
}

impl LinearSigmoid {
    fn score(&self, x: &Tensor) -> f64 {
        x.data().iter().zip(self.w.data()).map(|(a, b)| a * b).sum()
    }
}

fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

impl Classifier for LinearSigmoid {
    fn classes(&self) -> usize {
        2
    }

    fn distribution(&self, x: &Tensor) -> Result<Vec<f64>> {
        let p = sigmoid(self.score(x));
        Ok(vec![1.0 - p, p])
    }

    fn summed_gradients(&self, points: &[Tensor], target: usize) -> Result<Tensor> {
        let mut total = Tensor::zeros(points[0].shape());
        for x in points {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(self.w.clone());
            let prod = tape.mul(xv, wv).unwrap();
            let s = tape.sum(prod);
            let p = tape.sigmoid(s);
            let out = if target == 1 {
                p
            } else {
                let q = tape.scale(p, -1.0);
                let one = tape.leaf(Tensor::scalar(1.0));
                tape.add(one, q).unwrap()
            };
            let g = tape.backward(out, &[xv]).unwrap();
            total.add_assign(g.get(xv).unwrap());
        }
        Ok(total)
    }
}

/// `P(1 | X) = a . X + 0.5`: constant gradient.
struct Affine {
    a: Tensor,
}

impl Classifier for Affine {
    fn classes(&self) -> usize {
        2
    }

    fn distribution(&self, x: &Tensor) -> Result<Vec<f64>> {
        let p: f64 = x.data().iter().zip(self.a.data()).map(|(u, v)| u * v).sum::<f64>() + 0.5;
        Ok(vec![1.0 - p, p])
    }

    fn summed_gradients(&self, points: &[Tensor], _target: usize) -> Result<Tensor> {
        Ok(self.a.map(|v| v * points.len() as f64))
    }
}

fn toy_input() -> (LinearSigmoid, Tensor) {
    let w = Tensor::new(vec![3, 4], (0..12).map(|i| 0.3 * ((i as f64) * 0.7).sin()).collect()).unwrap();
    let x = Tensor::new(vec![3, 4], (0..12).map(|i| 0.5 + 0.4 * ((i as f64) * 1.3).cos()).collect()).unwrap();
    (LinearSigmoid { w }, x)
}

#[test]
fn ig_matches_riemann_oracle_and_line_integral() {
    let (model, x) = toy_input();
    let s = model.score(&x);
    let cfg = IgConfig {
        steps: 1000,
        baseline: None,
    };
    let map = integrated_gradients(&model, &x, Target::Class(1), &cfg).unwrap();
    // Independent oracle: the same right Riemann sum with the sigmoid
    // derivative written out.
    let n = 1000.0;
    let riemann: f64 = (1..=1000)
        .map(|k| {
            let p = sigmoid(k as f64 / n * s);
            p * (1.0 - p)
        })
        .sum::<f64>()
        / n;
    let exact = (sigmoid(s) - sigmoid(0.0)) / s;
    for i in 0..12 {
        let xw = x.data()[i] * model.w.data()[i];
        assert!((map.scores.data()[i] - xw * riemann).abs() < 1e-12);
        assert!((map.scores.data()[i] - xw * exact).abs() < 1e-3 * (xw * exact).abs() + 1e-12);
    }
    assert!((riemann * s - (sigmoid(s) - 0.5)).abs() < 1e-3);
    // Completeness of the exact integral.
    let total: f64 = (0..12).map(|i| x.data()[i] * model.w.data()[i] * exact).sum();
    assert!((total - (sigmoid(s) - sigmoid(0.0))).abs() < 1e-12);
}

#[test]
fn ig_completeness_error_shrinks_with_steps() {
    let (model, x) = toy_input();
    let target = sigmoid(model.score(&x)) - 0.5;
    let err = |steps| {
        let cfg = IgConfig { steps, baseline: None };
        (integrated_gradients(&model, &x, Target::Class(1), &cfg).unwrap().total() - target).abs()
    };
    let (e10, e100, e1000) = (err(10), err(100), err(1000));
    assert!(e10 > e100 && e100 > e1000, "{e10} {e100} {e1000}");
}

#[test]
fn ig_zero_path_is_zero() {
    let (model, x) = toy_input();
    let cfg = IgConfig {
        steps: 20,
        baseline: Some(x.clone()),
    };
    let map = integrated_gradients(&model, &x, Target::Predicted, &cfg).unwrap();
    assert!(map.scores.data().iter().all(|&v| v == 0.0));
}

#[test]
fn bad_inputs_rejected() {
    let (model, x) = toy_input();
    assert!(matches!(
        integrated_gradients(&model, &x, Target::Class(2), &IgConfig::default()),
        Err(AttributionError::TargetOutOfRange { target: 2, classes: 2 })
    ));
    let cfg = IgConfig {
        steps: 0,
        baseline: None,
    };
    assert!(matches!(
        integrated_gradients(&model, &x, Target::Predicted, &cfg),
        Err(AttributionError::ZeroSteps)
    ));
    let cfg = IgConfig {
        steps: 5,
        baseline: Some(Tensor::zeros(&[2, 4])),
    };
    assert!(matches!(
        integrated_gradients(&model, &x, Target::Predicted, &cfg),
        Err(AttributionError::BaselineShape { .. })
    ));
}

fn unit_stats(width: usize) -> DimensionStats {
    DimensionStats {
        min: vec![0.0; width],
        max: vec![1.0; width],
    }
}

#[test]
fn sg_of_affine_is_its_gradient() {
    let a = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.01 - 0.05).collect()).unwrap();
    let model = Affine { a: a.clone() };
    let x = Tensor::full(&[3, 4], 0.2);
    let cfg = SgConfig {
        steps: 7,
        sigma_ratio: 0.4,
        seed: 3,
    };
    let map = smoothgrad(&model, &x, Target::Class(1), &cfg, &unit_stats(4)).unwrap();
    for (s, g) in map.scores.data().iter().zip(a.data()) {
        assert!((s - g).abs() < 1e-15);
    }
}

#[test]
fn sg_with_zero_sigma_is_plain_gradient() {
    let (model, x) = toy_input();
    let cfg = SgConfig {
        steps: 25,
        sigma_ratio: 0.0,
        seed: 1,
    };
    let map = smoothgrad(&model, &x, Target::Class(1), &cfg, &unit_stats(4)).unwrap();
    let (_, g) = input_gradient(&model, &x, Target::Class(1)).unwrap();
    for (s, g) in map.scores.data().iter().zip(g.data()) {
        assert!((s - g).abs() < 1e-9);
    }
}

#[test]
fn sg_is_seeded() {
    let (model, x) = toy_input();
    let run = |seed| {
        let cfg = SgConfig {
            steps: 10,
            sigma_ratio: 0.15,
            seed,
        };
        smoothgrad(&model, &x, Target::Class(1), &cfg, &unit_stats(4)).unwrap()
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
    let bad = SgConfig {
        sigma_ratio: -1.0,
        ..SgConfig::default()
    };
    assert!(matches!(
        smoothgrad(&model, &x, Target::Class(1), &bad, &unit_stats(4)),
        Err(AttributionError::InvalidSigma(_))
    ));
    assert!(matches!(
        smoothgrad(&model, &x, Target::Class(1), &SgConfig::default(), &unit_stats(5)),
        Err(AttributionError::StatsWidth { stats: 5, input: 4 })
    ));
}

#[test]
fn time_average_is_column_mean() {
    let scores = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0], vec![2.0, 1.0]]).unwrap();
    let map = AttributionMap::new(Method::Ig, 0, 0.5, scores);
    assert_eq!(map.time_avg, vec![2.0, 1.0]);
}

#[test]
fn top_k_examples() {
    assert_eq!(top_k(&[3.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
    assert_eq!(top_k(&[-5.0, 4.0], 1).unwrap(), vec![0]);
    assert_eq!(top_k(&[1.0, -1.0, 1.0], 2).unwrap(), vec![0, 1]);
    assert!(matches!(top_k(&[1.0], 0), Err(AttributionError::InvalidK { .. })));
    assert!(matches!(top_k(&[1.0], 2), Err(AttributionError::InvalidK { .. })));
}

proptest! {
    #[test]
    fn top_k_matches_full_sort(values in prop::collection::vec(-3i32..3, 1..60), k_seed in 0usize..1000) {
        let values: Vec<f64> = values.into_iter().map(|v| v as f64 * 0.5).collect();
        let k = 1 + k_seed % values.len();
        let mut oracle: Vec<usize> = (0..values.len()).collect();
        oracle.sort_by(|&a, &b| values[b].abs().partial_cmp(&values[a].abs()).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(top_k(&values, k).unwrap(), oracle[..k].to_vec());
    }
}

fn small_model() -> (ModelHandle, Vec<crate::encoding::SequenceWindow>) {
    let cfg = GeneratorConfig {
        min_length: 300,
        max_length: 330,
        ..GeneratorConfig::default()
    };
    let recs: Vec<_> = (0..3).map(|s| generate_game(s, &cfg).unwrap()).collect();
    let schema = FeatureSchema::mini_skeleton().fit_normalization(&recs).unwrap();
    let windows = build_windows(&recs, &schema, Task::Win, 0, 5).unwrap();
    let model = ModelHandle::init(Architecture::transformer_mini(), schema, Task::Win, 2).unwrap();
    (model, windows)
}

#[test]
fn ig_on_model_is_complete_and_repeatable() {
    let (model, windows) = small_model();
    let x = &windows[0].x;
    let cfg = IgConfig {
        steps: 300,
        baseline: None,
    };
    let map = integrated_gradients(&model, x, Target::Predicted, &cfg).unwrap();
    let p0 = model.distribution(&Tensor::zeros(x.shape())).unwrap()[map.target];
    let delta = map.probability - p0;
    assert!((map.total() - delta).abs() <= 0.005 * delta.abs() + 1e-4);
    assert_eq!(map, integrated_gradients(&model, x, Target::Predicted, &cfg).unwrap());
}

#[test]
fn batched_gradients_match_single() {
    let (model, windows) = small_model();
    let points: Vec<Tensor> = windows[..3].iter().map(|w| w.x.clone()).collect();
    let total = model.summed_gradients(&points, 1).unwrap();
    let mut expect = Tensor::zeros(points[0].shape());
    for p in &points {
        expect.add_assign(&model.summed_gradients(std::slice::from_ref(p), 1).unwrap());
    }
    for (a, b) in total.data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn report_lists_named_rows() {
    let (model, windows) = small_model();
    let map = integrated_gradients(&model, &windows[1].x, Target::Predicted, &IgConfig::default()).unwrap();
    let report = render_report(&map, 5, &model.schema, Task::Win).unwrap();
    assert_eq!(report.rows.len(), 5);
    for r in &report.rows {
        assert_eq!(r.feature, model.schema.dimension_name(r.dimension).unwrap());
    }
    let text = render_text(&report);
    assert_eq!(text.lines().count(), 2 + 1 + 5);
    let json = serde_json::to_string(&report).unwrap();
    let back: AttributionReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn stats_from_windows() {
    let (_, windows) = small_model();
    let stats = DimensionStats::from_windows(&windows).unwrap();
    let j = 30;
    let col = windows.iter().flat_map(|w| (0..w.length()).map(move |r| w.x.at(r, j)));
    let lo = col.clone().fold(f64::INFINITY, f64::min);
    let hi = col.fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((stats.min[j], stats.max[j]), (lo, hi));
    assert_eq!(stats.sigma(0.15)[j], 0.15 * (hi - lo));
}
