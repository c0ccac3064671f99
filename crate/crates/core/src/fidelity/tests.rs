use super::*;
use crate::attribution::IgConfig;
use crate::datagen::{generate_game, GeneratorConfig};
use crate::encoding::{build_windows, FeatureSchema};
use crate::models::{accuracy, Architecture, LstmConfig};
use proptest::prelude::*;

#[test]
fn mask_keeps_selected_columns() {
    let x = Tensor::ones(&[3, 4]);
    let m = mask_columns(&x, &[0, 2]);
    for r in 0..3 {
        assert_eq!(m.row(r), &[1.0, 0.0, 1.0, 0.0]);
    }
    let avg = [-0.3, 0.1, 0.2, 0.05];
    assert_eq!(mask_top_k(&x, &avg, 2).unwrap(), m);
    assert_eq!(mask_top_k(&x, &avg, 4).unwrap(), x);
    assert!(matches!(mask_top_k(&x, &avg, 5), Err(FidelityError::InvalidK { k: 5, width: 4 })));
}

proptest! {
    #[test]
    fn masked_nonzeros_bounded(
        data in prop::collection::vec(-1.0f64..1.0, 5 * 12),
        avg in prop::collection::vec(-1.0f64..1.0, 12),
        k in 1usize..=12,
    ) {
        let x = Tensor::new(vec![5, 12], data).unwrap();
        let m = mask_top_k(&x, &avg, k).unwrap();
        prop_assert!(m.data().iter().filter(|&&v| v != 0.0).count() <= 5 * k);
        let keep = top_k(&avg, k).unwrap();
        for (i, (&a, &b)) in x.data().iter().zip(m.data()).enumerate() {
            if keep.contains(&(i % 12)) {
                prop_assert_eq!(a, b);
            } else {
                prop_assert_eq!(b, 0.0);
            }
        }
    }
}

#[test]
fn modal_rate_counts_most_frequent() {
    assert_eq!(modal_rate(&[1, 1, 0, 1]), 0.75);
    assert_eq!(modal_rate(&[]), 0.0);
}

fn setup() -> (ModelHandle, Vec<SequenceWindow>, Vec<SequenceWindow>) {
    let cfg = GeneratorConfig {
        min_length: 300,
        max_length: 330,
        ..GeneratorConfig::default()
    };
    let recs: Vec<_> = (0..8).map(|s| generate_game(s, &cfg).unwrap()).collect();
    let schema = FeatureSchema::mini_skeleton().fit_normalization(&recs[..6]).unwrap();
    let tr = build_windows(&recs[..6], &schema, Task::Win, 0, 5).unwrap();
    let te = build_windows(&recs[6..], &schema, Task::Win, 0, 5).unwrap();
    let arch = Architecture::Lstm(LstmConfig {
        hidden: 4,
        head_width: 4,
        ..LstmConfig::default()
    });
    let model = ModelHandle::init(arch, schema, Task::Win, 1).unwrap();
    (model, tr, te)
}

#[test]
fn masked_sets_use_model_predictions() {
    let (model, tr, te) = setup();
    let ig = Attributor::Ig(IgConfig {
        steps: 4,
        baseline: None,
    });
    let set = build_masked_sets(&model, &ig, 3, &tr, &te).unwrap();
    assert_eq!((set.train.len(), set.test.len(), set.dropped), (tr.len(), te.len(), 0));
    let xs: Vec<&Tensor> = te.iter().map(|w| &w.x).collect();
    let predicted = model.predict_labels(&xs).unwrap();
    let stored: Vec<usize> = set.test.iter().map(|w| w.label).collect();
    assert_eq!(stored, predicted);
    let agree = stored.iter().zip(&te).filter(|(s, w)| **s == w.label).count() as f64 / te.len() as f64;
    assert_eq!(agree, accuracy(&model, &te).unwrap());
    for w in &set.train {
        let d = w.input_width();
        let nonzero_cols = (0..d).filter(|&j| (0..w.length()).any(|r| w.x.at(r, j) != 0.0)).count();
        assert!(nonzero_cols <= 3);
    }
}

#[test]
fn fidelity_report_in_unit_range() {
    let (model, tr, te) = setup();
    let job = FidelityJob {
        model: &model,
        attributor: Attributor::Random { seed: 5 },
        k: 2,
        train: &tr,
        test: &te,
        proxy: ProxyConfig {
            train: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            validation_fraction: 0.2,
        },
        seed: 9,
    };
    let report = run_fidelity(&job).unwrap();
    assert!((0.0..=1.0).contains(&report.fidelity));
    assert_eq!(report.method, Method::Random);
    assert_eq!(report.test_instances, te.len());
    assert_eq!(report.proxy_history.first().unwrap().epoch, 0);
    assert_eq!(run_fidelity(&job).unwrap(), report);
    let mut csv = Vec::new();
    write_csv(&[report.clone(), report], &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with(CSV_HEADER));
}

#[test]
fn overlapping_sets_rejected() {
    let (model, tr, _) = setup();
    let job = FidelityJob {
        model: &model,
        attributor: Attributor::Random { seed: 0 },
        k: 1,
        train: &tr,
        test: &tr[..2],
        proxy: ProxyConfig::default(),
        seed: 0,
    };
    assert!(matches!(run_fidelity(&job), Err(FidelityError::Overlap(_))));
}
