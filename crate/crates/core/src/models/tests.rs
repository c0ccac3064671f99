use super::*;
use crate::datagen::{generate_game, GameRecord, GeneratorConfig};
use crate::encoding::{build_windows, SequenceWindow};

fn records(n: u64) -> Vec<GameRecord> {
    let cfg = GeneratorConfig {
        min_length: 300,
        max_length: 360,
        signal_strength: 1.0,
        ..GeneratorConfig::default()
    };
    (0..n).map(|s| generate_game(100 + s, &cfg).unwrap()).collect()
}

fn fixture() -> (FeatureSchema, Vec<SequenceWindow>) {
    let recs = records(12);
    let schema = FeatureSchema::mini_skeleton().fit_normalization(&recs).unwrap();
    let windows = build_windows(&recs, &schema, Task::Win, 0, 5).unwrap();
    (schema, windows)
}

fn tiny_lstm() -> Architecture {
    Architecture::Lstm(LstmConfig {
        hidden: 4,
        head_width: 5,
        ..LstmConfig::default()
    })
}

fn tiny_transformer() -> Architecture {
    Architecture::Transformer(TransformerConfig {
        heads: 2,
        width: 8,
        ffn_width: 12,
        head_width: 5,
        ..TransformerConfig::default()
    })
}

fn both_mini(schema: &FeatureSchema) -> Vec<ModelHandle> {
    [Architecture::lstm_mini(), Architecture::transformer_mini()]
        .into_iter()
        .map(|a| ModelHandle::init(a, schema.clone(), Task::Win, 7).unwrap())
        .collect()
}

#[test]
fn distributions_sum_to_one_and_eval_is_deterministic() {
    let (schema, windows) = fixture();
    for model in both_mini(&schema) {
        let p = model.forward(&windows[0].x, Mode::Eval).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(p, model.forward(&windows[0].x, Mode::Eval).unwrap());
        let t1 = model.forward(&windows[0].x, Mode::Train { mask_seed: 1 }).unwrap();
        assert_eq!(t1, model.forward(&windows[0].x, Mode::Train { mask_seed: 1 }).unwrap());
    }
}

#[test]
fn batched_matches_single() {
    let (schema, windows) = fixture();
    for model in both_mini(&schema) {
        let xs: Vec<&Tensor> = windows[..4].iter().map(|w| &w.x).collect();
        let batch = model.predict_batch(&xs, Mode::Eval).unwrap();
        for (j, x) in xs.iter().enumerate() {
            let single = model.forward(x, Mode::Eval).unwrap();
            for (c, &p) in single.iter().enumerate() {
                assert!((batch.at(j, c) - p).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn width_mismatch_rejected() {
    let (schema, _) = fixture();
    let model = &both_mini(&schema)[0];
    let bad = Tensor::zeros(&[5, schema.input_width() - 1]);
    assert!(matches!(
        model.forward(&bad, Mode::Eval),
        Err(ModelError::WidthMismatch { .. })
    ));
}

#[test]
fn swapping_parameter_tensors_changes_output() {
    let (schema, windows) = fixture();
    for model in both_mini(&schema) {
        let before = model.forward(&windows[3].x, Mode::Eval).unwrap();
        let mut swapped = model.clone();
        let n = swapped.params.len();
        // Output weight and hidden bias of the head have different roles.
        let tensors = swapped.params.tensors_mut();
        let (a, b) = (n - 2, n - 4);
        assert_eq!(tensors[a].shape()[0], tensors[b + 1].len());
        let w = tensors[a].clone();
        let perm: Vec<f64> = w.data().iter().rev().copied().collect();
        tensors[a] = Tensor::new(w.shape().to_vec(), perm).unwrap();
        let after = swapped.forward(&windows[3].x, Mode::Eval).unwrap();
        assert_ne!(before, after);
    }
}

#[test]
fn parameter_count_closed_form() {
    let (schema, _) = fixture();
    for model in both_mini(&schema) {
        assert_eq!(model.parameter_count(), model.expected_parameter_count());
    }
    // Independent count for the mini LSTM: 4 gates per direction, two directions.
    let model = &both_mini(&schema)[0];
    let d_emb = model.embedding.output_width();
    let embed: usize = 10 * (20 * 5 + 5 + 2 * 2 + 2);
    let layer0 = 2 * 4 * 32 * (d_emb + 32 + 1);
    let layer1 = 2 * 4 * 32 * (64 + 32 + 1);
    let head = 64 * 64 + 64 + 64 * 2 + 2;
    assert_eq!(model.parameter_count(), embed + layer0 + layer1 + head);
}

#[test]
fn gradients_match_finite_differences() {
    let (schema, windows) = fixture();
    let batch: Vec<&SequenceWindow> = windows[..2].iter().collect();
    for arch in [tiny_lstm(), tiny_transformer()] {
        let model = ModelHandle::init(arch, schema.clone(), Task::Win, 3).unwrap();
        for mode in [Mode::Eval, Mode::Train { mask_seed: 9 }] {
            let report = check_gradients(&model, &batch, mode, 1e-5, 1e-4, 37).unwrap();
            assert!(report.checked > 100);
            assert_eq!(report.failures, 0, "{report:?}");
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let (schema, windows) = fixture();
    let model = ModelHandle::init(Architecture::transformer_mini(), schema, Task::Win, 1).unwrap();
    let att = model.attention_weights(&windows[0].x).unwrap();
    assert_eq!(att.len(), 2);
    for a in att {
        assert_eq!(a.shape(), &[4, 5, 5]);
        for row in a.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn lstm_is_sensitive_to_row_order() {
    let (schema, _) = fixture();
    let model = ModelHandle::init(Architecture::lstm_mini(), schema.clone(), Task::Win, 5).unwrap();
    let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(2);
    let mut changed = 0;
    for _ in 0..10 {
        let data: Vec<f64> = (0..5 * schema.input_width()).map(|_| rng.gen::<f64>()).collect();
        let x = Tensor::new(vec![5, schema.input_width()], data).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).rev().map(|r| x.row(r).to_vec()).collect();
        let reversed = Tensor::from_rows(&rows).unwrap();
        if model.forward(&x, Mode::Eval).unwrap() != model.forward(&reversed, Mode::Eval).unwrap() {
            changed += 1;
        }
    }
    assert!(changed >= 9);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (schema, windows) = fixture();
    let dir = tempfile::tempdir().unwrap();
    for (i, model) in both_mini(&schema).into_iter().enumerate() {
        let path = dir.path().join(format!("m{i}"));
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        for w in &windows[..3] {
            assert_eq!(
                back.forward(&w.x, Mode::Eval).unwrap(),
                model.forward(&w.x, Mode::Eval).unwrap()
            );
        }
    }
}

#[test]
fn corrupted_blob_rejected() {
    let (schema, _) = fixture();
    let model = &both_mini(&schema)[0];
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(model, dir.path()).unwrap();
    let blob = dir.path().join("params.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&blob, &bytes).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err();
    assert!(err.to_string().contains("bytes"), "{err}");
    bytes.extend_from_slice(&[0u8; 8]);
    bytes[100] ^= 0x40;
    std::fs::write(&blob, &bytes).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(ModelError::Checkpoint(_))));
}

#[test]
fn overfits_one_batch() {
    let (schema, windows) = fixture();
    // Mixed labels: take windows from both winners.
    let mut batch: Vec<SequenceWindow> = windows.iter().filter(|w| w.label == 0).take(16).cloned().collect();
    batch.extend(windows.iter().filter(|w| w.label == 1).take(16).cloned());
    assert_eq!(batch.len(), 32);
    let cfg = TrainConfig {
        epochs: 150,
        batch_size: 32,
        learning_rate: 3e-3,
        seed: 4,
        patience: 150,
    };
    let model = train(tiny_lstm(), schema, &batch, &batch, &cfg).unwrap();
    assert_eq!(accuracy(&model, &batch).unwrap(), 1.0);
    let h = &model.history;
    let best = h.iter().map(|m| m.validation_loss).fold(f64::INFINITY, f64::min);
    assert!(best < h[0].validation_loss);
}

#[test]
fn missing_class_warns() {
    let (schema, windows) = fixture();
    let only: Vec<SequenceWindow> = windows.iter().filter(|w| w.label == 0).take(8).cloned().collect();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let model = train(tiny_lstm(), schema, &only, &only, &cfg).unwrap();
    assert_eq!(model.warnings.len(), 1);
    assert!(model.warnings[0].contains("class 1"));
}

#[test]
fn label_out_of_range_rejected() {
    let (schema, windows) = fixture();
    let mut bad = windows[..4].to_vec();
    bad[2].label = 7;
    let err = train(tiny_lstm(), schema, &bad, &bad, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, ModelError::LabelOutOfRange { label: 7, classes: 2 }));
}

#[test]
fn config_validation() {
    let bad = TransformerConfig {
        width: 10,
        heads: 4,
        ..TransformerConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = LstmConfig {
        dropout: 1.0,
        ..LstmConfig::default()
    };
    assert!(bad.validate().is_err());
}
