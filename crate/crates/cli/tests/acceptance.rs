//! Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails. `EVENTLENS_ACCEPTANCE=1,3,8` restricts the run to a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use eventlens::attribution::{
    input_gradient, integrated_gradients, smoothgrad, Attributor, DimensionStats, IgConfig, SgConfig, Target,
};
use eventlens::autodiff::Tensor;
use eventlens::datagen::{generate_game, GameRecord, GeneratorConfig, Task};
use eventlens::encoding::{build_windows, FeatureSchema, SequenceWindow};
use eventlens::fidelity::{masked_windows, modal_rate, rank_instances, score_masked, MaskedSet, ProxyConfig, RankedInstance};
use eventlens::models::{
    accuracy, check_gradients, train, Architecture, LstmConfig, Mode, ModelHandle, TrainConfig, TransformerConfig,
};
use eventlens_cli::config::RunConfig;
use eventlens_cli::{cmd_attribute, cmd_fidelity, cmd_gen, cmd_report, cmd_train, split_games, AttributeOptions, FidelityOptions};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMES: usize = 500;
const WINDOW: u32 = 5;
const TYRANT_HORIZON: u32 = 5;

type Check = Result<(bool, String), String>;

struct Line {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

/// Planted-signal data shared by criteria 2 to 7, plus the trained models.
struct Fixture {
    schema: FeatureSchema,
    train: Vec<SequenceWindow>,
    validation: Vec<SequenceWindow>,
    test: Vec<SequenceWindow>,
    tyrant: [Vec<SequenceWindow>; 3],
    lstm: Option<(ModelHandle, Duration)>,
    transformer: Option<(ModelHandle, Duration)>,
}

impl Fixture {
    fn build() -> Self {
        let cfg = GeneratorConfig {
            signal_strength: 1.0,
            ..GeneratorConfig::default()
        };
        let records: Vec<GameRecord> = (0..GAMES as u64).map(|s| generate_game(s, &cfg).unwrap()).collect();
        let splits = split_games(records, &Default::default(), 11);
        let schema = FeatureSchema::mini_skeleton().fit_normalization(&splits.train).unwrap();
        let win = |r: &[GameRecord]| build_windows(r, &schema, Task::Win, 0, WINDOW).unwrap();
        let tyr = |r: &[GameRecord]| build_windows(r, &schema, Task::Tyrant, TYRANT_HORIZON, WINDOW).unwrap();
        Self {
            train: win(&splits.train),
            validation: win(&splits.validation),
            test: win(&splits.test),
            tyrant: [tyr(&splits.train), tyr(&splits.validation), tyr(&splits.test)],
            schema,
            lstm: None,
            transformer: None,
        }
    }

    fn trained(&mut self, lstm: bool) -> &(ModelHandle, Duration) {
        let (slot, arch) = if lstm {
            (&mut self.lstm, Architecture::lstm_mini())
        } else {
            (&mut self.transformer, Architecture::transformer_mini())
        };
        slot.get_or_insert_with(|| {
            let start = Instant::now();
            let m = train(arch, self.schema.clone(), &self.train, &self.validation, &TrainConfig::default()).unwrap();
            (m, start.elapsed())
        })
    }

    fn lstm(&mut self) -> ModelHandle {
        self.trained(true).0.clone()
    }
}

/// Lazily built state shared across criteria.
#[derive(Default)]
struct Run {
    fixture: Option<Fixture>,
    ranks: Option<RankCache>,
}

impl Run {
    fn fixture(&mut self) -> &mut Fixture {
        self.fixture.get_or_insert_with(Fixture::build)
    }

    fn ranks(&mut self) -> (&Fixture, &RankCache) {
        let f = self.fixture.get_or_insert_with(Fixture::build);
        let c = self.ranks.get_or_insert_with(|| RankCache::build(f));
        (f, c)
    }
}

type Criterion = fn(&mut Run) -> Check;

const CRITERIA: [(u8, &str, Criterion); 8] = [
    (1, "gradient correctness", |_| gradient_correctness()),
    (2, "IG completeness", |r| ig_completeness(r.fixture())),
    (3, "SG degenerate and scaling", |r| sg_checks(r.fixture())),
    (4, "planted-signal learning", |r| planted_learning(r.fixture())),
    (5, "attribution recall on planted causes", |r| planted_recall(r.fixture())),
    (6, "fidelity endpoints and trend", fidelity_trend),
    (7, "fidelity steps insensitivity", fidelity_steps),
    (8, "determinism", |_| determinism()),
];

fn main() -> ExitCode {
    let selected: Option<Vec<u8>> = std::env::var("EVENTLENS_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut run = Run::default();
    let mut lines = Vec::new();
    for (id, name, check) in CRITERIA {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(|| check(&mut run))) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        let line = Line {
            id,
            name,
            pass,
            detail,
            elapsed: start.elapsed(),
        };
        println!(
            "{} criterion {}: {} [{:.1}s] {}",
            if line.pass { "PASS" } else { "FAIL" },
            line.id,
            line.name,
            line.elapsed.as_secs_f64(),
            line.detail
        );
        lines.push(line);
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let cfg = GeneratorConfig {
        min_length: 300,
        max_length: 320,
        ..GeneratorConfig::default()
    };
    let records: Vec<_> = (0..2).map(|s| generate_game(s, &cfg).unwrap()).collect();
    let schema = FeatureSchema::mini_skeleton().fit_normalization(&records).unwrap();
    let windows = build_windows(&records, &schema, Task::Win, 0, WINDOW).unwrap();
    let batch = [&windows[0], windows.iter().find(|w| w.game_id != windows[0].game_id).unwrap()];
    let archs = [
        Architecture::Lstm(LstmConfig {
            hidden: 3,
            head_width: 4,
            ..LstmConfig::default()
        }),
        Architecture::Transformer(TransformerConfig {
            heads: 2,
            width: 4,
            ffn_width: 6,
            head_width: 4,
            ..TransformerConfig::default()
        }),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for arch in archs {
        let model = ModelHandle::init(arch, schema.clone(), Task::Win, 5).map_err(|e| e.to_string())?;
        for mode in [Mode::Eval, Mode::Train { mask_seed: 9 }] {
            let r = check_gradients(&model, &batch, mode, 1e-5, 1e-4, 1).map_err(|e| e.to_string())?;
            ok &= r.failures == 0;
            parts.push(format!(
                "{} {}: {} entries, max rel err {:.1e}",
                model.architecture.tag(),
                if mode == Mode::Eval { "eval" } else { "train" },
                r.checked,
                r.max_error
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((ok && secs <= 60.0, parts.join("; ")))
}

fn completeness_error(model: &ModelHandle, x: &Tensor, steps: usize) -> Result<(f64, f64), String> {
    let map = integrated_gradients(model, x, Target::Predicted, &IgConfig { steps, baseline: None })
        .map_err(|e| e.to_string())?;
    let p0 = model.forward(&Tensor::zeros(x.shape()), Mode::Eval).map_err(|e| e.to_string())?[map.target];
    let delta = map.probability - p0;
    Ok(((map.total() - delta).abs(), delta))
}

fn ig_completeness(f: &mut Fixture) -> Check {
    let model = f.lstm();
    let start = Instant::now();
    let mut idx: Vec<usize> = (0..f.test.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    let mut worst: f64 = 0.0;
    let mut within = 0;
    for &i in &idx[..20] {
        let (err, delta) = completeness_error(&model, &f.test[i].x, 300)?;
        let bound = 0.005 * delta.abs() + 1e-4;
        within += usize::from(err <= bound);
        worst = worst.max(err / bound);
    }
    let mut ok = within == 20;
    let x = &f.test[idx[0]].x;
    let e10 = completeness_error(&model, x, 10)?.0;
    let e1000 = completeness_error(&model, x, 1000)?.0;
    ok &= e10 > e1000;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        ok && secs <= 120.0,
        format!("{within}/20 windows within bound, worst error / bound {worst:.3}; error at 10 steps {e10:.2e} vs 1000 steps {e1000:.2e}"),
    ))
}

fn sg_checks(f: &mut Fixture) -> Check {
    let model = f.lstm();
    let start = Instant::now();
    let stats = DimensionStats::from_windows(&f.train).unwrap();
    let x = &f.test[0].x;
    let (y, grad) = input_gradient(&model, x, Target::Predicted).map_err(|e| e.to_string())?;
    let sg0 = smoothgrad(
        &model,
        x,
        Target::Class(y),
        &SgConfig {
            steps: 50,
            sigma_ratio: 0.0,
            seed: 1,
        },
        &stats,
    )
    .map_err(|e| e.to_string())?;
    let diff = sg0
        .scores
        .data()
        .iter()
        .zip(grad.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // Per-entry std of the time-averaged map across 30 seeds.
    let stds = |steps: usize| -> Result<Vec<f64>, String> {
        let runs: Vec<Vec<f64>> = (0..30)
            .map(|seed| {
                smoothgrad(&model, x, Target::Class(y), &SgConfig { steps, sigma_ratio: 0.15, seed }, &stats)
                    .map(|m| m.time_avg)
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        let n = runs.len() as f64;
        Ok((0..runs[0].len())
            .map(|i| {
                let mean = runs.iter().map(|r| r[i]).sum::<f64>() / n;
                (runs.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            })
            .collect())
    };
    let (lo, hi) = (stds(100)?, stds(400)?);
    let pooled = |v: &[f64]| v.iter().map(|s| s * s).sum::<f64>().sqrt();
    let ratio = pooled(&lo) / pooled(&hi);
    let mut per_entry: Vec<f64> = lo.iter().zip(&hi).filter(|(_, h)| **h > 0.0).map(|(l, h)| l / h).collect();
    per_entry.sort_by(f64::total_cmp);
    let median = per_entry.get(per_entry.len() / 2).copied().unwrap_or(f64::NAN);
    let secs = start.elapsed().as_secs_f64();
    Ok((
        diff <= 1e-9 && (1.6..=2.4).contains(&ratio) && secs <= 180.0,
        format!("sigma 0 max deviation {diff:.1e}; std ratio 100 -> 400 steps {ratio:.3} (median per entry {median:.3})"),
    ))
}

fn shuffled(windows: &[SequenceWindow], seed: u64) -> Vec<SequenceWindow> {
    let mut labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    windows
        .iter()
        .zip(labels)
        .map(|(w, label)| SequenceWindow { label, ..w.clone() })
        .collect()
}

fn planted_learning(f: &mut Fixture) -> Check {
    let labels: Vec<usize> = f.test.iter().map(|w| w.label).collect();
    let majority = modal_rate(&labels);
    let mut ok = f.train.len() >= 2000;
    let mut parts = vec![format!("{} training instances, test majority rate {majority:.3}", f.train.len())];
    for lstm in [true, false] {
        let (model, took) = f.trained(lstm).clone();
        let acc = accuracy(&model, &f.test).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let noise = train(
            model.architecture.clone(),
            f.schema.clone(),
            &shuffled(&f.train, 3),
            &shuffled(&f.validation, 4),
            &TrainConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let noise_acc = accuracy(&noise, &f.test).map_err(|e| e.to_string())?;
        let within = took + start.elapsed() <= Duration::from_secs(600);
        ok &= acc >= 0.95 && (noise_acc - majority).abs() <= 0.1 && within;
        parts.push(format!(
            "{}: accuracy {acc:.3} ({:.0}s), shuffled-label accuracy {noise_acc:.3}",
            model.architecture.tag(),
            took.as_secs_f64()
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn is_planted_cause(name: &str) -> bool {
    name.ends_with(".tyrant_distance") || name.ends_with(".gold") || name.starts_with("global.gold")
}

fn planted_recall(f: &mut Fixture) -> Check {
    let [tr, va, te] = &f.tyrant;
    let model = train(Architecture::lstm_mini(), f.schema.clone(), tr, va, &TrainConfig::default())
        .map_err(|e| e.to_string())?;
    let acc = accuracy(&model, te).map_err(|e| e.to_string())?;
    if te.len() < 50 {
        return Err(format!("only {} tyrant test instances", te.len()));
    }
    let picks: Vec<&SequenceWindow> = (0..50).map(|i| &te[i * te.len() / 50]).collect();
    let mut hits = 0;
    for w in &picks {
        let map = integrated_gradients(&model, &w.x, Target::Predicted, &IgConfig::default()).map_err(|e| e.to_string())?;
        let top = map.top_k(8).map_err(|e| e.to_string())?;
        if top
            .iter()
            .any(|&d| is_planted_cause(&f.schema.dimension_name(d).unwrap_or_default()))
        {
            hits += 1;
        }
    }
    let rate = hits as f64 / picks.len() as f64;
    Ok((
        rate >= 0.8,
        format!("{hits}/50 instances with a planted cause in the IG top 8 (tyrant accuracy {acc:.3})"),
    ))
}

/// Attribution rankings reused between criteria 6 and 7.
struct RankCache {
    model: ModelHandle,
    train: Vec<RankedInstance>,
    test: Vec<RankedInstance>,
    random_train: Vec<RankedInstance>,
    random_test: Vec<RankedInstance>,
}

impl RankCache {
    fn build(f: &mut Fixture) -> Self {
        let model = f.lstm();
        let ig = Attributor::Ig(IgConfig::default());
        let (train, d1) = rank_instances(&model, &ig, &f.train, 0);
        let (test, d2) = rank_instances(&model, &ig, &f.test, f.train.len() as u64);
        assert_eq!(d1 + d2, 0, "IG dropped instances");
        let random = Attributor::Random { seed: 17 };
        let (random_train, _) = rank_instances(&model, &random, &f.train, 0);
        let (random_test, _) = rank_instances(&model, &random, &f.test, f.train.len() as u64);
        Self {
            model,
            train,
            test,
            random_train,
            random_test,
        }
    }
}

fn fidelity_at(
    model: &ModelHandle,
    train: &[RankedInstance],
    test: &[RankedInstance],
    k: usize,
    seeds: &[u64],
) -> Result<f64, String> {
    let set = MaskedSet {
        train: masked_windows(train, k).map_err(|e| e.to_string())?,
        test: masked_windows(test, k).map_err(|e| e.to_string())?,
        dropped: 0,
    };
    let mut total = 0.0;
    for &seed in seeds {
        let r = score_masked(model, eventlens::attribution::Method::Ig, k, &set, &ProxyConfig::default(), seed)
            .map_err(|e| e.to_string())?;
        total += r.fidelity;
    }
    Ok(total / seeds.len() as f64)
}

fn fidelity_trend(run: &mut Run) -> Check {
    let start = Instant::now();
    let (_, c) = run.ranks();
    let d = c.model.input_width();
    let seeds = [0, 1, 2];
    let mut means = Vec::new();
    for k in [d, 32, 8, 1] {
        means.push((k, fidelity_at(&c.model, &c.train, &c.test, k, &seeds)?));
    }
    let predicted: Vec<usize> = c.test.iter().map(|r| r.predicted).collect();
    let modal = modal_rate(&predicted);
    let random = fidelity_at(&c.model, &c.random_train, &c.random_test, 1, &seeds)?;
    let monotone = means.windows(2).all(|w| w[1].1 <= w[0].1);
    let secs = start.elapsed().as_secs_f64();
    let ok = means[0].1 >= 0.95 && (random - modal).abs() <= 0.05 && monotone && secs <= 1200.0;
    let cells: Vec<String> = means.iter().map(|(k, m)| format!("k={k} {m:.4}")).collect();
    Ok((
        ok,
        format!(
            "{} V / {} W; mean fidelity {}; random k=1 {random:.4} vs modal rate {modal:.4}",
            c.train.len(),
            c.test.len(),
            cells.join(", ")
        ),
    ))
}

fn fidelity_steps(run: &mut Run) -> Check {
    const SUBSET: usize = 800;
    const K: usize = 8;
    let (f, c) = run.ranks();
    let n = c.train.len();
    let idx: Vec<usize> = (0..SUBSET.min(n)).map(|i| i * n / SUBSET.min(n)).collect();
    let windows: Vec<SequenceWindow> = idx.iter().map(|&i| f.train[i].clone()).collect();
    let seeds = [0, 1];
    let mut cells = Vec::new();
    for steps in [10, 100, 500] {
        let (train, test) = if steps == 100 {
            let train: Vec<RankedInstance> = idx.iter().map(|&i| c.train[i].clone()).collect();
            (train, c.test.clone())
        } else {
            let ig = Attributor::Ig(IgConfig { steps, baseline: None });
            let (train, _) = rank_instances(&c.model, &ig, &windows, 0);
            let (test, _) = rank_instances(&c.model, &ig, &f.test, n as u64);
            (train, test)
        };
        cells.push((steps, fidelity_at(&c.model, &train, &test, K, &seeds)?));
    }
    let lo = cells.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let hi = cells.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let shown: Vec<String> = cells.iter().map(|(s, v)| format!("steps={s} {v:.4}")).collect();
    Ok((
        hi - lo <= 0.05,
        format!("k={K}, {} V / {} W: {}; spread {:.4}", idx.len(), c.test.len(), shown.join(", "), hi - lo),
    ))
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg: RunConfig = serde_json::from_value(serde_json::json!({
        "task": "tyrant",
        "games": 24,
        "horizons": [5, 10],
        "generator": {"min_length": 300, "max_length": 420, "signal_strength": 1.0},
        "lstm": {"layers": 1, "hidden": 5, "head_width": 6},
        "transformer": {"layers": 1, "heads": 2, "width": 8, "ffn_width": 12, "head_width": 6},
        "train": {"epochs": 3, "batch_size": 16},
        "attribution": {"steps": 6, "instances": [0, 1]},
        "fidelity": {"seeds": [0, 1], "steps_grid": [3, 6], "max_train_instances": 40, "max_test_instances": 12,
                     "proxy": {"train": {"epochs": 2, "batch_size": 16}}}
    }))
    .map_err(|e| e.to_string())?;
    cfg.paths.data = dir.path().join("data");
    cfg.paths.checkpoints = dir.path().join("checkpoints");
    cfg.paths.reports = dir.path().join("reports");
    cfg.validate().map_err(|e| e.to_string())?;
    let run = |force: bool| -> Result<(), String> {
        cmd_gen(&cfg, force).map_err(|e| format!("gen: {e}"))?;
        cmd_train(&cfg, force).map_err(|e| format!("train: {e}"))?;
        cmd_attribute(&cfg, &AttributeOptions::default(), force).map_err(|e| format!("attribute: {e}"))?;
        cmd_fidelity(&cfg, &FidelityOptions::default(), force).map_err(|e| format!("fidelity: {e}"))?;
        cmd_report(&cfg, force).map_err(|e| format!("report: {e}"))?;
        Ok(())
    };
    run(false)?;
    let first = snapshot(dir.path());
    run(true)?;
    let second = snapshot(dir.path());
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let same_set = first.len() == second.len();
    Ok((
        differing.is_empty() && same_set && !first.is_empty(),
        if differing.is_empty() {
            format!("{} output files byte-identical across two runs", first.len())
        } else {
            format!("differing files: {differing:?}")
        },
    ))
}
