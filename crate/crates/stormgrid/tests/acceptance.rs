//! Acceptance suite: one test per numbered criterion, each printing a
//! `CRITERION <n> PASS/FAIL/SKIPPED` line (run with `-- --nocapture` to see
//! them all).
//!
//! Criteria 3b and 8 compare against the real NOAA Atlantic best-track
//! archive; point `HURDAT2_PATH` at a downloaded HURDAT2 file to run them.
//! Without it they print SKIPPED and the rest of the suite runs on the
//! bundled deterministic synthetic corpus.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stormgrid::checkpoint::{save_checkpoint, Checkpoint, TrainingMeta};
use stormgrid::dataset::{
    fit_normalizer, max_step_displacement_miles, normalize_split, split_by_storm, window_storms,
    CachedStorm, SplitDataset, StormSplit,
};
use stormgrid::forecast::{
    forecast_storm, persistence_accuracy, trajectory_geojson,
};
use stormgrid::geo::{bearing, fit_grid, great_circle_miles, GeoPoint, GridSpec};
use stormgrid::hurdat::{dataset_summary, filter_tracks, parse_hurdat2, to_hurdat2_string};
use stormgrid::model::{
    forward_loss_gradients, forward_traced, init_params, loss_for_params, ModelConfig,
};
use stormgrid::nn::Tensor;
use stormgrid::synth::{generate_hurdat2, SynthConfig};
use stormgrid::train::{evaluate, train, Metrics, TrainConfig};

const IVAN_FIXTURE: &str = "\
AL092004,           IVAN,      5,
20040902, 1800,  , TD,   9.7N,  28.5W,  30, 1009,
20040903, 0000,  , TD,   9.7N,  29.8W,  30, 1009,
20040903, 0600,  , TD,   9.9N,  31.1W,  35, 1005,
20040903, 1200,  , TS,  10.2N,  32.4W,  40, 1003,
20040903, 1800,  , TS,  10.6N,  33.6W,  45, 1000,
";

/// Everything the data-dependent criteria share: one corpus, one split, one
/// desk-scale trained checkpoint.
struct Fixture {
    storms: Vec<CachedStorm>,
    grid: GridSpec,
    split: StormSplit,
    sets: SplitDataset,
    ckpt: Checkpoint,
    metrics: Metrics,
    baseline_accuracy: f64,
    max_step_miles: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let corpus = SynthConfig {
            start_year: 1975,
            end_year: 2005,
            seed: 20,
            storms_per_year: 8,
        };
        let tracks = parse_hurdat2(&generate_hurdat2(&corpus)).expect("corpus parses");
        let filtered = filter_tracks(&tracks, 1975, 2005);
        let positions: Vec<GeoPoint> = filtered
            .iter()
            .flat_map(|t| t.points.iter().map(|p| p.position))
            .collect();
        let grid = fit_grid(&positions, 1.0).expect("nonempty corpus");
        let storms: Vec<CachedStorm> = filtered
            .iter()
            .map(|t| CachedStorm::from_track(t).expect("filtered tracks are complete"))
            .collect();
        let groups = window_storms(&storms, &grid, 12, 1, 100).expect("windowing");
        let split = split_by_storm(groups, 0.85, 7).expect("splitting");
        let normalizer = fit_normalizer(&split.train, &grid).expect("normalizer fit");
        let sets = normalize_split(&split, &normalizer);

        let model_cfg = ModelConfig::default();
        let train_cfg = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        let trained = train(&model_cfg, &sets.train, &train_cfg, None).expect("training");
        let ckpt = Checkpoint {
            config: model_cfg.clone(),
            params: trained.params,
            normalizer: normalizer.clone(),
            grid: grid.clone(),
            meta: TrainingMeta {
                epochs: train_cfg.epochs,
                final_train_mse: *trained.loss_curve.last().unwrap(),
                train_seed: train_cfg.seed,
                split_seed: split.seed,
                train_samples: sets.train.len(),
            },
        };
        let metrics = evaluate(&ckpt.params, &model_cfg, &sets.test, &normalizer, &grid)
            .expect("evaluation");
        let baseline_accuracy = persistence_accuracy(&split.test, &grid).expect("baseline");
        let max_step_miles = max_step_displacement_miles(&storms);
        Fixture {
            storms,
            grid,
            split,
            sets,
            ckpt,
            metrics,
            baseline_accuracy,
            max_step_miles,
        }
    })
}

fn real_archive() -> Option<String> {
    let path = std::env::var("HURDAT2_PATH").ok()?;
    match std::fs::read_to_string(&path) {
        Ok(text) => Some(text),
        Err(e) => panic!("HURDAT2_PATH is set but unreadable ({path}: {e})"),
    }
}

#[test]
fn c01_geodesy_oracles() {
    let east = bearing(GeoPoint { lat: 0.0, lon: 0.0 }, GeoPoint { lat: 0.0, lon: 1.0 }).unwrap();
    let north = bearing(GeoPoint { lat: 10.0, lon: 0.0 }, GeoPoint { lat: 11.0, lon: 0.0 }).unwrap();
    let one_degree =
        great_circle_miles(GeoPoint { lat: 0.0, lon: 0.0 }, GeoPoint { lat: 0.0, lon: 1.0 });
    let expected = 69.093;
    println!(
        "CRITERION 1 PASS: east bearing {east} (err {:.2e}), north bearing {north} (err {:.2e}), 1-degree distance {one_degree:.4} mi",
        (east - 90.0).abs(),
        north.abs()
    );
    assert!((east - 90.0).abs() < 1e-9);
    assert!(north.abs() < 1e-9);
    assert!((one_degree - expected).abs() / expected < 0.001);
}

#[test]
fn c02_grid_bijection_exhaustive() {
    let f = fixture();
    let started = Instant::now();
    for id in 0..f.grid.cell_count() {
        let center = f.grid.cell_center(id).unwrap();
        assert_eq!(f.grid.grid_id(center).unwrap(), id, "cell {id}");
    }
    let elapsed = started.elapsed();
    println!(
        "CRITERION 2 PASS: grid_id(cell_center(id)) == id over all {} cells in {:?}",
        f.grid.cell_count(),
        elapsed
    );
    assert!(elapsed.as_secs_f64() < 1.0);
}

#[test]
fn c03_parser_fidelity() {
    // 3a: value-faithful round-trip on the fixture and on a synthetic archive
    let tracks = parse_hurdat2(IVAN_FIXTURE).unwrap();
    let text = to_hurdat2_string(&tracks);
    assert_eq!(parse_hurdat2(&text).unwrap(), tracks);
    let normalize = |s: &str| {
        s.lines()
            .map(|l| l.split(',').map(str::trim).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(normalize(IVAN_FIXTURE), normalize(&text));

    let synth = generate_hurdat2(&SynthConfig {
        start_year: 1960,
        end_year: 1964,
        seed: 33,
        storms_per_year: 6,
    });
    let synth_tracks = parse_hurdat2(&synth).unwrap();
    assert_eq!(
        parse_hurdat2(&to_hurdat2_string(&synth_tracks)).unwrap(),
        synth_tracks
    );
    println!("CRITERION 3a PASS: round-trip is value-faithful on fixture and synthetic archives");

    // 3b: counts on the real Atlantic archive, within 2% of 982 storms /
    // 22,545 records for 1944-2022
    let Some(real) = real_archive() else {
        println!(
            "CRITERION 3b SKIPPED: real-archive counts need the NOAA file; set HURDAT2_PATH (no network in this environment)"
        );
        return;
    };
    let parsed = parse_hurdat2(&real).unwrap();
    let in_years: Vec<_> = parsed
        .iter()
        .filter(|t| (1944..=2022).contains(&t.header.year))
        .collect();
    let filtered = filter_tracks(&parsed, 1944, 2022);
    let summary = dataset_summary(&filtered);
    let raw_points: usize = in_years.iter().map(|t| t.points.len()).sum();
    println!(
        "CRITERION 3b: {} storms / {} points after cleaning ({} storms / {} raw points in 1944-2022; drops come from non-synoptic fixes, missing wind/pressure, gap splitting, and <2-point tracks)",
        summary.storms, summary.points, in_years.len(), raw_points
    );
    let storms_dev = (summary.storms as f64 - 982.0).abs() / 982.0;
    let points_dev = (summary.points as f64 - 22_545.0).abs() / 22_545.0;
    println!(
        "CRITERION 3b: deviation from 982/22545 = {:.2}% / {:.2}% (tolerance 2%)",
        100.0 * storms_dev,
        100.0 * points_dev
    );
    assert!(storms_dev <= 0.02, "storm count off by {storms_dev:.4}");
    assert!(points_dev <= 0.02, "point count off by {points_dev:.4}");
    println!("CRITERION 3b PASS");
}

#[test]
fn c04_gradient_integrity() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let config = ModelConfig {
            d_model: 8,
            n_heads: 2,
            ffn_hidden: 16,
            seed: 1000 + seed,
            ..ModelConfig::default()
        };
        let params = init_params(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows: Vec<Tensor> = (0..3)
            .map(|_| {
                let data = (0..config.seq_len * config.in_features)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                Tensor::from_vec(config.seq_len, config.in_features, data).unwrap()
            })
            .collect();
        let targets: Vec<f64> = (0..3).map(|_| rng.random_range(-0.9..0.9)).collect();
        let (_, analytic) =
            forward_loss_gradients(&params, &config, &windows, &targets).unwrap();

        let eps = 1e-5;
        let names = params.trainable_names();
        for (t_idx, _name) in names.iter().enumerate() {
            for i in 0..analytic[t_idx].len() {
                let fd = {
                    let eval = |delta: f64| {
                        let mut p = params.clone();
                        let mut tensors = p.named_tensors_mut();
                        tensors.retain(|(n, _)| n != stormgrid::model::FROZEN_TENSOR);
                        tensors[t_idx].1.data_mut()[i] += delta;
                        drop(tensors);
                        loss_for_params(&p, &config, &windows, &targets).unwrap()
                    };
                    (eval(eps) - eval(-eps)) / (2.0 * eps)
                };
                let a = analytic[t_idx].data()[i];
                let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = started.elapsed();
    println!(
        "CRITERION 4 PASS: end-to-end gradient vs central differences, max rel err {worst:.3e} over 5 seeds in {elapsed:?}"
    );
    assert!(worst < 1e-4, "max relative error {worst}");
    assert!(elapsed.as_secs() < 30);
}

#[test]
fn c05_attention_rows_sum_to_one() {
    let config = ModelConfig::default();
    let params = init_params(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let data: Vec<f64> = (0..config.seq_len * config.in_features)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let window = Tensor::from_vec(config.seq_len, config.in_features, data).unwrap();
        let (_, mats) = forward_traced(&params, &config, &window).unwrap();
        assert_eq!(mats.len(), config.n_layers * config.n_heads);
        for m in &mats {
            for r in 0..m.rows() {
                let sum: f64 = m.row(r).iter().sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    println!("CRITERION 5 PASS: attention rows sum to 1 within {worst:.3e} on 100 forwards");
    assert!(worst < 1e-9);
}

#[test]
fn c06_overfit_smoke_test() {
    let f = fixture();
    let windows: Vec<_> = f.sets.train.iter().take(32).cloned().collect();
    assert_eq!(windows.len(), 32, "corpus must provide 32 real windows");
    let started = Instant::now();
    let cfg = TrainConfig {
        epochs: 2000,
        batch_size: 32,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let out = train(&ModelConfig::default(), &windows, &cfg, None).unwrap();
    let crossing = out.loss_curve.iter().position(|&l| l < 1e-3);
    let elapsed = started.elapsed();
    println!(
        "CRITERION 6 {}: 32-window overfit reached MSE < 1e-3 at epoch {:?} (final {:.2e}) in {elapsed:?}",
        if crossing.is_some() { "PASS" } else { "FAIL" },
        crossing,
        out.loss_curve.last().unwrap()
    );
    assert!(
        crossing.is_some(),
        "train MSE never crossed 1e-3 within 2000 epochs; min {:?}",
        out.loss_curve.iter().cloned().fold(f64::INFINITY, f64::min)
    );
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
}

#[test]
fn c07_training_determinism() {
    let f = fixture();
    let subset: Vec<_> = f.sets.train.iter().take(600).cloned().collect();
    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    let mut all_metrics = Vec::new();
    for run in 0..2 {
        let out = train(&model_cfg, &subset, &train_cfg, None).unwrap();
        let ckpt = Checkpoint {
            config: model_cfg.clone(),
            params: out.params,
            normalizer: f.ckpt.normalizer.clone(),
            grid: f.grid.clone(),
            meta: TrainingMeta {
                epochs: train_cfg.epochs,
                final_train_mse: *out.loss_curve.last().unwrap(),
                train_seed: train_cfg.seed,
                split_seed: f.split.seed,
                train_samples: subset.len(),
            },
        };
        let path = dir.path().join(format!("run{run}.cgf"));
        save_checkpoint(&ckpt, &path).unwrap();
        let metrics = evaluate(
            &ckpt.params,
            &model_cfg,
            &f.sets.test,
            &f.ckpt.normalizer,
            &f.grid,
        )
        .unwrap();
        paths.push(path);
        all_metrics.push(metrics);
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    println!(
        "CRITERION 7 {}: two identical runs -> checkpoints byte-identical ({}), metrics identical ({})",
        if a == b && all_metrics[0] == all_metrics[1] { "PASS" } else { "FAIL" },
        a == b,
        all_metrics[0] == all_metrics[1]
    );
    assert_eq!(a, b, "checkpoint bytes differ between identical runs");
    assert_eq!(all_metrics[0], all_metrics[1], "metrics differ");
}

#[test]
fn c08_headline_metrics() {
    // binding thresholds: test MSE <= 0.016 and exact-cell accuracy >= 0.685
    // on the real 1944-2022 Atlantic archive under the default config
    const TARGET_MSE: f64 = 0.016;
    const TARGET_ACCURACY: f64 = 0.685;
    const STRETCH_MSE: f64 = 0.0086;
    const STRETCH_ACCURACY: f64 = 0.783;

    let Some(real) = real_archive() else {
        let f = fixture();
        println!(
            "CRITERION 8 SKIPPED: needs the real archive (set HURDAT2_PATH; no network in this environment). \
             Synthetic-corpus desk run for reference: test MSE {:.6} (target <= {TARGET_MSE}, stretch {STRETCH_MSE}), \
             exact-cell accuracy {:.4} (target >= {TARGET_ACCURACY}, stretch {STRETCH_ACCURACY})",
            f.metrics.mse, f.metrics.accuracy
        );
        return;
    };

    let started = Instant::now();
    let parsed = parse_hurdat2(&real).unwrap();
    let filtered = filter_tracks(&parsed, 1944, 2022);
    let positions: Vec<GeoPoint> = filtered
        .iter()
        .flat_map(|t| t.points.iter().map(|p| p.position))
        .collect();
    let grid = fit_grid(&positions, 1.0).unwrap();
    let storms: Vec<CachedStorm> = filtered
        .iter()
        .map(|t| CachedStorm::from_track(t).unwrap())
        .collect();
    let groups = window_storms(&storms, &grid, 12, 1, 100).unwrap();
    let split = split_by_storm(groups, 0.85, 7).unwrap();
    let normalizer = fit_normalizer(&split.train, &grid).unwrap();
    let sets = normalize_split(&split, &normalizer);
    let out = train(
        &ModelConfig::default(),
        &sets.train,
        &TrainConfig::default(),
        None,
    )
    .unwrap();
    let metrics = evaluate(
        &out.params,
        &ModelConfig::default(),
        &sets.test,
        &normalizer,
        &grid,
    )
    .unwrap();
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    println!(
        "CRITERION 8: real-archive run in {minutes:.1} min -> test MSE {:.6} (target <= {TARGET_MSE}, stretch {STRETCH_MSE}), accuracy {:.4} (target >= {TARGET_ACCURACY}, stretch {STRETCH_ACCURACY})",
        metrics.mse, metrics.accuracy
    );
    assert!(minutes <= 30.0, "run took {minutes:.1} minutes");
    assert!(metrics.mse <= TARGET_MSE, "MSE {:.6}", metrics.mse);
    assert!(
        metrics.accuracy >= TARGET_ACCURACY,
        "accuracy {:.4}",
        metrics.accuracy
    );
    println!("CRITERION 8 PASS");
}

#[test]
fn c09_rollout_plausibility() {
    let f = fixture();
    // generous physical cap over the largest observed 6-hour displacement
    let cap_miles = 1.5 * f.max_step_miles;

    let held_out: Vec<&CachedStorm> = f
        .split
        .test
        .iter()
        .filter_map(|g| f.storms.iter().find(|s| s.storm_id == g.storm_id))
        .filter(|s| s.len() >= 14)
        .take(20)
        .collect();
    assert!(
        held_out.len() == 20,
        "need 20 held-out storms, corpus gave {}",
        held_out.len()
    );

    let mut worst_displacement: f64 = 0.0;
    let mut violations = 0usize;
    for storm in &held_out {
        let traj = forecast_storm(&f.ckpt, storm, 8).unwrap();
        assert_eq!(traj.forecast.len(), 8);
        // in-bounds everywhere
        for step in &traj.forecast {
            assert!(f.grid.contains(step.center), "{} step {} out of bounds", storm.storm_id, step.step_index);
        }
        // exported GeoJSON must be valid
        let value = trajectory_geojson(&traj);
        let reparsed: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&value).unwrap()).unwrap();
        assert_eq!(reparsed["type"], "FeatureCollection");
        for feature in reparsed["features"].as_array().unwrap() {
            let geom = &feature["geometry"];
            assert!(geom["type"] == "LineString" || geom["type"] == "Point");
        }
        // consecutive displacement cap
        for pair in traj.forecast.windows(2) {
            let d = great_circle_miles(pair[0].center, pair[1].center);
            worst_displacement = worst_displacement.max(d);
            if d > cap_miles {
                violations += 1;
            }
        }
    }
    let verdict = if violations == 0 { "PASS" } else { "FAIL" };
    println!(
        "CRITERION 9 {verdict}: 20 held-out 8-step rollouts, displacement cap {cap_miles:.0} mi \
         (1.5x max observed {:.0} mi), worst consecutive displacement {worst_displacement:.0} mi, {violations} violations; \
         all steps in-bounds and GeoJSON valid",
        f.max_step_miles
    );
    assert_eq!(
        violations, 0,
        "{violations} consecutive displacements exceed the {cap_miles:.0}-mile cap (worst {worst_displacement:.0} mi); \
         a scalar cell-id regression decodes small id errors as multi-degree latitude jumps, see decisions ledger"
    );
}

#[test]
fn c10_baseline_comparison() {
    let f = fixture();
    let verdict = if f.metrics.accuracy > f.baseline_accuracy {
        "PASS"
    } else {
        "FAIL"
    };
    println!(
        "CRITERION 10 {verdict}: model exact-cell accuracy {:.4} vs persistence baseline {:.4} \
         (test MSE {:.6}, within-one-cell {:.4})",
        f.metrics.accuracy, f.baseline_accuracy, f.metrics.mse, f.metrics.accuracy_within_1
    );
    assert!(
        f.metrics.accuracy > f.baseline_accuracy,
        "model accuracy {:.4} does not exceed the persistence baseline {:.4}; \
         the baseline reuses the exact displacement feature geometrically while the model must \
         regress the cell id to half-cell precision, see decisions ledger",
        f.metrics.accuracy,
        f.baseline_accuracy
    );
}
