//! The whole pipeline in one sitting, the way the CLI wires it: synthesize
//! an archive, ingest + filter, fit the grid, window and split, train,
//! evaluate, forecast one storm and export its trajectory.
//!
//! ```bash
//! cargo run --release --example end_to_end
//! ```

use stormgrid::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
use stormgrid::dataset::{
    fit_normalizer, normalize_split, split_by_storm, window_storms, CachedStorm,
};
use stormgrid::forecast::{forecast_storm, persistence_accuracy, trajectory_geojson};
use stormgrid::geo::fit_grid;
use stormgrid::hurdat::{dataset_summary, filter_tracks, parse_hurdat2};
use stormgrid::model::ModelConfig;
use stormgrid::synth::{generate_hurdat2, SynthConfig};
use stormgrid::train::{evaluate, train, TrainConfig};

fn main() {
    // 1. archive
    let corpus = SynthConfig {
        start_year: 1990,
        end_year: 2002,
        seed: 42,
        storms_per_year: 8,
    };
    let text = generate_hurdat2(&corpus);
    println!("[1] synthesized archive: {} bytes", text.len());

    // 2. ingest
    let tracks = parse_hurdat2(&text).expect("archive parses");
    let filtered = filter_tracks(&tracks, 1990, 2002);
    let summary = dataset_summary(&filtered);
    println!(
        "[2] ingested {} storms / {} fixes (longest {})",
        summary.storms, summary.points, summary.max_track_len
    );

    // 3. grid + windows + split + normalization
    let positions: Vec<_> = filtered
        .iter()
        .flat_map(|t| t.points.iter().map(|p| p.position))
        .collect();
    let grid = fit_grid(&positions, 1.0).expect("nonempty");
    let storms: Vec<CachedStorm> = filtered
        .iter()
        .map(|t| CachedStorm::from_track(t).expect("complete"))
        .collect();
    let groups = window_storms(&storms, &grid, 12, 1, 100).expect("windowing");
    let split = split_by_storm(groups, 0.85, 7).expect("split");
    let normalizer = fit_normalizer(&split.train, &grid).expect("fit");
    let sets = normalize_split(&split, &normalizer);
    println!(
        "[3] {} cells, {} train / {} test windows",
        grid.cell_count(),
        sets.train.len(),
        sets.test.len()
    );

    // 4. train
    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let out = train(&model_cfg, &sets.train, &train_cfg, None).expect("training");
    println!(
        "[4] trained {} epochs, final train MSE {:.6}",
        train_cfg.epochs,
        out.loss_curve.last().unwrap()
    );

    // 5. checkpoint round-trip
    let dir = std::env::temp_dir().join("stormgrid_end_to_end");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let ckpt_path = dir.join("checkpoint.cgf");
    let ckpt = Checkpoint {
        config: model_cfg.clone(),
        params: out.params,
        normalizer: normalizer.clone(),
        grid: grid.clone(),
        meta: TrainingMeta {
            epochs: train_cfg.epochs,
            final_train_mse: *out.loss_curve.last().unwrap(),
            train_seed: train_cfg.seed,
            split_seed: split.seed,
            train_samples: sets.train.len(),
        },
    };
    save_checkpoint(&ckpt, &ckpt_path).expect("save");
    let ckpt = load_checkpoint(&ckpt_path).expect("load");
    println!("[5] checkpoint round-tripped at {}", ckpt_path.display());

    // 6. evaluate vs the persistence baseline
    let metrics = evaluate(&ckpt.params, &ckpt.config, &sets.test, &normalizer, &grid)
        .expect("evaluate");
    let baseline = persistence_accuracy(&split.test, &grid).expect("baseline");
    println!(
        "[6] test MSE {:.6}, exact-cell accuracy {:.4} (within-1 {:.4}), persistence {:.4}",
        metrics.mse, metrics.accuracy, metrics.accuracy_within_1, baseline
    );

    // 7. forecast a held-out storm
    let storm = split
        .test
        .iter()
        .filter_map(|g| storms.iter().find(|s| s.storm_id == g.storm_id))
        .find(|s| s.len() >= 14)
        .expect("a long-enough test storm");
    let trajectory = forecast_storm(&ckpt, storm, 6).expect("rollout");
    let geojson = trajectory_geojson(&trajectory);
    println!(
        "[7] rolled out storm {} for {} steps; GeoJSON has {} features",
        trajectory.storm_id,
        trajectory.forecast.len(),
        geojson["features"].as_array().unwrap().len()
    );
}
