//! Multi-step forecasting: train a quick model, seed it with a held-out
//! storm's first 12 steps, roll the prediction loop 8 steps ahead and write
//! the trajectory as GeoJSON and CSV next to the system temp dir.
//!
//! ```bash
//! cargo run --release --example rollout_export
//! ```

use stormgrid::checkpoint::{Checkpoint, TrainingMeta};
use stormgrid::dataset::{
    fit_normalizer, normalize_split, split_by_storm, window_storms, CachedStorm,
};
use stormgrid::forecast::{export_trajectory, forecast_storm, ExportFormat};
use stormgrid::geo::fit_grid;
use stormgrid::hurdat::{filter_tracks, parse_hurdat2};
use stormgrid::model::ModelConfig;
use stormgrid::synth::{generate_hurdat2, SynthConfig};
use stormgrid::train::{train, TrainConfig};

fn main() {
    let corpus = SynthConfig {
        start_year: 1998,
        end_year: 2004,
        seed: 21,
        storms_per_year: 8,
    };
    let tracks = parse_hurdat2(&generate_hurdat2(&corpus)).expect("corpus parses");
    let filtered = filter_tracks(&tracks, 1998, 2004);
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
    let split = split_by_storm(groups, 0.85, 7).expect("enough storms");
    let normalizer = fit_normalizer(&split.train, &grid).expect("fit");
    let sets = normalize_split(&split, &normalizer);

    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        epochs: 25,
        ..TrainConfig::default()
    };
    let out = train(&model_cfg, &sets.train, &train_cfg, None).expect("training");
    let ckpt = Checkpoint {
        config: model_cfg,
        params: out.params,
        normalizer,
        grid: grid.clone(),
        meta: TrainingMeta {
            epochs: train_cfg.epochs,
            final_train_mse: *out.loss_curve.last().unwrap(),
            train_seed: train_cfg.seed,
            split_seed: split.seed,
            train_samples: sets.train.len(),
        },
    };

    // pick a held-out storm long enough to seed the 12-step window
    let held_out = split
        .test
        .iter()
        .find(|g| g.windows.len() >= 4)
        .expect("a usable test storm");
    let storm = storms
        .iter()
        .find(|s| s.storm_id == held_out.storm_id)
        .expect("storm present");

    let trajectory = forecast_storm(&ckpt, storm, 8).expect("rollout");
    println!(
        "storm {}: {} observed fixes, {} forecast steps",
        trajectory.storm_id,
        trajectory.observed.len(),
        trajectory.forecast.len()
    );
    for step in &trajectory.forecast {
        println!(
            "  +{:2}h cell {:5} center ({:6.1}, {:7.1}){}",
            step.step_index * 6,
            step.grid_id,
            step.center.lat,
            step.center.lon,
            if step.bearing_carried { "  [bearing carried]" } else { "" }
        );
    }

    let dir = std::env::temp_dir().join("stormgrid_example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let geojson = dir.join("trajectory.geojson");
    let csv = dir.join("trajectory.csv");
    export_trajectory(&trajectory, ExportFormat::GeoJson, &geojson).expect("geojson");
    export_trajectory(&trajectory, ExportFormat::Csv, &csv).expect("csv");
    println!("wrote {} and {}", geojson.display(), csv.display());
}
