//! Train the forecaster on a small synthetic corpus and evaluate it against
//! the held-out storms, alongside the persistence baseline: test MSE in
//! normalized units, exact grid-cell accuracy and the within-one-cell rate.
//!
//! ```bash
//! cargo run --release --example train_and_evaluate
//! ```

use stormgrid::dataset::{
    fit_normalizer, normalize_split, split_by_storm, window_storms, CachedStorm,
};
use stormgrid::forecast::persistence_accuracy;
use stormgrid::geo::fit_grid;
use stormgrid::hurdat::{filter_tracks, parse_hurdat2};
use stormgrid::model::ModelConfig;
use stormgrid::synth::{generate_hurdat2, SynthConfig};
use stormgrid::train::{evaluate, train, TrainConfig};

fn main() {
    let corpus = SynthConfig {
        start_year: 1995,
        end_year: 2005,
        seed: 3,
        storms_per_year: 8,
    };
    let tracks = parse_hurdat2(&generate_hurdat2(&corpus)).expect("corpus parses");
    let filtered = filter_tracks(&tracks, 1995, 2005);
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
    println!(
        "{} train / {} test windows on a {}-cell grid",
        sets.train.len(),
        sets.test.len(),
        grid.cell_count()
    );

    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let mut log = std::io::stderr();
    let out = train(&model_cfg, &sets.train, &train_cfg, Some(&mut log)).expect("training");
    println!(
        "trained {} epochs: first-epoch MSE {:.6}, final {:.6}",
        out.loss_curve.len(),
        out.loss_curve[0],
        out.loss_curve.last().unwrap()
    );

    let metrics = evaluate(&out.params, &model_cfg, &sets.test, &normalizer, &grid).expect("eval");
    let baseline = persistence_accuracy(&split.test, &grid).expect("baseline");
    println!("test MSE            : {:.6}", metrics.mse);
    println!("exact-cell accuracy : {:.4}", metrics.accuracy);
    println!("within-one-cell rate: {:.4}", metrics.accuracy_within_1);
    println!("persistence baseline: {baseline:.4}");
}
