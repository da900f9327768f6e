//! From storm tracks to training windows: per-step features (wind, pressure,
//! displacement, heading, grid id), zero-padding to length 100, 13-step
//! segmentation, the storm-level 85:15 split and min-max normalization
//! onto [-1, 1].
//!
//! ```bash
//! cargo run --release --example window_dataset
//! ```

use stormgrid::dataset::{
    fit_normalizer, normalize_split, split_by_storm, window_storms, CachedStorm, FEATURE_NAMES,
};
use stormgrid::geo::fit_grid;
use stormgrid::hurdat::{filter_tracks, parse_hurdat2};
use stormgrid::synth::{generate_hurdat2, SynthConfig};

fn main() {
    let cfg = SynthConfig {
        start_year: 1990,
        end_year: 2005,
        seed: 11,
        storms_per_year: 8,
    };
    let tracks = parse_hurdat2(&generate_hurdat2(&cfg)).expect("synthetic corpus parses");
    let filtered = filter_tracks(&tracks, 1990, 2005);

    let positions: Vec<_> = filtered
        .iter()
        .flat_map(|t| t.points.iter().map(|p| p.position))
        .collect();
    let grid = fit_grid(&positions, 1.0).expect("nonempty");
    let storms: Vec<CachedStorm> = filtered
        .iter()
        .map(|t| CachedStorm::from_track(t).expect("filtered tracks are complete"))
        .collect();

    let groups = window_storms(&storms, &grid, 12, 1, 100).expect("windowing");
    let total: usize = groups.iter().map(|g| g.windows.len()).sum();
    println!(
        "{} storms -> {} windows of 12 steps x {} features (label = 13th step's grid id)",
        groups.len(),
        total,
        FEATURE_NAMES.len()
    );

    let split = split_by_storm(groups, 0.85, 7).expect("enough storms");
    println!(
        "storm-level split: {} train windows from {} storms, {} test windows from {} storms ({:.1}% train)",
        split.train_sample_count(),
        split.train.len(),
        split.test_sample_count(),
        split.test.len(),
        100.0 * split.train_sample_count() as f64
            / (split.train_sample_count() + split.test_sample_count()) as f64
    );

    let normalizer = fit_normalizer(&split.train, &grid).expect("non-degenerate features");
    for (name, (min, max)) in FEATURE_NAMES.iter().zip(
        normalizer
            .feature_ranges
            .iter()
            .chain(std::iter::once(&normalizer.grid_range)),
    ) {
        println!("  {name:>9} range fitted on train: [{min:.2}, {max:.2}]");
    }

    let sets = normalize_split(&split, &normalizer);
    let sample = &sets.train[0];
    println!(
        "first sample: label {:.5} (cell {}), last input row {:?}",
        sample.label,
        sample.raw_label,
        sample.inputs.last().map(|r| r.map(|v| (v * 1000.0).round() / 1000.0)),
    );
}
