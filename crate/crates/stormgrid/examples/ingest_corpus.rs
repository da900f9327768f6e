//! Parse and filter a best-track archive. Generates the bundled synthetic
//! corpus in HURDAT2 text form, parses it back, applies the 1944-2022
//! synoptic-fix filter and prints the before/after counts.
//!
//! Point `--data` at a real NOAA Atlantic HURDAT2 file to ingest that
//! instead:
//!
//! ```bash
//! cargo run --release --example ingest_corpus [-- --data hurdat2.txt]
//! ```

use stormgrid::hurdat::{dataset_summary, filter_tracks, parse_hurdat2};
use stormgrid::synth::{generate_hurdat2, SynthConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let data_path = match (args.next().as_deref(), args.next()) {
        (Some("--data"), Some(path)) => Some(path),
        _ => None,
    };

    let text = match &data_path {
        Some(path) => std::fs::read_to_string(path).expect("readable data file"),
        None => {
            println!("no --data given; generating the synthetic archive (1851-2022)");
            generate_hurdat2(&SynthConfig::default())
        }
    };

    let tracks = parse_hurdat2(&text).expect("well-formed archive");
    let raw = dataset_summary(&tracks);
    println!(
        "parsed:   {} storms, {} fixes, years {}-{}",
        raw.storms, raw.points, raw.min_year, raw.max_year
    );

    let filtered = filter_tracks(&tracks, 1944, 2022);
    let clean = dataset_summary(&filtered);
    println!(
        "filtered: {} storms, {} six-hourly fixes, years {}-{}, longest track {} fixes",
        clean.storms, clean.points, clean.min_year, clean.max_year, clean.max_track_len
    );

    let dropped_storms = raw.storms - clean.storms;
    println!(
        "dropped {} storms (outside the year range, too sparse after synoptic/missing-value cleaning, or shorter than 2 fixes)",
        dropped_storms
    );
}
