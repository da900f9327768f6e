//! Deterministic synthetic best-track corpus in the HURDAT2 text layout.
//!
//! Storms follow the classic Atlantic life cycle: genesis in the deep
//! tropics, west-northwest steering, recurvature to the northeast once they
//! gain latitude, intensification to a peak and decay. Early-era storms get
//! the archive's warts (missing pressure, sparse winds) and occasional
//! non-synoptic landfall rows, so the ingest filter has real work to do.
//! Fixes are quantized to 0.1 degrees like the archive.

use chrono::{NaiveDate, TimeDelta};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geo::{self, GeoPoint};
use crate::hurdat::{to_hurdat2_string, StormHeader, StormTrack, TrackPoint};

const NAMES: [&str; 24] = [
    "ALBERTO", "BERYL", "CHRIS", "DEBBY", "ERNESTO", "FLORENCE", "GORDON", "HELENE", "ISAAC",
    "JOYCE", "KIRK", "LESLIE", "MICHAEL", "NADINE", "OSCAR", "PATTY", "RAFAEL", "SARA", "TONY",
    "VALERIE", "WILLIAM", "IVAN", "DELTA", "HOWIE",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub start_year: i32,
    pub end_year: i32,
    pub seed: u64,
    /// Expected storms per season.
    pub storms_per_year: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            start_year: 1851,
            end_year: 2022,
            seed: 1851,
            storms_per_year: 8,
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn status_for(wind: f64, lat: f64) -> &'static str {
    if lat > 40.0 {
        "EX"
    } else if wind >= 64.0 {
        "HU"
    } else if wind >= 34.0 {
        "TS"
    } else {
        "TD"
    }
}

fn simulate_storm(rng: &mut ChaCha8Rng, year: i32, number: u32) -> StormTrack {
    // genesis in the deep tropics during the season, at a synoptic hour
    let month = rng.random_range(6..=11u32);
    let day = rng.random_range(1..=28u32);
    let hour = *[0u32, 6, 12, 18].get(rng.random_range(0..4)).unwrap();
    let mut time = NaiveDate::from_ymd_opt(year, month, day)
        .unwrap()
        .and_hms_opt(hour, 0, 0)
        .unwrap();

    let mut lat = rng.random_range(8.0..20.0);
    let mut lon = rng.random_range(-75.0..-22.0);
    let mut heading = rng.random_range(260.0..295.0f64);
    let mut speed_kt = rng.random_range(8.0..14.0f64);
    let mut wind = rng.random_range(25.0..35.0f64);
    let peak = rng.random_range(45.0..140.0f64);
    let recurve_lat = rng.random_range(21.0..33.0f64);
    let mut decaying = false;

    // archive-era imperfections
    let pressure_all_missing = year < 1944 && rng.random_bool(0.35);
    let sparse_wind = year < 1944 && rng.random_bool(0.15);

    let mut points: Vec<TrackPoint> = Vec::new();
    for _ in 0..96 {
        let pressure = 1013.0 - 0.72 * wind + rng.random_range(-2.0..2.0);
        let wind_missing = sparse_wind && rng.random_bool(0.2);
        let pressure_missing =
            pressure_all_missing || (rng.random_bool(0.02) && points.len() > 4);
        points.push(TrackPoint {
            timestamp: time,
            record_kind: None,
            status: status_for(wind, lat).to_string(),
            position: GeoPoint {
                lat: quantize(lat),
                lon: quantize(lon),
            },
            max_wind: (!wind_missing).then_some(wind.round() as i32),
            min_pressure: (!pressure_missing).then_some(pressure.round().clamp(890.0, 1012.0) as i32),
            extras: vec!["-999".into(); 4],
        });

        // steering: WNW drift in the tropics, recurvature poleward of it
        if lat > recurve_lat {
            let target = 45.0;
            let delta = ((target - heading + 540.0) % 360.0) - 180.0;
            heading += delta.clamp(-9.0, 9.0);
            speed_kt = (speed_kt + rng.random_range(0.0..1.2)).min(35.0);
        } else {
            heading += rng.random_range(-1.0..2.5);
        }
        heading = (heading + rng.random_range(-6.0..6.0)).rem_euclid(360.0);
        speed_kt = (speed_kt + rng.random_range(-0.8..0.8)).clamp(4.0, 38.0);

        // intensity life cycle
        if decaying || lat > 42.0 {
            decaying = true;
            wind -= rng.random_range(1.0..6.0);
        } else if wind < peak {
            wind += rng.random_range(1.0..7.0);
        } else {
            decaying = rng.random_bool(0.3);
        }
        wind = wind.clamp(15.0, 165.0);

        let miles = speed_kt * 6.0 * 1.150779;
        let next = geo::destination(
            GeoPoint { lat, lon },
            heading,
            miles,
        );
        lat = next.lat;
        lon = next.lon;
        time += TimeDelta::hours(6);

        if wind < 20.0 || lat > 55.0 || !(-100.0..10.0).contains(&lon) {
            break;
        }
    }

    // occasional landfall record between two synoptic fixes
    if points.len() > 6 && rng.random_bool(0.15) {
        let at = rng.random_range(2..points.len() - 1);
        let mut extra = points[at].clone();
        extra.timestamp += TimeDelta::hours(3);
        extra.record_kind = Some('L');
        points.insert(at + 1, extra);
    }

    let name = if year >= 1950 {
        NAMES[rng.random_range(0..NAMES.len())].to_string()
    } else {
        "UNNAMED".to_string()
    };
    StormTrack {
        header: StormHeader {
            basin: "AL".to_string(),
            cyclone_number: number,
            year,
            name,
            declared_row_count: points.len(),
        },
        points,
    }
}

/// Generate the full synthetic storm archive as parsed tracks.
pub fn generate_tracks(cfg: &SynthConfig) -> Vec<StormTrack> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracks = Vec::new();
    for year in cfg.start_year..=cfg.end_year {
        let n = rng.random_range(cfg.storms_per_year.saturating_sub(3)..=cfg.storms_per_year + 4);
        for number in 1..=n {
            tracks.push(simulate_storm(&mut rng, year, number as u32));
        }
    }
    tracks
}

/// Generate the archive as HURDAT2 text.
pub fn generate_hurdat2(cfg: &SynthConfig) -> String {
    to_hurdat2_string(&generate_tracks(cfg))
}
