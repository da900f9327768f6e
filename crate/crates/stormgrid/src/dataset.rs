//! Windowed training data: per-step feature derivation, padding, 13-step
//! segmentation (12 input steps, the 13th step's grid id as label), min-max
//! normalization onto [-1, 1], and the storm-level train/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoError, GeoPoint, GridSpec};
use crate::hurdat::StormTrack;
use crate::nn::Tensor;

/// Feature order in every window row.
pub const FEATURE_NAMES: [&str; 5] = ["wind", "pressure", "distance", "bearing", "grid_id"];
pub const N_FEATURES: usize = 5;

/// Fixed padded sequence length; the longest observed track is shorter.
pub const PAD_LEN: usize = 100;

/// Inputs slightly outside the fitted range are tolerated up to this bound
/// and clamped into it.
pub const CLAMP_BOUND: f64 = 1.5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("track {storm_id} needs at least 2 points, got {points}")]
    TrackTooShort { storm_id: String, points: usize },
    #[error("storm {storm_id}: stationary consecutive fixes at index {index}: {source}")]
    StationaryFix {
        storm_id: String,
        index: usize,
        source: GeoError,
    },
    #[error("storm {storm_id} point {index}: {source}")]
    Geo {
        storm_id: String,
        index: usize,
        source: GeoError,
    },
    #[error("track has {steps} steps, padding target is {target}")]
    TooLongToPad { steps: usize, target: usize },
    #[error("feature {name} is degenerate: min == max == {value}")]
    DegenerateFeature { name: String, value: f64 },
    #[error("cannot fit a normalizer on an empty training set")]
    EmptyTrainingSet,
    #[error("need at least 2 storms to split, got {0}")]
    TooFewStorms(usize),
    #[error("storm {storm_id} point {index} has a missing {field}")]
    MissingValue {
        storm_id: String,
        index: usize,
        field: &'static str,
    },
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache format: {0}")]
    CacheFormat(String),
    #[error("cache sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

/// Per-step features: intensity readings at the fix plus the displacement to
/// the following 6-hour fix and the cell holding the current position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFeatures {
    pub wind: f64,
    pub pressure: f64,
    /// Statute miles to the next fix.
    pub distance: f64,
    /// Degrees [0, 360) towards the next fix.
    pub bearing: f64,
    pub grid_id: usize,
}

impl StepFeatures {
    pub fn as_row(&self) -> [f64; N_FEATURES] {
        [
            self.wind,
            self.pressure,
            self.distance,
            self.bearing,
            self.grid_id as f64,
        ]
    }
}

/// One storm, reduced to the clean arrays the pipeline consumes. Produced
/// from filtered tracks (every value present) and stored in the dataset cache.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedStorm {
    pub storm_id: String,
    pub name: String,
    pub year: i32,
    /// Unix seconds per fix.
    pub times: Vec<i64>,
    pub positions: Vec<GeoPoint>,
    pub winds: Vec<f64>,
    pub pressures: Vec<f64>,
}

impl CachedStorm {
    pub fn from_track(track: &StormTrack) -> Result<Self, DatasetError> {
        let storm_id = track.storm_id();
        let mut times = Vec::with_capacity(track.points.len());
        let mut positions = Vec::with_capacity(track.points.len());
        let mut winds = Vec::with_capacity(track.points.len());
        let mut pressures = Vec::with_capacity(track.points.len());
        for (index, p) in track.points.iter().enumerate() {
            let wind = p.max_wind.ok_or(DatasetError::MissingValue {
                storm_id: storm_id.clone(),
                index,
                field: "wind",
            })?;
            let pressure = p.min_pressure.ok_or(DatasetError::MissingValue {
                storm_id: storm_id.clone(),
                index,
                field: "pressure",
            })?;
            times.push(p.timestamp.and_utc().timestamp());
            positions.push(p.position);
            winds.push(f64::from(wind));
            pressures.push(f64::from(pressure));
        }
        Ok(Self {
            storm_id,
            name: track.header.name.clone(),
            year: track.header.year,
            times,
            positions,
            winds,
            pressures,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn derive_steps_core(
    storm_id: &str,
    positions: &[GeoPoint],
    winds: &[f64],
    pressures: &[f64],
    grid: &GridSpec,
) -> Result<Vec<StepFeatures>, DatasetError> {
    if positions.len() < 2 {
        return Err(DatasetError::TrackTooShort {
            storm_id: storm_id.to_string(),
            points: positions.len(),
        });
    }
    let mut steps = Vec::with_capacity(positions.len() - 1);
    for i in 0..positions.len() - 1 {
        let motion = geo::motion(positions[i], positions[i + 1]).map_err(|source| {
            DatasetError::StationaryFix {
                storm_id: storm_id.to_string(),
                index: i,
                source,
            }
        })?;
        let grid_id = grid.grid_id(positions[i]).map_err(|source| DatasetError::Geo {
            storm_id: storm_id.to_string(),
            index: i,
            source,
        })?;
        steps.push(StepFeatures {
            wind: winds[i],
            pressure: pressures[i],
            distance: motion.distance,
            bearing: motion.bearing,
            grid_id,
        });
    }
    Ok(steps)
}

/// One feature row per point except the last (the displacement needs a
/// successor).
pub fn derive_steps(track: &StormTrack, grid: &GridSpec) -> Result<Vec<StepFeatures>, DatasetError> {
    let storm = CachedStorm::from_track(track)?;
    storm_steps(&storm, grid)
}

pub fn storm_steps(storm: &CachedStorm, grid: &GridSpec) -> Result<Vec<StepFeatures>, DatasetError> {
    derive_steps_core(
        &storm.storm_id,
        &storm.positions,
        &storm.winds,
        &storm.pressures,
        grid,
    )
}

/// A step sequence padded with all-zero rows to a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedTrack {
    pub rows: Vec<[f64; N_FEATURES]>,
    pub valid_len: usize,
}

pub fn pad_track(steps: &[StepFeatures], target_len: usize) -> Result<PaddedTrack, DatasetError> {
    if steps.len() > target_len {
        return Err(DatasetError::TooLongToPad {
            steps: steps.len(),
            target: target_len,
        });
    }
    let mut rows: Vec<[f64; N_FEATURES]> = steps.iter().map(StepFeatures::as_row).collect();
    rows.resize(target_len, [0.0; N_FEATURES]);
    Ok(PaddedTrack {
        rows,
        valid_len: steps.len(),
    })
}

/// A 13-element segment before normalization: 12 feature rows plus the
/// 13th row's grid id.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub inputs: Vec<[f64; N_FEATURES]>,
    pub raw_label: usize,
}

/// Windows are placed only over real rows: a start offset `s` is valid when
/// `s + window_len + horizon <= valid_len`, so no window contains padding
/// and every label is an observation.
pub fn make_windows(padded: &PaddedTrack, window_len: usize, horizon: usize) -> Vec<RawWindow> {
    let needed = window_len + horizon;
    if padded.valid_len < needed {
        return Vec::new();
    }
    (0..=padded.valid_len - needed)
        .map(|s| RawWindow {
            inputs: padded.rows[s..s + window_len].to_vec(),
            raw_label: padded.rows[s + needed - 1][4] as usize,
        })
        .collect()
}

/// All windows of one storm, kept together so the split stays storm-level.
#[derive(Debug, Clone, PartialEq)]
pub struct StormWindows {
    pub storm_id: String,
    pub windows: Vec<RawWindow>,
}

/// Window a whole storm list against a grid.
pub fn window_storms(
    storms: &[CachedStorm],
    grid: &GridSpec,
    window_len: usize,
    horizon: usize,
    pad_len: usize,
) -> Result<Vec<StormWindows>, DatasetError> {
    storms
        .iter()
        .map(|storm| {
            let steps = storm_steps(storm, grid)?;
            let padded = pad_track(&steps, pad_len)?;
            Ok(StormWindows {
                storm_id: storm.storm_id.clone(),
                windows: make_windows(&padded, window_len, horizon),
            })
        })
        .collect()
}

/// Affine per-feature map onto [-1, 1]. The four continuous features use
/// ranges fitted on the training split; the grid-id feature and the label
/// share the grid's full id range so every valid cell is representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    /// (min, max) for wind, pressure, distance, bearing.
    pub feature_ranges: [(f64, f64); 4],
    /// (min, max) of the grid id range, i.e. (0, cell_count - 1).
    pub grid_range: (f64, f64),
}

impl Normalizer {
    fn range_for(&self, feature: usize) -> (f64, f64) {
        if feature < 4 {
            self.feature_ranges[feature]
        } else {
            self.grid_range
        }
    }

    /// Map a raw value onto [-1, 1] (exceeding values are clamped into
    /// [-CLAMP_BOUND, CLAMP_BOUND]); returns the value and whether it was
    /// clamped.
    pub fn apply(&self, feature: usize, value: f64) -> (f64, bool) {
        let (min, max) = self.range_for(feature);
        let scaled = 2.0 * (value - min) / (max - min) - 1.0;
        if scaled.abs() > CLAMP_BOUND {
            (scaled.clamp(-CLAMP_BOUND, CLAMP_BOUND), true)
        } else {
            (scaled, false)
        }
    }

    pub fn invert(&self, feature: usize, scaled: f64) -> f64 {
        let (min, max) = self.range_for(feature);
        min + (scaled + 1.0) / 2.0 * (max - min)
    }

    pub fn normalize_label(&self, raw_label: usize) -> f64 {
        self.apply(4, raw_label as f64).0
    }

    /// Continuous grid id back from a normalized prediction.
    pub fn denormalize_label(&self, scaled: f64) -> f64 {
        self.invert(4, scaled)
    }

    /// Normalize one window; returns the sample and how many entries were
    /// clamped.
    pub fn normalize_window(&self, raw: &RawWindow) -> (WindowSample, usize) {
        let mut clamped = 0;
        let inputs = raw
            .inputs
            .iter()
            .map(|row| {
                let mut out = [0.0; N_FEATURES];
                for (f, (&v, slot)) in row.iter().zip(out.iter_mut()).enumerate() {
                    let (scaled, was_clamped) = self.apply(f, v);
                    *slot = scaled;
                    clamped += usize::from(was_clamped);
                }
                out
            })
            .collect();
        (
            WindowSample {
                inputs,
                label: self.normalize_label(raw.raw_label),
                raw_label: raw.raw_label,
            },
            clamped,
        )
    }
}

/// Fit feature ranges on the training windows only.
pub fn fit_normalizer(
    train: &[StormWindows],
    grid: &GridSpec,
) -> Result<Normalizer, DatasetError> {
    let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 4];
    let mut any = false;
    for group in train {
        for w in &group.windows {
            for row in &w.inputs {
                any = true;
                for (f, range) in ranges.iter_mut().enumerate() {
                    range.0 = range.0.min(row[f]);
                    range.1 = range.1.max(row[f]);
                }
            }
        }
    }
    if !any {
        return Err(DatasetError::EmptyTrainingSet);
    }
    for (f, &(min, max)) in ranges.iter().enumerate() {
        if min == max {
            return Err(DatasetError::DegenerateFeature {
                name: FEATURE_NAMES[f].to_string(),
                value: min,
            });
        }
    }
    Ok(Normalizer {
        feature_ranges: ranges,
        grid_range: (0.0, (grid.cell_count() - 1) as f64),
    })
}

/// A normalized sample: 12 rows in [-1, 1] plus the scalar label.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub inputs: Vec<[f64; N_FEATURES]>,
    pub label: f64,
    pub raw_label: usize,
}

impl WindowSample {
    pub fn input_tensor(&self) -> Tensor {
        let data: Vec<f64> = self.inputs.iter().flatten().copied().collect();
        Tensor::from_vec(self.inputs.len(), N_FEATURES, data).expect("normalized rows are finite")
    }
}

/// Storm-level split of raw windows.
#[derive(Debug, Clone, PartialEq)]
pub struct StormSplit {
    pub train: Vec<StormWindows>,
    pub test: Vec<StormWindows>,
    pub seed: u64,
}

impl StormSplit {
    pub fn train_sample_count(&self) -> usize {
        self.train.iter().map(|g| g.windows.len()).sum()
    }

    pub fn test_sample_count(&self) -> usize {
        self.test.iter().map(|g| g.windows.len()).sum()
    }
}

/// Shuffle storms with the seed, then assign them greedily to the training
/// side until it reaches `ratio` of all window samples. Deterministic for a
/// fixed seed; no storm lands on both sides.
pub fn split_by_storm(
    mut groups: Vec<StormWindows>,
    ratio: f64,
    seed: u64,
) -> Result<StormSplit, DatasetError> {
    if groups.len() < 2 {
        return Err(DatasetError::TooFewStorms(groups.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let total: usize = groups.iter().map(|g| g.windows.len()).sum();
    let target = (total as f64 * ratio).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut assigned = 0usize;
    for group in groups {
        if assigned < target {
            assigned += group.windows.len();
            train.push(group);
        } else {
            test.push(group);
        }
    }
    // a split with an empty side cannot train or evaluate; move one storm over
    if test.is_empty() {
        test.push(train.pop().expect("at least two storms"));
    } else if train.is_empty() {
        train.push(test.remove(0));
    }
    Ok(StormSplit { train, test, seed })
}

/// Normalized dataset ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub seed: u64,
}

/// Normalize both sides of a split; clamped test entries are logged.
pub fn normalize_split(split: &StormSplit, normalizer: &Normalizer) -> SplitDataset {
    let mut clamped_total = 0usize;
    let normalize_side = |groups: &[StormWindows], clamped_total: &mut usize| {
        groups
            .iter()
            .flat_map(|g| &g.windows)
            .map(|w| {
                let (sample, clamped) = normalizer.normalize_window(w);
                *clamped_total += clamped;
                sample
            })
            .collect::<Vec<_>>()
    };
    let mut train_clamped = 0usize;
    let train = normalize_side(&split.train, &mut train_clamped);
    let test = normalize_side(&split.test, &mut clamped_total);
    if train_clamped > 0 {
        // training windows define the ranges, so this only fires for the label range
        log::warn!("{train_clamped} training entries clamped to [-{CLAMP_BOUND}, {CLAMP_BOUND}]");
    }
    if clamped_total > 0 {
        log::info!("{clamped_total} test entries clamped to [-{CLAMP_BOUND}, {CLAMP_BOUND}]");
    }
    SplitDataset {
        train,
        test,
        seed: split.seed,
    }
}

/// Largest 6-hour displacement in the data, the physical plausibility cap
/// used to sanity-check rollouts.
pub fn max_step_displacement_miles(storms: &[CachedStorm]) -> f64 {
    storms
        .iter()
        .flat_map(|s| {
            s.positions
                .windows(2)
                .map(|w| geo::great_circle_miles(w[0], w[1]))
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Dataset cache: "CGF1" binary plus a JSON sidecar.
// ---------------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 4] = b"CGF1";
const CACHE_VERSION: u16 = 1;

/// Sidecar contents stored next to the binary cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheSidecar {
    pub version: u16,
    pub grid: GridSpec,
    pub summary: crate::hurdat::DatasetSummary,
    pub max_step_displacement_miles: f64,
    /// Populated once a normalizer has been fitted (after training).
    pub normalizer: Option<Normalizer>,
}

pub fn sidecar_path(cache_path: &std::path::Path) -> std::path::PathBuf {
    let mut os = cache_path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Write the filtered storm set and grid to `path` (+ `.json` sidecar).
pub fn write_cache(
    storms: &[CachedStorm],
    grid: &GridSpec,
    summary: &crate::hurdat::DatasetSummary,
    path: &std::path::Path,
) -> Result<(), DatasetError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(storms.len() as u32).to_le_bytes());
    for s in storms {
        let id = s.storm_id.as_bytes();
        let name = s.name.as_bytes();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&s.year.to_le_bytes());
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for i in 0..s.len() {
            for v in [
                s.times[i] as f64,
                s.positions[i].lat,
                s.positions[i].lon,
                s.winds[i],
                s.pressures[i],
            ] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, &buf)?;
    let sidecar = CacheSidecar {
        version: CACHE_VERSION,
        grid: grid.clone(),
        summary: summary.clone(),
        max_step_displacement_miles: max_step_displacement_miles(storms),
        normalizer: None,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.pos + n > self.buf.len() {
            return Err(DatasetError::CacheFormat(format!(
                "truncated cache: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, DatasetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, DatasetError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, DatasetError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| DatasetError::CacheFormat(format!("bad utf-8 in cache: {e}")))
    }
}

/// Read a cache written by [`write_cache`].
pub fn read_cache(
    path: &std::path::Path,
) -> Result<(Vec<CachedStorm>, CacheSidecar), DatasetError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != CACHE_MAGIC {
        return Err(DatasetError::CacheFormat("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != CACHE_VERSION {
        return Err(DatasetError::CacheFormat(format!(
            "cache version {version}, expected {CACHE_VERSION}"
        )));
    }
    let n_storms = r.u32()? as usize;
    let mut storms = Vec::with_capacity(n_storms);
    for _ in 0..n_storms {
        let storm_id = r.string()?;
        let name = r.string()?;
        let year = r.i32()?;
        let n = r.u32()? as usize;
        let mut storm = CachedStorm {
            storm_id,
            name,
            year,
            times: Vec::with_capacity(n),
            positions: Vec::with_capacity(n),
            winds: Vec::with_capacity(n),
            pressures: Vec::with_capacity(n),
        };
        for _ in 0..n {
            storm.times.push(r.f64()? as i64);
            let lat = r.f64()?;
            let lon = r.f64()?;
            storm.positions.push(GeoPoint { lat, lon });
            storm.winds.push(r.f64()?);
            storm.pressures.push(r.f64()?);
        }
        storms.push(storm);
    }
    if r.pos != buf.len() {
        return Err(DatasetError::CacheFormat(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    let sidecar: CacheSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    Ok((storms, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hurdat::parse_hurdat2;

    const FIXTURE: &str = "\
AL092004,           IVAN,      5,
20040902, 1800,  , TD,   9.7N,  28.5W,  30, 1009,
20040903, 0000,  , TD,   9.7N,  29.8W,  30, 1009,
20040903, 0600,  , TD,   9.9N,  31.1W,  35, 1005,
20040903, 1200,  , TS,  10.2N,  32.4W,  40, 1003,
20040903, 1800,  , TS,  10.6N,  33.6W,  45, 1000,
";

    fn fixture_grid() -> GridSpec {
        GridSpec::new(-40.0, -20.0, 5.0, 15.0, 1.0).unwrap()
    }

    fn demo_steps(n: usize) -> Vec<StepFeatures> {
        (0..n)
            .map(|i| StepFeatures {
                wind: 30.0 + i as f64,
                pressure: 1000.0 - i as f64,
                distance: 80.0 + (i % 7) as f64,
                bearing: 270.0 + (i % 11) as f64,
                grid_id: i % 50,
            })
            .collect()
    }

    #[test]
    fn derive_steps_has_n_minus_one_rows() {
        let tracks = parse_hurdat2(FIXTURE).unwrap();
        let steps = derive_steps(&tracks[0], &fixture_grid()).unwrap();
        assert_eq!(steps.len(), tracks[0].points.len() - 1);
    }

    #[test]
    fn derive_steps_matches_geodesy_oracles() {
        let tracks = parse_hurdat2(FIXTURE).unwrap();
        let steps = derive_steps(&tracks[0], &fixture_grid()).unwrap();
        // frozen high-precision values for the first displacement
        assert!((steps[0].bearing - 270.10952266191987).abs() < 1e-9);
        assert!((steps[0].distance - 88.537256460300644).abs() < 1e-6);
        assert_eq!(steps[0].wind, 30.0);
        assert_eq!(steps[0].pressure, 1009.0);
        let expected_id = fixture_grid().grid_id(GeoPoint { lat: 9.7, lon: -28.5 }).unwrap();
        assert_eq!(steps[0].grid_id, expected_id);
    }

    #[test]
    fn stationary_fix_names_the_storm() {
        let text = "\
AL092004,           IVAN,      2,
20040902, 1800,  , TD,   9.7N,  28.5W,  30, 1009,
20040903, 0000,  , TD,   9.7N,  28.5W,  30, 1009,
";
        let tracks = parse_hurdat2(text).unwrap();
        match derive_steps(&tracks[0], &fixture_grid()).unwrap_err() {
            DatasetError::StationaryFix { storm_id, index, .. } => {
                assert_eq!(storm_id, "AL092004");
                assert_eq!(index, 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn pad_track_appends_zero_rows() {
        let steps = demo_steps(96);
        let padded = pad_track(&steps, PAD_LEN).unwrap();
        assert_eq!(padded.rows.len(), PAD_LEN);
        assert_eq!(padded.valid_len, 96);
        for row in &padded.rows[96..] {
            assert_eq!(row, &[0.0; N_FEATURES]);
        }
    }

    #[test]
    fn pad_track_boundaries() {
        let exact = pad_track(&demo_steps(100), PAD_LEN).unwrap();
        assert_eq!(exact.valid_len, 100);
        assert_eq!(exact.rows.len(), 100);

        let empty = pad_track(&[], PAD_LEN).unwrap();
        assert_eq!(empty.valid_len, 0);
        assert_eq!(empty.rows.len(), 100);

        assert!(matches!(
            pad_track(&demo_steps(101), PAD_LEN).unwrap_err(),
            DatasetError::TooLongToPad { steps: 101, .. }
        ));
    }

    #[test]
    fn window_counts() {
        for (valid, expected) in [(13, 1), (20, 8), (12, 0)] {
            let padded = pad_track(&demo_steps(valid), PAD_LEN).unwrap();
            assert_eq!(make_windows(&padded, 12, 1).len(), expected, "valid {valid}");
        }
    }

    #[test]
    fn windows_never_contain_padding() {
        let padded = pad_track(&demo_steps(40), PAD_LEN).unwrap();
        for w in make_windows(&padded, 12, 1) {
            for row in &w.inputs {
                // demo rows always carry wind >= 30; a zero row would be padding
                assert!(row[0] >= 30.0);
            }
        }
    }

    #[test]
    fn window_label_is_the_13th_grid_id() {
        let steps = demo_steps(14);
        let padded = pad_track(&steps, PAD_LEN).unwrap();
        let windows = make_windows(&padded, 12, 1);
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].raw_label, steps[12].grid_id);
        assert_eq!(windows[1].raw_label, steps[13].grid_id);
    }

    fn demo_groups() -> Vec<StormWindows> {
        (0..10)
            .map(|k| {
                let padded = pad_track(&demo_steps(26), PAD_LEN).unwrap();
                StormWindows {
                    storm_id: format!("AL{k:02}2000"),
                    windows: make_windows(&padded, 12, 1),
                }
            })
            .collect()
    }

    #[test]
    fn normalizer_endpoints_and_round_trip() {
        let groups = demo_groups();
        let grid = fixture_grid();
        let n = fit_normalizer(&groups, &grid).unwrap();
        let (min, max) = n.feature_ranges[0];
        assert_eq!(n.apply(0, min).0, -1.0);
        assert_eq!(n.apply(0, max).0, 1.0);
        assert!(n.apply(0, (min + max) / 2.0).0.abs() < 1e-12);
        for &v in &[min, max, (min + max) / 2.0, min + 0.3 * (max - min)] {
            let (scaled, clamped) = n.apply(0, v);
            assert!(!clamped);
            assert!((n.invert(0, scaled) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_rejects_degenerate_feature() {
        let steps: Vec<StepFeatures> = (0..20)
            .map(|i| StepFeatures {
                wind: 50.0, // constant
                pressure: 1000.0 - i as f64,
                distance: 80.0 + i as f64,
                bearing: 200.0 + i as f64,
                grid_id: i,
            })
            .collect();
        let padded = pad_track(&steps, PAD_LEN).unwrap();
        let groups = vec![StormWindows {
            storm_id: "AL012000".into(),
            windows: make_windows(&padded, 12, 1),
        }];
        match fit_normalizer(&groups, &fixture_grid()).unwrap_err() {
            DatasetError::DegenerateFeature { name, .. } => assert_eq!(name, "wind"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_range_values_clamp_and_flag() {
        let groups = demo_groups();
        let n = fit_normalizer(&groups, &fixture_grid()).unwrap();
        let (_, max) = n.feature_ranges[2];
        let (scaled, clamped) = n.apply(2, max * 100.0);
        assert!(clamped);
        assert_eq!(scaled, CLAMP_BOUND);
    }

    #[test]
    fn split_is_deterministic_and_storm_disjoint() {
        let groups = demo_groups();
        let a = split_by_storm(groups.clone(), 0.85, 9).unwrap();
        let b = split_by_storm(groups.clone(), 0.85, 9).unwrap();
        assert_eq!(a, b);
        let c = split_by_storm(groups.clone(), 0.85, 10).unwrap();
        assert_ne!(a, c);

        let train_ids: Vec<&String> = a.train.iter().map(|g| &g.storm_id).collect();
        for g in &a.test {
            assert!(!train_ids.contains(&&g.storm_id));
        }
        // union preserved
        assert_eq!(a.train.len() + a.test.len(), groups.len());
        let total_windows: usize = groups.iter().map(|g| g.windows.len()).sum();
        assert_eq!(a.train_sample_count() + a.test_sample_count(), total_windows);
    }

    #[test]
    fn equal_storms_split_85_15() {
        let groups: Vec<StormWindows> = (0..100)
            .map(|k| {
                let padded = pad_track(&demo_steps(26), PAD_LEN).unwrap();
                StormWindows {
                    storm_id: format!("AL{k:03}"),
                    windows: make_windows(&padded, 12, 1),
                }
            })
            .collect();
        let split = split_by_storm(groups, 0.85, 4).unwrap();
        assert_eq!(split.train.len(), 85);
        assert_eq!(split.test.len(), 15);
    }

    #[test]
    fn split_needs_two_storms() {
        let groups = vec![demo_groups().remove(0)];
        assert!(matches!(
            split_by_storm(groups, 0.85, 1).unwrap_err(),
            DatasetError::TooFewStorms(1)
        ));
    }

    #[test]
    fn cache_round_trips() {
        let tracks = parse_hurdat2(FIXTURE).unwrap();
        let storms: Vec<CachedStorm> = tracks
            .iter()
            .map(|t| CachedStorm::from_track(t).unwrap())
            .collect();
        let grid = fixture_grid();
        let summary = crate::hurdat::dataset_summary(&tracks);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.cgf");
        write_cache(&storms, &grid, &summary, &path).unwrap();
        let (back, sidecar) = read_cache(&path).unwrap();
        assert_eq!(back, storms);
        assert_eq!(sidecar.grid, grid);
        assert_eq!(sidecar.summary, summary);
        assert!(sidecar.normalizer.is_none());
    }

    #[test]
    fn corrupt_cache_is_detected() {
        let tracks = parse_hurdat2(FIXTURE).unwrap();
        let storms: Vec<CachedStorm> = tracks
            .iter()
            .map(|t| CachedStorm::from_track(t).unwrap())
            .collect();
        let grid = fixture_grid();
        let summary = crate::hurdat::dataset_summary(&tracks);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.cgf");
        write_cache(&storms, &grid, &summary, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_cache(&path).unwrap_err(),
            DatasetError::CacheFormat(_)
        ));
    }
}
