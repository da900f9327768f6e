//! Operational prediction: single 6-hour-ahead cell prediction from a
//! 12-step history, autoregressive multi-step rollout, a persistence
//! baseline, and trajectory export as GeoJSON (RFC 7946) or CSV.

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::dataset::{CachedStorm, StepFeatures, StormWindows, N_FEATURES};
use crate::geo::{self, GeoError, GeoPoint, GridSpec};
use crate::model::{forward, ModelError};
use crate::nn::{NnError, Tensor};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("history must hold exactly {needed} steps, got {got}")]
    HistoryLength { needed: usize, got: usize },
    #[error("feature {name} value {value} normalizes outside the clamp bounds")]
    FeatureOutOfRange { name: &'static str, value: f64 },
    #[error("storm {storm_id} has {steps} derivable steps, need at least {needed}")]
    StormTooShort {
        storm_id: String,
        steps: usize,
        needed: usize,
    },
    #[error("n_steps must be >= 1")]
    NoSteps,
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
}

/// One forecast position, `step_index` 6-hour units ahead of the history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForecastStep {
    pub step_index: usize,
    pub grid_id: usize,
    pub center: GeoPoint,
    /// Set when the displacement into this cell was degenerate and the
    /// previous bearing was carried over.
    pub bearing_carried: bool,
}

/// Observed fix annotated with its cell (when the position is on the grid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservedPoint {
    pub point: GeoPoint,
    pub grid_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub storm_id: String,
    pub observed: Vec<ObservedPoint>,
    pub forecast: Vec<ForecastStep>,
    /// Wind and pressure are held at their last observed values during
    /// rollout; the model predicts position only.
    pub wind_pressure_persisted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    GeoJson,
    Csv,
}

impl ExportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ExportFormat::GeoJson => "geojson",
            ExportFormat::Csv => "csv",
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum OutOfRange {
    /// User-supplied history must normalize cleanly.
    Reject,
    /// Model-synthesized rollout rows are clamped into the bounds instead.
    Clamp,
}

fn window_tensor(
    ckpt: &Checkpoint,
    history: &[StepFeatures],
    mode: OutOfRange,
) -> Result<Tensor, ForecastError> {
    let needed = ckpt.config.seq_len;
    if history.len() != needed {
        return Err(ForecastError::HistoryLength {
            needed,
            got: history.len(),
        });
    }
    let mut data = Vec::with_capacity(needed * N_FEATURES);
    for step in history {
        let row = step.as_row();
        for (f, &value) in row.iter().enumerate() {
            let (scaled, clamped) = ckpt.normalizer.apply(f, value);
            if clamped && mode == OutOfRange::Reject {
                return Err(ForecastError::FeatureOutOfRange {
                    name: crate::dataset::FEATURE_NAMES[f],
                    value,
                });
            }
            data.push(scaled);
        }
    }
    Ok(Tensor::from_vec(needed, N_FEATURES, data)?)
}

fn predict_window(ckpt: &Checkpoint, window: &Tensor) -> Result<ForecastStep, ForecastError> {
    let scaled = forward(&ckpt.params, &ckpt.config, window)?;
    let raw = ckpt.normalizer.denormalize_label(scaled).round() as i64;
    let grid_id = ckpt.grid.clamp_id(raw);
    Ok(ForecastStep {
        step_index: 1,
        grid_id,
        center: ckpt.grid.cell_center(grid_id)?,
        bearing_carried: false,
    })
}

/// Forward pass, denormalize, round, clamp into the grid: the next cell.
pub fn predict_next(
    ckpt: &Checkpoint,
    history: &[StepFeatures],
) -> Result<ForecastStep, ForecastError> {
    let window = window_tensor(ckpt, history, OutOfRange::Reject)?;
    predict_window(ckpt, &window)
}

/// Autoregressive rollout: each prediction becomes the next input row, with
/// displacement features measured between consecutive cell centers and
/// wind/pressure persisted from the last observed step.
pub fn rollout(
    ckpt: &Checkpoint,
    seed_history: &[StepFeatures],
    n_steps: usize,
) -> Result<Vec<ForecastStep>, ForecastError> {
    if n_steps == 0 {
        return Err(ForecastError::NoSteps);
    }
    let mut history = seed_history.to_vec();
    let last = *history.last().ok_or(ForecastError::HistoryLength {
        needed: ckpt.config.seq_len,
        got: 0,
    })?;
    let mut prev_center = ckpt.grid.cell_center(last.grid_id)?;
    let mut prev_bearing = last.bearing;
    let mut forecast = Vec::with_capacity(n_steps);

    for step_index in 1..=n_steps {
        // the seed must be in range; rows synthesized below may drift out and
        // are clamped back into the normalizer's bounds
        let mode = if step_index == 1 {
            OutOfRange::Reject
        } else {
            OutOfRange::Clamp
        };
        let window = window_tensor(ckpt, &history, mode)?;
        let mut step = predict_window(ckpt, &window)?;
        step.step_index = step_index;

        // synthesize the feature row for the predicted position
        let (distance, bearing, carried) = match geo::motion(prev_center, step.center) {
            Ok(m) => (m.distance, m.bearing, false),
            // same cell twice: displacement is degenerate, keep the old heading
            Err(GeoError::UndefinedBearing { .. }) => (0.0, prev_bearing, true),
            Err(e) => return Err(e.into()),
        };
        step.bearing_carried = carried;
        forecast.push(step);

        history.remove(0);
        history.push(StepFeatures {
            wind: last.wind,
            pressure: last.pressure,
            distance,
            bearing,
            grid_id: step.grid_id,
        });
        prev_center = step.center;
        prev_bearing = bearing;
    }
    Ok(forecast)
}

/// Repeat the last observed displacement vector from the last cell center,
/// dead-reckoning a continuous position and reporting the cell under it.
pub fn persistence_baseline(
    seed_history: &[StepFeatures],
    n_steps: usize,
    grid: &GridSpec,
) -> Result<Vec<ForecastStep>, ForecastError> {
    let last = *seed_history.last().ok_or(ForecastError::HistoryLength {
        needed: 1,
        got: 0,
    })?;
    let mut position = grid.cell_center(last.grid_id)?;
    let mut out = Vec::with_capacity(n_steps);
    for step_index in 1..=n_steps {
        position = grid.clamp_point(geo::destination(position, last.bearing, last.distance));
        let grid_id = grid.grid_id(position)?;
        out.push(ForecastStep {
            step_index,
            grid_id,
            center: grid.cell_center(grid_id)?,
            bearing_carried: false,
        });
    }
    Ok(out)
}

/// Exact-cell hit rate of the persistence baseline over raw test windows.
pub fn persistence_accuracy(
    test_groups: &[StormWindows],
    grid: &GridSpec,
) -> Result<f64, ForecastError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for group in test_groups {
        for w in &group.windows {
            let last = w.inputs.last().expect("windows are nonempty");
            let center = grid.cell_center(last[4] as usize)?;
            let landed = grid.clamp_point(geo::destination(center, last[3], last[2]));
            hits += usize::from(grid.grid_id(landed)? == w.raw_label);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Seed the model with a storm's first `seq_len` steps and roll out
/// `n_steps` predictions alongside the observed track.
pub fn forecast_storm(
    ckpt: &Checkpoint,
    storm: &CachedStorm,
    n_steps: usize,
) -> Result<Trajectory, ForecastError> {
    let steps = crate::dataset::storm_steps(storm, &ckpt.grid)?;
    let needed = ckpt.config.seq_len;
    if steps.len() < needed {
        return Err(ForecastError::StormTooShort {
            storm_id: storm.storm_id.clone(),
            steps: steps.len(),
            needed,
        });
    }
    let forecast = rollout(ckpt, &steps[..needed], n_steps)?;
    let observed = storm
        .positions
        .iter()
        .map(|&point| ObservedPoint {
            point,
            grid_id: ckpt.grid.grid_id(point).ok(),
        })
        .collect();
    Ok(Trajectory {
        storm_id: storm.storm_id.clone(),
        observed,
        forecast,
        wind_pressure_persisted: !steps.is_empty(),
    })
}

/// RFC 7946 FeatureCollection: observed LineString, forecast LineString
/// (anchored at the last observed fix), and one Point feature per forecast
/// step carrying `{step_index, grid_id}`.
pub fn trajectory_geojson(traj: &Trajectory) -> serde_json::Value {
    let coord = |p: &GeoPoint| json!([p.lon, p.lat]);
    let mut features = vec![json!({
        "type": "Feature",
        "geometry": {
            "type": "LineString",
            "coordinates": traj.observed.iter().map(|o| coord(&o.point)).collect::<Vec<_>>(),
        },
        "properties": { "kind": "observed", "storm_id": traj.storm_id },
    })];
    if !traj.forecast.is_empty() {
        let mut coords = Vec::with_capacity(traj.forecast.len() + 1);
        if let Some(last_obs) = traj.observed.last() {
            coords.push(coord(&last_obs.point));
        }
        coords.extend(traj.forecast.iter().map(|s| coord(&s.center)));
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "LineString", "coordinates": coords },
            "properties": { "kind": "forecast", "storm_id": traj.storm_id },
        }));
        for s in &traj.forecast {
            features.push(json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": coord(&s.center) },
                "properties": {
                    "kind": "forecast",
                    "step_index": s.step_index,
                    "grid_id": s.grid_id,
                    "bearing_carried": s.bearing_carried,
                },
            }));
        }
    }
    json!({
        "type": "FeatureCollection",
        "features": features,
        "metadata": {
            "storm_id": traj.storm_id,
            "wind_pressure_persisted": traj.wind_pressure_persisted,
        },
    })
}

/// CSV with columns `kind,step,lat,lon,grid_id`; observed rows first.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("kind,step,lat,lon,grid_id\n");
    for (i, o) in traj.observed.iter().enumerate() {
        let id = o.grid_id.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "observed,{i},{:.9},{:.9},{id}\n",
            o.point.lat, o.point.lon
        ));
    }
    for s in &traj.forecast {
        out.push_str(&format!(
            "forecast,{},{:.9},{:.9},{}\n",
            s.step_index, s.center.lat, s.center.lon, s.grid_id
        ));
    }
    out
}

/// Write a trajectory in the requested format.
pub fn export_trajectory(
    traj: &Trajectory,
    format: ExportFormat,
    path: &std::path::Path,
) -> Result<(), ForecastError> {
    let contents = match format {
        ExportFormat::GeoJson => serde_json::to_string_pretty(&trajectory_geojson(traj))
            .expect("json value always serializes"),
        ExportFormat::Csv => trajectory_csv(traj),
    };
    std::fs::write(path, contents)?;
    Ok(())
}
