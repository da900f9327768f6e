//! Geodesy and grid arithmetic: great-circle distance, movement bearing,
//! and the integer cell indexing used to discretize storm positions onto
//! a fixed latitude/longitude grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometers (IUGG mean radius).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Kilometers per statute mile.
pub const KM_PER_MILE: f64 = 1.609344;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("bearing is undefined for coincident points ({lat}, {lon})")]
    UndefinedBearing { lat: f64, lon: f64 },
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeRange(f64),
    #[error("point outside grid on {axis} axis: {value} not in [{min}, {max})")]
    OutOfBounds {
        axis: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("cell id {id} outside [0, {cell_count})")]
    CellIdRange { id: usize, cell_count: usize },
    #[error("invalid grid bounds: {0}")]
    InvalidGrid(String),
    #[error("cannot fit a grid to an empty point set")]
    EmptyPointSet,
}

/// A position on the sphere, degrees. West longitudes are negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(GeoError::LatitudeRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            return Err(GeoError::LongitudeRange(lon));
        }
        Ok(Self { lat, lon })
    }
}

/// Distance and heading of one 6-hour displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionFeatures {
    /// Great-circle distance in statute miles.
    pub distance: f64,
    /// Initial bearing in degrees, [0, 360).
    pub bearing: f64,
}

/// Initial bearing from `from` to `to`, degrees clockwise from north in [0, 360).
///
/// beta = atan2(sin(dlon) * cos(lat2), cos(lat1) * sin(lat2) - sin(lat1) * cos(lat2) * cos(dlon)),
/// with negative results wrapped by +360.
pub fn bearing(from: GeoPoint, to: GeoPoint) -> Result<f64, GeoError> {
    if from == to {
        return Err(GeoError::UndefinedBearing {
            lat: from.lat,
            lon: from.lon,
        });
    }
    let lat1 = from.lat.to_radians();
    let lat2 = to.lat.to_radians();
    let dlon = (to.lon - from.lon).to_radians();
    let num = dlon.sin() * lat2.cos();
    let den = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    if num == 0.0 && den == 0.0 {
        // antipodal pair: atan2(0, 0)
        return Err(GeoError::UndefinedBearing {
            lat: from.lat,
            lon: from.lon,
        });
    }
    let deg = num.atan2(den).to_degrees();
    Ok(if deg < 0.0 { deg + 360.0 } else { deg })
}

/// Great-circle (haversine) distance in statute miles on the mean-radius sphere.
pub fn great_circle_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let central = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    EARTH_RADIUS_KM * central / KM_PER_MILE
}

/// Both motion features for one displacement.
pub fn motion(from: GeoPoint, to: GeoPoint) -> Result<MotionFeatures, GeoError> {
    Ok(MotionFeatures {
        distance: great_circle_miles(from, to),
        bearing: bearing(from, to)?,
    })
}

/// Point reached from `start` after travelling `distance_miles` along the
/// initial bearing `bearing_deg` on the great circle.
pub fn destination(start: GeoPoint, bearing_deg: f64, distance_miles: f64) -> GeoPoint {
    let ang = distance_miles * KM_PER_MILE / EARTH_RADIUS_KM;
    let brng = bearing_deg.to_radians();
    let lat1 = start.lat.to_radians();
    let lon1 = start.lon.to_radians();
    let lat2 = (lat1.sin() * ang.cos() + lat1.cos() * ang.sin() * brng.cos()).asin();
    let lon2 = lon1
        + (brng.sin() * ang.sin() * lat1.cos()).atan2(ang.cos() - lat1.sin() * lat2.sin());
    // wrap longitude into [-180, 180]
    let mut lon_deg = lon2.to_degrees();
    if lon_deg > 180.0 {
        lon_deg -= 360.0;
    } else if lon_deg < -180.0 {
        lon_deg += 360.0;
    }
    GeoPoint {
        lat: lat2.to_degrees().clamp(-90.0, 90.0),
        lon: lon_deg,
    }
}

/// The fixed coordinate grid. Cells are `resolution`-degree squares; the cell
/// id of a point is `floor((lon - lon_min)/res) * lat_cells + floor((lat - lat_min)/res)`,
/// so latitude is the fast axis and each longitude column holds `lat_cells` ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    /// Degrees per cell side.
    pub resolution: f64,
}

impl GridSpec {
    pub fn new(
        lon_min: f64,
        lon_max: f64,
        lat_min: f64,
        lat_max: f64,
        resolution: f64,
    ) -> Result<Self, GeoError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(GeoError::InvalidGrid(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if lon_min >= lon_max || lat_min >= lat_max {
            return Err(GeoError::InvalidGrid(format!(
                "bounds must satisfy min < max, got lon [{lon_min}, {lon_max}], lat [{lat_min}, {lat_max}]"
            )));
        }
        let spec = Self {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
            resolution,
        };
        for (axis, span) in [("longitude", lon_max - lon_min), ("latitude", lat_max - lat_min)] {
            let cells = span / resolution;
            if (cells - cells.round()).abs() > 1e-9 {
                return Err(GeoError::InvalidGrid(format!(
                    "{axis} span {span} is not an integer multiple of resolution {resolution}"
                )));
            }
        }
        Ok(spec)
    }

    /// Number of cells along the latitude axis (ids per longitude column).
    pub fn lat_cells(&self) -> usize {
        ((self.lat_max - self.lat_min) / self.resolution).round() as usize
    }

    /// Number of cells along the longitude axis.
    pub fn lon_cells(&self) -> usize {
        ((self.lon_max - self.lon_min) / self.resolution).round() as usize
    }

    pub fn cell_count(&self) -> usize {
        self.lat_cells() * self.lon_cells()
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lon >= self.lon_min && p.lon < self.lon_max && p.lat >= self.lat_min && p.lat < self.lat_max
    }

    /// Integer cell id of an in-bounds point.
    pub fn grid_id(&self, p: GeoPoint) -> Result<usize, GeoError> {
        if p.lon < self.lon_min || p.lon >= self.lon_max {
            return Err(GeoError::OutOfBounds {
                axis: "longitude",
                value: p.lon,
                min: self.lon_min,
                max: self.lon_max,
            });
        }
        if p.lat < self.lat_min || p.lat >= self.lat_max {
            return Err(GeoError::OutOfBounds {
                axis: "latitude",
                value: p.lat,
                min: self.lat_min,
                max: self.lat_max,
            });
        }
        let lon_idx = ((p.lon - self.lon_min) / self.resolution).floor() as usize;
        let lat_idx = ((p.lat - self.lat_min) / self.resolution).floor() as usize;
        Ok(lon_idx * self.lat_cells() + lat_idx)
    }

    /// Center point of a cell id; the inverse of [`GridSpec::grid_id`] up to
    /// in-cell quantization.
    pub fn cell_center(&self, id: usize) -> Result<GeoPoint, GeoError> {
        let count = self.cell_count();
        if id >= count {
            return Err(GeoError::CellIdRange {
                id,
                cell_count: count,
            });
        }
        let lat_cells = self.lat_cells();
        let lon_idx = id / lat_cells;
        let lat_idx = id % lat_cells;
        Ok(GeoPoint {
            lon: self.lon_min + (lon_idx as f64 + 0.5) * self.resolution,
            lat: self.lat_min + (lat_idx as f64 + 0.5) * self.resolution,
        })
    }

    /// Nearest in-bounds point, used to keep forecast positions on the grid.
    pub fn clamp_point(&self, p: GeoPoint) -> GeoPoint {
        let eps = self.resolution * 1e-6;
        GeoPoint {
            lon: p.lon.clamp(self.lon_min, self.lon_max - eps),
            lat: p.lat.clamp(self.lat_min, self.lat_max - eps),
        }
    }

    /// Clamp an arbitrary integer id into the valid range.
    pub fn clamp_id(&self, id: i64) -> usize {
        id.clamp(0, self.cell_count() as i64 - 1) as usize
    }
}

/// Fit integer-degree bounds around a point set, padded by one cell per side.
pub fn fit_grid(points: &[GeoPoint], resolution: f64) -> Result<GridSpec, GeoError> {
    if points.is_empty() {
        return Err(GeoError::EmptyPointSet);
    }
    let mut lon_min = f64::INFINITY;
    let mut lon_max = f64::NEG_INFINITY;
    let mut lat_min = f64::INFINITY;
    let mut lat_max = f64::NEG_INFINITY;
    for p in points {
        lon_min = lon_min.min(p.lon);
        lon_max = lon_max.max(p.lon);
        lat_min = lat_min.min(p.lat);
        lat_max = lat_max.max(p.lat);
    }
    let down = |v: f64| (v / resolution).floor() * resolution - resolution;
    let up = |v: f64| (v / resolution).ceil() * resolution + resolution;
    GridSpec::new(
        down(lon_min),
        up(lon_max),
        down(lat_min),
        up(lat_max),
        resolution,
    )
}
