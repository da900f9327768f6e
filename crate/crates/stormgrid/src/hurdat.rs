//! HURDAT2 best-track ingestion: parse the NOAA comma-delimited archive
//! layout (one header line per storm, a declared number of data lines per
//! fix) into validated tracks, and reduce them to clean 6-hourly sequences.

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum HurdatError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: malformed data row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: storm {storm} declared {declared} rows but {found} were found")]
    RowCountMismatch {
        line: usize,
        storm: String,
        declared: usize,
        found: usize,
    },
    #[error("line {line}: timestamp {current} does not increase over {previous}")]
    NonMonotonicTimestamps {
        line: usize,
        previous: NaiveDateTime,
        current: NaiveDateTime,
    },
}

/// Storm identity line: e.g. `AL092004,           IVAN,     87,`.
#[derive(Debug, Clone, PartialEq)]
pub struct StormHeader {
    pub basin: String,
    pub cyclone_number: u32,
    pub year: i32,
    pub name: String,
    pub declared_row_count: usize,
}

impl StormHeader {
    /// Canonical identifier such as `AL092004`.
    pub fn storm_id(&self) -> String {
        format!("{}{:02}{:04}", self.basin, self.cyclone_number, self.year)
    }
}

/// One best-track fix. Missing numerics (`-999` / `-99` sentinels in the
/// source) are represented as `None`, never as a number.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub timestamp: NaiveDateTime,
    /// Single-letter record flag (`L` landfall etc.); `None` for synoptic rows.
    pub record_kind: Option<char>,
    /// Two-letter system status (TD, TS, HU, EX, ...).
    pub status: String,
    pub position: GeoPoint,
    /// Maximum sustained wind in knots.
    pub max_wind: Option<i32>,
    /// Minimum central pressure in millibars.
    pub min_pressure: Option<i32>,
    /// Remaining fields (wind radii etc.), trimmed, passed through untouched.
    pub extras: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StormTrack {
    pub header: StormHeader,
    pub points: Vec<TrackPoint>,
}

impl StormTrack {
    pub fn storm_id(&self) -> String {
        self.header.storm_id()
    }
}

const SYNOPTIC_HOURS: [u32; 4] = [0, 6, 12, 18];

fn split_fields(line: &str) -> Vec<&str> {
    let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
    // a trailing comma produces one empty trailing field
    while fields.last() == Some(&"") {
        fields.pop();
    }
    fields
}

fn parse_header(line: &str, line_no: usize) -> Result<StormHeader, HurdatError> {
    let fields = split_fields(line);
    if fields.len() != 3 {
        return Err(HurdatError::MalformedHeader {
            line: line_no,
            reason: format!("expected 3 fields, found {}", fields.len()),
        });
    }
    let id = fields[0];
    if id.len() != 8 || !id[..2].chars().all(|c| c.is_ascii_uppercase()) {
        return Err(HurdatError::MalformedHeader {
            line: line_no,
            reason: format!("bad storm id {id:?}"),
        });
    }
    let cyclone_number: u32 = id[2..4].parse().map_err(|_| HurdatError::MalformedHeader {
        line: line_no,
        reason: format!("non-numeric cyclone number in {id:?}"),
    })?;
    let year: i32 = id[4..8].parse().map_err(|_| HurdatError::MalformedHeader {
        line: line_no,
        reason: format!("non-numeric year in {id:?}"),
    })?;
    let declared_row_count: usize =
        fields[2].parse().map_err(|_| HurdatError::MalformedHeader {
            line: line_no,
            reason: format!("non-numeric row count {:?}", fields[2]),
        })?;
    Ok(StormHeader {
        basin: id[..2].to_string(),
        cyclone_number,
        year,
        name: fields[1].to_string(),
        declared_row_count,
    })
}

fn parse_coordinate(
    field: &str,
    positive: char,
    negative: char,
    line_no: usize,
) -> Result<f64, HurdatError> {
    let err = |reason: String| HurdatError::MalformedRow {
        line: line_no,
        reason,
    };
    let hemi = field
        .chars()
        .last()
        .ok_or_else(|| err("empty coordinate".into()))?;
    let sign = if hemi == positive {
        1.0
    } else if hemi == negative {
        -1.0
    } else {
        return Err(err(format!(
            "coordinate {field:?} lacks a {positive}/{negative} hemisphere suffix"
        )));
    };
    let value: f64 = field[..field.len() - 1]
        .parse()
        .map_err(|_| err(format!("unparseable coordinate {field:?}")))?;
    Ok(sign * value)
}

fn parse_sentinel_int(field: &str, line_no: usize, what: &str) -> Result<Option<i32>, HurdatError> {
    let v: i32 = field.parse().map_err(|_| HurdatError::MalformedRow {
        line: line_no,
        reason: format!("unparseable {what} {field:?}"),
    })?;
    // -999 is the archive's missing sentinel; -99 appears for wind in old records
    Ok(if v == -999 || v == -99 { None } else { Some(v) })
}

fn parse_data_row(line: &str, line_no: usize) -> Result<TrackPoint, HurdatError> {
    let err = |reason: String| HurdatError::MalformedRow {
        line: line_no,
        reason,
    };
    let fields = split_fields(line);
    if fields.len() < 8 {
        return Err(err(format!("expected at least 8 fields, found {}", fields.len())));
    }
    let date = NaiveDate::parse_from_str(fields[0], "%Y%m%d")
        .map_err(|_| err(format!("unparseable date {:?}", fields[0])))?;
    if fields[1].len() != 4 {
        return Err(err(format!("unparseable time {:?}", fields[1])));
    }
    let hour: u32 = fields[1][..2]
        .parse()
        .map_err(|_| err(format!("unparseable time {:?}", fields[1])))?;
    let minute: u32 = fields[1][2..]
        .parse()
        .map_err(|_| err(format!("unparseable time {:?}", fields[1])))?;
    let timestamp = date
        .and_hms_opt(hour, minute, 0)
        .ok_or_else(|| err(format!("invalid time {:?}", fields[1])))?;
    let record_kind = match fields[2] {
        "" => None,
        s if s.len() == 1 => s.chars().next(),
        s => return Err(err(format!("record flag {s:?} is not a single letter"))),
    };
    let lat = parse_coordinate(fields[4], 'N', 'S', line_no)?;
    let lon = parse_coordinate(fields[5], 'E', 'W', line_no)?;
    let position = GeoPoint::new(lat, lon).map_err(|e| err(e.to_string()))?;
    let max_wind = parse_sentinel_int(fields[6], line_no, "wind")?;
    if let Some(w) = max_wind {
        if w < 0 {
            return Err(err(format!("negative wind {w}")));
        }
    }
    let min_pressure = parse_sentinel_int(fields[7], line_no, "pressure")?;
    if let Some(p) = min_pressure {
        if p <= 0 {
            return Err(err(format!("non-positive pressure {p}")));
        }
    }
    Ok(TrackPoint {
        timestamp,
        record_kind,
        status: fields[3].to_string(),
        position,
        max_wind,
        min_pressure,
        extras: fields[8..].iter().map(|s| s.to_string()).collect(),
    })
}

fn looks_like_data_row(line: &str) -> bool {
    let first = line.split(',').next().unwrap_or("").trim();
    first.len() == 8 && first.chars().all(|c| c.is_ascii_digit())
}

/// Parse a full HURDAT2 file. Every line is consumed: blank lines are
/// skipped, anything else must fit the header/data structure exactly.
pub fn parse_hurdat2(text: &str) -> Result<Vec<StormTrack>, HurdatError> {
    let mut tracks = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    loop {
        // skip blank lines between storms
        while matches!(lines.peek(), Some((_, l)) if l.trim().is_empty()) {
            lines.next();
        }
        let Some((idx, line)) = lines.next() else {
            break;
        };
        let header_line = idx + 1;
        let header = parse_header(line, header_line)?;
        let mut points = Vec::with_capacity(header.declared_row_count);
        for row in 0..header.declared_row_count {
            let Some((idx, line)) = lines.next() else {
                return Err(HurdatError::RowCountMismatch {
                    line: header_line,
                    storm: header.storm_id(),
                    declared: header.declared_row_count,
                    found: row,
                });
            };
            if line.trim().is_empty() || !looks_like_data_row(line) {
                return Err(HurdatError::RowCountMismatch {
                    line: idx + 1,
                    storm: header.storm_id(),
                    declared: header.declared_row_count,
                    found: row,
                });
            }
            let point = parse_data_row(line, idx + 1)?;
            if let Some(prev) = points.last() {
                let prev: &TrackPoint = prev;
                if point.timestamp <= prev.timestamp {
                    return Err(HurdatError::NonMonotonicTimestamps {
                        line: idx + 1,
                        previous: prev.timestamp,
                        current: point.timestamp,
                    });
                }
            }
            points.push(point);
        }
        // an extra data row here means the header undercounted
        if let Some((idx, line)) = lines.peek() {
            if looks_like_data_row(line) {
                return Err(HurdatError::RowCountMismatch {
                    line: idx + 1,
                    storm: header.storm_id(),
                    declared: header.declared_row_count,
                    found: header.declared_row_count + 1,
                });
            }
        }
        tracks.push(StormTrack { header, points });
    }
    Ok(tracks)
}

fn format_coordinate(value: f64, positive: char, negative: char) -> String {
    let hemi = if value < 0.0 { negative } else { positive };
    format!("{:.1}{}", value.abs(), hemi)
}

/// Re-serialize tracks in the archive layout (canonical column widths).
pub fn to_hurdat2_string(tracks: &[StormTrack]) -> String {
    let mut out = String::new();
    for track in tracks {
        let h = &track.header;
        out.push_str(&format!(
            "{},{:>19},{:>7},\n",
            h.storm_id(),
            h.name,
            h.declared_row_count
        ));
        for p in &track.points {
            let kind = p.record_kind.map(String::from).unwrap_or_default();
            let mut row = format!(
                "{}, {:04}, {:>1}, {:>2}, {:>5}, {:>6}, {:>3}, {:>4}",
                p.timestamp.format("%Y%m%d"),
                p.timestamp.format("%H%M"),
                kind,
                p.status,
                format_coordinate(p.position.lat, 'N', 'S'),
                format_coordinate(p.position.lon, 'E', 'W'),
                p.max_wind.map_or(-999, i32::from),
                p.min_pressure.map_or(-999, i32::from),
            );
            for extra in &p.extras {
                row.push_str(&format!(", {extra:>4}"));
            }
            row.push_str(",\n");
            out.push_str(&row);
        }
    }
    out
}

fn is_synoptic(p: &TrackPoint) -> bool {
    use chrono::Timelike;
    p.record_kind.is_none()
        && p.timestamp.time().minute() == 0
        && SYNOPTIC_HOURS.contains(&p.timestamp.time().hour())
}

fn has_usable_values(p: &TrackPoint) -> bool {
    matches!(p.max_wind, Some(w) if w > 0) && matches!(p.min_pressure, Some(pr) if pr > 0)
}

/// Longest run of consecutive points exactly 6 hours apart (first on ties).
fn longest_contiguous_run(points: Vec<TrackPoint>) -> Vec<TrackPoint> {
    if points.len() < 2 {
        return points;
    }
    let six_hours = TimeDelta::hours(6);
    let mut best: (usize, usize) = (0, 1); // (start, len)
    let mut start = 0;
    for i in 1..=points.len() {
        let broken = i == points.len()
            || points[i].timestamp - points[i - 1].timestamp != six_hours;
        if broken {
            if i - start > best.1 {
                best = (start, i - start);
            }
            start = i;
        }
    }
    points[best.0..best.0 + best.1].to_vec()
}

/// Reduce parsed tracks to the training population: storms within the year
/// range, synoptic fixes only, wind and pressure present, and a single
/// contiguous 6-hourly segment per storm. Storms left with fewer than two
/// points are dropped. Idempotent.
pub fn filter_tracks(tracks: &[StormTrack], min_year: i32, max_year: i32) -> Vec<StormTrack> {
    tracks
        .iter()
        .filter(|t| (min_year..=max_year).contains(&t.header.year))
        .filter_map(|t| {
            let kept: Vec<TrackPoint> = t
                .points
                .iter()
                .filter(|p| is_synoptic(p) && has_usable_values(p))
                .cloned()
                .collect();
            let run = longest_contiguous_run(kept);
            (run.len() >= 2).then(|| StormTrack {
                header: StormHeader {
                    declared_row_count: run.len(),
                    ..t.header.clone()
                },
                points: run,
            })
        })
        .collect()
}

/// Aggregate counts over a set of tracks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub storms: usize,
    pub points: usize,
    pub min_year: i32,
    pub max_year: i32,
    pub max_track_len: usize,
}

pub fn dataset_summary(tracks: &[StormTrack]) -> DatasetSummary {
    if tracks.is_empty() {
        return DatasetSummary::default();
    }
    DatasetSummary {
        storms: tracks.len(),
        points: tracks.iter().map(|t| t.points.len()).sum(),
        min_year: tracks.iter().map(|t| t.header.year).min().unwrap_or(0),
        max_year: tracks.iter().map(|t| t.header.year).max().unwrap_or(0),
        max_track_len: tracks.iter().map(|t| t.points.len()).max().unwrap_or(0),
    }
}
