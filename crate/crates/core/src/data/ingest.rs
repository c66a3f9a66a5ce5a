use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::Serialize;

use super::{Dataset, Discretization, RoiMode, TraceMatrix, NULL_ROI};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Location {
    Roi(String),
    Geo { lat: f64, lon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub user_id: String,
    pub location: Location,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub events: usize,
    pub kept: usize,
    pub dropped_out_of_window: usize,
    pub dropped_outside_grid: usize,
}

impl IngestSummary {
    pub fn dropped(&self) -> usize {
        self.dropped_out_of_window + self.dropped_outside_grid
    }
}

const EXPLICIT_HEADER: [&str; 3] = ["user_id", "roi_id", "timestamp"];
const GRID_HEADER: [&str; 4] = ["user_id", "lat", "lon", "timestamp"];

/// Parses an event CSV. The header selects the mode:
/// `user_id,roi_id,timestamp` or `user_id,lat,lon,timestamp`.
pub fn read_events_csv<R: Read>(reader: R) -> Result<Vec<Event>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let grid = if header == EXPLICIT_HEADER {
        false
    } else if header == GRID_HEADER {
        true
    } else {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `{}` or `{}`, found `{}`",
                EXPLICIT_HEADER.join(","),
                GRID_HEADER.join(","),
                header.join(",")
            ),
        });
    };

    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse { line, message };
        let field = |i: usize| record.get(i).unwrap_or("");
        let user_id = field(0);
        if user_id.is_empty() {
            return Err(bad("empty user_id".into()));
        }
        let ts_field = field(if grid { 3 } else { 2 });
        let timestamp: i64 = ts_field
            .parse()
            .map_err(|_| bad(format!("timestamp `{ts_field}` is not an integer")))?;
        if timestamp < 0 {
            return Err(bad(format!("negative timestamp {timestamp}")));
        }
        let location = if grid {
            let coord = |i: usize, name: &str| -> Result<f64> {
                field(i)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("{name} `{}` is not a number", field(i))))
            };
            Location::Geo {
                lat: coord(1, "lat")?,
                lon: coord(2, "lon")?,
            }
        } else {
            let roi = field(1);
            if roi.is_empty() {
                return Err(bad("empty roi_id".into()));
            }
            Location::Roi(roi.to_string())
        };
        events.push(Event {
            user_id: user_id.to_string(),
            location,
            timestamp,
        });
    }
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(events)
}

/// Discretizes events into one trace per distinct user. A bit is set iff the
/// user has at least one event in that (ROI, slot). Events outside the time
/// window or the grid are dropped and counted.
pub fn ingest_events(events: &[Event], discretization: &Discretization) -> Result<(Dataset, IngestSummary)> {
    discretization.validate()?;
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut summary = IngestSummary {
        events: events.len(),
        ..Default::default()
    };

    // (user, roi key, slot) for kept events; ROI keys resolve to indices once
    // the ROI table is known.
    let mut kept: Vec<(&str, RoiKey, usize)> = Vec::new();
    let mut users: BTreeSet<&str> = BTreeSet::new();
    for ev in events {
        users.insert(ev.user_id.as_str());
        let key = match (&ev.location, discretization.roi_mode) {
            (Location::Roi(id), RoiMode::ExplicitId) => {
                if id == NULL_ROI {
                    return Err(Error::config(format!("ROI id `{NULL_ROI}` is reserved")));
                }
                RoiKey::Named(id.as_str())
            }
            (Location::Geo { lat, lon }, RoiMode::UniformGrid) => {
                let grid = discretization.grid.as_ref().expect("validated");
                match grid.cell(*lat, *lon) {
                    Some((r, c)) => RoiKey::Index(grid.roi_index(r, c)),
                    None => {
                        summary.dropped_outside_grid += 1;
                        continue;
                    }
                }
            }
            _ => {
                return Err(Error::config(
                    "event location kind does not match the discretization ROI mode",
                ))
            }
        };
        let Some(slot) = discretization.slot_of(ev.timestamp) else {
            summary.dropped_out_of_window += 1;
            continue;
        };
        kept.push((ev.user_id.as_str(), key, slot));
    }
    summary.kept = kept.len();
    if summary.dropped() > 0 {
        log::warn!(
            "ingestion dropped {} of {} events ({} out of window, {} outside grid)",
            summary.dropped(),
            summary.events,
            summary.dropped_out_of_window,
            summary.dropped_outside_grid
        );
    }

    let rois: Vec<String> = match discretization.roi_mode {
        RoiMode::ExplicitId => {
            let named: BTreeSet<&str> = kept
                .iter()
                .filter_map(|(_, k, _)| match k {
                    RoiKey::Named(n) => Some(*n),
                    RoiKey::Index(_) => None,
                })
                .collect();
            std::iter::once(NULL_ROI.to_string())
                .chain(named.into_iter().map(str::to_string))
                .collect()
        }
        RoiMode::UniformGrid => std::iter::once(NULL_ROI.to_string())
            .chain(discretization.grid.as_ref().expect("validated").roi_ids())
            .collect(),
    };
    let index: BTreeMap<&str, usize> = rois.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();

    let mut cells: BTreeMap<&str, Vec<(usize, usize)>> = users.iter().map(|&u| (u, Vec::new())).collect();
    for (user, key, slot) in kept {
        let roi = match key {
            RoiKey::Named(n) => index[n],
            RoiKey::Index(i) => i,
        };
        cells.get_mut(user).expect("user registered").push((roi, slot));
    }
    let n_rois = rois.len();
    let traces = cells
        .into_iter()
        .map(|(user, pairs)| TraceMatrix::from_pairs(user, n_rois, discretization.n_slots, pairs))
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(rois, discretization.clone(), traces)?, summary))
}

#[derive(Debug, Clone, Copy)]
enum RoiKey<'a> {
    Named(&'a str),
    Index(usize),
}
