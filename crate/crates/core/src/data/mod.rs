//! Mobility data: discretization, per-user trace matrices, ingestion and
//! synthetic populations.

mod ingest;
mod synth;
mod trace;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest_events, read_events_csv, Event, IngestSummary, Location};
pub use synth::{generate_synthetic, Archetype, ArchetypeRates, PopulationMix, SynthConfig};
pub use trace::TraceMatrix;

/// Name of the distinguished ROI at row 0 that marks absence.
pub const NULL_ROI: &str = "null";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoiMode {
    ExplicitId,
    UniformGrid,
}

/// Uniform latitude/longitude grid. Cells are half-open `[lo, hi)` on both
/// axes; points on the maximum edge are clamped into the last cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lat < self.max_lat && self.min_lon < self.max_lon) {
            return Err(Error::config("grid bounding box must have min < max on both axes"));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config("grid must have at least one row and column"));
        }
        Ok(())
    }

    /// `(row, col)` of the cell containing the point, or `None` outside the
    /// bounding box.
    pub fn cell(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        if !(lat >= self.min_lat && lat <= self.max_lat && lon >= self.min_lon && lon <= self.max_lon) {
            return None;
        }
        let pos = |v: f64, lo: f64, hi: f64, n: usize| {
            let i = ((v - lo) / (hi - lo) * n as f64).floor() as usize;
            i.min(n - 1)
        };
        Some((
            pos(lat, self.min_lat, self.max_lat, self.rows),
            pos(lon, self.min_lon, self.max_lon, self.cols),
        ))
    }

    /// ROI row index of a cell (the null ROI occupies row 0).
    pub fn roi_index(&self, row: usize, col: usize) -> usize {
        1 + row * self.cols + col
    }

    pub fn roi_ids(&self) -> Vec<String> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| format!("r{r}c{c}")))
            .collect()
    }
}

/// How raw timestamps and locations map onto the matrix axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    pub slot_seconds: u64,
    pub time_origin: i64,
    pub n_slots: usize,
    pub roi_mode: RoiMode,
    pub grid: Option<GridSpec>,
}

impl Discretization {
    /// Hourly slots from time zero with explicit ROI ids.
    pub fn hourly(n_slots: usize) -> Self {
        Discretization {
            slot_seconds: 3600,
            time_origin: 0,
            n_slots,
            roi_mode: RoiMode::ExplicitId,
            grid: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_seconds == 0 {
            return Err(Error::config("slot_seconds must be positive"));
        }
        if self.n_slots == 0 {
            return Err(Error::config("n_slots must be at least 1"));
        }
        if self.time_origin < 0 {
            return Err(Error::config("time_origin must be non-negative"));
        }
        match (self.roi_mode, &self.grid) {
            (RoiMode::UniformGrid, None) => Err(Error::config("uniform-grid mode requires a grid")),
            (_, Some(g)) => g.validate(),
            _ => Ok(()),
        }
    }

    /// Slot of a timestamp; slot boundaries belong to the later slot.
    pub fn slot_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.time_origin {
            return None;
        }
        let slot = ((timestamp - self.time_origin) as u64 / self.slot_seconds) as usize;
        (slot < self.n_slots).then_some(slot)
    }
}

/// A population of equally shaped traces plus the ROI index table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rois: Vec<String>,
    discretization: Discretization,
    traces: Vec<TraceMatrix>,
    archetypes: BTreeMap<String, Archetype>,
}

impl Dataset {
    /// Traces are stored sorted by user id. `rois[0]` must be the null ROI.
    pub fn new(rois: Vec<String>, discretization: Discretization, mut traces: Vec<TraceMatrix>) -> Result<Self> {
        discretization.validate()?;
        if rois.first().map(String::as_str) != Some(NULL_ROI) {
            return Err(Error::config("ROI table must start with the null ROI"));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &rois {
            if !seen.insert(r) {
                return Err(Error::config(format!("duplicate ROI id `{r}`")));
            }
        }
        for t in &traces {
            if t.n_rois() != rois.len() || t.n_slots() != discretization.n_slots {
                return Err(Error::shape(
                    format!("{} x {}", rois.len(), discretization.n_slots),
                    format!("{} x {} for user `{}`", t.n_rois(), t.n_slots(), t.user_id()),
                ));
            }
        }
        traces.sort_by(|a, b| a.user_id().cmp(b.user_id()));
        if let Some(w) = traces.windows(2).find(|w| w[0].user_id() == w[1].user_id()) {
            return Err(Error::config(format!("duplicate user id `{}`", w[0].user_id())));
        }
        Ok(Dataset {
            rois,
            discretization,
            traces,
            archetypes: BTreeMap::new(),
        })
    }

    pub fn with_archetypes(mut self, archetypes: BTreeMap<String, Archetype>) -> Self {
        self.archetypes = archetypes;
        self
    }

    pub fn rois(&self) -> &[String] {
        &self.rois
    }

    pub fn discretization(&self) -> &Discretization {
        &self.discretization
    }

    pub fn traces(&self) -> &[TraceMatrix] {
        &self.traces
    }

    pub fn trace(&self, index: usize) -> &TraceMatrix {
        &self.traces[index]
    }

    pub fn n_users(&self) -> usize {
        self.traces.len()
    }

    pub fn n_rois(&self) -> usize {
        self.rois.len()
    }

    pub fn n_slots(&self) -> usize {
        self.discretization.n_slots
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.traces.iter().map(|t| t.user_id())
    }

    /// Archetype labels recorded by the synthetic generator.
    pub fn archetypes(&self) -> &BTreeMap<String, Archetype> {
        &self.archetypes
    }

    pub fn user_index(&self, user_id: &str) -> Result<usize> {
        self.traces
            .binary_search_by(|t| t.user_id().cmp(user_id))
            .map_err(|_| Error::UnknownUser(user_id.to_string()))
    }

    pub fn roi_index(&self, roi_id: &str) -> Result<usize> {
        self.rois
            .iter()
            .position(|r| r == roi_id)
            .ok_or_else(|| Error::UnknownRoi(roi_id.to_string()))
    }

    pub fn check_window(&self, window: &Range<usize>) -> Result<()> {
        if window.start >= window.end || window.end > self.n_slots() {
            return Err(Error::config(format!(
                "slot window {}..{} outside dataset of {} slots",
                window.start,
                window.end,
                self.n_slots()
            )));
        }
        Ok(())
    }

    /// Copy of the dataset restricted to `window`, re-indexed from slot 0.
    pub fn window(&self, window: Range<usize>) -> Result<Dataset> {
        self.check_window(&window)?;
        let mut discretization = self.discretization.clone();
        discretization.time_origin += window.start as i64 * discretization.slot_seconds as i64;
        discretization.n_slots = window.len();
        Ok(Dataset {
            rois: self.rois.clone(),
            discretization,
            traces: self.traces.iter().map(|t| t.window(window.clone())).collect(),
            archetypes: self.archetypes.clone(),
        })
    }

    /// Replaces the traces and axes, keeping user ids and metadata. Used by
    /// trace-level transforms that change the ROI or time axis.
    pub(crate) fn rebuilt(&self, rois: Vec<String>, discretization: Discretization, traces: Vec<TraceMatrix>) -> Dataset {
        Dataset {
            rois,
            discretization,
            traces,
            archetypes: self.archetypes.clone(),
        }
    }

    pub fn to_json_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, &DatasetFile::from(self))?;
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&DatasetFile::from(self))?)
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Dataset> {
        let file: DatasetFile = serde_json::from_reader(reader)?;
        file.into_dataset()
    }

    pub fn from_json_str(s: &str) -> Result<Dataset> {
        let file: DatasetFile = serde_json::from_str(s)?;
        file.into_dataset()
    }
}

/// Sparse JSON interchange layout: only set non-null bits are stored, as
/// `[roi_index, slot_index]` pairs; null presence is recomputed on load.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    rois: Vec<String>,
    slot_seconds: u64,
    time_origin: i64,
    n_slots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roi_mode: Option<RoiMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridSpec>,
    traces: BTreeMap<String, Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    archetypes: BTreeMap<String, Archetype>,
}

impl From<&Dataset> for DatasetFile {
    fn from(ds: &Dataset) -> Self {
        let d = &ds.discretization;
        DatasetFile {
            rois: ds.rois.clone(),
            slot_seconds: d.slot_seconds,
            time_origin: d.time_origin,
            n_slots: d.n_slots,
            roi_mode: Some(d.roi_mode),
            grid: d.grid,
            traces: ds
                .traces
                .iter()
                .map(|t| (t.user_id().to_string(), t.events().map(|(r, s)| [r, s]).collect()))
                .collect(),
            archetypes: ds.archetypes.clone(),
        }
    }
}

impl DatasetFile {
    fn into_dataset(self) -> Result<Dataset> {
        let roi_mode = self.roi_mode.unwrap_or(if self.grid.is_some() {
            RoiMode::UniformGrid
        } else {
            RoiMode::ExplicitId
        });
        let discretization = Discretization {
            slot_seconds: self.slot_seconds,
            time_origin: self.time_origin,
            n_slots: self.n_slots,
            roi_mode,
            grid: self.grid,
        };
        let n_rois = self.rois.len();
        let traces = self
            .traces
            .into_iter()
            .map(|(user, cells)| TraceMatrix::from_pairs(user, n_rois, self.n_slots, cells.into_iter().map(|[r, s]| (r, s))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(self.rois, discretization, traces)?.with_archetypes(self.archetypes))
    }
}

/// Users split by mobility into upper, middle and lower thirds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tertiles {
    pub high: Vec<String>,
    pub mid: Vec<String>,
    pub low: Vec<String>,
}

impl Tertiles {
    pub fn groups(&self) -> [&[String]; 3] {
        [&self.high, &self.mid, &self.low]
    }
}

/// Ranks users by total non-null events (descending, ties by user id
/// ascending) and cuts the ranking into thirds at `n/3` and `2n/3`.
pub fn mobility_tertiles(dataset: &Dataset) -> Result<Tertiles> {
    let n = dataset.n_users();
    if n < 3 {
        return Err(Error::config(format!("tertile split needs at least 3 users, have {n}")));
    }
    let mut ranked: Vec<(usize, &str)> = dataset
        .traces()
        .iter()
        .map(|t| (t.n_events(), t.user_id()))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let ids: Vec<String> = ranked.into_iter().map(|(_, id)| id.to_string()).collect();
    let (a, b) = (n / 3, 2 * n / 3);
    Ok(Tertiles {
        high: ids[..a].to_vec(),
        mid: ids[a..b].to_vec(),
        low: ids[b..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn disc(n_slots: usize) -> Discretization {
        Discretization {
            slot_seconds: 3600,
            time_origin: 0,
            n_slots,
            roi_mode: RoiMode::ExplicitId,
            grid: None,
        }
    }

    fn dataset_with_counts(counts: &[(&str, usize)]) -> Dataset {
        let n_slots = 20;
        let traces = counts
            .iter()
            .map(|&(id, c)| TraceMatrix::from_pairs(id, 2, n_slots, (0..c).map(|t| (1, t))).unwrap())
            .collect();
        Dataset::new(vec![NULL_ROI.into(), "a".into()], disc(n_slots), traces).unwrap()
    }

    #[test]
    fn tertiles_forced_split() {
        let ds = dataset_with_counts(&[("x", 1), ("y", 10), ("z", 5)]);
        let t = mobility_tertiles(&ds).unwrap();
        assert_eq!(t.high, vec!["y"]);
        assert_eq!(t.mid, vec!["z"]);
        assert_eq!(t.low, vec!["x"]);
    }

    #[test]
    fn tertiles_tie_break_by_id() {
        let ds = dataset_with_counts(&[("f", 3), ("b", 3), ("d", 3), ("a", 3), ("e", 3), ("c", 3)]);
        let t = mobility_tertiles(&ds).unwrap();
        assert_eq!(t.high, vec!["a", "b"]);
        assert_eq!(t.mid, vec!["c", "d"]);
        assert_eq!(t.low, vec!["e", "f"]);
    }

    #[test]
    fn tertiles_match_sort_then_chunk_oracle() {
        let mut rng = crate::rng::stream(99);
        let names: Vec<String> = (0..9).map(|i| format!("user{i}")).collect();
        let counts: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), rng.gen_range(0..8))).collect();
        let ds = dataset_with_counts(&counts);
        let t = mobility_tertiles(&ds).unwrap();

        // Oracle: selection by repeated max extraction.
        let mut pool = counts.clone();
        let mut order = Vec::new();
        while !pool.is_empty() {
            let mut best = 0;
            for i in 1..pool.len() {
                let (bn, bc) = pool[best];
                let (n, c) = pool[i];
                if c > bc || (c == bc && n < bn) {
                    best = i;
                }
            }
            order.push(pool.remove(best).0.to_string());
        }
        assert_eq!(t.high, order[0..3]);
        assert_eq!(t.mid, order[3..6]);
        assert_eq!(t.low, order[6..9]);
    }

    #[test]
    fn tertiles_need_three_users() {
        let ds = dataset_with_counts(&[("x", 1), ("y", 2)]);
        assert!(mobility_tertiles(&ds).is_err());
    }

    #[test]
    fn json_round_trip_preserves_dataset() {
        let ds = dataset_with_counts(&[("x", 1), ("y", 4)]);
        let s = ds.to_json_string().unwrap();
        assert!(s.contains("\"traces\""));
        assert_eq!(Dataset::from_json_str(&s).unwrap(), ds);
    }

    #[test]
    fn grid_cells_are_half_open_and_clamped() {
        let g = GridSpec {
            min_lat: 0.0,
            max_lat: 1.0,
            min_lon: 0.0,
            max_lon: 2.0,
            rows: 2,
            cols: 2,
        };
        assert_eq!(g.cell(0.5, 1.0), Some((1, 1)));
        assert_eq!(g.cell(0.4999, 0.9999), Some((0, 0)));
        assert_eq!(g.cell(1.0, 2.0), Some((1, 1)));
        assert_eq!(g.cell(1.01, 0.0), None);
        assert_eq!(g.roi_index(1, 0), 3);
    }

    #[test]
    fn slot_boundary_goes_to_later_slot() {
        let d = disc(4);
        assert_eq!(d.slot_of(3599), Some(0));
        assert_eq!(d.slot_of(3600), Some(1));
        assert_eq!(d.slot_of(4 * 3600), None);
        assert_eq!(d.slot_of(-1), None);
    }
}
