//! Spatial, temporal and data generalization.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::Series;
use crate::data::{Dataset, GridSpec, RoiMode, NULL_ROI};
use crate::error::{Error, Result};

/// How non-null ROIs are merged into super-ROIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartitionSpec {
    /// Explicit `roi_id -> super_roi_id` assignments.
    Map { assignments: BTreeMap<String, String> },
    /// CSV with header `roi_id,super_roi_id`.
    Csv { path: String },
    /// Consecutive non-null ROIs (by index) in blocks of `size`.
    Blocks { size: usize },
    /// Coarser grid over the same bounding box (grid datasets only).
    CoarseGrid { rows: usize, cols: usize },
}

/// A total mapping from ROI rows to super-ROI rows; row 0 maps to row 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPartition {
    pub super_rois: Vec<String>,
    pub map: Vec<usize>,
    pub grid: Option<GridSpec>,
}

impl RoiPartition {
    /// Builds a partition from assignments. Super-ROIs are ordered by their
    /// first member's row, so the identity assignment keeps the ROI order.
    pub fn from_assignments(rois: &[String], assignments: &BTreeMap<String, String>) -> Result<Self> {
        let mut super_rois = vec![NULL_ROI.to_string()];
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut map = vec![0];
        for roi in &rois[1..] {
            let target = assignments
                .get(roi)
                .ok_or_else(|| Error::config(format!("ROI `{roi}` missing from partition")))?;
            if target == NULL_ROI {
                return Err(Error::config("super-ROI id `null` is reserved"));
            }
            let next = super_rois.len();
            let idx = *index.entry(target.as_str()).or_insert(next);
            if idx == next {
                super_rois.push(target.clone());
            }
            map.push(idx);
        }
        Ok(RoiPartition {
            super_rois,
            map,
            grid: None,
        })
    }

    pub fn from_csv(rois: &[String], path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ["roi_id", "super_roi_id"] {
            return Err(Error::Parse {
                line: 1,
                message: "expected header `roi_id,super_roi_id`".into(),
            });
        }
        let mut assignments = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            match (record.get(0), record.get(1)) {
                (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                    assignments.insert(a.to_string(), b.to_string());
                }
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: "expected two non-empty fields".into(),
                    })
                }
            }
        }
        Self::from_assignments(rois, &assignments)
    }

    pub fn blocks(rois: &[String], size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::config("block size must be at least 1"));
        }
        let mut assignments = BTreeMap::new();
        for chunk in rois[1..].chunks(size) {
            let name = chunk.join("+");
            for r in chunk {
                assignments.insert(r.clone(), name.clone());
            }
        }
        Self::from_assignments(rois, &assignments)
    }

    /// Maps each fine grid cell to the coarse cell containing its position.
    pub fn coarse_grid(fine: &GridSpec, rows: usize, cols: usize) -> Result<Self> {
        let coarse = GridSpec { rows, cols, ..*fine };
        coarse.validate()?;
        if rows > fine.rows || cols > fine.cols {
            return Err(Error::config("coarse grid must not be finer than the dataset grid"));
        }
        let mut map = vec![0];
        for r in 0..fine.rows {
            for c in 0..fine.cols {
                map.push(coarse.roi_index(r * rows / fine.rows, c * cols / fine.cols));
            }
        }
        let super_rois = std::iter::once(NULL_ROI.to_string()).chain(coarse.roi_ids()).collect();
        Ok(RoiPartition {
            super_rois,
            map,
            grid: Some(coarse),
        })
    }

    pub fn resolve(spec: &PartitionSpec, dataset: &Dataset) -> Result<Self> {
        match spec {
            PartitionSpec::Map { assignments } => Self::from_assignments(dataset.rois(), assignments),
            PartitionSpec::Csv { path } => Self::from_csv(dataset.rois(), Path::new(path)),
            PartitionSpec::Blocks { size } => Self::blocks(dataset.rois(), *size),
            PartitionSpec::CoarseGrid { rows, cols } => {
                let grid = dataset
                    .discretization()
                    .grid
                    .filter(|_| dataset.discretization().roi_mode == RoiMode::UniformGrid)
                    .ok_or_else(|| Error::config("coarse-grid partition needs a grid dataset"))?;
                Self::coarse_grid(&grid, *rows, *cols)
            }
        }
    }
}

/// Spatial generalization: a super-ROI bit is the OR of its members' bits.
pub fn spg(dataset: &Dataset, partition: &RoiPartition) -> Result<Dataset> {
    if partition.map.len() != dataset.n_rois() {
        return Err(Error::shape(dataset.n_rois(), partition.map.len()));
    }
    let n_rois = partition.super_rois.len();
    let n_slots = dataset.n_slots();
    let traces = dataset
        .traces()
        .iter()
        .map(|t| t.remap(n_rois, n_slots, |r, s| Some((partition.map[r], s))))
        .collect();
    let mut disc = dataset.discretization().clone();
    match partition.grid {
        Some(g) => disc.grid = Some(g),
        None => {
            disc.roi_mode = RoiMode::ExplicitId;
            disc.grid = None;
        }
    }
    Ok(dataset.rebuilt(partition.super_rois.clone(), disc, traces))
}

/// Temporal generalization: a coarse bit is the OR over its base slots. A
/// trailing partial window becomes the last coarse slot.
pub fn tg(dataset: &Dataset, coarse_slot_seconds: u64) -> Result<Dataset> {
    let base = dataset.discretization().slot_seconds;
    if coarse_slot_seconds == 0 || !coarse_slot_seconds.is_multiple_of(base) {
        return Err(Error::config(format!(
            "coarse slot length {coarse_slot_seconds}s is not a positive multiple of {base}s"
        )));
    }
    let factor = (coarse_slot_seconds / base) as usize;
    let n_slots = dataset.n_slots().div_ceil(factor);
    let n_rois = dataset.n_rois();
    let traces = dataset
        .traces()
        .iter()
        .map(|t| t.remap(n_rois, n_slots, |r, s| Some((r, s / factor))))
        .collect();
    let mut disc = dataset.discretization().clone();
    disc.slot_seconds = coarse_slot_seconds;
    disc.n_slots = n_slots;
    Ok(dataset.rebuilt(dataset.rois().to_vec(), disc, traces))
}

/// Fixed-range data generalization: each value is replaced by the midpoint
/// of its bucket `[floor(c/x) x, floor(c/x) x + x)`.
pub fn dgfr(series: &Series, x: u32) -> Result<Series> {
    if x < 2 {
        return Err(Error::config("DGFR range size must be at least 2"));
    }
    let x = f64::from(x);
    Ok(series.map(|c| (c / x).floor() * x + x / 2.0))
}

/// Adaptive-range data generalization: each ROI row's `[min, max]` is cut
/// into `x_prime` equal sub-ranges (the last one closed) and values map to
/// their sub-range midpoint. Constant rows are left unchanged.
pub fn dgar(series: &Series, x_prime: u32) -> Result<Series> {
    if x_prime < 1 {
        return Err(Error::config("DGAR sub-range count must be at least 1"));
    }
    let mut out = series.clone();
    let parts = f64::from(x_prime);
    for r in 0..series.n_rois() {
        let row = out.row_mut(r);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            continue;
        }
        let width = (hi - lo) / parts;
        for v in row.iter_mut() {
            let idx = ((*v - lo) / width).floor().min(parts - 1.0).max(0.0);
            *v = lo + (idx + 0.5) * width;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Discretization, TraceMatrix};
    use rand::Rng;

    fn series(values: Vec<f64>, n_rois: usize) -> Series {
        let n_slots = values.len() / n_rois;
        Series::from_values(values, n_rois, n_slots, Some(20)).unwrap()
    }

    fn random_dataset(n_rois: usize, n_slots: usize, grid: Option<GridSpec>, seed: u64) -> Dataset {
        let mut rng = crate::rng::stream(seed);
        let traces = (0..6)
            .map(|u| {
                let pairs: Vec<(usize, usize)> = (0..n_slots * 2)
                    .map(|_| (rng.gen_range(1..n_rois), rng.gen_range(0..n_slots)))
                    .collect();
                TraceMatrix::from_pairs(format!("u{u}"), n_rois, n_slots, pairs).unwrap()
            })
            .collect();
        let rois: Vec<String> = match grid {
            Some(g) => std::iter::once(NULL_ROI.to_string()).chain(g.roi_ids()).collect(),
            None => std::iter::once(NULL_ROI.to_string())
                .chain((1..n_rois).map(|r| format!("s{r}")))
                .collect(),
        };
        let disc = Discretization {
            slot_seconds: 3600,
            time_origin: 0,
            n_slots,
            roi_mode: if grid.is_some() { RoiMode::UniformGrid } else { RoiMode::ExplicitId },
            grid,
        };
        Dataset::new(rois, disc, traces).unwrap()
    }

    #[test]
    fn identity_partition_is_a_no_op() {
        let ds = random_dataset(8, 12, None, 1);
        let assignments = ds.rois()[1..].iter().map(|r| (r.clone(), r.clone())).collect();
        let p = RoiPartition::from_assignments(ds.rois(), &assignments).unwrap();
        let out = spg(&ds, &p).unwrap();
        assert_eq!(out.traces(), ds.traces());
        assert_eq!(out.rois(), ds.rois());
        assert_eq!(spg(&ds, &RoiPartition::blocks(ds.rois(), 1).unwrap()).unwrap().traces(), ds.traces());
    }

    #[test]
    fn single_super_roi_is_any_presence() {
        let ds = random_dataset(8, 12, None, 2);
        let out = spg(&ds, &RoiPartition::blocks(ds.rois(), 100).unwrap()).unwrap();
        assert_eq!(out.n_rois(), 2);
        for (a, b) in ds.traces().iter().zip(out.traces()) {
            for t in 0..12 {
                assert_eq!(b.bit(1, t), a.is_active(t));
            }
        }
    }

    #[test]
    fn coarse_grid_bits_are_or_of_fine_cells() {
        let grid = GridSpec {
            min_lat: 0.0,
            max_lat: 1.0,
            min_lon: 0.0,
            max_lon: 1.0,
            rows: 10,
            cols: 10,
        };
        let ds = random_dataset(101, 24, Some(grid), 3);
        let p = RoiPartition::resolve(&PartitionSpec::CoarseGrid { rows: 5, cols: 5 }, &ds).unwrap();
        let out = spg(&ds, &p).unwrap();
        assert_eq!(out.n_rois(), 26);
        for (fine, coarse) in ds.traces().iter().zip(out.traces()) {
            for t in 0..24 {
                for cr in 0..5 {
                    for cc in 0..5 {
                        let mut any = false;
                        for dr in 0..2 {
                            for dc in 0..2 {
                                any |= fine.bit(1 + (2 * cr + dr) * 10 + 2 * cc + dc, t);
                            }
                        }
                        assert_eq!(coarse.bit(1 + cr * 5 + cc, t), any);
                    }
                }
            }
        }
    }

    #[test]
    fn missing_roi_is_rejected() {
        let ds = random_dataset(4, 4, None, 4);
        let mut a = BTreeMap::new();
        a.insert("s1".to_string(), "x".to_string());
        assert!(RoiPartition::from_assignments(ds.rois(), &a).is_err());
    }

    #[test]
    fn tg_factor_one_and_full_week() {
        let ds = random_dataset(5, 168, None, 5);
        assert_eq!(tg(&ds, 3600).unwrap().traces(), ds.traces());
        let week = tg(&ds, 7 * 86_400).unwrap();
        assert_eq!(week.n_slots(), 1);
        for (a, b) in ds.traces().iter().zip(week.traces()) {
            for r in 1..5 {
                assert_eq!(b.bit(r, 0), (0..168).any(|t| a.bit(r, t)));
            }
        }
        assert!(tg(&ds, 5000).is_err());
    }

    #[test]
    fn tg_matches_windowed_or_oracle_with_partial_tail() {
        let ds = random_dataset(5, 22, None, 6);
        let out = tg(&ds, 4 * 3600).unwrap();
        assert_eq!(out.n_slots(), 6);
        for (a, b) in ds.traces().iter().zip(out.traces()) {
            for r in 1..5 {
                for j in 0..6 {
                    let any = (4 * j..(4 * j + 4).min(22)).any(|t| a.bit(r, t));
                    assert_eq!(b.bit(r, j), any);
                }
            }
        }
    }

    #[test]
    fn dgfr_examples() {
        assert_eq!(dgfr(&series(vec![124.0], 1), 10).unwrap().values(), &[125.0]);
        assert_eq!(
            dgfr(&series(vec![0.0, 3.0, 9.0, 10.0], 1), 5).unwrap().values(),
            &[2.5, 2.5, 7.5, 12.5]
        );
        let out = dgfr(&series(vec![0.0, 7.0, 20.0, 13.0], 1), 21).unwrap();
        assert!(out.values().iter().all(|&v| v == 10.5));
        assert!(dgfr(&series(vec![1.0], 1), 1).is_err());
    }

    #[test]
    fn dgar_examples() {
        assert_eq!(dgar(&series(vec![4.0; 5], 1), 3).unwrap().values(), &[4.0; 5]);
        assert_eq!(
            dgar(&series(vec![0.0, 10.0, 4.0, 6.0], 1), 2).unwrap().values(),
            &[2.5, 7.5, 2.5, 7.5]
        );
        assert_eq!(dgar(&series(vec![2.0, 8.0, 5.0], 1), 1).unwrap().values(), &[5.0; 3]);
    }

    #[test]
    fn generalization_stays_within_half_bucket() {
        let mut rng = crate::rng::stream(7);
        let s = series((0..60).map(|_| f64::from(rng.gen_range(0..50u32))).collect(), 3);
        for x in [2, 5, 7] {
            let out = dgfr(&s, x).unwrap();
            for (a, b) in s.values().iter().zip(out.values()) {
                assert!((a - b).abs() <= f64::from(x) / 2.0);
            }
        }
        for xp in [1, 2, 4] {
            let out = dgar(&s, xp).unwrap();
            for r in 0..3 {
                let row = s.row(r);
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (a, b) in row.iter().zip(out.row(r)) {
                    assert!((a - b).abs() <= (hi - lo) / (2.0 * f64::from(xp)) + 1e-12);
                }
            }
        }
    }
}
