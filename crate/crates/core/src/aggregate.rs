//! Aggregate location time-series over user groups.

use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TraceMatrix};
use crate::error::{Error, Result};

/// Half-open slot range `[begin, end)` relative to a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotRange {
    pub begin: usize,
    pub end: usize,
}

impl SlotRange {
    pub fn new(begin: usize, end: usize) -> Self {
        SlotRange { begin, end }
    }

    pub fn range(&self) -> Range<usize> {
        self.begin..self.end
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.begin)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const MAX_GROUP: usize = 1 << 31;

/// Integer count matrix (ROI x slot) summed over a group of `group_size`
/// users. Row 0 counts group members absent in each slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateSeries {
    counts: Vec<u32>,
    n_rois: usize,
    n_slots: usize,
    group_size: u32,
    window: SlotRange,
}

impl AggregateSeries {
    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn group_size(&self) -> u32 {
        self.group_size
    }

    pub fn window(&self) -> SlotRange {
        self.window
    }

    /// Row-major `n_rois x n_slots` counts.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, roi: usize, slot: usize) -> u32 {
        self.counts[roi * self.n_slots + slot]
    }

    pub fn to_series(&self) -> Series {
        Series {
            values: self.counts.iter().map(|&c| f64::from(c)).collect(),
            n_rois: self.n_rois,
            n_slots: self.n_slots,
            group_size: Some(self.group_size),
        }
    }

    /// Sum of two aggregates over disjoint groups on the same window.
    pub fn merge(&self, other: &AggregateSeries) -> Result<AggregateSeries> {
        if self.n_rois != other.n_rois || self.window != other.window {
            return Err(Error::shape(
                format!("{} x {:?}", self.n_rois, self.window),
                format!("{} x {:?}", other.n_rois, other.window),
            ));
        }
        Ok(AggregateSeries {
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            n_rois: self.n_rois,
            n_slots: self.n_slots,
            group_size: self.group_size + other.group_size,
            window: self.window,
        })
    }

    fn check_trace(&self, trace: &TraceMatrix) -> Result<()> {
        if trace.n_rois() != self.n_rois || trace.n_slots() < self.window.end {
            return Err(Error::shape(
                format!("trace with {} ROIs covering slot {}", self.n_rois, self.window.end),
                format!("{} x {}", trace.n_rois(), trace.n_slots()),
            ));
        }
        Ok(())
    }

    /// CSV with one row per ROI; the header names the absolute slot indices.
    pub fn write_csv<W: Write>(&self, writer: W, rois: &[String]) -> Result<()> {
        write_matrix_csv(writer, rois, self.window.begin, self.n_slots, |r, t| self.count(r, t).to_string())
    }
}

/// Sums the traces of the users in `group` over `window`.
pub fn aggregate<S: AsRef<str>>(dataset: &Dataset, group: &[S], window: SlotRange) -> Result<AggregateSeries> {
    let members = group
        .iter()
        .map(|u| dataset.user_index(u.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    aggregate_indices(dataset, &members, window)
}

/// Index-based variant of [`aggregate`].
pub fn aggregate_indices(dataset: &Dataset, members: &[usize], window: SlotRange) -> Result<AggregateSeries> {
    if members.is_empty() {
        return Err(Error::EmptyGroup);
    }
    dataset.check_window(&window.range())?;
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::config(format!(
            "user `{}` appears twice in the group",
            dataset.trace(w[0]).user_id()
        )));
    }
    Ok(sum_traces(
        members.iter().map(|&i| dataset.trace(i)),
        dataset.n_rois(),
        window,
    ))
}

/// Sums arbitrary traces (all with at least `window.end` slots).
pub(crate) fn sum_traces<'a, I>(traces: I, n_rois: usize, window: SlotRange) -> AggregateSeries
where
    I: IntoIterator<Item = &'a TraceMatrix>,
{
    let n_slots = window.len();
    let mut counts = vec![0u32; n_rois * n_slots];
    let mut m = 0usize;
    for trace in traces {
        m += 1;
        add_trace(&mut counts, trace, n_slots, window, 1);
    }
    assert!(m <= MAX_GROUP, "group size exceeds 2^31");
    AggregateSeries {
        counts,
        n_rois,
        n_slots,
        group_size: m as u32,
        window,
    }
}

fn add_trace(counts: &mut [u32], trace: &TraceMatrix, n_slots: usize, window: SlotRange, sign: i64) -> bool {
    let mut ok = true;
    let mut bump = |idx: usize| {
        let v = i64::from(counts[idx]) + sign;
        if v < 0 {
            ok = false;
        } else {
            counts[idx] = v as u32;
        }
    };
    for (j, t) in window.range().enumerate() {
        let rois = trace.slot_rois(t);
        if rois.is_empty() {
            bump(j);
        }
        for &r in rois {
            bump(r as usize * n_slots + j);
        }
    }
    ok
}

/// Removes a member's contribution; the result equals re-aggregating the
/// group without that user.
pub fn remove_user(aggregate: &AggregateSeries, trace: &TraceMatrix) -> Result<AggregateSeries> {
    aggregate.check_trace(trace)?;
    if aggregate.group_size == 0 {
        return Err(Error::NegativeCount(trace.user_id().to_string()));
    }
    let mut out = aggregate.clone();
    if !add_trace(&mut out.counts, trace, out.n_slots, out.window, -1) {
        return Err(Error::NegativeCount(trace.user_id().to_string()));
    }
    out.group_size -= 1;
    Ok(out)
}

/// Adds a user's contribution (inverse of [`remove_user`]).
pub fn add_user(aggregate: &AggregateSeries, trace: &TraceMatrix) -> Result<AggregateSeries> {
    aggregate.check_trace(trace)?;
    let mut out = aggregate.clone();
    add_trace(&mut out.counts, trace, out.n_slots, out.window, 1);
    out.group_size += 1;
    Ok(out)
}

/// Real-valued ROI x slot matrix: a raw aggregate or the output of a defense.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    values: Vec<f64>,
    n_rois: usize,
    n_slots: usize,
    group_size: Option<u32>,
}

impl Series {
    pub fn from_values(values: Vec<f64>, n_rois: usize, n_slots: usize, group_size: Option<u32>) -> Result<Self> {
        if values.len() != n_rois * n_slots {
            return Err(Error::shape(n_rois * n_slots, values.len()));
        }
        Ok(Series {
            values,
            n_rois,
            n_slots,
            group_size,
        })
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Size of the group the series was computed over, when known.
    pub fn group_size(&self) -> Option<u32> {
        self.group_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, roi: usize, slot: usize) -> f64 {
        self.values[roi * self.n_slots + slot]
    }

    pub fn row(&self, roi: usize) -> &[f64] {
        &self.values[roi * self.n_slots..(roi + 1) * self.n_slots]
    }

    pub fn row_mut(&mut self, roi: usize) -> &mut [f64] {
        &mut self.values[roi * self.n_slots..(roi + 1) * self.n_slots]
    }

    pub fn same_shape(&self, other: &Series) -> Result<()> {
        if self.n_rois != other.n_rois || self.n_slots != other.n_slots {
            return Err(Error::shape(
                format!("{} x {}", self.n_rois, self.n_slots),
                format!("{} x {}", other.n_rois, other.n_slots),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Series {
        Series {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W, rois: &[String], first_slot: usize) -> Result<()> {
        write_matrix_csv(writer, rois, first_slot, self.n_slots, |r, t| self.get(r, t).to_string())
    }

    /// Reads the layout written by [`Series::write_csv`]; returns the ROI ids
    /// from the first column alongside the matrix.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Vec<String>, Series)> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let n_slots = rdr.headers()?.len().saturating_sub(1);
        let mut rois = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            rois.push(record.get(0).unwrap_or("").to_string());
            for field in record.iter().skip(1) {
                values.push(field.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{field}` is not a number"),
                })?);
            }
        }
        if rois.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n_rois = rois.len();
        Ok((rois, Series::from_values(values, n_rois, n_slots, None)?))
    }
}

fn write_matrix_csv<W: Write>(
    writer: W,
    rois: &[String],
    first_slot: usize,
    n_slots: usize,
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["roi_id".to_string()];
    header.extend((first_slot..first_slot + n_slots).map(|t| t.to_string()));
    w.write_record(&header)?;
    for (r, roi) in rois.iter().enumerate() {
        let mut row = vec![roi.clone()];
        row.extend((0..n_slots).map(|t| cell(r, t)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
