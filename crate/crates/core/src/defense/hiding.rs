//! Suppression and sampling.

use rand::seq::index;
use rand::Rng;

use crate::aggregate::Series;
use crate::data::{Dataset, TraceMatrix};
use crate::error::{Error, Result};
use crate::rng::{derived_stream, floor_fraction};

/// Small count suppression: values below `k` become zero.
pub fn ssc(series: &Series, k: u32) -> Result<Series> {
    if k < 1 {
        return Err(Error::config("SSC threshold must be at least 1"));
    }
    let k = f64::from(k);
    Ok(series.map(|c| if c < k { 0.0 } else { c }))
}

/// Rows and columns that low-count suppression zeroes out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlpSelection {
    pub rois: Vec<usize>,
    pub slots: Vec<usize>,
}

/// Picks the `floor(z * n)` least popular non-null ROIs (by total count) and
/// least popular slots (by total non-null count). Ties go to the lower index.
pub fn slp_selection(series: &Series, z: f64) -> Result<SlpSelection> {
    if !(0.0..1.0).contains(&z) {
        return Err(Error::config("SLP fraction must lie in [0, 1)"));
    }
    let n_rois = series.n_rois();
    let n_slots = series.n_slots();
    let mut roi_pop: Vec<(f64, usize)> = (1..n_rois).map(|r| (series.row(r).iter().sum(), r)).collect();
    let mut slot_pop: Vec<(f64, usize)> = (0..n_slots)
        .map(|t| ((1..n_rois).map(|r| series.get(r, t)).sum(), t))
        .collect();
    let by_pop = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    roi_pop.sort_by(by_pop);
    slot_pop.sort_by(by_pop);
    let mut rois: Vec<usize> = roi_pop[..floor_fraction(z, n_rois - 1)].iter().map(|p| p.1).collect();
    let mut slots: Vec<usize> = slot_pop[..floor_fraction(z, n_slots)].iter().map(|p| p.1).collect();
    rois.sort_unstable();
    slots.sort_unstable();
    Ok(SlpSelection { rois, slots })
}

/// Low-count suppression: zeroes the selected ROI rows and whole slots.
pub fn slp(series: &Series, z: f64) -> Result<Series> {
    let sel = slp_selection(series, z)?;
    let mut out = series.clone();
    for &r in &sel.rois {
        out.row_mut(r).fill(0.0);
    }
    for r in 0..out.n_rois() {
        let row = out.row_mut(r);
        for &t in &sel.slots {
            row[t] = 0.0;
        }
    }
    Ok(out)
}

pub(crate) fn check_fraction(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::config("sampling fraction must lie in [0, 1]"))
    }
}

/// Clears `floor(w * n)` of the trace's `n` non-null bits, chosen uniformly
/// without replacement.
pub fn sample_trace<R: Rng + ?Sized>(trace: &TraceMatrix, w: f64, rng: &mut R) -> TraceMatrix {
    let n = trace.n_events();
    let drop = floor_fraction(w, n);
    if drop == 0 {
        return trace.clone();
    }
    let mut cleared = vec![false; n];
    for i in index::sample(rng, n, drop) {
        cleared[i] = true;
    }
    let mut i = 0;
    trace.remap(trace.n_rois(), trace.n_slots(), |r, t| {
        let keep = !cleared[i];
        i += 1;
        keep.then_some((r, t))
    })
}

/// Sampling applied to every trace with per-user streams derived from `seed`.
pub fn smp(dataset: &Dataset, w: f64, seed: u64) -> Result<Dataset> {
    check_fraction(w)?;
    let traces = dataset
        .traces()
        .iter()
        .enumerate()
        .map(|(i, t)| sample_trace(t, w, &mut derived_stream(seed, &[i as u64])))
        .collect();
    Ok(dataset.rebuilt(dataset.rois().to_vec(), dataset.discretization().clone(), traces))
}
