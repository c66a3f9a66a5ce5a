//! Per-user mobility features, unicity and the analyses that relate attack
//! success to them.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregate::{Series, SlotRange};
use crate::attack::{fit_lr, AttackResult, LrModel, LrParams, PcaModel};
use crate::data::{Dataset, Discretization};
use crate::error::{Error, Result};
use crate::rng::ceil_fraction;

const DAY_SECONDS: u64 = 86_400;

/// Day index and weekend flag for every slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Calendar {
    day: Vec<usize>,
    weekend: Vec<bool>,
}

impl Calendar {
    /// Labels slots assuming `time_origin` falls at midnight on weekday
    /// `first_weekday` (0 = Monday, ..., 6 = Sunday).
    pub fn weekly(disc: &Discretization, first_weekday: u8) -> Result<Self> {
        if first_weekday > 6 {
            return Err(Error::config("first_weekday must be in 0..=6"));
        }
        let day: Vec<usize> = (0..disc.n_slots)
            .map(|t| (t as u64 * disc.slot_seconds / DAY_SECONDS) as usize)
            .collect();
        let weekend = day.iter().map(|d| (d + usize::from(first_weekday)) % 7 >= 5).collect();
        Ok(Calendar { day, weekend })
    }

    pub fn from_flags(day: Vec<usize>, weekend: Vec<bool>) -> Result<Self> {
        if day.len() != weekend.len() {
            return Err(Error::shape(day.len(), weekend.len()));
        }
        Ok(Calendar { day, weekend })
    }

    pub fn len(&self) -> usize {
        self.day.len()
    }

    pub fn is_empty(&self) -> bool {
        self.day.is_empty()
    }

    pub fn is_weekend(&self, slot: usize) -> bool {
        self.weekend[slot]
    }

    fn days(&self, weekend: bool) -> usize {
        let mut days: Vec<usize> = (0..self.len())
            .filter(|&t| self.weekend[t] == weekend)
            .map(|t| self.day[t])
            .collect();
        days.dedup();
        days.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityFeatures {
    pub total_events: usize,
    pub unique_locations: usize,
    pub active_timeslots: usize,
    /// Events per active slot.
    pub mean_locations_per_timeslot: f64,
    /// Events per weekday (calendar day), likewise for weekends.
    pub mean_events_weekday: f64,
    pub mean_events_weekend: f64,
    pub active_timeslots_weekday: usize,
    pub active_timeslots_weekend: usize,
    pub spatial_entropy: f64,
    pub temporal_entropy: f64,
    pub unicity: f64,
}

impl MobilityFeatures {
    pub const NAMES: [&'static str; 11] = [
        "total_events",
        "unique_locations",
        "active_timeslots",
        "mean_locations_per_timeslot",
        "mean_events_weekday",
        "mean_events_weekend",
        "active_timeslots_weekday",
        "active_timeslots_weekend",
        "spatial_entropy",
        "temporal_entropy",
        "unicity",
    ];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.total_events as f64,
            self.unique_locations as f64,
            self.active_timeslots as f64,
            self.mean_locations_per_timeslot,
            self.mean_events_weekday,
            self.mean_events_weekend,
            self.active_timeslots_weekday as f64,
            self.active_timeslots_weekend as f64,
            self.spatial_entropy,
            self.temporal_entropy,
            self.unicity,
        ]
    }
}

/// Shannon entropy in bits of the distribution proportional to `counts`.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Features of the trace at `user` (a dataset index).
pub fn compute_features(dataset: &Dataset, user: usize, calendar: &Calendar) -> Result<MobilityFeatures> {
    let mut f = trace_features(dataset, user, calendar)?;
    f.unicity = unicity(dataset, user, SlotRange::new(0, dataset.n_slots()))?;
    Ok(f)
}

fn trace_features(dataset: &Dataset, user: usize, calendar: &Calendar) -> Result<MobilityFeatures> {
    if calendar.len() != dataset.n_slots() {
        return Err(Error::shape(dataset.n_slots(), calendar.len()));
    }
    if user >= dataset.n_users() {
        return Err(Error::UnknownUser(format!("index {user}")));
    }
    let trace = dataset.trace(user);
    let mut per_roi = vec![0usize; dataset.n_rois()];
    let mut per_slot = vec![0usize; dataset.n_slots()];
    for (r, t) in trace.events() {
        per_roi[r] += 1;
        per_slot[t] += 1;
    }
    let (mut ev_wd, mut ev_we, mut act_wd, mut act_we) = (0, 0, 0, 0);
    for (t, &c) in per_slot.iter().enumerate() {
        let active = usize::from(c > 0);
        if calendar.is_weekend(t) {
            ev_we += c;
            act_we += active;
        } else {
            ev_wd += c;
            act_wd += active;
        }
    }
    let total = trace.n_events();
    let active = trace.active_slots();
    Ok(MobilityFeatures {
        total_events: total,
        unique_locations: per_roi.iter().filter(|&&c| c > 0).count(),
        active_timeslots: active,
        mean_locations_per_timeslot: ratio(total, active),
        mean_events_weekday: ratio(ev_wd, calendar.days(false)),
        mean_events_weekend: ratio(ev_we, calendar.days(true)),
        active_timeslots_weekday: act_wd,
        active_timeslots_weekend: act_we,
        spatial_entropy: entropy_bits(&per_roi),
        temporal_entropy: entropy_bits(&per_slot),
        unicity: 0.0,
    })
}

/// Features of every user, in dataset order.
pub fn compute_all_features(dataset: &Dataset, calendar: &Calendar) -> Result<Vec<MobilityFeatures>> {
    let unicities = unicity_all(dataset, SlotRange::new(0, dataset.n_slots()))?;
    (0..dataset.n_users())
        .map(|u| {
            let mut f = trace_features(dataset, u, calendar)?;
            f.unicity = unicities[u];
            Ok(f)
        })
        .collect()
}

/// Fraction of slots in `window` where the user's ROI set is non-empty and
/// shared with no other user.
pub fn unicity(dataset: &Dataset, user: usize, window: SlotRange) -> Result<f64> {
    dataset.check_window(&window.range())?;
    if user >= dataset.n_users() {
        return Err(Error::UnknownUser(format!("index {user}")));
    }
    if window.is_empty() {
        return Ok(0.0);
    }
    let me = dataset.trace(user);
    let unique = window
        .range()
        .filter(|&t| {
            let set = me.slot_rois(t);
            !set.is_empty()
                && dataset
                    .traces()
                    .iter()
                    .enumerate()
                    .all(|(i, other)| i == user || other.slot_rois(t) != set)
        })
        .count();
    Ok(unique as f64 / window.len() as f64)
}

/// Unicity of every user, in dataset order.
pub fn unicity_all(dataset: &Dataset, window: SlotRange) -> Result<Vec<f64>> {
    dataset.check_window(&window.range())?;
    let mut unique = vec![0usize; dataset.n_users()];
    let mut seen: HashMap<&[u32], usize> = HashMap::new();
    for t in window.range() {
        seen.clear();
        for trace in dataset.traces() {
            let set = trace.slot_rois(t);
            if !set.is_empty() {
                *seen.entry(set).or_default() += 1;
            }
        }
        for (u, trace) in dataset.traces().iter().enumerate() {
            let set = trace.slot_rois(t);
            if !set.is_empty() && seen[set] == 1 {
                unique[u] += 1;
            }
        }
    }
    Ok(unique.into_iter().map(|c| ratio(c, window.len())).collect())
}

/// Aggregated absolute component loadings over the ROI x slot feature grid,
/// normalized so the largest entry is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingHeatmap {
    pub values: Vec<f64>,
    pub n_rois: usize,
    pub n_slots: usize,
    /// `row_order[i]` is the original row shown at position `i`.
    pub row_order: Vec<usize>,
    pub col_order: Vec<usize>,
}

impl LoadingHeatmap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_slots + col]
    }

    /// Writes the matrix with a `roi_id` column followed by slot columns.
    /// Row labels and slot headers follow the current permutation.
    pub fn write_csv<W: Write>(&self, writer: W, rois: &[String]) -> Result<()> {
        if rois.len() != self.n_rois {
            return Err(Error::shape(self.n_rois, rois.len()));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["roi_id".to_string()];
        header.extend(self.col_order.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for (i, &r) in self.row_order.iter().enumerate() {
            let mut rec = vec![rois[r].clone()];
            rec.extend((0..self.n_slots).map(|j| self.get(i, j).to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON sidecar with the permutations.
    pub fn permutation_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            n_rois: usize,
            n_slots: usize,
            row_order: &'a [usize],
            col_order: &'a [usize],
        }
        Ok(serde_json::to_string_pretty(&Sidecar {
            n_rois: self.n_rois,
            n_slots: self.n_slots,
            row_order: &self.row_order,
            col_order: &self.col_order,
        })?)
    }
}

/// Sums `|component_j[i]| * sqrt(variance_j)` over the `top_n` components
/// with the largest absolute classifier weight of each victim.
pub fn loading_heatmap(
    models: &[(&PcaModel, &LrModel)],
    top_n: usize,
    n_rois: usize,
    n_slots: usize,
) -> Result<LoadingHeatmap> {
    let d = n_rois * n_slots;
    let mut values = vec![0.0; d];
    for (pca, lr) in models {
        if pca.n_features() != d {
            return Err(Error::shape(d, pca.n_features()));
        }
        if lr.weights.len() != pca.n_components() {
            return Err(Error::shape(pca.n_components(), lr.weights.len()));
        }
        let mut order: Vec<usize> = (0..lr.weights.len()).collect();
        order.sort_by(|&a, &b| lr.weights[b].abs().total_cmp(&lr.weights[a].abs()).then(a.cmp(&b)));
        for &j in order.iter().take(top_n) {
            let sd = pca.explained_variance[j].max(0.0).sqrt();
            for (v, c) in values.iter_mut().zip(&pca.components[j]) {
                *v += (c * sd).abs();
            }
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(LoadingHeatmap {
        values,
        n_rois,
        n_slots,
        row_order: (0..n_rois).collect(),
        col_order: (0..n_slots).collect(),
    })
}

/// Ascending order of `keys`, ties by index.
fn ascending(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    idx
}

/// Reorders rows by ascending ROI total and columns by ascending non-null
/// slot total of `aggregate`.
pub fn sort_by_popularity(heatmap: &LoadingHeatmap, aggregate: &Series) -> Result<LoadingHeatmap> {
    if aggregate.n_rois() != heatmap.n_rois || aggregate.n_slots() != heatmap.n_slots {
        return Err(Error::shape(heatmap.n_rois * heatmap.n_slots, aggregate.values().len()));
    }
    let row_sums: Vec<f64> = (0..aggregate.n_rois()).map(|r| aggregate.row(r).iter().sum()).collect();
    let col_sums: Vec<f64> = (0..aggregate.n_slots())
        .map(|t| (1..aggregate.n_rois()).map(|r| aggregate.get(r, t)).sum())
        .collect();
    let rows = ascending(&row_sums);
    let cols = ascending(&col_sums);
    let mut values = Vec::with_capacity(heatmap.values.len());
    for &r in &rows {
        for &c in &cols {
            values.push(heatmap.get(r, c));
        }
    }
    Ok(LoadingHeatmap {
        values,
        n_rois: heatmap.n_rois,
        n_slots: heatmap.n_slots,
        row_order: rows.iter().map(|&r| heatmap.row_order[r]).collect(),
        col_order: cols.iter().map(|&c| heatmap.col_order[c]).collect(),
    })
}

/// Splits attack results into the most and least distinguishable deciles
/// (`ceil(n / 10)` victims each, ranked by AUC, ties by user id).
pub fn auc_deciles(results: &[AttackResult]) -> Result<(Vec<String>, Vec<String>)> {
    let n = ceil_fraction(0.1, results.len());
    if n < 2 || 2 * n > results.len() {
        return Err(Error::TooFewSamples {
            needed: 20,
            found: results.len(),
        });
    }
    let mut order: Vec<&AttackResult> = results.iter().collect();
    order.sort_by(|a, b| b.auc.total_cmp(&a.auc).then_with(|| a.target.cmp(&b.target)));
    let top = order[..n].iter().map(|r| r.target.clone()).collect();
    let bottom = order[order.len() - n..].iter().map(|r| r.target.clone()).collect();
    Ok((top, bottom))
}

/// Logistic-regression coefficients separating the most distinguishable
/// victims (label 0) from the least distinguishable ones (label 1), on
/// standardized features. Negative coefficients point towards the more
/// distinguishable group.
pub fn susceptibility_coefficients(
    top: &[MobilityFeatures],
    bottom: &[MobilityFeatures],
    params: &LrParams,
) -> Result<Vec<(String, f64)>> {
    if top.len() < 2 || bottom.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: top.len().min(bottom.len()),
        });
    }
    let mut x: Vec<Vec<f64>> = top.iter().chain(bottom).map(MobilityFeatures::to_vec).collect();
    let labels: Vec<bool> = (0..x.len()).map(|i| i >= top.len()).collect();
    let n = x.len() as f64;
    for j in 0..MobilityFeatures::NAMES.len() {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = if var.sqrt() > 1e-12 * mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
        for row in &mut x {
            row[j] = (row[j] - mean) / sd;
        }
    }
    let model = fit_lr(&x, &labels, params)?;
    Ok(MobilityFeatures::NAMES
        .iter()
        .map(|s| s.to_string())
        .zip(model.weights)
        .collect())
}

/// One CSV row per user: `user_id` followed by every feature.
pub fn write_features_csv<W: Write>(writer: W, users: &[&str], features: &[MobilityFeatures]) -> Result<()> {
    if users.len() != features.len() {
        return Err(Error::shape(users.len(), features.len()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id"];
    header.extend(MobilityFeatures::NAMES);
    w.write_record(&header)?;
    for (u, f) in users.iter().zip(features) {
        let mut rec = vec![u.to_string()];
        rec.extend(f.to_vec().into_iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
