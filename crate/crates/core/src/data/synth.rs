//! Seeded synthetic mobility populations.
//!
//! Three archetypes cover the regular and irregular behaviour seen in
//! transit and taxi data: commuters with a fixed weekday home/work schedule,
//! roamers producing many quasi-random events around a set of anchor ROIs,
//! and sparse users with only a handful of events. ROI choice outside the
//! anchors follows a Zipf-like popularity law so that some ROIs are busy and
//! most are quiet.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Discretization, RoiMode, TraceMatrix, NULL_ROI};
use crate::error::{Error, Result};
use crate::rng::{derived_stream, label_tag, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    Commuter,
    Roamer,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationMix {
    pub commuter: f64,
    pub roamer: f64,
    pub sparse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeRates {
    /// Free (non-scheduled) events per day; the total per user is
    /// `round(events_per_day * days)`.
    pub events_per_day: f64,
    /// Number of personal anchor ROIs. Commuters use the first two as home
    /// and work.
    pub anchor_rois: usize,
    /// Commuters: probability of skipping each scheduled trip. Others:
    /// probability that a free event leaves the anchor set.
    pub noise_probability: f64,
}

/// Generator parameters. Every field is explicit in the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Total ROI count including the null ROI.
    pub n_rois: usize,
    pub n_slots: usize,
    pub slot_seconds: u64,
    /// Assumed to fall on a Monday 00:00 for the weekday schedule.
    pub time_origin: i64,
    pub mix: PopulationMix,
    pub commuter: ArchetypeRates,
    pub roamer: ArchetypeRates,
    pub sparse: ArchetypeRates,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rois < 2 {
            return Err(Error::config("n_rois must be at least 2 (the null ROI plus one location)"));
        }
        if self.n_users == 0 || self.n_slots == 0 || self.slot_seconds == 0 {
            return Err(Error::config("n_users, n_slots and slot_seconds must be positive"));
        }
        let m = self.mix;
        if [m.commuter, m.roamer, m.sparse].iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::config("population fractions must lie in [0, 1]"));
        }
        if (m.commuter + m.roamer + m.sparse - 1.0).abs() > 1e-9 {
            return Err(Error::config("population fractions must sum to 1"));
        }
        for r in [&self.commuter, &self.roamer, &self.sparse] {
            if !(r.events_per_day >= 0.0 && r.events_per_day.is_finite()) {
                return Err(Error::config("events_per_day must be a non-negative number"));
            }
            if !(0.0..=1.0).contains(&r.noise_probability) {
                return Err(Error::config("noise_probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn days(&self) -> f64 {
        self.n_slots as f64 * self.slot_seconds as f64 / 86_400.0
    }
}

/// Builds a dataset from `config`. Users are named `u00000`, `u00001`, ...
/// and their archetypes are recorded in the dataset metadata.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n_users;
    let n_commuter = ((config.mix.commuter * n as f64).round() as usize).min(n);
    let n_roamer = ((config.mix.roamer * n as f64).round() as usize).min(n - n_commuter);
    let mut kinds: Vec<Archetype> = std::iter::repeat_n(Archetype::Commuter, n_commuter)
        .chain(std::iter::repeat_n(Archetype::Roamer, n_roamer))
        .chain(std::iter::repeat_n(Archetype::Sparse, n - n_commuter - n_roamer))
        .collect();
    let mut assign_rng = derived_stream(config.seed, &[label_tag("assign")]);
    rand::seq::SliceRandom::shuffle(kinds.as_mut_slice(), &mut assign_rng);

    let popularity = Popularity::zipf(config.n_rois - 1);
    let width = n.saturating_sub(1).to_string().len().max(5);
    let mut traces = Vec::with_capacity(n);
    let mut archetypes = BTreeMap::new();
    for (i, &kind) in kinds.iter().enumerate() {
        let user_id = format!("u{i:0width$}");
        let mut rng = derived_stream(config.seed, &[label_tag("user"), i as u64]);
        let cells = match kind {
            Archetype::Commuter => commuter_cells(config, &popularity, &mut rng),
            Archetype::Roamer => free_cells(config, &config.roamer, &popularity, &mut rng),
            Archetype::Sparse => free_cells(config, &config.sparse, &popularity, &mut rng),
        };
        traces.push(TraceMatrix::from_pairs(user_id.clone(), config.n_rois, config.n_slots, cells)?);
        archetypes.insert(user_id, kind);
    }

    let rois = std::iter::once(NULL_ROI.to_string())
        .chain((1..config.n_rois).map(|r| format!("roi{r}")))
        .collect();
    let discretization = Discretization {
        slot_seconds: config.slot_seconds,
        time_origin: config.time_origin,
        n_slots: config.n_slots,
        roi_mode: RoiMode::ExplicitId,
        grid: None,
    };
    Ok(Dataset::new(rois, discretization, traces)?.with_archetypes(archetypes))
}

/// Cumulative Zipf(1) weights over non-null ROIs 1..=n.
struct Popularity {
    cumulative: Vec<f64>,
}

impl Popularity {
    fn zipf(n: usize) -> Self {
        let mut acc = 0.0;
        let cumulative = (1..=n)
            .map(|r| {
                acc += 1.0 / r as f64;
                acc
            })
            .collect();
        Popularity { cumulative }
    }

    fn draw(&self, rng: &mut StreamRng) -> usize {
        let total = *self.cumulative.last().expect("at least one ROI");
        let u = rng.gen::<f64>() * total;
        1 + self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }

    /// `k` distinct ROIs (fewer if the ROI set is smaller).
    fn draw_distinct(&self, k: usize, rng: &mut StreamRng) -> Vec<usize> {
        let k = k.min(self.cumulative.len());
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let r = self.draw(rng);
            if !out.contains(&r) {
                out.push(r);
            }
        }
        out
    }
}

fn slot_at(config: &SynthConfig, day: usize, hour: usize) -> Option<usize> {
    let seconds = day as u64 * 86_400 + hour as u64 * 3_600;
    let slot = (seconds / config.slot_seconds) as usize;
    (slot < config.n_slots).then_some(slot)
}

fn commuter_cells(config: &SynthConfig, pop: &Popularity, rng: &mut StreamRng) -> Vec<(usize, usize)> {
    let rates = &config.commuter;
    let anchors = pop.draw_distinct(rates.anchor_rois.max(2), rng);
    let home = anchors[0];
    let work = *anchors.get(1).unwrap_or(&home);
    let morning = 6 + rng.gen_range(0..4);
    let evening = 16 + rng.gen_range(0..4);

    let mut cells = Vec::new();
    let n_days = config.days().ceil() as usize;
    for day in (0..n_days).filter(|d| d % 7 < 5) {
        for hour in [morning, evening] {
            if rng.gen::<f64>() < rates.noise_probability {
                continue;
            }
            if let Some(slot) = slot_at(config, day, hour) {
                cells.push((home, slot));
                cells.push((work, slot));
            }
        }
    }
    let extra = (rates.events_per_day * config.days()).round() as usize;
    for _ in 0..extra {
        let slot = rng.gen_range(0..config.n_slots);
        let roi = if rng.gen::<bool>() {
            anchors[rng.gen_range(0..anchors.len())]
        } else {
            pop.draw(rng)
        };
        cells.push((roi, slot));
    }
    cells
}

fn free_cells(config: &SynthConfig, rates: &ArchetypeRates, pop: &Popularity, rng: &mut StreamRng) -> Vec<(usize, usize)> {
    let anchors = pop.draw_distinct(rates.anchor_rois.max(1), rng);
    let n_events = (rates.events_per_day * config.days()).round() as usize;
    (0..n_events)
        .map(|_| {
            let slot = rng.gen_range(0..config.n_slots);
            let roi = if rng.gen::<f64>() < rates.noise_probability {
                pop.draw(rng)
            } else {
                anchors[rng.gen_range(0..anchors.len())]
            };
            (roi, slot)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(events_per_day: f64, anchor_rois: usize, noise_probability: f64) -> ArchetypeRates {
        ArchetypeRates {
            events_per_day,
            anchor_rois,
            noise_probability,
        }
    }

    pub(crate) fn config(mix: PopulationMix, n_slots: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: 60,
            n_rois: 21,
            n_slots,
            slot_seconds: 3600,
            time_origin: 0,
            mix,
            commuter: rates(0.2, 3, 0.05),
            roamer: rates(12.0, 6, 0.3),
            sparse: rates(2.0 / 7.0, 2, 0.5),
            seed,
        }
    }

    const MIXED: PopulationMix = PopulationMix {
        commuter: 0.4,
        roamer: 0.3,
        sparse: 0.3,
    };

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic(&config(MIXED, 168, 7)).unwrap();
        let b = generate_synthetic(&config(MIXED, 168, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&config(MIXED, 168, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sparse_users_respect_event_budget() {
        let mix = PopulationMix {
            commuter: 0.0,
            roamer: 0.0,
            sparse: 1.0,
        };
        let ds = generate_synthetic(&config(mix, 168, 1)).unwrap();
        assert!(ds.traces().iter().all(|t| t.n_events() <= 2));
        assert!(ds.archetypes().values().all(|&a| a == Archetype::Sparse));
    }

    #[test]
    fn commuter_weekday_pattern_repeats_across_weeks() {
        let mix = PopulationMix {
            commuter: 1.0,
            roamer: 0.0,
            sparse: 0.0,
        };
        let ds = generate_synthetic(&config(mix, 3 * 168, 2)).unwrap();
        let (mut repeated, mut total) = (0usize, 0usize);
        for t in ds.traces() {
            for (roi, slot) in t.events().filter(|&(_, s)| s >= 168) {
                let day = slot / 24;
                if day % 7 >= 5 {
                    continue;
                }
                total += 1;
                if t.bit(roi, slot % 168) {
                    repeated += 1;
                }
            }
        }
        let frac = repeated as f64 / total as f64;
        assert!(frac >= 0.9, "only {frac} of later-week commuter bits repeat week 1");
    }

    #[test]
    fn archetypes_order_by_activity() {
        let ds = generate_synthetic(&config(MIXED, 168, 3)).unwrap();
        let mean = |kind: Archetype| {
            let v: Vec<usize> = ds
                .traces()
                .iter()
                .filter(|t| ds.archetypes()[t.user_id()] == kind)
                .map(|t| t.active_slots())
                .collect();
            v.iter().sum::<usize>() as f64 / v.len() as f64
        };
        assert!(mean(Archetype::Roamer) > mean(Archetype::Commuter));
        assert!(mean(Archetype::Commuter) > mean(Archetype::Sparse));
    }

    #[test]
    fn too_few_rois_is_rejected() {
        let mut c = config(MIXED, 24, 1);
        c.n_rois = 1;
        assert!(generate_synthetic(&c).is_err());
    }

    #[test]
    fn mix_must_sum_to_one() {
        let mut c = config(MIXED, 24, 1);
        c.mix.sparse = 0.5;
        assert!(generate_synthetic(&c).is_err());
    }
}
