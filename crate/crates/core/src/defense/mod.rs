//! Defense mechanisms applied either to traces before aggregation or to the
//! released aggregate.

pub mod fourier;
mod generalize;
mod hiding;
mod perturb;

use std::borrow::Cow;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregate::{sum_traces, Series, SlotRange};
use crate::data::{Dataset, TraceMatrix};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_stream, label_tag};

pub use generalize::{dgar, dgfr, spg, tg, PartitionSpec, RoiPartition};
pub use hiding::{sample_trace, slp, slp_selection, smp, ssc, SlpSelection};
pub use perturb::{fpa, fpa_noise_scale, fpa_sensitivity, psc, psc_noise, Budget, Noise, SensitivityMode};

/// A mechanism with its parameters, as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "lowercase", deny_unknown_fields)]
pub enum DefenseConfig {
    Identity,
    Spg {
        partition: PartitionSpec,
    },
    Tg {
        coarse_slot_seconds: u64,
    },
    Dgfr {
        x: u32,
    },
    Dgar {
        x_prime: u32,
    },
    Ssc {
        k: u32,
    },
    Slp {
        z: f64,
    },
    Smp {
        w: f64,
    },
    Psc {
        k: u32,
        epsilon_prime: f64,
    },
    Fpa {
        l: usize,
        epsilon: f64,
        #[serde(default)]
        sensitivity_mode: SensitivityMode,
        #[serde(default)]
        budget: Budget,
    },
    Spsc {
        w: f64,
        k: u32,
        epsilon_prime: f64,
    },
    Sfpa {
        w: f64,
        l: usize,
        epsilon: f64,
        #[serde(default)]
        sensitivity_mode: SensitivityMode,
        #[serde(default)]
        budget: Budget,
    },
}

/// Where in the pipeline a mechanism acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenseStage {
    Trace,
    Aggregate,
    /// Trace sampling followed by aggregate perturbation.
    Composite,
}

/// The aggregate-level half of a composite mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Psc {
        k: u32,
        epsilon_prime: f64,
    },
    Fpa {
        l: usize,
        epsilon: f64,
        sensitivity_mode: SensitivityMode,
        budget: Budget,
    },
}

impl DefenseConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseConfig::Identity => "identity",
            DefenseConfig::Spg { .. } => "spg",
            DefenseConfig::Tg { .. } => "tg",
            DefenseConfig::Dgfr { .. } => "dgfr",
            DefenseConfig::Dgar { .. } => "dgar",
            DefenseConfig::Ssc { .. } => "ssc",
            DefenseConfig::Slp { .. } => "slp",
            DefenseConfig::Smp { .. } => "smp",
            DefenseConfig::Psc { .. } => "psc",
            DefenseConfig::Fpa { .. } => "fpa",
            DefenseConfig::Spsc { .. } => "spsc",
            DefenseConfig::Sfpa { .. } => "sfpa",
        }
    }

    /// Parameters as `key=value` pairs joined by `;`.
    pub fn params(&self) -> String {
        let value = serde_json::to_value(self).unwrap_or_default();
        let mut out = String::new();
        if let Some(map) = value.as_object() {
            for (k, v) in map.iter().filter(|(k, _)| *k != "mechanism") {
                if !out.is_empty() {
                    out.push(';');
                }
                let v = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let _ = write!(out, "{k}={v}");
            }
        }
        out
    }

    pub fn stage(&self) -> DefenseStage {
        match self {
            DefenseConfig::Spg { .. } | DefenseConfig::Tg { .. } | DefenseConfig::Smp { .. } => DefenseStage::Trace,
            DefenseConfig::Spsc { .. } | DefenseConfig::Sfpa { .. } => DefenseStage::Composite,
            _ => DefenseStage::Aggregate,
        }
    }

    /// Checks parameter ranges that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let positive = |e: f64, what: &str| {
            if e > 0.0 && e.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be positive and finite")))
            }
        };
        match *self {
            DefenseConfig::Identity | DefenseConfig::Spg { .. } => Ok(()),
            DefenseConfig::Tg { coarse_slot_seconds: 0 } => {
                Err(Error::config("coarse slot length must be positive"))
            }
            DefenseConfig::Tg { .. } => Ok(()),
            DefenseConfig::Dgfr { x } if x < 2 => Err(Error::config("DGFR range size must be at least 2")),
            DefenseConfig::Dgar { x_prime } if x_prime < 1 => {
                Err(Error::config("DGAR sub-range count must be at least 1"))
            }
            DefenseConfig::Ssc { k } | DefenseConfig::Psc { k, .. } | DefenseConfig::Spsc { k, .. } if k < 1 => {
                Err(Error::config("suppression threshold must be at least 1"))
            }
            DefenseConfig::Slp { z } if !(0.0..1.0).contains(&z) => {
                Err(Error::config("SLP fraction must lie in [0, 1)"))
            }
            DefenseConfig::Smp { w } => hiding::check_fraction(w),
            DefenseConfig::Psc { epsilon_prime, .. } => positive(epsilon_prime, "epsilon_prime"),
            DefenseConfig::Spsc { w, epsilon_prime, .. } => {
                hiding::check_fraction(w)?;
                positive(epsilon_prime, "epsilon_prime")
            }
            DefenseConfig::Fpa { l, epsilon, .. } | DefenseConfig::Sfpa { l, epsilon, .. } => {
                if let DefenseConfig::Sfpa { w, .. } = *self {
                    hiding::check_fraction(w)?;
                }
                if l == 0 {
                    return Err(Error::config("FPA must keep at least one coefficient"));
                }
                positive(epsilon, "epsilon")
            }
            _ => Ok(()),
        }
    }
}

/// A defense bound to a dataset: trace-level rewrites that do not depend on
/// the group (SPG, TG) are applied once here.
#[derive(Debug, Clone)]
pub struct PreparedDefense<'a> {
    config: DefenseConfig,
    dataset: Cow<'a, Dataset>,
    /// Source ROI row -> prepared ROI row.
    roi_map: Vec<usize>,
    /// Source slots per prepared slot.
    slot_factor: usize,
    source_slots: usize,
}

pub fn prepare<'a>(config: &DefenseConfig, dataset: &'a Dataset) -> Result<PreparedDefense<'a>> {
    config.validate()?;
    let mut roi_map: Vec<usize> = (0..dataset.n_rois()).collect();
    let mut slot_factor = 1;
    let prepared = match config {
        DefenseConfig::Spg { partition } => {
            let partition = RoiPartition::resolve(partition, dataset)?;
            let out = spg(dataset, &partition)?;
            roi_map = partition.map;
            Cow::Owned(out)
        }
        DefenseConfig::Tg { coarse_slot_seconds } => {
            slot_factor = (*coarse_slot_seconds / dataset.discretization().slot_seconds) as usize;
            Cow::Owned(tg(dataset, *coarse_slot_seconds)?)
        }
        _ => Cow::Borrowed(dataset),
    };
    Ok(PreparedDefense {
        config: config.clone(),
        dataset: prepared,
        roi_map,
        slot_factor,
        source_slots: dataset.n_slots(),
    })
}

fn sample_seed(seed: u64) -> u64 {
    derive_seed(seed, &[label_tag("sample")])
}

fn noise_seed(seed: u64) -> u64 {
    derive_seed(seed, &[label_tag("noise")])
}

impl PreparedDefense<'_> {
    pub fn config(&self) -> &DefenseConfig {
        &self.config
    }

    /// The dataset after trace-level generalization.
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Maps a release back onto the source ROIs and slots by splitting each
    /// value evenly over the source cells it covers. Releases that kept the
    /// source resolution are returned unchanged.
    pub fn to_source_resolution(&self, release: &Series) -> Result<Series> {
        let ds = self.dataset();
        if release.n_rois() != ds.n_rois() || release.n_slots() != ds.n_slots() {
            return Err(Error::shape(ds.n_rois() * ds.n_slots(), release.values().len()));
        }
        let n_rois = self.roi_map.len();
        if n_rois == ds.n_rois() && self.slot_factor == 1 {
            return Ok(release.clone());
        }
        let mut members = vec![0usize; ds.n_rois()];
        for &r in &self.roi_map {
            members[r] += 1;
        }
        let f = self.slot_factor;
        let width = |coarse: usize| (self.source_slots.min((coarse + 1) * f) - coarse * f) as f64;
        let mut values = Vec::with_capacity(n_rois * self.source_slots);
        for &r in &self.roi_map {
            for t in 0..self.source_slots {
                values.push(release.get(r, t / f) / (members[r] as f64 * width(t / f)));
            }
        }
        Series::from_values(values, n_rois, self.source_slots, release.group_size())
    }

    /// Releases the defended aggregate of `members` (indices into the
    /// dataset) over all of its slots. All randomness is derived from `seed`.
    pub fn release(&self, members: &[usize], seed: u64) -> Result<Series> {
        let ds = self.dataset();
        check_members(ds, members)?;
        let plain = || sum_traces(members.iter().map(|&i| ds.trace(i)), ds.n_rois(), full(ds)).to_series();
        let noise = Noise::Seeded(noise_seed(seed));
        match self.config {
            DefenseConfig::Identity | DefenseConfig::Spg { .. } | DefenseConfig::Tg { .. } => Ok(plain()),
            DefenseConfig::Dgfr { x } => dgfr(&plain(), x),
            DefenseConfig::Dgar { x_prime } => dgar(&plain(), x_prime),
            DefenseConfig::Ssc { k } => ssc(&plain(), k),
            DefenseConfig::Slp { z } => slp(&plain(), z),
            DefenseConfig::Smp { w } => {
                let sampled = sampled_traces(ds, members, w, sample_seed(seed));
                Ok(sum_traces(&sampled, ds.n_rois(), full(ds)).to_series())
            }
            DefenseConfig::Psc { k, epsilon_prime } => psc(&plain(), k, epsilon_prime, noise),
            DefenseConfig::Fpa {
                l,
                epsilon,
                sensitivity_mode,
                budget,
            } => {
                let delta = fpa_sensitivity(sensitivity_mode, ds.traces(), ds.n_rois(), ds.n_slots());
                fpa(&plain(), l, epsilon, budget, &delta, noise)
            }
            DefenseConfig::Spsc { w, k, epsilon_prime } => {
                compose_sampling(ds, members, w, Perturbation::Psc { k, epsilon_prime }, seed)
            }
            DefenseConfig::Sfpa {
                w,
                l,
                epsilon,
                sensitivity_mode,
                budget,
            } => compose_sampling(
                ds,
                members,
                w,
                Perturbation::Fpa {
                    l,
                    epsilon,
                    sensitivity_mode,
                    budget,
                },
                seed,
            ),
        }
    }
}

fn full(ds: &Dataset) -> SlotRange {
    SlotRange::new(0, ds.n_slots())
}

fn check_members(ds: &Dataset, members: &[usize]) -> Result<()> {
    if members.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= ds.n_users()) {
        return Err(Error::UnknownUser(format!("index {bad}")));
    }
    Ok(())
}

fn sampled_traces(ds: &Dataset, members: &[usize], w: f64, seed: u64) -> Vec<TraceMatrix> {
    members
        .iter()
        .map(|&i| sample_trace(ds.trace(i), w, &mut derived_stream(seed, &[i as u64])))
        .collect()
}

/// Samples every trace with fraction `w`, aggregates the sampled traces of
/// `members` and perturbs the result. Empirical FPA sensitivity is taken over
/// the sampled traces of the whole population. With `w = 0` the output
/// equals the bare perturbation under the same seed.
pub fn compose_sampling(
    dataset: &Dataset,
    members: &[usize],
    w: f64,
    perturbation: Perturbation,
    seed: u64,
) -> Result<Series> {
    hiding::check_fraction(w)?;
    check_members(dataset, members)?;
    let everyone: Vec<usize> = (0..dataset.n_users()).collect();
    let sampled = sampled_traces(dataset, &everyone, w, sample_seed(seed));
    let series = sum_traces(members.iter().map(|&i| &sampled[i]), dataset.n_rois(), full(dataset)).to_series();
    let noise = Noise::Seeded(noise_seed(seed));
    match perturbation {
        Perturbation::Psc { k, epsilon_prime } => psc(&series, k, epsilon_prime, noise),
        Perturbation::Fpa {
            l,
            epsilon,
            sensitivity_mode,
            budget,
        } => {
            let delta = fpa_sensitivity(sensitivity_mode, &sampled, dataset.n_rois(), dataset.n_slots());
            fpa(&series, l, epsilon, budget, &delta, noise)
        }
    }
}
