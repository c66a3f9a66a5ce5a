//! Victim selection and the defense grid sweep.

use std::io::Write;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EvaluationConfig, GroupSpec, VictimSelection};
use crate::aggregate::{aggregate_indices, Series, SlotRange};
use crate::attack::{attack_target, GameConfig, PriorSpec};
use crate::data::{mobility_tertiles, Dataset};
use crate::defense::{prepare, DefenseConfig};
use crate::error::{Error, Result};
use crate::evaluation::{privacy_gain, utility_report, TradeoffRecord, UtilityLoss};
use crate::rng::{derive_seed, derived_stream, label_tag};

const TERTILES: [&str; 3] = ["high", "mid", "low"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Victim {
    pub index: usize,
    pub user_id: String,
    /// Mobility tertile, or empty when victims are listed explicitly.
    pub tertile: String,
}

/// Resolves the victim list, sorted by user id.
pub fn select_victims(dataset: &Dataset, selection: &VictimSelection, seed: u64) -> Result<Vec<Victim>> {
    let mut victims = match selection {
        VictimSelection::Ids(ids) => ids
            .iter()
            .map(|id| {
                Ok(Victim {
                    index: dataset.user_index(id)?,
                    user_id: id.clone(),
                    tertile: String::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?,
        VictimSelection::PerTertile(n) => {
            let tertiles = mobility_tertiles(dataset)?;
            let mut out = Vec::new();
            for (g, (users, name)) in tertiles.groups().into_iter().zip(TERTILES).enumerate() {
                if *n > users.len() {
                    return Err(Error::config(format!(
                        "{n} victims requested from the {name} tertile, which has {} users",
                        users.len()
                    )));
                }
                let mut rng = derived_stream(seed, &[label_tag("victims"), g as u64]);
                for i in index::sample(&mut rng, users.len(), *n) {
                    out.push(Victim {
                        index: dataset.user_index(&users[i])?,
                        user_id: users[i].clone(),
                        tertile: name.to_string(),
                    });
                }
            }
            out
        }
    };
    if victims.is_empty() {
        return Err(Error::config("at least one victim is required"));
    }
    victims.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    victims.dedup_by(|a, b| a.user_id == b.user_id);
    Ok(victims)
}

/// Draws `count` groups of `size` distinct users, each sorted.
pub fn random_groups(n_users: usize, size: usize, count: usize, seed: u64, label: &str) -> Result<Vec<Vec<usize>>> {
    if size == 0 || size > n_users {
        return Err(Error::config(format!("cannot draw groups of {size} from {n_users} users")));
    }
    Ok((0..count)
        .map(|g| {
            let mut rng = derived_stream(seed, &[label_tag(label), g as u64]);
            let mut members = index::sample(&mut rng, n_users, size).into_vec();
            members.sort_unstable();
            members
        })
        .collect())
}

pub fn resolve_group(dataset: &Dataset, spec: &GroupSpec, seed: u64) -> Result<Vec<usize>> {
    match spec {
        GroupSpec::Ids(ids) => ids.iter().map(|id| dataset.user_index(id)).collect(),
        GroupSpec::Random(size) => Ok(random_groups(dataset.n_users(), *size, 1, seed, "group")?.remove(0)),
    }
}

/// Defended attack outcome for one victim at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimOutcome {
    pub point: usize,
    pub user_id: String,
    pub tertile: String,
    pub auc_raw: f64,
    pub auc_defended: f64,
    pub privacy_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<TradeoffRecord>,
    /// Ordered by grid point, then victim id.
    pub outcomes: Vec<VictimOutcome>,
}

pub struct Sweep<'a> {
    pub dataset: &'a Dataset,
    pub victims: &'a [Victim],
    pub game: &'a GameConfig,
    pub prior: &'a PriorSpec,
    pub evaluation: &'a EvaluationConfig,
    pub seed: u64,
}

impl Sweep<'_> {
    /// Raw attack AUC for every victim.
    pub fn raw_aucs(&self) -> Result<Vec<f64>> {
        self.game.validate(self.dataset)?;
        self.victims
            .par_iter()
            .map(|v| Ok(attack_target(self.dataset, v.index, self.prior, self.game, None)?.result.auc))
            .collect()
    }

    /// Evaluates every grid point against every victim, reusing `raw_aucs`.
    pub fn run(&self, grid: &[DefenseConfig], raw_aucs: &[f64]) -> Result<SweepOutput> {
        if raw_aucs.len() != self.victims.len() {
            return Err(Error::shape(self.victims.len(), raw_aucs.len()));
        }
        let inference = self.dataset.window(self.game.inference.range())?;
        let groups = random_groups(
            inference.n_users(),
            self.game.m,
            self.evaluation.utility_groups.max(1),
            self.seed,
            "utility-groups",
        )?;
        let full = SlotRange::new(0, inference.n_slots());
        let raw_groups: Vec<Series> = groups
            .iter()
            .map(|g| Ok(aggregate_indices(&inference, g, full)?.to_series()))
            .collect::<Result<_>>()?;

        let mut records = Vec::with_capacity(grid.len());
        let mut outcomes = Vec::with_capacity(grid.len() * self.victims.len());
        for (p, defense) in grid.iter().enumerate() {
            let started = Instant::now();
            let mechanism = label_tag(defense.name());
            let aucs: Vec<f64> = self
                .victims
                .par_iter()
                .enumerate()
                .map(|(v, victim)| {
                    let seed = derive_seed(self.seed, &[mechanism, p as u64, v as u64]);
                    let attack = attack_target(self.dataset, victim.index, self.prior, self.game, Some((defense, seed)))?;
                    Ok(attack.result.auc)
                })
                .collect::<Result<_>>()?;
            let loss = self.utility(defense, p, &inference, &groups, &raw_groups)?;
            let gains: Vec<f64> = raw_aucs.iter().zip(&aucs).map(|(&r, &d)| privacy_gain(r, d)).collect();
            for (v, victim) in self.victims.iter().enumerate() {
                outcomes.push(VictimOutcome {
                    point: p,
                    user_id: victim.user_id.clone(),
                    tertile: victim.tertile.clone(),
                    auc_raw: raw_aucs[v],
                    auc_defended: aucs[v],
                    privacy_gain: gains[v],
                });
            }
            let record = TradeoffRecord::new(
                defense.clone(),
                self.victims.iter().map(|v| v.user_id.clone()).collect(),
                gains,
                loss,
            );
            log::info!(
                "point {p} {} [{}]: mean PG {:.3} in {:.2}s",
                record.mechanism,
                record.params,
                record.pg_mean,
                started.elapsed().as_secs_f64()
            );
            records.push(record);
        }
        Ok(SweepOutput { records, outcomes })
    }

    fn utility(
        &self,
        defense: &DefenseConfig,
        point: usize,
        inference: &Dataset,
        groups: &[Vec<usize>],
        raw: &[Series],
    ) -> Result<UtilityLoss> {
        let prepared = prepare(defense, inference)?;
        let settings = self.evaluation.settings();
        let losses = groups
            .par_iter()
            .zip(raw)
            .enumerate()
            .map(|(g, (members, raw))| {
                let seed = derive_seed(self.seed, &[label_tag("utility"), label_tag(defense.name()), point as u64, g as u64]);
                let release = prepared.release(members, seed)?;
                let defended = prepared.to_source_resolution(&release)?;
                Ok(utility_report(raw, &defended, &settings)?.loss)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(UtilityLoss::mean(&losses))
    }
}

pub fn write_outcomes_csv<W: Write>(writer: W, grid: &[DefenseConfig], outcomes: &[VictimOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "point",
        "mechanism",
        "params",
        "user_id",
        "tertile",
        "auc_raw",
        "auc_defended",
        "privacy_gain",
    ])?;
    for o in outcomes {
        let defense = &grid[o.point];
        w.write_record([
            o.point.to_string(),
            defense.name().to_string(),
            defense.params(),
            o.user_id.clone(),
            o.tertile.clone(),
            o.auc_raw.to_string(),
            o.auc_defended.to_string(),
            o.privacy_gain.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{LrParams, Standardization};
    use crate::data::{generate_synthetic, ArchetypeRates, PopulationMix, SynthConfig};

    fn dataset(n_users: usize) -> Dataset {
        let rates = |e: f64| ArchetypeRates {
            events_per_day: e,
            anchor_rois: 3,
            noise_probability: 0.2,
        };
        generate_synthetic(&SynthConfig {
            n_users,
            n_rois: 9,
            n_slots: 48,
            slot_seconds: 3600,
            time_origin: 0,
            mix: PopulationMix {
                commuter: 0.4,
                roamer: 0.3,
                sparse: 0.3,
            },
            commuter: rates(8.0),
            roamer: rates(14.0),
            sparse: rates(2.0),
            seed: 5,
        })
        .unwrap()
    }

    fn game() -> GameConfig {
        GameConfig {
            m: 5,
            observation: SlotRange::new(0, 24),
            inference: SlotRange::new(24, 48),
            n_samples: 40,
            train_fraction: 0.75,
            pca_variance_target: 0.95,
            pca_max_components: 20,
            standardization: Standardization::ZScore,
            lr: LrParams::default(),
            seed: 3,
        }
    }

    const EVAL: EvaluationConfig = EvaluationConfig {
        gamma: 1.0,
        mre_top_fraction: 0.1,
        hotspot_fraction: 0.2,
        utility_groups: 3,
    };

    #[test]
    fn tertile_victims_are_sorted_and_seeded() {
        let ds = dataset(30);
        let a = select_victims(&ds, &VictimSelection::PerTertile(2), 9).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.windows(2).all(|w| w[0].user_id < w[1].user_id));
        for t in TERTILES {
            assert_eq!(a.iter().filter(|v| v.tertile == t).count(), 2);
        }
        assert_eq!(a, select_victims(&ds, &VictimSelection::PerTertile(2), 9).unwrap());
        assert!(select_victims(&ds, &VictimSelection::PerTertile(11), 9).is_err());
        assert!(select_victims(&ds, &VictimSelection::Ids(vec![]), 9).is_err());
        assert!(select_victims(&ds, &VictimSelection::Ids(vec!["nobody".into()]), 9).is_err());
    }

    #[test]
    fn identity_point_has_zero_gain_and_loss() {
        let ds = dataset(30);
        let victims = select_victims(&ds, &VictimSelection::PerTertile(1), 2).unwrap();
        let sweep = Sweep {
            dataset: &ds,
            victims: &victims,
            game: &game(),
            prior: &PriorSpec::SubsetLocations { alpha: 1.0 },
            evaluation: &EVAL,
            seed: 2,
        };
        let raw = sweep.raw_aucs().unwrap();
        let grid = [DefenseConfig::Identity, DefenseConfig::Ssc { k: 1 }, DefenseConfig::Ssc { k: 6 }];
        let out = sweep.run(&grid, &raw).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.outcomes.len(), 9);
        for r in &out.records[..2] {
            assert!(r.privacy_gains.iter().all(|&g| g == 0.0));
            assert_eq!(r.loss.f1.value(), Some(0.0));
            assert_eq!(r.loss.mre.value(), Some(0.0));
        }
        assert!(out.records.iter().flat_map(|r| &r.privacy_gains).all(|g| (0.0..=1.0).contains(g)));
        assert_eq!(out, sweep.run(&grid, &raw).unwrap());
    }

    #[test]
    fn generalized_utility_is_measured_at_source_resolution() {
        let ds = dataset(20);
        let victims = select_victims(&ds, &VictimSelection::PerTertile(1), 2).unwrap();
        let sweep = Sweep {
            dataset: &ds,
            victims: &victims,
            game: &game(),
            prior: &PriorSpec::SubsetLocations { alpha: 1.0 },
            evaluation: &EVAL,
            seed: 2,
        };
        let raw = sweep.raw_aucs().unwrap();
        let grid = [DefenseConfig::Tg {
            coarse_slot_seconds: 4 * 3600,
        }];
        let out = sweep.run(&grid, &raw).unwrap();
        assert!(out.records[0].loss.mre.value().unwrap() > 0.0);
    }
}
