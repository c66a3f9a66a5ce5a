//! The distinguishability game: roster sampling, sample materialization and
//! the per-target attack pipeline.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auc, fit_lr, fit_pca, pca_transform, predict_scores, LrModel, LrParams, PcaModel, Standardization};
use crate::aggregate::SlotRange;
use crate::data::Dataset;
use crate::defense::{prepare, DefenseConfig};
use crate::error::{Error, Result};
use crate::rng::{ceil_fraction, derive_seed, derived_stream, floor_fraction, label_tag, StreamRng};

/// The adversary's side information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Raw traces of a fraction `alpha` of the population, target included.
    SubsetLocations { alpha: f64 },
    /// `beta` past aggregates whose groups are released again.
    SameGroups { beta: usize },
    /// `beta` past aggregates; the challenger releases fresh groups.
    DifferentGroups { beta: usize },
}

impl PriorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::SubsetLocations { .. } => "subset-locations",
            PriorSpec::SameGroups { .. } => "same-groups",
            PriorSpec::DifferentGroups { .. } => "different-groups",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            PriorSpec::SubsetLocations { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn beta(&self) -> Option<usize> {
        match *self {
            PriorSpec::SameGroups { beta } | PriorSpec::DifferentGroups { beta } => Some(beta),
            PriorSpec::SubsetLocations { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::SubsetLocations { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                Err(Error::config("alpha must lie in (0, 1]"))
            }
            PriorSpec::SameGroups { beta } | PriorSpec::DifferentGroups { beta } if beta < 2 => {
                Err(Error::config("beta must be at least 2 so both labels occur"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub m: usize,
    pub observation: SlotRange,
    pub inference: SlotRange,
    pub n_samples: usize,
    pub train_fraction: f64,
    pub pca_variance_target: f64,
    pub pca_max_components: usize,
    #[serde(default)]
    pub standardization: Standardization,
    pub lr: LrParams,
    /// Replaced by the experiment seed when run through the harness.
    #[serde(default)]
    pub seed: u64,
}

impl GameConfig {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.m < 2 || self.m >= dataset.n_users() {
            return Err(Error::config(format!(
                "group size {} must satisfy 2 <= m < {}",
                self.m,
                dataset.n_users()
            )));
        }
        dataset.check_window(&self.observation.range())?;
        dataset.check_window(&self.inference.range())?;
        if self.observation.len() != self.inference.len() {
            return Err(Error::config("observation and inference windows must have equal length"));
        }
        if self.n_samples < 4 || !self.n_samples.is_multiple_of(2) {
            return Err(Error::config("n_samples must be even and at least 4"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction must lie in (0, 1)"));
        }
        if !(self.pca_variance_target > 0.0 && self.pca_variance_target <= 1.0) {
            return Err(Error::config("pca_variance_target must lie in (0, 1]"));
        }
        if self.pca_max_components == 0 {
            return Err(Error::config("pca_max_components must be at least 1"));
        }
        Ok(())
    }
}

/// One group: dataset indices of its members, sorted, and whether the
/// target is among them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub members: Vec<usize>,
    pub contains_target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub window: SlotRange,
    pub rosters: Vec<Roster>,
}

/// Draws groups of size `m` from `pool` (which contains the target).
struct RosterSampler<'a> {
    others: Vec<usize>,
    target: usize,
    m: usize,
    rng: &'a mut StreamRng,
}

impl<'a> RosterSampler<'a> {
    fn new(pool: &[usize], target: usize, m: usize, rng: &'a mut StreamRng) -> Result<Self> {
        let others: Vec<usize> = pool.iter().copied().filter(|&u| u != target).collect();
        if others.len() < m {
            return Err(Error::PoolTooSmall {
                needed: m + 1,
                available: others.len() + 1,
            });
        }
        Ok(RosterSampler { others, target, m, rng })
    }

    fn draw(&mut self, contains_target: bool) -> Roster {
        let k = if contains_target { self.m - 1 } else { self.m };
        let mut members: Vec<usize> = index::sample(self.rng, self.others.len(), k)
            .into_iter()
            .map(|i| self.others[i])
            .collect();
        if contains_target {
            members.push(self.target);
        }
        members.sort_unstable();
        Roster {
            members,
            contains_target,
        }
    }

    /// Alternates labels starting with "in", so "in" gets the extra sample
    /// when `n` is odd.
    fn draw_balanced(&mut self, n: usize) -> Vec<Roster> {
        (0..n).map(|i| self.draw(i % 2 == 0)).collect()
    }

    /// `floor(n / 2)` "in" groups followed by "out" groups.
    fn draw_split(&mut self, n: usize) -> Vec<Roster> {
        let n_in = n / 2;
        (0..n).map(|i| self.draw(i < n_in)).collect()
    }
}

/// Train rosters (observed over the observation window) and test rosters
/// (released over the inference window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRosters {
    pub train: Vec<Roster>,
    pub test: Vec<Roster>,
}

/// Samples the rosters of one game. The stream is derived from
/// `(config.seed, target)`, so rosters do not depend on any defense.
pub fn draw_rosters(dataset: &Dataset, target: usize, prior: &PriorSpec, config: &GameConfig) -> Result<GameRosters> {
    prior.validate()?;
    config.validate(dataset)?;
    if target >= dataset.n_users() {
        return Err(Error::UnknownUser(format!("index {target}")));
    }
    let mut rng = derived_stream(config.seed, &[label_tag("rosters"), target as u64]);
    let everyone: Vec<usize> = (0..dataset.n_users()).collect();
    match *prior {
        PriorSpec::SubsetLocations { alpha } => {
            let n_known = ceil_fraction(alpha, dataset.n_users()).max(1);
            let others: Vec<usize> = everyone.iter().copied().filter(|&u| u != target).collect();
            let mut pool: Vec<usize> = index::sample(&mut rng, others.len(), n_known - 1)
                .into_iter()
                .map(|i| others[i])
                .collect();
            pool.push(target);
            pool.sort_unstable();
            let n_train = floor_fraction(config.train_fraction, config.n_samples);
            let n_test = config.n_samples - n_train;
            let train = RosterSampler::new(&pool, target, config.m, &mut rng)?.draw_balanced(n_train);
            let test = RosterSampler::new(&everyone, target, config.m, &mut rng)?.draw_balanced(n_test);
            Ok(GameRosters { train, test })
        }
        PriorSpec::SameGroups { beta } => {
            let train = RosterSampler::new(&everyone, target, config.m, &mut rng)?.draw_split(beta);
            Ok(GameRosters {
                test: train.clone(),
                train,
            })
        }
        PriorSpec::DifferentGroups { beta } => {
            let mut sampler = RosterSampler::new(&everyone, target, config.m, &mut rng)?;
            let train = sampler.draw_split(beta);
            let test = sampler.draw_split(beta);
            Ok(GameRosters { train, test })
        }
    }
}

/// Which half of the game a sample set belongs to. Defense noise is drawn
/// independently for each half.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Releases one aggregate per roster over `window`, through `defense` when
/// given. Sample `j` uses the defense seed `derive(defense_seed, [split,
/// window begin, j])`.
pub fn materialize(
    dataset: &Dataset,
    rosters: &[Roster],
    split: Split,
    window: SlotRange,
    defense: Option<(&DefenseConfig, u64)>,
) -> Result<SampleSet> {
    let windowed = dataset.window(window.range())?;
    let (config, defense_seed) = defense.unwrap_or((&DefenseConfig::Identity, 0));
    let prepared = prepare(config, &windowed)?;
    let features = rosters
        .iter()
        .enumerate()
        .map(|(j, roster)| {
            let seed = derive_seed(defense_seed, &[label_tag(split.name()), window.begin as u64, j as u64]);
            prepared.release(&roster.members, seed).map(|s| s.into_values())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        features,
        labels: rosters.iter().map(|r| r.contains_target).collect(),
        window,
        rosters: rosters.to_vec(),
    })
}

/// Builds undefended train (observation window) and test (inference window)
/// sample sets.
pub fn build_samples(
    dataset: &Dataset,
    target: usize,
    prior: &PriorSpec,
    config: &GameConfig,
) -> Result<(SampleSet, SampleSet)> {
    let rosters = draw_rosters(dataset, target, prior, config)?;
    Ok((
        materialize(dataset, &rosters.train, Split::Train, config.observation, None)?,
        materialize(dataset, &rosters.test, Split::Test, config.inference, None)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub target: String,
    pub auc: f64,
    pub privacy_loss: f64,
    pub prior: PriorSpec,
    pub config: GameConfig,
    pub seed: u64,
}

impl AttackResult {
    fn new(target: String, auc: f64, prior: PriorSpec, config: &GameConfig) -> Self {
        AttackResult {
            target,
            auc,
            privacy_loss: (auc - 0.5).max(0.0),
            prior,
            config: config.clone(),
            seed: config.seed,
        }
    }
}

/// Everything produced while attacking one target.
#[derive(Debug, Clone)]
pub struct TargetAttack {
    pub result: AttackResult,
    pub pca: PcaModel,
    pub lr: LrModel,
    pub rosters: GameRosters,
}

/// Runs the full pipeline for one target. When a defense is given, it is
/// applied to both the train and the test aggregates.
pub fn attack_target(
    dataset: &Dataset,
    target: usize,
    prior: &PriorSpec,
    config: &GameConfig,
    defense: Option<(&DefenseConfig, u64)>,
) -> Result<TargetAttack> {
    let rosters = draw_rosters(dataset, target, prior, config)?;
    let train = materialize(dataset, &rosters.train, Split::Train, config.observation, defense)?;
    let test = materialize(dataset, &rosters.test, Split::Test, config.inference, defense)?;
    let pca = fit_pca(
        &train.features,
        config.pca_variance_target,
        config.pca_max_components,
        config.standardization,
    )?;
    let lr = fit_lr(&pca_transform(&pca, &train.features)?, &train.labels, &config.lr)?;
    let scores = predict_scores(&lr, &pca_transform(&pca, &test.features)?)?;
    let value = auc(&scores, &test.labels)?;
    log::debug!("target {} auc {value:.4}", dataset.trace(target).user_id());
    Ok(TargetAttack {
        result: AttackResult::new(dataset.trace(target).user_id().to_string(), value, *prior, config),
        pca,
        lr,
        rosters,
    })
}

/// Attacks every target in parallel. Defense seeds are derived from
/// `(config.seed, mechanism, target index)`; results follow `targets` order.
pub fn run_mia<S: AsRef<str> + Sync>(
    dataset: &Dataset,
    targets: &[S],
    prior: &PriorSpec,
    config: &GameConfig,
    defense: Option<&DefenseConfig>,
) -> Result<Vec<AttackResult>> {
    let indices = targets
        .iter()
        .map(|t| dataset.user_index(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    indices
        .par_iter()
        .map(|&target| {
            let seeded = defense.map(|d| (d, derive_seed(config.seed, &[label_tag(d.name()), target as u64])));
            attack_target(dataset, target, prior, config, seeded).map(|a| a.result)
        })
        .collect()
}

/// Writes `target,prior,m,alpha,beta,auc,privacy_loss,seed`.
pub fn write_results_csv<W: Write>(writer: W, results: &[AttackResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["target", "prior", "m", "alpha", "beta", "auc", "privacy_loss", "seed"])?;
    for r in results {
        w.write_record([
            r.target.clone(),
            r.prior.name().to_string(),
            r.config.m.to_string(),
            r.prior.alpha().map_or_else(String::new, |a| a.to_string()),
            r.prior.beta().map_or_else(String::new, |b| b.to_string()),
            r.auc.to_string(),
            r.privacy_loss.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Discretization, TraceMatrix};
    use rand::Rng;
    use std::collections::BTreeSet;

    fn dataset(n_users: usize, n_rois: usize, n_slots: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::stream(seed);
        let traces = (0..n_users)
            .map(|u| {
                let pairs: Vec<(usize, usize)> = (0..n_slots)
                    .map(|_| (rng.gen_range(1..n_rois), rng.gen_range(0..n_slots)))
                    .collect();
                TraceMatrix::from_pairs(format!("u{u:03}"), n_rois, n_slots, pairs).unwrap()
            })
            .collect();
        let rois = std::iter::once("null".to_string()).chain((1..n_rois).map(|r| format!("r{r}"))).collect();
        Dataset::new(rois, Discretization::hourly(n_slots), traces).unwrap()
    }

    fn config(m: usize, n_slots: usize, n_samples: usize) -> GameConfig {
        GameConfig {
            m,
            observation: SlotRange::new(0, n_slots / 2),
            inference: SlotRange::new(n_slots / 2, n_slots),
            n_samples,
            train_fraction: 0.8,
            pca_variance_target: 0.99,
            pca_max_components: 50,
            standardization: Standardization::ZScore,
            lr: LrParams::default(),
            seed: 3,
        }
    }

    #[test]
    fn three_user_rosters_cover_both_in_groups() {
        let ds = dataset(3, 4, 8, 1);
        let cfg = config(2, 8, 40);
        let rosters = draw_rosters(&ds, 0, &PriorSpec::SubsetLocations { alpha: 1.0 }, &cfg).unwrap();
        let seen: BTreeSet<Vec<usize>> = rosters
            .train
            .iter()
            .chain(&rosters.test)
            .filter(|r| r.contains_target)
            .map(|r| r.members.clone())
            .collect();
        let expected: BTreeSet<Vec<usize>> = [vec![0, 1], vec![0, 2]].into_iter().collect();
        assert_eq!(seen, expected);
        for r in rosters.train.iter().chain(&rosters.test).filter(|r| !r.contains_target) {
            assert_eq!(r.members, vec![1, 2]);
        }
    }

    #[test]
    fn labels_are_balanced_and_honor_rosters() {
        let ds = dataset(30, 5, 12, 2);
        let cfg = config(5, 12, 30);
        for prior in [
            PriorSpec::SubsetLocations { alpha: 0.5 },
            PriorSpec::SameGroups { beta: 8 },
            PriorSpec::DifferentGroups { beta: 9 },
        ] {
            let (train, test) = build_samples(&ds, 4, &prior, &cfg).unwrap();
            for set in [&train, &test] {
                let n_in = set.labels.iter().filter(|&&l| l).count() as i64;
                let n_out = set.labels.len() as i64 - n_in;
                assert!((n_in - n_out).abs() <= 1, "{prior:?}");
                for (roster, &label) in set.rosters.iter().zip(&set.labels) {
                    assert_eq!(roster.members.contains(&4), label);
                    assert_eq!(roster.members.len(), 5);
                    assert_eq!(roster.members.iter().collect::<BTreeSet<_>>().len(), 5);
                }
                assert_eq!(set.features[0].len(), 5 * 6);
            }
        }
    }

    #[test]
    fn subset_prior_splits_samples() {
        let ds = dataset(30, 5, 12, 2);
        let cfg = config(5, 12, 30);
        let (train, test) = build_samples(&ds, 0, &PriorSpec::SubsetLocations { alpha: 0.4 }, &cfg).unwrap();
        assert_eq!(train.labels.len(), 24);
        assert_eq!(test.labels.len(), 6);
        let pool: BTreeSet<usize> = train.rosters.iter().flat_map(|r| r.members.iter().copied()).collect();
        assert!(pool.len() <= 12);
        assert_eq!(train.labels.iter().filter(|&&l| l).count(), 12);
    }

    #[test]
    fn same_groups_reuse_rosters() {
        let ds = dataset(20, 4, 10, 3);
        let cfg = config(4, 10, 20);
        let (train, test) = build_samples(&ds, 2, &PriorSpec::SameGroups { beta: 4 }, &cfg).unwrap();
        assert_eq!(train.rosters, test.rosters);
        assert_eq!(train.window, cfg.observation);
        assert_eq!(test.window, cfg.inference);
        let (a, b) = build_samples(&ds, 2, &PriorSpec::DifferentGroups { beta: 4 }, &cfg).unwrap();
        assert_ne!(a.rosters, b.rosters);
    }

    #[test]
    fn samples_are_group_aggregates() {
        let ds = dataset(20, 4, 10, 4);
        let cfg = config(4, 10, 20);
        let (train, _) = build_samples(&ds, 1, &PriorSpec::SameGroups { beta: 6 }, &cfg).unwrap();
        for (roster, features) in train.rosters.iter().zip(&train.features) {
            let expected = crate::aggregate::aggregate_indices(&ds, &roster.members, cfg.observation).unwrap();
            assert_eq!(features, expected.to_series().values());
        }
    }

    #[test]
    fn small_pool_is_rejected() {
        let ds = dataset(30, 4, 10, 5);
        let cfg = config(5, 10, 20);
        let err = draw_rosters(&ds, 0, &PriorSpec::SubsetLocations { alpha: 0.1 }, &cfg).unwrap_err();
        assert!(matches!(err, Error::PoolTooSmall { .. }));
    }

    #[test]
    fn config_validation() {
        let ds = dataset(10, 4, 10, 6);
        let mut cfg = config(10, 10, 20);
        assert!(cfg.validate(&ds).is_err());
        cfg.m = 3;
        cfg.n_samples = 21;
        assert!(cfg.validate(&ds).is_err());
        cfg.n_samples = 20;
        cfg.inference = SlotRange::new(4, 10);
        assert!(cfg.validate(&ds).is_err());
        assert!(PriorSpec::SameGroups { beta: 1 }.validate().is_err());
        assert!(PriorSpec::SubsetLocations { alpha: 0.0 }.validate().is_err());
    }

    #[test]
    fn identity_defense_matches_no_defense_and_is_deterministic() {
        let ds = dataset(40, 6, 24, 7);
        let cfg = config(5, 24, 60);
        let prior = PriorSpec::SubsetLocations { alpha: 0.6 };
        let targets = ["u001", "u017"];
        let plain = run_mia(&ds, &targets, &prior, &cfg, None).unwrap();
        let identity = run_mia(&ds, &targets, &prior, &cfg, Some(&DefenseConfig::Identity)).unwrap();
        assert_eq!(plain, identity);
        assert_eq!(plain, run_mia(&ds, &targets, &prior, &cfg, None).unwrap());
        for r in &plain {
            assert!((0.0..=1.0).contains(&r.auc));
            assert_eq!(r.privacy_loss, (r.auc - 0.5).max(0.0));
        }
    }

    #[test]
    fn results_csv_layout() {
        let ds = dataset(20, 4, 10, 8);
        let cfg = config(4, 10, 20);
        let results = run_mia(&ds, &["u003"], &PriorSpec::SameGroups { beta: 10 }, &cfg, None).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &results).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "target,prior,m,alpha,beta,auc,privacy_loss,seed");
        assert!(lines.next().unwrap().starts_with("u003,same-groups,4,,10,"));
    }
}
