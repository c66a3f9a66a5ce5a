//! Experiment configuration: one JSON document per run.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::aggregate::SlotRange;
use crate::attack::{GameConfig, PriorSpec};
use crate::data::{generate_synthetic, ingest_events, read_events_csv, Dataset, Discretization, SynthConfig};
use crate::defense::{DefenseConfig, PartitionSpec};
use crate::error::{Error, Result};
use crate::evaluation::EvaluationSettings;

/// Where the population comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synth(SynthConfig),
    /// A dataset JSON document.
    Path(PathBuf),
    /// An event CSV discretized on load.
    Events { path: PathBuf, discretization: Discretization },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synth(cfg) => generate_synthetic(cfg),
            DatasetSource::Path(path) => Dataset::from_json_reader(BufReader::new(open(path)?)),
            DatasetSource::Events { path, discretization } => {
                let events = read_events_csv(BufReader::new(open(path)?))?;
                let (dataset, summary) = ingest_events(&events, discretization)?;
                log::info!(
                    "ingested {} events, kept {}, dropped {}",
                    summary.events,
                    summary.kept,
                    summary.dropped()
                );
                Ok(dataset)
            }
        }
    }
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimSelection {
    /// Drawn without replacement from each mobility tertile.
    PerTertile(usize),
    Ids(Vec<String>),
}

/// A single group of users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSpec {
    Ids(Vec<String>),
    /// Uniformly drawn users, seeded by the experiment seed.
    Random(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub gamma: f64,
    pub mre_top_fraction: f64,
    pub hotspot_fraction: f64,
    /// Random groups of size `m` averaged for each utility estimate.
    pub utility_groups: usize,
}

impl EvaluationConfig {
    pub fn settings(&self) -> EvaluationSettings {
        EvaluationSettings {
            gamma: self.gamma,
            mre_top_fraction: self.mre_top_fraction,
            hotspot_fraction: self.hotspot_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateJob {
    pub group: GroupSpec,
    pub window: SlotRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefendJob {
    pub group: GroupSpec,
    pub window: SlotRange,
    pub defense: DefenseConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityJob {
    /// Aggregate CSVs with identical ROI rows and slot columns.
    pub raw: PathBuf,
    pub defended: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    /// Weekday of slot 0, 0 = Monday.
    pub first_weekday: u8,
    /// Components per victim contributing to the loading heatmap.
    pub heatmap_components: usize,
}

/// Every section is optional; each subcommand checks for the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub game: Option<GameConfig>,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub victims: Option<VictimSelection>,
    /// Defense templates. Array-valued fields expand into a cartesian grid.
    #[serde(default)]
    pub defenses: Vec<Value>,
    #[serde(default)]
    pub evaluation: Option<EvaluationConfig>,
    #[serde(default)]
    pub aggregate: Option<AggregateJob>,
    #[serde(default)]
    pub defend: Option<DefendJob>,
    #[serde(default)]
    pub utility: Option<UtilityJob>,
    #[serde(default)]
    pub profile: Option<ProfileConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

pub(crate) fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::config(format!("missing `{name}` section")))
}

impl ExperimentConfig {
    /// Parses a config value and resolves relative paths against `base`.
    pub fn from_value(value: Value, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_value(value)?;
        cfg.resolve_paths(base);
        if let Some(game) = cfg.game.as_mut() {
            game.seed = cfg.seed;
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self.dataset.as_mut() {
            Some(DatasetSource::Path(p)) | Some(DatasetSource::Events { path: p, .. }) => join(p),
            _ => {}
        }
        if let Some(u) = self.utility.as_mut() {
            join(&mut u.raw);
            join(&mut u.defended);
        }
        if let Some(dir) = self.output_dir.as_mut() {
            join(dir);
        }
        if let Some(DefendJob {
            defense: DefenseConfig::Spg {
                partition: PartitionSpec::Csv { path },
            },
            ..
        }) = self.defend.as_mut()
        {
            *path = resolve_str(base, path);
        }
        for template in &mut self.defenses {
            if let Some(path) = template.pointer_mut("/partition/path") {
                if let Some(s) = path.as_str() {
                    *path = Value::String(resolve_str(base, s));
                }
            }
        }
    }

    /// The defense grid in canonical order.
    pub fn grid(&self) -> Result<Vec<DefenseConfig>> {
        let mut grid = Vec::new();
        for template in &self.defenses {
            for point in expand(template)? {
                let config: DefenseConfig = serde_json::from_value(point)?;
                config.validate()?;
                grid.push(config);
            }
        }
        if grid.is_empty() {
            return Err(Error::config("the defense grid is empty"));
        }
        Ok(grid)
    }
}

fn resolve_str(base: &Path, path: &str) -> String {
    let p = Path::new(path);
    if p.is_relative() {
        base.join(p).to_string_lossy().into_owned()
    } else {
        path.to_string()
    }
}

/// Expands array-valued top-level fields of a JSON object into the cartesian
/// product of their elements, the first key (in sorted order) varying slowest.
pub fn expand(template: &Value) -> Result<Vec<Value>> {
    let obj = template
        .as_object()
        .ok_or_else(|| Error::config("each defense entry must be a JSON object"))?;
    let mut points = vec![Map::new()];
    for (key, value) in obj {
        let choices = match value {
            Value::Array(items) if items.is_empty() => {
                return Err(Error::config(format!("sweep over `{key}` has no values")));
            }
            Value::Array(items) => items.clone(),
            other => vec![other.clone()],
        };
        points = points
            .into_iter()
            .flat_map(|p| {
                choices.iter().map(move |c| {
                    let mut next = p.clone();
                    next.insert(key.clone(), c.clone());
                    next
                })
            })
            .collect();
    }
    Ok(points.into_iter().map(Value::Object).collect())
}
