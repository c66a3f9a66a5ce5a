//! Experiment orchestration: configuration, seeded runs, sweeps and reports.
//!
//! Every subcommand reads one JSON config, writes its artifacts to an
//! output directory and finishes with `manifest.json`.

pub mod config;
pub mod sweep;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config::{
    expand, AggregateJob, DatasetSource, DefendJob, EvaluationConfig, ExperimentConfig, GroupSpec, ProfileConfig,
    UtilityJob, VictimSelection,
};
pub use sweep::{random_groups, resolve_group, select_victims, Sweep, SweepOutput, Victim, VictimOutcome};

use crate::aggregate::{aggregate_indices, Series, SlotRange};
use crate::attack::{attack_target, run_mia, write_results_csv, AttackResult};
use crate::data::{ingest_events, read_events_csv, Dataset};
use crate::defense::prepare;
use crate::error::{Error, Result};
use crate::evaluation::{random_baseline, utility_report, write_tradeoff_csv, UtilityReport};
use crate::profiling::{
    auc_deciles, compute_all_features, loading_heatmap, sort_by_popularity, susceptibility_coefficients,
    write_features_csv, Calendar, MobilityFeatures,
};
use crate::rng::{derive_seed, label_tag};
use config::{open, require};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Synth,
    Ingest,
    Aggregate,
    Attack,
    Defend,
    Utility,
    Tradeoff,
    Profile,
    Baseline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Aggregate => "aggregate",
            Command::Attack => "attack",
            Command::Defend => "defend",
            Command::Utility => "utility",
            Command::Tradeoff => "tradeoff",
            Command::Profile => "profile",
            Command::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Overrides the config's `output_dir`; defaults to the working directory.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; all available cores when unset.
    pub jobs: Option<usize>,
    /// Replaces the config's `seed`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Command,
    pub config_path: PathBuf,
    /// The config as run, after `--seed` substitution.
    pub config: Value,
    pub seed: u64,
    pub version: String,
    pub wall_time_seconds: f64,
    /// Artifact file names relative to the output directory.
    pub outputs: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Loads `config_path`, runs `command` and writes the manifest.
pub fn run(command: Command, config_path: &Path, options: &RunOptions) -> Result<Manifest> {
    let started = Instant::now();
    let mut value: Value = serde_json::from_reader(std::io::BufReader::new(open(config_path)?))?;
    if let Some(seed) = options.seed {
        match value.as_object_mut() {
            Some(obj) => {
                obj.insert("seed".into(), Value::from(seed));
            }
            None => return Err(Error::config("the config must be a JSON object")),
        }
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let config = ExperimentConfig::from_value(value.clone(), base)?;
    let out_dir = options
        .out_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = options.jobs {
        if jobs == 0 {
            return Err(Error::config("--jobs must be at least 1"));
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let out = Output { dir: &out_dir, files: Vec::new() };
    let files = pool.install(|| dispatch(command, &config, out))?;

    let manifest = Manifest {
        command,
        config_path: config_path.to_path_buf(),
        config: value,
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        outputs: files,
    };
    let mut w = BufWriter::new(File::create(out_dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.flush()?;
    log::info!("{} finished in {:.2}s", command.name(), manifest.wall_time_seconds);
    Ok(manifest)
}

struct Output<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Output<'_> {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

fn dispatch(command: Command, cfg: &ExperimentConfig, mut out: Output) -> Result<Vec<String>> {
    match command {
        Command::Synth => {
            let DatasetSource::Synth(_) = require(&cfg.dataset, "dataset")? else {
                return Err(Error::config("`synth` needs a `dataset.synth` section"));
            };
            let ds = load(cfg)?;
            out.write("dataset.json", |w| ds.to_json_writer(w))?;
        }
        Command::Ingest => {
            let DatasetSource::Events { path, discretization } = require(&cfg.dataset, "dataset")? else {
                return Err(Error::config("`ingest` needs a `dataset.events` section"));
            };
            let events = read_events_csv(std::io::BufReader::new(open(path)?))?;
            let (ds, summary) = ingest_events(&events, discretization)?;
            out.write("dataset.json", |w| ds.to_json_writer(w))?;
            out.json("ingest_summary.json", &summary)?;
        }
        Command::Aggregate => {
            let job = require(&cfg.aggregate, "aggregate")?;
            let ds = load(cfg)?;
            let members = resolve_group(&ds, &job.group, cfg.seed)?;
            let agg = aggregate_indices(&ds, &members, job.window)?;
            out.write("aggregate.csv", |w| agg.write_csv(w, ds.rois()))?;
        }
        Command::Attack => {
            let ds = load(cfg)?;
            let victims = victims(cfg, &ds)?;
            let ids: Vec<&str> = victims.iter().map(|v| v.user_id.as_str()).collect();
            let results = run_mia(&ds, &ids, require(&cfg.prior, "prior")?, require(&cfg.game, "game")?, None)?;
            out.write("attack_results.csv", |w| write_results_csv(w, &results))?;
        }
        Command::Defend => {
            let job = require(&cfg.defend, "defend")?;
            let ds = load(cfg)?;
            let members = resolve_group(&ds, &job.group, cfg.seed)?;
            let windowed = ds.window(job.window.range())?;
            let raw = aggregate_indices(&windowed, &members, SlotRange::new(0, windowed.n_slots()))?;
            let prepared = prepare(&job.defense, &windowed)?;
            let seed = derive_seed(cfg.seed, &[label_tag("defend"), label_tag(job.defense.name())]);
            let release = prepared.release(&members, seed)?;
            out.write("raw.csv", |w| raw.to_series().write_csv(w, ds.rois(), job.window.begin))?;
            let first_slot = job.window.begin * release.n_slots() / windowed.n_slots().max(1);
            out.write("defended.csv", |w| release.write_csv(w, prepared.dataset().rois(), first_slot))?;
            if release.n_rois() != windowed.n_rois() || release.n_slots() != windowed.n_slots() {
                let source = prepared.to_source_resolution(&release)?;
                out.write("defended_source.csv", |w| source.write_csv(w, ds.rois(), job.window.begin))?;
            }
        }
        Command::Utility => {
            let job = require(&cfg.utility, "utility")?;
            let settings = require(&cfg.evaluation, "evaluation")?.settings();
            let (raw_rois, raw) = Series::read_csv(std::io::BufReader::new(open(&job.raw)?))?;
            let (def_rois, defended) = Series::read_csv(std::io::BufReader::new(open(&job.defended)?))?;
            if raw_rois != def_rois {
                return Err(Error::config("raw and defended CSVs list different ROIs"));
            }
            let report = utility_report(&raw, &defended, &settings)?;
            out.json("utility.json", &report)?;
        }
        Command::Tradeoff => {
            let ds = load(cfg)?;
            let victims = victims(cfg, &ds)?;
            let grid = cfg.grid()?;
            let sweep = Sweep {
                dataset: &ds,
                victims: &victims,
                game: require(&cfg.game, "game")?,
                prior: require(&cfg.prior, "prior")?,
                evaluation: require(&cfg.evaluation, "evaluation")?,
                seed: cfg.seed,
            };
            let raw = sweep.raw_aucs()?;
            let result = sweep.run(&grid, &raw)?;
            out.write("tradeoff.csv", |w| write_tradeoff_csv(w, &result.records))?;
            out.write("victims.csv", |w| sweep::write_outcomes_csv(w, &grid, &result.outcomes))?;
            out.json("tradeoff.json", &result.records)?;
        }
        Command::Profile => profile(cfg, &mut out)?,
        Command::Baseline => {
            let ds = load(cfg)?;
            let game = require(&cfg.game, "game")?;
            let eval = require(&cfg.evaluation, "evaluation")?;
            let windowed = ds.window(game.inference.range())?;
            let groups = random_groups(windowed.n_users(), game.m, eval.utility_groups.max(1), cfg.seed, "baseline-groups")?;
            let full = SlotRange::new(0, windowed.n_slots());
            let reports = groups
                .iter()
                .enumerate()
                .map(|(g, members)| {
                    let raw = aggregate_indices(&windowed, members, full)?.to_series();
                    random_baseline(&raw, &eval.settings(), derive_seed(cfg.seed, &[label_tag("baseline"), g as u64]))
                })
                .collect::<Result<Vec<_>>>()?;
            out.write("baseline.csv", |w| write_baseline_csv(w, &reports))?;
        }
    }
    Ok(out.files)
}

fn load(cfg: &ExperimentConfig) -> Result<Dataset> {
    require(&cfg.dataset, "dataset")?.load()
}

fn victims(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<Victim>> {
    select_victims(ds, require(&cfg.victims, "victims")?, cfg.seed)
}

fn profile(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let settings = require(&cfg.profile, "profile")?;
    let game = require(&cfg.game, "game")?;
    let prior = require(&cfg.prior, "prior")?;
    let ds = load(cfg)?;
    let calendar = Calendar::weekly(ds.discretization(), settings.first_weekday)?;
    let features = compute_all_features(&ds, &calendar)?;
    let users: Vec<&str> = ds.user_ids().collect();
    out.write("features.csv", |w| write_features_csv(w, &users, &features))?;

    let victims = victims(cfg, &ds)?;
    game.validate(&ds)?;
    let attacks = victims
        .iter()
        .map(|v| attack_target(&ds, v.index, prior, game, None))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<_> = attacks.iter().map(|a| (&a.pca, &a.lr)).collect();
    let window = game.observation;
    let heatmap = loading_heatmap(&models, settings.heatmap_components, ds.n_rois(), window.len())?;
    let everyone: Vec<usize> = (0..ds.n_users()).collect();
    let popularity = aggregate_indices(&ds, &everyone, window)?.to_series();
    let sorted = sort_by_popularity(&heatmap, &popularity)?;
    out.write("heatmap.csv", |w| sorted.write_csv(w, ds.rois()))?;
    out.write("heatmap_order.json", |w| {
        w.write_all(sorted.permutation_json()?.as_bytes())?;
        Ok(())
    })?;

    let results: Vec<AttackResult> = attacks.into_iter().map(|a| a.result).collect();
    out.write("attack_results.csv", |w| write_results_csv(w, &results))?;
    if results.len() >= 20 {
        let (top, bottom) = auc_deciles(&results)?;
        let pick = |ids: &[String]| -> Result<Vec<MobilityFeatures>> {
            ids.iter().map(|id| Ok(features[ds.user_index(id)?].clone())).collect()
        };
        let coefficients = susceptibility_coefficients(&pick(&top)?, &pick(&bottom)?, &game.lr)?;
        out.json(
            "susceptibility.json",
            &serde_json::json!({
                "most_distinguishable": top,
                "least_distinguishable": bottom,
                "coefficients": coefficients.into_iter().map(|(k, v)| (k, Value::from(v))).collect::<serde_json::Map<_, _>>(),
            }),
        )?;
    } else {
        log::info!("susceptibility analysis skipped: needs at least 20 victims");
    }
    Ok(())
}

fn write_baseline_csv<W: Write>(writer: W, reports: &[UtilityReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "mre", "mre_top", "f1", "ppv", "tpr", "kendall_tau", "js_divergence", "pearson_r"])?;
    let row = |label: String, r: &UtilityReport| {
        vec![
            label,
            r.mre.to_string(),
            r.mre_top.to_string(),
            r.f1_hotspots.to_string(),
            r.ppv.to_string(),
            r.tpr.to_string(),
            r.kendall_tau.to_string(),
            r.js_divergence.to_string(),
            r.pearson_r.to_string(),
        ]
    };
    for (g, r) in reports.iter().enumerate() {
        w.write_record(row(g.to_string(), r))?;
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&UtilityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_metric = |f: fn(&UtilityReport) -> crate::evaluation::Metric| {
        crate::evaluation::Metric::mean(reports.iter().map(f)).to_string()
    };
    w.write_record([
        "mean".to_string(),
        avg(|r| r.mre).to_string(),
        avg(|r| r.mre_top).to_string(),
        avg(|r| r.f1_hotspots).to_string(),
        avg(|r| r.ppv).to_string(),
        avg(|r| r.tpr).to_string(),
        mean_metric(|r| r.kendall_tau),
        mean_metric(|r| r.js_divergence),
        mean_metric(|r| r.pearson_r),
    ])?;
    w.flush()?;
    Ok(())
}
