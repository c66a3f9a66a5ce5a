//! Privacy gain, utility metrics and trade-off records.
//!
//! Utility metrics compare a raw aggregate `Y` with a defended release `Y'`
//! of the same shape. They are computed over the non-null ROI rows; the null
//! row only records absence and carries no analytics signal.

use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::aggregate::Series;
use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::rng::{ceil_fraction, stream};

/// Relative AUC drop towards the random guess.
pub fn privacy_gain(auc_raw: f64, auc_defended: f64) -> f64 {
    if auc_raw > auc_defended && auc_defended >= 0.5 {
        ((auc_raw - auc_defended) / (auc_raw - 0.5)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// A metric value that may be undefined (zero denominators, all-tied
/// rankings, nothing to evaluate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Defined(f64),
    Undefined,
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Defined(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Metric::Defined(_))
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> Metric {
        match self {
            Metric::Defined(v) => Metric::Defined(f(v)),
            Metric::Undefined => Metric::Undefined,
        }
    }

    /// Mean of the defined values; undefined when none is defined.
    pub fn mean<I: IntoIterator<Item = Metric>>(values: I) -> Metric {
        let (sum, n) = values
            .into_iter()
            .filter_map(Metric::value)
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            Metric::Undefined
        } else {
            Metric::Defined(sum / n as f64)
        }
    }
}

impl From<f64> for Metric {
    fn from(v: f64) -> Self {
        Metric::Defined(v)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Defined(v) => write!(f, "{v}"),
            Metric::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Defined(v) => serializer.serialize_f64(*v),
            Metric::Undefined => serializer.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Ok(Metric::Defined(v)),
            Repr::Text(s) if s == "undefined" => Ok(Metric::Undefined),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("unexpected metric `{s}`"))),
        }
    }
}

fn non_null_rows(raw: &Series, defended: &Series) -> Result<std::ops::Range<usize>> {
    raw.same_shape(defended)?;
    if raw.n_rois() < 2 {
        return Err(Error::config("utility metrics need at least one non-null ROI"));
    }
    Ok(1..raw.n_rois())
}

/// Non-null rows ordered by descending `key`, ties by ascending index.
fn ranked_rows(rows: std::ops::Range<usize>, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = rows.collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    order
}

/// Mean relative error with sanity bound `gamma`. With `top_fraction`, only
/// the `ceil(f * n)` non-null ROIs with the largest raw totals are used.
pub fn mre(raw: &Series, defended: &Series, gamma: f64, top_fraction: Option<f64>) -> Result<f64> {
    let rows = non_null_rows(raw, defended)?;
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::config("gamma must be positive"));
    }
    let selected: Vec<usize> = match top_fraction {
        None => rows.collect(),
        Some(f) => {
            check_fraction(f)?;
            let n = ceil_fraction(f, rows.len()).max(1);
            let mut top = ranked_rows(rows, |r| raw.row(r).iter().sum());
            top.truncate(n);
            top
        }
    };
    let mut sum = 0.0;
    for &r in &selected {
        for (y, y2) in raw.row(r).iter().zip(defended.row(r)) {
            sum += (y2 - y).abs() / gamma.max(*y);
        }
    }
    Ok(sum / (selected.len() * raw.n_slots()) as f64)
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::config("top fraction must lie in (0, 1]"))
    }
}

/// Top `ceil(f * n)` non-null ROIs of one slot.
fn hotspots(series: &Series, slot: usize, f: f64) -> Vec<usize> {
    let rows = 1..series.n_rois();
    let n = ceil_fraction(f, rows.len()).max(1);
    let mut top = ranked_rows(rows, |r| series.get(r, slot));
    top.truncate(n);
    top
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotspotScore {
    pub f1: f64,
    pub ppv: f64,
    pub tpr: f64,
}

/// Hotspot prediction accuracy with true/false positives and false
/// negatives pooled over all slots.
pub fn f1_hotspots(raw: &Series, defended: &Series, top_fraction: f64) -> Result<HotspotScore> {
    non_null_rows(raw, defended)?;
    check_fraction(top_fraction)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for t in 0..raw.n_slots() {
        let truth = hotspots(raw, t, top_fraction);
        let guess = hotspots(defended, t, top_fraction);
        let hits = guess.iter().filter(|r| truth.contains(r)).count();
        tp += hits;
        fp += guess.len() - hits;
        fn_ += truth.len() - hits;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(HotspotScore {
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        ppv: ratio(tp, tp + fp),
        tpr: ratio(tp, tp + fn_),
    })
}

fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Sorts `v` and returns the number of strict inversions removed.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall rank correlation with tie corrections: pairs tied in only one
/// ranking enter that ranking's denominator term, pairs tied in both are
/// ignored. Runs in `O(n log n)`.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<Metric> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::config("rankings must not contain NaN"));
    }
    let n = a.len() as u64;
    // Adding 0.0 folds -0.0 into 0.0 so the total order agrees with `==`.
    let mut pairs: Vec<(f64, f64)> = a.iter().zip(b).map(|(x, y)| (x + 0.0, y + 0.0)).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let ties_a = tied_pairs(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let ties_both = tied_pairs(&pairs);
    let mut bs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(bs.len());
    let discordant = merge_count(&mut bs, &mut buf);
    let ties_b = tied_pairs(&bs);

    let total = n * (n - 1) / 2;
    let untied = total + ties_both - ties_a - ties_b;
    let concordant = untied - discordant;
    let only_a = ties_a - ties_both;
    let only_b = ties_b - ties_both;
    let denom = ((untied + only_a) as f64) * ((untied + only_b) as f64);
    if denom == 0.0 {
        return Ok(Metric::Undefined);
    }
    Ok(Metric::Defined((concordant as f64 - discordant as f64) / denom.sqrt()))
}

/// Per-slot Kendall tau between raw and defended counts over the raw
/// hotspot set, averaged over the slots where it is defined.
pub fn hotspot_tau(raw: &Series, defended: &Series, top_fraction: f64) -> Result<Metric> {
    non_null_rows(raw, defended)?;
    check_fraction(top_fraction)?;
    let mut per_slot = Vec::with_capacity(raw.n_slots());
    for t in 0..raw.n_slots() {
        let hot = hotspots(raw, t, top_fraction);
        if hot.len() < 2 {
            continue;
        }
        let a: Vec<f64> = hot.iter().map(|&r| raw.get(r, t)).collect();
        let b: Vec<f64> = hot.iter().map(|&r| defended.get(r, t)).collect();
        per_slot.push(kendall_tau(&a, &b)?);
    }
    Ok(Metric::mean(per_slot))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsDivergence {
    pub value: f64,
    pub evaluated_slots: usize,
    pub skipped_slots: usize,
}

fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (2.0 * pi / (pi + qi)).log2())
        .sum()
}

/// Mean per-slot Jensen-Shannon divergence (base 2) between the normalized
/// non-null columns. Negative defended values are treated as zero; slots
/// where either column has no mass are skipped.
pub fn js_divergence(raw: &Series, defended: &Series) -> Result<JsDivergence> {
    let rows = non_null_rows(raw, defended)?;
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut p = Vec::with_capacity(rows.len());
    let mut q = Vec::with_capacity(rows.len());
    for t in 0..raw.n_slots() {
        p.clear();
        q.clear();
        p.extend(rows.clone().map(|r| raw.get(r, t).max(0.0)));
        q.extend(rows.clone().map(|r| defended.get(r, t).max(0.0)));
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        if !(sp > 0.0 && sq > 0.0) {
            continue;
        }
        p.iter_mut().for_each(|v| *v /= sp);
        q.iter_mut().for_each(|v| *v /= sq);
        total += (0.5 * kl_to_mixture(&p, &q) + 0.5 * kl_to_mixture(&q, &p)).clamp(0.0, 1.0);
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::NoEvaluableSlots);
    }
    Ok(JsDivergence {
        value: total / evaluated as f64,
        evaluated_slots: evaluated,
        skipped_slots: raw.n_slots() - evaluated,
    })
}

/// Pearson correlation over the flattened non-null cells.
pub fn pearson_r(raw: &Series, defended: &Series) -> Result<Metric> {
    non_null_rows(raw, defended)?;
    let skip = raw.n_slots();
    let x = &raw.values()[skip..];
    let y = &defended.values()[skip..];
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Metric::Undefined);
    }
    Ok(Metric::Defined((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    pub gamma: f64,
    pub mre_top_fraction: f64,
    pub hotspot_fraction: f64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            gamma: 1.0,
            mre_top_fraction: 0.1,
            hotspot_fraction: 0.1,
        }
    }
}

/// Losses relative to the raw release, each in `[0, 1]` except MRE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityLoss {
    pub mre: Metric,
    pub mre_top: Metric,
    pub f1: Metric,
    pub tau: Metric,
    pub js: Metric,
    pub r: Metric,
}

impl UtilityLoss {
    /// Per-metric mean over several reports, ignoring undefined entries.
    pub fn mean(losses: &[UtilityLoss]) -> UtilityLoss {
        let pick = |f: fn(&UtilityLoss) -> Metric| Metric::mean(losses.iter().map(f));
        UtilityLoss {
            mre: pick(|l| l.mre),
            mre_top: pick(|l| l.mre_top),
            f1: pick(|l| l.f1),
            tau: pick(|l| l.tau),
            js: pick(|l| l.js),
            r: pick(|l| l.r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub mre: f64,
    pub mre_top: f64,
    pub mre_top_fraction: f64,
    pub f1_hotspots: f64,
    pub ppv: f64,
    pub tpr: f64,
    pub kendall_tau: Metric,
    pub js_divergence: Metric,
    pub js_skipped_slots: usize,
    pub pearson_r: Metric,
    pub loss: UtilityLoss,
}

pub fn utility_report(raw: &Series, defended: &Series, settings: &EvaluationSettings) -> Result<UtilityReport> {
    let hot = f1_hotspots(raw, defended, settings.hotspot_fraction)?;
    let (js, skipped) = match js_divergence(raw, defended) {
        Ok(js) => (Metric::Defined(js.value), js.skipped_slots),
        Err(Error::NoEvaluableSlots) => (Metric::Undefined, raw.n_slots()),
        Err(e) => return Err(e),
    };
    let mut report = UtilityReport {
        mre: mre(raw, defended, settings.gamma, None)?,
        mre_top: mre(raw, defended, settings.gamma, Some(settings.mre_top_fraction))?,
        mre_top_fraction: settings.mre_top_fraction,
        f1_hotspots: hot.f1,
        ppv: hot.ppv,
        tpr: hot.tpr,
        kendall_tau: hotspot_tau(raw, defended, settings.hotspot_fraction)?,
        js_divergence: js,
        js_skipped_slots: skipped,
        pearson_r: pearson_r(raw, defended)?,
        loss: UtilityLoss {
            mre: Metric::Undefined,
            mre_top: Metric::Undefined,
            f1: Metric::Undefined,
            tau: Metric::Undefined,
            js: Metric::Undefined,
            r: Metric::Undefined,
        },
    };
    report.loss = utility_loss(&report);
    Ok(report)
}

/// Maps each metric to a loss against the raw baseline (MRE 0, F1 1, tau 1,
/// JS 0, r 1).
pub fn utility_loss(report: &UtilityReport) -> UtilityLoss {
    UtilityLoss {
        mre: Metric::Defined(report.mre),
        mre_top: Metric::Defined(report.mre_top),
        f1: Metric::Defined(1.0 - report.f1_hotspots),
        tau: report.kendall_tau.map(|t| (1.0 - t) / 2.0),
        js: report.js_divergence,
        r: report.pearson_r.map(|r| (1.0 - r) / 2.0),
    }
}

/// Utility of a release that keeps each slot's non-null total but scatters
/// it uniformly at random over the non-null ROIs.
pub fn random_baseline(raw: &Series, settings: &EvaluationSettings, seed: u64) -> Result<UtilityReport> {
    if raw.n_rois() < 2 {
        return Err(Error::config("utility metrics need at least one non-null ROI"));
    }
    let mut rng = stream(seed);
    let mut guess = raw.clone();
    let n_rois = raw.n_rois();
    for t in 0..raw.n_slots() {
        let total: f64 = (1..n_rois).map(|r| raw.get(r, t)).sum();
        let mut counts = vec![0u64; n_rois - 1];
        for _ in 0..total.max(0.0).round() as u64 {
            counts[rng.gen_range(0..n_rois - 1)] += 1;
        }
        for (i, c) in counts.into_iter().enumerate() {
            guess.row_mut(i + 1)[t] = c as f64;
        }
    }
    utility_report(raw, &guess, settings)
}

/// Linear-interpolation quartiles `(q1, median, q3)`.
pub fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some((q(0.25), q(0.5), q(0.75)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRecord {
    pub mechanism: String,
    pub params: String,
    pub defense: DefenseConfig,
    /// Privacy gain per victim, in victim order.
    pub victims: Vec<String>,
    pub privacy_gains: Vec<f64>,
    pub pg_mean: f64,
    pub pg_q1: f64,
    pub pg_median: f64,
    pub pg_q3: f64,
    pub loss: UtilityLoss,
}

impl TradeoffRecord {
    pub fn new(defense: DefenseConfig, victims: Vec<String>, privacy_gains: Vec<f64>, loss: UtilityLoss) -> Self {
        let (q1, med, q3) = quartiles(&privacy_gains).unwrap_or((0.0, 0.0, 0.0));
        let mean = if privacy_gains.is_empty() {
            0.0
        } else {
            privacy_gains.iter().sum::<f64>() / privacy_gains.len() as f64
        };
        TradeoffRecord {
            mechanism: defense.name().to_string(),
            params: defense.params(),
            defense,
            victims,
            privacy_gains,
            pg_mean: mean,
            pg_q1: q1,
            pg_median: med,
            pg_q3: q3,
            loss,
        }
    }
}

/// Writes `mechanism,params,pg_mean,pg_q1,pg_median,pg_q3,loss_mre,
/// loss_mre_top,loss_f1,loss_tau,loss_js,loss_r`.
pub fn write_tradeoff_csv<W: Write>(writer: W, records: &[TradeoffRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "mechanism",
        "params",
        "pg_mean",
        "pg_q1",
        "pg_median",
        "pg_q3",
        "loss_mre",
        "loss_mre_top",
        "loss_f1",
        "loss_tau",
        "loss_js",
        "loss_r",
    ])?;
    for r in records {
        w.write_record([
            r.mechanism.clone(),
            r.params.clone(),
            r.pg_mean.to_string(),
            r.pg_q1.to_string(),
            r.pg_median.to_string(),
            r.pg_q3.to_string(),
            r.loss.mre.to_string(),
            r.loss.mre_top.to_string(),
            r.loss.f1.to_string(),
            r.loss.tau.to_string(),
            r.loss.js.to_string(),
            r.loss.r.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
