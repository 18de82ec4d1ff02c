//! Precision/recall evaluation of surprise detection and serendipity
//! recommendation, random baselines, and leave-one-out tuning.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind, UserRun};
use crate::neighbors::{find_serendipity, query_top_n, select_serendipitous, SnapshotIndex};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn metrics(&self) -> Metrics {
        metrics_from_counts(*self)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision == recall {
            precision
        } else if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f1,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 with `0/0 = 0`.
pub fn metrics_from_counts(c: ConfusionCounts) -> Metrics {
    Metrics::from_pr(ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

/// Thresholds the user's own surprise at `tau_s` against the manual labels of
/// every annotated position after the burn-in.
pub fn surprise_detection_counts(
    run: &UserRun,
    labels: &BTreeMap<usize, bool>,
    tau_s: f64,
    burn_in: usize,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for (&position, &surprising) in labels.range(burn_in + 1..) {
        let record = run.at(position).ok_or_else(|| Error::InvalidAnnotation {
            user: run.user_id.clone(),
            position,
            reason: format!("run has only {} steps", run.steps.len()),
        })?;
        counts.record(record.surprise > tau_s, surprising);
    }
    Ok(counts)
}

pub fn eval_surprise_detection(
    run: &UserRun,
    labels: &BTreeMap<usize, bool>,
    tau_s: f64,
    burn_in: usize,
) -> Result<Metrics> {
    surprise_detection_counts(run, labels, tau_s, burn_in).map(metrics_from_counts)
}

/// Steps `i >= burn_in` whose successor `i + 1` is annotated.
fn reference_steps<'a>(
    run: &'a UserRun,
    labels: &'a BTreeMap<usize, bool>,
    burn_in: usize,
) -> impl Iterator<Item = usize> + 'a {
    (burn_in.max(1)..run.steps.len()).filter(move |i| labels.contains_key(&(i + 1)))
}

/// Ground truth for recommending at step `i`: item `i + 1` was labeled
/// surprising and rated positively.
fn serendipity_truth(run: &UserRun, labels: &BTreeMap<usize, bool>, i: usize) -> bool {
    labels.get(&(i + 1)).copied().unwrap_or(false) && run.steps[i].centered_rating > 0.0
}

/// Serendipity recommendation counts for one reference user.
///
/// `reference` is the user's run under the similarity model: its preferences
/// are the queries and its ratings give the ground truth. Steps where the
/// search comes back empty contribute to no counter.
#[allow(clippy::too_many_arguments)]
pub fn eval_serendipity(
    user_id: &str,
    reference: &UserRun,
    index: &SnapshotIndex,
    tau_s: f64,
    tau_d: f64,
    n: usize,
    labels: &BTreeMap<usize, bool>,
    burn_in: usize,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for i in reference_steps(reference, labels, burn_in) {
        let query = reference.steps[i - 1].preference.as_slice();
        if let Some((found, _)) = find_serendipity(index, user_id, query, tau_d, n)? {
            counts.record(found.next_surprise > tau_s, serendipity_truth(reference, labels, i));
        }
    }
    Ok(counts)
}

/// (step i, truth for i + 1, neighbors as (entry, distance))
type CachedStep = (usize, bool, Vec<(usize, f64)>);

/// Neighbor lists of one reference user, computed once for the largest `N`
/// of a grid. Prefixes of an exact top-`N_max` list are exact top-`N` lists,
/// so thresholds and `N` can be swept without rescanning.
#[derive(Clone, Debug)]
pub struct NeighborCache {
    user_id: String,
    max_n: usize,
    steps: Vec<CachedStep>,
}

impl NeighborCache {
    pub fn build(
        user_id: &str,
        reference: &UserRun,
        index: &SnapshotIndex,
        max_n: usize,
        labels: &BTreeMap<usize, bool>,
        burn_in: usize,
    ) -> Result<Self> {
        let steps = reference_steps(reference, labels, burn_in)
            .map(|i| {
                let query = reference.steps[i - 1].preference.as_slice();
                let neighbors = query_top_n(index, query, max_n, Some(user_id))?
                    .into_iter()
                    .map(|(s, d)| (s.entry, d))
                    .collect();
                Ok((i, serendipity_truth(reference, labels, i), neighbors))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            user_id: user_id.to_string(),
            max_n,
            steps,
        })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    /// All neighbor distances seen, for threshold sweeps.
    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().flat_map(|(_, _, n)| n.iter().map(|(_, d)| *d))
    }

    pub fn counts(&self, index: &SnapshotIndex, tau_s: f64, tau_d: f64, n: usize) -> Result<ConfusionCounts> {
        Ok(tally(&self.select(index, None, tau_d, n)?, tau_s))
    }

    /// Runs the filter-and-argmax of every step for one `(tau_d, n)`. With
    /// `surprise` set, `next_surprise` is read from `surprise[entry]` instead
    /// of the index, so one similarity index can serve several surprise
    /// models. The result is independent of `tau_s`; see [`tally`].
    pub fn select(
        &self,
        index: &SnapshotIndex,
        surprise: Option<&[f64]>,
        tau_d: f64,
        n: usize,
    ) -> Result<Vec<Selection>> {
        if let Some(column) = surprise {
            if column.len() != index.len() {
                return Err(Error::DimensionMismatch {
                    expected: index.len(),
                    found: column.len(),
                });
            }
        }
        if n > self.max_n {
            return Err(Error::InvalidConfig(format!(
                "neighbor cache holds {} neighbors, {n} requested",
                self.max_n
            )));
        }
        Ok(self
            .steps
            .iter()
            .map(|(_, truth, neighbors)| {
                let candidates = neighbors.iter().take(n).map(|&(e, d)| {
                    let mut snapshot = index.get(e);
                    if let Some(column) = surprise {
                        snapshot.next_surprise = column[e];
                    }
                    (snapshot, d)
                });
                Selection {
                    truth: *truth,
                    next_surprise: select_serendipitous(candidates, tau_d).map(|(s, _)| s.next_surprise),
                }
            })
            .collect())
    }
}

/// Outcome of the neighbor search at one reference step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub truth: bool,
    /// Surprise of the selected neighbor's next item; `None` when the search
    /// came back empty.
    pub next_surprise: Option<f64>,
}

/// Counts for one `tau_s`; empty searches contribute to no counter.
pub fn tally(selections: &[Selection], tau_s: f64) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for s in selections {
        if let Some(surprise) = s.next_surprise {
            counts.record(surprise > tau_s, s.truth);
        }
    }
    counts
}

/// Next-item surprise under `surprise_runs` for every entry of `index`, in
/// entry order. Pass it to [`NeighborCache::select`].
pub fn surprise_column(index: &SnapshotIndex, surprise_runs: &[UserRun]) -> Result<Vec<f64>> {
    let runs: BTreeMap<&str, &UserRun> = surprise_runs.iter().map(|r| (r.user_id.as_str(), r)).collect();
    index
        .iter()
        .map(|s| {
            let run = runs.get(s.user_id).ok_or_else(|| Error::UnknownUser(s.user_id.to_string()))?;
            run.steps
                .get(s.step)
                .map(|next| next.surprise)
                .ok_or_else(|| Error::DimensionMismatch {
                    expected: s.step + 1,
                    found: run.steps.len(),
                })
        })
        .collect()
}

/// Expected metrics of a predictor that flags each of `total` items
/// independently with probability `p`, when `positives` of them are positive.
pub fn random_baseline_expected(p: f64, positives: usize, total: usize) -> Result<Metrics> {
    if !(0.0..=1.0).contains(&p) || total == 0 || positives > total {
        return Err(Error::InvalidConfig(format!(
            "random baseline needs 0 <= p <= 1 and 0 <= positives <= total > 0, got p={p}, {positives}/{total}"
        )));
    }
    let base_rate = positives as f64 / total as f64;
    let precision = if p > 0.0 { base_rate } else { 0.0 };
    Ok(Metrics::from_pr(precision, p))
}

/// One hyperparameter setting evaluated during tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub surprise_model: ModelConfig,
    /// Model supplying preference vectors for the neighbor search; `None`
    /// means the surprise model is used for both.
    pub similarity_model: Option<ModelConfig>,
    pub tau_s: f64,
    /// Neighbor-search parameters; `None` for surprise detection.
    pub tau_d: Option<f64>,
    pub top_n: Option<usize>,
}

impl GridPoint {
    pub fn similarity(&self) -> &ModelConfig {
        self.similarity_model.as_ref().unwrap_or(&self.surprise_model)
    }

    /// Label of the model pair, e.g. `arow:...+vbblr:...`.
    pub fn model_label(&self) -> String {
        match &self.similarity_model {
            Some(sim) => format!("{}+{}", self.surprise_model, sim),
            None => self.surprise_model.to_string(),
        }
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} tau_s={}", self.model_label(), self.tau_s)?;
        if let Some(tau_d) = self.tau_d {
            write!(f, " tau_d={tau_d}")?;
        }
        if let Some(n) = self.top_n {
            write!(f, " N={n}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TuningMode {
    Surprise,
    Serendipity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeldOutRow {
    pub user_id: String,
    /// Index into the grid.
    pub selected: usize,
    /// Average F1 of the selected point over the other users.
    pub train_f1: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningResult {
    pub rows: Vec<HeldOutRow>,
    pub average_f1: f64,
}

/// Leave-one-out selection: for each user, picks the grid point with the best
/// average F1 on the remaining users (first wins on ties) and reports that
/// point's metrics on the held-out user.
///
/// `evaluate(point, user)` must be a pure function of its arguments.
pub fn tune_leave_one_out<F>(grid: &[GridPoint], users: &[String], evaluate: F) -> Result<TuningResult>
where
    F: Fn(&GridPoint, &str) -> Result<Metrics> + Sync,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig("tuning grid is empty".into()));
    }
    if users.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "leave-one-out tuning needs at least 2 annotated users, got {}",
            users.len()
        )));
    }
    let table: Vec<Vec<Metrics>> = grid
        .par_iter()
        .map(|point| users.iter().map(|u| evaluate(point, u)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    leave_one_out_from_table(&table, users)
}

/// Leave-one-out selection over precomputed metrics, `table[point][user]`.
pub fn leave_one_out_from_table(table: &[Vec<Metrics>], users: &[String]) -> Result<TuningResult> {
    if table.is_empty() {
        return Err(Error::InvalidConfig("tuning grid is empty".into()));
    }
    if users.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "leave-one-out tuning needs at least 2 annotated users, got {}",
            users.len()
        )));
    }
    if let Some(row) = table.iter().find(|row| row.len() != users.len()) {
        return Err(Error::DimensionMismatch {
            expected: users.len(),
            found: row.len(),
        });
    }
    let rows: Vec<HeldOutRow> = users
        .iter()
        .enumerate()
        .map(|(held_out, user_id)| {
            let mut best: Option<(usize, f64)> = None;
            for (p, per_user) in table.iter().enumerate() {
                let train: f64 = per_user
                    .iter()
                    .enumerate()
                    .filter(|(u, _)| *u != held_out)
                    .map(|(_, m)| m.f1)
                    .sum::<f64>()
                    / (users.len() - 1) as f64;
                if best.is_none_or(|(_, f1)| train > f1) {
                    best = Some((p, train));
                }
            }
            let (selected, train_f1) = best.expect("grid is non-empty");
            HeldOutRow {
                user_id: user_id.clone(),
                selected,
                train_f1,
                metrics: table[selected][held_out],
            }
        })
        .collect();
    let average_f1 = rows.iter().map(|r| r.metrics.f1).sum::<f64>() / rows.len() as f64;
    Ok(TuningResult { rows, average_f1 })
}

/// Default per-kind hyperparameter grids.
pub fn default_model_grid(kind: ModelKind) -> Vec<ModelConfig> {
    const SCALE: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
    const TAU_V: [f64; 4] = [0.01, 0.05, 0.1, 0.5];
    const TRADE_OFF: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
    const ETA: [f64; 4] = [0.05, 0.1, 0.2, 0.5];
    const HORIZON: [usize; 3] = [1, 2, 4];

    let base = ModelConfig::new(kind);
    let mut grid = Vec::new();
    match kind {
        ModelKind::Blr | ModelKind::VbBlr => {
            for beta in SCALE {
                for pv in SCALE {
                    let taus: &[f64] = if kind == ModelKind::VbBlr { &TAU_V } else { &[0.1] };
                    for &tau_v in taus {
                        grid.push(ModelConfig {
                            beta,
                            prior_variance: Some(pv),
                            tau_v,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        ModelKind::Arow => {
            for r1 in TRADE_OFF {
                for r2 in TRADE_OFF {
                    grid.push(ModelConfig { r1, r2, ..base.clone() });
                }
            }
        }
        ModelKind::Nlms => {
            for eta in ETA {
                for horizon_k in HORIZON {
                    grid.push(ModelConfig {
                        eta,
                        horizon_k,
                        ..base.clone()
                    });
                }
            }
        }
        ModelKind::Basic => grid.push(base),
    }
    grid
}

pub const DEFAULT_TOP_N: [usize; 3] = [10, 50, 100];

/// The 10th..90th percentiles of `values` (nearest-rank), deduplicated.
pub fn deciles(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (1..10)
        .map(|d| {
            let rank = (d * sorted.len()).div_ceil(10).max(1);
            sorted[rank - 1]
        })
        .collect();
    out.dedup();
    out
}

/// Per-user metrics for one model, rendered as a row of a results table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub per_user: Vec<Metrics>,
}

/// Tab-separated table with `P`, `R`, `F1` per user (in percent, one
/// decimal) and the average F1 as the last column.
pub fn format_metrics_table(users: &[String], rows: &[TableRow]) -> String {
    let mut out = String::from("model");
    for u in users {
        write!(out, "\t{u}_P\t{u}_R\t{u}_F1").unwrap();
    }
    out.push_str("\tavg_F1\n");
    for row in rows {
        out.push_str(&row.label);
        for m in &row.per_user {
            write!(out, "\t{:.1}\t{:.1}\t{:.1}", 100.0 * m.precision, 100.0 * m.recall, 100.0 * m.f1).unwrap();
        }
        let avg = if row.per_user.is_empty() {
            0.0
        } else {
            row.per_user.iter().map(|m| m.f1).sum::<f64>() / row.per_user.len() as f64
        };
        writeln!(out, "\t{:.1}", 100.0 * avg).unwrap();
    }
    out
}
