//! The subcommands: ingestion, model runs, index construction,
//! recommendation, evaluation, tuning and synthesis.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serendipity_core::eval::{
    deciles, default_model_grid, eval_serendipity, format_metrics_table, leave_one_out_from_table,
    random_baseline_expected, surprise_detection_counts, surprise_column, tally, ConfusionCounts,
    GridPoint, NeighborCache, TableRow, TuningMode, TuningResult,
};
use serendipity_core::history::{format_annotations, format_histories, format_topics};
use serendipity_core::neighbors::{find_serendipity, IndexMeta};
use serendipity_core::{
    build_index, generate_population, load_corpus, run_history, Corpus, Metrics, ModelConfig,
    SnapshotIndex, UserHistory, UserRun,
};
use sha2::{Digest, Sha256};

use crate::config::{Family, Job};
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Run,
    Recommend,
    EvalSurprise,
    EvalSerendipity,
    /// `None` tunes both tasks.
    Tune(Option<TuningMode>),
    Synth,
}

/// Executes `command` and returns the files written, in write order.
pub fn run_job(job: &Job, command: Command) -> Result<Vec<PathBuf>> {
    let out = Output::create(job)?;
    match command {
        Command::Run => run(job, &out)?,
        Command::Recommend => recommend(job, &out)?,
        Command::EvalSurprise => eval_surprise(job, &out)?,
        Command::EvalSerendipity => eval_serendipity_cmd(job, &out)?,
        Command::Tune(mode) => tune(job, &out, mode)?,
        Command::Synth => synth(job, &out)?,
    }
    Ok(out.written.into_inner())
}

/// Output directory. Every file starts with a `# config <hash>` line.
struct Output {
    dir: PathBuf,
    hash: String,
    written: std::cell::RefCell<Vec<PathBuf>>,
}

impl Output {
    fn create(job: &Job) -> Result<Self> {
        fs::create_dir_all(&job.out)?;
        let out = Output {
            dir: job.out.clone(),
            hash: job.config_hash(),
            written: Default::default(),
        };
        out.write("resolved_config.toml", &job.to_toml())?;
        Ok(out)
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, format!("# config {}\n{body}", self.hash))?;
        info!("wrote {}", path.display());
        self.written.borrow_mut().push(path);
        Ok(())
    }
}

fn load(job: &Job, with_annotations: bool) -> Result<Corpus> {
    let annotations = if with_annotations { Some(job.annotations()?) } else { job.annotations.as_deref() };
    let corpus = load_corpus(job.topics()?, job.histories()?, annotations, job.burn_in)?;
    let stats = corpus.stats();
    info!(
        "corpus: {} items, K={}, {} users, {} interactions, {} annotations over {} users",
        stats.items, corpus.k, stats.users, stats.interactions, stats.annotations, stats.annotated_users
    );
    Ok(corpus)
}

/// Runs `model` over `users` in parallel, logging throughput.
fn run_users(model: &ModelConfig, corpus: &Corpus, users: &[&UserHistory]) -> Result<Vec<UserRun>> {
    let start = Instant::now();
    let runs = users
        .par_iter()
        .map(|history| {
            let t = Instant::now();
            let run = run_history(model, history, &corpus.items, corpus.k)?;
            let secs = t.elapsed().as_secs_f64();
            debug!(
                "{model} {}: {} items in {secs:.3}s ({:.0} items/s)",
                history.user_id,
                history.len(),
                history.len() as f64 / secs.max(1e-9)
            );
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    let items: usize = users.iter().map(|u| u.len()).sum();
    let secs = start.elapsed().as_secs_f64();
    info!(
        "{model}: {} users, {items} items in {secs:.2}s ({:.0} items/s)",
        users.len(),
        items as f64 / secs.max(1e-9)
    );
    Ok(runs)
}

fn all_users(corpus: &Corpus) -> Vec<&UserHistory> {
    corpus.users.iter().collect()
}

fn annotated_users(corpus: &Corpus) -> Result<Vec<&UserHistory>> {
    let users: Vec<&UserHistory> = corpus
        .annotated_users()
        .iter()
        .map(|u| corpus.user(u).expect("annotations reference known users"))
        .collect();
    if users.is_empty() {
        return Err(CliError::Config("no annotated users".into()));
    }
    Ok(users)
}

/// Surprise-model runs and, for hybrids, similarity-model runs of all users.
struct PopulationRuns {
    surprise: Vec<UserRun>,
    similarity: Option<Vec<UserRun>>,
}

impl PopulationRuns {
    fn compute(job: &Job, corpus: &Corpus) -> Result<Self> {
        let users = all_users(corpus);
        Ok(PopulationRuns {
            surprise: run_users(job.model()?, corpus, &users)?,
            similarity: match &job.sim_model {
                Some(sim) => Some(run_users(sim, corpus, &users)?),
                None => None,
            },
        })
    }

    fn similarity(&self) -> &[UserRun] {
        self.similarity.as_deref().unwrap_or(&self.surprise)
    }

    fn similarity_of(&self, user_id: &str) -> &UserRun {
        self.similarity()
            .iter()
            .find(|r| r.user_id == user_id)
            .expect("every user has a run")
    }
}

/// Digest of the input files, so a cached index is reused only for the data
/// it was built from.
fn data_digest(job: &Job) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in [job.topics()?, job.histories()?] {
        hasher.update(fs::read(path)?);
    }
    Ok(hex::encode(&hasher.finalize()[..8]))
}

fn index_for(job: &Job, runs: &PopulationRuns) -> Result<SnapshotIndex> {
    let label = format!("{};data={}", job.model_label()?, data_digest(job)?);
    let meta = IndexMeta::new(label, job.min_step);
    if let Some(path) = job.index_cache.as_deref().filter(|p| p.exists()) {
        match SnapshotIndex::read_cache(path) {
            Ok(index) if *index.meta() == meta => {
                info!("index: {} snapshots read from {}", index.len(), path.display());
                return Ok(index);
            }
            Ok(_) => warn!("index cache {} was built for another configuration; rebuilding", path.display()),
            Err(e) => warn!("index cache {} is unusable ({e}); rebuilding", path.display()),
        }
    }
    let start = Instant::now();
    let index = build_index(&runs.surprise, runs.similarity(), job.min_step, meta)?;
    info!(
        "index: {} snapshots, K={}, built in {:.2}s",
        index.len(),
        index.k(),
        start.elapsed().as_secs_f64()
    );
    if let Some(path) = job.index_cache.as_deref() {
        index.write_cache(path)?;
        info!("index cache written to {}", path.display());
    }
    Ok(index)
}

fn run(job: &Job, out: &Output) -> Result<()> {
    let corpus = load(job, false)?;
    let runs = PopulationRuns::compute(job, &corpus)?;
    let mut body = format!("# model {}\n", job.model()?);
    body.push_str("user_id\tstep\titem_id\tstars\tcentered_rating\tpredicted_rating\tsurprise\tserendipity\n");
    for run in &runs.surprise {
        for s in &run.steps {
            writeln!(
                body,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                run.user_id, s.step, s.item_id, s.stars, s.centered_rating, s.predicted_rating, s.surprise, s.serendipity
            )
            .unwrap();
        }
    }
    out.write("surprise.tsv", &body)?;
    if job.index_cache.is_some() {
        index_for(job, &runs)?;
    }
    Ok(())
}

/// `(user_id, step)` pairs from a queries file with header `user_id step`.
fn read_queries(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let parse_err = |line: usize, message: String| {
        CliError::Core(serendipity_core::Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        })
    };
    let delimiter = match lines.next() {
        Some((_, header)) if header.contains('\t') => '\t',
        Some(_) => ',',
        None => return Ok(Vec::new()),
    };
    lines
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
            match fields.as_slice() {
                [user, step] => step
                    .parse()
                    .map(|step| (user.to_string(), step))
                    .map_err(|_| parse_err(i + 1, format!("bad step `{step}`"))),
                _ => Err(parse_err(i + 1, format!("expected 2 fields, got {}", fields.len()))),
            }
        })
        .collect()
}

fn recommend(job: &Job, out: &Output) -> Result<()> {
    let corpus = load(job, false)?;
    let (tau_d, n) = (job.tau_d()?, job.top_n()?);
    let runs = PopulationRuns::compute(job, &corpus)?;
    let index = index_for(job, &runs)?;

    let queries = match &job.queries {
        Some(path) => read_queries(path)?,
        None => {
            let users = if corpus.annotations.is_empty() { all_users(&corpus) } else { annotated_users(&corpus)? };
            users
                .iter()
                .flat_map(|u| (job.burn_in.max(1)..=u.len()).map(|i| (u.user_id.clone(), i)))
                .collect()
        }
    };
    let start = Instant::now();
    let results = queries
        .par_iter()
        .map(|(user, step)| {
            corpus.user(user).ok_or_else(|| serendipity_core::Error::UnknownUser(user.clone()))?;
            let run = runs.similarity_of(user);
            let record = run.at(*step).ok_or_else(|| {
                CliError::Config(format!("user {user} has no step {step} (history length {})", run.steps.len()))
            })?;
            let found = find_serendipity(&index, user, record.preference.as_slice(), tau_d, n)?;
            Ok(found.map(|(s, d)| (s.to_owned(), d)))
        })
        .collect::<Result<Vec<_>>>()?;
    let secs = start.elapsed().as_secs_f64();
    info!(
        "recommend: {} queries over {} snapshots in {secs:.2}s ({:.3} ms/query)",
        queries.len(),
        index.len(),
        1e3 * secs / queries.len().max(1) as f64
    );

    let mut body = format!("# model {}\n", job.model_label()?);
    body.push_str("user_id\tstep\tneighbor_user\tneighbor_step\titem_id\tdistance\tnext_surprise\tnext_rating\n");
    for ((user, step), found) in queries.iter().zip(&results) {
        match found {
            Some((s, d)) => writeln!(
                body,
                "{user}\t{step}\t{}\t{}\t{}\t{d}\t{}\t{}",
                s.user_id, s.step, s.next_item_id, s.next_surprise, s.next_rating_centered
            ),
            None => writeln!(body, "{user}\t{step}\tnull\tnull\tnull\tnull\tnull\tnull"),
        }
        .unwrap();
    }
    out.write("recommendations.tsv", &body)
}

/// Random-baseline rows for a table: `p = 0.5` and `p = P/T`.
fn baseline_rows(positives_and_totals: &[(usize, usize)]) -> Result<Vec<TableRow>> {
    let row = |label: &str, p: &dyn Fn(usize, usize) -> f64| -> Result<TableRow> {
        Ok(TableRow {
            label: label.to_string(),
            per_user: positives_and_totals
                .iter()
                .map(|&(pos, total)| random_baseline_expected(p(pos, total), pos, total))
                .collect::<serendipity_core::Result<_>>()?,
        })
    };
    Ok(vec![
        row("random(p=0.5)", &|_, _| 0.5)?,
        row("random(p=P/T)", &|pos, total| pos as f64 / total as f64)?,
    ])
}

/// Per user: (surprising positions, annotated positions) after the burn-in.
fn surprise_base_rates(corpus: &Corpus, users: &[&UserHistory], burn_in: usize) -> Vec<(usize, usize)> {
    users
        .iter()
        .map(|u| {
            let labels = corpus.labels_for(&u.user_id);
            let evaluated: Vec<bool> = labels.range(burn_in + 1..).map(|(_, &s)| s).collect();
            (evaluated.iter().filter(|&&s| s).count(), evaluated.len())
        })
        .collect()
}

/// Per user: (surprising and liked positions, annotated positions) after the
/// burn-in.
fn serendipity_base_rates(corpus: &Corpus, users: &[&UserHistory], burn_in: usize) -> Vec<(usize, usize)> {
    users
        .iter()
        .map(|u| {
            let labels = corpus.labels_for(&u.user_id);
            let mut positives = 0;
            let mut total = 0;
            for (&position, &surprising) in labels.range(burn_in + 1..) {
                total += 1;
                if surprising && u.interactions[position - 1].stars > 3 {
                    positives += 1;
                }
            }
            (positives, total)
        })
        .collect()
}

fn counts_body(users: &[&UserHistory], counts: &[ConfusionCounts]) -> String {
    let mut body = String::from("user_id\ttp\tfp\tfn\ttn\n");
    for (u, c) in users.iter().zip(counts) {
        writeln!(body, "{}\t{}\t{}\t{}\t{}", u.user_id, c.tp, c.fp, c.fn_, c.tn).unwrap();
    }
    body
}

fn user_ids(users: &[&UserHistory]) -> Vec<String> {
    users.iter().map(|u| u.user_id.clone()).collect()
}

fn eval_surprise(job: &Job, out: &Output) -> Result<()> {
    let corpus = load(job, true)?;
    let (model, tau_s) = (job.model()?, job.tau_s()?);
    let users = annotated_users(&corpus)?;
    let runs = run_users(model, &corpus, &users)?;
    let counts = users
        .iter()
        .zip(&runs)
        .map(|(u, run)| surprise_detection_counts(run, &corpus.labels_for(&u.user_id), tau_s, job.burn_in))
        .collect::<serendipity_core::Result<Vec<_>>>()?;
    let mut rows = vec![TableRow {
        label: model.to_string(),
        per_user: counts.iter().map(ConfusionCounts::metrics).collect(),
    }];
    rows.extend(baseline_rows(&surprise_base_rates(&corpus, &users, job.burn_in))?);
    out.write("surprise_detection.tsv", &format_metrics_table(&user_ids(&users), &rows))?;
    out.write("surprise_detection_counts.tsv", &counts_body(&users, &counts))
}

fn eval_serendipity_cmd(job: &Job, out: &Output) -> Result<()> {
    let corpus = load(job, true)?;
    let (tau_s, tau_d, n) = (job.tau_s()?, job.tau_d()?, job.top_n()?);
    let users = annotated_users(&corpus)?;
    let runs = PopulationRuns::compute(job, &corpus)?;
    let index = index_for(job, &runs)?;
    let start = Instant::now();
    let counts = users
        .par_iter()
        .map(|u| {
            let labels = corpus.labels_for(&u.user_id);
            eval_serendipity(&u.user_id, runs.similarity_of(&u.user_id), &index, tau_s, tau_d, n, &labels, job.burn_in)
        })
        .collect::<serendipity_core::Result<Vec<_>>>()?;
    info!("eval-serendipity: {} users in {:.2}s", users.len(), start.elapsed().as_secs_f64());
    let mut rows = vec![TableRow {
        label: job.model_label()?,
        per_user: counts.iter().map(ConfusionCounts::metrics).collect(),
    }];
    rows.extend(baseline_rows(&serendipity_base_rates(&corpus, &users, job.burn_in))?);
    out.write("serendipity.tsv", &format_metrics_table(&user_ids(&users), &rows))?;
    out.write("serendipity_counts.tsv", &counts_body(&users, &counts))
}

/// One tuned family: its grid and the leave-one-out outcome.
struct FamilyResult {
    family: Family,
    grid: Vec<GridPoint>,
    result: TuningResult,
}

fn tune(job: &Job, out: &Output, mode: Option<TuningMode>) -> Result<()> {
    let corpus = load(job, true)?;
    let users = annotated_users(&corpus)?;
    let families = job
        .tuning
        .families
        .iter()
        .map(|f| f.parse::<Family>())
        .collect::<Result<Vec<_>>>()?;
    let modes = match mode {
        Some(m) => vec![m],
        None => vec![TuningMode::Surprise, TuningMode::Serendipity],
    };
    for mode in modes {
        let (name, base_rates) = match mode {
            TuningMode::Surprise => ("surprise", surprise_base_rates(&corpus, &users, job.burn_in)),
            TuningMode::Serendipity => ("serendipity", serendipity_base_rates(&corpus, &users, job.burn_in)),
        };
        let mut results = Vec::new();
        for family in &families {
            let start = Instant::now();
            let tuned = match mode {
                TuningMode::Surprise if family.similarity.is_some() => {
                    info!("tune {name}: skipping hybrid {family}; surprise detection uses one model");
                    continue;
                }
                TuningMode::Surprise => tune_surprise(job, &corpus, &users, *family)?,
                TuningMode::Serendipity => tune_serendipity(job, &corpus, &users, *family)?,
            };
            info!(
                "tune {name} {family}: {} grid points, average F1 {:.1} in {:.2}s",
                tuned.grid.len(),
                100.0 * tuned.result.average_f1,
                start.elapsed().as_secs_f64()
            );
            results.push(tuned);
        }
        let mut rows: Vec<TableRow> = results
            .iter()
            .map(|r| TableRow {
                label: r.family.to_string(),
                per_user: r.result.rows.iter().map(|row| row.metrics).collect(),
            })
            .collect();
        rows.extend(baseline_rows(&base_rates)?);
        out.write(&format!("tuning_{name}.tsv"), &format_metrics_table(&user_ids(&users), &rows))?;

        let mut body = String::from("family\tuser_id\tgrid_size\tselected\ttrain_f1\tprecision\trecall\tf1\n");
        for r in &results {
            for row in &r.result.rows {
                writeln!(
                    body,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.family,
                    row.user_id,
                    r.grid.len(),
                    r.grid[row.selected],
                    row.train_f1,
                    row.metrics.precision,
                    row.metrics.recall,
                    row.metrics.f1
                )
                .unwrap();
            }
        }
        out.write(&format!("tuning_{name}_selected.tsv"), &body)?;
    }
    Ok(())
}

fn tune_surprise(job: &Job, corpus: &Corpus, users: &[&UserHistory], family: Family) -> Result<FamilyResult> {
    let labels: Vec<BTreeMap<usize, bool>> = users.iter().map(|u| corpus.labels_for(&u.user_id)).collect();
    let mut grid = Vec::new();
    let mut table = Vec::new();
    for model in default_model_grid(family.surprise) {
        let runs = run_users(&model, corpus, users)?;
        let observed = runs
            .iter()
            .flat_map(|r| r.steps.iter().filter(|s| s.step > job.burn_in).map(|s| s.surprise));
        for tau_s in deciles(observed) {
            let per_user = runs
                .iter()
                .zip(&labels)
                .map(|(run, l)| surprise_detection_counts(run, l, tau_s, job.burn_in).map(|c| c.metrics()))
                .collect::<serendipity_core::Result<Vec<Metrics>>>()?;
            grid.push(GridPoint {
                surprise_model: model.clone(),
                similarity_model: None,
                tau_s,
                tau_d: None,
                top_n: None,
            });
            table.push(per_user);
        }
    }
    let result = leave_one_out_from_table(&table, &user_ids(users))?;
    Ok(FamilyResult { family, grid, result })
}

/// Drops preference vectors, keeping the surprise series.
fn surprise_only(mut runs: Vec<UserRun>) -> Vec<UserRun> {
    for run in &mut runs {
        for step in &mut run.steps {
            step.preference = nalgebra::DVector::zeros(0);
        }
    }
    runs
}

fn tune_serendipity(job: &Job, corpus: &Corpus, users: &[&UserHistory], family: Family) -> Result<FamilyResult> {
    let population = all_users(corpus);
    let labels: Vec<BTreeMap<usize, bool>> = users.iter().map(|u| corpus.labels_for(&u.user_id)).collect();
    let max_n = job.tuning.top_n.iter().copied().max().unwrap_or(1);

    // Hybrids pair every surprise configuration with every similarity
    // configuration; single-model families pair each configuration with itself.
    let surprise_runs: Vec<(ModelConfig, Vec<UserRun>)> = match family.similarity {
        Some(_) => default_model_grid(family.surprise)
            .into_iter()
            .map(|m| Ok((m.clone(), surprise_only(run_users(&m, corpus, &population)?))))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let mut grid = Vec::new();
    let mut table = Vec::new();
    for sim in default_model_grid(family.similarity.unwrap_or(family.surprise)) {
        let sim_runs = run_users(&sim, corpus, &population)?;
        let index = build_index(&sim_runs, &sim_runs, job.min_step, IndexMeta::new(sim.to_string(), job.min_step))?;
        let start = Instant::now();
        let caches = users
            .par_iter()
            .zip(&labels)
            .map(|(u, l)| {
                let reference = sim_runs.iter().find(|r| r.user_id == u.user_id).expect("run exists");
                NeighborCache::build(&u.user_id, reference, &index, max_n, l, job.burn_in)
            })
            .collect::<serendipity_core::Result<Vec<_>>>()?;
        debug!(
            "{sim}: neighbor caches for {} users over {} snapshots in {:.2}s",
            users.len(),
            index.len(),
            start.elapsed().as_secs_f64()
        );
        let tau_d_grid = deciles(caches.iter().flat_map(NeighborCache::distances));

        let columns: Vec<(ModelConfig, Option<Vec<f64>>)> = if family.similarity.is_some() {
            surprise_runs
                .iter()
                .map(|(m, runs)| Ok((m.clone(), Some(surprise_column(&index, runs)?))))
                .collect::<Result<_>>()?
        } else {
            vec![(sim.clone(), None)]
        };
        for (surprise_model, column) in &columns {
            let observed: Vec<f64> = match column {
                Some(c) => c.clone(),
                None => index.iter().map(|s| s.next_surprise).collect(),
            };
            let tau_s_grid = deciles(observed);
            let similarity_model = family.similarity.map(|_| sim.clone());
            for &tau_d in &tau_d_grid {
                for &n in &job.tuning.top_n {
                    let selections = caches
                        .iter()
                        .map(|c| c.select(&index, column.as_deref(), tau_d, n))
                        .collect::<serendipity_core::Result<Vec<_>>>()?;
                    for &tau_s in &tau_s_grid {
                        grid.push(GridPoint {
                            surprise_model: surprise_model.clone(),
                            similarity_model: similarity_model.clone(),
                            tau_s,
                            tau_d: Some(tau_d),
                            top_n: Some(n),
                        });
                        table.push(selections.iter().map(|s| tally(s, tau_s).metrics()).collect());
                    }
                }
            }
        }
    }
    let result = leave_one_out_from_table(&table, &user_ids(users))?;
    Ok(FamilyResult { family, grid, result })
}

fn synth(job: &Job, out: &Output) -> Result<()> {
    let population = generate_population(&job.synth)?;
    let corpus = population.to_corpus(job.burn_in)?;
    let stats = corpus.stats();
    info!(
        "synth: {} users, {} items, {} change-points",
        stats.users,
        stats.items,
        population.change_points.values().map(Vec::len).sum::<usize>()
    );
    out.write("topics.tsv", &format_topics(corpus.k, &corpus.items))?;
    out.write("histories.tsv", &format_histories(&corpus.users))?;
    out.write("annotations.tsv", &format_annotations(&corpus.annotations))?;
    let mut body = String::from("user_id\tposition\n");
    for (user, points) in &population.change_points {
        for p in points {
            writeln!(body, "{user}\t{p}").unwrap();
        }
    }
    out.write("change_points.tsv", &body)
}
