use std::collections::BTreeMap;

use serendipity_core::eval::{eval_serendipity, surprise_column, surprise_detection_counts, tally, NeighborCache};
use serendipity_core::history::write_corpus;
use serendipity_core::neighbors::IndexMeta;
use serendipity_core::{build_index, load_corpus, run_history, Corpus, ModelConfig, SnapshotIndex, SynthConfig, UserRun};

const BURN_IN: usize = 10;

fn small_corpus() -> Corpus {
    let config = SynthConfig {
        users: 8,
        history_length: 40,
        k: 12,
        ..SynthConfig::default()
    };
    serendipity_core::generate_population(&config)
        .unwrap()
        .to_corpus(BURN_IN)
        .unwrap()
}

fn runs(corpus: &Corpus, model: &str) -> Vec<UserRun> {
    let config: ModelConfig = model.parse().unwrap();
    corpus
        .users
        .iter()
        .map(|u| run_history(&config, u, &corpus.items, corpus.k).unwrap())
        .collect()
}

fn index(surprise: &[UserRun], similarity: &[UserRun]) -> SnapshotIndex {
    build_index(surprise, similarity, BURN_IN, IndexMeta::new("test", BURN_IN)).unwrap()
}

#[test]
fn corpus_on_disk_gives_identical_runs() {
    let corpus = small_corpus();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&corpus, dir.path()).unwrap();
    let reloaded = load_corpus(
        &dir.path().join("topics.tsv"),
        &dir.path().join("histories.tsv"),
        Some(&dir.path().join("annotations.tsv")),
        BURN_IN,
    )
    .unwrap();
    assert_eq!(runs(&corpus, "arow"), runs(&reloaded, "arow"));
}

#[test]
fn every_annotated_position_is_counted_once() {
    let corpus = small_corpus();
    let all = runs(&corpus, "vbblr");
    for run in &all {
        let labels = corpus.labels_for(&run.user_id);
        let counts = surprise_detection_counts(run, &labels, 0.1, BURN_IN).unwrap();
        assert_eq!(counts.total(), labels.range(BURN_IN + 1..).count());
    }
}

#[test]
fn cached_neighbors_match_direct_search() {
    let corpus = small_corpus();
    let all = runs(&corpus, "arow");
    let idx = index(&all, &all);
    for run in &all {
        let labels = corpus.labels_for(&run.user_id);
        let cache = NeighborCache::build(&run.user_id, run, &idx, 20, &labels, BURN_IN).unwrap();
        for (tau_s, tau_d, n) in [(0.01, 0.5, 5), (0.1, 2.0, 20), (1.0, 0.05, 1)] {
            let direct = eval_serendipity(&run.user_id, run, &idx, tau_s, tau_d, n, &labels, BURN_IN).unwrap();
            assert_eq!(cache.counts(&idx, tau_s, tau_d, n).unwrap(), direct);
        }
    }
}

#[test]
fn surprise_column_serves_hybrid_models() {
    let corpus = small_corpus();
    let surprise = runs(&corpus, "arow");
    let similarity = runs(&corpus, "vbblr");
    let hybrid = index(&surprise, &similarity);
    let shared = index(&similarity, &similarity);
    let column = surprise_column(&shared, &surprise).unwrap();
    for run in &similarity {
        let labels: BTreeMap<usize, bool> = corpus.labels_for(&run.user_id);
        let cache = NeighborCache::build(&run.user_id, run, &shared, 10, &labels, BURN_IN).unwrap();
        let selections = cache.select(&shared, Some(&column), 1.0, 10).unwrap();
        let direct = eval_serendipity(&run.user_id, run, &hybrid, 0.05, 1.0, 10, &labels, BURN_IN).unwrap();
        assert_eq!(tally(&selections, 0.05), direct);
    }
}

#[test]
fn index_cache_round_trips() {
    let corpus = small_corpus();
    let all = runs(&corpus, "blr");
    let idx = index(&all, &all);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.bin");
    idx.write_cache(&path).unwrap();
    let back = SnapshotIndex::read_cache(&path).unwrap();
    assert_eq!(back.meta(), idx.meta());
    assert_eq!(back.len(), idx.len());
    assert!(idx.iter().zip(back.iter()).all(|(a, b)| a == b));
}
