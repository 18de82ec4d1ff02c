//! Items, reading histories and surprise annotations, plus the plain-text
//! formats they are stored in.
//!
//! All three files are delimiter-separated text with a header line. The
//! delimiter (tab or comma) is detected from the header. Blank lines and lines
//! starting with `#` are ignored.
//!
//! ```text
//! topics:       item_id  topic_0 ... topic_{K-1}     (K = header columns - 1)
//! histories:    user_id  item_id  stars  timestamp
//! annotations:  user_id  position  surprising        (position is 1-based, flag 0/1)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Topic rows are accepted as-is when they sum to 1 within this tolerance.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
/// Rows within this band are renormalized; anything further off is rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

pub fn center_rating(stars: u8) -> Result<f64> {
    if (1..=5).contains(&stars) {
        Ok(f64::from(stars) - 3.0)
    } else {
        Err(Error::RatingOutOfRange(i64::from(stars)))
    }
}

/// A point on the probability simplex over K topics.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicVector(DVector<f64>);

impl TopicVector {
    /// Validates the weights, renormalizing when the sum is off by at most
    /// [`RENORMALIZE_TOLERANCE`].
    pub fn new(weights: Vec<f64>) -> std::result::Result<Self, String> {
        if weights.is_empty() {
            return Err("empty topic vector".into());
        }
        if let Some((k, v)) = weights
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(format!("topic {k} has invalid weight {v}"));
        }
        let total: f64 = weights.iter().sum();
        let gap = (total - 1.0).abs();
        if gap > RENORMALIZE_TOLERANCE {
            return Err(format!("topic weights sum to {total}, not 1"));
        }
        let mut v = DVector::from_vec(weights);
        if gap > 1e-12 {
            v /= total;
        }
        Ok(TopicVector(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemRecord {
    pub item_id: String,
    pub topics: TopicVector,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub item_id: String,
    pub stars: u8,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserHistory {
    pub user_id: String,
    /// Sorted by timestamp; ties keep input order.
    pub interactions: Vec<Interaction>,
}

impl UserHistory {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurpriseAnnotation {
    pub user_id: String,
    /// 1-based index into the user's interactions.
    pub position: usize,
    pub surprising: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub k: usize,
    pub items: BTreeMap<String, DVector<f64>>,
    /// Sorted by user id.
    pub users: Vec<UserHistory>,
    /// Sorted by (user id, position).
    pub annotations: Vec<SurpriseAnnotation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusStats {
    pub items: usize,
    pub users: usize,
    pub interactions: usize,
    pub annotations: usize,
    pub annotated_users: usize,
}

impl Corpus {
    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            items: self.items.len(),
            users: self.users.len(),
            interactions: self.users.iter().map(UserHistory::len).sum(),
            annotations: self.annotations.len(),
            annotated_users: self.annotated_users().len(),
        }
    }

    pub fn user(&self, user_id: &str) -> Option<&UserHistory> {
        self.users
            .binary_search_by(|u| u.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| &self.users[i])
    }

    /// Users with at least one annotation, sorted.
    pub fn annotated_users(&self) -> Vec<String> {
        self.annotations
            .iter()
            .map(|a| a.user_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Position -> surprising flag for one user.
    pub fn labels_for(&self, user_id: &str) -> BTreeMap<usize, bool> {
        self.annotations
            .iter()
            .filter(|a| a.user_id == user_id)
            .map(|a| (a.position, a.surprising))
            .collect()
    }
}

/// Loads and cross-validates the three input files.
pub fn load_corpus(
    topics_path: &Path,
    histories_path: &Path,
    annotations_path: Option<&Path>,
    burn_in: usize,
) -> Result<Corpus> {
    let (k, items) = parse_topics(&read(topics_path)?, &topics_path.display().to_string())?;
    let users = parse_histories(&read(histories_path)?, &histories_path.display().to_string())?;
    let annotations = match annotations_path {
        Some(path) => parse_annotations(&read(path)?, &path.display().to_string())?,
        None => Vec::new(),
    };
    assemble(k, items, users, annotations, burn_in)
}

/// Cross-checks parsed records: every item resolves, annotations point inside
/// the histories and after the burn-in.
pub fn assemble(
    k: usize,
    items: BTreeMap<String, DVector<f64>>,
    users: Vec<UserHistory>,
    mut annotations: Vec<SurpriseAnnotation>,
    burn_in: usize,
) -> Result<Corpus> {
    let missing: BTreeSet<&str> = users
        .iter()
        .flat_map(|u| u.interactions.iter())
        .filter(|i| !items.contains_key(&i.item_id))
        .map(|i| i.item_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnknownItems(missing.into_iter().map(String::from).collect()));
    }

    annotations.sort_by(|a, b| (&a.user_id, a.position).cmp(&(&b.user_id, b.position)));
    let corpus = Corpus {
        k,
        items,
        users,
        annotations: Vec::new(),
    };
    for pair in annotations.windows(2) {
        if pair[0].user_id == pair[1].user_id && pair[0].position == pair[1].position {
            return Err(Error::InvalidAnnotation {
                user: pair[0].user_id.clone(),
                position: pair[0].position,
                reason: "duplicate annotation".into(),
            });
        }
    }
    for a in &annotations {
        let history = corpus
            .user(&a.user_id)
            .ok_or_else(|| Error::UnknownUser(a.user_id.clone()))?;
        let invalid = |reason: String| Error::InvalidAnnotation {
            user: a.user_id.clone(),
            position: a.position,
            reason,
        };
        if a.position <= burn_in {
            return Err(invalid(format!("inside the burn-in of {burn_in} items")));
        }
        if a.position > history.len() {
            return Err(invalid(format!("history has only {} items", history.len())));
        }
    }
    Ok(Corpus {
        annotations,
        ..corpus
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Non-comment lines with their 1-based line numbers.
fn records(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim_end_matches('\r')))
        .filter(|(_, line)| !line.trim().is_empty() && !line.trim_start().starts_with('#'))
}

fn delimiter_of(header: &str) -> char {
    if header.contains('\t') {
        '\t'
    } else {
        ','
    }
}

fn split(line: &str, delimiter: char) -> Vec<&str> {
    line.split(delimiter).map(str::trim).collect()
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn expect_header(path: &str, line: usize, fields: &[&str], expected: &[&str]) -> Result<()> {
    let matches = fields.len() == expected.len()
        && fields
            .iter()
            .zip(expected)
            .all(|(f, e)| f.eq_ignore_ascii_case(e));
    if matches {
        Ok(())
    } else {
        Err(parse_err(
            path,
            line,
            format!("expected header `{}`, got `{}`", expected.join(","), fields.join(",")),
        ))
    }
}

pub fn parse_topics(content: &str, path: &str) -> Result<(usize, BTreeMap<String, DVector<f64>>)> {
    let mut lines = records(content);
    let Some((header_line, header)) = lines.next() else {
        return Ok((0, BTreeMap::new()));
    };
    let delimiter = delimiter_of(header);
    let columns = split(header, delimiter);
    if columns.len() < 2 || !columns[0].eq_ignore_ascii_case("item_id") {
        return Err(parse_err(
            path,
            header_line,
            "topics header must be `item_id` followed by one column per topic",
        ));
    }
    let k = columns.len() - 1;
    let mut items = BTreeMap::new();
    for (line_no, line) in lines {
        let fields = split(line, delimiter);
        if fields.len() != k + 1 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} columns, found {}", k + 1, fields.len()),
            ));
        }
        let weights = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, line_no, format!("bad topic weight: {e}")))?;
        let topics = TopicVector::new(weights).map_err(|m| parse_err(path, line_no, m))?;
        if items
            .insert(fields[0].to_string(), topics.into_vector())
            .is_some()
        {
            return Err(parse_err(path, line_no, format!("duplicate item `{}`", fields[0])));
        }
    }
    Ok((k, items))
}

pub fn parse_histories(content: &str, path: &str) -> Result<Vec<UserHistory>> {
    let mut lines = records(content);
    let Some((header_line, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let delimiter = delimiter_of(header);
    expect_header(
        path,
        header_line,
        &split(header, delimiter),
        &["user_id", "item_id", "stars", "timestamp"],
    )?;
    let mut by_user: BTreeMap<String, Vec<Interaction>> = BTreeMap::new();
    for (line_no, line) in lines {
        let fields = split(line, delimiter);
        if fields.len() != 4 {
            return Err(parse_err(path, line_no, format!("expected 4 columns, found {}", fields.len())));
        }
        let stars: u8 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad star rating `{}`", fields[2])))?;
        if !(1..=5).contains(&stars) {
            return Err(parse_err(path, line_no, format!("star rating {stars} outside 1..=5")));
        }
        let timestamp: i64 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad timestamp `{}`", fields[3])))?;
        by_user.entry(fields[0].to_string()).or_default().push(Interaction {
            item_id: fields[1].to_string(),
            stars,
            timestamp,
        });
    }
    Ok(by_user
        .into_iter()
        .map(|(user_id, mut interactions)| {
            interactions.sort_by_key(|i| i.timestamp);
            UserHistory {
                user_id,
                interactions,
            }
        })
        .collect())
}

pub fn parse_annotations(content: &str, path: &str) -> Result<Vec<SurpriseAnnotation>> {
    let mut lines = records(content);
    let Some((header_line, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let delimiter = delimiter_of(header);
    expect_header(
        path,
        header_line,
        &split(header, delimiter),
        &["user_id", "position", "surprising"],
    )?;
    lines
        .map(|(line_no, line)| {
            let fields = split(line, delimiter);
            if fields.len() != 3 {
                return Err(parse_err(path, line_no, format!("expected 3 columns, found {}", fields.len())));
            }
            let position: usize = fields[1]
                .parse()
                .ok()
                .filter(|p| *p >= 1)
                .ok_or_else(|| parse_err(path, line_no, format!("bad position `{}`", fields[1])))?;
            let surprising = match fields[2] {
                "1" => true,
                "0" => false,
                other => return Err(parse_err(path, line_no, format!("bad surprise flag `{other}`"))),
            };
            Ok(SurpriseAnnotation {
                user_id: fields[0].to_string(),
                position,
                surprising,
            })
        })
        .collect()
}

pub fn format_topics(k: usize, items: &BTreeMap<String, DVector<f64>>) -> String {
    let mut out = String::from("item_id");
    for t in 0..k {
        write!(out, "\ttopic_{t}").unwrap();
    }
    out.push('\n');
    for (id, topics) in items {
        out.push_str(id);
        for v in topics.iter() {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn format_histories(users: &[UserHistory]) -> String {
    let mut out = String::from("user_id\titem_id\tstars\ttimestamp\n");
    for user in users {
        for i in &user.interactions {
            writeln!(out, "{}\t{}\t{}\t{}", user.user_id, i.item_id, i.stars, i.timestamp).unwrap();
        }
    }
    out
}

pub fn format_annotations(annotations: &[SurpriseAnnotation]) -> String {
    let mut out = String::from("user_id\tposition\tsurprising\n");
    for a in annotations {
        writeln!(out, "{}\t{}\t{}", a.user_id, a.position, u8::from(a.surprising)).unwrap();
    }
    out
}

/// Writes `topics.tsv`, `histories.tsv` and `annotations.tsv` into `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("topics.tsv"), format_topics(corpus.k, &corpus.items))?;
    fs::write(dir.join("histories.tsv"), format_histories(&corpus.users))?;
    fs::write(dir.join("annotations.tsv"), format_annotations(&corpus.annotations))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOPICS: &str = "item_id,t0,t1\na,0.5,0.5\nb,1.0,0.0\n";

    #[test]
    fn center_rating_examples() {
        assert_eq!(center_rating(5).unwrap(), 2.0);
        assert_eq!(center_rating(3).unwrap(), 0.0);
        assert_eq!(center_rating(1).unwrap(), -2.0);
        assert!(matches!(center_rating(0), Err(Error::RatingOutOfRange(0))));
        assert!(center_rating(6).is_err());
    }

    #[test]
    fn empty_histories_yield_no_users() {
        let (k, items) = parse_topics(TOPICS, "t").unwrap();
        assert!(parse_histories("", "h").unwrap().is_empty());
        let users = parse_histories("user_id,item_id,stars,timestamp\n", "h").unwrap();
        let corpus = assemble(k, items, users, vec![], 15).unwrap();
        assert_eq!(corpus.stats().users, 0);
    }

    #[test]
    fn missing_items_are_listed() {
        let (k, items) = parse_topics(TOPICS, "t").unwrap();
        let users = parse_histories(
            "user_id\titem_id\tstars\ttimestamp\nu\ta\t4\t1\nu\tzz\t3\t2\nv\tyy\t1\t0\n",
            "h",
        )
        .unwrap();
        match assemble(k, items, users, vec![], 15) {
            Err(Error::UnknownItems(ids)) => assert_eq!(ids, vec!["yy", "zz"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn near_simplex_rows_are_renormalized() {
        let (_, items) = parse_topics("item_id,t0,t1\nx,0.6005,0.4\n", "t").unwrap();
        let v = &items["x"];
        assert_close!(v.sum(), 1.0, 1e-15);
        assert_close!(v[0], 0.6005 / 1.0005, 1e-15);
    }

    #[test]
    fn off_simplex_rows_report_line_number() {
        match parse_topics("item_id,t0,t1\n# comment\nx,0.5,0.5\ny,0.7,0.4\n", "topics.csv") {
            Err(Error::Parse { path, line, .. }) => {
                assert_eq!(path, "topics.csv");
                assert_eq!(line, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_topics("item_id,t0,t1\nx,-0.1,1.1\n", "t").is_err());
    }

    #[test]
    fn inconsistent_topic_count_is_rejected() {
        assert!(matches!(
            parse_topics("item_id,t0,t1\nx,0.5,0.25,0.25\n", "t"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn timestamp_ties_keep_input_order() {
        let users = parse_histories(
            "user_id,item_id,stars,timestamp\nu,c,3,5\nu,a,3,1\nu,b,4,5\nu,d,2,1\n",
            "h",
        )
        .unwrap();
        let order: Vec<&str> = users[0].interactions.iter().map(|i| i.item_id.as_str()).collect();
        assert_eq!(order, vec!["a", "d", "c", "b"]);
    }

    #[test]
    fn annotations_are_validated() {
        let (k, items) = parse_topics(TOPICS, "t").unwrap();
        let history: String = std::iter::once("user_id,item_id,stars,timestamp\n".to_string())
            .chain((0..20).map(|t| format!("u,a,4,{t}\n")))
            .collect();
        let users = parse_histories(&history, "h").unwrap();
        let ok = parse_annotations("user_id,position,surprising\nu,16,1\nu,20,0\n", "a").unwrap();
        let corpus = assemble(k, items.clone(), users.clone(), ok, 15).unwrap();
        assert_eq!(corpus.labels_for("u"), BTreeMap::from([(16, true), (20, false)]));

        for bad in ["u,15,1", "u,21,0", "w,16,1"] {
            let a = parse_annotations(&format!("user_id,position,surprising\n{bad}\n"), "a").unwrap();
            assert!(assemble(k, items.clone(), users.clone(), a, 15).is_err(), "{bad}");
        }
        assert!(parse_annotations("user_id,position,surprising\nu,16,yes\n", "a").is_err());
    }

    fn corpus_strategy() -> impl Strategy<Value = Corpus> {
        (1usize..5, 1usize..6).prop_flat_map(|(k, n_items)| {
            let items = proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, k), n_items);
            let users = proptest::collection::vec(
                proptest::collection::vec((0..n_items, 1u8..=5, -50i64..50), 0..8),
                0..4,
            );
            (Just(k), items, users).prop_map(|(k, raw_items, raw_users)| {
                let items: BTreeMap<String, DVector<f64>> = raw_items
                    .into_iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let total: f64 = w.iter().sum();
                        (format!("item{i}"), DVector::from_iterator(k, w.iter().map(|x| x / total)))
                    })
                    .collect();
                let users = raw_users
                    .into_iter()
                    .enumerate()
                    .filter(|(_, rows)| !rows.is_empty())
                    .map(|(u, rows)| {
                        let mut interactions: Vec<Interaction> = rows
                            .into_iter()
                            .map(|(item, stars, timestamp)| Interaction {
                                item_id: format!("item{item}"),
                                stars,
                                timestamp,
                            })
                            .collect();
                        interactions.sort_by_key(|i| i.timestamp);
                        UserHistory {
                            user_id: format!("user{u}"),
                            interactions,
                        }
                    })
                    .collect();
                Corpus {
                    k,
                    items,
                    users,
                    annotations: Vec::new(),
                }
            })
        })
    }

    proptest! {
        #[test]
        fn corpus_round_trips_through_text(corpus in corpus_strategy()) {
            let (k, items) = parse_topics(&format_topics(corpus.k, &corpus.items), "t").unwrap();
            let users = parse_histories(&format_histories(&corpus.users), "h").unwrap();
            let reloaded = assemble(k, items, users, vec![], 0).unwrap();
            prop_assert_eq!(reloaded, corpus);
        }
    }
}
