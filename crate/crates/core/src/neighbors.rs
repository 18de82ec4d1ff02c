//! Preference snapshots over every (user, step) and the serendipity search.
//!
//! Snapshots are stored column-wise and ordered by `(user_id, step)`, so entry
//! order is the tie-break order everywhere. Queries are an exact linear scan.
//!
//! # Cache file layout
//!
//! All integers little-endian.
//!
//! ```text
//! magic        8 bytes   "SSNAPIDX"
//! version      u32       1
//! k            u32
//! min_step     u32
//! hash         u32 len + UTF-8 bytes   (config hash)
//! label        u32 len + UTF-8 bytes   (config label)
//! users        u32 count, then per user: u32 len + UTF-8 bytes (sorted)
//! items        u32 count, then per item: u32 len + UTF-8 bytes (sorted)
//! count        u64       number of snapshots
//! records      count x (user u32, step u32, next_item u32, reserved u32 = 0,
//!                       next_surprise f64, next_rating f64, preference k x f64)
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::UserRun;

const CACHE_MAGIC: &[u8; 8] = b"SSNAPIDX";
const CACHE_VERSION: u32 = 1;

/// Squared Euclidean distance; the single kernel behind every distance here.
#[inline]
fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        for lane in 0..4 {
            let d = a[i + lane] - b[i + lane];
            acc[lane] += d * d;
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        let d = a[i] - b[i];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn preference_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(squared_l2(a, b).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub user_id: String,
    /// 1-based step whose preference this is; `step + 1` exists in the history.
    pub step: usize,
    pub preference: Vec<f64>,
    /// Surprise of the item consumed at `step + 1`.
    pub next_surprise: f64,
    pub next_rating_centered: f64,
    pub next_item_id: String,
}

/// Borrowed view of one indexed snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotRef<'a> {
    pub entry: usize,
    pub user_id: &'a str,
    pub step: usize,
    pub preference: &'a [f64],
    pub next_surprise: f64,
    pub next_rating_centered: f64,
    pub next_item_id: &'a str,
}

impl SnapshotRef<'_> {
    pub fn to_owned(&self) -> Snapshot {
        Snapshot {
            user_id: self.user_id.to_string(),
            step: self.step,
            preference: self.preference.to_vec(),
            next_surprise: self.next_surprise,
            next_rating_centered: self.next_rating_centered,
            next_item_id: self.next_item_id.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMeta {
    /// Label of the configuration(s) that produced the snapshots.
    pub config_label: String,
    pub config_hash: String,
    pub min_step: usize,
}

impl IndexMeta {
    pub fn new(config_label: impl Into<String>, min_step: usize) -> Self {
        let config_label = config_label.into();
        let digest = Sha256::digest(config_label.as_bytes());
        Self {
            config_hash: hex::encode(&digest[..8]),
            config_label,
            min_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotIndex {
    k: usize,
    meta: IndexMeta,
    users: Vec<String>,
    items: Vec<String>,
    entry_user: Vec<u32>,
    entry_step: Vec<u32>,
    entry_item: Vec<u32>,
    next_surprise: Vec<f64>,
    next_rating: Vec<f64>,
    preferences: Vec<f64>,
}

impl SnapshotIndex {
    /// Freezes a set of snapshots; insertion order does not matter.
    pub fn from_snapshots(k: usize, snapshots: Vec<Snapshot>, meta: IndexMeta) -> Result<Self> {
        if let Some(bad) = snapshots.iter().find(|s| s.preference.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: bad.preference.len(),
            });
        }
        fn table<'a>(names: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
            let mut names: Vec<&str> = names.collect();
            names.sort_unstable();
            names.dedup();
            names
        }
        let users = table(snapshots.iter().map(|s| s.user_id.as_str()));
        let items = table(snapshots.iter().map(|s| s.next_item_id.as_str()));
        let position = |table: &[&str], key: &str| table.binary_search(&key).unwrap() as u32;

        let mut order: Vec<(u32, usize, &Snapshot)> = snapshots
            .iter()
            .map(|s| (position(&users, &s.user_id), s.step, s))
            .collect();
        order.sort_unstable_by_key(|&(u, step, _)| (u, step));
        if let Some(pair) = order.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidConfig(format!(
                "duplicate snapshot for user {} step {}",
                pair[0].2.user_id, pair[0].2.step
            )));
        }

        let n = order.len();
        let mut index = SnapshotIndex {
            k,
            meta,
            entry_user: Vec::with_capacity(n),
            entry_step: Vec::with_capacity(n),
            entry_item: Vec::with_capacity(n),
            next_surprise: Vec::with_capacity(n),
            next_rating: Vec::with_capacity(n),
            preferences: Vec::with_capacity(n * k),
            users: Vec::new(),
            items: Vec::new(),
        };
        for (user, _, s) in order {
            index.entry_user.push(user);
            let step = u32::try_from(s.step)
                .map_err(|_| Error::InvalidConfig(format!("step {} exceeds the index limit", s.step)))?;
            index.entry_step.push(step);
            index.entry_item.push(position(&items, &s.next_item_id));
            index.next_surprise.push(s.next_surprise);
            index.next_rating.push(s.next_rating_centered);
            index.preferences.extend_from_slice(&s.preference);
        }
        index.users = users.into_iter().map(String::from).collect();
        index.items = items.into_iter().map(String::from).collect();
        Ok(index)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.entry_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_step.is_empty()
    }

    pub fn get(&self, entry: usize) -> SnapshotRef<'_> {
        SnapshotRef {
            entry,
            user_id: &self.users[self.entry_user[entry] as usize],
            step: self.entry_step[entry] as usize,
            preference: &self.preferences[entry * self.k..(entry + 1) * self.k],
            next_surprise: self.next_surprise[entry],
            next_rating_centered: self.next_rating[entry],
            next_item_id: &self.items[self.entry_item[entry] as usize],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SnapshotRef<'_>> {
        (0..self.len()).map(|e| self.get(e))
    }

    /// Entry range owned by `user_id` (empty when absent).
    fn user_range(&self, user_id: &str) -> std::ops::Range<usize> {
        let Ok(u) = self.users.binary_search_by(|v| v.as_str().cmp(user_id)) else {
            return 0..0;
        };
        let u = u as u32;
        let start = self.entry_user.partition_point(|&x| x < u);
        let end = self.entry_user.partition_point(|&x| x <= u);
        start..end
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(64 + self.len() * (32 + 8 * self.k));
        self.encode(&mut out)?;
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&mut bytes.as_slice())
    }

    pub fn encode(&self, out: &mut impl Write) -> Result<()> {
        fn string(out: &mut impl Write, s: &str) -> io::Result<()> {
            out.write_all(&(s.len() as u32).to_le_bytes())?;
            out.write_all(s.as_bytes())
        }
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&(self.k as u32).to_le_bytes())?;
        out.write_all(&(self.meta.min_step as u32).to_le_bytes())?;
        string(out, &self.meta.config_hash)?;
        string(out, &self.meta.config_label)?;
        for table in [&self.users, &self.items] {
            out.write_all(&(table.len() as u32).to_le_bytes())?;
            for s in table {
                string(out, s)?;
            }
        }
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for e in 0..self.len() {
            out.write_all(&self.entry_user[e].to_le_bytes())?;
            out.write_all(&self.entry_step[e].to_le_bytes())?;
            out.write_all(&self.entry_item[e].to_le_bytes())?;
            out.write_all(&0u32.to_le_bytes())?;
            out.write_all(&self.next_surprise[e].to_le_bytes())?;
            out.write_all(&self.next_rating[e].to_le_bytes())?;
            for v in &self.preferences[e * self.k..(e + 1) * self.k] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn decode(input: &mut impl Read) -> Result<Self> {
        fn bad(msg: impl Into<String>) -> Error {
            Error::InvalidCache(msg.into())
        }
        fn read_u32(input: &mut impl Read) -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            Ok(u32::from_le_bytes(b))
        }
        fn read_u64(input: &mut impl Read) -> Result<u64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            Ok(u64::from_le_bytes(b))
        }
        fn read_f64(input: &mut impl Read) -> Result<f64> {
            Ok(f64::from_bits(read_u64(input)?))
        }
        fn read_string(input: &mut impl Read) -> Result<String> {
            let len = read_u32(input)? as usize;
            let mut buf = Vec::new();
            input
                .take(len as u64)
                .read_to_end(&mut buf)
                .map_err(|_| bad("truncated"))?;
            if buf.len() != len {
                return Err(bad("truncated string"));
            }
            String::from_utf8(buf).map_err(|_| bad("string is not UTF-8"))
        }

        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(input)?;
        if version != CACHE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let k = read_u32(input)? as usize;
        let min_step = read_u32(input)? as usize;
        let config_hash = read_string(input)?;
        let config_label = read_string(input)?;
        let mut tables = [Vec::new(), Vec::new()];
        for table in &mut tables {
            let count = read_u32(input)?;
            for _ in 0..count {
                table.push(read_string(input)?);
            }
        }
        let [users, items] = tables;
        let count = read_u64(input)? as usize;
        let mut index = SnapshotIndex {
            k,
            meta: IndexMeta {
                config_label,
                config_hash,
                min_step,
            },
            entry_user: Vec::with_capacity(count),
            entry_step: Vec::with_capacity(count),
            entry_item: Vec::with_capacity(count),
            next_surprise: Vec::with_capacity(count),
            next_rating: Vec::with_capacity(count),
            preferences: Vec::with_capacity(count * k),
            users,
            items,
        };
        for _ in 0..count {
            let user = read_u32(input)?;
            let step = read_u32(input)?;
            let item = read_u32(input)?;
            let _reserved = read_u32(input)?;
            if user as usize >= index.users.len() || item as usize >= index.items.len() {
                return Err(bad("record references unknown id"));
            }
            index.entry_user.push(user);
            index.entry_step.push(step);
            index.entry_item.push(item);
            index.next_surprise.push(read_f64(input)?);
            index.next_rating.push(read_f64(input)?);
            for _ in 0..k {
                index.preferences.push(read_f64(input)?);
            }
        }
        let sorted = (1..count).all(|e| {
            (index.entry_user[e - 1], index.entry_step[e - 1]) < (index.entry_user[e], index.entry_step[e])
        });
        if !sorted {
            return Err(bad("records are not sorted by (user, step)"));
        }
        Ok(index)
    }
}

/// One snapshot per (user, step) with `step >= min_step` and a successor step.
///
/// `surprise_runs` supply next-item surprise and rating; `preference_runs`
/// supply the preference vectors. Pass the same runs twice for a single model.
pub fn build_index(
    surprise_runs: &[UserRun],
    preference_runs: &[UserRun],
    min_step: usize,
    meta: IndexMeta,
) -> Result<SnapshotIndex> {
    let preferences: BTreeMap<&str, &UserRun> =
        preference_runs.iter().map(|r| (r.user_id.as_str(), r)).collect();
    let mut k = None;
    let mut snapshots = Vec::new();
    for run in surprise_runs {
        let pref_run = preferences
            .get(run.user_id.as_str())
            .ok_or_else(|| Error::UnknownUser(run.user_id.clone()))?;
        if pref_run.steps.len() != run.steps.len() {
            return Err(Error::DimensionMismatch {
                expected: run.steps.len(),
                found: pref_run.steps.len(),
            });
        }
        for j in min_step.max(1)..run.steps.len() {
            let preference = &pref_run.steps[j - 1].preference;
            let expected = *k.get_or_insert(preference.len());
            if preference.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: preference.len(),
                });
            }
            let next = &run.steps[j];
            snapshots.push(Snapshot {
                user_id: run.user_id.clone(),
                step: j,
                preference: preference.as_slice().to_vec(),
                next_surprise: next.surprise,
                next_rating_centered: next.centered_rating,
                next_item_id: next.item_id.clone(),
            });
        }
    }
    SnapshotIndex::from_snapshots(k.unwrap_or(0), snapshots, meta)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    distance: f64,
    squared: f64,
    entry: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.entry.cmp(&other.entry))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `n` snapshots nearest to `query`, ascending by distance, ties by
/// `(user_id, step)`; snapshots of `exclude_user` are skipped.
pub fn query_top_n<'a>(
    index: &'a SnapshotIndex,
    query: &[f64],
    n: usize,
    exclude_user: Option<&str>,
) -> Result<Vec<(SnapshotRef<'a>, f64)>> {
    if index.is_empty() || n == 0 {
        return Ok(Vec::new());
    }
    if query.len() != index.k {
        return Err(Error::DimensionMismatch {
            expected: index.k,
            found: query.len(),
        });
    }
    let excluded = exclude_user.map_or(0..0, |u| index.user_range(u));
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(n + 1);
    let mut worst_squared = f64::INFINITY;
    let k = index.k;
    for (entry, row) in index.preferences.chunks_exact(k.max(1)).enumerate() {
        if excluded.contains(&entry) {
            continue;
        }
        let squared = if k == 0 { 0.0 } else { squared_l2(row, query) };
        // sqrt is monotone and entries arrive in tie-break order, so a squared
        // distance at or above the current worst can never displace it.
        if heap.len() == n && squared >= worst_squared {
            continue;
        }
        let candidate = Candidate {
            distance: squared.sqrt(),
            squared,
            entry,
        };
        if heap.len() < n {
            heap.push(candidate);
        } else if candidate < *heap.peek().unwrap() {
            heap.pop();
            heap.push(candidate);
        } else {
            continue;
        }
        if heap.len() == n {
            worst_squared = heap.peek().unwrap().squared;
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| (index.get(c.entry), c.distance))
        .collect())
}

/// Among the `n` nearest snapshots of other users, those closer than `tau_d`
/// whose next item was rated positively; returns the one whose next item was
/// most surprising, or `None`.
pub fn find_serendipity<'a>(
    index: &'a SnapshotIndex,
    user_id: &str,
    query: &[f64],
    tau_d: f64,
    n: usize,
) -> Result<Option<(SnapshotRef<'a>, f64)>> {
    let neighbors = query_top_n(index, query, n, Some(user_id))?;
    Ok(select_serendipitous(neighbors.into_iter(), tau_d))
}

/// Filter-and-argmax over an ascending neighbor list; ties in surprise keep
/// the earlier `(user_id, step)`.
pub fn select_serendipitous<'a>(
    neighbors: impl Iterator<Item = (SnapshotRef<'a>, f64)>,
    tau_d: f64,
) -> Option<(SnapshotRef<'a>, f64)> {
    let mut best: Option<(SnapshotRef<'a>, f64)> = None;
    for (snapshot, distance) in neighbors {
        if distance >= tau_d || snapshot.next_rating_centered <= 0.0 {
            continue;
        }
        let better = match &best {
            None => true,
            Some((current, _)) => match snapshot.next_surprise.total_cmp(&current.next_surprise) {
                Ordering::Greater => true,
                Ordering::Equal => snapshot.entry < current.entry,
                Ordering::Less => false,
            },
        };
        if better {
            best = Some((snapshot, distance));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StepRecord;
    use nalgebra::DVector;

    fn snap(user: &str, step: usize, pref: &[f64], surprise: f64, rating: f64) -> Snapshot {
        Snapshot {
            user_id: user.into(),
            step,
            preference: pref.to_vec(),
            next_surprise: surprise,
            next_rating_centered: rating,
            next_item_id: format!("{user}-{}", step + 1),
        }
    }

    fn index(snaps: Vec<Snapshot>) -> SnapshotIndex {
        let k = snaps.first().map_or(1, |s| s.preference.len());
        SnapshotIndex::from_snapshots(k, snaps, IndexMeta::new("test", 1)).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(preference_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_close!(preference_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2f64.sqrt(), 1e-15);
        assert_eq!(preference_distance(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(preference_distance(&[1.0], &[1.0, 2.0]).is_err());
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.3).collect();
        let b: Vec<f64> = (0..11).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert_close!(preference_distance(&a, &b).unwrap(), naive, 1e-12);
    }

    fn run(user: &str, len: usize) -> UserRun {
        UserRun {
            user_id: user.into(),
            steps: (1..=len)
                .map(|t| StepRecord {
                    step: t,
                    item_id: format!("{user}-{t}"),
                    stars: 4,
                    centered_rating: 1.0,
                    predicted_rating: 0.0,
                    surprise: t as f64,
                    serendipity: t as f64,
                    preference: DVector::from_element(2, t as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn build_index_counts() {
        let one = [run("a", 20)];
        let idx = build_index(&one, &one, 15, IndexMeta::new("m", 15)).unwrap();
        assert_eq!(idx.len(), 5);
        let steps: Vec<usize> = idx.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![15, 16, 17, 18, 19]);
        let first = idx.get(0);
        assert_eq!(first.next_surprise, 16.0);
        assert_eq!(first.next_item_id, "a-16");
        assert_eq!(first.preference, &[15.0, 15.0]);

        let short = [run("b", 15)];
        assert_eq!(build_index(&short, &short, 15, IndexMeta::new("m", 15)).unwrap().len(), 0);

        let two = [run("a", 20), run("b", 20)];
        assert_eq!(build_index(&two, &two, 15, IndexMeta::new("m", 15)).unwrap().len(), 10);
    }

    #[test]
    fn build_index_rejects_mixed_dimensions() {
        let mut runs = vec![run("a", 5), run("b", 5)];
        for s in &mut runs[1].steps {
            s.preference = DVector::zeros(3);
        }
        assert!(matches!(
            build_index(&runs, &runs, 1, IndexMeta::new("m", 1)),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn top_n_examples() {
        let idx = index(vec![
            snap("c", 1, &[0.3], 0.0, 1.0),
            snap("a", 1, &[0.1], 0.0, 1.0),
            snap("b", 1, &[0.2], 0.0, 1.0),
        ]);
        let top = query_top_n(&idx, &[0.0], 2, None).unwrap();
        let users: Vec<&str> = top.iter().map(|(s, _)| s.user_id).collect();
        assert_eq!(users, vec!["a", "b"]);

        let top = query_top_n(&idx, &[0.0], 2, Some("a")).unwrap();
        let users: Vec<&str> = top.iter().map(|(s, _)| s.user_id).collect();
        assert_eq!(users, vec!["b", "c"]);

        let all = query_top_n(&idx, &[0.0], 10, None).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].1 <= w[1].1));

        let empty = SnapshotIndex::from_snapshots(1, vec![], IndexMeta::new("m", 1)).unwrap();
        assert!(query_top_n(&empty, &[0.0], 3, None).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_user_then_step() {
        let idx = index(vec![
            snap("b", 2, &[1.0], 0.0, 1.0),
            snap("b", 1, &[-1.0], 0.0, 1.0),
            snap("a", 7, &[1.0], 0.0, 1.0),
        ]);
        let top = query_top_n(&idx, &[0.0], 3, None).unwrap();
        let keys: Vec<(&str, usize)> = top.iter().map(|(s, _)| (s.user_id, s.step)).collect();
        assert_eq!(keys, vec![("a", 7), ("b", 1), ("b", 2)]);
    }

    #[test]
    fn find_serendipity_examples() {
        let far = index(vec![snap("v", 1, &[5.0], 0.9, 1.0)]);
        assert!(find_serendipity(&far, "u", &[0.0], 1.0, 5).unwrap().is_none());

        let idx = index(vec![
            snap("v", 1, &[0.1], 0.4, 1.0),
            snap("w", 1, &[0.2], 0.9, 2.0),
            snap("x", 1, &[0.3], 0.1, 1.0),
        ]);
        let (best, _) = find_serendipity(&idx, "u", &[0.0], 1.0, 3).unwrap().unwrap();
        assert_eq!(best.user_id, "w");

        let idx = index(vec![
            snap("v", 1, &[0.1], 0.9, -1.0),
            snap("w", 1, &[0.2], 0.2, 1.0),
        ]);
        let (best, d) = find_serendipity(&idx, "u", &[0.0], 1.0, 2).unwrap().unwrap();
        assert_eq!(best.user_id, "w");
        assert_close!(d, 0.2, 1e-15);

        // The reference user's own snapshots never come back.
        let own = index(vec![snap("u", 1, &[0.0], 5.0, 2.0)]);
        assert!(find_serendipity(&own, "u", &[0.0], 1.0, 5).unwrap().is_none());
    }

    #[test]
    fn cache_round_trip_is_byte_stable() {
        let idx = index(vec![
            snap("b", 3, &[0.25, -1.0], 0.5, 1.0),
            snap("a", 1, &[0.5, 2.0], 0.125, -2.0),
        ]);
        let mut first = Vec::new();
        idx.encode(&mut first).unwrap();
        let decoded = SnapshotIndex::decode(&mut first.as_slice()).unwrap();
        assert_eq!(decoded, idx);
        let mut second = Vec::new();
        decoded.encode(&mut second).unwrap();
        assert_eq!(first, second);

        first[0] = b'X';
        assert!(matches!(
            SnapshotIndex::decode(&mut first.as_slice()),
            Err(Error::InvalidCache(_))
        ));
    }
}
