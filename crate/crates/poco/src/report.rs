//! Recall tables as aligned text and as CSV, and ranked query listings.

use std::fmt::Write;

use poco_core::retrieve::{RecallTable, RetrievalResult};

/// ```text
/// k  recall  matched  queries  database
/// 1  0.6250       45       72        28
/// ```
pub fn recall_text(t: &RecallTable) -> String {
    let mut s = String::from("k  recall  matched  queries  database\n");
    for (i, k) in t.ks.iter().enumerate() {
        writeln!(
            s,
            "{k:<2} {:>7.4}  {:>7}  {:>7}  {:>8}",
            t.recall(i),
            t.matched[i],
            t.queries,
            t.database
        )
        .unwrap();
    }
    s
}

pub fn recall_csv(t: &RecallTable) -> String {
    let mut s = String::from("k,recall,matched,queries,database\n");
    for (i, k) in t.ks.iter().enumerate() {
        writeln!(
            s,
            "{k},{},{},{},{}",
            t.recall(i),
            t.matched[i],
            t.queries,
            t.database
        )
        .unwrap();
    }
    s
}

/// Parses [`recall_csv`] output back into a table.
pub fn parse_recall_csv(text: &str) -> Option<RecallTable> {
    let mut lines = text.lines();
    if lines.next()? != "k,recall,matched,queries,database" {
        return None;
    }
    let (mut ks, mut matched, mut queries, mut database) = (Vec::new(), Vec::new(), 0, 0);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return None;
        }
        ks.push(f[0].parse().ok()?);
        matched.push(f[2].parse().ok()?);
        queries = f[3].parse().ok()?;
        database = f[4].parse().ok()?;
    }
    Some(RecallTable {
        ks,
        matched,
        queries,
        database,
    })
}

/// One row per result: rank, frame id, scene id, similarity.
pub fn ranking_text(r: &RetrievalResult, scene_of: impl Fn(&str) -> String) -> String {
    let mut s = format!(
        "query {}\nrank  frame_id              scene_id          similarity\n",
        r.query_id
    );
    for (i, e) in r.ranked.iter().enumerate() {
        writeln!(
            s,
            "{:>4}  {:<20}  {:<16}  {:>10.6}",
            i + 1,
            e.frame_id,
            scene_of(&e.frame_id),
            e.similarity
        )
        .unwrap();
    }
    s
}
