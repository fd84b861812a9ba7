//! Query-log domain types, TSV ingestion, session segmentation, and the
//! history/test split.
//!
//! The log is a headerless UTF-8 TSV with seven columns:
//! `user_id, session_id, query, timestamp, doc_id, title, click_tag`.
//! A query that shows several documents appears as several lines sharing
//! `(user_id, session_id, query, timestamp)`.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sessions without an explicit id are split when consecutive interactions are
/// further apart than this.
pub const SESSION_GAP_SECS: i64 = 1800;

/// Share of each user's interactions kept as history.
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.85;

/// Parsing aborts once malformed lines exceed this share of all lines.
pub const MAX_MALFORMED_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRef {
    pub doc_id: String,
    pub title: String,
    #[serde(default)]
    pub body: String,
}

impl DocumentRef {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    /// Title and body joined; the text every scorer sees.
    pub fn text(&self) -> String {
        if self.body.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.body)
        }
    }
}

/// One logged search event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub query: String,
    pub timestamp: i64,
    pub session_id: String,
    pub clicked: Vec<String>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub interactions: Vec<Interaction>,
}

impl Session {
    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// A user's history: earlier sessions (long-term) plus the session in
/// progress at the split point (short-term, possibly empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub long_term: Vec<Session>,
    pub short_term: Session,
}

impl UserHistory {
    pub fn empty(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            long_term: Vec::new(),
            short_term: Session::default(),
        }
    }

    pub fn long_term_interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.long_term.iter().flat_map(|s| s.interactions.iter())
    }

    /// Every interaction, long-term first, in time order.
    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.long_term_interactions()
            .chain(self.short_term.interactions.iter())
    }

    pub fn len(&self) -> usize {
        self.interactions().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rebuilds a history from a flat, time-ordered interaction list. The last
    /// session becomes the short-term session when `open_session` names it.
    pub fn from_interactions(
        user_id: impl Into<String>,
        interactions: Vec<Interaction>,
        open_session: Option<&str>,
    ) -> Self {
        let mut sessions = segment_sessions(interactions);
        let short_term = match (sessions.last(), open_session) {
            (Some(last), Some(open)) if last.session_id == open && !open.is_empty() => {
                sessions.pop().unwrap_or_default()
            }
            _ => Session::default(),
        };
        Self {
            user_id: user_id.into(),
            long_term: sessions,
            short_term,
        }
    }

    /// Keeps only the most recent `keep` interactions, re-segmenting sessions.
    pub fn most_recent(&self, keep: usize) -> Self {
        let all: Vec<Interaction> = self.interactions().cloned().collect();
        let start = all.len().saturating_sub(keep);
        let open = (!self.short_term.is_empty()).then_some(self.short_term.session_id.as_str());
        Self::from_interactions(self.user_id.clone(), all[start..].to_vec(), open)
    }
}

/// One held-out query with its candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestQuery {
    pub user_id: String,
    pub session_id: String,
    pub query: String,
    pub timestamp: i64,
    /// Original engine order.
    pub candidates: Vec<DocumentRef>,
    pub relevant: BTreeSet<String>,
    /// Documents the user skipped when this query was logged.
    #[serde(default)]
    pub skipped: Vec<String>,
}

impl TestQuery {
    pub fn candidate_ids(&self) -> Vec<String> {
        self.candidates.iter().map(|d| d.doc_id.clone()).collect()
    }

    /// The interaction this query was cut from.
    pub fn as_interaction(&self) -> Interaction {
        Interaction {
            query: self.query.clone(),
            timestamp: self.timestamp,
            session_id: self.session_id.clone(),
            clicked: self.relevant.iter().cloned().collect(),
            skipped: self.skipped.clone(),
        }
    }
}

/// A test-period interaction before candidate generation attaches a pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldOutQuery {
    pub user_id: String,
    pub interaction: Interaction,
}

/// All interactions of one user, time-ordered, as read from the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserLog {
    pub user_id: String,
    pub interactions: Vec<Interaction>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLog {
    pub users: Vec<UserLog>,
    /// doc_id -> title as seen in the log (first occurrence wins).
    pub titles: HashMap<String, String>,
    pub total_lines: usize,
    /// 1-based line numbers that were skipped.
    pub malformed_lines: Vec<usize>,
}

impl ParsedLog {
    pub fn interaction_count(&self) -> usize {
        self.users.iter().map(|u| u.interactions.len()).sum()
    }

    /// Histories over the whole log, with no test split.
    pub fn histories(&self) -> Vec<UserHistory> {
        self.users
            .iter()
            .map(|u| UserHistory::from_interactions(u.user_id.clone(), u.interactions.clone(), None))
            .collect()
    }
}

struct LogLine<'a> {
    user_id: &'a str,
    session_id: &'a str,
    query: &'a str,
    timestamp: i64,
    doc_id: &'a str,
    title: &'a str,
    clicked: bool,
}

fn parse_line(line: &str) -> Option<LogLine<'_>> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 7 {
        return None;
    }
    let timestamp: i64 = cols[3].trim().parse().ok()?;
    let clicked = match cols[6].trim() {
        "1" => true,
        "0" => false,
        _ => return None,
    };
    if timestamp < 0 || cols[0].is_empty() || cols[2].trim().is_empty() || cols[4].is_empty() {
        return None;
    }
    Some(LogLine {
        user_id: cols[0],
        session_id: cols[1],
        query: cols[2],
        timestamp,
        doc_id: cols[4],
        title: cols[5],
        clicked,
    })
}

/// Reads a seven-column TSV query log.
///
/// Lines are grouped by user, then by `(session, query, timestamp)`; click
/// tag 1 lines become clicked documents and tag 0 lines skipped ones, in line
/// order. A document tagged both ways counts as clicked.
pub fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    type GroupKey = (String, String, i64);
    struct UserAcc {
        groups: Vec<Interaction>,
        index: HashMap<GroupKey, usize>,
    }

    let mut users: Vec<(String, UserAcc)> = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut titles = HashMap::new();
    let mut total = 0usize;
    let mut malformed = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<log stream>", e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        total += 1;
        let Some(rec) = parse_line(line) else {
            malformed.push(lineno + 1);
            continue;
        };
        titles
            .entry(rec.doc_id.to_string())
            .or_insert_with(|| rec.title.to_string());

        let slot = *user_index.entry(rec.user_id.to_string()).or_insert_with(|| {
            users.push((
                rec.user_id.to_string(),
                UserAcc {
                    groups: Vec::new(),
                    index: HashMap::new(),
                },
            ));
            users.len() - 1
        });
        let acc = &mut users[slot].1;
        let key = (rec.session_id.to_string(), rec.query.to_string(), rec.timestamp);
        let gi = *acc.index.entry(key).or_insert_with(|| {
            acc.groups.push(Interaction {
                query: rec.query.to_string(),
                timestamp: rec.timestamp,
                session_id: rec.session_id.to_string(),
                clicked: Vec::new(),
                skipped: Vec::new(),
            });
            acc.groups.len() - 1
        });
        let group = &mut acc.groups[gi];
        let doc = rec.doc_id.to_string();
        if rec.clicked {
            group.skipped.retain(|d| d != &doc);
            if !group.clicked.contains(&doc) {
                group.clicked.push(doc);
            }
        } else if !group.clicked.contains(&doc) && !group.skipped.contains(&doc) {
            group.skipped.push(doc);
        }
    }

    if total > 0 && malformed.len() as f64 > MAX_MALFORMED_SHARE * total as f64 {
        return Err(Error::MalformedLog {
            malformed: malformed.len(),
            total,
            lines: malformed.iter().take(20).copied().collect(),
        });
    }
    if !malformed.is_empty() {
        log::warn!("skipped {} malformed log lines", malformed.len());
    }

    let users = users
        .into_iter()
        .map(|(user_id, acc)| {
            let mut interactions = acc.groups;
            // stable: equal timestamps keep first-seen order
            interactions.sort_by_key(|i| i.timestamp);
            UserLog {
                user_id,
                interactions,
            }
        })
        .collect();

    Ok(ParsedLog {
        users,
        titles,
        total_lines: total,
        malformed_lines: malformed,
    })
}

/// Writes interactions back in the log format: clicked lines first, then
/// skipped lines, per interaction.
pub fn serialize_log<W: Write>(
    users: &[UserLog],
    titles: &HashMap<String, String>,
    mut out: W,
) -> std::io::Result<()> {
    for user in users {
        for it in &user.interactions {
            let lines = it
                .clicked
                .iter()
                .map(|d| (d, 1))
                .chain(it.skipped.iter().map(|d| (d, 0)));
            for (doc, tag) in lines {
                let title = titles.get(doc).map(String::as_str).unwrap_or("");
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    user.user_id, it.session_id, it.query, it.timestamp, doc, title, tag
                )?;
            }
        }
    }
    Ok(())
}

/// Groups time-ordered interactions into sessions. Consecutive interactions
/// share a session while their ids match; interactions without an id are
/// split on gaps longer than [`SESSION_GAP_SECS`].
pub fn segment_sessions(interactions: Vec<Interaction>) -> Vec<Session> {
    let mut sessions: Vec<Session> = Vec::new();
    for it in interactions {
        let starts_new = match sessions.last().and_then(|s| s.interactions.last()) {
            None => true,
            Some(prev) => {
                if prev.session_id != it.session_id {
                    true
                } else if it.session_id.is_empty() {
                    it.timestamp - prev.timestamp > SESSION_GAP_SECS
                } else {
                    false
                }
            }
        };
        if starts_new {
            sessions.push(Session {
                session_id: it.session_id.clone(),
                interactions: vec![it],
            });
        } else if let Some(last) = sessions.last_mut() {
            last.interactions.push(it);
        }
    }
    sessions
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitResult {
    pub histories: Vec<UserHistory>,
    pub held_out: Vec<HeldOutQuery>,
    /// Users dropped for having fewer than two interactions.
    pub excluded_users: Vec<String>,
}

/// Number of interactions kept as history out of `n`.
pub fn history_len(n: usize, fraction: f64) -> usize {
    // the epsilon keeps exact products such as 0.85 * 20 from flooring to 16
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Splits each user's time-ordered interactions: the first
/// `floor(fraction * n)` become history, the rest become held-out queries.
/// The session straddling the cut stays open as the short-term session.
pub fn split_history(users: &[UserLog], fraction: f64) -> Result<SplitResult> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut result = SplitResult::default();
    for user in users {
        let n = user.interactions.len();
        if n < 2 {
            log::warn!("user {} has {} interaction(s); excluded", user.user_id, n);
            result.excluded_users.push(user.user_id.clone());
            continue;
        }
        let cut = history_len(n, fraction);
        let (hist, test) = user.interactions.split_at(cut);
        let open = test.first().map(|i| i.session_id.as_str());
        result.histories.push(UserHistory::from_interactions(
            user.user_id.clone(),
            hist.to_vec(),
            open,
        ));
        result
            .held_out
            .extend(test.iter().cloned().map(|interaction| HeldOutQuery {
                user_id: user.user_id.clone(),
                interaction,
            }));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn it(q: &str, ts: i64, sid: &str) -> Interaction {
        Interaction {
            query: q.into(),
            timestamp: ts,
            session_id: sid.into(),
            clicked: vec![],
            skipped: vec![],
        }
    }

    #[test]
    fn empty_stream_parses_to_nothing() {
        let parsed = parse_log("".as_bytes()).unwrap();
        assert!(parsed.users.is_empty());
        assert_eq!(parsed.interaction_count(), 0);
    }

    #[test]
    fn single_line_is_one_clicked_interaction() {
        let parsed = parse_log("u1\ts1\tq\t100\td1\tt\t1\n".as_bytes()).unwrap();
        assert_eq!(parsed.users.len(), 1);
        let its = &parsed.users[0].interactions;
        assert_eq!(its.len(), 1);
        assert_eq!(its[0].clicked, vec!["d1"]);
        assert!(its[0].skipped.is_empty());
    }

    #[test]
    fn lines_sharing_a_group_merge() {
        let log = "u1\ts1\tcats\t100\td1\tt1\t1\n\
                   u1\ts1\tcats\t100\td2\tt2\t0\n\
                   u1\ts1\tcats\t100\td3\tt3\t0\n\
                   u1\ts1\tcats\t100\td4\tt4\t1\n";
        let parsed = parse_log(log.as_bytes()).unwrap();
        let its = &parsed.users[0].interactions;
        assert_eq!(its.len(), 1);
        assert_eq!(its[0].clicked, vec!["d1", "d4"]);
        assert_eq!(its[0].skipped, vec!["d2", "d3"]);
    }

    #[test]
    fn doc_tagged_both_ways_counts_as_clicked() {
        let log = "u\ts\tq\t1\td1\tt\t0\nu\ts\tq\t1\td1\tt\t1\n";
        let parsed = parse_log(log.as_bytes()).unwrap();
        let i = &parsed.users[0].interactions[0];
        assert_eq!(i.clicked, vec!["d1"]);
        assert!(i.skipped.is_empty());
    }

    #[test]
    fn too_many_malformed_lines_is_fatal() {
        let log = "u\ts\tq\t1\td1\tt\t1\ngarbage\nu\ts\tq\tnot-a-time\td\tt\t1\n";
        match parse_log(log.as_bytes()) {
            Err(Error::MalformedLog { malformed, lines, .. }) => {
                assert_eq!(malformed, 2);
                assert_eq!(lines, vec![2, 3]);
            }
            other => panic!("expected malformed-log error, got {other:?}"),
        }
    }

    #[test]
    fn few_malformed_lines_are_skipped() {
        let mut log = String::new();
        for i in 0..20 {
            log.push_str(&format!("u\ts\tq{i}\t{i}\td\tt\t1\n"));
        }
        log.push_str("u\ts\tq\t5\td\tt\t7\n");
        let parsed = parse_log(log.as_bytes()).unwrap();
        assert_eq!(parsed.malformed_lines, vec![21]);
        assert_eq!(parsed.interaction_count(), 20);
    }

    #[test]
    fn split_counts_follow_floor() {
        for (n, hist) in [(20, 17), (7, 5), (2, 1), (133, 113)] {
            let user = UserLog {
                user_id: "u".into(),
                interactions: (0..n).map(|i| it("q", i as i64, "s")).collect(),
            };
            let split = split_history(&[user], 0.85).unwrap();
            assert_eq!(split.histories[0].len(), hist, "n={n}");
            assert_eq!(split.held_out.len(), n - hist, "n={n}");
        }
    }

    #[test]
    fn single_interaction_user_is_excluded() {
        let user = UserLog {
            user_id: "lonely".into(),
            interactions: vec![it("q", 1, "s")],
        };
        let split = split_history(&[user], 0.85).unwrap();
        assert!(split.histories.is_empty());
        assert_eq!(split.excluded_users, vec!["lonely"]);
    }

    #[test]
    fn split_rejects_degenerate_fraction() {
        assert!(split_history(&[], 1.0).is_err());
        assert!(split_history(&[], 0.0).is_err());
    }

    #[test]
    fn cut_session_stays_open_as_short_term() {
        let user = UserLog {
            user_id: "u".into(),
            interactions: vec![it("a", 1, "s1"), it("b", 2, "s2"), it("c", 3, "s2"), it("d", 4, "s2")],
        };
        let split = split_history(&[user], 0.75).unwrap();
        let h = &split.histories[0];
        assert_eq!(h.long_term.len(), 1);
        assert_eq!(h.short_term.session_id, "s2");
        assert_eq!(h.short_term.interactions.len(), 2);
    }

    #[test]
    fn segmentation_follows_ids_then_gaps() {
        let same = segment_sessions(vec![it("a", 1, "s"), it("b", 2, "s"), it("c", 3, "s")]);
        assert_eq!(same.len(), 1);

        let ids = segment_sessions(vec![it("a", 1, "s1"), it("b", 2, "s1"), it("c", 3, "s2")]);
        assert_eq!(ids.iter().map(|s| s.interactions.len()).collect::<Vec<_>>(), vec![2, 1]);

        let gaps = segment_sessions(vec![it("a", 0, ""), it("b", 100, ""), it("c", 2100, "")]);
        assert_eq!(gaps.iter().map(|s| s.interactions.len()).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn most_recent_keeps_the_tail() {
        let all: Vec<_> = (0..100).map(|i| it("q", i, if i < 50 { "a" } else { "b" })).collect();
        let h = UserHistory::from_interactions("u", all, None);
        let recent = h.most_recent(10);
        let ts: Vec<i64> = recent.interactions().map(|i| i.timestamp).collect();
        assert_eq!(ts, (90..100).collect::<Vec<_>>());
    }
}
