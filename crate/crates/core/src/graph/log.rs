use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Result};

/// One raw event with external keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// An event with dense user/item indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// Timestamp-sorted, deduplicated interactions with dense id maps.
///
/// Dense ids are assigned in order of first appearance in the sorted log,
/// so the users (items) seen before any time `t` always form a prefix
/// `0..n` of the id space.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    records: Vec<Interaction>,
    user_keys: Vec<String>,
    item_keys: Vec<String>,
}

impl InteractionLog {
    /// Sorts stably by timestamp, drops exact duplicates and assigns ids.
    pub fn from_records(records: Vec<InteractionRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        let mut seen = HashSet::with_capacity(records.len());
        let mut unique: Vec<InteractionRecord> = records.into_iter().filter(|r| seen.insert(r.clone())).collect();
        unique.sort_by_key(|r| r.timestamp);

        let mut user_map: HashMap<String, usize> = HashMap::new();
        let mut item_map: HashMap<String, usize> = HashMap::new();
        let mut user_keys = Vec::new();
        let mut item_keys = Vec::new();
        let records = unique
            .into_iter()
            .map(|r| {
                let user = *user_map.entry(r.user_id.clone()).or_insert_with(|| {
                    user_keys.push(r.user_id.clone());
                    user_keys.len() - 1
                });
                let item = *item_map.entry(r.item_id.clone()).or_insert_with(|| {
                    item_keys.push(r.item_id.clone());
                    item_keys.len() - 1
                });
                Interaction {
                    user,
                    item,
                    timestamp: r.timestamp,
                }
            })
            .collect();
        Ok(Self {
            records,
            user_keys,
            item_keys,
        })
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn user_count(&self) -> usize {
        self.user_keys.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_keys.len()
    }

    pub fn user_key(&self, user: usize) -> &str {
        &self.user_keys[user]
    }

    pub fn item_key(&self, item: usize) -> &str {
        &self.item_keys[item]
    }

    pub fn first_timestamp(&self) -> i64 {
        self.records.first().map_or(0, |r| r.timestamp)
    }

    pub fn last_timestamp(&self) -> i64 {
        self.records.last().map_or(0, |r| r.timestamp)
    }

    /// Raw records with external keys, in log order.
    pub fn to_records(&self) -> Vec<InteractionRecord> {
        self.records
            .iter()
            .map(|r| InteractionRecord {
                user_id: self.user_keys[r.user].clone(),
                item_id: self.item_keys[r.item].clone(),
                timestamp: r.timestamp,
            })
            .collect()
    }

    /// Number of distinct users (items) appearing in `records[..end]`.
    pub(crate) fn known_counts(&self, end: usize) -> (usize, usize) {
        let mut users = 0;
        let mut items = 0;
        for r in &self.records[..end] {
            users = users.max(r.user + 1);
            items = items.max(r.item + 1);
        }
        (users, items)
    }
}

/// Parses the tab-separated `user<TAB>item<TAB>timestamp` format.
pub fn parse_interactions<R: Read>(reader: R) -> Result<InteractionLog> {
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(DataError::Parse {
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        let timestamp: i64 = fields[2].trim_end_matches('\r').parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("timestamp `{}` is not an integer", fields[2]),
        })?;
        if timestamp < 0 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("negative timestamp {timestamp}"),
            });
        }
        records.push(InteractionRecord {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            timestamp,
        });
    }
    InteractionLog::from_records(records)
}

pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionLog> {
    parse_interactions(File::open(path)?)
}

pub fn write_interactions(path: impl AsRef<Path>, records: &[InteractionRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(out, "{}\t{}\t{}", r.user_id, r.item_id, r.timestamp)?;
    }
    out.flush()?;
    Ok(())
}
