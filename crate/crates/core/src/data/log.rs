use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{DataError, ItemId, UserId};

/// One `(user, item, timestamp)` event with dense ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: u64,
}

/// A multiset of interactions plus the mapping between raw string keys and
/// dense ids. Dense ids follow first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    user_index: HashMap<String, UserId>,
    item_index: HashMap<String, ItemId>,
}

impl InteractionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event, assigning dense ids to unseen keys.
    pub fn push(&mut self, user: &str, item: &str, timestamp: u64) {
        let user = intern(&mut self.user_index, &mut self.user_keys, user);
        let item = intern(&mut self.item_index, &mut self.item_keys, item);
        self.interactions.push(Interaction {
            user,
            item,
            timestamp,
        });
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn user_keys(&self) -> &[String] {
        &self.user_keys
    }

    pub fn item_keys(&self) -> &[String] {
        &self.item_keys
    }

    pub fn user_id(&self, key: &str) -> Option<UserId> {
        self.user_index.get(key).copied()
    }

    pub fn item_id(&self, key: &str) -> Option<ItemId> {
        self.item_index.get(key).copied()
    }

    pub fn user_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_users()];
        for it in &self.interactions {
            counts[it.user] += 1;
        }
        counts
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items()];
        for it in &self.interactions {
            counts[it.item] += 1;
        }
        counts
    }

    /// Writes the log back out in the tab-separated input format.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for it in &self.interactions {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.user_keys[it.user], self.item_keys[it.item], it.timestamp
            )?;
        }
        out.flush()
    }

    /// Keeps the events for which `keep` holds and renumbers the survivors.
    fn retain(&self, mut keep: impl FnMut(&Interaction) -> bool) -> InteractionLog {
        let mut out = InteractionLog::new();
        for it in self.interactions.iter().filter(|it| keep(it)) {
            out.push(
                &self.user_keys[it.user],
                &self.item_keys[it.item],
                it.timestamp,
            );
        }
        out
    }
}

fn intern(index: &mut HashMap<String, usize>, keys: &mut Vec<String>, key: &str) -> usize {
    if let Some(&id) = index.get(key) {
        return id;
    }
    let id = keys.len();
    keys.push(key.to_owned());
    index.insert(key.to_owned(), id);
    id
}

/// Parses `user<TAB>item<TAB>timestamp` lines. Blank lines are skipped.
pub fn parse_interactions<R: BufRead>(input: R) -> Result<InteractionLog, DataError> {
    let mut log = InteractionLog::new();
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|source| DataError::Io {
            context: format!("reading line {line_no}"),
            source,
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let timestamp: u64 = fields[2].trim().parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("timestamp {:?} is not a non-negative integer", fields[2]),
        })?;
        log.push(fields[0], fields[1], timestamp);
    }
    Ok(log)
}

/// One filtering pass: drops every event whose user or item has fewer than
/// `min_count` events in `log`.
pub fn core_filter_pass(log: &InteractionLog, min_count: usize) -> InteractionLog {
    let users = log.user_counts();
    let items = log.item_counts();
    log.retain(|it| users[it.user] >= min_count && items[it.item] >= min_count)
}

/// Repeats [`core_filter_pass`] until every remaining user and item has at
/// least `min_count` events.
pub fn core_filter(log: &InteractionLog, min_count: usize) -> InteractionLog {
    let mut current = core_filter_pass(log, min_count);
    loop {
        let next = core_filter_pass(&current, min_count);
        if next.len() == current.len() {
            return current;
        }
        current = next;
    }
}
