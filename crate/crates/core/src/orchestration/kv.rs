// SPDX-License-Identifier: Apache-2.0

//! Versioned key-value repository with compare-and-swap writes and prefix
//! watches. It is the only state shared between domain orchestrators.

use std::collections::{BTreeMap, VecDeque};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("version conflict on {key}: expected {expected}, found {actual}")]
    Conflict { key: String, expected: u64, actual: u64 },
    #[error("no record under {0}")]
    Missing(String),
    #[error("undecodable payload under {key}: {source}")]
    Decode {
        key: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvRecord {
    pub key: String,
    pub value: String,
    /// Starts at 1 on first write and grows by one per write.
    pub version: u64,
}

/// One committed write as seen by a watcher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchEvent {
    pub key: String,
    pub value: String,
    pub version: u64,
    /// Repository-wide write counter at the time of the write.
    pub revision: u64,
}

impl WatchEvent {
    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, KvError> {
        serde_json::from_str(&self.value).map_err(|source| KvError::Decode {
            key: self.key.clone(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubscriberId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Subscriber {
    prefix: String,
    queue: VecDeque<WatchEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvRepository {
    records: BTreeMap<String, KvRecord>,
    revision: u64,
    clock: u64,
    subscribers: BTreeMap<SubscriberId, Subscriber>,
    next_subscriber: u64,
    /// Key prefix → number of upcoming CAS calls that lose to a competing write.
    contention: BTreeMap<String, u32>,
}

impl KvRepository {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of successful writes so far.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Logical clock in scheduler ticks.
    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn advance_clock(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn get(&self, key: &str) -> Option<&KvRecord> {
        self.records.get(key)
    }

    /// Current version of `key`; 0 when absent.
    pub fn version(&self, key: &str) -> u64 {
        self.records.get(key).map_or(0, |r| r.version)
    }

    pub fn get_json<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.records.get(key) {
            None => Ok(None),
            Some(r) => serde_json::from_str(&r.value)
                .map(Some)
                .map_err(|source| KvError::Decode {
                    key: key.to_owned(),
                    source,
                }),
        }
    }

    /// Writes `value` iff the current version equals `expected` (0 for an
    /// absent key). Returns the new version.
    pub fn compare_and_swap(&mut self, key: &str, expected: u64, value: String) -> Result<u64, KvError> {
        if let Some(n) = self.contended(key) {
            // a competing writer gets there first
            let current = self.records.get(key).map(|r| r.value.clone()).unwrap_or_default();
            self.commit(key, current);
            self.contention.insert(n.0, n.1 - 1);
            self.contention.retain(|_, c| *c > 0);
        }
        let actual = self.version(key);
        if actual != expected {
            return Err(KvError::Conflict {
                key: key.to_owned(),
                expected,
                actual,
            });
        }
        Ok(self.commit(key, value))
    }

    pub fn cas_json<T: Serialize>(&mut self, key: &str, expected: u64, value: &T) -> Result<u64, KvError> {
        let s = serde_json::to_string(value).expect("payloads serialize");
        self.compare_and_swap(key, expected, s)
    }

    /// Unconditional write. Returns the new version.
    pub fn put(&mut self, key: &str, value: String) -> u64 {
        self.commit(key, value)
    }

    pub fn put_json<T: Serialize>(&mut self, key: &str, value: &T) -> u64 {
        self.put(key, serde_json::to_string(value).expect("payloads serialize"))
    }

    fn contended(&self, key: &str) -> Option<(String, u32)> {
        self.contention
            .iter()
            .find(|(p, c)| key.starts_with(p.as_str()) && **c > 0)
            .map(|(p, c)| (p.clone(), *c))
    }

    fn commit(&mut self, key: &str, value: String) -> u64 {
        self.revision += 1;
        let rec = self.records.entry(key.to_owned()).or_insert_with(|| KvRecord {
            key: key.to_owned(),
            value: String::new(),
            version: 0,
        });
        rec.version += 1;
        rec.value = value;
        let ev = WatchEvent {
            key: key.to_owned(),
            value: rec.value.clone(),
            version: rec.version,
            revision: self.revision,
        };
        for sub in self.subscribers.values_mut() {
            if key.starts_with(&sub.prefix) {
                sub.queue.push_back(ev.clone());
            }
        }
        rec.version
    }

    /// Records whose key starts with `prefix`, in key order.
    pub fn scan_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a KvRecord> + 'a {
        self.records
            .range(prefix.to_owned()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(_, r)| r)
    }

    /// Subscribes to every future write under `prefix`.
    pub fn watch(&mut self, prefix: &str) -> SubscriberId {
        let id = SubscriberId(self.next_subscriber);
        self.next_subscriber += 1;
        self.subscribers.insert(
            id,
            Subscriber {
                prefix: prefix.to_owned(),
                queue: VecDeque::new(),
            },
        );
        id
    }

    pub fn unwatch(&mut self, id: SubscriberId) {
        self.subscribers.remove(&id);
    }

    /// Takes every pending event for `id` in revision order.
    pub fn drain(&mut self, id: SubscriberId) -> Result<Vec<WatchEvent>, KvError> {
        self.subscribers
            .get_mut(&id)
            .map(|s| s.queue.drain(..).collect())
            .ok_or(KvError::UnknownSubscriber(id.0))
    }

    pub fn pending(&self, id: SubscriberId) -> usize {
        self.subscribers.get(&id).map_or(0, |s| s.queue.len())
    }

    /// Makes the next `count` CAS calls on keys under `prefix` fail after a
    /// competing write bumps the version.
    pub fn inject_contention(&mut self, prefix: &str, count: u32) {
        if count > 0 {
            self.contention.insert(prefix.to_owned(), count);
        }
    }
}
