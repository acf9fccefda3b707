//! Verdict cache keyed by the stable hash of a semantic key, with
//! single-flight resolution and optional JSON persistence.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::{CausalVerdict, OracleError, Result, Votes};
use crate::graph::Relation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub relation: Relation,
    pub votes: Votes,
    pub rounds: u32,
    #[serde(default)]
    pub low_confidence: bool,
}

impl From<&CausalVerdict> for CacheEntry {
    fn from(v: &CausalVerdict) -> Self {
        Self { relation: v.relation, votes: v.votes, rounds: v.rounds, low_confidence: v.low_confidence }
    }
}

impl From<&CacheEntry> for CausalVerdict {
    fn from(e: &CacheEntry) -> Self {
        Self {
            relation: e.relation,
            votes: e.votes,
            rounds: e.rounds,
            low_confidence: e.low_confidence,
            transcript: Vec::new(),
        }
    }
}

#[derive(Default)]
struct State {
    entries: BTreeMap<String, CacheEntry>,
    inflight: HashSet<String>,
}

#[derive(Default)]
pub struct SemanticCache {
    state: Mutex<State>,
    ready: Condvar,
    path: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl SemanticCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Cache backed by `path`; an absent file starts empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| OracleError::Cache(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(OracleError::Cache(format!("{}: {e}", path.display()))),
        };
        Ok(Self {
            state: Mutex::new(State { entries, inflight: HashSet::new() }),
            path: Some(path),
            ..Default::default()
        })
    }

    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let bytes = {
            let st = self.state.lock().expect("cache lock");
            serde_json::to_vec_pretty(&st.entries).expect("entries serialize")
        };
        std::fs::write(path, bytes).map_err(|e| OracleError::Cache(format!("{}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn get(&self, hash: &str) -> Option<CacheEntry> {
        self.state.lock().expect("cache lock").entries.get(hash).cloned()
    }

    /// Returns the stored verdict, or runs `resolve` if no other thread is
    /// already resolving this key; otherwise waits for that thread.
    pub fn get_or_resolve(
        &self,
        hash: &str,
        resolve: impl FnOnce() -> Result<CausalVerdict>,
    ) -> Result<(CausalVerdict, bool)> {
        let mut st = self.state.lock().expect("cache lock");
        loop {
            if let Some(e) = st.entries.get(hash) {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok((CausalVerdict::from(e), true));
            }
            if !st.inflight.contains(hash) {
                break;
            }
            st = self.ready.wait(st).expect("cache lock");
        }
        st.inflight.insert(hash.to_string());
        drop(st);

        self.misses.fetch_add(1, Ordering::SeqCst);
        let out = resolve();
        let mut st = self.state.lock().expect("cache lock");
        st.inflight.remove(hash);
        if let Ok(v) = &out {
            st.entries.insert(hash.to_string(), CacheEntry::from(v));
        }
        drop(st);
        self.ready.notify_all();
        out.map(|v| (v, false))
    }
}
