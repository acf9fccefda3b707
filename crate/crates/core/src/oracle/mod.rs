//! Pairwise causal questions: prompting, majority voting over rotated
//! option orders, and a semantic cache shared across instances.

mod backend;
mod cache;
mod http;
mod prompt;

pub use backend::{AnswerBackend, BackendError, CountingBackend, GroundTruthOracle, NoisyOracle};
pub use cache::{CacheEntry, SemanticCache};
pub use http::{HttpBackend, HttpConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL, ENV_TEMPERATURE};
pub use prompt::{build_prompt, extract_letter, CausalQuery, MetricKey, SemanticKey, LAST_LINE, STEP_BY_STEP};

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::CandidatePair;
use crate::graph::Relation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("query for pair `{pair_id}` failed: {source}")]
    Query { pair_id: String, source: BackendError },
    #[error("max_rounds must be odd and at least 3, got {0}")]
    Rounds(usize),
    #[error("cache file: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Votes {
    pub a_causes_b: u32,
    pub none: u32,
    pub b_causes_a: u32,
}

impl Votes {
    pub fn get(&self, r: Relation) -> u32 {
        match r {
            Relation::ACausesB => self.a_causes_b,
            Relation::None => self.none,
            Relation::BCausesA => self.b_causes_a,
        }
    }

    fn bump(&mut self, r: Relation) {
        match r {
            Relation::ACausesB => self.a_causes_b += 1,
            Relation::None => self.none += 1,
            Relation::BCausesA => self.b_causes_a += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalVerdict {
    pub relation: Relation,
    pub votes: Votes,
    /// Rounds issued, including discarded ones.
    pub rounds: u32,
    pub low_confidence: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolveConfig {
    pub max_rounds: usize,
    /// Extra attempts after a transport failure.
    pub transport_retries: usize,
}

impl Default for ResolveConfig {
    fn default() -> Self {
        Self { max_rounds: 3, transport_retries: 2 }
    }
}

impl ResolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds < 3 || self.max_rounds.is_multiple_of(2) {
            return Err(OracleError::Rounds(self.max_rounds));
        }
        Ok(())
    }
}

/// Strict-majority winner with at least two votes.
pub fn majority(votes: &Votes, issued: u32) -> Option<Relation> {
    Relation::CANONICAL
        .into_iter()
        .find(|&r| votes.get(r) >= 2 && 2 * votes.get(r) > issued)
}

fn ask(backend: &dyn AnswerBackend, q: &CausalQuery, cfg: &ResolveConfig) -> Result<String> {
    let mut last = None;
    for _ in 0..=cfg.transport_retries {
        match backend.answer(q) {
            Ok(reply) => return Ok(reply),
            Err(e @ BackendError::Config(_)) => {
                return Err(OracleError::Query { pair_id: q.pair_id.clone(), source: e })
            }
            Err(e) => last = Some(e),
        }
    }
    Err(OracleError::Query {
        pair_id: q.pair_id.clone(),
        source: last.expect("at least one attempt"),
    })
}

/// Repeats the question with rotated options until one meaning holds a
/// strict majority of rounds issued.
pub fn resolve(pair: &CandidatePair, backend: &dyn AnswerBackend, cfg: &ResolveConfig) -> Result<CausalVerdict> {
    cfg.validate()?;
    let mut votes = Votes::default();
    let mut issued = 0u32;
    let mut transcript = Vec::new();
    for round in 0..cfg.max_rounds {
        let q = build_prompt(pair, round);
        let reply = ask(backend, &q, cfg)?;
        let mut letter = extract_letter(&reply);
        transcript.push(reply);
        if letter.is_none() {
            let reply = ask(backend, &q.reprompted(), cfg)?;
            letter = extract_letter(&reply);
            transcript.push(reply);
        }
        issued += 1;
        if let Some(meaning) = letter.and_then(|l| q.letter_meaning(l)) {
            votes.bump(meaning);
        }
        if let Some(winner) = majority(&votes, issued) {
            return Ok(CausalVerdict { relation: winner, votes, rounds: issued, low_confidence: false, transcript });
        }
    }
    Ok(CausalVerdict { relation: Relation::None, votes, rounds: issued, low_confidence: true, transcript })
}

/// Cache lookup, falling back to [`resolve`] on a miss. Returns whether the
/// verdict came from the cache.
pub fn cached_resolve(
    pair: &CandidatePair,
    backend: &dyn AnswerBackend,
    cache: &SemanticCache,
    cfg: &ResolveConfig,
) -> Result<(CausalVerdict, bool)> {
    let hash = SemanticKey::of(pair).stable_hash();
    cache.get_or_resolve(&hash, || resolve(pair, backend, cfg))
}

/// JSON-lines audit log of resolved (non-cached) questions.
pub struct Transcript {
    out: Mutex<Box<dyn Write + Send>>,
}

impl Transcript {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        Self { out: Mutex::new(Box::new(out)) }
    }

    fn record(&self, pair: &CandidatePair, verdict: &CausalVerdict, cached: bool) {
        let line = serde_json::json!({
            "pair_id": pair.id(),
            "key": SemanticKey::of(pair).stable_hash(),
            "cached": cached,
            "relation": verdict.relation,
            "votes": verdict.votes,
            "rounds": verdict.rounds,
            "low_confidence": verdict.low_confidence,
            "replies": verdict.transcript,
        });
        let mut out = self.out.lock().expect("transcript lock");
        if let Err(e) = writeln!(out, "{line}") {
            log::warn!("transcript write failed: {e}");
        }
    }
}

/// Resolves every pair with at most `parallelism` concurrent workers.
/// Verdicts come back in pair order.
pub fn resolve_all(
    pairs: &[CandidatePair],
    backend: &dyn AnswerBackend,
    cache: &SemanticCache,
    cfg: &ResolveConfig,
    parallelism: usize,
    transcript: Option<&Transcript>,
) -> Result<Vec<CausalVerdict>> {
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<CausalVerdict>>>> = pairs.iter().map(|_| Mutex::new(None)).collect();
    let workers = parallelism.clamp(1, pairs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pairs.len() {
                    break;
                }
                let out = cached_resolve(&pairs[i], backend, cache, cfg).map(|(v, hit)| {
                    if let Some(t) = transcript {
                        t.record(&pairs[i], &v, hit);
                    }
                    v
                });
                let failed = out.is_err();
                *slots[i].lock().expect("slot lock") = Some(out);
                if failed {
                    next.store(pairs.len(), Ordering::SeqCst);
                }
            });
        }
    });
    let mut verdicts = Vec::with_capacity(pairs.len());
    for slot in slots {
        if let Some(r) = slot.into_inner().expect("slot lock") {
            verdicts.push(r?);
        }
    }
    Ok(verdicts)
}
