//! Answer backends: anything that replies to a causal question with text
//! whose last line is the chosen letter.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::CausalQuery;
use crate::graph::{ConfounderGraph, Edge, Relation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait AnswerBackend: Send + Sync {
    fn answer(&self, query: &CausalQuery) -> Result<String, BackendError>;
}

impl<B: AnswerBackend + ?Sized> AnswerBackend for &B {
    fn answer(&self, query: &CausalQuery) -> Result<String, BackendError> {
        (**self).answer(query)
    }
}

impl<B: AnswerBackend + ?Sized> AnswerBackend for Box<B> {
    fn answer(&self, query: &CausalQuery) -> Result<String, BackendError> {
        (**self).answer(query)
    }
}

fn truth_relation(edges: &BTreeSet<Edge>, a: &str, b: &str) -> Relation {
    if edges.contains(&(a.to_string(), b.to_string())) {
        Relation::ACausesB
    } else if edges.contains(&(b.to_string(), a.to_string())) {
        Relation::BCausesA
    } else {
        Relation::None
    }
}

/// Answers from a reference confounder graph.
#[derive(Clone, Debug)]
pub struct GroundTruthOracle {
    edges: BTreeSet<Edge>,
}

impl GroundTruthOracle {
    pub fn new(reference: &ConfounderGraph) -> Self {
        Self { edges: reference.edges.clone() }
    }

    pub fn relation(&self, query: &CausalQuery) -> Relation {
        truth_relation(&self.edges, &query.a_id, &query.b_id)
    }
}

impl AnswerBackend for GroundTruthOracle {
    fn answer(&self, query: &CausalQuery) -> Result<String, BackendError> {
        let letter = query.letter_for(self.relation(query));
        Ok(format!("Answer taken from the reference graph.\n{letter}"))
    }
}

/// Ground truth with each answer replaced, with probability `p`, by one of
/// the two other meanings. The draw depends only on the seed, the question
/// meaning and the round, never on scheduling.
#[derive(Clone, Debug)]
pub struct NoisyOracle {
    truth: GroundTruthOracle,
    pub flip_probability: f64,
    pub seed: u64,
}

impl NoisyOracle {
    pub fn new(reference: &ConfounderGraph, flip_probability: f64, seed: u64) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&flip_probability) {
            return Err(BackendError::Config(format!(
                "flip probability {flip_probability} outside [0, 1]"
            )));
        }
        Ok(Self { truth: GroundTruthOracle::new(reference), flip_probability, seed })
    }

    fn rng(&self, query: &CausalQuery) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(query.key_hash.as_bytes());
        h.update((query.permutation_index as u64).to_le_bytes());
        h.update([query.reprompt as u8]);
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

impl AnswerBackend for NoisyOracle {
    fn answer(&self, query: &CausalQuery) -> Result<String, BackendError> {
        let truth = self.truth.relation(query);
        let mut rng = self.rng(query);
        let relation = if rng.random::<f64>() < self.flip_probability {
            let others: Vec<Relation> = Relation::CANONICAL.into_iter().filter(|r| *r != truth).collect();
            others[rng.random_range(0..2)]
        } else {
            truth
        };
        Ok(format!("Noisy reference answer.\n{}", query.letter_for(relation)))
    }
}

/// Wraps a backend and counts calls.
pub struct CountingBackend<B> {
    pub inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: AnswerBackend> AnswerBackend for CountingBackend<B> {
    fn answer(&self, query: &CausalQuery) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.answer(query)
    }
}
