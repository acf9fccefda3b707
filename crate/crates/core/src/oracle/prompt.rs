//! Three-option causal questions asked from one agent's perspective.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{CandidatePair, InteractionKind, Locality, MetricNode};
use crate::graph::Relation;
use crate::ingest::{ComponentClass, MetricLevel};

pub const STEP_BY_STEP: &str = "Please think step by step to make sure that you have the right answer.";
pub const LAST_LINE: &str = "Put it as the only content in the last line.";
const NO_EFFECT: &str = "These two metrics do not directly influence each other, even if they might be correlated through other components in the system.";
const REPROMPT: &str = "Your previous reply did not end with a single option letter. Answer again and put only A, B, or C on the last line.";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricKey {
    pub kind: String,
    pub level: MetricLevel,
    pub name: String,
    pub description: String,
}

/// Instance-free meaning of a causal question.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticKey {
    pub perspective_kind: String,
    pub perspective_class: ComponentClass,
    pub perspective_description: String,
    /// `None` for two metrics of the same component.
    pub interaction: Option<InteractionKind>,
    pub other_kind: String,
    pub other_description: String,
    pub metric_a: MetricKey,
    pub metric_b: MetricKey,
}

impl SemanticKey {
    pub fn of(pair: &CandidatePair) -> Self {
        let metric = |m: &MetricNode, kind: &str| MetricKey {
            kind: kind.to_string(),
            level: m.level,
            name: m.metric_name.clone(),
            description: m.description.clone(),
        };
        Self {
            perspective_kind: pair.perspective.kind.clone(),
            perspective_class: pair.perspective.class,
            perspective_description: pair.perspective.description.clone(),
            interaction: pair.interaction,
            other_kind: pair.other.kind.clone(),
            other_description: pair.other.description.clone(),
            metric_a: metric(&pair.a, &pair.perspective.kind),
            metric_b: metric(&pair.b, &pair.other.kind),
        }
    }

    /// Hex SHA-256 of the key's canonical JSON.
    pub fn stable_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("key serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalQuery {
    pub system_preamble: String,
    pub question: String,
    /// Canonical meaning behind letters A, B, C.
    pub options: [Relation; 3],
    pub key: SemanticKey,
    pub key_hash: String,
    pub pair_id: String,
    pub a_id: String,
    pub b_id: String,
    pub permutation_index: usize,
    pub reprompt: bool,
}

impl CausalQuery {
    pub fn letter_meaning(&self, letter: char) -> Option<Relation> {
        let i = (letter as usize).checked_sub('A' as usize)?;
        self.options.get(i).copied()
    }

    pub fn letter_for(&self, relation: Relation) -> char {
        let i = self.options.iter().position(|r| *r == relation).expect("all meanings present");
        (b'A' + i as u8) as char
    }

    /// Same question with a request to answer in the required format.
    pub fn reprompted(&self) -> Self {
        let mut q = self.clone();
        q.question = format!("{}\n\n{REPROMPT}", self.question);
        q.reprompt = true;
        q
    }
}

fn article(class: ComponentClass) -> &'static str {
    match class {
        ComponentClass::Request => "a request",
        ComponentClass::Service => "a service",
        ComponentClass::Resource => "a resource",
    }
}

/// How the perspective agent refers to the other component, as
/// (introduction, short role noun).
fn relation_phrase(kind: InteractionKind) -> (&'static str, &'static str) {
    match kind {
        InteractionKind::ServiceInvokesService => (
            "is the next service that requests will invoke after you finish processing them",
            "the next service",
        ),
        InteractionKind::ServiceUsesResource => ("is a resource that you use to process requests", "the resource"),
        InteractionKind::RequestInvokesService => ("is a service that you invoke along your path", "the service"),
        InteractionKind::RequestUsesResource => (
            "is a resource used by a service along your path",
            "the resource",
        ),
    }
}

fn ensure_period(s: &str) -> String {
    let t = s.trim_end();
    if t.ends_with('.') || t.is_empty() {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

pub fn build_prompt(pair: &CandidatePair, permutation_index: usize) -> CausalQuery {
    let me = &pair.perspective;
    let other = &pair.other;
    let system_preamble = format!(
        "You are {} named {} in a software system and your job is: {} You are about to figure out the causal relationship between a metric of you and a metric of another system component.",
        article(me.class),
        me.kind,
        ensure_period(&me.description),
    );

    let a = &pair.a.metric_name;
    let b = &pair.b.metric_name;
    let mut question = String::new();
    let b_owner_noun = match (pair.locality, pair.interaction) {
        (Locality::Neighbor, Some(kind)) => {
            let (intro, noun) = relation_phrase(kind);
            question.push_str(&format!(
                "{} {intro}, whose job is: {} ",
                other.instance_id,
                ensure_period(&other.description)
            ));
            noun
        }
        _ => "",
    };
    question.push_str(&format!(
        "{a} is a metric of you and it means {} ",
        ensure_period(&pair.a.description)
    ));
    if b_owner_noun.is_empty() {
        question.push_str(&format!(
            "{b} is another metric of you and it means {}",
            ensure_period(&pair.b.description)
        ));
    } else {
        question.push_str(&format!(
            "{b} is a metric of {b_owner_noun} and it means {}",
            ensure_period(&pair.b.description)
        ));
    }
    question.push_str(
        "\nIf we can only choose one, which of the following cause-and-effect relationship is more likely?\n",
    );

    let rotation = permutation_index % 3;
    let options: [Relation; 3] = std::array::from_fn(|i| Relation::CANONICAL[(i + rotation) % 3]);
    for (i, meaning) in options.iter().enumerate() {
        let letter = (b'A' + i as u8) as char;
        let text = match meaning {
            Relation::ACausesB => format!(
                "A change in \"{a}\" of you directly causes a change in \"{b}\" of {}.",
                other.instance_id
            ),
            Relation::BCausesA => format!(
                "A change in \"{b}\" of {} directly causes a change in {a} of you.",
                other.instance_id
            ),
            Relation::None => NO_EFFECT.to_string(),
        };
        question.push_str(&format!("\n{letter}. {text}\n"));
    }
    question.push_str(&format!(
        "\n{STEP_BY_STEP}\nPlease select from one of the following options: [A, B, C] as the final answer.\n{LAST_LINE}"
    ));

    let key = SemanticKey::of(pair);
    let key_hash = key.stable_hash();
    CausalQuery {
        system_preamble,
        question,
        options,
        key,
        key_hash,
        pair_id: pair.id(),
        a_id: pair.a.id.clone(),
        b_id: pair.b.id.clone(),
        permutation_index,
        reprompt: false,
    }
}

/// The answer letter: the last non-empty line, trimmed, must be exactly
/// one of A, B, C.
pub fn extract_letter(reply: &str) -> Option<char> {
    let line = reply.lines().map(str::trim).rfind(|l| !l.is_empty())?;
    match line {
        "A" => Some('A'),
        "B" => Some('B'),
        "C" => Some('C'),
        _ => None,
    }
}
