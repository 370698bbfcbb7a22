//! Dialogue transcripts: turn merging, dialogic pair extraction and item
//! selection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::tokenize::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Student,
    Teacher,
}

impl Speaker {
    /// Prefix used when a turn is rendered into a prompt.
    pub fn role_label(self) -> &'static str {
        match self {
            Speaker::Student => "Student:",
            Speaker::Teacher => "Teacher:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub text: String,
    pub labels: BTreeSet<String>,
    pub turn_index: usize,
}

impl DialogueTurn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
            labels: BTreeSet::new(),
            turn_index: 0,
        }
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn token_count(&self) -> usize {
        count_tokens(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    /// Builds a dialogue and assigns dense turn indices in order.
    pub fn new(dialogue_id: impl Into<String>, turns: Vec<DialogueTurn>) -> Self {
        let mut dialogue = Self {
            dialogue_id: dialogue_id.into(),
            turns,
        };
        dialogue.reindex();
        dialogue
    }

    fn reindex(&mut self) {
        for (i, turn) in self.turns.iter_mut().enumerate() {
            turn.turn_index = i;
        }
    }

    pub fn is_alternating(&self) -> bool {
        self.turns.windows(2).all(|w| w[0].speaker != w[1].speaker)
    }
}

/// A student utterance, the turns leading up to it, and the teacher reply
/// that actually followed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogicPair {
    pub item_id: String,
    pub dialogue_id: String,
    pub context: Vec<DialogueTurn>,
    pub student_utterance: String,
    pub reference_teacher_reply: String,
    pub labels: BTreeSet<String>,
}

impl DialogicPair {
    pub fn context_tokens(&self) -> usize {
        self.context.iter().map(DialogueTurn::token_count).sum()
    }
}

/// Collapses runs of same-speaker turns into one turn. Texts are joined with
/// a single space, labels are unioned and indices are reassigned from zero.
pub fn merge_consecutive_turns(dialogue: &Dialogue) -> Dialogue {
    let mut merged: Vec<DialogueTurn> = Vec::with_capacity(dialogue.turns.len());
    for turn in &dialogue.turns {
        match merged.last_mut() {
            Some(last) if last.speaker == turn.speaker => {
                last.text.push(' ');
                last.text.push_str(&turn.text);
                last.labels.extend(turn.labels.iter().cloned());
            }
            _ => merged.push(turn.clone()),
        }
    }
    Dialogue::new(dialogue.dialogue_id.clone(), merged)
}

/// Longest suffix of `turns` whose summed cost fits in `budget`. Whole turns
/// only: a turn that does not fit ends the scan.
pub(crate) fn suffix_within_budget<T>(
    turns: &[T],
    budget: usize,
    mut cost: impl FnMut(&T) -> usize,
) -> &[T] {
    let mut used = 0usize;
    let mut start = turns.len();
    for (i, turn) in turns.iter().enumerate().rev() {
        let c = cost(turn);
        if used + c > budget {
            break;
        }
        used += c;
        start = i;
    }
    &turns[start..]
}

/// One pair per student turn immediately followed by a teacher turn, in
/// dialogue order. Context is the longest run of preceding turns whose token
/// total stays within `context_budget`.
pub fn extract_dialogic_pairs(dialogue: &Dialogue, context_budget: usize) -> Vec<DialogicPair> {
    let turns = &dialogue.turns;
    let mut pairs = Vec::new();
    for i in 0..turns.len().saturating_sub(1) {
        let (student, teacher) = (&turns[i], &turns[i + 1]);
        if student.speaker != Speaker::Student || teacher.speaker != Speaker::Teacher {
            continue;
        }
        let context = suffix_within_budget(&turns[..i], context_budget, DialogueTurn::token_count);
        pairs.push(DialogicPair {
            item_id: format!("{}-t{}", dialogue.dialogue_id, teacher.turn_index),
            dialogue_id: dialogue.dialogue_id.clone(),
            context: context.to_vec(),
            student_utterance: student.text.clone(),
            reference_teacher_reply: teacher.text.clone(),
            labels: teacher.labels.clone(),
        });
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionPolicy {
    pub required_labels: BTreeSet<String>,
    pub min_tokens: usize,
    pub context_budget: usize,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            required_labels: ["eliciting", "scaffolding"].into_iter().map(String::from).collect(),
            min_tokens: 3,
            context_budget: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    MissingRequiredLabel { labels: BTreeSet<String> },
    TooShort { tokens: usize, min_tokens: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionLogEntry {
    pub item_id: String,
    pub retained: bool,
    #[serde(skip_serializing_if = "Option::is_none", flatten)]
    pub reject: Option<RejectReason>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub retained: Vec<DialogicPair>,
    pub log: Vec<SelectionLogEntry>,
}

impl Selection {
    pub fn rejected(&self) -> impl Iterator<Item = &SelectionLogEntry> {
        self.log.iter().filter(|e| !e.retained)
    }
}

/// Keeps pairs whose teacher labels meet the policy's required set and whose
/// reference reply is long enough. Every input pair gets a log entry.
pub fn select_items(pairs: &[DialogicPair], policy: &SelectionPolicy) -> Selection {
    let mut selection = Selection::default();
    for pair in pairs {
        let reject = if pair.labels.is_disjoint(&policy.required_labels) {
            Some(RejectReason::MissingRequiredLabel {
                labels: pair.labels.clone(),
            })
        } else {
            let tokens = count_tokens(&pair.reference_teacher_reply);
            (tokens < policy.min_tokens).then_some(RejectReason::TooShort {
                tokens,
                min_tokens: policy.min_tokens,
            })
        };
        selection.log.push(SelectionLogEntry {
            item_id: pair.item_id.clone(),
            retained: reject.is_none(),
            reject: reject.clone(),
        });
        if reject.is_none() {
            selection.retained.push(pair.clone());
        }
    }
    selection
}
