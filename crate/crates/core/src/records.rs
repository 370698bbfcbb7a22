//! Line-delimited JSON records exchanged between pipeline stages.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DialogicPair, Dialogue, DialogueTurn, Speaker};
use crate::generation::CandidateReply;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{source_name}:{line}: {message}")]
pub struct RecordError {
    pub source_name: String,
    pub line: usize,
    pub message: String,
}

/// Parses one record per non-blank line. Errors carry the 1-based line
/// number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, source_name: &str) -> Result<Vec<T>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| RecordError {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl<'a, T: Serialize + 'a>(records: impl IntoIterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for r in records {
        // Serializing plain data structs cannot fail.
        let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueRecord {
    pub dialogue_id: String,
    pub turns: Vec<TurnRecord>,
}

impl DialogueRecord {
    pub fn into_dialogue(self) -> Result<Dialogue, String> {
        let mut turns = Vec::with_capacity(self.turns.len());
        for (i, t) in self.turns.into_iter().enumerate() {
            if t.text.trim().is_empty() {
                return Err(format!("dialogue {}: turn {i} has empty text", self.dialogue_id));
            }
            turns.push(DialogueTurn::new(t.speaker, t.text).with_labels(t.labels));
        }
        Ok(Dialogue::new(self.dialogue_id, turns))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextTurn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub item_id: String,
    pub dialogue_id: String,
    pub context: Vec<ContextTurn>,
    pub student_utterance: String,
    pub reference_teacher_reply: String,
    pub labels: Vec<String>,
}

impl From<&DialogicPair> for ItemRecord {
    fn from(p: &DialogicPair) -> Self {
        Self {
            item_id: p.item_id.clone(),
            dialogue_id: p.dialogue_id.clone(),
            context: p
                .context
                .iter()
                .map(|t| ContextTurn {
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
                .collect(),
            student_utterance: p.student_utterance.clone(),
            reference_teacher_reply: p.reference_teacher_reply.clone(),
            labels: p.labels.iter().cloned().collect(),
        }
    }
}

impl ItemRecord {
    pub fn history(&self) -> Vec<DialogueTurn> {
        Dialogue::new(
            self.dialogue_id.clone(),
            self.context.iter().map(|t| DialogueTurn::new(t.speaker, t.text.clone())).collect(),
        )
        .turns
    }

    pub fn label_set(&self) -> BTreeSet<String> {
        self.labels.iter().cloned().collect()
    }
}

/// Per-reply scores computed elsewhere and merged into the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub item_id: String,
    pub agent: String,
    #[serde(default)]
    pub uptake_score: Option<f64>,
    #[serde(default)]
    pub perplexity: Option<f64>,
}

/// The item pool file holds item records followed by reply records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolRecord {
    Item(ItemRecord),
    Reply(CandidateReply),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_numbers_in_errors() {
        let text = "{\"dialogue_id\":\"a\",\"turns\":[]}\n\nnot json\n";
        let err = parse_jsonl::<DialogueRecord>(text, "corpus.jsonl").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.to_string().starts_with("corpus.jsonl:3:"));
    }

    #[test]
    fn pool_records_disambiguate() {
        let text = concat!(
            r#"{"item_id":"i","dialogue_id":"d","context":[{"speaker":"teacher","text":"x"}],"student_utterance":"a","reference_teacher_reply":"b","labels":["eliciting"]}"#,
            "\n",
            r#"{"item_id":"i","agent":"teacher","text":"b","provenance":"reference"}"#,
            "\n"
        );
        let recs: Vec<PoolRecord> = parse_jsonl(text, "pool").unwrap();
        assert!(matches!(recs[0], PoolRecord::Item(_)));
        assert!(matches!(recs[1], PoolRecord::Reply(_)));
        assert_eq!(to_jsonl(&recs), text);
    }

    #[test]
    fn empty_turn_rejected() {
        let rec = DialogueRecord {
            dialogue_id: "d".into(),
            turns: vec![TurnRecord {
                speaker: Speaker::Student,
                text: "  ".into(),
                labels: vec![],
            }],
        };
        assert!(rec.into_dialogue().is_err());
    }
}
