use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{JudgmentTask, SurveyError};
use crate::bt::AbilityDimension;
use crate::corpus::Speaker;
use crate::generation::{CandidateReply, Provenance};
use crate::records::{ContextTurn, ItemRecord, PoolRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    pub item: ItemRecord,
    pub replies: BTreeMap<String, CandidateReply>,
}

/// Items eligible for assignment, each with a reply from every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemPool {
    agents: Vec<String>,
    items: Vec<PoolItem>,
    calibration: JudgmentTask,
    skipped: Vec<String>,
}

impl ItemPool {
    /// Builds a pool from item and reply records.
    ///
    /// When `agents` is `None` the reference agent comes first and generated
    /// agents follow in name order. Items missing a reply from any agent are
    /// left out and listed by [`ItemPool::skipped`]. `calibration_item`
    /// names a pool item to use as the shared calibration task instead of
    /// the built-in one; that item is then removed from assignment.
    pub fn from_records(
        records: Vec<PoolRecord>,
        agents: Option<Vec<String>>,
        calibration_item: Option<&str>,
    ) -> Result<Self, SurveyError> {
        let mut items: BTreeMap<String, PoolItem> = BTreeMap::new();
        let mut replies = Vec::new();
        for rec in records {
            match rec {
                PoolRecord::Item(item) => {
                    let id = item.item_id.clone();
                    let prev = items.insert(
                        id.clone(),
                        PoolItem {
                            item,
                            replies: BTreeMap::new(),
                        },
                    );
                    if prev.is_some() {
                        return Err(SurveyError::InvalidPool(format!("duplicate item {id}")));
                    }
                }
                PoolRecord::Reply(r) => replies.push(r),
            }
        }
        for r in replies {
            let Some(slot) = items.get_mut(&r.item_id) else {
                return Err(SurveyError::InvalidPool(format!(
                    "reply from {} for unknown item {}",
                    r.agent, r.item_id
                )));
            };
            if slot.replies.insert(r.agent.clone(), r).is_some() {
                return Err(SurveyError::InvalidPool(format!("duplicate reply on item {}", slot.item.item_id)));
            }
        }

        let agents = match agents {
            Some(a) => a,
            None => infer_agents(items.values()),
        };
        if agents.len() < 2 {
            return Err(SurveyError::InvalidPool(format!("need at least two agents, found {agents:?}")));
        }
        let mut dedup = agents.clone();
        dedup.sort();
        dedup.dedup();
        if dedup.len() != agents.len() {
            return Err(SurveyError::InvalidPool("agent list has duplicates".into()));
        }

        let calibration = match calibration_item {
            Some(id) => {
                let item = items
                    .remove(id)
                    .ok_or_else(|| SurveyError::InvalidPool(format!("calibration item {id} not in pool")))?;
                calibration_from_item(item, &agents)?
            }
            None => builtin_calibration(),
        };

        let mut eligible = Vec::new();
        let mut skipped = Vec::new();
        for (id, item) in items {
            if agents.iter().all(|a| item.replies.contains_key(a)) {
                eligible.push(item);
            } else {
                skipped.push(id);
            }
        }
        if !skipped.is_empty() {
            tracing::warn!(count = skipped.len(), "items without a reply from every agent left out of the pool");
        }
        Ok(Self {
            agents,
            items: eligible,
            calibration,
            skipped,
        })
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn items(&self) -> &[PoolItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn calibration(&self) -> &JudgmentTask {
        &self.calibration
    }

    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    /// All unordered agent pairs in declared order.
    pub fn agent_pairs(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for i in 0..self.agents.len() {
            for j in i + 1..self.agents.len() {
                out.push((self.agents[i].as_str(), self.agents[j].as_str()));
            }
        }
        out
    }
}

fn infer_agents<'a>(items: impl Iterator<Item = &'a PoolItem>) -> Vec<String> {
    let mut reference = Vec::new();
    let mut generated = Vec::new();
    for item in items {
        for r in item.replies.values() {
            let bucket = match r.provenance {
                Provenance::Reference => &mut reference,
                Provenance::Generated => &mut generated,
            };
            if !bucket.contains(&r.agent) {
                bucket.push(r.agent.clone());
            }
        }
    }
    reference.sort();
    generated.sort();
    generated.retain(|a| !reference.contains(a));
    reference.extend(generated);
    reference
}

fn calibration_from_item(item: PoolItem, agents: &[String]) -> Result<JudgmentTask, SurveyError> {
    let reply = |agent: &String| {
        item.replies.get(agent).cloned().ok_or_else(|| {
            SurveyError::InvalidPool(format!("calibration item {} lacks a reply from {agent}", item.item.item_id))
        })
    };
    Ok(JudgmentTask {
        item_id: item.item.item_id.clone(),
        context: item.item.context.clone(),
        student_utterance: item.item.student_utterance.clone(),
        left: reply(&agents[0])?,
        right: reply(&agents[1])?,
        abilities: AbilityDimension::ALL,
        calibration: true,
    })
}

fn builtin_calibration() -> JudgmentTask {
    let item_id = "calibration".to_string();
    let reply = |agent: &str, text: &str, provenance| CandidateReply {
        item_id: item_id.clone(),
        agent: agent.into(),
        text: text.into(),
        provenance,
        uptake_score: None,
        perplexity: None,
    };
    JudgmentTask {
        item_id: item_id.clone(),
        context: vec![
            ContextTurn {
                speaker: Speaker::Teacher,
                text: "Let's practise the past tense. What did you do last weekend?".into(),
            },
            ContextTurn {
                speaker: Speaker::Student,
                text: "I go to the beach with my family.".into(),
            },
            ContextTurn {
                speaker: Speaker::Teacher,
                text: "Nice! Remember it was last weekend. Can you try that again?".into(),
            },
        ],
        student_utterance: "I went to the beach with my family.".into(),
        left: reply(
            "teacher",
            "Perfect, 'went' is right. What did you do at the beach?",
            Provenance::Reference,
        ),
        right: reply("calibration-foil", "I like pizza. Do you like pizza?", Provenance::Generated),
        abilities: AbilityDimension::ALL,
        calibration: true,
    }
}
