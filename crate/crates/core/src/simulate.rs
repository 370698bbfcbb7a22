//! Synthetic raters for end-to-end runs and statistical checks.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bt::model::sigmoid;
use crate::bt::{AbilityDimension, Choice, ComparisonJudgment};
use crate::seed::derive_seed;
use crate::survey::{ItemPool, SurveyClock, SurveyError, SurveyStore, TaskView};

/// How a synthetic rater answers a presented pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RaterBehavior {
    /// Follows the true strengths through a logistic choice with no
    /// positional effect; answers "cannot tell" with `tie_prob`.
    Fair { tie_prob: f64 },
    /// Picks the first-presented reply with probability `p_first`,
    /// ignoring content.
    Positional { p_first: f64 },
}

impl RaterBehavior {
    pub fn answer(&self, left_strength: f64, right_strength: f64, rng: &mut impl Rng) -> Choice {
        match *self {
            RaterBehavior::Fair { tie_prob } => {
                if rng.random_bool(tie_prob) {
                    Choice::Tie
                } else if rng.random_bool(sigmoid(left_strength - right_strength)) {
                    Choice::Left
                } else {
                    Choice::Right
                }
            }
            RaterBehavior::Positional { p_first } => {
                if rng.random_bool(p_first) {
                    Choice::Left
                } else {
                    Choice::Right
                }
            }
        }
    }
}

/// Latent strengths per (item, agent, ability).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub agents: Vec<String>,
    strengths: BTreeMap<(String, String, AbilityDimension), f64>,
}

impl GroundTruth {
    /// Draws each strength from a normal centred on the agent's mean.
    pub fn sample(
        items: &[String],
        agent_means: &[(String, f64)],
        item_sd: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let noise = Normal::new(0.0, item_sd).expect("sd must be non-negative and finite");
        let mut strengths = BTreeMap::new();
        for item in items {
            for ability in AbilityDimension::ALL {
                for (agent, mean) in agent_means {
                    strengths.insert((item.clone(), agent.clone(), ability), mean + noise.sample(rng));
                }
            }
        }
        Self {
            agents: agent_means.iter().map(|(a, _)| a.clone()).collect(),
            strengths,
        }
    }

    pub fn strength(&self, item: &str, agent: &str, ability: AbilityDimension) -> f64 {
        self.strengths
            .get(&(item.to_string(), agent.to_string(), ability))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Generates `n` judgments by one rater over random items, agent pairs,
/// presentation orders and abilities. Timestamps advance one second per
/// judgment from `start`.
pub fn rater_judgments(
    evaluator_id: &str,
    behavior: RaterBehavior,
    truth: &GroundTruth,
    items: &[String],
    n: usize,
    start: DateTime<Utc>,
    rng: &mut impl Rng,
) -> Vec<ComparisonJudgment> {
    let agents = &truth.agents;
    (0..n)
        .map(|i| {
            let item = items.choose(rng).expect("at least one item");
            let ability = *AbilityDimension::ALL.choose(rng).expect("three abilities");
            let a = rng.random_range(0..agents.len());
            let b = (a + rng.random_range(1..agents.len())) % agents.len();
            let (left, right) = (&agents[a], &agents[b]);
            let choice = behavior.answer(
                truth.strength(item, left, ability),
                truth.strength(item, right, ability),
                rng,
            );
            ComparisonJudgment {
                judgment_id: format!("{evaluator_id}-{i}"),
                evaluator_id: evaluator_id.to_string(),
                item_id: item.clone(),
                ability,
                left_agent: left.clone(),
                right_agent: right.clone(),
                choice,
                timestamp: start + Duration::seconds(i as i64),
            }
        })
        .collect()
}

/// A seeded population of fair raters plus positional raters.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub n_items: usize,
    pub agent_means: Vec<(String, f64)>,
    pub item_sd: f64,
    pub fair_raters: usize,
    pub fair_tie_prob: f64,
    pub biased_raters: Vec<f64>,
    pub judgments_per_rater: usize,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_items: 52,
            agent_means: vec![
                ("teacher".into(), 0.5),
                ("blender".into(), -0.2),
                ("gpt3".into(), -0.3),
            ],
            item_sd: 0.7,
            fair_raters: 10,
            fair_tie_prob: 0.1,
            biased_raters: vec![1.0],
            judgments_per_rater: 40,
        }
    }
}

/// Generates a population; biased raters are named `biased-NN`, fair ones
/// `fair-NN`.
pub fn synthetic_population(spec: &PopulationSpec, seed: u64) -> Vec<ComparisonJudgment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<String> = (0..spec.n_items).map(|i| format!("item-{i:03}")).collect();
    let truth = GroundTruth::sample(&items, &spec.agent_means, spec.item_sd, &mut rng);
    let start = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut out = Vec::new();
    for r in 0..spec.fair_raters {
        out.extend(rater_judgments(
            &format!("fair-{r:02}"),
            RaterBehavior::Fair {
                tie_prob: spec.fair_tie_prob,
            },
            &truth,
            &items,
            spec.judgments_per_rater,
            start,
            &mut rng,
        ));
    }
    for (r, &p_first) in spec.biased_raters.iter().enumerate() {
        out.extend(rater_judgments(
            &format!("biased-{r:02}"),
            RaterBehavior::Positional { p_first },
            &truth,
            &items,
            spec.judgments_per_rater,
            start,
            &mut rng,
        ));
    }
    out
}

/// Maps presented reply text back to (item, agent) so a simulated rater
/// can answer from ground truth while seeing only what a person would see.
#[derive(Debug, Clone, Default)]
pub struct ReplyIndex {
    map: HashMap<(String, String), (String, String)>,
}

impl ReplyIndex {
    pub fn from_pool(pool: &ItemPool) -> Self {
        let mut map = HashMap::new();
        for item in pool.items() {
            for reply in item.replies.values() {
                map.insert(
                    (item.item.student_utterance.clone(), reply.text.clone()),
                    (item.item.item_id.clone(), reply.agent.clone()),
                );
            }
        }
        Self { map }
    }

    pub fn lookup(&self, student_utterance: &str, text: &str) -> Option<(&str, &str)> {
        self.map
            .get(&(student_utterance.to_string(), text.to_string()))
            .map(|(i, a)| (i.as_str(), a.as_str()))
    }
}

pub struct SimulatedRater {
    pub evaluator_id: String,
    pub behavior: RaterBehavior,
    rng: ChaCha8Rng,
}

impl SimulatedRater {
    pub fn new(evaluator_id: impl Into<String>, behavior: RaterBehavior, seed: u64) -> Self {
        Self {
            evaluator_id: evaluator_id.into(),
            behavior,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Answers every question of a task. Replies missing from the index,
    /// such as the calibration task, get strength zero.
    pub fn answer_task(
        &mut self,
        view: &TaskView,
        index: &ReplyIndex,
        truth: &GroundTruth,
    ) -> Vec<(AbilityDimension, Choice)> {
        let strength = |text: &str, ability| {
            index
                .lookup(&view.student_utterance, text)
                .map_or(0.0, |(item, agent)| truth.strength(item, agent, ability))
        };
        view.questions
            .iter()
            .map(|q| {
                let l = strength(&view.reply_a, q.ability);
                let r = strength(&view.reply_b, q.ability);
                (q.ability, self.behavior.answer(l, r, &mut self.rng))
            })
            .collect()
    }
}

/// Rater population run against the survey, one session per rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveySimulation {
    pub fair_raters: usize,
    pub fair_tie_prob: f64,
    /// First-position preference of each positional rater.
    pub biased_raters: Vec<f64>,
    /// Mean latent strength per agent; unlisted agents get zero.
    pub agent_means: BTreeMap<String, f64>,
    pub item_sd: f64,
}

impl Default for SurveySimulation {
    fn default() -> Self {
        Self {
            fair_raters: 10,
            fair_tie_prob: 0.1,
            biased_raters: vec![1.0],
            agent_means: [("teacher".to_string(), 0.5)].into_iter().collect(),
            item_sd: 0.7,
        }
    }
}

impl SurveySimulation {
    pub fn truth(&self, pool: &ItemPool, seed: u64) -> GroundTruth {
        let items: Vec<String> = pool.items().iter().map(|i| i.item.item_id.clone()).collect();
        let means: Vec<(String, f64)> = pool
            .agents()
            .iter()
            .map(|a| (a.clone(), self.agent_means.get(a).copied().unwrap_or(0.0)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["truth"]));
        GroundTruth::sample(&items, &means, self.item_sd, &mut rng)
    }

    pub fn raters(&self, seed: u64) -> Vec<SimulatedRater> {
        let fair = (0..self.fair_raters).map(|r| {
            (
                format!("fair-{r:02}"),
                RaterBehavior::Fair {
                    tie_prob: self.fair_tie_prob,
                },
            )
        });
        let biased = self
            .biased_raters
            .iter()
            .enumerate()
            .map(|(r, &p_first)| (format!("biased-{r:02}"), RaterBehavior::Positional { p_first }));
        fair.chain(biased)
            .map(|(id, b)| {
                let s = derive_seed(seed, &["rater", &id]);
                SimulatedRater::new(id, b, s)
            })
            .collect()
    }
}

/// Runs every simulated rater through consent and a full session on the
/// store, in rater order.
pub fn simulate_survey(
    store: &mut SurveyStore,
    sim: &SurveySimulation,
    seed: u64,
    clock: &dyn SurveyClock,
) -> Result<usize, SurveyError> {
    let index = ReplyIndex::from_pool(store.pool());
    let truth = sim.truth(store.pool(), seed);
    let mut submitted = 0;
    for mut rater in sim.raters(seed) {
        let session = store.create_session(&rater.evaluator_id, clock.now())?;
        store.record_consent(&session.session_id, true)?;
        while let Some(task) = store.view(&session.session_id)?.task {
            for (ability, choice) in rater.answer_task(&task, &index, &truth) {
                store.submit_judgment(&session.session_id, task.task_index, ability, choice, clock.now())?;
                submitted += 1;
            }
        }
    }
    Ok(submitted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_shape() {
        let js = synthetic_population(&PopulationSpec::default(), 1);
        assert_eq!(js.len(), 11 * 40);
        assert!(js.iter().all(|j| j.left_agent != j.right_agent));
        let biased: Vec<_> = js.iter().filter(|j| j.evaluator_id == "biased-00").collect();
        assert!(biased.iter().all(|j| j.choice == Choice::Left));
        assert_eq!(js, synthetic_population(&PopulationSpec::default(), 1));
    }
}
