use std::collections::HashMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::BtError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbilityDimension {
    SpeakLikeTeacher,
    UnderstandStudent,
    HelpStudent,
}

impl AbilityDimension {
    pub const ALL: [AbilityDimension; 3] = [
        AbilityDimension::SpeakLikeTeacher,
        AbilityDimension::UnderstandStudent,
        AbilityDimension::HelpStudent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AbilityDimension::SpeakLikeTeacher => "speak_like_teacher",
            AbilityDimension::UnderstandStudent => "understand_student",
            AbilityDimension::HelpStudent => "help_student",
        }
    }

    /// Wording shown to raters and used in report tables.
    pub fn question(self) -> &'static str {
        match self {
            AbilityDimension::SpeakLikeTeacher => "likely said by a teacher",
            AbilityDimension::UnderstandStudent => "understanding the student",
            AbilityDimension::HelpStudent => "helping the student",
        }
    }
}

impl fmt::Display for AbilityDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    #[serde(alias = "A", alias = "a")]
    Left,
    #[serde(alias = "B", alias = "b")]
    Right,
    #[serde(alias = "cannot_tell")]
    Tie,
}

/// One rater's answer to one ability question for one presented pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonJudgment {
    pub judgment_id: String,
    pub evaluator_id: String,
    pub item_id: String,
    pub ability: AbilityDimension,
    pub left_agent: String,
    pub right_agent: String,
    pub choice: Choice,
    pub timestamp: DateTime<Utc>,
}

/// A judgment with ties already resolved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Outcome {
    pub left_agent: String,
    pub right_agent: String,
    pub left_won: bool,
}

impl Outcome {
    pub fn new(left: impl Into<String>, right: impl Into<String>, left_won: bool) -> Self {
        Self {
            left_agent: left.into(),
            right_agent: right.into(),
            left_won,
        }
    }
}

/// Intercept plus one strength per agent, in declared agent order.
#[derive(Debug, Clone, PartialEq)]
pub struct BtParameterVector {
    pub intercept: f64,
    pub strengths: Vec<(String, f64)>,
}

impl BtParameterVector {
    pub fn zeros(agents: &[String]) -> Self {
        Self {
            intercept: 0.0,
            strengths: agents.iter().map(|a| (a.clone(), 0.0)).collect(),
        }
    }

    pub fn agents(&self) -> Vec<String> {
        self.strengths.iter().map(|(a, _)| a.clone()).collect()
    }

    /// Flat layout used by the sampler: intercept first, then strengths.
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.intercept)
            .chain(self.strengths.iter().map(|(_, s)| *s))
            .collect()
    }
}

pub(crate) fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -log(1 + e^{-x}), evaluated without overflow on either side.
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

/// Something the sampler can explore: an unnormalized log density over
/// `dim()` real coordinates with its gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PairTally {
    left: usize,
    right: usize,
    left_wins: u32,
    right_wins: u32,
}

/// Bradley-Terry posterior with a first-position intercept and independent
/// standard normal priors on every coordinate. Coordinates are laid out as
/// `[intercept, strength_0, .., strength_{t-1}]`.
///
/// Outcomes are tallied per ordered agent pair; the log density is the same
/// sum as over individual outcomes.
#[derive(Debug, Clone)]
pub struct BtPosterior {
    agents: Vec<String>,
    tallies: Vec<PairTally>,
    n_outcomes: usize,
}

impl BtPosterior {
    pub fn new(agents: &[String], outcomes: &[Outcome]) -> Result<Self, BtError> {
        let index: HashMap<&str, usize> = agents.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
        let lookup = |agent: &str| {
            index
                .get(agent)
                .copied()
                .ok_or_else(|| BtError::UnknownAgent(agent.to_string()))
        };
        let mut tallies: Vec<PairTally> = Vec::new();
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        for o in outcomes {
            let (l, r) = (lookup(&o.left_agent)?, lookup(&o.right_agent)?);
            if l == r {
                return Err(BtError::SelfComparison(o.left_agent.clone()));
            }
            let k = *slot.entry((l, r)).or_insert_with(|| {
                tallies.push(PairTally {
                    left: l,
                    right: r,
                    left_wins: 0,
                    right_wins: 0,
                });
                tallies.len() - 1
            });
            if o.left_won {
                tallies[k].left_wins += 1;
            } else {
                tallies[k].right_wins += 1;
            }
        }
        Ok(Self {
            agents: agents.to_vec(),
            tallies,
            n_outcomes: outcomes.len(),
        })
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    /// Log-likelihood of the outcomes alone.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let (intercept, strengths) = (x[0], &x[1..]);
        self.tallies
            .iter()
            .map(|t| {
                let eta = intercept + (strengths[t.left] - strengths[t.right]);
                t.left_wins as f64 * log_sigmoid(eta) + t.right_wins as f64 * log_sigmoid(-eta)
            })
            .sum()
    }

    pub fn log_prior(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| -0.5 * v * v - HALF_LOG_2PI).sum()
    }

    pub fn log_posterior(&self, x: &[f64]) -> f64 {
        self.log_likelihood(x) + self.log_prior(x)
    }
}

impl LogDensity for BtPosterior {
    fn dim(&self) -> usize {
        self.agents.len() + 1
    }

    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut logp = 0.0;
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
            logp += -0.5 * v * v - HALF_LOG_2PI;
        }
        let intercept = x[0];
        for t in &self.tallies {
            let eta = intercept + (x[1 + t.left] - x[1 + t.right]);
            let p_left = sigmoid(eta);
            logp += t.left_wins as f64 * log_sigmoid(eta) + t.right_wins as f64 * log_sigmoid(-eta);
            // d/d eta: left wins contribute (1 - p_left), right wins -(p_left)
            let d = t.left_wins as f64 * (1.0 - p_left) - t.right_wins as f64 * p_left;
            grad[0] += d;
            grad[1 + t.left] += d;
            grad[1 + t.right] -= d;
        }
        logp
    }
}

/// Log posterior density (prior constants included) of `params` given
/// resolved outcomes.
pub fn log_posterior(params: &BtParameterVector, outcomes: &[Outcome]) -> Result<f64, BtError> {
    let posterior = BtPosterior::new(&params.agents(), outcomes)?;
    Ok(posterior.log_posterior(&params.to_vec()))
}

/// Analytic gradient of [`log_posterior`] in `[intercept, strengths..]`
/// order.
pub fn grad_log_posterior(params: &BtParameterVector, outcomes: &[Outcome]) -> Result<Vec<f64>, BtError> {
    let posterior = BtPosterior::new(&params.agents(), outcomes)?;
    let x = params.to_vec();
    let mut grad = vec![0.0; x.len()];
    posterior.logp_and_grad(&x, &mut grad);
    Ok(grad)
}
