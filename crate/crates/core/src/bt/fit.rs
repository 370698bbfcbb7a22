use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::hdi::{hdi, Interval};
use super::model::{AbilityDimension, BtPosterior, ComparisonJudgment};
use super::nuts::{nuts_sample, PosteriorDraws, SamplerConfig};
use super::rank::rank_per_draw;
use super::ties::resolve_ties;
use super::BtError;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub sampler: SamplerConfig,
    pub hdi_mass: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            hdi_mass: 0.95,
        }
    }
}

impl FitConfig {
    /// Short digest of everything that shapes a fit except the seed.
    pub fn config_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.sampler.seed = 0;
        let json = serde_json::to_vec(&normalized).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptSummary {
    pub mean: f64,
    /// `[low, high]` of the highest density interval.
    pub hdi: [f64; 2],
}

impl InterceptSummary {
    pub fn interval(&self) -> Interval {
        Interval {
            low: self.hdi[0],
            high: self.hdi[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    pub mean: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    pub mean_rank: f64,
    pub modal_rank: usize,
    pub rank_histogram: BTreeMap<usize, usize>,
}

impl AgentSummary {
    pub fn interval(&self) -> Interval {
        Interval {
            low: self.hdi_low,
            high: self.hdi_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub ess_min: f64,
    pub divergences: usize,
    pub accept_rate: f64,
}

/// Posterior summary of all replies to one item on one ability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemAbilityFit {
    pub item_id: String,
    pub ability: AbilityDimension,
    pub intercept: InterceptSummary,
    pub agents: Vec<AgentSummary>,
    pub diagnostics: FitDiagnostics,
    pub n_judgments: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ItemAbilityFit {
    pub fn agent(&self, agent: &str) -> Option<&AgentSummary> {
        self.agents.iter().find(|a| a.agent == agent)
    }
}

/// Draws from the intercept-extended Bradley-Terry posterior for resolved
/// judgments. Ties are resolved once from a seed derived from `seed`; the
/// sampler gets another derived seed.
pub(crate) fn sample_judgments(
    judgments: &[ComparisonJudgment],
    agents: &[String],
    config: &FitConfig,
    seed: u64,
) -> Result<PosteriorDraws, BtError> {
    if judgments.is_empty() {
        return Err(BtError::NoJudgments);
    }
    let outcomes = resolve_ties(judgments, derive_seed(seed, &["ties"]));
    let posterior = BtPosterior::new(agents, &outcomes)?;
    let sampler = SamplerConfig {
        seed: derive_seed(seed, &["sampler"]),
        ..config.sampler.clone()
    };
    nuts_sample(&posterior, &sampler)
}

pub(crate) fn summarize_column(draws: &PosteriorDraws, j: usize, mass: f64) -> Result<(f64, Interval), BtError> {
    let column = draws.column(j);
    let interval = hdi(&column, mass)?;
    Ok((column.iter().sum::<f64>() / column.len() as f64, interval))
}

/// Fits one (item, ability) cell: resolve ties, sample the posterior, then
/// summarize every coordinate and rank agents within each draw. The result
/// is a pure function of `(judgments, agents, config, seed)`.
pub fn fit_item_ability(
    item_id: &str,
    ability: AbilityDimension,
    judgments: &[ComparisonJudgment],
    agents: &[String],
    config: &FitConfig,
    seed: u64,
) -> Result<ItemAbilityFit, BtError> {
    if let Some(j) = judgments.iter().find(|j| j.item_id != item_id || j.ability != ability) {
        return Err(BtError::MixedCell {
            expected: format!("{item_id}/{ability}"),
            found: format!("{}/{}", j.item_id, j.ability),
        });
    }
    let draws = sample_judgments(judgments, agents, config, seed)?;

    let (intercept_mean, intercept_hdi) = summarize_column(&draws, 0, config.hdi_mass)?;
    let ranks = rank_per_draw(draws.rows().map(|r| &r[1..]), agents.len());
    let mut summaries = Vec::with_capacity(agents.len());
    for (i, agent) in agents.iter().enumerate() {
        let (mean, interval) = summarize_column(&draws, i + 1, config.hdi_mass)?;
        summaries.push(AgentSummary {
            agent: agent.clone(),
            mean,
            hdi_low: interval.low,
            hdi_high: interval.high,
            mean_rank: ranks.mean_rank[i],
            modal_rank: ranks.modal_rank[i],
            rank_histogram: ranks.histograms[i].clone(),
        });
    }
    let diag = &draws.diagnostics;
    if diag.divergences > 0 {
        tracing::warn!(item_id, %ability, divergences = diag.divergences, "divergent transitions");
    }
    Ok(ItemAbilityFit {
        item_id: item_id.to_string(),
        ability,
        intercept: InterceptSummary {
            mean: intercept_mean,
            hdi: [intercept_hdi.low, intercept_hdi.high],
        },
        agents: summaries,
        diagnostics: FitDiagnostics {
            ess_min: diag.ess_min(),
            divergences: diag.divergences,
            accept_rate: diag.accept_rate,
        },
        n_judgments: judgments.len(),
        seed,
        config_hash: config.config_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::Choice;
    use chrono::{TimeZone, Utc};

    pub(crate) fn judgment(left: &str, right: &str, choice: Choice) -> ComparisonJudgment {
        ComparisonJudgment {
            judgment_id: String::new(),
            evaluator_id: "e".into(),
            item_id: "item".into(),
            ability: AbilityDimension::HelpStudent,
            left_agent: left.into(),
            right_agent: right.into(),
            choice,
            timestamp: Utc.timestamp_opt(0, 0).unwrap(),
        }
    }

    fn agents() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn dominant_agent_ranks_first() {
        let js: Vec<_> = (0..30)
            .map(|i| {
                if i % 2 == 0 {
                    judgment("A", "B", Choice::Left)
                } else {
                    judgment("B", "A", Choice::Right)
                }
            })
            .collect();
        let fit = fit_item_ability("item", AbilityDimension::HelpStudent, &js, &agents(), &FitConfig::default(), 1)
            .unwrap();
        let (a, b) = (fit.agent("A").unwrap(), fit.agent("B").unwrap());
        assert!(a.mean - b.mean >= 1.0, "{} vs {}", a.mean, b.mean);
        assert!(a.mean_rank < 1.1);
        assert_eq!(a.rank_histogram.values().sum::<usize>(), 4000);
        assert_eq!(fit.n_judgments, 30);
    }

    #[test]
    fn balanced_outcomes_are_symmetric() {
        let mut js = Vec::new();
        for _ in 0..25 {
            js.push(judgment("A", "B", Choice::Left));
            js.push(judgment("A", "B", Choice::Right));
        }
        let fit = fit_item_ability("item", AbilityDimension::HelpStudent, &js, &agents(), &FitConfig::default(), 2)
            .unwrap();
        let (a, b) = (fit.agent("A").unwrap(), fit.agent("B").unwrap());
        assert!((a.mean - b.mean).abs() < 0.15);
        assert!(a.interval().contains(0.0) && b.interval().contains(0.0));
    }

    #[test]
    fn reproducible() {
        let js = vec![judgment("A", "B", Choice::Tie), judgment("B", "A", Choice::Left)];
        let cfg = FitConfig {
            sampler: SamplerConfig {
                warmup: 100,
                draws: 100,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = fit_item_ability("item", AbilityDimension::HelpStudent, &js, &agents(), &cfg, 7).unwrap();
        let b = fit_item_ability("item", AbilityDimension::HelpStudent, &js, &agents(), &cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.config_hash, b.config_hash);
    }

    #[test]
    fn errors() {
        let cfg = FitConfig::default();
        assert!(matches!(
            fit_item_ability("item", AbilityDimension::HelpStudent, &[], &agents(), &cfg, 0),
            Err(BtError::NoJudgments)
        ));
        let js = vec![judgment("A", "C", Choice::Left)];
        assert!(matches!(
            fit_item_ability("item", AbilityDimension::HelpStudent, &js, &agents(), &cfg, 0),
            Err(BtError::UnknownAgent(a)) if a == "C"
        ));
        let js = vec![judgment("A", "B", Choice::Left)];
        assert!(matches!(
            fit_item_ability("other", AbilityDimension::HelpStudent, &js, &agents(), &cfg, 0),
            Err(BtError::MixedCell { .. })
        ));
    }
}
