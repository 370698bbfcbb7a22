//! Positional-bias screening of raters via a per-rater intercept fit.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bt::{sample_judgments, summarize_column, BtError, ComparisonJudgment, FitConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreeningConfig {
    pub fit: FitConfig,
    /// Raters with fewer judgments are kept without fitting.
    pub min_judgments: usize,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            min_judgments: 6,
        }
    }
}

/// Screening outcome for one rater. Intercept fields are absent when the
/// rater had too few judgments to be screened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorBiasFit {
    pub evaluator_id: String,
    pub intercept_mean: Option<f64>,
    pub hdi_low: Option<f64>,
    pub hdi_high: Option<f64>,
    pub n_judgments: usize,
    pub excluded: bool,
}

/// Fits one intercept plus one strength per agent identity, pooling every
/// item and ability the rater judged. The rater is excluded when the
/// intercept interval lies entirely above or below zero.
pub fn fit_evaluator_bias(
    evaluator_id: &str,
    judgments: &[ComparisonJudgment],
    config: &ScreeningConfig,
    seed: u64,
) -> Result<EvaluatorBiasFit, BtError> {
    if judgments.len() < config.min_judgments.max(1) {
        return Ok(EvaluatorBiasFit {
            evaluator_id: evaluator_id.to_string(),
            intercept_mean: None,
            hdi_low: None,
            hdi_high: None,
            n_judgments: judgments.len(),
            excluded: false,
        });
    }
    let agents: Vec<String> = judgments
        .iter()
        .flat_map(|j| [j.left_agent.clone(), j.right_agent.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let draws = sample_judgments(judgments, &agents, &config.fit, seed)?;
    let (mean, interval) = summarize_column(&draws, 0, config.fit.hdi_mass)?;
    Ok(EvaluatorBiasFit {
        evaluator_id: evaluator_id.to_string(),
        intercept_mean: Some(mean),
        hdi_low: Some(interval.low),
        hdi_high: Some(interval.high),
        n_judgments: judgments.len(),
        excluded: interval.excludes_zero(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScreeningResult {
    pub retained: Vec<ComparisonJudgment>,
    pub removed: Vec<ComparisonJudgment>,
    /// One entry per rater, ordered by evaluator id.
    pub fits: Vec<EvaluatorBiasFit>,
}

impl ScreeningResult {
    pub fn excluded_ids(&self) -> Vec<&str> {
        self.fits
            .iter()
            .filter(|f| f.excluded)
            .map(|f| f.evaluator_id.as_str())
            .collect()
    }
}

/// Fits every rater independently and drops all judgments of excluded
/// raters. Input order is preserved within `retained` and `removed`.
pub fn screen_evaluators(
    judgments: &[ComparisonJudgment],
    config: &ScreeningConfig,
    seed: u64,
) -> Result<ScreeningResult, BtError> {
    let mut by_rater: BTreeMap<&str, Vec<ComparisonJudgment>> = BTreeMap::new();
    for j in judgments {
        by_rater.entry(j.evaluator_id.as_str()).or_default().push(j.clone());
    }
    let fits: Vec<EvaluatorBiasFit> = by_rater
        .par_iter()
        .map(|(id, js)| fit_evaluator_bias(id, js, config, derive_seed(seed, &["evaluator", id])))
        .collect::<Result<_, _>>()?;

    let excluded: BTreeSet<&str> = fits
        .iter()
        .filter(|f| f.excluded)
        .map(|f| f.evaluator_id.as_str())
        .collect();
    let (removed, retained): (Vec<_>, Vec<_>) = judgments
        .iter()
        .cloned()
        .partition(|j| excluded.contains(j.evaluator_id.as_str()));
    if !fits.is_empty() && excluded.len() == fits.len() {
        tracing::warn!(raters = fits.len(), "every rater was excluded by bias screening");
    }
    Ok(ScreeningResult { retained, removed, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::{AbilityDimension, Choice};
    use chrono::{TimeZone, Utc};

    fn judgment(rater: &str, n: usize, left: &str, right: &str, choice: Choice) -> ComparisonJudgment {
        ComparisonJudgment {
            judgment_id: format!("{rater}-{n}"),
            evaluator_id: rater.into(),
            item_id: format!("item{}", n % 5),
            ability: AbilityDimension::ALL[n % 3],
            left_agent: left.into(),
            right_agent: right.into(),
            choice,
            timestamp: Utc.timestamp_opt(n as i64, 0).unwrap(),
        }
    }

    const PAIRS: [(&str, &str); 3] = [("teacher", "blender"), ("teacher", "gpt3"), ("blender", "gpt3")];

    fn always_left(rater: &str, n: usize) -> Vec<ComparisonJudgment> {
        (0..n)
            .map(|i| {
                let (a, b) = PAIRS[i % 3];
                let (l, r) = if (i / 3) % 2 == 0 { (a, b) } else { (b, a) };
                judgment(rater, i, l, r, Choice::Left)
            })
            .collect()
    }

    /// Each agent pair shown in both orders with mirrored answers, so left
    /// and right wins are exactly balanced.
    fn balanced(rater: &str, n: usize) -> Vec<ComparisonJudgment> {
        (0..n)
            .map(|i| {
                let (a, b) = PAIRS[(i / 2) % 3];
                if i % 2 == 0 {
                    judgment(rater, i, a, b, Choice::Left)
                } else {
                    judgment(rater, i, b, a, Choice::Right)
                }
            })
            .collect()
    }

    #[test]
    fn always_left_rater_is_excluded() {
        let fit = fit_evaluator_bias("r", &always_left("r", 45), &ScreeningConfig::default(), 1).unwrap();
        assert!(fit.excluded);
        assert!(fit.hdi_low.unwrap() > 0.0);
    }

    #[test]
    fn balanced_rater_is_kept() {
        let fit = fit_evaluator_bias("r", &balanced("r", 48), &ScreeningConfig::default(), 1).unwrap();
        assert!(!fit.excluded);
        assert!(fit.intercept_mean.unwrap().abs() < 0.15);
    }

    #[test]
    fn few_judgments_are_not_screened() {
        let fit = fit_evaluator_bias("r", &always_left("r", 5), &ScreeningConfig::default(), 1).unwrap();
        assert!(!fit.excluded);
        assert_eq!(fit.intercept_mean, None);
    }

    #[test]
    fn screening_partitions_input() {
        let mut all = balanced("fair", 30);
        all.extend(always_left("biased", 30));
        all.extend(balanced("fair2", 30));
        let res = screen_evaluators(&all, &ScreeningConfig::default(), 3).unwrap();
        assert_eq!(res.excluded_ids(), vec!["biased"]);
        assert_eq!(res.retained.len() + res.removed.len(), all.len());
        assert!(res.removed.iter().all(|j| j.evaluator_id == "biased"));
        assert!(res.retained.iter().all(|j| j.evaluator_id != "biased"));
    }

    #[test]
    fn nobody_biased_is_identity() {
        let mut all = balanced("a", 12);
        all.extend(balanced("b", 12));
        let res = screen_evaluators(&all, &ScreeningConfig::default(), 0).unwrap();
        assert_eq!(res.retained, all);
    }

    #[test]
    fn everyone_biased_leaves_nothing() {
        let mut all = always_left("a", 30);
        all.extend(always_left("b", 30));
        let res = screen_evaluators(&all, &ScreeningConfig::default(), 0).unwrap();
        assert!(res.retained.is_empty());
        assert_eq!(res.fits.len(), 2);
    }

    #[test]
    fn empty_input() {
        let res = screen_evaluators(&[], &ScreeningConfig::default(), 0).unwrap();
        assert!(res.retained.is_empty() && res.fits.is_empty());
    }
}
