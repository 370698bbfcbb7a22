//! Correlation, one-way ANOVA, pairwise group differences and
//! positive-ability rates over fitted abilities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use thiserror::Error;

use crate::bt::{AbilityDimension, ItemAbilityFit};

/// Studentized range quantile q(0.95; k = 3, df = 144), read from published
/// tables (3.356 at df = 120, 3.314 at df = infinity, interpolated in 1/df).
pub const DEFAULT_TUKEY_Q: f64 = 3.35;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("zero variance")]
    DegenerateVariance,
    #[error("critical value must be positive")]
    InvalidCriticalValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    pub labels: Vec<(String, String)>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(labels: Vec<(String, String)>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if x.len() != y.len() || labels.len() != x.len() {
            return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
        }
        if x.len() < 3 {
            return Err(StatsError::TooFew { needed: 3, got: x.len() });
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(Self { labels, x, y })
    }

    /// Unlabelled series, for ad-hoc use.
    pub fn from_xy(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        let labels = (0..x.len()).map(|i| (i.to_string(), String::new())).collect();
        Self::new(labels, x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// t statistic of a correlation coefficient with `df` degrees of freedom.
pub fn t_from_r(r: f64, df: usize) -> f64 {
    r * (df as f64 / (1.0 - r * r)).sqrt()
}

fn two_sided_t_p(t: f64, df: usize) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Pearson correlation with its t test and a 95% Fisher-z interval.
pub fn pearson(series: &PairedSeries) -> Result<Correlation, StatsError> {
    let n = series.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    let (mx, my) = (mean(&series.x), mean(&series.y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in series.x.iter().zip(&series.y) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = n - 2;
    let t = t_from_r(r, df);
    let p = two_sided_t_p(t, df);
    let (ci_low, ci_high) = if r.abs() == 1.0 || n <= 3 {
        (r, r)
    } else {
        let z = r.atanh();
        let se = 1.0 / ((n - 3) as f64).sqrt();
        let crit = Normal::standard().inverse_cdf(0.975);
        ((z - crit * se).tanh(), (z + crit * se).tanh())
    };
    Ok(Correlation {
        r,
        t,
        df,
        p,
        ci_low,
        ci_high,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    pub p: f64,
    /// Within-group mean square, reused for pairwise intervals.
    pub ms_within: f64,
}

fn check_groups<G: AsRef<[f64]>>(groups: &[G]) -> Result<(), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: groups.len(),
        });
    }
    for g in groups {
        let g = g.as_ref();
        if g.len() < 2 {
            return Err(StatsError::TooFew { needed: 2, got: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    Ok(())
}

/// One-way ANOVA: ratio of between-group to within-group mean squares.
pub fn anova_oneway<G: AsRef<[f64]>>(groups: &[G]) -> Result<Anova, StatsError> {
    check_groups(groups)?;
    let k = groups.len();
    let total: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let grand = groups.iter().flat_map(|g| g.as_ref().iter()).sum::<f64>() / total as f64;
    let (mut ss_between, mut ss_within) = (0.0, 0.0);
    for g in groups {
        let g = g.as_ref();
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let (df1, df2) = (k - 1, total - k);
    if ss_within == 0.0 && ss_between == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let ms_within = ss_within / df2 as f64;
    let f = (ss_between / df1 as f64) / ms_within;
    let p = if f.is_infinite() {
        0.0
    } else {
        FisherSnedecor::new(df1 as f64, df2 as f64).expect("df > 0").sf(f)
    };
    Ok(Anova {
        f,
        df1,
        df2,
        p,
        ms_within,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanDiff {
    pub reference: String,
    pub group: String,
    /// mean(group) - mean(reference)
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// All pairwise mean differences with Tukey-Kramer style intervals:
/// half-width = critical_value * sqrt(MS_within / 2 * (1/n_a + 1/n_b)).
/// Pairs are ordered (0,1), (0,2), .., (1,2), .. by group position.
pub fn group_mean_diffs(groups: &[(String, Vec<f64>)], critical_value: f64) -> Result<Vec<MeanDiff>, StatsError> {
    if !(critical_value > 0.0) {
        return Err(StatsError::InvalidCriticalValue);
    }
    let values: Vec<&[f64]> = groups.iter().map(|(_, g)| g.as_slice()).collect();
    let anova = anova_oneway(&values)?;
    let mut out = Vec::new();
    for (i, (name_a, a)) in groups.iter().enumerate() {
        for (name_b, b) in &groups[i + 1..] {
            let delta = mean(b) - mean(a);
            let half = critical_value * (anova.ms_within / 2.0 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
            out.push(MeanDiff {
                reference: name_a.clone(),
                group: name_b.clone(),
                delta,
                ci_low: delta - half,
                ci_high: delta + half,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveRate {
    pub agent: String,
    pub ability: AbilityDimension,
    pub n_items: usize,
    pub pct_alpha_positive: f64,
    pub pct_hdi_excludes_zero: f64,
    /// Share of items whose interval lies entirely above zero.
    pub pct_hdi_above_zero: f64,
}

/// Per (agent, ability): percentage of items with a positive posterior mean
/// and with an interval excluding zero. Agents appear in first-seen order,
/// abilities in their canonical order.
pub fn positive_ability_rates(fits: &[ItemAbilityFit]) -> Vec<PositiveRate> {
    let mut agents: Vec<&str> = Vec::new();
    for fit in fits {
        for a in &fit.agents {
            if !agents.contains(&a.agent.as_str()) {
                agents.push(&a.agent);
            }
        }
    }
    let mut out = Vec::new();
    for agent in agents {
        for ability in AbilityDimension::ALL {
            let cells: Vec<_> = fits
                .iter()
                .filter(|f| f.ability == ability)
                .filter_map(|f| f.agent(agent))
                .collect();
            if cells.is_empty() {
                continue;
            }
            let n = cells.len() as f64;
            let pct = |pred: &dyn Fn(&&crate::bt::AgentSummary) -> bool| {
                100.0 * cells.iter().filter(|c| pred(c)).count() as f64 / n
            };
            out.push(PositiveRate {
                agent: agent.to_string(),
                ability,
                n_items: cells.len(),
                pct_alpha_positive: pct(&|c| c.mean > 0.0),
                pct_hdi_excludes_zero: pct(&|c| c.interval().excludes_zero()),
                pct_hdi_above_zero: pct(&|c| c.hdi_low > 0.0),
            });
        }
    }
    out
}
