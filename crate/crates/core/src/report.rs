//! Summary report over fitted abilities: correlation with uptake, between
//! agent comparisons, positive-ability rates and box-plot series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bt::{AbilityDimension, ItemAbilityFit};
use crate::generation::CandidateReply;
use crate::stats::{
    anova_oneway, group_mean_diffs, pearson, positive_ability_rates, Anova, Correlation, MeanDiff, PairedSeries,
    PositiveRate, DEFAULT_TUKEY_Q,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Studentized-range critical value for the mean-difference intervals.
    /// The default suits three groups with about 144 residual degrees of
    /// freedom at the 95% level.
    pub tukey_q: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            tukey_q: DEFAULT_TUKEY_Q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub ability: AbilityDimension,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Correlation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub ability: AbilityDimension,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anova: Option<Anova>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanDiffRow {
    pub ability: AbilityDimension,
    #[serde(flatten)]
    pub diff: MeanDiff,
}

/// Posterior means of one agent on one ability, one value per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSeries {
    pub ability: AbilityDimension,
    pub agent: String,
    pub item_ids: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub seed: u64,
    pub config_hashes: Vec<String>,
    pub n_fits: usize,
    pub agents: Vec<String>,
    pub tukey_q: f64,
    pub correlations: Vec<CorrelationRow>,
    pub anova: Vec<AnovaRow>,
    pub mean_diffs: Vec<MeanDiffRow>,
    pub positive_rates: Vec<PositiveRate>,
    pub boxplots: Vec<BoxplotSeries>,
    pub rendered: String,
}

/// Builds the report. The uptake correlation pools every reply that has an
/// uptake score and a fitted mean on the ability.
pub fn build_report(fits: &[ItemAbilityFit], replies: &[CandidateReply], config: &ReportConfig, seed: u64) -> AnalysisReport {
    let mut fits: Vec<&ItemAbilityFit> = fits.iter().collect();
    fits.sort_by(|a, b| (&a.item_id, a.ability).cmp(&(&b.item_id, b.ability)));

    let mut agents: Vec<String> = Vec::new();
    for f in &fits {
        for a in &f.agents {
            if !agents.contains(&a.agent) {
                agents.push(a.agent.clone());
            }
        }
    }
    let mut config_hashes: Vec<String> = fits.iter().map(|f| f.config_hash.clone()).collect();
    config_hashes.sort();
    config_hashes.dedup();

    let uptake: BTreeMap<(&str, &str), f64> = replies
        .iter()
        .filter_map(|r| r.uptake_score.map(|u| ((r.item_id.as_str(), r.agent.as_str()), u)))
        .collect();

    let mut correlations = Vec::new();
    let mut anova = Vec::new();
    let mut mean_diffs = Vec::new();
    let mut boxplots = Vec::new();
    for ability in AbilityDimension::ALL {
        let cells: Vec<&ItemAbilityFit> = fits.iter().copied().filter(|f| f.ability == ability).collect();

        let mut labels = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for f in &cells {
            for a in &f.agents {
                if let Some(&u) = uptake.get(&(f.item_id.as_str(), a.agent.as_str())) {
                    labels.push((f.item_id.clone(), a.agent.clone()));
                    x.push(u);
                    y.push(a.mean);
                }
            }
        }
        let n = x.len();
        let corr = if n == 0 {
            Err("no uptake scores".to_string())
        } else {
            PairedSeries::new(labels, x, y)
                .and_then(|s| pearson(&s))
                .map_err(|e| e.to_string())
        };
        correlations.push(match corr {
            Ok(c) => CorrelationRow {
                ability,
                n,
                correlation: Some(c),
                unavailable: None,
            },
            Err(reason) => CorrelationRow {
                ability,
                n,
                correlation: None,
                unavailable: Some(reason),
            },
        });

        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for agent in &agents {
            let mut ids = Vec::new();
            let mut values = Vec::new();
            for f in &cells {
                if let Some(a) = f.agent(agent) {
                    ids.push(f.item_id.clone());
                    values.push(a.mean);
                }
            }
            if values.is_empty() {
                continue;
            }
            boxplots.push(BoxplotSeries {
                ability,
                agent: agent.clone(),
                item_ids: ids,
                values: values.clone(),
            });
            groups.push((agent.clone(), values));
        }
        if groups.is_empty() {
            anova.push(AnovaRow {
                ability,
                anova: None,
                unavailable: Some("no fits".into()),
            });
            continue;
        }
        match anova_oneway(&groups.iter().map(|(_, g)| g.as_slice()).collect::<Vec<_>>()) {
            Ok(a) => {
                anova.push(AnovaRow {
                    ability,
                    anova: Some(a),
                    unavailable: None,
                });
                if let Ok(diffs) = group_mean_diffs(&groups, config.tukey_q) {
                    mean_diffs.extend(diffs.into_iter().map(|diff| MeanDiffRow { ability, diff }));
                }
            }
            Err(e) => anova.push(AnovaRow {
                ability,
                anova: None,
                unavailable: Some(e.to_string()),
            }),
        }
    }

    let owned: Vec<ItemAbilityFit> = fits.iter().map(|f| (*f).clone()).collect();
    let positive_rates = positive_ability_rates(&owned);
    let mut report = AnalysisReport {
        seed,
        config_hashes,
        n_fits: fits.len(),
        agents,
        tukey_q: config.tukey_q,
        correlations,
        anova,
        mean_diffs,
        positive_rates,
        boxplots,
        rendered: String::new(),
    };
    report.rendered = render(&report);
    report
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<.001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Plain-text tables: correlations and the between-agent tests with two
/// decimals, rates in whole percent.
pub fn render(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let w = 26;
    let _ = writeln!(out, "Comparative judgment report (seed {}, {} fits)", report.seed, report.n_fits);
    let _ = writeln!(out);

    let _ = writeln!(out, "Uptake and ability: Pearson correlation");
    let _ = writeln!(out, "{:<w$} {:>4} {:>6} {:>6} {:>4} {:>6}  95% CI", "Ability", "n", "r", "t", "df", "p");
    for row in &report.correlations {
        match &row.correlation {
            Some(c) => {
                let _ = writeln!(
                    out,
                    "{:<w$} {:>4} {:>6.2} {:>6.2} {:>4} {:>6}  [{:.2}, {:.2}]",
                    row.ability.question(),
                    row.n,
                    c.r,
                    c.t,
                    c.df,
                    fmt_p(c.p),
                    c.ci_low,
                    c.ci_high
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<w$} unavailable ({})",
                    row.ability.question(),
                    row.unavailable.as_deref().unwrap_or("")
                );
            }
        }
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Between-agent one-way ANOVA on posterior means");
    let _ = writeln!(out, "{:<w$} {:>8} {:>9} {:>6}", "Ability", "F", "df", "p");
    for row in &report.anova {
        match &row.anova {
            Some(a) => {
                let _ = writeln!(
                    out,
                    "{:<w$} {:>8.2} {:>9} {:>6}",
                    row.ability.question(),
                    a.f,
                    format!("({},{})", a.df1, a.df2),
                    fmt_p(a.p)
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<w$} unavailable ({})",
                    row.ability.question(),
                    row.unavailable.as_deref().unwrap_or("")
                );
            }
        }
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Mean differences (q = {:.2})", report.tukey_q);
    let _ = writeln!(out, "{:<w$} {:<28} {:>6}  95% CI", "Ability", "Comparison", "Delta");
    for row in &report.mean_diffs {
        let _ = writeln!(
            out,
            "{:<w$} {:<28} {:>6.2}  [{:.2}, {:.2}]",
            row.ability.question(),
            format!("{} - {}", row.diff.group, row.diff.reference),
            row.diff.delta,
            row.diff.ci_low,
            row.diff.ci_high
        );
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Replies with a positive ability (% of items)");
    let _ = writeln!(
        out,
        "{:<16} {:<w$} {:>4} {:>7} {:>13}",
        "Agent", "Ability", "n", "mean>0", "HDI excl. 0"
    );
    for r in &report.positive_rates {
        let _ = writeln!(
            out,
            "{:<16} {:<w$} {:>4} {:>6.0}% {:>12.0}%",
            r.agent,
            r.ability.question(),
            r.n_items,
            r.pct_alpha_positive,
            r.pct_hdi_excludes_zero
        );
    }
    out
}
