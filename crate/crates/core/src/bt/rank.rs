use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    /// Per agent, counts of draws at each rank (1 = strongest).
    pub histograms: Vec<BTreeMap<usize, usize>>,
    pub mean_rank: Vec<f64>,
    /// Most frequent rank per agent; the better rank wins a count tie.
    pub modal_rank: Vec<usize>,
}

/// Ranks agents within every draw by descending strength and aggregates.
/// `rows` yields one strength vector per draw in declared agent order; an
/// exact tie goes to the agent declared first.
pub fn rank_per_draw<'a>(rows: impl IntoIterator<Item = &'a [f64]>, n_agents: usize) -> RankSummary {
    let mut counts = vec![vec![0usize; n_agents]; n_agents];
    let mut order: Vec<usize> = (0..n_agents).collect();
    let mut n_draws = 0usize;
    for row in rows {
        assert_eq!(row.len(), n_agents, "draw width must equal agent count");
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for (rank0, &agent) in order.iter().enumerate() {
            counts[agent][rank0] += 1;
        }
        order.sort_unstable();
        n_draws += 1;
    }
    let mean_rank = counts
        .iter()
        .map(|c| {
            let total: usize = c.iter().enumerate().map(|(r, n)| (r + 1) * n).sum();
            if n_draws == 0 {
                f64::NAN
            } else {
                total as f64 / n_draws as f64
            }
        })
        .collect();
    let modal_rank = counts
        .iter()
        .map(|c| {
            c.iter()
                .enumerate()
                .fold((0, 0), |best, (r, &n)| if n > best.1 { (r, n) } else { best })
                .0
                + 1
        })
        .collect();
    let histograms = counts
        .into_iter()
        .map(|c| {
            c.into_iter()
                .enumerate()
                .filter(|(_, n)| *n > 0)
                .map(|(r, n)| (r + 1, n))
                .collect()
        })
        .collect();
    RankSummary {
        histograms,
        mean_rank,
        modal_rank,
    }
}
