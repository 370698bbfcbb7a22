use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Choice, ComparisonJudgment, Outcome};

/// Turns every "cannot tell" answer into a left or right win with equal
/// probability, drawn from a generator seeded with `seed`. Decided
/// judgments pass through and order is preserved.
pub fn resolve_ties(judgments: &[ComparisonJudgment], seed: u64) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    judgments
        .iter()
        .map(|j| {
            let left_won = match j.choice {
                Choice::Left => true,
                Choice::Right => false,
                Choice::Tie => rng.random_bool(0.5),
            };
            Outcome::new(j.left_agent.clone(), j.right_agent.clone(), left_won)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::AbilityDimension;
    use chrono::{TimeZone, Utc};

    fn judgment(choice: Choice) -> ComparisonJudgment {
        ComparisonJudgment {
            judgment_id: "j".into(),
            evaluator_id: "e".into(),
            item_id: "i".into(),
            ability: AbilityDimension::HelpStudent,
            left_agent: "a".into(),
            right_agent: "b".into(),
            choice,
            timestamp: Utc.timestamp_opt(0, 0).unwrap(),
        }
    }

    #[test]
    fn decided_judgments_pass_through() {
        let js = vec![judgment(Choice::Left), judgment(Choice::Right), judgment(Choice::Left)];
        let wins: Vec<bool> = resolve_ties(&js, 1).iter().map(|o| o.left_won).collect();
        assert_eq!(wins, vec![true, false, true]);
    }

    #[test]
    fn ties_split_evenly() {
        let js = vec![judgment(Choice::Tie); 10_000];
        let out = resolve_ties(&js, 42);
        let left = out.iter().filter(|o| o.left_won).count() as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&left), "{left}");
        assert_eq!(out, resolve_ties(&js, 42));
        assert_ne!(out, resolve_ties(&js, 43));
    }
}
