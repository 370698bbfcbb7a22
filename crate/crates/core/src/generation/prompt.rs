use crate::corpus::{suffix_within_budget, DialogueTurn, Speaker};
use crate::tokenize::count_tokens;

use super::{GenerationError, GenerationRequest};

/// Instruction text placed at the top of every prompt unless overridden.
pub const DEFAULT_PERSONA: &str = "The following is a conversation with a teacher. The teacher is polite, helpful, professional, on topic, and factually correct.";

/// Longest contiguous tail of `history` whose turn texts fit in
/// `remaining_budget` tokens. Turns are never split.
pub fn truncate_history(history: &[DialogueTurn], remaining_budget: usize) -> &[DialogueTurn] {
    suffix_within_budget(history, remaining_budget, DialogueTurn::token_count)
}

fn rendered_turn_cost(turn: &DialogueTurn) -> usize {
    1 + turn.token_count()
}

/// Renders the persona, as much recent history as fits, the student line and
/// a trailing teacher cue. The whitespace token count of the result never
/// exceeds `request.token_budget`.
pub fn build_prompt(request: &GenerationRequest) -> Result<String, GenerationError> {
    let fixed = count_tokens(&request.persona_preamble) + count_tokens(&request.student_utterance) + 2;
    if fixed > request.token_budget {
        return Err(GenerationError::BudgetExhausted {
            required: fixed,
            budget: request.token_budget,
        });
    }
    // Role prefixes are one token each, so rendered turns are charged for them.
    let history = suffix_within_budget(&request.history, request.token_budget - fixed, rendered_turn_cost);

    let mut lines = Vec::with_capacity(history.len() + 3);
    if !request.persona_preamble.trim().is_empty() {
        lines.push(request.persona_preamble.trim().to_string());
    }
    for turn in history {
        lines.push(format!("{} {}", turn.speaker.role_label(), turn.text.trim()));
    }
    lines.push(format!("{} {}", Speaker::Student.role_label(), request.student_utterance.trim()));
    lines.push(Speaker::Teacher.role_label().to_string());
    Ok(lines.join("\n"))
}
