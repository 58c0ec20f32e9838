/// Approximate token count: one token per four characters, rounded up,
/// never less than one. Characters are Unicode scalar values. The rule is
/// provider-independent on purpose so budgets behave the same whichever
/// backend answers.
pub fn count_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4).max(1)
}
