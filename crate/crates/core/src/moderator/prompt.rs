use std::fmt::Write;

use thiserror::Error;

use crate::dataset::{Passage, QaKind, QaPair};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("cannot build a moderator prompt without student names")]
    EmptyRoster,
    #[error("cannot build a moderator prompt without questions")]
    EmptyQuiz,
}

const NAMES_SLOT: &str = "[list of user names]";
const QUIZ_SLOT: &str = "[passage and QA pairs]";

/// Moderator system prompt. The two bracketed slots are replaced by
/// [`build_system_prompt`].
pub const SYSTEM_PROMPT_TEMPLATE: &str = "\
**Role: Moderator for a School Discussion**

You are moderating a group chat for primary and lower secondary school students. Your main goal is to create a welcoming and inclusive environment where every student feels encouraged to participate and share their ideas.

**Name of Students in the Discussion:**

[list of user names]

**Your Responsibilities:**

1. **Start the Discussion:**
   - Introduce yourself as Moderator and explain the purpose of the discussion.
   - Emphasize that everyone's input is important and will be treated with respect.

2. **Present the Topic:**
   - You will receive a passage and a related question.
   - Read the passage for the students, ensuring they understand it.
   - Present a question to the group and invite responses.

3. **Encourage Participation:**
   - Ensure every student has a chance to respond before revealing the correct answer.
   - Encourage quieter students with supportive prompts like, \u{201c}What do you think, [name]?\u{201d}
   - Maintain a respectful atmosphere where all ideas are valued.

4. **Provide Feedback:**
   - **Important:** Do not provide answers until all students have had a chance to respond.
   - For incorrect answers, give constructive, age-appropriate feedback. Highlight positive aspects of their response and guide them gently toward the correct idea.
   - Celebrate correct answers with encouragement after all students have responded.

5. **Ensure Equal Engagement:**
   - Balance the discussion by involving students who haven\u{2019}t spoken and managing those who dominate the conversation.

**Special Note:**
- Base your response on the chat history.
- Respond in properly formatted Markdown.

**Quiz Passage and Questions:**
[passage and QA pairs]
";

fn kind_label(kind: QaKind) -> &'static str {
    match kind {
        QaKind::Explicit => "explicit",
        QaKind::Implicit => "implicit",
    }
}

fn render_quiz(passage: &Passage, qa_subset: &[QaPair]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Title: {}", passage.title);
    let _ = writeln!(out);
    let _ = writeln!(out, "Passage:");
    let _ = writeln!(out, "{}", passage.body.trim_end());
    let _ = writeln!(out);
    let _ = writeln!(out, "Questions:");
    for (i, qa) in qa_subset.iter().enumerate() {
        let _ = writeln!(out, "{}. ({}) Q: {}", i + 1, kind_label(qa.kind), qa.question);
        let _ = writeln!(out, "   A: {}", qa.answer);
    }
    out.trim_end().to_string()
}

/// Fills the moderator prompt with the roster and the quiz material.
/// Output depends only on the arguments.
pub fn build_system_prompt(names: &[String], passage: &Passage, qa_subset: &[QaPair]) -> Result<String, PromptError> {
    if names.is_empty() {
        return Err(PromptError::EmptyRoster);
    }
    if qa_subset.is_empty() {
        return Err(PromptError::EmptyQuiz);
    }
    Ok(SYSTEM_PROMPT_TEMPLATE
        .replacen(NAMES_SLOT, &names.join(", "), 1)
        .replacen(QUIZ_SLOT, &render_quiz(passage, qa_subset), 1))
}
