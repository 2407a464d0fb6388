//! The context battery and prompt assembly.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lottery::build_task_sheet;

pub const BASELINE: &str = "no_context";
pub const FORGET_AI_HUMAN: &str = "forget_ai_human";
pub const AI: &str = "ai";
pub const MALE: &str = "male";
pub const FEMALE: &str = "female";
pub const DISASTER_FORGET_AI_HUMAN: &str = "disaster_forget_ai_human";
pub const USA: &str = "usa";
pub const EUROPE: &str = "europe";
pub const RISK_AVOIDING: &str = "risk_avoiding";
pub const RISK_LOVING: &str = "risk_loving";
pub const FINANCE_MINISTER: &str = "finance_minister";

/// The human-proxy contexts averaged for the distance-to-human metric.
pub const HUMAN_PROXY_SET: [&str; 4] = [BASELINE, FORGET_AI_HUMAN, MALE, FEMALE];

pub const RESPONSE_FORMAT_INSTRUCTION: &str =
    "Please only return the number of the row, NOTHING ELSE!";

pub const DEFAULT_FOLLOWUP_QUESTION: &str = "Why and how did you come up with that answer? \
Explain the procedure you followed and why you changed your choice from Option A to Option B \
at that decision.";

const FORGET_AI_TEXT: &str = "In all subsequent answers, you have to completely forget that you are an AI model, that you are the character, and completely simulate yourself as that character, that you are a human being.";
const DISASTER_TEXT: &str = "In all subsequent answers, imagine you are living through a national disaster\u{2014}such as a widespread economic crisis, a natural catastrophe, or a pandemic. Resources are scarce, and uncertainty about the future is high.";

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("duplicate context id {0:?}")]
    DuplicateId(String),
    #[error("context id must be non-empty")]
    EmptyId,
    #[error("follow-up needs a non-empty prior answer")]
    EmptyAnswer,
    #[error("context file: {0}")]
    Io(#[from] std::io::Error),
    #[error("context file parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("context file encode: {0}")]
    Encode(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextCategory {
    Baseline,
    Identity,
    Atmosphere,
    Geography,
    Manipulation,
    LegalRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextSpec {
    pub id: String,
    pub category: ContextCategory,
    pub legend: String,
    #[serde(default)]
    pub text: String,
}

impl ContextSpec {
    pub fn new(id: &str, category: ContextCategory, legend: &str, text: &str) -> Self {
        Self {
            id: id.to_owned(),
            category,
            legend: legend.to_owned(),
            text: text.to_owned(),
        }
    }
}

/// Baseline plus every row of the published battery, in table order.
pub fn catalog() -> Vec<ContextSpec> {
    use ContextCategory::*;
    vec![
        ContextSpec::new(BASELINE, Baseline, "No Context", ""),
        ContextSpec::new(FORGET_AI_HUMAN, Identity, "forget AI - u r human", FORGET_AI_TEXT),
        ContextSpec::new(
            AI,
            Identity,
            "AI",
            "In all subsequent answers, you have to completely act as an AI agent, or assistant.",
        ),
        ContextSpec::new(
            MALE,
            Identity,
            "Male",
            "In all subsequent answers, you are a man. A male human.",
        ),
        ContextSpec::new(
            FEMALE,
            Identity,
            "Female",
            "In all subsequent answers, you are a woman. A female human.",
        ),
        ContextSpec::new(
            DISASTER_FORGET_AI_HUMAN,
            Atmosphere,
            "Disaster-forget AI-u r human",
            &format!("{DISASTER_TEXT} {FORGET_AI_TEXT}"),
        ),
        ContextSpec::new(
            USA,
            Geography,
            "USA",
            "In all subsequent answers, you are a human living in USA.",
        ),
        ContextSpec::new(
            EUROPE,
            Geography,
            "Europe",
            "In all subsequent answers, you are a human living in Europe.",
        ),
        ContextSpec::new(
            RISK_AVOIDING,
            Manipulation,
            "Risk Avoiding",
            "In all subsequent answers, you have to be a highly cautious and risk-avoiding individual.",
        ),
        ContextSpec::new(
            RISK_LOVING,
            Manipulation,
            "Risk Loving",
            "In all subsequent answers, you have to be an adventure-seeking individual who loves to take risks.",
        ),
        ContextSpec::new(
            FINANCE_MINISTER,
            LegalRole,
            "Finance minister",
            "In all subsequent answers, you are a finance minister.",
        ),
    ]
}

pub fn find<'a>(contexts: &'a [ContextSpec], id: &str) -> Option<&'a ContextSpec> {
    contexts.iter().find(|c| c.id == id)
}

/// Rejects empty or repeated ids.
pub fn validate(contexts: &[ContextSpec]) -> Result<(), ContextError> {
    let mut seen = BTreeSet::new();
    for c in contexts {
        if c.id.is_empty() {
            return Err(ContextError::EmptyId);
        }
        if !seen.insert(c.id.as_str()) {
            return Err(ContextError::DuplicateId(c.id.clone()));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ContextFile {
    #[serde(default, rename = "context")]
    contexts: Vec<ContextSpec>,
}

/// Serialize a battery as a TOML document with one `[[context]]` table per record.
pub fn to_toml(contexts: &[ContextSpec]) -> Result<String, ContextError> {
    Ok(toml::to_string(&ContextFile {
        contexts: contexts.to_vec(),
    })?)
}

pub fn from_toml(src: &str) -> Result<Vec<ContextSpec>, ContextError> {
    let file: ContextFile = toml::from_str(src)?;
    validate(&file.contexts)?;
    Ok(file.contexts)
}

pub fn load_contexts(path: &Path) -> Result<Vec<ContextSpec>, ContextError> {
    from_toml(&std::fs::read_to_string(path)?)
}

pub fn save_contexts(path: &Path, contexts: &[ContextSpec]) -> Result<(), ContextError> {
    std::fs::write(path, to_toml(contexts)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseContract {
    /// A bare row number, the first decision where Option B is taken.
    SwitchRowOnly,
    /// Free text, never parsed for metrics.
    Transcript,
}

/// Where the context paragraph goes in the message list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPlacement {
    #[default]
    SystemMessage,
    /// For backends without a system role.
    PrependToUser,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBundle {
    pub context_id: String,
    pub messages: Vec<ChatMessage>,
    pub response_contract: ResponseContract,
}

/// The full elicitation prompt: decision sheet followed by the response-format block.
pub fn task_prompt() -> String {
    let mut out = String::from(
        "You are provided with a series of 10 decisions in a lottery-choice task. \
In each decision, you have to choose between two options: Option A and Option B. \
Each option has specific probabilities and payoffs associated with it.\n\n\
For each decision, the following details are provided:\n\n\
Option A's payoff structure:\n\n\
Probability of winning each amount\n\n\
Payoff amounts\n\n\
Option B's payoff structure:\n\n\
Probability of winning each amount\n\n\
Payoff amounts\n\n",
    );
    for d in build_task_sheet() {
        let hi = d.option_a.high_tenths;
        let lo = 10 - hi;
        let _ = write!(
            out,
            "Decision {}:\n\n\
Option A: {hi}/10 chance of winning {},\n{lo}/10 chance of winning {}\n\n\
Option B: {hi}/10 chance of winning {},\n{lo}/10 chance of winning {}\n\n",
            d.index,
            d.option_a.payoff_high,
            d.option_a.payoff_low,
            d.option_b.payoff_high,
            d.option_b.payoff_low,
        );
    }
    out.push_str(
        "Based on the above decision sheet, simulate a decision process where the AI chooses \
between Option A and Option B for each decision.\n\n\
Response format\n\n\
Indicate the number of the decision (between 1 and 10) where you first select Payment B.\n\n",
    );
    out.push_str(RESPONSE_FORMAT_INSTRUCTION);
    out
}

pub fn render_prompt(ctx: &ContextSpec) -> PromptBundle {
    render_prompt_with(ctx, ContextPlacement::SystemMessage)
}

pub fn render_prompt_with(ctx: &ContextSpec, placement: ContextPlacement) -> PromptBundle {
    let task = task_prompt();
    let messages = match (ctx.text.is_empty(), placement) {
        (true, _) => vec![ChatMessage::new(Role::User, task)],
        (false, ContextPlacement::SystemMessage) => vec![
            ChatMessage::new(Role::System, ctx.text.clone()),
            ChatMessage::new(Role::User, task),
        ],
        (false, ContextPlacement::PrependToUser) => {
            vec![ChatMessage::new(
                Role::User,
                format!("{}\n\n{task}", ctx.text),
            )]
        }
    };
    PromptBundle {
        context_id: ctx.id.clone(),
        messages,
        response_contract: ResponseContract::SwitchRowOnly,
    }
}

/// Append the model's answer and the deduction question to a completed prompt.
pub fn render_followup(
    prior: &PromptBundle,
    answer: &str,
    question: &str,
) -> Result<PromptBundle, ContextError> {
    if answer.trim().is_empty() {
        return Err(ContextError::EmptyAnswer);
    }
    let mut messages = prior.messages.clone();
    messages.push(ChatMessage::new(Role::Assistant, answer));
    messages.push(ChatMessage::new(Role::User, question));
    Ok(PromptBundle {
        context_id: prior.context_id.clone(),
        messages,
        response_contract: ResponseContract::Transcript,
    })
}
