//! Risk-attitude elicitation for chat-completion language models.
//!
//! Models answer the ten-row Holt-Laury lottery sheet under a battery of
//! persona and framing contexts. Answers are aggregated into per-context
//! safe-choice curves, from which the harness derives manipulability of risk
//! aversion (MoRA), distance to human risk aversion (DHRA) and a gender gap.

pub mod backends;
pub mod contexts;
pub mod lottery;
pub mod metrics;
pub mod report;
pub mod runner;
