use serde::Serialize;

/// Reference metadata for the models the harness was first pointed at.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub company: &'static str,
    pub model: &'static str,
    pub reasoning: &'static str,
    /// Vendor-published quality score; informational only.
    pub azure_quality: Option<f64>,
}

const fn entry(
    company: &'static str,
    model: &'static str,
    reasoning: &'static str,
    azure_quality: Option<f64>,
) -> CatalogEntry {
    CatalogEntry {
        company,
        model,
        reasoning,
        azure_quality,
    }
}

pub fn model_catalog() -> Vec<CatalogEntry> {
    vec![
        entry("OpenAI", "gpt-5", "minimal reasoning", Some(0.91)),
        entry("OpenAI", "gpt-5-mini", "minimal reasoning", Some(0.89)),
        entry(
            "xAI",
            "grok-3",
            "Non-reasoning but trained on reasoning-rich content",
            Some(0.85),
        ),
        entry("xAI", "grok-3-mini", "Lightweight reasoning", Some(0.87)),
        entry("Deepseek", "deepseek-chat", "N/A", None),
        entry(
            "Deepseek",
            "deepseek-reasoner",
            "significantly improved depth of reasoning",
            Some(0.87),
        ),
        entry("Meta", "meta.llama3-1-8b-instruct-v1:0", "N/A", None),
        entry("Meta", "meta.llama3-1-70b-instruct-v1:0", "N/A", None),
        entry("Google", "gemini-2.0-flash-lite", "N/A", None),
        entry("Google", "gemma-3-27b-it", "N/A", None),
    ]
}
