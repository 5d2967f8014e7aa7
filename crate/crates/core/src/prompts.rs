//! Named system prompt presets for evaluation and fine-tune export.

/// Long prompt for base models: asks for short, easy-to-read answers and names the
/// reading-ease target.
pub const VERBOSE_BASE: &str = "You are a helpful assistant. You answer questions in a natural, conversational tone, like in a spoken conversation. You give short and concise answers. Your answers must be one to four sentences long. The Flesch Reading Ease Score is a metric to assess how difficult a text passage is to understand. Higher scores indicate text that is easier. Please formulate your answer such that it would receive a Flesch Reading Ease Score of above 60.";

/// Short prompt used in fine-tune files and when evaluating fine-tuned models.
pub const CONCISE_FINETUNE: &str =
    "You are a helpful assistant. You answer questions in a natural, conversational tone, like in a spoken conversation.";

pub const PRESETS: [(&str, &str); 2] = [
    ("verbose-base", VERBOSE_BASE),
    ("concise-finetune", CONCISE_FINETUNE),
];

pub const DEFAULT_EXPORT_PRESET: &str = "concise-finetune";

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, p)| *p)
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}
