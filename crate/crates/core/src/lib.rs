pub mod config;
pub mod dedup;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod textmetrics;
