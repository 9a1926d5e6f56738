//! Factorization prompting: scenario factors, prompt templates, LLM clients
//! and the knowledge store.

mod corpus;
mod factors;
mod llm;
mod store;
mod templates;

pub use corpus::{item_requests, preference_requests, profile_strings, DEFAULT_PROMPT_HISTORY};
pub use factors::{elicit_factors, elicitation_prompt, parse_factor_list, ScenarioFactors};
pub use llm::{
    HttpLlm, LlmClient, LlmError, Provenance, RetryPolicy, StubLlm, API_KEY_ENV, DEFAULT_MAX_TOKENS,
};
pub use store::{generate_all, generate_knowledge, KnowledgeStore, KnowledgeText};
pub use templates::{
    build_item_prompt, build_preference_prompt, prompt_hash, HistoryLine, ItemDescription,
    PromptRequest,
};
