//! Knowledge-augmented CTR recommendation.
//!
//! The crate covers the whole offline pipeline: MovieLens-style data
//! preparation ([`dataset`]), factorization prompts and LLM-generated
//! knowledge ([`prompting`]), text-to-vector encoding with a binary
//! prestore ([`encoding`]), the hybrid-expert adaptor ([`adaptor`]),
//! DeepFM/DCNv2/DIN backbones that take the adapted vectors as extra
//! fields ([`backbones`]), and training, evaluation and benchmarking
//! ([`pipeline`]). Everything numerical runs on the small autodiff engine
//! in [`nn`].

pub mod adaptor;
pub mod backbones;
mod binio;
pub mod dataset;
pub mod encoding;
pub mod error;
mod kind;
pub mod nn;
pub mod pipeline;
pub mod prompting;

pub use error::{Error, Result};
pub use kind::{EntityKey, KnowledgeKind};
