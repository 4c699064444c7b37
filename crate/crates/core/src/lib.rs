//! Media storm detection over a news corpus: ingest, entity blocking,
//! embedding similarity, story clustering, storm identification and the
//! downstream statistics.

pub mod analysis;
pub mod clustering;
pub mod corpus;
pub mod entities;
pub mod error;
pub mod pipeline;
pub mod similarity;
pub mod storms;
pub mod synth;

pub use corpus::{Article, ArticleId, Corpus, DateRange, EntityMention, OutletProfile, Reliability, Scope};
pub use error::{Error, Result};
