//! Vector stores for literature knowledge and design experience, with the reading and
//! reflecting pipelines that fill them.

mod embed;
mod reader;
mod reflector;
mod store;

use thiserror::Error;

pub use embed::{
    cosine, EmbedError, EmbeddingProvider, HashingEmbedder, RemoteEmbedder, DEFAULT_EMBEDDING_ENDPOINT,
    DEFAULT_EMBEDDING_MODEL, DEFAULT_HASHING_DIM,
};
pub use reader::{
    check_bands, in_band, ingest_corpus, ingest_paper, load_corpus, read_paper, retrieve_inspirations, CorpusReport,
    KnowledgeItem, Paper, PaperIngest, Retrieved, DEFAULT_BANDS,
};
pub use reflector::{
    classify, limit_words, record_id, reflect_error, reflect_history, reflect_performance, retrieve_experience, Advice,
    AdviceKind, Category, ExperienceRecord, Lesson, ReflectionReport, EXPERIENCE_TOP_K, SUGGESTION_WORD_LIMIT,
};
pub use store::{StoreEntry, StoreError, VectorStore};

use crate::agents::{AgentError, LlmError, PromptError};

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("the store is empty")]
    EmptyStore,
    #[error("invalid similarity bands: {0}")]
    InvalidBands(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("corpus i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<PromptError> for KnowledgeError {
    fn from(e: PromptError) -> Self {
        KnowledgeError::Agent(e.into())
    }
}

impl From<LlmError> for KnowledgeError {
    fn from(e: LlmError) -> Self {
        KnowledgeError::Agent(e.into())
    }
}
