//! Reasoning library and tag index with exhaustive cosine retrieval.

mod embed;
mod store;

pub use embed::{
    cosine, EmbedError, Embedder, EmbeddingVector, HashEmbedder, PrecomputedEmbedder,
    RemoteEmbedder,
};
pub use store::{
    build_library, rank, top_k_demands, top_n_tags, LibraryBuildError, LibraryRecord,
    ReasoningEntry, ReasoningLibrary, RecordRejection, RejectionReason, Scored, StoreError,
    TagIndex, DEFAULT_K, DEFAULT_N,
};
