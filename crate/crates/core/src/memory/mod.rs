//! Concept memories: sizing, assembly, persistence and retrieval.

mod concept;
mod similarity;
mod sizing;
mod store;

pub use concept::{build_concept_memory, ConceptLibrary, ConceptMemory, ViewInput, ViewProvenance};
pub use similarity::{filter_concepts_by_similarity, RankedConcept};
pub use sizing::{dynamic_k, parse_size_reply, MemoryBudget, SizeEstimate, DEFAULT_K_MAX};
pub use store::{
    decode_library, encode_library, load_library, save_library, save_library_crashing, CrashPoint, FORMAT_MAJOR,
    FORMAT_MINOR, LIBRARY_MAGIC,
};
