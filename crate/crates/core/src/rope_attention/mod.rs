//! RoPE, full-sequence attention, attention recovery over kept tokens and
//! the compressed clean KV cache.

mod attention;
mod cache;
mod rope;

pub use attention::{
    aggregated_scores, copy_owners, full_attention_oracle, materialized_scores,
    recovered_attention_aggregated, recovered_attention_materialized, validate_coverage,
    write_scores_csv, AttentionInputs, CausalMask, CoverageSet, ScoreRow,
};
pub use cache::{cache_append, duplication_source, CacheChunk, DuplicationMode, KvCache};
pub use rope::{rope_apply, PositionDomain, RopeParams, DEFAULT_ROPE_BASE};

pub(crate) use rope::rope_apply_with;
