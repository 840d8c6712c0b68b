//! The two deployable halves of a trained model: reverse-dictionary
//! retrieval and definition generation.

mod beam;
mod retrieval;

pub use beam::{
    beam_search, beam_search_shared, generatable, generate_definition, greedy_decode, BeamHypothesis, DecodeParams,
    WordSource,
};
pub use retrieval::{rank_candidates, reverse_lookup, squared_distance, Candidate, RankedRetrieval};
