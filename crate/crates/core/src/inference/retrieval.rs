use serde::Serialize;

use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::UnifiedModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub word: String,
    /// Squared Euclidean distance to the predicted vector.
    pub distance: f64,
}

/// Candidates by ascending distance, ties broken by word.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedRetrieval {
    pub ranking: Vec<Candidate>,
    pub gold: Option<String>,
    /// 1-based rank of the gold word; `table size + 1` when it is absent.
    pub gold_rank: Option<usize>,
}

impl RankedRetrieval {
    pub fn top(&self, k: usize) -> &[Candidate] {
        &self.ranking[..k.min(self.ranking.len())]
    }

    pub fn hit_at(&self, k: usize) -> bool {
        self.gold_rank.is_some_and(|r| r <= k)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ranks every candidate of `table` against `predicted`.
pub fn rank_candidates(
    predicted: &[f64],
    table: &EmbeddingTable,
    gold: Option<&str>,
    execution: Execution,
) -> Result<RankedRetrieval> {
    if table.is_empty() {
        return Err(Error::invalid("reverse_lookup", "candidate table is empty"));
    }
    if predicted.len() != table.dim() {
        return Err(Error::shape("reverse_lookup", &[table.dim()], &[predicted.len()]));
    }
    let idx: Vec<usize> = (0..table.len()).collect();
    let mut ranking = execution.map(&idx, |_, &i| Candidate {
        word: table.word(i).to_string(),
        distance: squared_distance(predicted, table.vector(i)),
    });
    ranking.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.word.cmp(&b.word)));
    let gold_rank = gold.map(|g| {
        ranking
            .iter()
            .position(|c| c.word == g)
            .map_or(ranking.len() + 1, |p| p + 1)
    });
    Ok(RankedRetrieval {
        ranking,
        gold: gold.map(str::to_string),
        gold_rank,
    })
}

/// The reverse-dictionary half of the model: definition ids (framed) to a
/// predicted word vector, then a full ranking of `table`.
pub fn reverse_lookup(
    model: &UnifiedModel,
    ids: &[usize],
    table: &EmbeddingTable,
    gold: Option<&str>,
    execution: Execution,
) -> Result<RankedRetrieval> {
    if ids.is_empty() {
        return Err(Error::invalid("reverse_lookup", "empty definition"));
    }
    if table.is_empty() {
        return Err(Error::invalid("reverse_lookup", "candidate table is empty"));
    }
    let predicted = model.predict_word_vector(ids)?;
    rank_candidates(&predicted, table, gold, execution)
}
