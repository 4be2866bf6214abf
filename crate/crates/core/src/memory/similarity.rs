use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::concept::{ConceptLibrary, ConceptMemory};
use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub name: String,
    pub similarity: f64,
}

/// Rank concepts by cosine similarity between the mean-pooled query and each
/// mean-pooled memory and keep the best `m`. Zero-norm pools score -1; ties
/// go to the lexicographically smaller name.
pub fn filter_concepts_by_similarity(
    lib: &ConceptLibrary,
    query: &TokenMatrix,
    m: usize,
) -> Result<Vec<RankedConcept>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let pooled_query = query
        .mean_row()
        .ok_or_else(|| Error::InvalidArgument("query has no tokens".into()))?;
    let mut ranked: Vec<RankedConcept> = lib
        .iter()
        .map(|c: &ConceptMemory| {
            if c.dim() != query.dim() {
                return Err(Error::Contract(format!(
                    "concept `{}` has dim {}, query has {}",
                    c.name,
                    c.dim(),
                    query.dim()
                )));
            }
            let similarity = c
                .tokens
                .mean_row()
                .and_then(|p| cosine(&pooled_query, &p))
                .unwrap_or(-1.0);
            Ok(RankedConcept {
                name: c.name.clone(),
                similarity,
            })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    ranked.truncate(m);
    Ok(ranked)
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::ViewProvenance;

    fn concept(name: &str, rows: &[Vec<f32>]) -> ConceptMemory {
        ConceptMemory {
            name: name.into(),
            tokens: TokenMatrix::from_rows(rows[0].len(), rows).unwrap(),
            views: vec![ViewProvenance {
                view_id: "v".into(),
                k_c: rows.len(),
                alpha: 0.0,
                indices: (0..rows.len()).collect(),
                keywords: vec![],
            }],
            backend_fingerprint: "fp".into(),
        }
    }

    fn lib() -> ConceptLibrary {
        ConceptLibrary::from_concepts(vec![
            concept("b-east", &[vec![1.0, 0.0, 0.0]]),
            concept("a-north", &[vec![0.0, 1.0, 0.0], vec![0.0, 3.0, 0.0]]),
            concept("c-up", &[vec![0.0, 0.0, 2.0]]),
            concept("zero", &[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]),
        ])
        .unwrap()
    }

    #[test]
    fn self_match_ranks_first() {
        let q = TokenMatrix::from_rows(3, &[vec![0.0, 1.0, 0.0], vec![0.0, 3.0, 0.0]]).unwrap();
        let r = filter_concepts_by_similarity(&lib(), &q, 1).unwrap();
        assert_eq!(r[0].name, "a-north");
        assert!((r[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_ties_fall_to_name_order_and_zero_norm_is_last() {
        // pooled query (1, 0, 0) is orthogonal to north and up: similarity 0
        let q = TokenMatrix::from_rows(3, &[vec![1.0, 0.0, 0.0]]).unwrap();
        let r = filter_concepts_by_similarity(&lib(), &q, 10).unwrap();
        let names: Vec<&str> = r.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["b-east", "a-north", "c-up", "zero"]);
        assert_eq!(r[1].similarity, 0.0);
        assert_eq!(r[2].similarity, 0.0);
        assert_eq!(r[3].similarity, -1.0);
    }

    #[test]
    fn argument_errors() {
        let q = TokenMatrix::from_rows(3, &[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(filter_concepts_by_similarity(&lib(), &q, 0).is_err());
        let empty = TokenMatrix::zeros(0, 3).unwrap();
        assert!(filter_concepts_by_similarity(&lib(), &empty, 1).is_err());
    }
}
