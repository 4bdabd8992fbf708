use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episodes::Episode;
use crate::model::{MetaSeq2Seq, ModelError};
use crate::numerics::Real;
use crate::scan::{Instruction, Pair};

/// One query the model got wrong.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryError {
    pub instruction: String,
    pub target: String,
    pub predicted: String,
    pub overflow: bool,
}

/// Exact-match results on one set of queries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub correct: usize,
    pub total: usize,
    pub overflows: usize,
    pub errors: Vec<QueryError>,
}

impl EvalResult {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn merge(&mut self, other: EvalResult) {
        self.correct += other.correct;
        self.total += other.total;
        self.overflows += other.overflows;
        self.errors.extend(other.errors);
    }
}

/// Greedy exact-match accuracy of `queries` given one support set.
pub fn evaluate_pairs<F: Real>(model: &MetaSeq2Seq<F>, support: &[Pair], queries: &[Pair]) -> Result<EvalResult, ModelError> {
    let instructions: Vec<Instruction> = queries.iter().map(|p| p.instruction.clone()).collect();
    let preds = model.predict(support, &instructions, false)?;
    let mut r = EvalResult { total: queries.len(), ..Default::default() };
    for (p, q) in preds.iter().zip(queries) {
        if p.overflow {
            r.overflows += 1;
        }
        if p.matches(q.actions.actions()) {
            r.correct += 1;
        } else {
            r.errors.push(QueryError {
                instruction: q.instruction.to_string(),
                target: q.actions.to_string(),
                predicted: p.output.join(" "),
                overflow: p.overflow,
            });
        }
    }
    Ok(r)
}

/// Evaluates every query of every episode. With `subset = Some((k, seed))`
/// only `k` queries, drawn uniformly without replacement across all
/// episodes, are scored.
pub fn evaluate<F: Real>(
    model: &MetaSeq2Seq<F>,
    episodes: &[Episode],
    subset: Option<(usize, u64)>,
) -> Result<EvalResult, ModelError> {
    let total: usize = episodes.iter().map(|e| e.query.len()).sum();
    let mut keep = vec![subset.is_none(); total];
    if let Some((k, seed)) = subset {
        for i in index::sample(&mut ChaCha8Rng::seed_from_u64(seed), total, k.min(total)) {
            keep[i] = true;
        }
    }
    let mut result = EvalResult::default();
    let mut offset = 0;
    for ep in episodes {
        let queries: Vec<Pair> =
            ep.query.iter().enumerate().filter(|(i, _)| keep[offset + i]).map(|(_, p)| p.clone()).collect();
        offset += ep.query.len();
        if !queries.is_empty() {
            result.merge(evaluate_pairs(model, &ep.support, &queries)?);
        }
    }
    Ok(result)
}

/// Accuracy across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Sample standard deviation; zero with fewer than two seeds.
    pub sd: f64,
}

impl EvalReport {
    pub fn from_accuracies(per_seed: Vec<(u64, f64)>) -> Self {
        let n = per_seed.len() as f64;
        let mean = if per_seed.is_empty() { 0.0 } else { per_seed.iter().map(|p| p.1).sum::<f64>() / n };
        let sd = if per_seed.len() < 2 {
            0.0
        } else {
            (per_seed.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { per_seed, mean, sd }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sd() {
        let r = EvalReport::from_accuracies(vec![(1, 0.9), (2, 1.0), (3, 0.8)]);
        assert!((r.mean - 0.9).abs() < 1e-12);
        assert!((r.sd - 0.1).abs() < 1e-12);
        assert_eq!(EvalReport::from_accuracies(vec![(1, 0.5)]).sd, 0.0);
    }
}
