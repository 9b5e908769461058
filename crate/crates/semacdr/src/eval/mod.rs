//! Leave-one-out evaluation with sampled negatives: candidate sampling,
//! HR@k / NDCG@k, per-split evaluation and multi-run aggregation.

mod report;

pub use report::{EvalProtocol, EvalReport, MetricSummary};

use std::collections::BTreeSet;
use std::rc::Rc;

use thiserror::Error;

use crate::model::{
    propagate_all, user_final_state, ForwardContext, ModelState, TargetVisibility,
};
use crate::params::Bound;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("user {user} has only {available} eligible negatives, need {needed}")]
    InsufficientNegatives { user: usize, needed: usize, available: usize },
    #[error("evaluation split {0:?} is not an evaluation split")]
    NotAnEvalSplit(TargetVisibility),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Candidate list for one test case: the ground truth plus `num_negatives`
/// target items sampled uniformly without replacement from outside the
/// user's full target history. Deterministic in `(run_seed, user)`, so
/// candidate sets stay paired across model variants.
pub fn sample_candidates(
    ground_truth: usize,
    target_history: &BTreeSet<usize>,
    target_items: std::ops::Range<usize>,
    num_negatives: usize,
    run_seed: u64,
    user: usize,
) -> Result<Vec<usize>, EvalError> {
    debug_assert!(target_history.contains(&ground_truth), "ground truth is an interaction");
    let mut eligible: Vec<usize> =
        target_items.filter(|i| !target_history.contains(i)).collect();
    if eligible.len() < num_negatives {
        return Err(EvalError::InsufficientNegatives {
            user,
            needed: num_negatives,
            available: eligible.len(),
        });
    }
    let mut rng = crate::rng::stream(derive_seed(run_seed, "candidates", user as u64), "draw", 0);
    let mut candidates = Vec::with_capacity(num_negatives + 1);
    candidates.push(ground_truth);
    // partial Fisher–Yates: the first num_negatives slots become the sample
    use rand::Rng;
    for i in 0..num_negatives {
        let j = rng.random_range(i..eligible.len());
        eligible.swap(i, j);
        candidates.push(eligible[i]);
    }
    Ok(candidates)
}

/// Hit and NDCG at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMetrics {
    pub hit: f64,
    pub ndcg: f64,
}

/// Rank the ground truth pessimistically (ties count as ranked higher) and
/// compute hit@k and ndcg@k for each cutoff.
pub fn rank_metrics(scores: &[f64], ground_truth_pos: usize, ks: &[usize]) -> Vec<(usize, KMetrics)> {
    assert!(ground_truth_pos < scores.len(), "ground truth must be among the candidates");
    let gt = scores[ground_truth_pos];
    let rank = 1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != ground_truth_pos && s >= gt)
        .count();
    ks.iter()
        .map(|&k| {
            let hit = rank <= k;
            (
                k,
                KMetrics {
                    hit: if hit { 1.0 } else { 0.0 },
                    ndcg: if hit { 1.0 / ((rank as f64) + 1.0).log2() } else { 0.0 },
                },
            )
        })
        .collect()
}

/// Metrics of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub users: usize,
}

/// Evaluate one split. Every user is scored over exactly
/// `num_negatives + 1` candidates built from the split-appropriate prefix;
/// the model state is read-only throughout.
pub fn evaluate<T: Scalar>(
    state: &ModelState<T>,
    ctx: &ForwardContext<T>,
    split: TargetVisibility,
    run_seed: u64,
    num_negatives: usize,
) -> Result<RunMetrics, EvalError> {
    if split == TargetVisibility::Train {
        return Err(EvalError::NotAnEvalSplit(split));
    }
    let mut bound = Bound::new(&state.store);
    let prop = propagate_all(&mut bound, state, ctx);

    let mut sums = [0.0f64; 4]; // hr5, hr10, ndcg5, ndcg10
    for user in &ctx.users {
        let n = user.target_unified.len();
        let ground_truth = match split {
            TargetVisibility::Valid => user.target_unified[n - 2],
            TargetVisibility::Test => user.target_unified[n - 1],
            TargetVisibility::Train => unreachable!(),
        };
        let history: BTreeSet<usize> = user.target_unified.iter().copied().collect();
        let candidates = sample_candidates(
            ground_truth,
            &history,
            ctx.num_source_items..ctx.num_items,
            num_negatives,
            run_seed,
            user.user,
        )?;
        assert_eq!(candidates.len(), num_negatives + 1, "protocol: candidate count");

        let z = user_final_state(&mut bound, state, &prop, user, split, &mut None);
        let cand_rows: Vec<usize> = if state.hp.score_with_enriched {
            candidates.iter().map(|&u| u - ctx.num_source_items).collect()
        } else {
            candidates.clone()
        };
        let emb = if state.hp.score_with_enriched {
            bound.tape.gather_rows(prop.h_target, Rc::new(cand_rows))
        } else {
            let table = bound.var(state.tables.item_id);
            bound.tape.gather_rows(table, Rc::new(cand_rows))
        };
        let scores_var = bound.tape.matmul_transpose_b(z, emb);
        let scores: Vec<f64> =
            bound.tape.value(scores_var).row(0).iter().map(|s| s.as_f64()).collect();

        for (k, m) in rank_metrics(&scores, 0, &[5, 10]) {
            match k {
                5 => {
                    sums[0] += m.hit;
                    sums[2] += m.ndcg;
                }
                10 => {
                    sums[1] += m.hit;
                    sums[3] += m.ndcg;
                }
                _ => unreachable!(),
            }
        }
    }
    let n = ctx.users.len() as f64;
    Ok(RunMetrics {
        seed: run_seed,
        hr5: sums[0] / n,
        hr10: sums[1] / n,
        ndcg5: sums[2] / n,
        ndcg10: sums[3] / n,
        users: ctx.users.len(),
    })
}

/// Sample mean and (n−1)-denominator standard deviation over runs.
pub fn aggregate_runs(runs: Vec<RunMetrics>, protocol: EvalProtocol) -> EvalReport {
    assert!(!runs.is_empty(), "at least one run required");
    let n = runs.len() as f64;
    let mean_of = |f: fn(&RunMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mean = MetricSummary {
        hr5: mean_of(|r| r.hr5),
        hr10: mean_of(|r| r.hr10),
        ndcg5: mean_of(|r| r.ndcg5),
        ndcg10: mean_of(|r| r.ndcg10),
    };
    let std = (runs.len() > 1).then(|| {
        let dev = |f: fn(&RunMetrics) -> f64, mu: f64| {
            (runs.iter().map(|r| (f(r) - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MetricSummary {
            hr5: dev(|r| r.hr5, mean.hr5),
            hr10: dev(|r| r.hr10, mean.hr10),
            ndcg5: dev(|r| r.ndcg5, mean.ndcg5),
            ndcg10: dev(|r| r.ndcg10, mean.ndcg10),
        }
    });
    EvalReport { protocol, runs, mean, std }
}
