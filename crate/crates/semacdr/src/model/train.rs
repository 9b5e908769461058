//! Training loop: adaptive-moment updates with dual learning rates, seeded
//! shuffling and negative sampling, validation-based checkpoint selection and
//! early stopping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::eval::{evaluate, RunMetrics};
use crate::linalg::Matrix;
use crate::params::{Bound, LrGroup, ParamStore};
use crate::representation::{AblationVariant, HyperParams, TableDims};
use crate::scalar::Scalar;
use crate::semantics::{ItemSemanticProfile, Taxonomy};
use crate::sequence::DropoutCtx;

use super::{batch_loss, training_examples, ForwardContext, ModelError, ModelState, TargetVisibility};

/// Adaptive-moment estimation constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers aligned with a [`ParamStore`].
pub struct AdamState<T> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub step: u64,
    pub params: AdamParams,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Matrix<T>> = store
            .ids()
            .map(|id| {
                let p = store.get(id);
                Matrix::zeros(p.rows, p.cols)
            })
            .collect();
        Self { m: zeros.clone(), v: zeros, step: 0, params: AdamParams::default() }
    }

    /// One update over all unfrozen parameters; `grads` is aligned with the
    /// store's registration order.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Matrix<T>],
        semantic_lr: f64,
        general_lr: f64,
    ) {
        self.step += 1;
        let b1 = T::of(self.params.beta1);
        let b2 = T::of(self.params.beta2);
        let eps = T::of(self.params.eps);
        let bias1 = T::one() - T::of(self.params.beta1.powi(self.step as i32));
        let bias2 = T::one() - T::of(self.params.beta2.powi(self.step as i32));
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            if store.is_frozen(id) {
                continue;
            }
            let lr = T::of(match store.group(id) {
                LrGroup::Semantic => semantic_lr,
                LrGroup::General => general_lr,
            });
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = store.get_mut(id);
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m.data[k] = b1 * m.data[k] + (T::one() - b1) * gk;
                v.data[k] = b2 * v.data[k] + (T::one() - b2) * gk * gk;
                let m_hat = m.data[k] / bias1;
                let v_hat = v.data[k] / bias2;
                p.data[k] = p.data[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub semantic_lr: f64,
    pub general_lr: f64,
    pub seed: u64,
    pub negatives_per_positive: usize,
    /// Epochs without validation improvement before stopping early.
    pub patience: usize,
    /// Negatives per validation test case during training-time evaluation.
    pub valid_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 100,
            semantic_lr: 3e-4,
            general_lr: 1e-3,
            seed: 17,
            negatives_per_positive: 1,
            patience: 10,
            valid_negatives: 100,
        }
    }
}

/// One structured record per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_c1: f64,
    pub l_c2: f64,
    pub total: f64,
    pub valid_hr5: f64,
    pub valid_hr10: f64,
    pub valid_ndcg5: f64,
    pub valid_ndcg10: f64,
    pub wall_secs: f64,
}

/// Train a model, returning the state that scored the best validation
/// NDCG@10 along with the full epoch log.
pub fn train<T: Scalar>(
    corpus: &Corpus,
    profiles: &[ItemSemanticProfile],
    taxonomy: &Taxonomy,
    summaries: Matrix<T>,
    hp: &HyperParams,
    variant: AblationVariant,
    config: &TrainConfig,
) -> Result<(ModelState<T>, Vec<EpochLog>), ModelError> {
    let dims = TableDims {
        num_items: corpus.maps.num_items(),
        num_users: corpus.maps.num_users(),
        num_subcategories: taxonomy.total_subcategories(),
    };
    let mut state = ModelState::new(dims, hp, variant, config.seed)?;
    let ctx = ForwardContext::new(corpus, profiles, taxonomy, summaries, hp, variant);

    // eligible negatives per user: target items outside the full history
    let target_range = ctx.num_source_items..ctx.num_items;
    let mut eligible: Vec<Vec<usize>> = Vec::with_capacity(ctx.users.len());
    let mut example_counts: Vec<usize> = Vec::with_capacity(ctx.users.len());
    for user in &ctx.users {
        let history: std::collections::BTreeSet<usize> =
            user.target_unified.iter().copied().collect();
        let user_eligible: Vec<usize> =
            target_range.clone().filter(|i| !history.contains(i)).collect();
        let examples = training_examples(user, state.hp.max_seq_len).len();
        if examples > 0 && user_eligible.is_empty() {
            return Err(ModelError::InsufficientNegatives {
                user: user.user,
                needed: 1,
                available: 0,
            });
        }
        example_counts.push(examples);
        eligible.push(user_eligible);
    }
    if example_counts.iter().all(|&c| c == 0) {
        return Err(ModelError::NoTrainingExamples);
    }

    let mut logs = Vec::new();
    let mut best_ndcg = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Vec<Matrix<T>> = state.store.ids().map(|id| state.store.get(id).clone()).collect();

    for epoch in 0..config.epochs {
        let t0 = std::time::Instant::now();
        let mut order: Vec<usize> = (0..ctx.users.len()).collect();
        let mut shuffle_rng = crate::rng::stream(config.seed, "shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.random_range(0..=i));
        }

        let mut rec_sum = 0.0f64;
        let mut rec_pairs = 0usize;
        let mut c1_sum = 0.0f64;
        let mut c2_sum = 0.0f64;
        let mut total_sum = 0.0f64;
        let mut batches = 0usize;

        for (batch_no, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
            // negatives drawn per user from a stream independent of batching
            let negatives: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&ui| {
                    let n = example_counts[ui] * config.negatives_per_positive;
                    let mut rng = crate::rng::stream(
                        config.seed,
                        "negatives",
                        (epoch as u64) << 32 | ui as u64,
                    );
                    (0..n)
                        .map(|_| eligible[ui][rng.random_range(0..eligible[ui].len())])
                        .collect()
                })
                .collect();

            let mut bound = Bound::new(&state.store);
            let mut dropout_rng =
                crate::rng::stream(config.seed, "dropout", (epoch as u64) << 32 | batch_no as u64);
            let mut dropout = (state.hp.dropout > 0.0)
                .then_some(DropoutCtx { rate: state.hp.dropout, rng: &mut dropout_rng });
            let Some(parts) = batch_loss(&mut bound, &state, &ctx, chunk, &negatives, &mut dropout)
            else {
                continue;
            };

            let total_value = bound.tape.scalar_value(parts.total).as_f64();
            if !total_value.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: batch_no });
            }
            bound.tape.backward(parts.total);
            let grads: Vec<Matrix<T>> =
                state.store.ids().map(|id| bound.grad_of(&state.store, id)).collect();
            state.optimizer.step(
                &mut state.store,
                &grads,
                config.semantic_lr,
                config.general_lr,
            );
            if !state.store.all_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: batch_no });
            }

            let rec = bound.tape.scalar_value(parts.l_rec).as_f64();
            rec_sum += rec * parts.pairs as f64;
            rec_pairs += parts.pairs;
            c1_sum += parts.l_c1.map_or(0.0, |v| bound.tape.scalar_value(v).as_f64());
            c2_sum += parts.l_c2.map_or(0.0, |v| bound.tape.scalar_value(v).as_f64());
            total_sum += total_value;
            batches += 1;
        }

        let valid: RunMetrics =
            evaluate(&state, &ctx, TargetVisibility::Valid, config.seed, config.valid_negatives)
                .map_err(|e| match e {
                    crate::eval::EvalError::InsufficientNegatives { user, needed, available } => {
                        ModelError::InsufficientNegatives { user, needed, available }
                    }
                    other => panic!("validation failed: {other}"),
                })?;

        state.epoch = epoch;
        logs.push(EpochLog {
            epoch,
            l_rec: if rec_pairs > 0 { rec_sum / rec_pairs as f64 } else { 0.0 },
            l_c1: if batches > 0 { c1_sum / batches as f64 } else { 0.0 },
            l_c2: if batches > 0 { c2_sum / batches as f64 } else { 0.0 },
            total: if batches > 0 { total_sum / batches as f64 } else { 0.0 },
            valid_hr5: valid.hr5,
            valid_hr10: valid.hr10,
            valid_ndcg5: valid.ndcg5,
            valid_ndcg10: valid.ndcg10,
            wall_secs: t0.elapsed().as_secs_f64(),
        });

        if valid.ndcg10 > best_ndcg {
            best_ndcg = valid.ndcg10;
            best_epoch = epoch;
            best_params = state.store.ids().map(|id| state.store.get(id).clone()).collect();
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }

    for (i, id) in state.store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        *state.store.get_mut(id) = best_params[i].clone();
    }
    state.epoch = best_epoch;
    Ok((state, logs))
}
