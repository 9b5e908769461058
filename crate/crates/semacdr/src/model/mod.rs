//! Full model assembly: multi-view composition → graph propagation → three
//! sequence encoders → cross-attention → adaptive fusion → candidate scoring,
//! with the pairwise ranking and contrastive training objectives.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{train, AdamParams, AdamState, EpochLog, TrainConfig};

use std::rc::Rc;

use thiserror::Error;

use crate::autodiff::{SparsePair, Var};
use crate::corpus::{Corpus, Domain};
use crate::graph::{
    build_bipartite_graph, build_chain_graph, build_item_graph, gcn_propagate, GcnLayer,
};
use crate::linalg::Matrix;
use crate::params::{Bound, LrGroup, ParamId, ParamStore};
use crate::representation::{
    compose_all_items, contrastive_regularizer, AblationVariant, ComposedItems, EmbeddingTables,
    HyperParams, ItemViewInputs, RepresentationError, TableDims,
};
use crate::scalar::Scalar;
use crate::semantics::{ItemSemanticProfile, Taxonomy};
use crate::sequence::{
    cross_attention_fuse, encode_sequence, CrossAttentionFuser, DropoutCtx, TransformerEncoder,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Representation(#[from] RepresentationError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no user has enough target history to form a training example")]
    NoTrainingExamples,
    #[error("cannot sample {needed} negatives for user {user}: only {available} eligible items")]
    InsufficientNegatives { user: usize, needed: usize, available: usize },
    #[error("checkpoint at {path} is invalid: {reason}")]
    InvalidCheckpoint { path: std::path::PathBuf, reason: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Learnable fusion weights over the fused target state, the mixed-sequence
/// state and the propagated user embedding; initialized to 1/3 each and
/// frozen there under the averaging ablation.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub alpha: ParamId,
    pub beta: ParamId,
    pub gamma: ParamId,
}

impl FusionParams {
    fn register<T: Scalar>(store: &mut ParamStore<T>, frozen: bool) -> Self {
        let third = Matrix::scalar(T::of(1.0 / 3.0));
        let alpha = store.register("fusion.alpha", third.clone(), LrGroup::General);
        let beta = store.register("fusion.beta", third.clone(), LrGroup::General);
        let gamma = store.register("fusion.gamma", third, LrGroup::General);
        if frozen {
            store.freeze(alpha);
            store.freeze(beta);
            store.freeze(gamma);
        }
        Self { alpha, beta, gamma }
    }
}

/// Everything learnable plus the training bookkeeping.
pub struct ModelState<T> {
    pub hp: HyperParams,
    pub variant: AblationVariant,
    pub store: ParamStore<T>,
    pub tables: EmbeddingTables,
    pub gcn_source: GcnLayer,
    pub gcn_target: GcnLayer,
    pub gcn_mixed: GcnLayer,
    pub enc_source: TransformerEncoder,
    pub enc_target: TransformerEncoder,
    pub enc_mixed: TransformerEncoder,
    pub cross: CrossAttentionFuser,
    pub fusion: FusionParams,
    pub optimizer: AdamState<T>,
    pub seed: u64,
    pub epoch: usize,
}

impl<T: Scalar> ModelState<T> {
    pub fn new(
        dims: TableDims,
        hp: &HyperParams,
        variant: AblationVariant,
        seed: u64,
    ) -> Result<Self, ModelError> {
        hp.validate()?;
        let mut rng = crate::rng::stream(seed, "init", 0);
        let mut store = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, dims, hp, variant, &mut rng);
        let gcn_source = GcnLayer::register(&mut store, "gcn_source", hp.d, &mut rng);
        let gcn_target = GcnLayer::register(&mut store, "gcn_target", hp.d, &mut rng);
        let gcn_mixed = GcnLayer::register(&mut store, "gcn_mixed", hp.d, &mut rng);
        let enc_source =
            TransformerEncoder::register(&mut store, "enc_source", hp.d, hp.max_seq_len, &mut rng);
        let enc_target =
            TransformerEncoder::register(&mut store, "enc_target", hp.d, hp.max_seq_len, &mut rng);
        let enc_mixed =
            TransformerEncoder::register(&mut store, "enc_mixed", hp.d, hp.max_seq_len, &mut rng);
        let cross = CrossAttentionFuser::register(&mut store, "cross", hp.d, &mut rng);
        let fusion = FusionParams::register(&mut store, variant.fusion_frozen());
        tables.check_id_slot_rank(&store, hp)?;
        let optimizer = AdamState::new(&store);
        Ok(Self {
            hp: hp.clone(),
            variant,
            store,
            tables,
            gcn_source,
            gcn_target,
            gcn_mixed,
            enc_source,
            enc_target,
            enc_mixed,
            cross,
            fusion,
            optimizer,
            seed,
            epoch: 0,
        })
    }
}

/// One event of the merged sequence; `target_pos` is set when the event is
/// the n-th target interaction.
#[derive(Debug, Clone, Copy)]
pub struct MixedRef {
    pub unified: usize,
    pub target_pos: Option<usize>,
}

/// Precomputed per-user index arrays.
#[derive(Debug, Clone)]
pub struct UserSeqData {
    pub user: usize,
    /// Domain-local rows of the full source sequence.
    pub source_rows: Vec<usize>,
    /// Domain-local rows of the full target sequence (training + valid + test).
    pub target_rows: Vec<usize>,
    /// Unified indices of the full target sequence.
    pub target_unified: Vec<usize>,
    pub mixed: Vec<MixedRef>,
}

/// Which part of the target history the forward pass may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetVisibility {
    /// Training positions only (valid and test held out).
    Train,
    /// Same prefix as training; the prediction target is the validation item.
    Valid,
    /// Training prefix plus the validation item; predicts the test item.
    Test,
}

impl TargetVisibility {
    fn visible_len(self, n_target: usize) -> usize {
        match self {
            TargetVisibility::Train | TargetVisibility::Valid => n_target - 2,
            TargetVisibility::Test => n_target - 1,
        }
    }
}

/// Constant data shared by every forward pass over one corpus: view inputs,
/// normalized adjacencies, and per-user sequence indexing.
pub struct ForwardContext<T> {
    pub view_inputs: ItemViewInputs<T>,
    pub adj_source: Rc<SparsePair<T>>,
    pub adj_target: Rc<SparsePair<T>>,
    /// Absent under the simplified-graph ablation.
    pub adj_mixed: Option<Rc<SparsePair<T>>>,
    pub users: Vec<UserSeqData>,
    pub num_users: usize,
    pub num_source_items: usize,
    pub num_items: usize,
}

impl<T: Scalar> ForwardContext<T> {
    pub fn new(
        corpus: &Corpus,
        profiles: &[ItemSemanticProfile],
        taxonomy: &Taxonomy,
        summaries: Matrix<T>,
        hp: &HyperParams,
        variant: AblationVariant,
    ) -> Self {
        assert_eq!(summaries.rows, corpus.maps.num_items(), "one summary vector per item");
        let view_inputs = ItemViewInputs::new(summaries, profiles, taxonomy);

        let (g_source, g_target) = if variant.uses_interaction_graphs() {
            (
                build_item_graph(&corpus.bundles, &corpus.maps, Domain::Source, hp.max_seq_len),
                build_item_graph(&corpus.bundles, &corpus.maps, Domain::Target, hp.max_seq_len),
            )
        } else {
            (
                build_chain_graph(&corpus.bundles, &corpus.maps, Domain::Source, hp.max_seq_len),
                build_chain_graph(&corpus.bundles, &corpus.maps, Domain::Target, hp.max_seq_len),
            )
        };
        let adj_source = SparsePair::symmetric(g_source.normalized_adjacency());
        let adj_target = SparsePair::symmetric(g_target.normalized_adjacency());
        let adj_mixed = variant.uses_interaction_graphs().then(|| {
            SparsePair::symmetric(
                build_bipartite_graph(&corpus.bundles, &corpus.maps).normalized_adjacency(),
            )
        });

        let users = corpus
            .bundles
            .iter()
            .map(|b| {
                let source_rows =
                    b.source.iter().map(|e| corpus.maps.domain_of(e.item).1).collect();
                let target_rows =
                    b.target.iter().map(|e| corpus.maps.domain_of(e.item).1).collect();
                let target_unified = b.target.iter().map(|e| e.item).collect();
                let mut next_target = 0usize;
                let mixed = b
                    .mixed
                    .iter()
                    .map(|e| {
                        let target_pos = (e.domain == Domain::Target).then(|| {
                            let t = next_target;
                            next_target += 1;
                            t
                        });
                        MixedRef { unified: e.item, target_pos }
                    })
                    .collect();
                UserSeqData { user: b.user, source_rows, target_rows, target_unified, mixed }
            })
            .collect();

        Self {
            view_inputs,
            adj_source,
            adj_target,
            adj_mixed,
            users,
            num_users: corpus.maps.num_users(),
            num_source_items: corpus.maps.num_source_items(),
            num_items: corpus.maps.num_items(),
        }
    }
}

/// Graph-enriched representations shared by all users of one forward pass.
pub struct Propagated {
    pub composed: ComposedItems,
    /// `num_source_items × d`.
    pub h_source: Var,
    /// `num_target_items × d`.
    pub h_target: Var,
    /// `num_items × d`; composed embeddings when the bipartite graph is off.
    pub h_items_mixed: Var,
    /// `num_users × d`; the raw user table when the bipartite graph is off.
    pub h_users: Var,
}

/// Compose item views and run all graph propagations once.
pub fn propagate_all<T: Scalar>(
    bound: &mut Bound<T>,
    state: &ModelState<T>,
    ctx: &ForwardContext<T>,
) -> Propagated {
    let slope = T::of(state.hp.leaky_relu_slope);
    let composed = compose_all_items(bound, &state.tables, &ctx.view_inputs, state.variant);

    let source_rows: Rc<Vec<usize>> = Rc::new((0..ctx.num_source_items).collect());
    let target_rows: Rc<Vec<usize>> = Rc::new((ctx.num_source_items..ctx.num_items).collect());
    let e_source = bound.tape.gather_rows(composed.composed, source_rows);
    let e_target = bound.tape.gather_rows(composed.composed, target_rows);
    let h_source =
        gcn_propagate(bound, &state.gcn_source, Rc::clone(&ctx.adj_source), e_source, slope);
    let h_target =
        gcn_propagate(bound, &state.gcn_target, Rc::clone(&ctx.adj_target), e_target, slope);

    let (h_users, h_items_mixed) = match &ctx.adj_mixed {
        Some(adj) => {
            let user_table = bound.var(state.tables.user_id);
            let stacked = bound.tape.concat_rows(vec![user_table, composed.composed]);
            let propagated = gcn_propagate(bound, &state.gcn_mixed, Rc::clone(adj), stacked, slope);
            let users = bound.tape.gather_rows(propagated, Rc::new((0..ctx.num_users).collect()));
            let items = bound.tape.gather_rows(
                propagated,
                Rc::new((ctx.num_users..ctx.num_users + ctx.num_items).collect()),
            );
            (users, items)
        }
        None => (bound.var(state.tables.user_id), composed.composed),
    };

    Propagated { composed, h_source, h_target, h_items_mixed, h_users }
}

/// `z_final = α z_fuse + β z_mix + γ h_user`, row-wise over aligned matrices.
pub fn adaptive_fuse<T: Scalar>(
    bound: &mut Bound<T>,
    fusion: &FusionParams,
    z_fuse: Var,
    z_mix: Var,
    h_user: Var,
) -> Var {
    let alpha = bound.var(fusion.alpha);
    let beta = bound.var(fusion.beta);
    let gamma = bound.var(fusion.gamma);
    let a = bound.tape.scale_var(alpha, z_fuse);
    let b = bound.tape.scale_var(beta, z_mix);
    let c = bound.tape.scale_var(gamma, h_user);
    let ab = bound.tape.add(a, b);
    bound.tape.add(ab, c)
}

/// Preference score of one candidate: dot product of the final user state
/// with the candidate's ID embedding.
pub fn score_one<T: Scalar>(z_final: &[T], candidate_embedding: &[T]) -> T {
    assert_eq!(z_final.len(), candidate_embedding.len(), "score dimension mismatch");
    z_final.iter().zip(candidate_embedding).map(|(&a, &b)| a * b).sum()
}

/// Mean over pairs of `-log σ(pos - neg)` in the numerically stable
/// softplus form.
pub fn bpr_loss<T: Scalar>(bound: &mut Bound<T>, positive: Var, negative: Var) -> Var {
    assert!(
        bound.tape.value(positive).same_shape(bound.tape.value(negative)),
        "positive/negative scores must pair up"
    );
    assert!(bound.tape.value(positive).rows >= 1, "at least one pair required");
    let margin = bound.tape.sub(negative, positive);
    let losses = bound.tape.softplus(margin);
    bound.tape.mean_all(losses)
}

/// `L = L_rec + λ (L_c1 + L_c2)`; absent contrastive terms contribute zero.
pub fn total_loss<T: Scalar>(
    bound: &mut Bound<T>,
    l_rec: Var,
    l_c1: Option<Var>,
    l_c2: Option<Var>,
    lambda: T,
) -> Var {
    let reg = match (l_c1, l_c2) {
        (Some(a), Some(b)) => Some(bound.tape.add(a, b)),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    };
    match reg {
        Some(r) => {
            let scaled = bound.tape.scale_const(r, lambda);
            bound.tape.add(l_rec, scaled)
        }
        None => l_rec,
    }
}

/// Encoder-input layout of the visible mixed sequence.
struct MixedLayout {
    /// Unified item indices of the visible mixed events.
    rows: Vec<usize>,
    /// Visible-mixed position of each visible target event.
    pos_of_target: Vec<usize>,
    /// Start of the trailing window actually fed to the encoder.
    window_start: usize,
}

fn mixed_layout(user: &UserSeqData, visible_targets: usize, max_seq_len: usize) -> MixedLayout {
    let mut rows = Vec::with_capacity(user.mixed.len());
    let mut pos_of_target = Vec::with_capacity(visible_targets);
    for e in &user.mixed {
        match e.target_pos {
            Some(t) if t >= visible_targets => continue,
            Some(_) => pos_of_target.push(rows.len()),
            None => {}
        }
        rows.push(e.unified);
    }
    let window_start = rows.len().saturating_sub(max_seq_len);
    MixedLayout { rows, pos_of_target, window_start }
}

/// Per-user sequence states of one forward pass.
struct UserStates {
    /// Fused per-position target states (cross-attention applied unless
    /// ablated); row `p` corresponds to visible target position
    /// `target_window_start + p`.
    fused: Var,
    /// Per-position mixed states; row `p` is visible mixed position
    /// `mixed.window_start + p`.
    mixed_states: Var,
}

fn encode_user<T: Scalar>(
    bound: &mut Bound<T>,
    state: &ModelState<T>,
    prop: &Propagated,
    user: &UserSeqData,
    visibility: TargetVisibility,
    dropout: &mut Option<DropoutCtx<'_>>,
) -> UserStates {
    let max_len = state.hp.max_seq_len;
    let visible = visibility.visible_len(user.target_rows.len());
    assert!(visible >= 1, "target prefix must be nonempty");

    let target_input = &user.target_rows[..visible];
    let target_window_start = target_input.len().saturating_sub(max_len);
    let target_states = encode_sequence(
        bound,
        &state.enc_target,
        prop.h_target,
        &target_input[target_window_start..],
        dropout,
    );

    let source_window_start = user.source_rows.len().saturating_sub(max_len);
    let source_states = encode_sequence(
        bound,
        &state.enc_source,
        prop.h_source,
        &user.source_rows[source_window_start..],
        dropout,
    );

    let mixed = mixed_layout(user, visible, max_len);
    let mixed_states = encode_sequence(
        bound,
        &state.enc_mixed,
        prop.h_items_mixed,
        &mixed.rows[mixed.window_start..],
        dropout,
    );

    let fused = if state.variant.uses_cross_attention() {
        cross_attention_fuse(bound, &state.cross, target_states, source_states, dropout).fused
    } else {
        target_states
    };

    UserStates { fused, mixed_states }
}

/// The final user state for evaluation: read the last visible position of the
/// fused target states and of the mixed states, fuse with the propagated user
/// embedding. Returns a 1×d node.
pub fn user_final_state<T: Scalar>(
    bound: &mut Bound<T>,
    state: &ModelState<T>,
    prop: &Propagated,
    user: &UserSeqData,
    visibility: TargetVisibility,
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Var {
    let states = encode_user(bound, state, prop, user, visibility, dropout);
    let t_last = bound.tape.value(states.fused).rows - 1;
    let m_last = bound.tape.value(states.mixed_states).rows - 1;
    let zf = bound.tape.gather_rows(states.fused, Rc::new(vec![t_last]));
    let zm = bound.tape.gather_rows(states.mixed_states, Rc::new(vec![m_last]));
    let hu = bound.tape.gather_rows(prop.h_users, Rc::new(vec![user.user]));
    adaptive_fuse(bound, &state.fusion, zf, zm, hu)
}

/// One supervised position: predict target position `t` (the item at
/// `target_unified[t]`) from everything before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainExample {
    /// Target position being predicted (`1 ≤ t < training length`).
    pub t: usize,
    /// Row of the fused target states holding the prediction state.
    target_state_row: usize,
    /// Row of the mixed states holding the state just before the predicted
    /// event in mixed time order.
    mixed_state_row: usize,
}

/// Enumerate the supervised positions of one user that survive windowing.
pub fn training_examples(user: &UserSeqData, max_seq_len: usize) -> Vec<TrainExample> {
    let visible = TargetVisibility::Train.visible_len(user.target_rows.len());
    if visible < 2 {
        return Vec::new();
    }
    let target_window_start = visible.saturating_sub(max_seq_len);
    let mixed = mixed_layout(user, visible, max_seq_len);

    let mut out = Vec::new();
    for t in 1..visible {
        let state_pos = t - 1;
        if state_pos < target_window_start {
            continue;
        }
        let mixed_read = mixed.pos_of_target[t];
        if mixed_read == 0 || mixed_read - 1 < mixed.window_start {
            continue;
        }
        out.push(TrainExample {
            t,
            target_state_row: state_pos - target_window_start,
            mixed_state_row: (mixed_read - 1) - mixed.window_start,
        });
    }
    out
}

/// Loss components of one training batch.
pub struct BatchLoss {
    pub total: Var,
    pub l_rec: Var,
    pub l_c1: Option<Var>,
    pub l_c2: Option<Var>,
    pub pairs: usize,
    pub zero_norm_rows: usize,
}

/// Forward pass over a batch of users (indices into `ctx.users`), with one
/// sampled negative item per positive provided in `negatives` (flattened per
/// user in `training_examples` order, `negatives_per_positive` entries each).
pub fn batch_loss<T: Scalar>(
    bound: &mut Bound<T>,
    state: &ModelState<T>,
    ctx: &ForwardContext<T>,
    batch_users: &[usize],
    negatives: &[Vec<usize>],
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Option<BatchLoss> {
    let prop = propagate_all(bound, state, ctx);

    let mut z_final_parts = Vec::new();
    let mut positive_items = Vec::new();
    let mut negative_items = Vec::new();
    for (&ui, negs) in batch_users.iter().zip(negatives) {
        let user = &ctx.users[ui];
        let examples = training_examples(user, state.hp.max_seq_len);
        if examples.is_empty() {
            debug_assert!(negs.is_empty());
            continue;
        }
        let per_pos = negs.len() / examples.len();
        debug_assert_eq!(negs.len(), examples.len() * per_pos);
        let states = encode_user(bound, state, &prop, user, TargetVisibility::Train, dropout);

        let mut fused_rows = Vec::with_capacity(examples.len() * per_pos);
        let mut mixed_rows = Vec::with_capacity(examples.len() * per_pos);
        for (k, ex) in examples.iter().enumerate() {
            for _ in 0..per_pos {
                fused_rows.push(ex.target_state_row);
                mixed_rows.push(ex.mixed_state_row);
            }
            let item = user.target_unified[ex.t];
            positive_items.extend(std::iter::repeat(item).take(per_pos));
            negative_items.extend_from_slice(&negs[k * per_pos..(k + 1) * per_pos]);
        }
        let zf = bound.tape.gather_rows(states.fused, Rc::new(fused_rows.clone()));
        let zm = bound.tape.gather_rows(states.mixed_states, Rc::new(mixed_rows));
        let hu = bound.tape.gather_rows(prop.h_users, Rc::new(vec![user.user; fused_rows.len()]));
        let z_final = adaptive_fuse(bound, &state.fusion, zf, zm, hu);
        z_final_parts.push(z_final);
    }

    if z_final_parts.is_empty() {
        return None;
    }
    let z_final = bound.tape.concat_rows(z_final_parts);
    let pos_emb = gather_candidate_embeddings(bound, state, &prop, &positive_items, ctx);
    let neg_emb = gather_candidate_embeddings(bound, state, &prop, &negative_items, ctx);
    let pos_scores = bound.tape.dot_rows(z_final, pos_emb);
    let neg_scores = bound.tape.dot_rows(z_final, neg_emb);
    let l_rec = bpr_loss(bound, pos_scores, neg_scores);

    let (l_c1, l_c2, zero_norm_rows) = if state.variant.uses_agnostic_view() {
        let agn = prop.composed.agnostic.expect("agnostic view exists");
        let source_items: Vec<usize>;
        let target_items: Vec<usize>;
        if ctx.num_source_items.max(ctx.num_items - ctx.num_source_items)
            <= state.hp.contrastive_catalog_limit
        {
            source_items = (0..ctx.num_source_items).collect();
            target_items = (ctx.num_source_items..ctx.num_items).collect();
        } else {
            // above the catalog limit the sums run over the batch's items
            let mut s = std::collections::BTreeSet::new();
            let mut t = std::collections::BTreeSet::new();
            for &ui in batch_users {
                let user = &ctx.users[ui];
                for &row in &user.source_rows {
                    s.insert(row);
                }
                let visible = TargetVisibility::Train.visible_len(user.target_rows.len());
                for &u in &user.target_unified[..visible] {
                    t.insert(u);
                }
            }
            source_items = s.into_iter().collect();
            target_items = t.into_iter().collect();
        }
        let reg = contrastive_regularizer(
            bound,
            &state.tables,
            prop.composed.inner,
            agn,
            &source_items,
            &target_items,
            T::of(state.hp.tau),
        );
        (Some(reg.l_c1), reg.l_c2, reg.zero_norm_rows)
    } else {
        (None, None, 0)
    };

    let lambda = if state.variant.contrastive_enabled() { state.hp.lambda } else { 0.0 };
    let total = total_loss(bound, l_rec, l_c1, l_c2, T::of(lambda));
    Some(BatchLoss { total, l_rec, l_c1, l_c2, pairs: positive_items.len(), zero_norm_rows })
}

/// Candidate-item embeddings for scoring: raw ID embeddings (unified index)
/// or graph-enriched target embeddings when configured.
fn gather_candidate_embeddings<T: Scalar>(
    bound: &mut Bound<T>,
    state: &ModelState<T>,
    prop: &Propagated,
    items: &[usize],
    ctx: &ForwardContext<T>,
) -> Var {
    if state.hp.score_with_enriched {
        let rows: Vec<usize> = items
            .iter()
            .map(|&u| {
                assert!(u >= ctx.num_source_items, "candidates must be target items");
                u - ctx.num_source_items
            })
            .collect();
        bound.tape.gather_rows(prop.h_target, Rc::new(rows))
    } else {
        let table = bound.var(state.tables.item_id);
        bound.tape.gather_rows(table, Rc::new(items.to_vec()))
    }
}

/// Score a candidate list for one user (evaluation path, dropout off unless
/// a context is supplied). Returns one score per candidate.
pub fn forward_user_scores<T: Scalar>(
    state: &ModelState<T>,
    ctx: &ForwardContext<T>,
    user_index: usize,
    candidates: &[usize],
    visibility: TargetVisibility,
) -> Vec<T> {
    let mut bound = Bound::new(&state.store);
    let prop = propagate_all(&mut bound, state, ctx);
    let z = user_final_state(&mut bound, state, &prop, &ctx.users[user_index], visibility, &mut None);
    let cand = gather_candidate_embeddings(&mut bound, state, &prop, candidates, ctx);
    let scores = bound.tape.matmul_transpose_b(z, cand);
    bound.tape.value(scores).row(0).to_vec()
}

#[cfg(test)]
mod tests;
