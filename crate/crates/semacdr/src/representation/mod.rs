//! Multi-view item representations: ID embeddings, inner-domain semantic
//! projections of summary vectors, domain-agnostic subcategory pooling, view
//! composition, and the contrastive alignment between views.

mod contrastive;

pub use contrastive::{contrastive_regularizer, infonce_loss, InfoNce, Regularizer};

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{SparsePair, Var};
use crate::linalg::{Csr, Matrix};
use crate::params::{Bound, LrGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::semantics::ItemSemanticProfile;
use crate::semantics::Taxonomy;

/// Model width and regularization knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// ID-embedding width; must equal `d` (candidates are scored against raw
    /// ID embeddings).
    pub d1: usize,
    /// Inner-domain semantic width.
    pub d2: usize,
    /// Domain-agnostic semantic width.
    pub d_a: usize,
    /// Shared contrastive-projection width.
    pub d_c: usize,
    /// Model width.
    pub d: usize,
    /// Summary-vector dimension produced by the text encoder.
    pub d_text: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Contrastive weight in the total loss.
    pub lambda: f64,
    /// Number of taxonomy categories (validated against the taxonomy file).
    pub k: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub leaky_relu_slope: f64,
    /// Above this per-domain catalog size the contrastive sums run over the
    /// training batch instead of the full catalog.
    pub contrastive_catalog_limit: usize,
    /// Score candidates with graph-enriched target embeddings instead of raw
    /// ID embeddings.
    pub score_with_enriched: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            d1: 64,
            d2: 64,
            d_a: 64,
            d_c: 64,
            d: 64,
            d_text: 384,
            tau: 0.07,
            lambda: 0.1,
            k: 8,
            dropout: 0.5,
            max_seq_len: 100,
            leaky_relu_slope: 0.01,
            contrastive_catalog_limit: 4096,
            score_with_enriched: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), RepresentationError> {
        for (name, v) in [
            ("d1", self.d1),
            ("d2", self.d2),
            ("d_a", self.d_a),
            ("d_c", self.d_c),
            ("d", self.d),
            ("d_text", self.d_text),
            ("k", self.k),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(RepresentationError::Config(format!("{name} must be positive")));
            }
        }
        if self.tau <= 0.0 {
            return Err(RepresentationError::Config("tau must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(RepresentationError::Config("lambda must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(RepresentationError::Config("dropout must be in [0, 1)".into()));
        }
        if self.d1 != self.d {
            return Err(RepresentationError::Config(
                "d1 must equal d: candidates are scored against ID embeddings".into(),
            ));
        }
        Ok(())
    }
}

/// Which model components are active. `Full` is the complete model; the other
/// variants remove or simplify one mechanism each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    /// Drop the inner-domain semantic view (and its contrastive term).
    WoInnSem,
    /// Drop the domain-agnostic view; both contrastive terms are disabled.
    WoDomAgnSem,
    /// Keep only ID embeddings.
    WoInnDomAgnSem,
    /// Per-user chain graphs instead of co-interaction graphs; no bipartite
    /// propagation.
    SimpGraph,
    /// No cross-attention fusion of the source sequence.
    WoCdBehav,
    /// Fusion weights frozen at 1/3 each.
    AvgFusion,
    /// No contrastive regularization.
    WoConReg,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 8] = [
        AblationVariant::Full,
        AblationVariant::WoInnSem,
        AblationVariant::WoDomAgnSem,
        AblationVariant::WoInnDomAgnSem,
        AblationVariant::SimpGraph,
        AblationVariant::WoCdBehav,
        AblationVariant::AvgFusion,
        AblationVariant::WoConReg,
    ];

    /// Display label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Full => "Full",
            AblationVariant::WoInnSem => "w/o InnSem",
            AblationVariant::WoDomAgnSem => "w/o DomAgnSem",
            AblationVariant::WoInnDomAgnSem => "w/o InnDomAgnSem",
            AblationVariant::SimpGraph => "SimpGraph",
            AblationVariant::WoCdBehav => "w/o CDBehav",
            AblationVariant::AvgFusion => "AvgFusion",
            AblationVariant::WoConReg => "w/o ConReg",
        }
    }

    pub fn uses_inner_view(self) -> bool {
        !matches!(self, AblationVariant::WoInnSem | AblationVariant::WoInnDomAgnSem)
    }

    pub fn uses_agnostic_view(self) -> bool {
        !matches!(self, AblationVariant::WoDomAgnSem | AblationVariant::WoInnDomAgnSem)
    }

    /// Contrastive terms need the agnostic view as keys and must not be
    /// explicitly disabled.
    pub fn contrastive_enabled(self) -> bool {
        self.uses_agnostic_view() && self != AblationVariant::WoConReg
    }

    pub fn uses_cross_attention(self) -> bool {
        self != AblationVariant::WoCdBehav
    }

    pub fn uses_interaction_graphs(self) -> bool {
        self != AblationVariant::SimpGraph
    }

    pub fn fusion_frozen(self) -> bool {
        self == AblationVariant::AvgFusion
    }
}

#[derive(Debug, Error)]
pub enum RepresentationError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("composition projection is rank-deficient over the ID slot")]
    RankDeficientComposition,
}

/// Row counts the tables are sized against.
#[derive(Debug, Clone, Copy)]
pub struct TableDims {
    pub num_items: usize,
    pub num_users: usize,
    pub num_subcategories: usize,
}

/// Handles to every embedding table and projection.
#[derive(Debug, Clone)]
pub struct EmbeddingTables {
    pub item_id: ParamId,
    pub user_id: ParamId,
    pub subcategory: ParamId,
    pub summary_w: ParamId,
    pub summary_b: ParamId,
    pub compose_w: ParamId,
    pub compose_b: ParamId,
    pub head_id: ParamId,
    pub head_inner: ParamId,
    pub head_agnostic: ParamId,
    /// Width of the concatenated active views.
    pub compose_in_dim: usize,
}

impl EmbeddingTables {
    /// Register all tables. The composition projection spans only the views
    /// active under `variant`.
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        dims: TableDims,
        hp: &HyperParams,
        variant: AblationVariant,
        rng: &mut impl Rng,
    ) -> Self {
        let mut compose_in_dim = hp.d1;
        if variant.uses_inner_view() {
            compose_in_dim += hp.d2;
        }
        if variant.uses_agnostic_view() {
            compose_in_dim += hp.d_a;
        }
        Self {
            item_id: store.register_uniform("tables.item_id", dims.num_items, hp.d1, LrGroup::General, rng),
            user_id: store.register_uniform("tables.user_id", dims.num_users, hp.d, LrGroup::General, rng),
            subcategory: store.register_uniform(
                "tables.subcategory",
                dims.num_subcategories,
                hp.d_a,
                LrGroup::Semantic,
                rng,
            ),
            summary_w: store.register_uniform("tables.summary_w", hp.d_text, hp.d2, LrGroup::Semantic, rng),
            summary_b: store.register_uniform("tables.summary_b", 1, hp.d2, LrGroup::Semantic, rng),
            compose_w: store.register_uniform("tables.compose_w", compose_in_dim, hp.d, LrGroup::General, rng),
            compose_b: store.register_uniform("tables.compose_b", 1, hp.d, LrGroup::General, rng),
            head_id: store.register_uniform("tables.head_id", hp.d1, hp.d_c, LrGroup::Semantic, rng),
            head_inner: store.register_uniform("tables.head_inner", hp.d2, hp.d_c, LrGroup::Semantic, rng),
            head_agnostic: store.register_uniform(
                "tables.head_agnostic",
                hp.d_a,
                hp.d_c,
                LrGroup::Semantic,
                rng,
            ),
            compose_in_dim,
        }
    }

    /// The ID slot of the composition must have full column rank so distinct
    /// ID embeddings cannot collapse in composition.
    pub fn check_id_slot_rank<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        hp: &HyperParams,
    ) -> Result<(), RepresentationError> {
        let w = store.get(self.compose_w);
        let sub = Matrix::from_fn(hp.d1, w.cols, |i, j| w.at(i, j));
        if matrix_rank(&sub) < hp.d1 {
            return Err(RepresentationError::RankDeficientComposition);
        }
        Ok(())
    }
}

/// Rank via Gaussian elimination with partial pivoting.
fn matrix_rank<T: Scalar>(m: &Matrix<T>) -> usize {
    let mut a = m.to_f64();
    let mut rank = 0usize;
    let mut row = 0usize;
    for col in 0..a.cols {
        if row >= a.rows {
            break;
        }
        let mut pivot = row;
        for r in row + 1..a.rows {
            if a.at(r, col).abs() > a.at(pivot, col).abs() {
                pivot = r;
            }
        }
        if a.at(pivot, col).abs() < 1e-10 {
            continue;
        }
        if pivot != row {
            for c in 0..a.cols {
                let tmp = a.at(row, c);
                a.set(row, c, a.at(pivot, c));
                a.set(pivot, c, tmp);
            }
        }
        for r in row + 1..a.rows {
            let factor = a.at(r, col) / a.at(row, col);
            for c in col..a.cols {
                let v = a.at(r, c) - factor * a.at(row, c);
                a.set(r, c, v);
            }
        }
        rank += 1;
        row += 1;
    }
    rank
}

/// Constant per-item inputs to view construction: encoded summary vectors and
/// the subcategory pooling weights.
pub struct ItemViewInputs<T> {
    /// `num_items × d_text`.
    pub summaries: Rc<Matrix<T>>,
    /// `num_items × num_subcategories`; row i holds weight `1/(K·|A_k|)` on
    /// each subcategory assigned to item i under category k.
    pub pooling: Rc<SparsePair<T>>,
}

impl<T: Scalar> ItemViewInputs<T> {
    pub fn new(summaries: Matrix<T>, profiles: &[ItemSemanticProfile], taxonomy: &Taxonomy) -> Self {
        let pooling = build_pooling_matrix(profiles, taxonomy, summaries.rows);
        Self { summaries: Rc::new(summaries), pooling: SparsePair::new(pooling) }
    }
}

/// Mean-pool within each category's assignment set, then across categories:
/// one sparse row per item over the subcategory table.
pub fn build_pooling_matrix<T: Scalar>(
    profiles: &[ItemSemanticProfile],
    taxonomy: &Taxonomy,
    num_items: usize,
) -> Csr<T> {
    let k = taxonomy.num_categories() as f64;
    let mut triplets = Vec::new();
    for p in profiles {
        for (cat, labels) in p.content.assignments.iter().enumerate() {
            let w = T::of(1.0 / (k * labels.len() as f64));
            for label in labels {
                let li = taxonomy
                    .label_index(cat, label)
                    .expect("profiles are validated against the taxonomy");
                let row = taxonomy.subcategory_row(cat, li);
                triplets.push((p.item as u32, row as u32, w));
            }
        }
    }
    Csr::from_triplets(num_items, taxonomy.total_subcategories(), triplets)
}

/// Nested mean pooling of one item's assigned subcategory embeddings
/// (within category, then across categories).
pub fn agnostic_embedding<T: Scalar>(
    profile: &ItemSemanticProfile,
    taxonomy: &Taxonomy,
    subcategory_table: &Matrix<T>,
) -> Vec<T> {
    let d_a = subcategory_table.cols;
    let mut out = vec![T::zero(); d_a];
    let k = profile.content.assignments.len();
    for (cat, labels) in profile.content.assignments.iter().enumerate() {
        let mut cat_mean = vec![T::zero(); d_a];
        for label in labels {
            let li = taxonomy.label_index(cat, label).expect("in-vocabulary label");
            let row = subcategory_table.row(taxonomy.subcategory_row(cat, li));
            for (acc, &x) in cat_mean.iter_mut().zip(row) {
                *acc += x;
            }
        }
        let inv = T::of(1.0 / labels.len() as f64);
        for (acc, c) in out.iter_mut().zip(cat_mean) {
            *acc += c * inv;
        }
    }
    let inv_k = T::of(1.0 / k as f64);
    for x in &mut out {
        *x *= inv_k;
    }
    out
}

/// Affine projection of a summary vector to the inner-domain semantic view.
pub fn inner_semantic_embedding<T: Scalar>(
    summary: &[T],
    w: &Matrix<T>,
    b: &Matrix<T>,
) -> Vec<T> {
    assert_eq!(summary.len(), w.rows, "summary dimension mismatch");
    let mut out: Vec<T> = b.data.clone();
    for (i, &s) in summary.iter().enumerate() {
        if s == T::zero() {
            continue;
        }
        for j in 0..w.cols {
            out[j] += s * w.at(i, j);
        }
    }
    out
}

/// Concatenate the active views and project to model width.
pub fn compose_item_embedding<T: Scalar>(
    e_id: &[T],
    e_inn: Option<&[T]>,
    e_agn: Option<&[T]>,
    w: &Matrix<T>,
    b: &Matrix<T>,
) -> Vec<T> {
    let mut cat: Vec<T> = e_id.to_vec();
    if let Some(v) = e_inn {
        cat.extend_from_slice(v);
    }
    if let Some(v) = e_agn {
        cat.extend_from_slice(v);
    }
    assert_eq!(cat.len(), w.rows, "composition input mismatch");
    let mut out: Vec<T> = b.data.clone();
    for (i, &x) in cat.iter().enumerate() {
        for j in 0..w.cols {
            out[j] += x * w.at(i, j);
        }
    }
    out
}

/// Tape-level views for the whole catalog.
pub struct ComposedItems {
    /// `num_items × d` composed embeddings.
    pub composed: Var,
    /// `num_items × d2` inner-domain view (present when the variant uses it).
    pub inner: Option<Var>,
    /// `num_items × d_a` agnostic view (present when the variant uses it).
    pub agnostic: Option<Var>,
}

/// Build all three views and their composition for every item on the tape.
pub fn compose_all_items<T: Scalar>(
    bound: &mut Bound<T>,
    tables: &EmbeddingTables,
    inputs: &ItemViewInputs<T>,
    variant: AblationVariant,
) -> ComposedItems {
    let id = bound.var(tables.item_id);
    let mut parts = vec![id];

    let inner = variant.uses_inner_view().then(|| {
        let summaries = bound.tape.leaf(inputs.summaries.as_ref().clone());
        let w = bound.var(tables.summary_w);
        let b = bound.var(tables.summary_b);
        let proj = bound.tape.matmul(summaries, w);
        bound.tape.add_row_vec(proj, b)
    });
    if let Some(v) = inner {
        parts.push(v);
    }

    let agnostic = variant.uses_agnostic_view().then(|| {
        let subcats = bound.var(tables.subcategory);
        bound.tape.spmm(Rc::clone(&inputs.pooling), subcats)
    });
    if let Some(v) = agnostic {
        parts.push(v);
    }

    let cat = bound.tape.concat_cols(parts);
    let w = bound.var(tables.compose_w);
    let b = bound.var(tables.compose_b);
    let proj = bound.tape.matmul(cat, w);
    let composed = bound.tape.add_row_vec(proj, b);
    ComposedItems { composed, inner, agnostic }
}
