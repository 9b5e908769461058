//! One-layer graph convolution.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{SparsePair, Var};
use crate::params::{Bound, LrGroup, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Learnable weight and bias of one propagation layer.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl GcnLayer {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: store.register_uniform(format!("{name}.weight"), d, d, LrGroup::General, rng),
            bias: store.register_uniform(format!("{name}.bias"), 1, d, LrGroup::General, rng),
        }
    }
}

/// `H' = LeakyReLU(Â · H · W + b)` with `Â` the cached symmetric-normalized
/// adjacency. One layer only. Differentiable in `H`, `W`, `b`.
pub fn gcn_propagate<T: Scalar>(
    bound: &mut Bound<T>,
    layer: &GcnLayer,
    normalized_adjacency: Rc<SparsePair<T>>,
    features: Var,
    negative_slope: T,
) -> Var {
    assert_eq!(
        normalized_adjacency.fwd.cols,
        bound.tape.value(features).rows,
        "feature rows must align with graph nodes"
    );
    let w = bound.var(layer.weight);
    let b = bound.var(layer.bias);
    let agg = bound.tape.spmm(normalized_adjacency, features);
    let lin = bound.tape.matmul(agg, w);
    let lin = bound.tape.add_row_vec(lin, b);
    bound.tape.leaky_relu(lin, negative_slope)
}
