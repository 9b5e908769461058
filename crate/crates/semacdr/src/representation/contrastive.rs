//! Temperature-scaled contrastive alignment between item views.

use std::rc::Rc;

use crate::autodiff::{Tape, Var};
use crate::params::Bound;
use crate::scalar::Scalar;

use super::EmbeddingTables;

/// Loss node plus diagnostics.
pub struct InfoNce {
    pub loss: Var,
    /// Rows whose cosine similarity was guarded to 0 because of a zero norm.
    pub zero_norm_rows: usize,
}

/// Σ_i −log [ exp(cos(q_i, k_i)/τ) / Σ_j exp(cos(q_i, k_j)/τ) ].
///
/// Rows of `queries` and `keys` index the same items in the same order.
/// Computed with max subtraction inside the log-sum-exp; differentiable in
/// both inputs. Zero-norm rows contribute similarity 0.
pub fn infonce_loss<T: Scalar>(tape: &mut Tape<T>, queries: Var, keys: Var, tau: T) -> InfoNce {
    assert_eq!(
        tape.value(queries).rows,
        tape.value(keys).rows,
        "queries and keys must pair up"
    );
    let (qn, zq) = tape.row_normalize(queries);
    let (kn, zk) = tape.row_normalize(keys);
    let sims = tape.matmul_transpose_b(qn, kn);
    let scaled = tape.scale_const(sims, tau.recip());
    let loss = tape.cross_entropy_diag(scaled);
    InfoNce { loss, zero_norm_rows: zq + zk }
}

/// Both contrastive terms over the given per-domain item sets.
pub struct Regularizer {
    /// ID view against agnostic view, summed over both domains.
    pub l_c1: Var,
    /// Inner view against agnostic view (absent when the variant drops the
    /// inner view).
    pub l_c2: Option<Var>,
    pub zero_norm_rows: usize,
}

/// Project each view through its head and compute the per-domain InfoNCE
/// terms with the agnostic view as keys, summing source and target
/// contributions. Empty domains contribute zero.
pub fn contrastive_regularizer<T: Scalar>(
    bound: &mut Bound<T>,
    tables: &EmbeddingTables,
    inner_view: Option<Var>,
    agnostic_view: Var,
    source_items: &[usize],
    target_items: &[usize],
    tau: T,
) -> Regularizer {
    let head_id = bound.var(tables.head_id);
    let head_inner = bound.var(tables.head_inner);
    let head_agnostic = bound.var(tables.head_agnostic);
    let id_table = bound.var(tables.item_id);

    let mut zero_rows = 0usize;
    let mut l_c1: Option<Var> = None;
    let mut l_c2: Option<Var> = None;

    for items in [source_items, target_items] {
        if items.is_empty() {
            continue;
        }
        let idx = Rc::new(items.to_vec());
        let agn = bound.tape.gather_rows(agnostic_view, Rc::clone(&idx));
        let keys = bound.tape.matmul(agn, head_agnostic);

        let ids = bound.tape.gather_rows(id_table, Rc::clone(&idx));
        let q1 = bound.tape.matmul(ids, head_id);
        let term = infonce_loss(&mut bound.tape, q1, keys, tau);
        zero_rows += term.zero_norm_rows;
        l_c1 = Some(match l_c1 {
            Some(acc) => bound.tape.add(acc, term.loss),
            None => term.loss,
        });

        if let Some(inner) = inner_view {
            let inn = bound.tape.gather_rows(inner, Rc::clone(&idx));
            let q2 = bound.tape.matmul(inn, head_inner);
            let term = infonce_loss(&mut bound.tape, q2, keys, tau);
            zero_rows += term.zero_norm_rows;
            l_c2 = Some(match l_c2 {
                Some(acc) => bound.tape.add(acc, term.loss),
                None => term.loss,
            });
        }
    }

    let l_c1 = l_c1.unwrap_or_else(|| bound.tape.leaf(crate::linalg::Matrix::scalar(T::zero())));
    Regularizer { l_c1, l_c2, zero_norm_rows: zero_rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_gradients, gradient_relative_error};
    use crate::linalg::Matrix;
    use crate::params::{LrGroup, ParamStore};
    use crate::representation::{AblationVariant, HyperParams, TableDims};
    use rand::Rng;

    fn unit_rows(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = crate::rng::stream(seed, "contrastive-test", 0);
        let mut m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..rows {
            let norm = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in m.row_mut(i) {
                *x /= norm;
            }
        }
        m
    }

    fn loss_value(q: &Matrix<f64>, k: &Matrix<f64>, tau: f64) -> f64 {
        let mut tape = Tape::new();
        let qv = tape.leaf(q.clone());
        let kv = tape.leaf(k.clone());
        let out = infonce_loss(&mut tape, qv, kv, tau);
        tape.scalar_value(out.loss)
    }

    #[test]
    fn identical_rows_give_n_ln_n() {
        for n in [2usize, 4, 8] {
            let row = unit_rows(1, 6, n as u64);
            let mut m = Matrix::zeros(n, 6);
            for i in 0..n {
                m.row_mut(i).copy_from_slice(row.row(0));
            }
            let loss = loss_value(&m, &m, 0.07);
            let expect = n as f64 * (n as f64).ln();
            assert!((loss - expect).abs() < 1e-9, "n={n}: {loss} vs {expect}");
        }
    }

    #[test]
    fn orthogonal_pair_closed_form() {
        // q1=k1 ⟂ q2=k2, unit norms, τ=1: per-anchor loss ln(1+e^{-1})
        let m = Matrix::from_rows(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let loss = loss_value(&m, &m, 1.0);
        let expect = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 0.6265).abs() < 1e-4);
    }

    /// Oracle: naive double loop over all cosine pairs.
    #[test]
    fn matches_naive_double_loop_oracle() {
        let q = unit_rows(8, 5, 21);
        let k = unit_rows(8, 5, 22);
        let tau = 0.07;
        let loss = loss_value(&q, &k, tau);

        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut expect = 0.0;
        for i in 0..8 {
            let mut denom = 0.0;
            for j in 0..8 {
                denom += (cos(q.row(i), k.row(j)) / tau).exp();
            }
            expect += -((cos(q.row(i), k.row(i)) / tau).exp() / denom).ln();
        }
        assert!((loss - expect).abs() < 1e-5, "{loss} vs {expect}");
    }

    #[test]
    fn loss_is_nonnegative_and_permutation_invariant() {
        let q = unit_rows(7, 4, 31);
        let k = unit_rows(7, 4, 32);
        let base = loss_value(&q, &k, 0.2);
        assert!(base >= 0.0);

        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let mut qp = Matrix::zeros(7, 4);
        let mut kp = Matrix::zeros(7, 4);
        for (to, &from) in perm.iter().enumerate() {
            qp.row_mut(to).copy_from_slice(q.row(from));
            kp.row_mut(to).copy_from_slice(k.row(from));
        }
        let permuted = loss_value(&qp, &kp, 0.2);
        assert!((base - permuted).abs() < 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let q = unit_rows(5, 8, 41);
        let k = unit_rows(5, 8, 42);
        let tau = 0.07;

        let mut tape = Tape::new();
        let qv = tape.leaf(q.clone());
        let kv = tape.leaf(k.clone());
        let out = infonce_loss(&mut tape, qv, kv, tau);
        tape.backward(out.loss);
        let analytic = vec![tape.grad(qv).unwrap().clone(), tape.grad(kv).unwrap().clone()];

        let numeric = finite_difference_gradients(&[q, k], 1e-4, |ps| {
            loss_value(&ps[0], &ps[1], tau)
        });
        let err = gradient_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn zero_norm_rows_are_flagged() {
        let mut q = unit_rows(3, 4, 51);
        for x in q.row_mut(1) {
            *x = 0.0;
        }
        let k = unit_rows(3, 4, 52);
        let mut tape = Tape::new();
        let qv = tape.leaf(q);
        let kv = tape.leaf(k);
        let out = infonce_loss(&mut tape, qv, kv, 0.1);
        assert_eq!(out.zero_norm_rows, 1);
        assert!(tape.scalar_value(out.loss).is_finite());
    }

    fn setup_tables(
        num_items: usize,
        seed: u64,
    ) -> (ParamStore<f64>, EmbeddingTables, HyperParams) {
        let hp = HyperParams {
            d1: 4,
            d2: 3,
            d_a: 3,
            d_c: 4,
            d: 4,
            d_text: 5,
            ..Default::default()
        };
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(seed, "contrastive-reg-test", 0);
        let dims = TableDims { num_items, num_users: 2, num_subcategories: 6 };
        let tables = EmbeddingTables::register(&mut store, dims, &hp, AblationVariant::Full, &mut rng);
        (store, tables, hp)
    }

    /// Oracle: the regularizer decomposes into independent per-domain
    /// infonce calls on the projected views.
    #[test]
    fn regularizer_matches_decomposition_oracle() {
        let num_items = 50; // 20 source + 30 target
        let (mut store, tables, hp) = setup_tables(num_items, 61);
        let mut rng = crate::rng::stream(62, "contrastive-reg-test", 1);
        // make the view matrices distinct from tables: random inner/agnostic views
        let inner_m = Matrix::from_fn(num_items, hp.d2, |_, _| rng.random_range(-1.0..1.0));
        let agn_m = Matrix::from_fn(num_items, hp.d_a, |_, _| rng.random_range(-1.0..1.0));
        // randomize the ID table too
        *store.get_mut(tables.item_id) =
            Matrix::from_fn(num_items, hp.d1, |_, _| rng.random_range(-1.0..1.0));

        let source: Vec<usize> = (0..20).collect();
        let target: Vec<usize> = (20..50).collect();
        let tau = hp.tau;

        let mut bound = Bound::new(&store);
        let inner = bound.tape.leaf(inner_m.clone());
        let agn = bound.tape.leaf(agn_m.clone());
        let reg = contrastive_regularizer(
            &mut bound, &tables, Some(inner), agn, &source, &target, tau,
        );
        let got_c1 = bound.tape.scalar_value(reg.l_c1);
        let got_c2 = bound.tape.scalar_value(reg.l_c2.unwrap());

        let project = |rows: &[usize], m: &Matrix<f64>, head: &Matrix<f64>| {
            let mut g = Matrix::zeros(rows.len(), m.cols);
            for (r, &i) in rows.iter().enumerate() {
                g.row_mut(r).copy_from_slice(m.row(i));
            }
            g.matmul(head)
        };
        let mut expect_c1 = 0.0;
        let mut expect_c2 = 0.0;
        for items in [&source, &target] {
            let keys = project(items, &agn_m, store.get(tables.head_agnostic));
            let q1 = project(items, store.get(tables.item_id), store.get(tables.head_id));
            expect_c1 += loss_value(&q1, &keys, tau);
            let q2 = project(items, &inner_m, store.get(tables.head_inner));
            expect_c2 += loss_value(&q2, &keys, tau);
        }
        assert!((got_c1 - expect_c1).abs() < 1e-5, "{got_c1} vs {expect_c1}");
        assert!((got_c2 - expect_c2).abs() < 1e-5, "{got_c2} vs {expect_c2}");
    }

    /// All projected rows identical in one domain, other domain empty:
    /// L_c1 = n ln n.
    #[test]
    fn uniform_single_domain_case() {
        let n = 6usize;
        let (mut store, tables, hp) = setup_tables(n, 71);
        // identical ID rows for all items → identical projections
        let id_row: Vec<f64> = vec![0.4, -0.2, 0.9, 0.1];
        let mut id = Matrix::zeros(n, hp.d1);
        for i in 0..n {
            id.row_mut(i).copy_from_slice(&id_row);
        }
        *store.get_mut(tables.item_id) = id;
        // agnostic view rows identical as well
        let agn_m = {
            let mut m = Matrix::zeros(n, hp.d_a);
            for i in 0..n {
                m.row_mut(i).copy_from_slice(&[1.0, 2.0, -0.5]);
            }
            m
        };
        let target: Vec<usize> = (0..n).collect();
        let mut bound = Bound::new(&store);
        let agn = bound.tape.leaf(agn_m);
        let reg = contrastive_regularizer(&mut bound, &tables, None, agn, &[], &target, 0.07);
        let got = bound.tape.scalar_value(reg.l_c1);
        let expect = n as f64 * (n as f64).ln();
        assert!((got - expect).abs() < 1e-9);
        assert!(reg.l_c2.is_none());
    }

    #[test]
    fn register_respects_lr_groups() {
        let (store, tables, _) = setup_tables(4, 81);
        assert_eq!(store.group(tables.head_id), LrGroup::Semantic);
        assert_eq!(store.group(tables.subcategory), LrGroup::Semantic);
        assert_eq!(store.group(tables.summary_w), LrGroup::Semantic);
        assert_eq!(store.group(tables.item_id), LrGroup::General);
        assert_eq!(store.group(tables.compose_w), LrGroup::General);
    }
}
