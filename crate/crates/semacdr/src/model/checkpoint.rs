//! Versioned checkpoint container for all learnable state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::representation::{AblationVariant, HyperParams, TableDims};
use crate::scalar::Scalar;

use super::{AdamParams, ModelError, ModelState};

const FORMAT: &str = "semacdr-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredMatrix {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredAdam {
    step: u64,
    params: AdamParams,
    m: Vec<StoredMatrix>,
    v: Vec<StoredMatrix>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    hyperparams: HyperParams,
    variant: AblationVariant,
    seed: u64,
    epoch: usize,
    num_items: usize,
    num_users: usize,
    num_subcategories: usize,
    params: Vec<StoredMatrix>,
    adam: StoredAdam,
}

fn to_stored<T: Scalar>(name: &str, m: &Matrix<T>) -> StoredMatrix {
    let f = m.to_f64();
    StoredMatrix { name: name.to_string(), rows: f.rows, cols: f.cols, data: f.data }
}

pub fn save_checkpoint<T: Scalar>(
    state: &ModelState<T>,
    dims: TableDims,
    path: &Path,
) -> Result<(), ModelError> {
    let params: Vec<StoredMatrix> = state
        .store
        .ids()
        .map(|id| to_stored(state.store.name(id), state.store.get(id)))
        .collect();
    let adam = StoredAdam {
        step: state.optimizer.step,
        params: state.optimizer.params,
        m: state
            .store
            .ids()
            .map(|id| to_stored(state.store.name(id), &state.optimizer.m[id.0]))
            .collect(),
        v: state
            .store
            .ids()
            .map(|id| to_stored(state.store.name(id), &state.optimizer.v[id.0]))
            .collect(),
    };
    let stored = Stored {
        format: FORMAT.into(),
        version: VERSION,
        hyperparams: state.hp.clone(),
        variant: state.variant,
        seed: state.seed,
        epoch: state.epoch,
        num_items: dims.num_items,
        num_users: dims.num_users,
        num_subcategories: dims.num_subcategories,
        params,
        adam,
    };
    let text = serde_json::to_string(&stored).expect("checkpoint serializes");
    std::fs::write(path, text).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

/// Load a checkpoint and verify its shape manifest against the corpus-derived
/// dimensions before any value is accepted.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    expected: TableDims,
) -> Result<ModelState<T>, ModelError> {
    let invalid = |reason: String| ModelError::InvalidCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    let stored: Stored = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    if stored.format != FORMAT || stored.version != VERSION {
        return Err(invalid(format!("unsupported format {}/{}", stored.format, stored.version)));
    }
    if stored.num_items != expected.num_items
        || stored.num_users != expected.num_users
        || stored.num_subcategories != expected.num_subcategories
    {
        return Err(invalid(format!(
            "shape manifest mismatch: checkpoint has {} items / {} users / {} subcategories, corpus has {} / {} / {}",
            stored.num_items,
            stored.num_users,
            stored.num_subcategories,
            expected.num_items,
            expected.num_users,
            expected.num_subcategories
        )));
    }

    let mut state =
        ModelState::<T>::new(expected, &stored.hyperparams, stored.variant, stored.seed)?;
    state.epoch = stored.epoch;

    if stored.params.len() != state.store.len() {
        return Err(invalid(format!(
            "expected {} parameters, found {}",
            state.store.len(),
            stored.params.len()
        )));
    }
    let ids: Vec<_> = state.store.ids().collect();
    for (id, sm) in ids.iter().zip(&stored.params) {
        if state.store.name(*id) != sm.name {
            return Err(invalid(format!(
                "parameter order mismatch: {} vs {}",
                state.store.name(*id),
                sm.name
            )));
        }
        let target = state.store.get_mut(*id);
        if target.rows != sm.rows || target.cols != sm.cols {
            return Err(invalid(format!(
                "parameter {} has shape {}x{}, expected {}x{}",
                sm.name, sm.rows, sm.cols, target.rows, target.cols
            )));
        }
        *target = Matrix::from_f64(&Matrix { rows: sm.rows, cols: sm.cols, data: sm.data.clone() });
    }

    if stored.adam.m.len() != state.store.len() || stored.adam.v.len() != state.store.len() {
        return Err(invalid("optimizer state length mismatch".into()));
    }
    state.optimizer.step = stored.adam.step;
    state.optimizer.params = stored.adam.params;
    for (i, (m, v)) in stored.adam.m.iter().zip(&stored.adam.v).enumerate() {
        state.optimizer.m[i] =
            Matrix::from_f64(&Matrix { rows: m.rows, cols: m.cols, data: m.data.clone() });
        state.optimizer.v[i] =
            Matrix::from_f64(&Matrix { rows: v.rows, cols: v.cols, data: v.data.clone() });
    }
    Ok(state)
}
