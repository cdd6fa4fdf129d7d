//! Parameter serialization shared by the generator and classifier files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn export_params<T: Scalar>(store: &ParamStore<T>) -> Vec<NamedTensor> {
    store
        .iter()
        .map(|(_, name, t)| NamedTensor {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().iter().map(|v| v.to_f64_lossless()).collect(),
        })
        .collect()
}

/// Overwrite every parameter of `store` from `saved`, matching by name.
pub fn import_params<T: Scalar>(store: &mut ParamStore<T>, saved: &[NamedTensor]) -> Result<()> {
    if saved.len() != store.len() {
        return Err(Error::validation(format!(
            "checkpoint holds {} tensors, architecture expects {}",
            saved.len(),
            store.len()
        )));
    }
    for nt in saved {
        let id = store
            .find(&nt.name)
            .ok_or_else(|| Error::validation(format!("unexpected tensor `{}`", nt.name)))?;
        let shape = store.get(id).shape();
        if shape != (nt.rows, nt.cols) {
            return Err(Error::Dimension {
                context: "checkpoint tensor",
                expected: format!("{}: {shape:?}", nt.name),
                actual: format!("({}, {})", nt.rows, nt.cols),
            });
        }
        let data = nt.data.iter().map(|&v| T::lit(v)).collect();
        *store.get_mut(id) = Tensor::from_vec(nt.rows, nt.cols, data)?;
    }
    Ok(())
}

/// SHA-256 over parameter names and values, as hex.
pub fn param_hash<T: Scalar>(store: &ParamStore<T>) -> String {
    let mut h = Sha256::new();
    for (_, name, t) in store.iter() {
        h.update(name.as_bytes());
        h.update((t.rows() as u64).to_le_bytes());
        h.update((t.cols() as u64).to_le_bytes());
        for v in t.data() {
            h.update(v.to_f64_lossless().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn check_scalar<T: Scalar>(stored: &str) -> Result<()> {
    if stored != T::NAME {
        return Err(Error::validation(format!(
            "checkpoint stores {stored} parameters, loader expects {}",
            T::NAME
        )));
    }
    Ok(())
}
