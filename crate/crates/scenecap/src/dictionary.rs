//! Trainable dictionary memory.
//!
//! The dictionary is a d x K matrix of atoms. Re-encoding a vector x
//! computes attention weights alpha = softmax(Dᵀx) — the "key" lookup —
//! and returns x̂ = D·alpha, a convex combination of atoms. Both x and D
//! receive gradients through the lookup. There is no softmax temperature;
//! atom norms control sharpness.

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor, Var};

/// Checkpoint name of the dictionary matrix.
pub const DICT_PARAM: &str = "dictionary.D";

/// Desk-scale default atom count; the full-scale configuration uses 10,000.
pub const DESK_ATOMS: usize = 64;

#[derive(Clone, Copy, Debug)]
pub struct DictionaryConfig {
    pub dim: usize,
    pub atoms: usize,
}

/// Draw the d x K atom matrix i.i.d. Gaussian(0, scale²); scale defaults
/// to 1/sqrt(d) when `None`.
pub fn init_dictionary(
    store: &mut ParamStore,
    rng: &mut SeededRng,
    dim: usize,
    atoms: usize,
    scale: Option<f64>,
) -> Result<()> {
    if dim == 0 || atoms == 0 {
        return Err(Error::Config("dictionary dims must be >= 1".into()));
    }
    let scale = scale.unwrap_or(1.0 / (dim as f64).sqrt());
    let data = (0..dim * atoms)
        .map(|_| rng.gaussian_scaled(scale))
        .collect();
    store.insert(DICT_PARAM, Tensor::new(vec![dim, atoms], data)?);
    Ok(())
}

/// Re-encode one vector through the dictionary. Returns (x̂, alpha).
pub fn reencode(tape: &Tape, bound: &Bound, x: Var) -> Result<(Var, Var)> {
    let d = bound.var(DICT_PARAM);
    let shape = tape.shape(d);
    let xs = tape.shape(x);
    if xs.len() != 1 || xs[0] != shape[0] {
        return Err(Error::Dim(format!(
            "re-encode input has shape {xs:?} but dictionary dim is {}",
            shape[0]
        )));
    }
    let alpha = tape.softmax(tape.matmul_tn(d, x)?)?;
    let xhat = tape.matmul(d, alpha)?;
    Ok((xhat, alpha))
}

/// Re-encode a whole embedding set, preserving order.
pub fn reencode_all(tape: &Tape, bound: &Bound, xs: &[Var]) -> Result<Vec<Var>> {
    xs.iter()
        .map(|&x| reencode(tape, bound, x).map(|(xhat, _)| xhat))
        .collect()
}

/// Per-atom L2 norms, logged as a diagnosis aid (atoms are never
/// normalized).
pub fn atom_norms(store: &ParamStore) -> Result<Vec<f64>> {
    let t = store.get(DICT_PARAM)?;
    let (d, k) = (t.shape()[0], t.shape()[1]);
    let data = t.data();
    let mut norms = vec![0.0; k];
    for i in 0..d {
        for (j, n) in norms.iter_mut().enumerate() {
            let v = data[i * k + j];
            *n += v * v;
        }
    }
    Ok(norms.into_iter().map(f64::sqrt).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(dim: usize, atoms: usize, data: Vec<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert(DICT_PARAM, Tensor::new(vec![dim, atoms], data).unwrap());
        store
    }

    #[test]
    fn single_atom_dominates() {
        let store = store_with(2, 1, vec![0.3, -0.8]);
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let x = tape.constant_vector(vec![5.0, 7.0]).unwrap();
        let (xhat, alpha) = reencode(&tape, &bound, x).unwrap();
        assert_eq!(&*tape.value(alpha), &[1.0]);
        assert_eq!(&*tape.value(xhat), &[0.3, -0.8]);
    }

    #[test]
    fn identity_dictionary_zero_query_is_symmetric() {
        let store = store_with(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let x = tape.constant_vector(vec![0.0, 0.0]).unwrap();
        let (xhat, alpha) = reencode(&tape, &bound, x).unwrap();
        assert_eq!(&*tape.value(alpha), &[0.5, 0.5]);
        assert_eq!(&*tape.value(xhat), &[0.5, 0.5]);
    }

    #[test]
    fn saturated_query_snaps_to_atom() {
        // Orthonormal columns; a query of 100·d_k lands on atom k.
        let store = store_with(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let x = tape.constant_vector(vec![0.0, 100.0]).unwrap();
        let (xhat, alpha) = reencode(&tape, &bound, x).unwrap();
        let a = tape.value(alpha);
        assert!(a[1] > 1.0 - 1e-6);
        let h = tape.value(xhat);
        let dist = ((h[0] - 0.0).powi(2) + (h[1] - 1.0).powi(2)).sqrt();
        assert!(dist <= 1e-6, "‖x̂ − d_k‖ = {dist}");
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let store = store_with(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let x = tape.constant_vector(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(reencode(&tape, &bound, x).is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        init_dictionary(&mut s1, &mut SeededRng::new(9), 8, 16, None).unwrap();
        init_dictionary(&mut s2, &mut SeededRng::new(9), 8, 16, None).unwrap();
        assert_eq!(
            s1.get(DICT_PARAM).unwrap().data(),
            s2.get(DICT_PARAM).unwrap().data()
        );
    }

    #[test]
    fn zero_scale_gives_uniform_attention() {
        let mut store = ParamStore::new();
        init_dictionary(&mut store, &mut SeededRng::new(1), 3, 4, Some(0.0)).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let x = tape.constant_vector(vec![1.0, -2.0, 3.0]).unwrap();
        let (_, alpha) = reencode(&tape, &bound, x).unwrap();
        for &a in tape.value(alpha).iter() {
            assert!((a - 0.25).abs() <= 1e-12);
        }
    }

    #[test]
    fn init_variance_matches_scale() {
        let mut store = ParamStore::new();
        init_dictionary(&mut store, &mut SeededRng::new(3), 100, 100, Some(0.2)).unwrap();
        let data = store.get(DICT_PARAM).unwrap().data().to_vec();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / data.len() as f64;
        assert!((var - 0.04).abs() < 0.04 * 0.2, "sample var {var}");
    }

    #[test]
    fn gradients_flow_to_query_and_atoms() {
        let mut store = ParamStore::new();
        init_dictionary(&mut store, &mut SeededRng::new(5), 3, 4, None).unwrap();
        let x = crate::tensor::Tensor::vector(vec![0.4, -0.9, 1.3])
            .unwrap()
            .with_grad();
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let xv = tape.leaf(&x).unwrap();
        let (xhat, _) = reencode(&tape, &bound, xv).unwrap();
        let loss = tape.sum_all(tape.square(xhat).unwrap()).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(xv).iter().any(|&g| g != 0.0));
        assert!(tape
            .grad(bound.var(DICT_PARAM))
            .iter()
            .any(|&g| g != 0.0));
    }
}
