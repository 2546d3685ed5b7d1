//! Named parameter registry, tape binding, and the Adam optimizer.
//!
//! Parameters live in a [`ParamStore`] under dotted-path names
//! (e.g. `"gcn.g_r.weight"`). Each training step binds the store onto a
//! fresh [`Tape`] (a cheap shared-buffer operation), runs forward and
//! backward, then pulls the leaf gradients back into the store where the
//! optimizer consumes them.

use std::collections::HashMap;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor) {
        t.requires_grad = true;
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Model(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Model(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gaussian-initialized matrix parameter, std 1/sqrt(fan_in).
    pub fn init_matrix(
        &mut self,
        rng: &mut SeededRng,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
    ) {
        let std = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gaussian_scaled(std)).collect();
        self.insert(name, Tensor::new(vec![rows, cols], data).unwrap());
    }

    pub fn init_zeros_vector(&mut self, name: impl Into<String>, len: usize) {
        self.insert(name, Tensor::vector(vec![0.0; len]).unwrap());
    }

    /// Fully-connected layer: `{name}.weight` (dout x din) plus
    /// `{name}.bias` (dout, zeros).
    pub fn init_affine(&mut self, rng: &mut SeededRng, name: &str, din: usize, dout: usize) {
        self.init_matrix(rng, format!("{name}.weight"), dout, din);
        self.init_zeros_vector(format!("{name}.bias"), dout);
    }

    /// Bind every parameter onto the tape as a gradient-tracked leaf.
    pub fn bind(&self, tape: &Tape) -> Result<Bound> {
        let mut vars = HashMap::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            vars.insert(name.clone(), tape.leaf(t)?);
        }
        Ok(Bound { vars })
    }

    /// Pull gradients off the tape into the store's grad buffers
    /// (accumulating on top of anything already there).
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<()> {
        for (name, t) in self.entries.iter_mut() {
            let var = bound.raw(name)?;
            t.accumulate_grad(&tape.grad(var));
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.zero_grad();
        }
    }

    /// Global-norm gradient clipping; returns the pre-clip norm.
    pub fn clip_grads(&mut self, max_norm: f64) -> f64 {
        let mut sq = 0.0;
        for t in self.entries.values() {
            if let Some(g) = &t.grad {
                sq += g.iter().map(|&v| v * v).sum::<f64>();
            }
        }
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for t in self.entries.values_mut() {
                if let Some(g) = &mut t.grad {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        norm
    }
}

/// Per-step mapping from parameter names to tape leaves.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    fn raw(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Model(format!("parameter `{name}` not bound")))
    }
}

/// Affine + ReLU helper shared by the g- and f-functions and classifier
/// heads: `relu(W x + b)`.
pub fn affine_relu(tape: &Tape, bound: &Bound, name: &str, x: Var) -> Result<Var> {
    tape.relu(linear(tape, bound, name, x)?)
}

/// `W x + b` for a `{name}.weight` / `{name}.bias` pair.
pub fn linear(tape: &Tape, bound: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = bound.var(&format!("{name}.weight"));
    let b = bound.var(&format!("{name}.bias"));
    tape.add(tape.matmul(w, x)?, b)
}

/// Adam with bias correction. Moment buffers mirror parameter shapes.
#[derive(Clone)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: HashMap<String, Vec<f64>>,
    second: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter with a gradient. `lr_for` selects
    /// the learning rate per parameter name (the dictionary trains at its
    /// own rate). Grads are left in place; callers zero them per step.
    pub fn update(&mut self, store: &mut ParamStore, lr_for: &dyn Fn(&str) -> f64) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let names: Vec<String> = store.names().map(str::to_owned).collect();
        for name in names {
            let lr = lr_for(&name);
            let tensor = store.get_mut(&name)?;
            let Some(grad) = tensor.grad.clone() else {
                continue;
            };
            if grad.len() != tensor.len() {
                return Err(Error::Dim(format!(
                    "gradient shape mismatch for `{name}`"
                )));
            }
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let data = tensor.data_mut();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Central-difference check over every entry of every parameter in the
/// store, against the analytic gradients of `loss`. Returns the max
/// relative error.
pub fn grad_check_store<F>(store: &mut ParamStore, loss: F, h: f64) -> Result<f64>
where
    F: Fn(&Tape, &Bound) -> Result<Var>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape)?;
    let out = loss(&tape, &bound)?;
    tape.backward(out)?;
    let mut analytic: HashMap<String, Vec<f64>> = HashMap::new();
    for (name, _) in store.iter() {
        analytic.insert(name.to_owned(), tape.grad(bound.var(name)));
    }
    drop(tape);

    let eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let bound = store.bind(&tape)?;
        let out = loss(&tape, &bound)?;
        tape.scalar_value(out)
    };

    let mut max_err: f64 = 0.0;
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let len = store.get(&name)?.len();
        for i in 0..len {
            let orig = store.get(&name)?.data()[i];
            store.get_mut(&name)?.data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.get_mut(&name)?.data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = crate::gradcheck::relative_error(analytic[&name][i], numeric);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
