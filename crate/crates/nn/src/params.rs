use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Float, NnError, Tensor};

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

/// Index of a tensor inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, trainable tensors of one network.
#[derive(Debug)]
pub struct ParamStore<F> {
    uid: u64,
    names: Vec<String>,
    values: Vec<Tensor<F>>,
}

impl<F: Float> Clone for ParamStore<F> {
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
        }
    }
}

impl<F: Float> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Plain `f32` snapshot of one tensor, used by checkpoint containers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.to_f32(),
            })
            .collect()
    }

    /// Overwrites every parameter from a snapshot. Names and shapes must match exactly.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<(), NnError> {
        if named.len() != self.values.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                named.len()
            )));
        }
        for (i, nt) in named.iter().enumerate() {
            if nt.name != self.names[i] || nt.shape != self.values[i].shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor {i}: expected {} {:?}, found {} {:?}",
                    self.names[i],
                    self.values[i].shape(),
                    nt.name,
                    nt.shape
                )));
            }
            self.values[i] = Tensor::from_f32(&nt.shape, &nt.data);
        }
        Ok(())
    }

    /// Converts to another element type, keeping names and order.
    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            out.add(
                n.clone(),
                Tensor::new(
                    v.shape(),
                    v.data().iter().map(|x| G::c(x.as_f64())).collect(),
                ),
            );
        }
        out
    }
}

/// Uniform initialization with bound `gain * sqrt(3 / fan_in)`.
pub fn uniform_init<F: Float, R: Rng>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<F> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| F::c(rng.random_range(-bound..bound)))
            .collect(),
    )
}
