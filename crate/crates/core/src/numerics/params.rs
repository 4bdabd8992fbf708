use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use super::NumericsError;

/// Index of a parameter inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable parameters together with their gradient accumulators.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ParameterStore<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    #[serde(skip)]
    grads: Vec<Tensor<F>>,
    #[serde(skip)]
    index: HashMap<String, ParamId>,
    seed: u64,
}

impl<F: Real> ParameterStore<F> {
    pub fn new(seed: u64) -> Self {
        Self { names: Vec::new(), values: Vec::new(), grads: Vec::new(), index: HashMap::new(), seed }
    }

    /// Seed the initial values were drawn with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, value: Tensor<F>) -> Result<ParamId, NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.rows(), value.cols()));
        self.values.push(value);
        Ok(id)
    }

    /// Adds a parameter drawn from `uniform(-range, range)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        range: f64,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let data = (0..rows * cols).map(|_| F::lit(rng.gen_range(-range..range))).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, NumericsError> {
        self.add(name, Tensor::zeros(rows, cols))
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

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.grads[id.0]
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<F>, &Tensor<F>) {
        (&mut self.values[id.0], &self.grads[id.0])
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(F::zero()));
    }

    /// Global l2 norm over every gradient accumulator.
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.sq_norm().to_f64().unwrap_or(f64::NAN))
            .sum::<f64>()
            .sqrt()
    }

    /// Rebuilds the lookup index and gradient buffers after deserialization.
    pub fn restore_derived(&mut self) {
        self.index = self.names.iter().enumerate().map(|(i, n)| (n.clone(), ParamId(i))).collect();
        self.grads = self.values.iter().map(|v| Tensor::zeros(v.rows(), v.cols())).collect();
    }

    pub fn cast<G: Real>(&self) -> ParameterStore<G> {
        let mut out = ParameterStore::new(self.seed);
        for (name, v) in self.names.iter().zip(&self.values) {
            out.add(name, v.cast()).expect("names are unique");
        }
        out
    }
}
