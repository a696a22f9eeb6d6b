use std::collections::HashMap;

use rand::Rng as _;

use crate::bayeslayers::posterior::{inverse_softplus, kl_on_tape, sample_on_tape, GaussianPosterior, IsotropicPrior};
use crate::numcore::{Tape, Tensor, TensorError, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// A weight tensor that is either a point estimate or a mean-field
/// Gaussian posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weight {
    Point(ParamId),
    Gaussian { mean: ParamId, rho: ParamId },
}

impl Weight {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Weight::Gaussian { .. })
    }

    pub fn mean_id(&self) -> ParamId {
        match *self {
            Weight::Point(id) => id,
            Weight::Gaussian { mean, .. } => mean,
        }
    }

    /// Registers a weight initialized at `init`; stochastic weights start
    /// with every scale at `0.1 · prior std`.
    pub fn create<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        init: Tensor<T>,
        stochastic: bool,
        prior: &IsotropicPrior<T>,
    ) -> Self {
        if stochastic {
            let rho = Tensor::full(init.shape(), inverse_softplus(T::lit(0.1) * prior.std()));
            let mean = store.add(format!("{name}.mean"), init);
            let rho = store.add(format!("{name}.rho"), rho);
            Weight::Gaussian { mean, rho }
        } else {
            Weight::Point(store.add(name, init))
        }
    }

    /// The posterior housed by a stochastic weight.
    pub fn posterior<T: Scalar>(&self, store: &ParamStore<T>) -> Option<GaussianPosterior<T>> {
        match *self {
            Weight::Point(_) => None,
            Weight::Gaussian { mean, rho } => {
                GaussianPosterior::new(store.get(mean).clone(), store.get(rho).clone()).ok()
            }
        }
    }
}

/// `uniform(-√(6/(fan_in+fan_out)), +√(…))` initial values.
pub fn glorot_uniform<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// How stochastic weights are turned into values during a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// One reparameterized draw per weight per pass.
    Sample,
    /// Posterior means.
    Mean,
}

/// State of one forward pass: the tape, the parameter leaves recorded on it
/// and the weight realizations drawn so far.
pub struct Pass<'a, T: Scalar> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    mode: WeightMode,
    rng: Rng,
    prior: Option<IsotropicPrior<T>>,
    leaves: Vec<Option<Var>>,
    realized: HashMap<ParamId, Var>,
    kl_terms: Vec<Var>,
}

impl<'a, T: Scalar> Pass<'a, T> {
    /// `prior` enables KL bookkeeping for every stochastic weight realized.
    pub fn new(store: &'a ParamStore<T>, mode: WeightMode, rng: Rng, prior: Option<IsotropicPrior<T>>) -> Self {
        Self {
            tape: Tape::new(),
            store,
            mode,
            rng,
            prior,
            leaves: vec![None; store.len()],
            realized: HashMap::new(),
            kl_terms: Vec::new(),
        }
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    /// Leaf node holding parameter `id`, recorded once per pass.
    pub fn leaf(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let v = self.tape.param(self.store.get(id).clone());
        self.leaves[id.0] = Some(v);
        v
    }

    /// Value of `weight` for this pass. Repeated calls return the same node,
    /// so a stochastic weight is drawn exactly once per pass.
    pub fn realize(&mut self, weight: Weight) -> Result<Var, TensorError> {
        let key = weight.mean_id();
        if let Some(&v) = self.realized.get(&key) {
            return Ok(v);
        }
        let v = match weight {
            Weight::Point(id) => self.leaf(id),
            Weight::Gaussian { mean, rho } => {
                let (m, r) = (self.leaf(mean), self.leaf(rho));
                if let Some(prior) = self.prior {
                    let kl = kl_on_tape(&mut self.tape, m, r, &prior)?;
                    self.kl_terms.push(kl);
                }
                match self.mode {
                    WeightMode::Sample => sample_on_tape(&mut self.tape, m, r, &mut self.rng)?,
                    WeightMode::Mean => m,
                }
            }
        };
        self.realized.insert(key, v);
        Ok(v)
    }

    /// Sum of the KL terms of every stochastic weight realized so far, or
    /// `None` when there were none.
    pub fn total_kl(&mut self) -> Result<Option<Var>, TensorError> {
        let mut terms = self.kl_terms.iter().copied();
        let Some(first) = terms.next() else { return Ok(None) };
        let mut acc = first;
        for t in terms {
            acc = self.tape.add(acc, t)?;
        }
        Ok(Some(acc))
    }

    /// Gradients of every parameter recorded in this pass, indexed by id.
    pub fn param_grads(&self) -> Vec<Option<Tensor<T>>> {
        self.leaves
            .iter()
            .map(|leaf| leaf.and_then(|v| self.tape.grad(v).cloned()))
            .collect()
    }
}
