use crate::bayeslayers::{Dense, Embedding, IsotropicPrior, Lstm, ParamStore, Pass, Weight, WeightMode};
use crate::numcore::{Tensor, TensorError, Var};
use crate::rng::{self, Rng};
use crate::seqmodel::encode::{Encoded, NUM_AGE_BUCKETS};
use crate::seqmodel::train::TrainState;
use crate::seqmodel::{ModelConfig, ModelError, Task};

/// The patient-sequence network: per-day mean of event embeddings, an
/// LSTM stack, context embeddings, an optional ReLU hidden layer and the
/// output layer.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub num_ethnicities: usize,
    pub store: ParamStore<f64>,
    /// Optimizer progress, carried through checkpoints.
    pub state: TrainState,
    events: Embedding,
    gender: Embedding,
    ethnicity: Embedding,
    age: Embedding,
    lstm: Vec<Lstm>,
    hidden: Option<Dense>,
    output: Dense,
}

impl Model {
    /// Fresh model. Initial values depend only on `config.seed`.
    pub fn new(config: ModelConfig, vocab_size: usize, num_ethnicities: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::Config("vocabulary is empty".into()));
        }
        let prior = IsotropicPrior::new(config.prior_std).ok_or_else(|| ModelError::Config("bad prior".into()))?;
        let mut rng = rng::stream(rng::derive(config.seed, "init"), 0);
        let mut store = ParamStore::new();
        let s = config.stochasticity;
        let e = config.sequential_embedding_dim();
        let d = config.dense_embedding_dim;
        // the extra row is the learned vector for days without events
        let events = Embedding::new(&mut store, "events", vocab_size + 1, e, s.embeddings, &prior, &mut rng);
        let gender = Embedding::new(&mut store, "gender", 2, d, s.embeddings, &prior, &mut rng);
        let ethnicity = Embedding::new(&mut store, "ethnicity", num_ethnicities + 1, d, s.embeddings, &prior, &mut rng);
        let age = Embedding::new(&mut store, "age", NUM_AGE_BUCKETS, d, s.embeddings, &prior, &mut rng);
        let mut lstm = Vec::with_capacity(config.num_rnn_layers);
        let mut input = e;
        for l in 0..config.num_rnn_layers {
            let name = format!("lstm{l}");
            lstm.push(Lstm::new(&mut store, &name, input, config.rnn_dim, s.rnn, s.bias_uncertainty, &prior, &mut rng));
            input = config.rnn_dim;
        }
        let mut width = config.rnn_dim + 3 * d;
        let hidden = (config.hidden_layer_dim > 0).then(|| {
            let h = Dense::new(&mut store, "hidden", width, config.hidden_layer_dim, s.hidden, s.bias_uncertainty, &prior, &mut rng);
            width = config.hidden_layer_dim;
            h
        });
        let output = Dense::new(&mut store, "output", width, config.task.output_dim(), s.output, s.bias_uncertainty, &prior, &mut rng);
        Ok(Self {
            state: TrainState::new(config.seed),
            config,
            vocab_size,
            num_ethnicities,
            store,
            events,
            gender,
            ethnicity,
            age,
            lstm,
            hidden,
            output,
        })
    }

    pub fn prior(&self) -> Option<IsotropicPrior<f64>> {
        if self.config.stochasticity.any() {
            IsotropicPrior::new(self.config.prior_std)
        } else {
            None
        }
    }

    pub fn is_stochastic(&self) -> bool {
        self.config.stochasticity.any()
    }

    /// Every weight in construction order.
    pub fn weights(&self) -> Vec<Weight> {
        let mut w = vec![self.events.table, self.gender.table, self.ethnicity.table, self.age.table];
        for l in &self.lstm {
            w.extend([l.input_kernel, l.recurrent_kernel, l.bias]);
        }
        if let Some(h) = &self.hidden {
            w.extend([h.kernel, h.bias]);
        }
        w.extend([self.output.kernel, self.output.bias]);
        w
    }

    pub fn event_embedding(&self) -> Weight {
        self.events.table
    }

    /// A store in which every stochastic weight's mean holds one draw from
    /// its posterior; running it in [`WeightMode::Mean`] evaluates that
    /// single function realization.
    pub fn realize_store(&self, rng: &mut Rng) -> ParamStore<f64> {
        let mut store = self.store.clone();
        for w in self.weights() {
            if let Some(post) = w.posterior(&self.store) {
                *store.get_mut(w.mean_id()) = post.sample(rng);
            }
        }
        store
    }

    fn check(&self, batch: &[&Encoded]) -> Result<(), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyData);
        }
        for ex in batch {
            if let Some(&id) = ex.days.iter().flatten().find(|&&id| id >= self.vocab_size) {
                return Err(ModelError::VocabMismatch {
                    feature_id: id,
                    vocab_size: self.vocab_size,
                });
            }
            if ex.ethnicity > self.num_ethnicities || ex.gender > 1 || ex.age_bucket >= NUM_AGE_BUCKETS {
                return Err(ModelError::Config(format!("context of {} outside the model's tables", ex.patient_id)));
            }
        }
        Ok(())
    }

    /// Output logits, `n × output_dim`. Patients with fewer days keep their
    /// last state while longer sequences continue, so each row depends on
    /// its own patient only.
    pub fn forward(&self, pass: &mut Pass<'_, f64>, batch: &[&Encoded]) -> Result<Var, ModelError> {
        self.check(batch)?;
        let n = batch.len();
        let h_dim = self.config.rnn_dim;
        let steps = batch.iter().map(|e| e.days.len().max(1)).max().unwrap_or(1);
        let no_events = vec![self.vocab_size];
        let mut state: Vec<(Var, Var)> = (0..self.lstm.len())
            .map(|_| {
                let h = pass.tape.constant(Tensor::zeros(&[n, h_dim]));
                let c = pass.tape.constant(Tensor::zeros(&[n, h_dim]));
                (h, c)
            })
            .collect();
        for t in 0..steps {
            let mask: Vec<bool> = batch.iter().map(|e| t < e.days.len().max(1)).collect();
            let bags: Vec<Vec<usize>> = batch
                .iter()
                .map(|e| match e.days.get(t) {
                    Some(day) if !day.is_empty() => day.clone(),
                    _ => no_events.clone(),
                })
                .collect();
            let mut x = self.events.bag_mean(pass, &bags)?;
            let all_active = mask.iter().all(|&m| m);
            for (layer, (h, c)) in self.lstm.iter().zip(state.iter_mut()) {
                let (h_new, c_new) = layer.step(pass, x, *h, *c)?;
                if all_active {
                    (*h, *c) = (h_new, c_new);
                } else {
                    *h = pass.tape.select_rows(&mask, h_new, *h)?;
                    *c = pass.tape.select_rows(&mask, c_new, *c)?;
                }
                x = *h;
            }
        }
        let last = state.last().expect("at least one layer").0;
        let g = self.gender.lookup(pass, &batch.iter().map(|e| e.gender).collect::<Vec<_>>())?;
        let eth = self.ethnicity.lookup(pass, &batch.iter().map(|e| e.ethnicity).collect::<Vec<_>>())?;
        let age = self.age.lookup(pass, &batch.iter().map(|e| e.age_bucket).collect::<Vec<_>>())?;
        let mut z = pass.tape.concat_cols(&[last, g, eth, age])?;
        if let Some(hidden) = &self.hidden {
            let a = hidden.forward(pass, z)?;
            z = pass.tape.relu(a)?;
        }
        Ok(self.output.forward(pass, z)?)
    }

    /// Probability rows from logits: `[p]` (positive class) for binary
    /// tasks, softmax rows otherwise.
    pub fn probabilities(&self, logits: &Tensor<f64>) -> Vec<Vec<f64>> {
        let n = logits.rows();
        match self.config.task {
            Task::Binary => (0..n)
                .map(|i| vec![sigmoid(logits.at(i, 0))])
                .collect(),
            Task::Multiclass(_) => (0..n).map(|i| crate::numcore::softmax_row(logits.row(i))).collect(),
        }
    }

    /// Probability rows for `data` under one fixed store, in batches.
    pub fn predict_with(&self, store: &ParamStore<f64>, data: &[Encoded], batch_size: usize) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(batch_size.max(1)) {
            let refs: Vec<&Encoded> = chunk.iter().collect();
            let mut pass = Pass::new(store, WeightMode::Mean, rng::stream(0, 0), None);
            let logits = self.forward(&mut pass, &refs)?;
            out.extend(self.probabilities(pass.tape.value(logits)));
        }
        Ok(out)
    }

    /// Predictions at the posterior means (the only function of a
    /// deterministic model).
    pub fn predict_mean(&self, data: &[Encoded]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.predict_with(&self.store, data, self.config.batch_size.max(256))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}
