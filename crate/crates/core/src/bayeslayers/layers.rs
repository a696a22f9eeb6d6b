use crate::bayeslayers::params::{glorot_uniform, ParamStore, Pass, Weight};
use crate::bayeslayers::posterior::IsotropicPrior;
use crate::numcore::{Tensor, TensorError, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Embedding table, `rows × dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embedding {
    pub table: Weight,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        rows: usize,
        dim: usize,
        stochastic: bool,
        prior: &IsotropicPrior<T>,
        rng: &mut Rng,
    ) -> Self {
        let init = glorot_uniform(rng, &[rows, dim], rows, dim);
        Self {
            table: Weight::create(store, name, init, stochastic, prior),
            rows,
            dim,
        }
    }

    /// One row per id, all drawn from the single table realization of the
    /// pass (or the posterior mean in [`WeightMode::Mean`](crate::bayeslayers::WeightMode)).
    pub fn lookup<T: Scalar>(&self, pass: &mut Pass<'_, T>, ids: &[usize]) -> Result<Var, TensorError> {
        let table = pass.realize(self.table)?;
        pass.tape.gather_rows(table, ids)
    }

    /// Mean embedding per bag of ids.
    pub fn bag_mean<T: Scalar>(&self, pass: &mut Pass<'_, T>, bags: &[Vec<usize>]) -> Result<Var, TensorError> {
        let table = pass.realize(self.table)?;
        pass.tape.bag_mean(table, bags)
    }
}

/// Affine layer `x·W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub kernel: Weight,
    pub bias: Weight,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        stochastic: bool,
        bias_uncertainty: bool,
        prior: &IsotropicPrior<T>,
        rng: &mut Rng,
    ) -> Self {
        let w = glorot_uniform(rng, &[fan_in, fan_out], fan_in, fan_out);
        let kernel = Weight::create(store, &format!("{name}.kernel"), w, stochastic, prior);
        let bias = Weight::create(
            store,
            &format!("{name}.bias"),
            Tensor::zeros(&[fan_out]),
            stochastic && bias_uncertainty,
            prior,
        );
        Self {
            kernel,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = pass.realize(self.kernel)?;
        let b = pass.realize(self.bias)?;
        let xw = pass.tape.matmul(x, w)?;
        pass.tape.add_row(xw, b)
    }
}

/// LSTM cell with gate columns ordered `[input, forget, candidate, output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lstm {
    pub input_kernel: Weight,
    pub recurrent_kernel: Weight,
    pub bias: Weight,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        stochastic: bool,
        bias_uncertainty: bool,
        prior: &IsotropicPrior<T>,
        rng: &mut Rng,
    ) -> Self {
        let wx = glorot_uniform(rng, &[input_dim, 4 * hidden], input_dim, 4 * hidden);
        let wh = glorot_uniform(rng, &[hidden, 4 * hidden], hidden, 4 * hidden);
        let mut b = Tensor::zeros(&[4 * hidden]);
        // forget gate starts open
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::one());
        Self {
            input_kernel: Weight::create(store, &format!("{name}.input_kernel"), wx, stochastic, prior),
            recurrent_kernel: Weight::create(store, &format!("{name}.recurrent_kernel"), wh, stochastic, prior),
            bias: Weight::create(store, &format!("{name}.bias"), b, stochastic && bias_uncertainty, prior),
            input_dim,
            hidden,
        }
    }

    /// One step: returns `(h_t, c_t)`.
    pub fn step<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var), TensorError> {
        let hs = pass.tape.shape(h_prev).to_vec();
        if hs.len() != 2 || hs[1] != self.hidden || pass.tape.shape(c_prev) != hs.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_step",
                left: hs,
                right: pass.tape.shape(c_prev).to_vec(),
            });
        }
        let wx = pass.realize(self.input_kernel)?;
        let wh = pass.realize(self.recurrent_kernel)?;
        let b = pass.realize(self.bias)?;
        let t = &mut pass.tape;
        let zx = t.matmul(x, wx)?;
        let zh = t.matmul(h_prev, wh)?;
        let z = t.add(zx, zh)?;
        let z = t.add_row(z, b)?;
        let n = self.hidden;
        let i = t.slice_cols(z, 0, n)?;
        let f = t.slice_cols(z, n, 2 * n)?;
        let g = t.slice_cols(z, 2 * n, 3 * n)?;
        let o = t.slice_cols(z, 3 * n, 4 * n)?;
        let i = t.sigmoid(i)?;
        let f = t.sigmoid(f)?;
        let g = t.tanh(g)?;
        let o = t.sigmoid(o)?;
        let keep = t.mul(f, c_prev)?;
        let write = t.mul(i, g)?;
        let c = t.add(keep, write)?;
        let tc = t.tanh(c)?;
        let h = t.mul(o, tc)?;
        Ok((h, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayeslayers::WeightMode;
    use crate::rng::stream;

    fn prior() -> IsotropicPrior<f64> {
        IsotropicPrior::new(0.5).unwrap()
    }

    #[test]
    fn deterministic_lookup_equals_table_row() {
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 6, 3, false, &prior(), &mut stream(1, 0));
        let mut pass = Pass::new(&store, WeightMode::Sample, stream(2, 0), None);
        let rows = emb.lookup(&mut pass, &[4, 1]).unwrap();
        let table = store.get(emb.table.mean_id());
        assert_eq!(pass.tape.value(rows).row(0), table.row(4));
        assert_eq!(pass.tape.value(rows).row(1), table.row(1));
        assert!(emb.lookup(&mut pass, &[6]).is_err());
    }

    #[test]
    fn repeated_ids_share_one_realization() {
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 5, 4, true, &prior(), &mut stream(1, 0));
        let mut pass = Pass::new(&store, WeightMode::Sample, stream(3, 0), Some(prior()));
        let a = emb.lookup(&mut pass, &[2, 2]).unwrap();
        let b = emb.lookup(&mut pass, &[2]).unwrap();
        let va = pass.tape.value(a);
        assert_eq!(va.row(0), va.row(1));
        assert_eq!(va.row(0), pass.tape.value(b).row(0));
        // drawn, not the mean
        assert_ne!(va.row(0), store.get(emb.table.mean_id()).row(2));
    }

    #[test]
    fn negligible_scale_sample_matches_mean_mode() {
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 5, 4, true, &prior(), &mut stream(1, 0));
        if let Weight::Gaussian { rho, .. } = emb.table {
            store.get_mut(rho).data_mut().iter_mut().for_each(|r| *r = -800.0);
        }
        let mut sampled = Pass::new(&store, WeightMode::Sample, stream(3, 0), None);
        let a = emb.lookup(&mut sampled, &[0, 3]).unwrap();
        let mut mean = Pass::new(&store, WeightMode::Mean, stream(3, 0), None);
        let b = emb.lookup(&mut mean, &[0, 3]).unwrap();
        assert_eq!(sampled.tape.value(a), mean.tape.value(b));
    }

    fn set_point(store: &mut ParamStore<f64>, w: Weight, value: Tensor<f64>) {
        *store.get_mut(w.mean_id()) = value;
    }

    #[test]
    fn dense_identity_and_zero_weights() {
        let mut store = ParamStore::new();
        let dense = Dense::new(&mut store, "d", 3, 3, false, false, &prior(), &mut stream(1, 0));
        set_point(&mut store, dense.kernel, Tensor::identity(3));
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 4.0, 1.0]]).unwrap();
        let mut pass = Pass::new(&store, WeightMode::Sample, stream(0, 0), None);
        let xv = pass.tape.constant(x.clone());
        let y = dense.forward(&mut pass, xv).unwrap();
        assert_eq!(pass.tape.value(y), &x);

        set_point(&mut store, dense.kernel, Tensor::zeros(&[3, 3]));
        set_point(&mut store, dense.bias, Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut pass = Pass::new(&store, WeightMode::Sample, stream(0, 0), None);
        let xv = pass.tape.constant(x);
        let y = dense.forward(&mut pass, xv).unwrap();
        assert_eq!(pass.tape.value(y).row(1), &[1.0, 2.0, 3.0]);

        let bad = pass.tape.constant(Tensor::zeros(&[2, 4]));
        assert!(dense.forward(&mut pass, bad).is_err());
    }

    #[test]
    fn lstm_at_zero_weights() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 2, 3, false, false, &prior(), &mut stream(1, 0));
        set_point(&mut store, lstm.input_kernel, Tensor::zeros(&[2, 12]));
        set_point(&mut store, lstm.recurrent_kernel, Tensor::zeros(&[3, 12]));
        set_point(&mut store, lstm.bias, Tensor::zeros(&[12]));
        let mut pass = Pass::new(&store, WeightMode::Sample, stream(0, 0), None);
        let x = pass.tape.constant(Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap());
        let h = pass.tape.constant(Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap());
        let c_prev = vec![0.8, -1.5, 3.0];
        let c = pass.tape.constant(Tensor::from_rows(&[c_prev.clone()]).unwrap());
        let (h1, c1) = lstm.step(&mut pass, x, h, c).unwrap();
        for j in 0..3 {
            let c_exp = 0.5 * c_prev[j];
            assert!((pass.tape.value(c1).data()[j] - c_exp).abs() < 1e-15);
            assert!((pass.tape.value(h1).data()[j] - 0.5 * c_exp.tanh()).abs() < 1e-15);
        }
        let bad = pass.tape.constant(Tensor::zeros(&[1, 4]));
        assert!(lstm.step(&mut pass, x, bad, bad).is_err());
    }

    #[test]
    fn lstm_zero_input_and_state_gives_zero_hidden() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 2, 4, false, false, &prior(), &mut stream(5, 0));
        let mut pass = Pass::new(&store, WeightMode::Sample, stream(0, 0), None);
        let x = pass.tape.constant(Tensor::zeros(&[3, 2]));
        let z = pass.tape.constant(Tensor::zeros(&[3, 4]));
        let (h, _) = lstm.step(&mut pass, x, z, z).unwrap();
        assert!(pass.tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_stays_inside_unit_interval() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 3, 5, true, true, &prior(), &mut stream(5, 0));
        let mut pass = Pass::new(&store, WeightMode::Sample, stream(7, 0), None);
        let x = pass.tape.constant(Tensor::full(&[2, 3], 40.0));
        let mut h = pass.tape.constant(Tensor::zeros(&[2, 5]));
        let mut c = pass.tape.constant(Tensor::zeros(&[2, 5]));
        for _ in 0..6 {
            (h, c) = lstm.step(&mut pass, x, h, c).unwrap();
            assert!(pass.tape.value(h).data().iter().all(|v| v.abs() < 1.0));
        }
    }
}
