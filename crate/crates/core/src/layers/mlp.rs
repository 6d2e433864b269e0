use rand::Rng;

use super::{add_weight, lookup};
use crate::error::{Error, Result};
use crate::numcore::{Binder, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Stack of affine layers with relu between them and nothing after the
/// last one; callers apply softmax or sigmoid themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`, at least two entries.
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, prefix: &str, dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::input(format!("{prefix}: invalid MLP dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let w = add_weight(store, format!("{prefix}.{i}.weight"), rng, &[io[0], io[1]], io[0], io[1]);
                let b = store.add(format!("{prefix}.{i}.bias"), Tensor::zeros(&[io[1]]));
                (w, b)
            })
            .collect();
        Ok(Mlp {
            dims: dims.to_vec(),
            layers,
        })
    }

    /// Re-resolves parameter ids by name, for models read from disk.
    pub fn attach<S: Real>(store: &ParamStore<S>, prefix: &str, dims: &[usize]) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                Ok((
                    lookup(store, &format!("{prefix}.{i}.weight"), &[io[0], io[1]])?,
                    lookup(store, &format!("{prefix}.{i}.bias"), &[io[1]])?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Mlp {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }

    /// `(weight, bias)` ids of each affine layer, input side first.
    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, params: &mut Binder<S>, x: Var) -> Result<Var> {
        let got = *tape.value(x).shape().last().unwrap_or(&0);
        if got != self.input_dim() {
            return Err(Error::Dimension {
                op: "mlp",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (params.bind(tape, w), params.bind(tape, b));
            h = tape.affine(h, wv, bv)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numcore::finite_diff_check;

    fn eval(mlp: &Mlp, store: &ParamStore<f64>, x: Vec<f64>) -> Vec<f64> {
        let mut tape = Tape::new();
        let mut p = Binder::frozen(store);
        let xv = tape.constant(Tensor::vector(x));
        let y = mlp.forward(&mut tape, &mut p, xv).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 3], &mut rng).unwrap();
        let (w, _) = mlp.layers()[0];
        store.set(w, Tensor::matrix(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])).unwrap();
        assert_eq!(eval(&mlp, &store, vec![0.5, -2.0, 3.0]), vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[2, 3], &mut rng).unwrap();
        let (w, b) = mlp.layers()[0];
        store.get_mut(w).fill(0.0);
        store.set(b, Tensor::vector(vec![0.1, 0.2, 0.3])).unwrap();
        assert_eq!(eval(&mlp, &store, vec![7.0, -7.0]), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn two_layer_relu_hand_computation() {
        // x = [1, −2]; W1 = [[1, −1], [0.5, 2]], b1 = [0.5, 0]
        // pre = [1 − 1 + 0.5, −1 − 4] = [0.5, −5] → relu [0.5, 0]
        // W2 = [[2], [3]], b2 = [−0.25] → 1 − 0.25 = 0.75
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[2, 2, 1], &mut rng).unwrap();
        let [(w1, b1), (w2, b2)] = mlp.layers() else { unreachable!() };
        store.set(*w1, Tensor::matrix(&[vec![1.0, -1.0], vec![0.5, 2.0]])).unwrap();
        store.set(*b1, Tensor::vector(vec![0.5, 0.0])).unwrap();
        store.set(*w2, Tensor::matrix(&[vec![2.0], vec![3.0]])).unwrap();
        store.set(*b2, Tensor::vector(vec![-0.25])).unwrap();
        let y = eval(&mlp, &store, vec![1.0, -2.0]);
        assert!((y[0] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[4, 2], &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut p = Binder::frozen(&store);
        let x = tape.constant(Tensor::vector(vec![1.0; 3]));
        assert!(matches!(mlp.forward(&mut tape, &mut p, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 2], &mut rng).unwrap();
        for (_, b) in mlp.layers() {
            store.get_mut(*b).fill(0.1);
        }
        let report = finite_diff_check(&store, 1e-5, |tape, p| {
            let x = tape.constant(Tensor::matrix(&[vec![0.3, -0.8, 1.1], vec![-0.5, 0.2, 0.9]]));
            let y = mlp.forward(tape, p, x)?;
            let s = tape.tanh(y);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }
}
