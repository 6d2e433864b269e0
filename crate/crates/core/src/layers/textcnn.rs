use rand::Rng;

use super::{add_weight, lookup};
use crate::error::{Error, Result};
use crate::numcore::{Binder, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Multi-width convolutional sentence encoder.
///
/// For each window width: conv1d → relu → max over the valid positions.
/// The pooled channels are concatenated and projected to `output_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCnn {
    input_dim: usize,
    widths: Vec<usize>,
    channels: usize,
    output_dim: usize,
    filters: Vec<ParamId>,
    proj_weight: ParamId,
    proj_bias: ParamId,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.is_empty() || widths[0] == 0 || widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input(format!(
            "window widths must be non-empty, positive and strictly increasing, got {widths:?}"
        )));
    }
    Ok(())
}

impl TextCnn {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input_dim: usize,
        widths: &[usize],
        channels: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_widths(widths)?;
        if input_dim == 0 || channels == 0 || output_dim == 0 {
            return Err(Error::input(format!("{prefix}: TextCNN dims must be positive")));
        }
        let filters = widths
            .iter()
            .map(|&w| {
                add_weight(
                    store,
                    format!("{prefix}.conv{w}.weight"),
                    rng,
                    &[w, input_dim, channels],
                    w * input_dim,
                    channels,
                )
            })
            .collect();
        let pooled = widths.len() * channels;
        let proj_weight = add_weight(
            store,
            format!("{prefix}.proj.weight"),
            rng,
            &[pooled, output_dim],
            pooled,
            output_dim,
        );
        let proj_bias = store.add(format!("{prefix}.proj.bias"), Tensor::zeros(&[output_dim]));
        Ok(TextCnn {
            input_dim,
            widths: widths.to_vec(),
            channels,
            output_dim,
            filters,
            proj_weight,
            proj_bias,
        })
    }

    pub fn attach<S: Real>(
        store: &ParamStore<S>,
        prefix: &str,
        input_dim: usize,
        widths: &[usize],
        channels: usize,
        output_dim: usize,
    ) -> Result<Self> {
        check_widths(widths)?;
        let filters = widths
            .iter()
            .map(|&w| lookup(store, &format!("{prefix}.conv{w}.weight"), &[w, input_dim, channels]))
            .collect::<Result<_>>()?;
        let pooled = widths.len() * channels;
        Ok(TextCnn {
            input_dim,
            widths: widths.to_vec(),
            channels,
            output_dim,
            filters,
            proj_weight: lookup(store, &format!("{prefix}.proj.weight"), &[pooled, output_dim])?,
            proj_bias: lookup(store, &format!("{prefix}.proj.bias"), &[output_dim])?,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn max_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Filter bank ids, one `[w×d×c]` tensor per width.
    pub fn filters(&self) -> &[ParamId] {
        &self.filters
    }

    pub fn projection(&self) -> (ParamId, ParamId) {
        (self.proj_weight, self.proj_bias)
    }

    /// `seq: [B×L×d]` with per-row valid lengths → `[B×output_dim]`.
    ///
    /// Every valid length must be at least [`TextCnn::max_width`]; the
    /// detector pads short items before calling this.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &mut Binder<S>,
        seq: Var,
        lens: &[usize],
    ) -> Result<Var> {
        let shape = tape.value(seq).shape();
        if shape.len() != 3 || shape[2] != self.input_dim {
            return Err(Error::Dimension {
                op: "textcnn",
                lhs: shape.to_vec(),
                rhs: vec![self.input_dim],
            });
        }
        let mut pooled = Vec::with_capacity(self.widths.len());
        for (&w, &f) in self.widths.iter().zip(&self.filters) {
            let fv = params.bind(tape, f);
            let conv = tape.conv1d(seq, fv, lens)?;
            let act = tape.relu(conv);
            let positions: Vec<usize> = lens.iter().map(|&l| l + 1 - w).collect();
            pooled.push(tape.max_over_time(act, &positions)?);
        }
        let features = if pooled.len() == 1 { pooled[0] } else { tape.concat(&pooled)? };
        let (pw, pb) = (params.bind(tape, self.proj_weight), params.bind(tape, self.proj_bias));
        tape.affine(features, pw, pb)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::layers::SeqBatch;
    use crate::numcore::finite_diff_check;

    fn encode(cnn: &TextCnn, store: &ParamStore<f64>, batch: &SeqBatch<f64>) -> Vec<f64> {
        let mut tape = Tape::new();
        let mut p = Binder::frozen(store);
        let seq = batch.to_tape(&mut tape);
        let out = cnn.forward(&mut tape, &mut p, seq, &batch.lens).unwrap();
        tape.value(out).data().to_vec()
    }

    fn rows(data: &[[f32; 3]]) -> Vec<f32> {
        data.iter().flatten().copied().collect()
    }

    #[test]
    fn widths_must_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        assert!(TextCnn::new(&mut store, "e", 3, &[2, 2], 4, 5, &mut rng).is_err());
        assert!(TextCnn::new(&mut store, "e", 3, &[0, 1], 4, 5, &mut rng).is_err());
        assert!(TextCnn::new(&mut store, "e", 3, &[], 4, 5, &mut rng).is_err());
    }

    #[test]
    fn output_dim_is_fixed_by_projection() {
        for widths in [vec![1], vec![1, 2, 3, 5], vec![2, 4]] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut store = ParamStore::<f64>::new();
            let cnn = TextCnn::new(&mut store, "e", 3, &widths, 4, 7, &mut rng).unwrap();
            let seq = rows(&[[0.1, 0.2, 0.3]; 6]);
            let batch = SeqBatch::pack([seq.as_slice()], 3, 0).unwrap();
            assert_eq!(encode(&cnn, &store, &batch).len(), 7);
        }
    }

    #[test]
    fn constant_sequence_pools_single_window_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let cnn = TextCnn::new(&mut store, "e", 3, &[1], 4, 4, &mut rng).unwrap();
        let (pw, _) = cnn.projection();
        store.set(pw, Tensor::matrix(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ])).unwrap();
        let token = [0.4f32, -0.2, 0.9];
        let seq = rows(&[token; 5]);
        let out = encode(&cnn, &store, &SeqBatch::pack([seq.as_slice()], 3, 0).unwrap());
        let f = store.get(cnn.filters()[0]).data();
        for ch in 0..4 {
            let response: f64 = (0..3).map(|j| token[j] as f64 * f[j * 4 + ch]).sum();
            assert!((out[ch] - response.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_width_pooling_ignores_token_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::<f64>::new();
        let cnn = TextCnn::new(&mut store, "e", 3, &[1], 6, 5, &mut rng).unwrap();
        let a = rows(&[[0.1, 0.9, -0.3], [0.5, -0.5, 0.2], [-0.8, 0.3, 0.7]]);
        let b = rows(&[[-0.8, 0.3, 0.7], [0.1, 0.9, -0.3], [0.5, -0.5, 0.2]]);
        let ea = encode(&cnn, &store, &SeqBatch::pack([a.as_slice()], 3, 0).unwrap());
        let eb = encode(&cnn, &store, &SeqBatch::pack([b.as_slice()], 3, 0).unwrap());
        assert_eq!(ea, eb);
    }

    #[test]
    fn trailing_padding_is_ignored_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::<f64>::new();
        let cnn = TextCnn::new(&mut store, "e", 3, &[1, 2, 3], 4, 5, &mut rng).unwrap();
        let a = rows(&[[0.1, 0.9, -0.3], [0.5, -0.5, 0.2], [-0.8, 0.3, 0.7], [0.0, 0.2, 0.1]]);
        let plain = encode(&cnn, &store, &SeqBatch::pack([a.as_slice()], 3, 0).unwrap());
        let padded = encode(&cnn, &store, &SeqBatch::pack([a.as_slice()], 3, 9).unwrap());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&plain), bits(&padded));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::<f64>::new();
        let cnn = TextCnn::new(&mut store, "e", 3, &[1, 2], 3, 2, &mut rng).unwrap();
        store.get_mut(cnn.projection().1).fill(0.05);
        let a = rows(&[[0.1, 0.9, -0.3], [0.5, -0.5, 0.2], [-0.8, 0.3, 0.7], [0.6, 0.2, -0.4]]);
        let b = rows(&[[0.7, -0.1, 0.4], [-0.2, 0.8, 0.5]]);
        let batch = SeqBatch::<f64>::pack([a.as_slice(), b.as_slice()], 3, 0).unwrap();
        let report = finite_diff_check(&store, 1e-5, |tape, p| {
            let seq = batch.to_tape(tape);
            let out = cnn.forward(tape, p, seq, &batch.lens)?;
            let t = tape.tanh(out);
            let w = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, -0.5, 0.25, 2.0])?);
            let y = tape.mul(t, w)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }
}
