//! Location-aware attention: energies combine the decoder state, each
//! encoder frame, and a convolution over the previous alignment.

use super::{uniform_tensor, Fields, FieldsMut};
use crate::tensor::{Graph, NodeId, Real, Result, Tensor, TensorError};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct AttentionParams<T> {
    /// `[channels x width]` filter over the previous alignment.
    pub conv_kernel: Tensor<T>,
    /// `[dec_hidden x att_dim]`
    pub w_dec: Tensor<T>,
    /// `[enc_proj x att_dim]`
    pub w_enc: Tensor<T>,
    /// `[channels x att_dim]`
    pub w_conv: Tensor<T>,
    pub bias: Tensor<T>,
    /// `[att_dim]` scoring vector.
    pub w_score: Tensor<T>,
}

impl<T: Real> AttentionParams<T> {
    pub fn init<R: Rng>(
        dec_hidden: usize,
        enc_proj: usize,
        att_dim: usize,
        channels: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        AttentionParams {
            conv_kernel: uniform_tensor(&[channels, width], rng),
            w_dec: uniform_tensor(&[dec_hidden, att_dim], rng),
            w_enc: uniform_tensor(&[enc_proj, att_dim], rng),
            w_conv: uniform_tensor(&[channels, att_dim], rng),
            bias: uniform_tensor(&[att_dim], rng),
            w_score: uniform_tensor(&[att_dim], rng),
        }
    }

    pub fn fields(&self) -> Fields<'_, T> {
        vec![
            ("conv_kernel", &self.conv_kernel),
            ("w_dec", &self.w_dec),
            ("w_enc", &self.w_enc),
            ("w_conv", &self.w_conv),
            ("bias", &self.bias),
            ("w_score", &self.w_score),
        ]
    }

    pub fn fields_mut(&mut self) -> FieldsMut<'_, T> {
        vec![
            ("conv_kernel", &mut self.conv_kernel),
            ("w_dec", &mut self.w_dec),
            ("w_enc", &mut self.w_enc),
            ("w_conv", &mut self.w_conv),
            ("bias", &mut self.bias),
            ("w_score", &mut self.w_score),
        ]
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundAttention {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundAttention {
            conv_kernel: put(&self.conv_kernel),
            w_dec: put(&self.w_dec),
            w_enc: put(&self.w_enc),
            w_conv: put(&self.w_conv),
            bias: put(&self.bias),
            w_score: put(&self.w_score),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundAttention {
    pub conv_kernel: NodeId,
    pub w_dec: NodeId,
    pub w_enc: NodeId,
    pub w_conv: NodeId,
    pub bias: NodeId,
    pub w_score: NodeId,
}

/// Uniform initial alignment over `t_enc` encoder frames; no prior
/// step exists at the start of an utterance.
pub fn uniform_alignment<T: Real>(g: &mut Graph<T>, t_enc: usize) -> NodeId {
    let w = T::one() / T::from_f64c(t_enc as f64);
    g.constant(Tensor::full(&[t_enc], w))
}

/// One attention step. Returns the context vector and the new
/// alignment, which always sums to 1 by softmax construction.
pub fn location_attention_step<T: Real>(
    g: &mut Graph<T>,
    p: &BoundAttention,
    dec_state: NodeId,
    enc_out: NodeId,
    prev_alignment: NodeId,
) -> Result<(NodeId, NodeId)> {
    let t_enc = g.value(enc_out).rows();
    let pa = g.value(prev_alignment);
    if pa.rank() != 1 || pa.len() != t_enc {
        return Err(TensorError::ShapeMismatch {
            op: "location_attention_step",
            lhs: pa.shape().to_vec(),
            rhs: vec![t_enc],
        });
    }
    let conv = g.conv1d_same(prev_alignment, p.conv_kernel)?;
    let term_enc = g.matmul(enc_out, p.w_enc)?;
    let term_conv = g.matmul(conv, p.w_conv)?;
    let term_dec = g.vecmat(dec_state, p.w_dec)?;
    let dec_bias = g.add(term_dec, p.bias)?;
    let lanes = g.add(term_enc, term_conv)?;
    let pre = g.add_rows(lanes, dec_bias)?;
    let act = g.tanh(pre);
    let energies = g.matvec(act, p.w_score)?;
    let alignment = g.softmax(energies, 0)?;
    let context = g.vecmat(alignment, enc_out)?;
    Ok((context, alignment))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{flatten, write_back};
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn constant_energies_give_uniform_alignment() {
        let mut rng = StdRng::seed_from_u64(30);
        let mut p = AttentionParams::<f64>::init(3, 2, 4, 2, 3, &mut rng);
        // zero projections make every energy equal to w_score . tanh(bias)
        for (name, t) in p.fields_mut() {
            if name != "bias" && name != "w_score" {
                t.fill(0.0);
            }
        }
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let dec = g.constant(uniform_tensor::<f64, _>(&[3], &mut rng));
        let enc = g.constant(uniform_tensor::<f64, _>(&[5, 2], &mut rng));
        let prev = uniform_alignment(&mut g, 5);
        let (_, align) = location_attention_step(&mut g, &b, dec, enc, prev).unwrap();
        for &a in g.value(align).data() {
            assert!((a - 0.2).abs() <= 1e-12);
        }
    }

    #[test]
    fn near_one_hot_alignment_selects_that_frame() {
        let mut rng = StdRng::seed_from_u64(31);
        let p = AttentionParams::<f64>::init(3, 2, 4, 2, 3, &mut rng);
        let enc_t = Tensor::new(vec![3, 2], vec![1.0, -1.0, 5.0, 7.0, -2.0, 0.5]).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let enc = g.constant(enc_t.clone());
        // force the alignment directly through the softmax by spiking
        // one energy: emulate with a large-gap alignment input to the
        // context computation
        let onehot = g.constant(Tensor::new(vec![3], vec![0.0, 1.0, 0.0]).unwrap());
        let ctx = g.vecmat(onehot, enc).unwrap();
        assert_eq!(g.value(ctx).data(), enc_t.row(1));
        let _ = b;
    }

    #[test]
    fn alignment_sums_to_one() {
        let mut rng = StdRng::seed_from_u64(32);
        let p = AttentionParams::<f64>::init(3, 2, 4, 2, 3, &mut rng);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let dec = g.constant(uniform_tensor::<f64, _>(&[3], &mut rng));
        let enc = g.constant(uniform_tensor::<f64, _>(&[7, 2], &mut rng));
        let prev = uniform_alignment(&mut g, 7);
        let (_, align) = location_attention_step(&mut g, &b, dec, enc, prev).unwrap();
        let sum: f64 = g.value(align).data().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
        assert!(g.value(align).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn alignment_length_mismatch_is_error() {
        let mut rng = StdRng::seed_from_u64(33);
        let p = AttentionParams::<f64>::init(3, 2, 4, 2, 3, &mut rng);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let dec = g.constant(Tensor::zeros(&[3]));
        let enc = g.constant(Tensor::zeros(&[5, 2]));
        let prev = uniform_alignment(&mut g, 4);
        assert!(location_attention_step(&mut g, &b, dec, enc, prev).is_err());
    }

    #[test]
    fn gradients_through_conv_path_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(34);
        let p = AttentionParams::<f64>::init(3, 2, 4, 2, 3, &mut rng);
        let decv = uniform_tensor::<f64, _>(&[3], &mut rng);
        let encv = uniform_tensor::<f64, _>(&[5, 2], &mut rng);
        let prevv = Tensor::new(vec![5], vec![0.1, 0.3, 0.2, 0.25, 0.15]).unwrap();

        let eval = |p: &AttentionParams<f64>, want_grads: bool| {
            let mut g = Graph::new();
            let b = p.bind(&mut g, true);
            let dec = g.constant(decv.clone());
            let enc = g.constant(encv.clone());
            let prev = g.constant(prevv.clone());
            let (ctx, align) = location_attention_step(&mut g, &b, dec, enc, prev).unwrap();
            let s1 = g.sum_all(ctx);
            // weight the alignment so its gradient is not annihilated
            // by the sum-to-one constraint
            let widx = g.constant(Tensor::new(vec![5], vec![0.5, -1.0, 2.0, 0.25, -0.75]).unwrap());
            let weighted = g.mul(align, widx).unwrap();
            let s2 = g.sum_all(weighted);
            let loss = g.add(s1, s2).unwrap();
            if !want_grads {
                return (g.value(loss).item(), Vec::new());
            }
            g.backward(loss).unwrap();
            let ids = [b.conv_kernel, b.w_dec, b.w_enc, b.w_conv, b.bias, b.w_score];
            let mut grads = Vec::new();
            for id in ids {
                grads.extend_from_slice(g.grad(id).unwrap().data());
            }
            (g.value(loss).item(), grads)
        };

        let (_, analytic) = eval(&p, true);
        let mut flat = flatten(&p.fields());
        let mut probe = p.clone();
        let err = finite_diff_check(&mut flat, &analytic, 1e-4, crate::tensor::FD_ATOL_F64, None, |vals| {
            write_back(&mut probe.fields_mut(), vals);
            eval(&probe, false).0
        });
        assert!(err < 1e-6, "max rel err {err}");
    }
}
