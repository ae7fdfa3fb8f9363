//! Bidirectional LSTM layer with a linear projection of the
//! concatenated direction outputs.

use super::lstm::{lstm_cell_step, BoundLstmCell, LstmCellParams};
use super::{uniform_tensor, Fields, FieldsMut};
use crate::tensor::{Graph, NodeId, Real, Result, Tensor};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct BiLstmParams<T> {
    pub forward: LstmCellParams<T>,
    pub backward: LstmCellParams<T>,
    /// `[2H x P]`: rows 0..H take the forward hidden state, rows H..2H
    /// the backward one.
    pub w_proj: Tensor<T>,
    pub b_proj: Tensor<T>,
}

impl<T: Real> BiLstmParams<T> {
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, proj_dim: usize, rng: &mut R) -> Self {
        BiLstmParams {
            forward: LstmCellParams::init(input_dim, hidden_dim, rng),
            backward: LstmCellParams::init(input_dim, hidden_dim, rng),
            w_proj: uniform_tensor(&[2 * hidden_dim, proj_dim], rng),
            b_proj: uniform_tensor(&[proj_dim], rng),
        }
    }

    pub fn proj_dim(&self) -> usize {
        self.w_proj.cols()
    }

    pub fn fields(&self) -> Fields<'_, T> {
        let mut out: Fields<'_, T> = Vec::new();
        for (n, t) in self.forward.fields() {
            out.push((fwd_name(n), t));
        }
        for (n, t) in self.backward.fields() {
            out.push((bwd_name(n), t));
        }
        out.push(("w_proj", &self.w_proj));
        out.push(("b_proj", &self.b_proj));
        out
    }

    pub fn fields_mut(&mut self) -> FieldsMut<'_, T> {
        let mut out: FieldsMut<'_, T> = Vec::new();
        for (n, t) in self.forward.fields_mut() {
            out.push((fwd_name(n), t));
        }
        for (n, t) in self.backward.fields_mut() {
            out.push((bwd_name(n), t));
        }
        out.push(("w_proj", &mut self.w_proj));
        out.push(("b_proj", &mut self.b_proj));
        out
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundBiLstm {
        let forward = self.forward.bind(g, trainable);
        let backward = self.backward.bind(g, trainable);
        let (w_proj, b_proj) = if trainable {
            (g.leaf(self.w_proj.clone()), g.leaf(self.b_proj.clone()))
        } else {
            (
                g.constant(self.w_proj.clone()),
                g.constant(self.b_proj.clone()),
            )
        };
        BoundBiLstm {
            forward,
            backward,
            w_proj,
            b_proj,
        }
    }
}

fn fwd_name(n: &'static str) -> &'static str {
    match n {
        "w_in" => "fwd.w_in",
        "b_in" => "fwd.b_in",
        "w_forget" => "fwd.w_forget",
        "b_forget" => "fwd.b_forget",
        "w_out" => "fwd.w_out",
        "b_out" => "fwd.b_out",
        "w_cell" => "fwd.w_cell",
        "b_cell" => "fwd.b_cell",
        _ => unreachable!(),
    }
}

fn bwd_name(n: &'static str) -> &'static str {
    match n {
        "w_in" => "bwd.w_in",
        "b_in" => "bwd.b_in",
        "w_forget" => "bwd.w_forget",
        "b_forget" => "bwd.b_forget",
        "w_out" => "bwd.w_out",
        "b_out" => "bwd.b_out",
        "w_cell" => "bwd.w_cell",
        "b_cell" => "bwd.b_cell",
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundBiLstm {
    pub forward: BoundLstmCell,
    pub backward: BoundLstmCell,
    pub w_proj: NodeId,
    pub b_proj: NodeId,
}

/// Runs both directions over a `[t x input_dim]` sequence and projects
/// the concatenated hidden states to `[t x proj_dim]`.
pub fn projection_bilstm_layer<T: Real>(
    g: &mut Graph<T>,
    p: &BoundBiLstm,
    seq: NodeId,
) -> Result<NodeId> {
    let t_len = g.value(seq).rows();
    let hd = p.forward.hidden_dim;

    let mut h = g.constant(Tensor::zeros(&[hd]));
    let mut c = g.constant(Tensor::zeros(&[hd]));
    let mut fwd_h = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x = g.row(seq, t)?;
        let (h2, c2) = lstm_cell_step(g, &p.forward, x, h, c)?;
        fwd_h.push(h2);
        h = h2;
        c = c2;
    }

    let mut h = g.constant(Tensor::zeros(&[hd]));
    let mut c = g.constant(Tensor::zeros(&[hd]));
    let mut bwd_h = vec![NodeId(0); t_len];
    for t in (0..t_len).rev() {
        let x = g.row(seq, t)?;
        let (h2, c2) = lstm_cell_step(g, &p.backward, x, h, c)?;
        bwd_h[t] = h2;
        h = h2;
        c = c2;
    }

    let mut rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        rows.push(g.concat(fwd_h[t], bwd_h[t])?);
    }
    let stacked = g.stack_rows(&rows)?;
    let projected = g.matmul(stacked, p.w_proj)?;
    g.add_rows(projected, p.b_proj)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{flatten, write_back};
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn run(p: &BiLstmParams<f64>, seq: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let s = g.constant(seq.clone());
        let out = projection_bilstm_layer(&mut g, &b, s).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn single_frame_sequence_is_finite() {
        let mut rng = StdRng::seed_from_u64(10);
        let p = BiLstmParams::<f64>::init(3, 4, 5, &mut rng);
        let seq = uniform_tensor::<f64, _>(&[1, 3], &mut rng);
        let out = run(&p, &seq);
        assert_eq!(out.shape(), &[1, 5]);
        assert!(out.is_finite());
    }

    // Swapping the direction cells and the corresponding projection
    // row blocks turns a reversed input into the reversed output.
    #[test]
    fn reversal_under_weight_swap() {
        let mut rng = StdRng::seed_from_u64(11);
        let p = BiLstmParams::<f64>::init(3, 4, 5, &mut rng);
        let t_len = 6;
        let seq = uniform_tensor::<f64, _>(&[t_len, 3], &mut rng);

        let mut swapped = p.clone();
        std::mem::swap(&mut swapped.forward, &mut swapped.backward);
        let h = 4;
        let pcols = 5;
        let mut w = swapped.w_proj.clone();
        for r in 0..h {
            for j in 0..pcols {
                let a = p.w_proj.data()[r * pcols + j];
                let b = p.w_proj.data()[(h + r) * pcols + j];
                w.data_mut()[r * pcols + j] = b;
                w.data_mut()[(h + r) * pcols + j] = a;
            }
        }
        swapped.w_proj = w;

        let mut rev_rows: Vec<Vec<f64>> = (0..t_len).map(|t| seq.row(t).to_vec()).collect();
        rev_rows.reverse();
        let rev_seq = Tensor::from_rows(&rev_rows).unwrap();

        let out = run(&p, &seq);
        let out_swapped_rev = run(&swapped, &rev_seq);
        for t in 0..t_len {
            for j in 0..pcols {
                let a = out.row(t)[j];
                let b = out_swapped_rev.row(t_len - 1 - t)[j];
                assert!((a - b).abs() <= 1e-12, "t={t} j={j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(12);
        let p = BiLstmParams::<f64>::init(2, 3, 3, &mut rng);
        let seq = uniform_tensor::<f64, _>(&[4, 2], &mut rng);

        let eval = |p: &BiLstmParams<f64>, want_grads: bool| {
            let mut g = Graph::new();
            let b = p.bind(&mut g, true);
            let s = g.constant(seq.clone());
            let out = projection_bilstm_layer(&mut g, &b, s).unwrap();
            let loss = g.sum_all(out);
            if !want_grads {
                return (g.value(loss).item(), Vec::new());
            }
            g.backward(loss).unwrap();
            let mut ids = Vec::new();
            for cell in [&b.forward, &b.backward] {
                ids.extend_from_slice(&[
                    cell.w_in,
                    cell.b_in,
                    cell.w_forget,
                    cell.b_forget,
                    cell.w_out,
                    cell.b_out,
                    cell.w_cell,
                    cell.b_cell,
                ]);
            }
            ids.push(b.w_proj);
            ids.push(b.b_proj);
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
