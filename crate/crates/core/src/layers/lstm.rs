//! Single LSTM cell with sigmoid gates and tanh candidate.

use super::{uniform_tensor, Fields, FieldsMut};
use crate::tensor::{Graph, NodeId, Real, Result, Tensor, TensorError};
use rand::Rng;

/// Gate weights are `[(input_dim + hidden_dim) x hidden_dim]`; the
/// concatenated `[x; h]` vector multiplies each of them. Forget gate
/// biases initialize to 1.0 so memory is retained early in training.
#[derive(Debug, Clone)]
pub struct LstmCellParams<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_in: Tensor<T>,
    pub b_in: Tensor<T>,
    pub w_forget: Tensor<T>,
    pub b_forget: Tensor<T>,
    pub w_out: Tensor<T>,
    pub b_out: Tensor<T>,
    pub w_cell: Tensor<T>,
    pub b_cell: Tensor<T>,
}

impl<T: Real> LstmCellParams<T> {
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let g = [input_dim + hidden_dim, hidden_dim];
        LstmCellParams {
            input_dim,
            hidden_dim,
            w_in: uniform_tensor(&g, rng),
            b_in: uniform_tensor(&[hidden_dim], rng),
            w_forget: uniform_tensor(&g, rng),
            b_forget: Tensor::full(&[hidden_dim], T::one()),
            w_out: uniform_tensor(&g, rng),
            b_out: uniform_tensor(&[hidden_dim], rng),
            w_cell: uniform_tensor(&g, rng),
            b_cell: uniform_tensor(&[hidden_dim], rng),
        }
    }

    pub fn fields(&self) -> Fields<'_, T> {
        vec![
            ("w_in", &self.w_in),
            ("b_in", &self.b_in),
            ("w_forget", &self.w_forget),
            ("b_forget", &self.b_forget),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
            ("w_cell", &self.w_cell),
            ("b_cell", &self.b_cell),
        ]
    }

    pub fn fields_mut(&mut self) -> FieldsMut<'_, T> {
        vec![
            ("w_in", &mut self.w_in),
            ("b_in", &mut self.b_in),
            ("w_forget", &mut self.w_forget),
            ("b_forget", &mut self.b_forget),
            ("w_out", &mut self.w_out),
            ("b_out", &mut self.b_out),
            ("w_cell", &mut self.w_cell),
            ("b_cell", &mut self.b_cell),
        ]
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundLstmCell {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundLstmCell {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_in: put(&self.w_in),
            b_in: put(&self.b_in),
            w_forget: put(&self.w_forget),
            b_forget: put(&self.b_forget),
            w_out: put(&self.w_out),
            b_out: put(&self.b_out),
            w_cell: put(&self.w_cell),
            b_cell: put(&self.b_cell),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_in: NodeId,
    pub b_in: NodeId,
    pub w_forget: NodeId,
    pub b_forget: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
    pub w_cell: NodeId,
    pub b_cell: NodeId,
}

/// One recurrence step: returns the new hidden and cell states.
pub fn lstm_cell_step<T: Real>(
    g: &mut Graph<T>,
    p: &BoundLstmCell,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let xv = g.value(x);
    if xv.len() != p.input_dim {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_cell_step",
            lhs: xv.shape().to_vec(),
            rhs: vec![p.input_dim],
        });
    }
    let xh = g.concat(x, h)?;

    let gate = |g: &mut Graph<T>, w: NodeId, b: NodeId| -> Result<NodeId> {
        let lin = g.vecmat(xh, w)?;
        g.add(lin, b)
    };
    let pre_i = gate(g, p.w_in, p.b_in)?;
    let pre_f = gate(g, p.w_forget, p.b_forget)?;
    let pre_o = gate(g, p.w_out, p.b_out)?;
    let pre_g = gate(g, p.w_cell, p.b_cell)?;

    let i = g.sigmoid(pre_i);
    let f = g.sigmoid(pre_f);
    let o = g.sigmoid(pre_o);
    let cand = g.tanh(pre_g);

    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let c_act = g.tanh(c_new);
    let h_new = g.mul(o, c_act)?;
    Ok((h_new, c_new))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{flatten, write_back};
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn zero_state<T: Real>(g: &mut Graph<T>, h: usize) -> (NodeId, NodeId) {
        let hz = g.constant(Tensor::zeros(&[h]));
        let cz = g.constant(Tensor::zeros(&[h]));
        (hz, cz)
    }

    #[test]
    fn zero_params_zero_state_fixed_point() {
        let mut rng = StdRng::seed_from_u64(0);
        let mut p = LstmCellParams::<f64>::init(3, 4, &mut rng);
        for (_, t) in p.fields_mut() {
            t.fill(0.0);
        }
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[3]));
        let (h0, c0) = zero_state(&mut g, 4);
        let (h1, c1) = lstm_cell_step(&mut g, &b, x, h0, c0).unwrap();
        assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_keeps_cell() {
        let mut rng = StdRng::seed_from_u64(1);
        let mut p = LstmCellParams::<f64>::init(2, 3, &mut rng);
        for (_, t) in p.fields_mut() {
            t.fill(0.0);
        }
        // drive forget gate to 1 and input gate to 0
        p.b_forget.fill(50.0);
        p.b_in.fill(-50.0);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[2]));
        let h0 = g.constant(Tensor::zeros(&[3]));
        let c0 = g.constant(Tensor::new(vec![3], vec![0.7, -0.2, 1.5]).unwrap());
        let (_, c1) = lstm_cell_step(&mut g, &b, x, h0, c0).unwrap();
        for (a, b) in g.value(c1).data().iter().zip([0.7, -0.2, 1.5]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn cell_growth_bounded_by_one() {
        let mut rng = StdRng::seed_from_u64(2);
        let p = LstmCellParams::<f64>::init(3, 4, &mut rng);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = g.constant(Tensor::new(vec![3], vec![5.0, -3.0, 2.0]).unwrap());
        let h0 = g.constant(Tensor::zeros(&[4]));
        let c0 = g.constant(Tensor::new(vec![4], vec![2.0, -2.0, 0.5, 0.0]).unwrap());
        let (_, c1) = lstm_cell_step(&mut g, &b, x, h0, c0).unwrap();
        for (new, old) in g.value(c1).data().iter().zip(g.value(c0).data()) {
            assert!(new.abs() <= old.abs() + 1.0 + 1e-12);
        }
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let mut rng = StdRng::seed_from_u64(3);
        let p = LstmCellParams::<f64>::init(3, 4, &mut rng);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[5]));
        let (h0, c0) = zero_state(&mut g, 4);
        assert!(lstm_cell_step(&mut g, &b, x, h0, c0).is_err());
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(4);
        let mut p = LstmCellParams::<f64>::init(3, 4, &mut rng);
        let xv = uniform_tensor::<f64, _>(&[3], &mut rng);
        let cv = uniform_tensor::<f64, _>(&[4], &mut rng);

        let eval = |p: &LstmCellParams<f64>, want_grads: bool| {
            let mut g = Graph::new();
            let b = p.bind(&mut g, true);
            let x = g.constant(xv.clone());
            let h0 = g.constant(Tensor::zeros(&[4]));
            let c0 = g.constant(cv.clone());
            let (h1, c1) = lstm_cell_step(&mut g, &b, x, h0, c0).unwrap();
            let sh = g.sum_all(h1);
            let sc = g.sum_all(c1);
            let loss = g.add(sh, sc).unwrap();
            if !want_grads {
                return (g.value(loss).item(), Vec::new());
            }
            g.backward(loss).unwrap();
            let ids = [
                b.w_in, b.b_in, b.w_forget, b.b_forget, b.w_out, b.b_out, b.w_cell, b.b_cell,
            ];
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
        let _ = p.fields_mut();
    }
}
