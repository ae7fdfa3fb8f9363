//! Language-model training over sentence token sequences.

use super::optim::Adam;
use super::TrainError;
use crate::model::rnnlm::{lm_sequence_loss, RnnLm};
use crate::tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Trains the character LM with per-sentence updates, reshuffling
/// each epoch. Returns the mean loss per epoch.
pub fn train_rnnlm(
    lm: &mut RnnLm<f32>,
    sentences: &[Vec<u32>],
    epochs: usize,
    learning_rate: f64,
    grad_clip: f64,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    assert!(!sentences.is_empty(), "language model needs sentences");
    let n_params = lm.visit().len();
    let mut opt = Adam::new(learning_rate, n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for &i in &order {
            let mut g = Graph::new();
            let bound = lm.bind(&mut g, true);
            let loss = lm_sequence_loss(&mut g, &bound, &sentences[i])?;
            let loss_value = g.value(loss).item() as f64;
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: 0,
                    batch_id: format!("lm sentence {i}"),
                });
            }
            g.backward(loss).map_err(crate::model::ModelError::from)?;

            let ids: Vec<crate::tensor::NodeId> = {
                let mut v = vec![bound.embed];
                v.extend([
                    bound.cell.w_in,
                    bound.cell.b_in,
                    bound.cell.w_forget,
                    bound.cell.b_forget,
                    bound.cell.w_out,
                    bound.cell.b_out,
                    bound.cell.w_cell,
                    bound.cell.b_cell,
                ]);
                v.push(bound.w_out);
                v.push(bound.b_out);
                v
            };
            let mut grads: Vec<Option<Tensor<f32>>> =
                ids.iter().map(|&id| g.grad(id).cloned()).collect();

            let mut sq = 0.0f64;
            for grad in grads.iter().flatten() {
                for &v in grad.data() {
                    sq += (v as f64) * (v as f64);
                }
            }
            let norm = sq.sqrt();
            if norm > grad_clip {
                let scale = (grad_clip / norm) as f32;
                for grad in grads.iter_mut().flatten() {
                    for v in grad.data_mut() {
                        *v *= scale;
                    }
                }
            }
            for (pi, (grad, (_, param))) in
                grads.into_iter().zip(lm.visit_mut()).enumerate()
            {
                if let Some(grad) = grad {
                    if grad.data().iter().any(|&v| v != 0.0) {
                        opt.update(pi, param, &grad);
                    }
                }
            }
            total += loss_value;
        }
        epoch_losses.push(total / order.len() as f64);
    }
    Ok(epoch_losses)
}
