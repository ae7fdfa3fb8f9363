//! Four-layer pyramidal encoder. Adjacent output pairs are
//! concatenated after layers 1 and 2, so time shrinks by 4x overall:
//! the output length is `ceil(ceil(t/2)/2)` regardless of content.

use super::bilstm::{projection_bilstm_layer, BiLstmParams, BoundBiLstm};
use crate::tensor::{Graph, NodeId, Real, Result};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct PyramidParams<T> {
    pub layers: Vec<BiLstmParams<T>>,
}

impl<T: Real> PyramidParams<T> {
    /// Layer input dims are `[input_dim, 2P, 2P, P]`: the doubling
    /// after layers 1 and 2 comes from pair concatenation.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, proj_dim: usize, rng: &mut R) -> Self {
        let dims = [input_dim, 2 * proj_dim, 2 * proj_dim, proj_dim];
        PyramidParams {
            layers: dims
                .iter()
                .map(|&d| BiLstmParams::init(d, hidden_dim, proj_dim, rng))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].forward.input_dim
    }

    pub fn proj_dim(&self) -> usize {
        self.layers[0].proj_dim()
    }

    pub fn fields(&self) -> Vec<(String, &crate::tensor::Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (n, t) in layer.fields() {
                out.push((format!("l{i}.{n}"), t));
            }
        }
        out
    }

    pub fn fields_mut(&mut self) -> Vec<(String, &mut crate::tensor::Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (n, t) in layer.fields_mut() {
                out.push((format!("l{i}.{n}"), t));
            }
        }
        out
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundPyramid {
        BoundPyramid {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundPyramid {
    pub layers: Vec<BoundBiLstm>,
}

/// Encoder output length as a function of input length alone.
pub fn enc_output_len(input_len: usize) -> usize {
    input_len.div_ceil(2).div_ceil(2)
}

/// Encodes a `[t x d]` feature sequence to `[enc_output_len(t) x P]`.
pub fn pyramidal_encode<T: Real>(
    g: &mut Graph<T>,
    p: &BoundPyramid,
    feats: NodeId,
) -> Result<NodeId> {
    let l1 = projection_bilstm_layer(g, &p.layers[0], feats)?;
    let s1 = g.pair_concat_rows(l1)?;
    let l2 = projection_bilstm_layer(g, &p.layers[1], s1)?;
    let s2 = g.pair_concat_rows(l2)?;
    let l3 = projection_bilstm_layer(g, &p.layers[2], s2)?;
    projection_bilstm_layer(g, &p.layers[3], l3)
}
