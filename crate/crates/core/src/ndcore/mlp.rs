use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, dimension, Result};
use crate::ndcore::tape::{Tape, Var};
use crate::ndcore::tensor::{matmul_raw, Tensor};

/// One affine layer; `weight` is `[in, out]` so a batch multiplies on the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Fully connected network with ReLU between layers and raw logits out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Dense>,
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        contract!(!layers.is_empty(), "model needs at least one layer");
        for (i, l) in layers.iter().enumerate() {
            dimension!(
                l.weight.shape().len() == 2 && l.bias.shape() == [l.fan_out()],
                "layer {i}: weight {:?} with bias {:?}",
                l.weight.shape(),
                l.bias.shape()
            );
        }
        for (i, pair) in layers.windows(2).enumerate() {
            dimension!(
                pair[0].fan_out() == pair[1].fan_in(),
                "layer {i} emits {} but layer {} takes {}",
                pair[0].fan_out(),
                i + 1,
                pair[1].fan_in()
            );
        }
        let mut model = Self { layers };
        model.for_each_param_mut(|p| p.set_requires_grad(true));
        Ok(model)
    }

    /// Xavier-uniform weights, zero biases. `widths` lists every layer width,
    /// input first, e.g. `[2, 64, 64, 64, 2]`.
    pub fn xavier<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        contract!(widths.len() >= 2, "need input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Ok(Dense {
                    weight: Tensor::new(vec![fan_in, fan_out], data)?,
                    bias: Tensor::zeros(&[fan_out]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    /// Parameters in a fixed order: w0, b0, w1, b1, ...
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        for p in self.params_mut() {
            f(p);
        }
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param_mut(Tensor::zero_grad);
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Graph-free forward pass producing `[B, C]` logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        dimension!(
            x.shape().len() == 2 && x.cols() == self.input_width(),
            "model takes [B, {}], got {:?}",
            self.input_width(),
            x.shape()
        );
        let n = x.rows();
        let mut h = x.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (k, m) = (l.fan_in(), l.fan_out());
            h = matmul_raw(&h, l.weight.data(), n, k, m);
            for row in h.chunks_mut(m) {
                for (v, b) in row.iter_mut().zip(l.bias.data()) {
                    *v += b;
                    if i != last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        Tensor::new(vec![n, self.num_classes()], h)
    }

    /// Registers every parameter as a leaf on `tape`, in [`Self::params`] order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.leaf(p)).collect()
    }

    /// Recorded forward pass using parameter leaves from [`Self::bind`].
    pub fn forward_on(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        contract!(
            params.len() == 2 * self.layers.len(),
            "expected {} bound parameters, got {}",
            2 * self.layers.len(),
            params.len()
        );
        let xv = tape.value(x);
        dimension!(
            xv.shape().len() == 2 && xv.cols() == self.input_width(),
            "model takes [B, {}], got {:?}",
            self.input_width(),
            xv.shape()
        );
        let mut h = x;
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            h = tape.matmul(h, params[2 * i])?;
            h = tape.add_bias(h, params[2 * i + 1])?;
            if i != last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Copies gradients of the last backward pass on `tape` into the parameters.
    pub fn accumulate_grads(&mut self, tape: &Tape, params: &[Var]) -> Result<()> {
        contract!(
            params.len() == 2 * self.layers.len(),
            "parameter binding does not match model"
        );
        for (p, v) in self.params_mut().into_iter().zip(params) {
            if let Some(g) = tape.grad(*v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
