use super::layers::{Layer, LayerGrad};
use super::Tensor;
use crate::error::Result;

/// A plain feed-forward stack.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients, aligned with `Network::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    /// Flattened `(weight, bias)` slices of every parameterised layer, in the
    /// same order as [`Network::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .filter(|g| !g.weight.is_empty() || !g.bias.is_empty())
            .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weight.iter().chain(&g.bias))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut current = x.clone();
        for layer in &self.layers {
            current = layer.forward(&current)?;
        }
        Ok(current)
    }

    /// Forward pass keeping every intermediate activation; element 0 is the
    /// input, the last element is the network output.
    pub fn forward_trace(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(trace.last().expect("trace starts non-empty"))?;
            trace.push(next);
        }
        Ok(trace)
    }

    /// Backpropagates `grad_output` (dLoss/dOutput) through a recorded trace.
    pub fn backward(&self, trace: &[Tensor], grad_output: Tensor) -> Gradients {
        assert_eq!(trace.len(), self.layers.len() + 1, "trace does not belong to this network");
        let mut grads = vec![LayerGrad::default(); self.layers.len()];
        let mut upstream = grad_output;
        let first_param = self.layers.iter().position(|l| l.params().is_some()).unwrap_or(0);
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let need_input = idx > first_param;
            let (d_input, g) = layer.backward(&trace[idx], &trace[idx + 1], &upstream, need_input);
            grads[idx] = g;
            match d_input {
                Some(d) => upstream = d,
                None => break,
            }
        }
        Gradients { layers: grads }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}
