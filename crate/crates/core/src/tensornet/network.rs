use super::layers::{build_layer, Layer, LayerSpec, Param};
use super::tensor::{Scalar, Tensor};
use super::{Mode, NetError};
use crate::util::Rng;

/// A chain of layers with a fixed per-sample input shape.
pub struct Sequential<S: Scalar> {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Box<dyn Layer<S>>>,
}

impl<S: Scalar> Sequential<S> {
    /// Builds the layers and checks that consecutive shapes are compatible.
    pub fn build(
        input_shape: Vec<usize>,
        specs: &[LayerSpec],
        rng: &mut Rng,
    ) -> Result<Self, NetError> {
        let layers = specs
            .iter()
            .map(|s| build_layer(s, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_layers(input_shape, layers)
    }

    pub fn from_layers(
        input_shape: Vec<usize>,
        layers: Vec<Box<dyn Layer<S>>>,
    ) -> Result<Self, NetError> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| {
                NetError::ShapeMismatch(format!("layer {i} ({:?}): {e}", layer.spec()))
            })?;
        }
        Ok(Self {
            input_shape,
            output_shape: shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec()).collect()
    }

    pub fn layers(&self) -> &[Box<dyn Layer<S>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer<S>>] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>, NetError> {
        match mode {
            Mode::Eval => self.infer(x),
            Mode::Train => {
                self.check_input(x)?;
                let mut h = x.clone();
                for layer in &mut self.layers {
                    h = layer.forward_train(&h)?;
                }
                check_finite(&h, "network output")?;
                Ok(h)
            }
        }
    }

    /// Eval-mode forward; safe to call concurrently on shared weights.
    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        check_finite(&h, "network output")?;
        Ok(h)
    }

    /// Back-propagates the loss gradient, filling every parameter gradient,
    /// and returns the gradient with respect to the input.
    pub fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|l| l.clear_cache());
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<(), NetError> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NetError::ShapeMismatch(format!(
                "network expects per-sample shape {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        check_finite(x, "network input")
    }
}

fn check_finite<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<(), NetError> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(NetError::NonFiniteValue(what.into()))
    }
}
