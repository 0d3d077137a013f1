//! Convolutional component networks shared by every encoder and decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, Gradients, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Tanh,
    Linear,
}

/// Hidden-layer shape of a component network; input and output widths are fixed by
/// the role the network plays in a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetArch {
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub activation: Activation,
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            conv_layers: 2,
            filters: 100,
            kernel_size: 5,
            activation: Activation::Elu,
        }
    }
}

impl NetArch {
    pub fn validate(&self) -> Result<()> {
        if self.conv_layers == 0 || self.filters == 0 {
            return Err(Error::Config(
                "component networks need at least one layer and one filter".into(),
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd for same-length padding, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentNetConfig {
    pub in_features: usize,
    pub output_features: usize,
    pub arch: NetArch,
}

/// `conv_layers` same-padded convolutions with activation, then a per-position linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentNet {
    config: ComponentNetConfig,
    // (weight, bias) pairs; the last pair is the pointwise head.
    layers: Vec<(Tensor, Tensor)>,
}

impl ComponentNet {
    pub fn new<R: Rng + ?Sized>(config: ComponentNetConfig, rng: &mut R) -> Result<Self> {
        config.arch.validate()?;
        if config.in_features == 0 || config.output_features == 0 {
            return Err(Error::Config("component network with zero features".into()));
        }
        let arch = config.arch;
        let mut layers = Vec::with_capacity(arch.conv_layers + 1);
        let mut width = config.in_features;
        for _ in 0..arch.conv_layers {
            layers.push(init_layer(arch.kernel_size, width, arch.filters, rng));
            width = arch.filters;
        }
        layers.push(init_layer(1, width, config.output_features, rng));
        Ok(Self { config, layers })
    }

    /// Rebuilds a network from stored parameters, checking every shape.
    pub fn from_params(config: ComponentNetConfig, params: Vec<Tensor>) -> Result<Self> {
        let mut shell = Self::zeroed(config)?;
        if params.len() != shell.layers.len() * 2 {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                shell.layers.len() * 2,
                params.len()
            )));
        }
        for (slot, p) in shell.params_mut().into_iter().zip(params) {
            if slot.dims() != p.dims() {
                return Err(Error::Shape(format!(
                    "parameter dims {:?}, expected {:?}",
                    p.dims(),
                    slot.dims()
                )));
            }
            *slot = p;
        }
        Ok(shell)
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeroed(config: ComponentNetConfig) -> Result<Self> {
        config.arch.validate()?;
        let arch = config.arch;
        let mut layers = Vec::new();
        let mut width = config.in_features;
        for _ in 0..arch.conv_layers {
            layers.push((
                Tensor::zeros([arch.kernel_size, width, arch.filters]),
                Tensor::zeros([1, 1, arch.filters]),
            ));
            width = arch.filters;
        }
        layers.push((
            Tensor::zeros([1, width, config.output_features]),
            Tensor::zeros([1, 1, config.output_features]),
        ));
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ComponentNetConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn bind(&self, trainable: bool) -> BoundNet {
        BoundNet {
            activation: self.config.arch.activation,
            in_features: self.config.in_features,
            vars: self
                .params()
                .into_iter()
                .map(|p| Var::leaf(p.clone(), trainable))
                .collect(),
        }
    }

    /// Inference-only application to a `(batch, length, in_features)` tensor.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self
            .bind(false)
            .apply(&Var::constant(input.clone()))?
            .value()
            .clone())
    }
}

fn init_layer<R: Rng + ?Sized>(
    kernel: usize,
    cin: usize,
    cout: usize,
    rng: &mut R,
) -> (Tensor, Tensor) {
    let bound = 1.0 / ((kernel * cin) as f32).sqrt();
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
    let w = Tensor::from_vec([kernel, cin, cout], draw(kernel * cin * cout)).expect("kernel dims");
    let b = Tensor::from_vec([1, 1, cout], draw(cout)).expect("bias dims");
    (w, b)
}

/// A component network whose parameters are graph leaves for one forward/backward pass.
pub struct BoundNet {
    activation: Activation,
    in_features: usize,
    vars: Vec<Var>,
}

impl BoundNet {
    pub fn apply(&self, input: &Var) -> Result<Var> {
        if input.dims()[2] != self.in_features {
            return Err(Error::Shape(format!(
                "component network expects {} input features, got {}",
                self.in_features,
                input.dims()[2]
            )));
        }
        let pairs = self.vars.len() / 2;
        let mut h = input.clone();
        for (i, wb) in self.vars.chunks_exact(2).enumerate() {
            h = autograd::conv1d(&h, &wb[0], &wb[1])?;
            if i + 1 < pairs {
                h = match self.activation {
                    Activation::Elu => autograd::elu(&h),
                    Activation::Tanh => autograd::tanh(&h),
                    Activation::Linear => h,
                };
            }
        }
        Ok(h)
    }

    /// Parameter gradients in [`ComponentNet::params`] order.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::SimRng;
    use rand::SeedableRng;

    fn config(in_features: usize, out: usize, layers: usize, filters: usize) -> ComponentNetConfig {
        ComponentNetConfig {
            in_features,
            output_features: out,
            arch: NetArch {
                conv_layers: layers,
                filters,
                kernel_size: 5,
                activation: Activation::Elu,
            },
        }
    }

    #[test]
    fn output_length_follows_input_length() {
        let net = ComponentNet::new(config(3, 2, 2, 8), &mut SimRng::seed_from_u64(0)).unwrap();
        for len in [1, 7, 16, 64, 128] {
            let out = net.apply(&Tensor::full([2, len, 3], 0.5)).unwrap();
            assert_eq!(out.dims(), [2, len, 2]);
        }
    }

    #[test]
    fn zero_weights_give_constant_output() {
        let mut net = ComponentNet::zeroed(config(2, 1, 2, 4)).unwrap();
        let head_bias = net.params_mut().pop().unwrap();
        head_bias.data_mut()[0] = 0.75;
        let input = Tensor::from_vec([1, 4, 2], vec![1.0, -2.0, 3.0, 0.5, -1.0, 9.0, 0.0, 2.0]).unwrap();
        let out = net.apply(&input).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn identity_kernel_reproduces_input_channel() {
        let cfg = ComponentNetConfig {
            in_features: 2,
            output_features: 1,
            arch: NetArch {
                conv_layers: 1,
                filters: 1,
                kernel_size: 3,
                activation: Activation::Linear,
            },
        };
        let mut net = ComponentNet::zeroed(cfg).unwrap();
        {
            let mut p = net.params_mut();
            // Centre tap of the kernel picks input feature 1.
            p[0].data_mut()[2 + 1] = 1.0;
            p[2].data_mut()[0] = 1.0;
        }
        let input = Tensor::from_vec([1, 3, 2], vec![0.0, 1.5, 0.0, -2.0, 0.0, 4.0]).unwrap();
        assert_eq!(net.apply(&input).unwrap().data(), &[1.5, -2.0, 4.0]);
    }

    #[test]
    fn feature_mismatch_is_a_shape_error() {
        let net = ComponentNet::new(config(3, 1, 1, 4), &mut SimRng::seed_from_u64(1)).unwrap();
        assert!(matches!(
            net.apply(&Tensor::zeros([1, 4, 2])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn even_kernels_are_rejected() {
        let mut cfg = config(1, 1, 1, 4);
        cfg.arch.kernel_size = 4;
        assert!(matches!(
            ComponentNet::new(cfg, &mut SimRng::seed_from_u64(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn from_params_round_trips() {
        let net = ComponentNet::new(config(2, 3, 2, 5), &mut SimRng::seed_from_u64(2)).unwrap();
        let rebuilt =
            ComponentNet::from_params(*net.config(), net.params().into_iter().cloned().collect()).unwrap();
        assert_eq!(rebuilt, net);
    }
}
