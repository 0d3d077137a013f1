use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    Architecture, BoundNet, ComponentNet, ComponentNetConfig, NetArch, PassCounter,
    TurboAutoencoder,
};
use crate::autograd::{self, PowerStats, Var};
use crate::blocks::{make_interleaver, BitBlock, InterleaveMode, InterleaverSpec};
use crate::error::{Error, Result};
use crate::ste;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SerialConfig {
    pub k: usize,
    /// Message feature count `F`.
    pub features: usize,
    /// Feature count `F_c` of the coded sequence between the encoders.
    pub coded_features: usize,
    pub net: NetArch,
    pub iterations: usize,
    pub weight_sharing: bool,
    pub binarize_coded: bool,
    pub binarize_symbols: bool,
    pub interleaver_mode: InterleaveMode,
    pub interleaver_seed: u64,
}

impl Default for SerialConfig {
    fn default() -> Self {
        Self {
            k: 64,
            features: 10,
            coded_features: 10,
            net: NetArch::default(),
            iterations: 6,
            weight_sharing: false,
            binarize_coded: true,
            binarize_symbols: false,
            interleaver_mode: InterleaveMode::Block,
            interleaver_seed: 0,
        }
    }
}

impl SerialConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.k < 2 {
            return Err(Error::Config(format!("block length k = {} is below 2", self.k)));
        }
        if self.features == 0 || self.coded_features == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "features, coded_features and iterations must be at least 1".into(),
            ));
        }
        if self.interleaver_mode == InterleaveMode::Flattened && self.features != self.coded_features {
            return Err(Error::Config(format!(
                "flattened interleaving needs F = F_c, got F = {} and F_c = {}",
                self.features, self.coded_features
            )));
        }
        Ok(())
    }

    fn interleaver_len(&self) -> usize {
        match self.interleaver_mode {
            InterleaveMode::Block => self.k,
            InterleaveMode::Flattened => self.k * self.coded_features,
        }
    }
}

/// Outer encoder, binarizer, interleaver and inner encoder; the inner decoder alone
/// sees the channel.
#[derive(Clone, Debug)]
pub struct SerialModel {
    config: SerialConfig,
    outer_enc: ComponentNet,
    inner_enc: ComponentNet,
    inner_dec: Vec<ComponentNet>,
    outer_dec: Vec<ComponentNet>,
    interleaver: InterleaverSpec,
    calibration: Option<Vec<PowerStats>>,
    passes: PassCounter,
}

impl SerialModel {
    pub fn new<R: Rng + ?Sized>(config: SerialConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [outer, inner] = Self::encoder_configs(&config);
        let outer_enc = ComponentNet::new(outer, rng)?;
        let inner_enc = ComponentNet::new(inner, rng)?;
        let (inner_cfgs, outer_cfgs) = Self::decoder_configs(&config);
        let inner_dec = inner_cfgs
            .into_iter()
            .map(|c| ComponentNet::new(c, rng))
            .collect::<Result<_>>()?;
        let outer_dec = outer_cfgs
            .into_iter()
            .map(|c| ComponentNet::new(c, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            interleaver: make_interleaver(config.interleaver_seed, config.interleaver_len())?,
            config,
            outer_enc,
            inner_enc,
            inner_dec,
            outer_dec,
            calibration: None,
            passes: PassCounter::default(),
        })
    }

    pub fn encoder_configs(config: &SerialConfig) -> [ComponentNetConfig; 2] {
        [
            ComponentNetConfig {
                in_features: 1,
                output_features: config.coded_features,
                arch: config.net,
            },
            ComponentNetConfig {
                in_features: config.coded_features,
                output_features: 2,
                arch: config.net,
            },
        ]
    }

    /// Inner decoder: (2 observed streams + F a-priori) → F. Outer decoder:
    /// F → F coded-sequence totals + 1 information-bit total; the last
    /// per-iteration outer decoder emits only the information-bit total.
    pub fn decoder_configs(config: &SerialConfig) -> (Vec<ComponentNetConfig>, Vec<ComponentNetConfig>) {
        let f = config.features;
        let sets = if config.weight_sharing { 1 } else { config.iterations };
        let inner = (0..sets)
            .map(|_| ComponentNetConfig {
                in_features: 2 + f,
                output_features: f,
                arch: config.net,
            })
            .collect();
        let outer = (0..sets)
            .map(|it| ComponentNetConfig {
                in_features: f,
                output_features: if !config.weight_sharing && it + 1 == sets { 1 } else { f + 1 },
                arch: config.net,
            })
            .collect();
        (inner, outer)
    }

    pub fn from_parts(
        config: SerialConfig,
        encoders: Vec<ComponentNet>,
        decoders: Vec<ComponentNet>,
        calibration: Option<Vec<PowerStats>>,
    ) -> Result<Self> {
        config.validate()?;
        let want_enc = Self::encoder_configs(&config).to_vec();
        let got_enc: Vec<_> = encoders.iter().map(|n| *n.config()).collect();
        if got_enc != want_enc {
            return Err(Error::Shape(format!(
                "encoder networks {got_enc:?} do not match configuration {want_enc:?}"
            )));
        }
        let (inner_cfgs, outer_cfgs) = Self::decoder_configs(&config);
        let want_dec: Vec<_> = inner_cfgs.iter().chain(&outer_cfgs).copied().collect();
        let got_dec: Vec<_> = decoders.iter().map(|n| *n.config()).collect();
        if got_dec != want_dec {
            return Err(Error::Shape(format!(
                "decoder networks {got_dec:?} do not match configuration {want_dec:?}"
            )));
        }
        let mut encoders = encoders.into_iter();
        let mut decoders = decoders;
        let outer_dec = decoders.split_off(inner_cfgs.len());
        Ok(Self {
            interleaver: make_interleaver(config.interleaver_seed, config.interleaver_len())?,
            outer_enc: encoders.next().expect("two encoders"),
            inner_enc: encoders.next().expect("two encoders"),
            inner_dec: decoders,
            outer_dec,
            config,
            calibration,
            passes: PassCounter::default(),
        })
    }

    pub fn config(&self) -> &SerialConfig {
        &self.config
    }

    pub fn interleaver(&self) -> &InterleaverSpec {
        &self.interleaver
    }

    fn code_sequence(&self, u: &BitBlock, enc: &[BoundNet]) -> Result<Var> {
        if u.k() != self.config.k {
            return Err(Error::Shape(format!(
                "model encodes {}-bit blocks, got {}",
                self.config.k,
                u.k()
            )));
        }
        let c_real = enc[0].apply(&Var::constant(u.to_antipodal()))?;
        self.passes.add_encoder();
        let c = if self.config.binarize_coded {
            ste::binarize(&c_real)
        } else {
            c_real
        };
        self.interleaver.interleave_var(&c, self.config.interleaver_mode)
    }

    /// The interleaved coded sequence `π(c)` that feeds the inner encoder.
    pub fn interleaved_code(&self, u: &BitBlock) -> Result<Tensor> {
        let enc = super::bind_all(&self.encoder_nets(), false);
        Ok(self.code_sequence(u, &enc)?.value().clone())
    }

    fn set_index(&self, iteration: usize) -> usize {
        if self.config.weight_sharing {
            0
        } else {
            iteration
        }
    }
}

impl TurboAutoencoder for SerialModel {
    fn architecture(&self) -> Architecture {
        Architecture::Serial
    }

    fn k(&self) -> usize {
        self.config.k
    }

    fn binarize_symbols(&self) -> bool {
        self.config.binarize_symbols
    }

    fn default_iterations(&self) -> usize {
        self.config.iterations
    }

    fn passes(&self) -> &PassCounter {
        &self.passes
    }

    fn calibration(&self) -> Option<&[PowerStats]> {
        self.calibration.as_deref()
    }

    fn set_calibration(&mut self, stats: Vec<PowerStats>) {
        self.calibration = Some(stats);
    }

    fn encoder_nets(&self) -> Vec<&ComponentNet> {
        vec![&self.outer_enc, &self.inner_enc]
    }

    fn encoder_nets_mut(&mut self) -> Vec<&mut ComponentNet> {
        vec![&mut self.outer_enc, &mut self.inner_enc]
    }

    fn decoder_nets(&self) -> Vec<&ComponentNet> {
        self.inner_dec.iter().chain(&self.outer_dec).collect()
    }

    fn decoder_nets_mut(&mut self) -> Vec<&mut ComponentNet> {
        self.inner_dec
            .iter_mut()
            .chain(self.outer_dec.iter_mut())
            .collect()
    }

    fn raw_encode(&self, u: &BitBlock, enc: &[BoundNet]) -> Result<Vec<Var>> {
        let c_pi = self.code_sequence(u, enc)?;
        let x = enc[1].apply(&c_pi)?;
        self.passes.add_encoder();
        Ok(vec![x])
    }

    fn join_symbols(&self, groups: &[Var]) -> Result<Var> {
        groups
            .first()
            .cloned()
            .ok_or_else(|| Error::Empty("no symbol group".into()))
    }

    fn forward_decode(&self, y: &Var, dec: &[BoundNet], iterations: usize) -> Result<Var> {
        if iterations == 0 {
            return Err(Error::Config("decoder needs at least one iteration".into()));
        }
        if !self.config.weight_sharing && iterations != self.config.iterations {
            return Err(Error::Config(format!(
                "model has weights for {} iterations, {} requested",
                self.config.iterations, iterations
            )));
        }
        let [batch, k, streams] = y.dims();
        if k != self.config.k || streams != 2 {
            return Err(Error::Shape(format!(
                "decoder expects (batch, {}, 2) observations, got {:?}",
                self.config.k,
                y.dims()
            )));
        }
        let f = self.config.features;
        let mode = self.config.interleaver_mode;
        let pi = &self.interleaver;
        let inner_sets = self.inner_dec.len();
        let mut apriori_pi = Var::constant(Tensor::zeros([batch, k, f]));
        for it in 0..iterations {
            let set = self.set_index(it);
            let total_pi = dec[set].apply(&autograd::concat_features(&[y, &apriori_pi])?)?;
            self.passes.add_decoder();
            let ext_pi = autograd::sub(&total_pi, &apriori_pi)?;
            let l_c = pi.deinterleave_var(&ext_pi, mode)?;
            // The outer decoder sees only messages about the coded sequence.
            let out = dec[inner_sets + set].apply(&l_c)?;
            self.passes.add_decoder();
            if it + 1 == iterations {
                let width = out.dims()[2];
                return autograd::slice_features(&out, width - 1, 1);
            }
            let total_c = autograd::slice_features(&out, 0, f)?;
            let ext_c = autograd::sub(&total_c, &l_c)?;
            apriori_pi = pi.interleave_var(&ext_c, mode)?;
        }
        unreachable!("loop returns on the last iteration")
    }

    fn set_block_length(&mut self, k: usize) -> Result<()> {
        let mut config = self.config.clone();
        config.k = k;
        config.validate()?;
        self.interleaver = make_interleaver(config.interleaver_seed, config.interleaver_len())?;
        self.config = config;
        self.calibration = None;
        Ok(())
    }
}
