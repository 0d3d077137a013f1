use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    Architecture, BoundNet, ComponentNet, ComponentNetConfig, NetArch, PassCounter,
    TurboAutoencoder,
};
use crate::autograd::{self, PowerStats, Var};
use crate::blocks::{make_interleaver, BitBlock, InterleaveMode, InterleaverSpec, LlrTensor, SymbolBlock};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub k: usize,
    /// Message feature count `F`.
    pub features: usize,
    pub net: NetArch,
    pub iterations: usize,
    pub weight_sharing: bool,
    pub binarize_symbols: bool,
    pub interleaver_seed: u64,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        Self {
            k: 64,
            features: 10,
            net: NetArch::default(),
            iterations: 6,
            weight_sharing: false,
            binarize_symbols: false,
            interleaver_seed: 0,
        }
    }
}

impl ParallelConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.k < 2 {
            return Err(Error::Config(format!("block length k = {} is below 2", self.k)));
        }
        if self.features == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "features and iterations must both be at least 1".into(),
            ));
        }
        if self.weight_sharing && self.features != 1 {
            return Err(Error::Config(format!(
                "weight sharing requires F = 1 messages, got F = {}",
                self.features
            )));
        }
        Ok(())
    }

    /// Weight-sharing configuration used by Gaussian pre-training.
    pub fn shared(k: usize, net: NetArch, inference_iterations: usize, interleaver_seed: u64) -> Self {
        Self {
            k,
            features: 1,
            net,
            iterations: inference_iterations,
            weight_sharing: true,
            binarize_symbols: false,
            interleaver_seed,
        }
    }
}

/// Two encoders on `u` and `π(u)`, two decoders exchanging extrinsic messages.
#[derive(Clone, Debug)]
pub struct ParallelModel {
    config: ParallelConfig,
    enc: Vec<ComponentNet>,
    dec1: Vec<ComponentNet>,
    dec2: Vec<ComponentNet>,
    interleaver: InterleaverSpec,
    calibration: Option<Vec<PowerStats>>,
    passes: PassCounter,
}

/// Decoder state between iterations (weight-sharing models).
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelDecodeState {
    /// A-priori input of decoder 1 for the next iteration.
    pub apriori1: Tensor,
    /// Deinterleaved total information of decoder 2 after the last iteration.
    pub total: Option<Tensor>,
    pub iterations_done: usize,
}

impl ParallelModel {
    pub fn new<R: Rng + ?Sized>(config: ParallelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let interleaver = make_interleaver(config.interleaver_seed, config.k)?;
        let enc_cfg = ComponentNetConfig {
            in_features: 1,
            output_features: 1,
            arch: config.net,
        };
        let enc = vec![
            ComponentNet::new(enc_cfg, rng)?,
            ComponentNet::new(enc_cfg, rng)?,
        ];
        let mut dec1 = Vec::new();
        let mut dec2 = Vec::new();
        for cfg in Self::decoder_configs(&config, 1) {
            dec1.push(ComponentNet::new(cfg, rng)?);
        }
        for cfg in Self::decoder_configs(&config, 2) {
            dec2.push(ComponentNet::new(cfg, rng)?);
        }
        Ok(Self {
            config,
            enc,
            dec1,
            dec2,
            interleaver,
            calibration: None,
            passes: PassCounter::default(),
        })
    }

    /// Expected decoder network configurations for one component.
    pub fn decoder_configs(config: &ParallelConfig, component: usize) -> Vec<ComponentNetConfig> {
        let f = config.features;
        let sets = if config.weight_sharing { 1 } else { config.iterations };
        (0..sets)
            .map(|it| ComponentNetConfig {
                in_features: 1 + f,
                output_features: if component == 2 && it + 1 == sets { 1 } else { f },
                arch: config.net,
            })
            .collect()
    }

    /// Reassembles a model from its parts, validating every network shape.
    pub fn from_parts(
        config: ParallelConfig,
        enc: Vec<ComponentNet>,
        dec1: Vec<ComponentNet>,
        dec2: Vec<ComponentNet>,
        calibration: Option<Vec<PowerStats>>,
    ) -> Result<Self> {
        config.validate()?;
        let enc_cfg = ComponentNetConfig {
            in_features: 1,
            output_features: 1,
            arch: config.net,
        };
        let check = |nets: &[ComponentNet], want: Vec<ComponentNetConfig>, what: &str| {
            let got: Vec<ComponentNetConfig> = nets.iter().map(|n| *n.config()).collect();
            if got != want {
                return Err(Error::Shape(format!(
                    "{what} networks {got:?} do not match configuration {want:?}"
                )));
            }
            Ok(())
        };
        check(&enc, vec![enc_cfg; 2], "encoder")?;
        check(&dec1, Self::decoder_configs(&config, 1), "decoder-1")?;
        check(&dec2, Self::decoder_configs(&config, 2), "decoder-2")?;
        Ok(Self {
            interleaver: make_interleaver(config.interleaver_seed, config.k)?,
            config,
            enc,
            dec1,
            dec2,
            calibration,
            passes: PassCounter::default(),
        })
    }

    pub fn config(&self) -> &ParallelConfig {
        &self.config
    }

    pub fn interleaver(&self) -> &InterleaverSpec {
        &self.interleaver
    }

    pub fn set_inference_iterations(&mut self, iterations: usize) -> Result<()> {
        if !self.config.weight_sharing {
            return Err(Error::Config(
                "per-iteration weights fix the iteration count".into(),
            ));
        }
        if iterations == 0 {
            return Err(Error::Config("iteration count must be at least 1".into()));
        }
        self.config.iterations = iterations;
        Ok(())
    }

    /// Encoder network of component 1 or 2.
    pub fn component_encoder(&self, component: usize) -> &ComponentNet {
        &self.enc[component - 1]
    }

    pub fn component_encoder_mut(&mut self, component: usize) -> &mut ComponentNet {
        &mut self.enc[component - 1]
    }

    /// Shared decoder network of component 1 or 2.
    pub fn component_decoder(&self, component: usize) -> &ComponentNet {
        match component {
            1 => &self.dec1[0],
            _ => &self.dec2[0],
        }
    }

    pub fn component_decoder_mut(&mut self, component: usize) -> &mut ComponentNet {
        match component {
            1 => &mut self.dec1[0],
            _ => &mut self.dec2[0],
        }
    }

    pub fn calibration_stats(&self) -> Option<&[PowerStats]> {
        self.calibration.as_deref()
    }

    fn dec_index(&self, component: usize, iteration: usize) -> usize {
        let it = if self.config.weight_sharing { 0 } else { iteration };
        if component == 1 {
            it
        } else {
            self.dec1.len() + it
        }
    }

    /// One full iteration: decoder 1, interleave, decoder 2, deinterleave.
    /// Returns the next a-priori input of decoder 1 (absent on the last
    /// per-iteration-weights step) and the deinterleaved total of decoder 2.
    fn iteration(
        &self,
        y1: &Var,
        y2: &Var,
        apriori1: &Var,
        dec: &[BoundNet],
        iteration: usize,
        last: bool,
    ) -> Result<(Option<Var>, Var)> {
        let pi = &self.interleaver;
        let total1 = dec[self.dec_index(1, iteration)].apply(&autograd::concat_features(&[y1, apriori1])?)?;
        self.passes.add_decoder();
        let ext1 = autograd::sub(&total1, apriori1)?;
        let apriori2 = pi.interleave_var(&ext1, InterleaveMode::Block)?;
        let total2 = dec[self.dec_index(2, iteration)].apply(&autograd::concat_features(&[y2, &apriori2])?)?;
        self.passes.add_decoder();
        let total = pi.deinterleave_var(&total2, InterleaveMode::Block)?;
        if last && !self.config.weight_sharing {
            return Ok((None, total));
        }
        let ext2 = autograd::sub(&total2, &apriori2)?;
        let next = pi.deinterleave_var(&ext2, InterleaveMode::Block)?;
        Ok((Some(next), total))
    }

    fn split_streams(y: &Var) -> Result<(Var, Var)> {
        Ok((autograd::slice_features(y, 0, 1)?, autograd::slice_features(y, 1, 1)?))
    }

    /// Decodes the two observed halves: `y1` aligned with `u`, `y2_pi` with `π(u)`.
    pub fn decode_halves(
        &self,
        y1: &SymbolBlock,
        y2_pi: &SymbolBlock,
        iterations: usize,
    ) -> Result<LlrTensor> {
        if y1.n() != self.config.k || y2_pi.n() != self.config.k || y1.batch() != y2_pi.batch() {
            return Err(Error::Shape(format!(
                "decoder halves must both be {} symbols per block",
                self.config.k
            )));
        }
        let streams = Tensor::concat_features(&[&y1.to_streams(1)?, &y2_pi.to_streams(1)?])?;
        let dec = super::bind_all(&self.decoder_nets(), false);
        let logits = self.forward_decode(&Var::constant(streams), &dec, iterations)?;
        LlrTensor::new(logits.value().clone())
    }

    /// Decoder state before the first iteration: no a-priori information.
    pub fn initial_state(&self, batch: usize) -> ParallelDecodeState {
        ParallelDecodeState {
            apriori1: Tensor::zeros([batch, self.config.k, self.config.features]),
            total: None,
            iterations_done: 0,
        }
    }

    /// Advances a weight-sharing decoder by `count` iterations.
    pub fn advance(
        &self,
        y: &SymbolBlock,
        state: ParallelDecodeState,
        count: usize,
    ) -> Result<ParallelDecodeState> {
        if !self.config.weight_sharing {
            return Err(Error::Config(
                "stepwise decoding needs shared decoder weights".into(),
            ));
        }
        let streams = Var::constant(y.to_streams(2)?);
        let (y1, y2) = Self::split_streams(&streams)?;
        let dec = super::bind_all(&self.decoder_nets(), false);
        let mut apriori = Var::constant(state.apriori1);
        let mut total = state.total.map(Var::constant);
        for _ in 0..count {
            let (next, t) = self.iteration(&y1, &y2, &apriori, &dec, 0, false)?;
            apriori = next.expect("shared decoders always emit extrinsic messages");
            total = Some(t);
        }
        Ok(ParallelDecodeState {
            apriori1: apriori.value().clone(),
            total: total.map(|t| t.value().clone()),
            iterations_done: state.iterations_done + count,
        })
    }
}

impl TurboAutoencoder for ParallelModel {
    fn architecture(&self) -> Architecture {
        Architecture::Parallel
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
        self.enc.iter().collect()
    }

    fn encoder_nets_mut(&mut self) -> Vec<&mut ComponentNet> {
        self.enc.iter_mut().collect()
    }

    fn decoder_nets(&self) -> Vec<&ComponentNet> {
        self.dec1.iter().chain(&self.dec2).collect()
    }

    fn decoder_nets_mut(&mut self) -> Vec<&mut ComponentNet> {
        self.dec1.iter_mut().chain(self.dec2.iter_mut()).collect()
    }

    fn raw_encode(&self, u: &BitBlock, enc: &[BoundNet]) -> Result<Vec<Var>> {
        if u.k() != self.config.k {
            return Err(Error::Shape(format!(
                "model encodes {}-bit blocks, got {}",
                self.config.k,
                u.k()
            )));
        }
        let bits = u.to_antipodal();
        let bits_pi = self.interleaver.interleave(&bits, InterleaveMode::Block)?;
        let x1 = enc[0].apply(&Var::constant(bits))?;
        let x2 = enc[1].apply(&Var::constant(bits_pi))?;
        self.passes.add_encoder();
        self.passes.add_encoder();
        Ok(vec![x1, x2])
    }

    fn join_symbols(&self, groups: &[Var]) -> Result<Var> {
        autograd::concat_features(&groups.iter().collect::<Vec<_>>())
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
        let (y1, y2) = Self::split_streams(y)?;
        let mut apriori = Var::constant(Tensor::zeros([batch, k, self.config.features]));
        for it in 0..iterations {
            let last = it + 1 == iterations;
            let (next, total) = self.iteration(&y1, &y2, &apriori, dec, it, last)?;
            if last {
                return Ok(total);
            }
            apriori = next.expect("non-final iterations emit extrinsic messages");
        }
        unreachable!("loop returns on the last iteration")
    }

    fn set_block_length(&mut self, k: usize) -> Result<()> {
        let interleaver = make_interleaver(self.config.interleaver_seed, k)?;
        self.config.k = k;
        self.interleaver = interleaver;
        self.calibration = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{awgn, ebno_to_sigma, SimRng};
    use rand::SeedableRng;

    fn small(weight_sharing: bool) -> ParallelConfig {
        ParallelConfig {
            k: 8,
            features: if weight_sharing { 1 } else { 3 },
            net: NetArch {
                conv_layers: 2,
                filters: 6,
                kernel_size: 3,
                activation: super::super::Activation::Elu,
            },
            iterations: 3,
            weight_sharing,
            binarize_symbols: false,
            interleaver_seed: 4,
        }
    }

    fn model(cfg: ParallelConfig) -> ParallelModel {
        let mut m = ParallelModel::new(cfg, &mut SimRng::seed_from_u64(1)).unwrap();
        m.calibrate(256, 2).unwrap();
        m
    }

    #[test]
    fn encode_is_deterministic_with_unit_power() {
        let m = model(small(false));
        let u = BitBlock::random(512, 8, &mut SimRng::seed_from_u64(3));
        let x = m.encode(&u).unwrap();
        assert_eq!(x, m.encode(&u).unwrap());
        assert_eq!(x.n(), 16);
        // Frozen statistics: close to unit power on fresh data, exact on the batch path.
        assert!((x.second_moment() - 1.0).abs() < 0.05);
        let enc = super::super::bind_all(&m.encoder_nets(), false);
        let (xb, _) = m
            .forward_encode(&u, &enc, super::super::Normalization::Batch)
            .unwrap();
        super::super::check_unit_power(xb.value(), false).unwrap();
    }

    #[test]
    fn binarized_symbols_are_bpsk() {
        let mut cfg = small(false);
        cfg.binarize_symbols = true;
        let m = model(cfg);
        let u = BitBlock::random(16, 8, &mut SimRng::seed_from_u64(3));
        let x = m.encode(&u).unwrap();
        assert!(x.data().iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn untrained_decoder_output_is_finite() {
        for sharing in [false, true] {
            let m = model(small(sharing));
            let u = BitBlock::random(5, 8, &mut SimRng::seed_from_u64(3));
            let y = awgn(&m.encode(&u).unwrap(), ebno_to_sigma(1.0, 0.5).unwrap(), &mut SimRng::seed_from_u64(4)).unwrap();
            let l = m.decode(&y, None).unwrap();
            assert_eq!(l.tensor().dims(), [5, 8, 1]);
            assert!(l.tensor().is_finite());
        }
    }

    #[test]
    fn shared_decoding_is_a_state_transition() {
        let m = model(small(true));
        let u = BitBlock::random(4, 8, &mut SimRng::seed_from_u64(5));
        let y = awgn(&m.encode(&u).unwrap(), 0.8, &mut SimRng::seed_from_u64(6)).unwrap();
        let n_then_one = m
            .advance(&y, m.advance(&y, m.initial_state(4), 4).unwrap(), 1)
            .unwrap();
        let direct = m.advance(&y, m.initial_state(4), 5).unwrap();
        assert_eq!(n_then_one, direct);
        let via_decode = m.decode(&y, Some(5)).unwrap();
        assert_eq!(via_decode.tensor(), direct.total.as_ref().unwrap());
    }

    #[test]
    fn pass_counts_per_iteration() {
        let m = model(small(false));
        m.passes().reset();
        let y = SymbolBlock::new(16, vec![0.1; 32]).unwrap();
        m.decode(&y, None).unwrap();
        assert_eq!(m.passes().decoder(), 6);
    }

    #[test]
    fn halves_match_full_codeword_decoding() {
        let m = model(small(false));
        let u = BitBlock::random(3, 8, &mut SimRng::seed_from_u64(8));
        let y = awgn(&m.encode(&u).unwrap(), 0.5, &mut SimRng::seed_from_u64(9)).unwrap();
        let halves = y.to_streams(2).unwrap();
        let y1 = SymbolBlock::from_streams(&halves.slice_features(0, 1).unwrap());
        let y2 = SymbolBlock::from_streams(&halves.slice_features(1, 1).unwrap());
        assert_eq!(m.decode_halves(&y1, &y2, 3).unwrap(), m.decode(&y, None).unwrap());
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = small(true);
        cfg.features = 2;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let m = model(small(false));
        let y = Var::constant(Tensor::zeros([1, 8, 2]));
        let dec = super::super::bind_all(&m.decoder_nets(), false);
        assert!(m.forward_decode(&y, &dec, 0).is_err());
        assert!(m.forward_decode(&y, &dec, 2).is_err());
    }

    #[test]
    fn block_length_transfer_keeps_weight_shapes() {
        let mut m = model(small(false));
        let before: Vec<[usize; 3]> = m
            .encoder_nets()
            .into_iter()
            .chain(m.decoder_nets())
            .flat_map(|n| n.params().into_iter().map(|p| p.dims()))
            .collect();
        m.set_block_length(16).unwrap();
        m.calibrate(128, 1).unwrap();
        let after: Vec<[usize; 3]> = m
            .encoder_nets()
            .into_iter()
            .chain(m.decoder_nets())
            .flat_map(|n| n.params().into_iter().map(|p| p.dims()))
            .collect();
        assert_eq!(before, after);
        let u = BitBlock::random(2, 16, &mut SimRng::seed_from_u64(1));
        let l = m.decode(&m.encode(&u).unwrap(), None).unwrap();
        assert_eq!(l.tensor().dims(), [2, 16, 1]);
    }
}
