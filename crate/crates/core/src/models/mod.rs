//! Parallel and serial Turbo-autoencoder assemblies.
//!
//! Both architectures are rate 1/2: a `k`-bit block becomes `n = 2k` real symbols,
//! carried internally as a `(batch, k, 2)` tensor of two symbol streams. The
//! [`TurboAutoencoder`] trait exposes the pieces the training loops need (raw encoder
//! outputs, the iterative decoder as a graph, parameter access) and derives the
//! inference-time `encode`/`decode` from them.

mod component;
mod parallel;
mod serial;

use std::cell::Cell;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use component::{Activation, BoundNet, ComponentNet, ComponentNetConfig, NetArch};
pub use parallel::{ParallelConfig, ParallelDecodeState, ParallelModel};
pub use serial::{SerialConfig, SerialModel};

use crate::autograd::{self, PowerStats, Var};
use crate::blocks::{BitBlock, LlrTensor, SimRng, SymbolBlock};
use crate::error::{Error, Result};
use crate::ste;
use crate::tensor::Tensor;

/// Blocks used to freeze the inference normalization statistics.
pub const CALIBRATION_BLOCKS: usize = 1 << 14;
const CALIBRATION_CHUNK: usize = 1024;
const INFERENCE_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Parallel,
    Serial,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Parallel => "parallel",
            Architecture::Serial => "serial",
        })
    }
}

/// Which statistics the power normalization uses.
#[derive(Clone, Copy, Debug)]
pub enum Normalization<'a> {
    /// Statistics of the current batch, differentiated through.
    Batch,
    /// Frozen per-group statistics.
    Frozen(&'a [PowerStats]),
}

/// Counts component-network invocations.
#[derive(Debug, Default)]
pub struct PassCounter {
    encoder: Cell<u64>,
    decoder: Cell<u64>,
}

impl Clone for PassCounter {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl PassCounter {
    pub fn encoder(&self) -> u64 {
        self.encoder.get()
    }

    pub fn decoder(&self) -> u64 {
        self.decoder.get()
    }

    pub fn reset(&self) {
        self.encoder.set(0);
        self.decoder.set(0);
    }

    pub(crate) fn add_encoder(&self) {
        self.encoder.set(self.encoder.get() + 1);
    }

    pub(crate) fn add_decoder(&self) {
        self.decoder.set(self.decoder.get() + 1);
    }
}

pub fn bind_all(nets: &[&ComponentNet], trainable: bool) -> Vec<BoundNet> {
    nets.iter().map(|n| n.bind(trainable)).collect()
}

pub trait TurboAutoencoder {
    fn architecture(&self) -> Architecture;
    fn k(&self) -> usize;

    fn n(&self) -> usize {
        2 * self.k()
    }

    fn rate(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }

    fn binarize_symbols(&self) -> bool;
    fn default_iterations(&self) -> usize;
    fn passes(&self) -> &PassCounter;

    fn calibration(&self) -> Option<&[PowerStats]>;
    fn set_calibration(&mut self, stats: Vec<PowerStats>);

    fn encoder_nets(&self) -> Vec<&ComponentNet>;
    fn encoder_nets_mut(&mut self) -> Vec<&mut ComponentNet>;
    fn decoder_nets(&self) -> Vec<&ComponentNet>;
    fn decoder_nets_mut(&mut self) -> Vec<&mut ComponentNet>;

    /// Encoder outputs before binarization/normalization, one tensor per
    /// normalization group.
    fn raw_encode(&self, u: &BitBlock, enc: &[BoundNet]) -> Result<Vec<Var>>;

    /// Joins the processed groups into the `(batch, k, 2)` symbol streams.
    fn join_symbols(&self, groups: &[Var]) -> Result<Var>;

    /// Iterative decoder on `(batch, k, 2)` channel observations; returns the final
    /// information-bit logits `(batch, k, 1)`.
    fn forward_decode(&self, y: &Var, dec: &[BoundNet], iterations: usize) -> Result<Var>;

    /// Regenerates the interleaver for a new block length; weights are untouched.
    fn set_block_length(&mut self, k: usize) -> Result<()>;

    /// Differentiable encoder. Returns the symbol streams and the statistics used
    /// (empty when the symbols are binarized).
    fn forward_encode(
        &self,
        u: &BitBlock,
        enc: &[BoundNet],
        norm: Normalization<'_>,
    ) -> Result<(Var, Vec<PowerStats>)> {
        let raw = self.raw_encode(u, enc)?;
        if self.binarize_symbols() {
            let groups: Vec<Var> = raw.iter().map(ste::binarize).collect();
            return Ok((self.join_symbols(&groups)?, Vec::new()));
        }
        let mut stats = Vec::with_capacity(raw.len());
        let mut groups = Vec::with_capacity(raw.len());
        for (i, g) in raw.iter().enumerate() {
            match norm {
                Normalization::Batch => {
                    let (out, s) = autograd::normalize_batch(g)?;
                    groups.push(out);
                    stats.push(s);
                }
                Normalization::Frozen(frozen) => {
                    let s = *frozen.get(i).ok_or_else(|| {
                        Error::Shape(format!("no frozen statistics for symbol group {i}"))
                    })?;
                    groups.push(autograd::normalize_frozen(g, s));
                    stats.push(s);
                }
            }
        }
        Ok((self.join_symbols(&groups)?, stats))
    }

    /// Freezes the normalization statistics from `blocks` random blocks.
    fn calibrate(&mut self, blocks: usize, seed: u64) -> Result<()> {
        if self.binarize_symbols() {
            self.set_calibration(Vec::new());
            return Ok(());
        }
        let mut rng = SimRng::seed_from_u64(seed);
        let enc = bind_all(&self.encoder_nets(), false);
        let mut sums: Vec<(f64, f64, f64)> = Vec::new();
        let mut remaining = blocks.max(2);
        while remaining > 0 {
            let batch = remaining.min(CALIBRATION_CHUNK);
            remaining -= batch;
            let u = BitBlock::random(batch, self.k(), &mut rng);
            let raw = self.raw_encode(&u, &enc)?;
            sums.resize(raw.len(), (0.0, 0.0, 0.0));
            for (acc, g) in sums.iter_mut().zip(&raw) {
                for &v in g.value().data() {
                    acc.0 += v as f64;
                    acc.1 += (v as f64) * (v as f64);
                }
                acc.2 += g.value().numel() as f64;
            }
        }
        let stats = sums
            .into_iter()
            .map(|(s, sq, n)| {
                let mean = s / n;
                let var = sq / n - mean * mean;
                if !(var > 0.0) {
                    return Err(Error::Degenerate(
                        "encoder output is constant over the calibration batch".into(),
                    ));
                }
                Ok(PowerStats {
                    mean,
                    std: var.sqrt(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.set_calibration(stats);
        Ok(())
    }

    /// Deterministic per-block encoding with the frozen statistics.
    fn encode(&self, u: &BitBlock) -> Result<SymbolBlock> {
        if u.k() != self.k() {
            return Err(Error::Shape(format!(
                "model encodes {}-bit blocks, got {}",
                self.k(),
                u.k()
            )));
        }
        let frozen = match (self.binarize_symbols(), self.calibration()) {
            (true, _) => &[][..],
            (false, Some(stats)) => stats,
            (false, None) => {
                return Err(Error::Config(
                    "model has no frozen normalization statistics; calibrate first".into(),
                ))
            }
        };
        let enc = bind_all(&self.encoder_nets(), false);
        let mut data = Vec::with_capacity(u.batch() * self.n());
        for chunk in u.data().chunks(INFERENCE_CHUNK * self.k()) {
            let part = BitBlock::new(self.k(), chunk.to_vec())?;
            let (x, _) = self.forward_encode(&part, &enc, Normalization::Frozen(frozen))?;
            data.extend_from_slice(SymbolBlock::from_streams(x.value()).data());
        }
        SymbolBlock::new(self.n(), data)
    }

    /// Iterative decoding of observed codewords; `None` uses the model default.
    fn decode(&self, y: &SymbolBlock, iterations: Option<usize>) -> Result<LlrTensor> {
        if y.n() != self.n() {
            return Err(Error::Shape(format!(
                "model decodes length-{} codewords, got {}",
                self.n(),
                y.n()
            )));
        }
        let iterations = iterations.unwrap_or_else(|| self.default_iterations());
        let dec = bind_all(&self.decoder_nets(), false);
        let mut data = Vec::with_capacity(y.batch() * self.k());
        for chunk in y.data().chunks(INFERENCE_CHUNK * self.n()) {
            let part = SymbolBlock::new(self.n(), chunk.to_vec())?;
            let streams = Var::constant(part.to_streams(2)?);
            let logits = self.forward_decode(&streams, &dec, iterations)?;
            data.extend_from_slice(logits.value().data());
        }
        LlrTensor::new(Tensor::from_vec([y.batch(), self.k(), 1], data)?)
    }
}

/// Either architecture, as restored from a checkpoint.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Parallel(ParallelModel),
    Serial(SerialModel),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Parallel($m) => $e,
            AnyModel::Serial($m) => $e,
        }
    };
}

impl TurboAutoencoder for AnyModel {
    fn architecture(&self) -> Architecture {
        delegate!(self, m => m.architecture())
    }
    fn k(&self) -> usize {
        delegate!(self, m => m.k())
    }
    fn binarize_symbols(&self) -> bool {
        delegate!(self, m => m.binarize_symbols())
    }
    fn default_iterations(&self) -> usize {
        delegate!(self, m => m.default_iterations())
    }
    fn passes(&self) -> &PassCounter {
        delegate!(self, m => m.passes())
    }
    fn calibration(&self) -> Option<&[PowerStats]> {
        delegate!(self, m => m.calibration())
    }
    fn set_calibration(&mut self, stats: Vec<PowerStats>) {
        delegate!(self, m => m.set_calibration(stats))
    }
    fn encoder_nets(&self) -> Vec<&ComponentNet> {
        delegate!(self, m => m.encoder_nets())
    }
    fn encoder_nets_mut(&mut self) -> Vec<&mut ComponentNet> {
        delegate!(self, m => m.encoder_nets_mut())
    }
    fn decoder_nets(&self) -> Vec<&ComponentNet> {
        delegate!(self, m => m.decoder_nets())
    }
    fn decoder_nets_mut(&mut self) -> Vec<&mut ComponentNet> {
        delegate!(self, m => m.decoder_nets_mut())
    }
    fn raw_encode(&self, u: &BitBlock, enc: &[BoundNet]) -> Result<Vec<Var>> {
        delegate!(self, m => m.raw_encode(u, enc))
    }
    fn join_symbols(&self, groups: &[Var]) -> Result<Var> {
        delegate!(self, m => m.join_symbols(groups))
    }
    fn forward_decode(&self, y: &Var, dec: &[BoundNet], iterations: usize) -> Result<Var> {
        delegate!(self, m => m.forward_decode(y, dec, iterations))
    }
    fn set_block_length(&mut self, k: usize) -> Result<()> {
        delegate!(self, m => m.set_block_length(k))
    }
}

impl From<ParallelModel> for AnyModel {
    fn from(m: ParallelModel) -> Self {
        AnyModel::Parallel(m)
    }
}

impl From<SerialModel> for AnyModel {
    fn from(m: SerialModel) -> Self {
        AnyModel::Serial(m)
    }
}

/// Checks the unit-second-moment contract on a batch of symbol streams.
pub fn check_unit_power(x: &Tensor, binarized: bool) -> Result<()> {
    if binarized {
        if x.data().iter().all(|&v| v == 1.0 || v == -1.0) {
            return Ok(());
        }
        return Err(Error::Domain("binarized symbols outside {-1, +1}".into()));
    }
    let second = x.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.numel() as f64;
    if (second - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "symbol batch second moment {second} violates the unit-energy constraint"
        )));
    }
    Ok(())
}
