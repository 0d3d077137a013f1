//! Monte-Carlo BER/BLER estimation over the AWGN channel and reference curves.

mod crc;
mod reference;

use std::io::Write;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use crc::{crc_attach, crc_bitflip_decode, crc_check, CrcConfig, CrcStatus, CRC_BITS};
pub use reference::{moving_average, normal_approximation, q_function, uncoded_bpsk_ber};

use crate::blocks::{awgn, ebno_to_sigma, hard_decision, BitBlock, LlrTensor, SimRng, SymbolBlock};
use crate::error::{Error, Result};
use crate::models::TurboAutoencoder;

/// Blocks simulated between stopping-rule checks.
pub const EVAL_BATCH: usize = 1000;

/// Anything that maps `k` bits to `n` real symbols and back to bit LLRs.
pub trait Codec {
    fn k(&self) -> usize;
    fn n(&self) -> usize;
    fn encode(&self, u: &BitBlock) -> Result<SymbolBlock>;
    fn decode(&self, y: &SymbolBlock) -> Result<LlrTensor>;
}

/// A trained autoencoder, optionally decoded with a non-default iteration count.
pub struct IterativeCodec<'a, M: ?Sized> {
    pub model: &'a M,
    pub iterations: Option<usize>,
}

impl<'a, M: TurboAutoencoder + ?Sized> IterativeCodec<'a, M> {
    pub fn new(model: &'a M) -> Self {
        Self {
            model,
            iterations: None,
        }
    }

    pub fn with_iterations(model: &'a M, iterations: usize) -> Self {
        Self {
            model,
            iterations: Some(iterations),
        }
    }
}

impl<M: TurboAutoencoder + ?Sized> Codec for IterativeCodec<'_, M> {
    fn k(&self) -> usize {
        self.model.k()
    }
    fn n(&self) -> usize {
        self.model.n()
    }
    fn encode(&self, u: &BitBlock) -> Result<SymbolBlock> {
        self.model.encode(u)
    }
    fn decode(&self, y: &SymbolBlock) -> Result<LlrTensor> {
        self.model.decode(y, self.iterations)
    }
}

/// The identity code: `x = 2u − 1`, `l = 2y/σ²` up to a positive factor.
#[derive(Clone, Copy, Debug)]
pub struct UncodedBpsk {
    pub k: usize,
}

impl Codec for UncodedBpsk {
    fn k(&self) -> usize {
        self.k
    }
    fn n(&self) -> usize {
        self.k
    }
    fn encode(&self, u: &BitBlock) -> Result<SymbolBlock> {
        SymbolBlock::new(self.k, u.data().iter().map(|&b| 2.0 * b as f32 - 1.0).collect())
    }
    fn decode(&self, y: &SymbolBlock) -> Result<LlrTensor> {
        LlrTensor::new(crate::tensor::Tensor::from_vec([y.batch(), self.k, 1], y.data().to_vec())?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub min_block_errors: u64,
    pub max_blocks: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_block_errors: 100,
            max_blocks: 1_000_000,
        }
    }
}

impl StopRule {
    /// Exactly `blocks` blocks regardless of the error count.
    pub fn fixed(blocks: u64) -> Self {
        Self {
            min_block_errors: u64::MAX,
            max_blocks: blocks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub ebno_db: f64,
    pub bits_sent: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub blocks_sent: u64,
    pub block_errors: u64,
    pub bler: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub stop: StopRule,
    pub seed: u64,
    /// Information bits per channel symbol, the rate behind every Eb/N0 value.
    pub rate: f64,
    pub crc: Option<CrcConfig>,
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "ebno_db",
    "bits_sent",
    "bit_errors",
    "ber",
    "blocks_sent",
    "block_errors",
    "bler",
    "seed",
];

impl EvalReport {
    /// Writes the CSV; `reference = Some((k, n))` appends the uncoded-BPSK BER and
    /// the normal-approximation BLER of an `(n, k)` code.
    pub fn write_csv<W: Write>(&self, mut w: W, reference: Option<(usize, usize)>) -> Result<()> {
        let mut header = REPORT_COLUMNS.join(",");
        if reference.is_some() {
            header.push_str(",uncoded_bpsk_ber,normal_approx_bler");
        }
        writeln!(w, "{header}")?;
        for r in &self.rows {
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.ebno_db, r.bits_sent, r.bit_errors, r.ber, r.blocks_sent, r.block_errors, r.bler, self.seed
            )?;
            if let Some((k, n)) = reference {
                write!(
                    w,
                    ",{},{}",
                    uncoded_bpsk_ber(r.ebno_db),
                    normal_approximation(k, n, r.ebno_db)?
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv(&self, reference: Option<(usize, usize)>) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, reference)?;
        Ok(String::from_utf8(buf).expect("CSV is ASCII"))
    }
}

/// Simulates blocks at each Eb/N0 until `stop` is met. Each SNR point uses its own
/// stream of the `seed` generator, so points are independent and reproducible.
/// With `crc`, the codec carries `info_len` information bits plus the CRC and
/// decoding uses the bit-flip search; Eb/N0 is then per information bit.
pub fn monte_carlo(
    codec: &dyn Codec,
    ebno_db: &[f64],
    stop: StopRule,
    crc: Option<&CrcConfig>,
    seed: u64,
) -> Result<EvalReport> {
    if ebno_db.is_empty() {
        return Err(Error::Empty("no SNR points to evaluate".into()));
    }
    if stop.max_blocks == 0 {
        return Err(Error::Config("max_blocks must be positive".into()));
    }
    if let Some(cfg) = crc {
        cfg.validate()?;
        if cfg.k() != codec.k() {
            return Err(Error::Config(format!(
                "CRC with {} info bits needs k = {}, codec has k = {}",
                cfg.info_len,
                cfg.k(),
                codec.k()
            )));
        }
    }
    let info_len = crc.map_or(codec.k(), |c| c.info_len);
    let rate = info_len as f64 / codec.n() as f64;
    let mut rows = Vec::with_capacity(ebno_db.len());
    for (point, &snr) in ebno_db.iter().enumerate() {
        let sigma = ebno_to_sigma(snr, rate)?;
        let mut rng = SimRng::seed_from_u64(seed);
        rng.set_stream(point as u64);
        let mut row = EvalRow {
            ebno_db: snr,
            bits_sent: 0,
            bit_errors: 0,
            ber: 0.0,
            blocks_sent: 0,
            block_errors: 0,
            bler: 0.0,
        };
        while row.block_errors < stop.min_block_errors && row.blocks_sent < stop.max_blocks {
            let batch = (stop.max_blocks - row.blocks_sent).min(EVAL_BATCH as u64) as usize;
            let info = BitBlock::random(batch, info_len, &mut rng);
            let u = match crc {
                Some(cfg) => crc_attach(&info, cfg)?,
                None => info.clone(),
            };
            let x = codec.encode(&u)?;
            let y = awgn(&x, sigma, &mut rng)?;
            let l = codec.decode(&y)?;
            let decided = match crc {
                Some(cfg) => crc_bitflip_decode(&l, cfg)?.0,
                None => hard_decision(&l)?,
            };
            let (bits, blocks) = info.count_errors(&decided)?;
            row.bit_errors += bits;
            row.block_errors += blocks;
            row.bits_sent += (batch * info_len) as u64;
            row.blocks_sent += batch as u64;
        }
        row.ber = row.bit_errors as f64 / row.bits_sent as f64;
        row.bler = row.block_errors as f64 / row.blocks_sent as f64;
        rows.push(row);
    }
    Ok(EvalReport {
        rows,
        stop,
        seed,
        rate,
        crc: crc.copied(),
    })
}

/// Bisection on Eb/N0 for the point where the BER crosses `target`. Every probe
/// reuses `seed`, so the probes share bits and noise shapes.
pub fn snr_at_target_ber(
    codec: &dyn Codec,
    target_ber: f64,
    bracket: (f64, f64),
    tol_db: f64,
    stop: StopRule,
    seed: u64,
) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) || !(tol_db > 0.0) || !(target_ber > 0.0 && target_ber < 1.0) {
        return Err(Error::Domain(format!(
            "bad search setup: bracket ({lo}, {hi}) dB, tolerance {tol_db} dB, target {target_ber}"
        )));
    }
    let ber_at = |snr: f64| -> Result<f64> { Ok(monte_carlo(codec, &[snr], stop, None, seed)?.rows[0].ber) };
    let (lo_ber, hi_ber) = (ber_at(lo)?, ber_at(hi)?);
    if !(lo_ber >= target_ber && hi_ber <= target_ber) {
        return Err(Error::NotBracketed {
            target: target_ber,
            lo_db: lo,
            lo_ber,
            hi_db: hi,
            hi_ber,
        });
    }
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        if ber_at(mid)? > target_ber {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
