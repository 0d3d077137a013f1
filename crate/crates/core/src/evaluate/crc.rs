//! CRC-7 outer code with reliability-ordered bit-flip decoding.

use serde::{Deserialize, Serialize};

use crate::blocks::{hard_decision, BitBlock, LlrTensor};
use crate::error::{Error, Result};

pub const CRC_BITS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrcConfig {
    /// Generator including the leading term; `0x89` is `x⁷ + x³ + 1`.
    pub polynomial: u16,
    pub info_len: usize,
    /// Least-reliable positions considered by the flip search.
    pub flip_budget: usize,
}

impl Default for CrcConfig {
    fn default() -> Self {
        Self {
            polynomial: 0x89,
            info_len: 57,
            flip_budget: 16,
        }
    }
}

impl CrcConfig {
    pub fn for_block_length(k: usize) -> Result<Self> {
        if k <= CRC_BITS {
            return Err(Error::Config(format!("k = {k} leaves no room for a CRC-7")));
        }
        Ok(Self {
            info_len: k - CRC_BITS,
            ..Self::default()
        })
    }

    pub fn k(&self) -> usize {
        self.info_len + CRC_BITS
    }

    pub fn validate(&self) -> Result<()> {
        if self.polynomial >> CRC_BITS != 1 {
            return Err(Error::Config(format!(
                "CRC generator {:#x} is not of degree 7",
                self.polynomial
            )));
        }
        if self.info_len == 0 {
            return Err(Error::Config("CRC info_len must be positive".into()));
        }
        Ok(())
    }

    fn remainder(&self, bits: &[u8]) -> u16 {
        let mut reg: u16 = 0;
        for &b in bits.iter().chain(std::iter::repeat_n(&0u8, CRC_BITS)) {
            reg = (reg << 1) | b as u16;
            if reg >> CRC_BITS & 1 == 1 {
                reg ^= self.polynomial;
            }
        }
        reg
    }

    fn passes(&self, word: &[u8]) -> bool {
        let (info, parity) = word.split_at(self.info_len);
        let want = self.remainder(info);
        parity
            .iter()
            .enumerate()
            .all(|(i, &b)| (want >> (CRC_BITS - 1 - i) & 1) as u8 == b)
    }
}

/// Appends the remainder of `info · x⁷` modulo the generator to every block.
pub fn crc_attach(info: &BitBlock, cfg: &CrcConfig) -> Result<BitBlock> {
    cfg.validate()?;
    if info.k() != cfg.info_len {
        return Err(Error::Shape(format!(
            "CRC expects {}-bit messages, got {}",
            cfg.info_len,
            info.k()
        )));
    }
    let mut data = Vec::with_capacity(info.batch() * cfg.k());
    for row in info.rows() {
        let rem = cfg.remainder(row);
        data.extend_from_slice(row);
        data.extend((0..CRC_BITS).rev().map(|i| (rem >> i & 1) as u8));
    }
    BitBlock::new(cfg.k(), data)
}

/// Per-block CRC verdicts.
pub fn crc_check(words: &BitBlock, cfg: &CrcConfig) -> Result<Vec<bool>> {
    cfg.validate()?;
    if words.k() != cfg.k() {
        return Err(Error::Shape(format!(
            "CRC expects {}-bit words, got {}",
            cfg.k(),
            words.k()
        )));
    }
    Ok(words.rows().map(|w| cfg.passes(w)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrcStatus {
    Passed { flips: usize },
    Failed,
}

impl CrcStatus {
    pub fn passed(&self) -> bool {
        matches!(self, CrcStatus::Passed { .. })
    }
}

/// Hard decision followed by single, then pairwise, flips of the least-reliable
/// positions until the CRC passes. Failed blocks return the unflipped decision.
pub fn crc_bitflip_decode(l_u: &LlrTensor, cfg: &CrcConfig) -> Result<(BitBlock, Vec<CrcStatus>)> {
    cfg.validate()?;
    if l_u.k() != cfg.k() {
        return Err(Error::Shape(format!(
            "CRC decoder expects {}-bit words, got {}",
            cfg.k(),
            l_u.k()
        )));
    }
    let hard = hard_decision(l_u)?;
    let k = cfg.k();
    let mut info = Vec::with_capacity(hard.batch() * cfg.info_len);
    let mut status = Vec::with_capacity(hard.batch());
    for (b, row) in hard.rows().enumerate() {
        let llr = &l_u.tensor().data()[b * k..(b + 1) * k];
        let (word, s) = flip_search(row, llr, cfg);
        info.extend_from_slice(&word[..cfg.info_len]);
        status.push(s);
    }
    Ok((BitBlock::new(cfg.info_len, info)?, status))
}

fn flip_search(row: &[u8], llr: &[f32], cfg: &CrcConfig) -> (Vec<u8>, CrcStatus) {
    let mut word = row.to_vec();
    if cfg.passes(&word) {
        return (word, CrcStatus::Passed { flips: 0 });
    }
    let mut order: Vec<usize> = (0..word.len()).collect();
    order.sort_by(|&a, &b| llr[a].abs().total_cmp(&llr[b].abs()));
    order.truncate(cfg.flip_budget);
    for &i in &order {
        word[i] ^= 1;
        if cfg.passes(&word) {
            return (word, CrcStatus::Passed { flips: 1 });
        }
        word[i] ^= 1;
    }
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            word[i] ^= 1;
            word[j] ^= 1;
            if cfg.passes(&word) {
                return (word, CrcStatus::Passed { flips: 2 });
            }
            word[i] ^= 1;
            word[j] ^= 1;
        }
    }
    (word, CrcStatus::Failed)
}
