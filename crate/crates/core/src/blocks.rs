//! Bit, symbol and message containers plus the channel-level arithmetic that links
//! them: interleaving, AWGN, Eb/N0 conversion, power normalization, hard decisions
//! and the extrinsic rule.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, PowerStats, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random stream used throughout simulation and training.
pub type SimRng = ChaCha8Rng;

/// A batch of information bit vectors, row-major `batch × k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitBlock {
    k: usize,
    data: Vec<u8>,
}

impl BitBlock {
    pub fn new(k: usize, data: Vec<u8>) -> Result<Self> {
        if k == 0 || data.len() % k != 0 {
            return Err(Error::Shape(format!(
                "{} bits do not form blocks of length {k}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&b| b > 1) {
            return Err(Error::Domain(format!("bit value {bad} is not 0 or 1")));
        }
        Ok(Self { k, data })
    }

    pub fn random<R: Rng + ?Sized>(batch: usize, k: usize, rng: &mut R) -> Self {
        let data = (0..batch * k).map(|_| rng.random::<bool>() as u8).collect();
        Self { k, data }
    }

    pub fn zeros(batch: usize, k: usize) -> Self {
        Self {
            k,
            data: vec![0; batch * k],
        }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.data.len() / self.k
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn row(&self, b: usize) -> &[u8] {
        &self.data[b * self.k..(b + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.k)
    }

    /// Antipodal network input `2u − 1` with dims `(batch, k, 1)`.
    pub fn to_antipodal(&self) -> Tensor {
        let data = self.data.iter().map(|&b| 2.0 * b as f32 - 1.0).collect();
        Tensor::from_vec([self.batch(), self.k, 1], data).expect("bit block dims")
    }

    /// Targets in {0, 1} with dims `(batch, k, 1)`.
    pub fn to_targets(&self) -> Tensor {
        let data = self.data.iter().map(|&b| b as f32).collect();
        Tensor::from_vec([self.batch(), self.k, 1], data).expect("bit block dims")
    }

    /// Number of differing bits and differing blocks relative to `other`.
    pub fn count_errors(&self, other: &BitBlock) -> Result<(u64, u64)> {
        if self.k != other.k || self.data.len() != other.data.len() {
            return Err(Error::Shape(format!(
                "comparing {}×{} bits with {}×{}",
                self.batch(),
                self.k,
                other.batch(),
                other.k
            )));
        }
        let mut bits = 0u64;
        let mut blocks = 0u64;
        for (a, b) in self.rows().zip(other.rows()) {
            let e = a.iter().zip(b).filter(|(x, y)| x != y).count() as u64;
            bits += e;
            blocks += (e > 0) as u64;
        }
        Ok((bits, blocks))
    }
}

/// A batch of real channel symbol vectors, row-major `batch × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolBlock {
    n: usize,
    data: Vec<f32>,
}

impl SymbolBlock {
    pub fn new(n: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(Error::Shape(format!(
                "{} symbols do not form codewords of length {n}",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.data.len() / self.n
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, b: usize) -> &[f32] {
        &self.data[b * self.n..(b + 1) * self.n]
    }

    /// Flattens a `(batch, length, streams)` tensor stream-major: symbol `s·length + i`
    /// of a codeword is stream `s` at position `i`.
    pub fn from_streams(t: &Tensor) -> Self {
        let [batch, len, streams] = t.dims();
        let mut data = Vec::with_capacity(t.numel());
        for b in 0..batch {
            for s in 0..streams {
                data.extend((0..len).map(|i| t.at(b, i, s)));
            }
        }
        Self {
            n: len * streams,
            data,
        }
    }

    /// Inverse of [`SymbolBlock::from_streams`].
    pub fn to_streams(&self, streams: usize) -> Result<Tensor> {
        if streams == 0 || self.n % streams != 0 {
            return Err(Error::Shape(format!(
                "codeword length {} not divisible into {streams} streams",
                self.n
            )));
        }
        let len = self.n / streams;
        let mut t = Tensor::zeros([self.batch(), len, streams]);
        for b in 0..self.batch() {
            let row = self.row(b);
            for s in 0..streams {
                for i in 0..len {
                    *t.at_mut(b, i, s) = row[s * len + i];
                }
            }
        }
        Ok(t)
    }

    /// Batch second moment `mean(x²)`.
    pub fn second_moment(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / self.data.len() as f64
    }
}

/// A batch of soft messages with dims `(batch, k, F)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LlrTensor(Tensor);

impl LlrTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::Domain("message tensor has non-finite entries".into()));
        }
        Ok(Self(t))
    }

    pub fn zeros(batch: usize, k: usize, features: usize) -> Self {
        Self(Tensor::zeros([batch, k, features]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn features(&self) -> usize {
        self.0.features()
    }

    pub fn k(&self) -> usize {
        self.0.length()
    }

    pub fn batch(&self) -> usize {
        self.0.batch()
    }
}

/// How an interleaver addresses a `k × F` message.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterleaveMode {
    /// Length-`k` permutation of positions, applied identically to every feature column.
    #[default]
    Block,
    /// Length-`k·F` permutation of the flattened message.
    Flattened,
}

/// Seeded derangement together with its inverse.
///
/// Interleaving gathers: `out[j] = in[perm[j]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterleaverSpec {
    seed: u64,
    perm: Rc<[usize]>,
    inv_perm: Rc<[usize]>,
}

/// Uniformly samples a derangement of `0..length` by rejection over random permutations.
pub fn make_interleaver(seed: u64, length: usize) -> Result<InterleaverSpec> {
    if length < 2 {
        return Err(Error::Domain(format!(
            "no derangement exists for interleaver length {length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..length).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    let mut inv = vec![0; length];
    for (j, &i) in perm.iter().enumerate() {
        inv[i] = j;
    }
    Ok(InterleaverSpec {
        seed,
        perm: perm.into(),
        inv_perm: inv.into(),
    })
}

impl InterleaverSpec {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn inv_perm(&self) -> &[usize] {
        &self.inv_perm
    }

    fn check(&self, t: &Tensor, mode: InterleaveMode) -> Result<()> {
        let expected = match mode {
            InterleaveMode::Block => t.length(),
            InterleaveMode::Flattened => t.length() * t.features(),
        };
        if expected != self.len() {
            return Err(Error::Shape(format!(
                "{mode:?} interleaving of a {}×{} message needs length {expected}, interleaver has {}",
                t.length(),
                t.features(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn interleave(&self, t: &Tensor, mode: InterleaveMode) -> Result<Tensor> {
        self.check(t, mode)?;
        match mode {
            InterleaveMode::Block => t.gather_length(&self.perm),
            InterleaveMode::Flattened => t.gather_flat(&self.perm),
        }
    }

    pub fn deinterleave(&self, t: &Tensor, mode: InterleaveMode) -> Result<Tensor> {
        self.check(t, mode)?;
        match mode {
            InterleaveMode::Block => t.gather_length(&self.inv_perm),
            InterleaveMode::Flattened => t.gather_flat(&self.inv_perm),
        }
    }

    pub fn interleave_bits(&self, u: &BitBlock) -> Result<BitBlock> {
        if u.k() != self.len() {
            return Err(Error::Shape(format!(
                "interleaver of length {} applied to {}-bit blocks",
                self.len(),
                u.k()
            )));
        }
        let data = u
            .rows()
            .flat_map(|row| self.perm.iter().map(move |&i| row[i]))
            .collect();
        BitBlock::new(u.k(), data)
    }

    /// Differentiable interleaving inside a computation graph.
    pub fn interleave_var(&self, v: &Var, mode: InterleaveMode) -> Result<Var> {
        self.check(v.value(), mode)?;
        self.gather_var(v, mode, self.perm.clone(), self.inv_perm.clone())
    }

    pub fn deinterleave_var(&self, v: &Var, mode: InterleaveMode) -> Result<Var> {
        self.check(v.value(), mode)?;
        self.gather_var(v, mode, self.inv_perm.clone(), self.perm.clone())
    }

    fn gather_var(
        &self,
        v: &Var,
        mode: InterleaveMode,
        index: Rc<[usize]>,
        inverse: Rc<[usize]>,
    ) -> Result<Var> {
        match mode {
            InterleaveMode::Block => autograd::gather_length(v, index, inverse),
            InterleaveMode::Flattened => autograd::gather_flat(v, index, inverse),
        }
    }
}

/// Channel operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub ebno_db: f64,
    pub rate: f64,
    pub sigma: f64,
}

impl ChannelConfig {
    pub fn new(ebno_db: f64, rate: f64) -> Result<Self> {
        Ok(Self {
            ebno_db,
            rate,
            sigma: ebno_to_sigma(ebno_db, rate)?,
        })
    }
}

/// Noise standard deviation for a bit-wise SNR: `σ² = 1 / (2 r 10^{Eb/N0 / 10})`.
pub fn ebno_to_sigma(ebno_db: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("code rate must be positive, got {rate}")));
    }
    let ebno = 10f64.powf(ebno_db / 10.0);
    Ok((1.0 / (2.0 * rate * ebno)).sqrt())
}

/// `y = x + z`, `z ~ N(0, σ² I)`.
pub fn awgn<R: Rng + ?Sized>(x: &SymbolBlock, sigma: f64, rng: &mut R) -> Result<SymbolBlock> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("noise std must be non-negative, got {sigma}")));
    }
    let data = x
        .data
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            (v as f64 + sigma * z) as f32
        })
        .collect();
    SymbolBlock::new(x.n, data)
}

/// Gaussian noise tensor whose block `b` has standard deviation `sigmas[b]`.
pub fn noise_tensor<R: Rng + ?Sized>(dims: [usize; 3], sigmas: &[f64], rng: &mut R) -> Tensor {
    assert_eq!(dims[0], sigmas.len(), "one sigma per block");
    let per_block = dims[1] * dims[2];
    let mut data = Vec::with_capacity(dims.iter().product());
    for &sigma in sigmas {
        data.extend((0..per_block).map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (sigma * z) as f32
        }));
    }
    Tensor::from_vec(dims, data).expect("noise dims")
}

/// Zero-mean, unit-second-moment normalization over the whole batch.
pub fn normalize_power(raw: &SymbolBlock) -> Result<SymbolBlock> {
    let t = Tensor::from_vec([1, raw.data.len(), 1], raw.data.clone())?;
    let stats = PowerStats::of(&t)?;
    let data = raw
        .data
        .iter()
        .map(|&v| ((v as f64 - stats.mean) / stats.std) as f32)
        .collect();
    SymbolBlock::new(raw.n, data)
}

/// `l^E = l^T − l^A`.
pub fn extrinsic(total: &LlrTensor, apriori: &LlrTensor) -> Result<LlrTensor> {
    Ok(LlrTensor(total.0.zip_map(&apriori.0, |t, a| t - a)?))
}

/// Unit-step decision; an LLR of exactly zero decides 0.
pub fn hard_decision(l: &LlrTensor) -> Result<BitBlock> {
    if l.features() != 1 {
        return Err(Error::Shape(format!(
            "hard decision needs F = 1 messages, got F = {}",
            l.features()
        )));
    }
    let data = l.0.data().iter().map(|&v| (v > 0.0) as u8).collect();
    BitBlock::new(l.k(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn llr(values: &[f32]) -> LlrTensor {
        LlrTensor::new(Tensor::from_vec([1, values.len(), 1], values.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn sigma_at_zero_db_rate_half_is_one() {
        assert!((ebno_to_sigma(0.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_at_three_db() {
        let sigma = ebno_to_sigma(3.0, 0.5).unwrap();
        assert!((sigma - 0.707_945_784).abs() < 1e-8);
        // +3.0103 dB halves the noise power.
        let s2 = ebno_to_sigma(3.0 + 10.0 * 2f64.log10(), 0.5).unwrap();
        assert!((s2 * s2 * 2.0 - sigma * sigma).abs() < 1e-12);
    }

    #[test]
    fn sigma_vanishes_in_noiseless_limit() {
        assert!(ebno_to_sigma(300.0, 0.5).unwrap() < 1e-14);
    }

    #[test]
    fn non_positive_rate_is_rejected() {
        assert!(matches!(ebno_to_sigma(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(ebno_to_sigma(1.0, -0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn sigma_decreases_in_snr_and_rate() {
        let mut prev = f64::INFINITY;
        for step in -20..40 {
            let s = ebno_to_sigma(step as f64 * 0.5, 0.5).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(ebno_to_sigma(2.0, 0.6).unwrap() < ebno_to_sigma(2.0, 0.5).unwrap());
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = SymbolBlock::new(2, vec![0.5, -1.0, 1.5, 2.0]).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        assert_eq!(awgn(&x, 0.0, &mut rng).unwrap(), x);
    }

    #[test]
    fn awgn_variance_matches_sigma() {
        let n = 1_000_000;
        let x = SymbolBlock::new(n, vec![0.0; n]).unwrap();
        let mut rng = SimRng::seed_from_u64(42);
        let y = awgn(&x, 1.0, &mut rng).unwrap();
        let var = y.second_moment();
        assert!((0.995..=1.005).contains(&var), "variance {var}");
    }

    #[test]
    fn awgn_is_reproducible() {
        let x = SymbolBlock::new(4, vec![1.0; 64]).unwrap();
        let a = awgn(&x, 0.8, &mut SimRng::seed_from_u64(9)).unwrap();
        let b = awgn(&x, 0.8, &mut SimRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalize_power_fixed_point_and_scaling() {
        let x = SymbolBlock::new(2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let y = normalize_power(&x).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let x = SymbolBlock::new(2, vec![-2.0, 2.0, 2.0, -2.0]).unwrap();
        assert_eq!(normalize_power(&x).unwrap().data(), &[-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn normalize_power_random_batch_has_unit_power() {
        let mut rng = SimRng::seed_from_u64(5);
        let data: Vec<f32> = (0..4096)
            .map(|_| 3.0 + 2.5 * rng.sample::<f32, _>(StandardNormal))
            .collect();
        let y = normalize_power(&SymbolBlock::new(32, data).unwrap()).unwrap();
        assert!((y.second_moment() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn normalize_power_rejects_constant_batch() {
        let x = SymbolBlock::new(2, vec![0.7; 8]).unwrap();
        assert!(matches!(normalize_power(&x), Err(Error::Degenerate(_))));
    }

    #[test]
    fn interleaver_is_reproducible_derangement() {
        let a = make_interleaver(17, 64).unwrap();
        let b = make_interleaver(17, 64).unwrap();
        assert_eq!(a, b);
        assert!(a.perm().iter().enumerate().all(|(i, &p)| i != p));
        assert!(matches!(make_interleaver(1, 1), Err(Error::Domain(_))));
        assert!(matches!(make_interleaver(1, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn block_and_flattened_modes() {
        let pi = make_interleaver(3, 4).unwrap();
        let t = Tensor::from_vec([1, 4, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let x = pi.interleave(&t, InterleaveMode::Block).unwrap();
        assert_eq!(pi.deinterleave(&x, InterleaveMode::Block).unwrap(), t);
        for f in 0..2 {
            let mut before: Vec<f32> = (0..4).map(|i| t.at(0, i, f)).collect();
            let mut after: Vec<f32> = (0..4).map(|i| x.at(0, i, f)).collect();
            before.sort_by(f32::total_cmp);
            after.sort_by(f32::total_cmp);
            assert_eq!(before, after);
        }
        assert!(pi.interleave(&t, InterleaveMode::Flattened).is_err());

        let single = Tensor::from_vec([2, 4, 1], (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(
            pi.interleave(&single, InterleaveMode::Flattened).unwrap(),
            pi.interleave(&single, InterleaveMode::Block).unwrap()
        );
    }

    #[test]
    fn interleave_bits_matches_tensor_path() {
        let pi = make_interleaver(8, 16).unwrap();
        let u = BitBlock::random(3, 16, &mut SimRng::seed_from_u64(1));
        let via_bits = pi.interleave_bits(&u).unwrap().to_targets();
        let via_tensor = pi.interleave(&u.to_targets(), InterleaveMode::Block).unwrap();
        assert_eq!(via_bits, via_tensor);
    }

    #[test]
    fn extrinsic_examples() {
        let e = extrinsic(&llr(&[2.0, -1.0]), &llr(&[0.5, 0.5])).unwrap();
        assert_eq!(e, llr(&[1.5, -1.5]));
        let l = llr(&[0.3, -4.0]);
        assert_eq!(extrinsic(&l, &llr(&[0.0, 0.0])).unwrap(), l);
        assert_eq!(extrinsic(&l, &l).unwrap(), llr(&[0.0, 0.0]));
        assert!(extrinsic(&l, &llr(&[1.0])).is_err());
    }

    #[test]
    fn hard_decision_examples() {
        assert_eq!(hard_decision(&llr(&[-3.2, 0.1])).unwrap().data(), &[0, 1]);
        assert_eq!(hard_decision(&llr(&[0.0])).unwrap().data(), &[0]);
        let wide = LlrTensor::zeros(1, 2, 3);
        assert!(matches!(hard_decision(&wide), Err(Error::Shape(_))));
    }

    #[test]
    fn streams_round_trip() {
        let t = Tensor::from_vec([2, 3, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let s = SymbolBlock::from_streams(&t);
        assert_eq!(s.row(0), &[0.0, 2.0, 4.0, 1.0, 3.0, 5.0]);
        assert_eq!(s.to_streams(2).unwrap(), t);
    }
}
