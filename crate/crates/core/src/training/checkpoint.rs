//! Single-file checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, JSON header,
//! `u64` weight count, little-endian `f32` weights in network order, and a SHA-256
//! digest of every preceding byte.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MetricsRow;
use crate::autograd::PowerStats;
use crate::blocks::SimRng;
use crate::error::{Error, Result};
use crate::models::{
    AnyModel, ComponentNet, ComponentNetConfig, ParallelConfig, ParallelModel, SerialConfig,
    SerialModel, TurboAutoencoder,
};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TURBOAE\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Exact generator position: seed, stream and word offset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &SimRng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<SimRng> {
        let bad = || Error::Config(format!("malformed generator state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = SimRng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Where a run stopped and why its weights were kept.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub kind: String,
    pub epochs_done: usize,
    pub steps_done: u64,
    pub best_epoch: Option<usize>,
    pub best_eval_ber: Option<f64>,
    /// Set for Gaussian pre-training runs of a single component.
    pub component: Option<usize>,
    pub rng: Option<RngState>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum ModelConfig {
    Parallel(ParallelConfig),
    Serial(SerialConfig),
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    interleaver_seed: u64,
    interleaver_len: usize,
    calibration: Option<Vec<PowerStats>>,
    tensors: Vec<[usize; 3]>,
    state: TrainState,
    metrics: Vec<MetricsRow>,
}

fn net_layout(config: &ModelConfig) -> (Vec<ComponentNetConfig>, Vec<ComponentNetConfig>) {
    match config {
        ModelConfig::Parallel(c) => {
            let enc = ComponentNetConfig {
                in_features: 1,
                output_features: 1,
                arch: c.net,
            };
            let mut dec = ParallelModel::decoder_configs(c, 1);
            dec.extend(ParallelModel::decoder_configs(c, 2));
            (vec![enc; 2], dec)
        }
        ModelConfig::Serial(c) => {
            let (mut inner, outer) = SerialModel::decoder_configs(c);
            inner.extend(outer);
            (SerialModel::encoder_configs(c).to_vec(), inner)
        }
    }
}

impl Checkpoint {
    pub fn new(model: impl Into<AnyModel>) -> Self {
        Self {
            model: model.into(),
            state: TrainState::default(),
            metrics: Vec::new(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        match &self.model {
            AnyModel::Parallel(m) => ModelConfig::Parallel(m.config().clone()),
            AnyModel::Serial(m) => ModelConfig::Serial(m.config().clone()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (pi_seed, pi_len) = match &self.model {
            AnyModel::Parallel(m) => (m.interleaver().seed(), m.interleaver().len()),
            AnyModel::Serial(m) => (m.interleaver().seed(), m.interleaver().len()),
        };
        let nets: Vec<&ComponentNet> = self
            .model
            .encoder_nets()
            .into_iter()
            .chain(self.model.decoder_nets())
            .collect();
        let params: Vec<&Tensor> = nets.iter().flat_map(|n| n.params()).collect();
        let header = Header {
            model: self.model_config(),
            interleaver_seed: pi_seed,
            interleaver_len: pi_len,
            calibration: self.model.calibration().map(<[PowerStats]>::to_vec),
            tensors: params.iter().map(|p| p.dims()).collect(),
            state: self.state.clone(),
            metrics: self.metrics.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let count: usize = params.iter().map(|p| p.numel()).sum();
        let mut out = Vec::with_capacity(28 + json.len() + 4 * count + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for p in params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Integrity {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < MAGIC.len() + 12 + 8 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(fail("checksum mismatch; the file is corrupt or truncated".into()));
        }
        let mut cur = Cursor { buf: body, pos: 8 };
        let version = u32::from_le_bytes(cur.take(4).map_err(&fail)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(fail(format!("unsupported format version {version}")));
        }
        let header_len = cur.u64().map_err(&fail)? as usize;
        let header: Header = serde_json::from_slice(cur.take(header_len).map_err(&fail)?)
            .map_err(|e| fail(format!("bad header: {e}")))?;
        let count = cur.u64().map_err(&fail)? as usize;
        let payload = cur.take(count.checked_mul(4).ok_or_else(|| fail("bad weight count".into()))?).map_err(&fail)?;
        if cur.pos != body.len() {
            return Err(fail("trailing bytes after the weights".into()));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));

        let (enc_cfgs, dec_cfgs) = net_layout(&header.model);
        let mut dims = header.tensors.iter();
        let mut build = |cfgs: Vec<ComponentNetConfig>| -> Result<Vec<ComponentNet>> {
            cfgs.into_iter()
                .map(|cfg| {
                    let shell = ComponentNet::zeroed(cfg)?;
                    let mut params = Vec::new();
                    for p in shell.params() {
                        if dims.next() != Some(&p.dims()) {
                            return Err(fail("weight shapes do not match the configuration".into()));
                        }
                        let data: Vec<f32> = values.by_ref().take(p.numel()).collect();
                        if data.len() != p.numel() {
                            return Err(fail("weight payload too short".into()));
                        }
                        params.push(Tensor::from_vec(p.dims(), data)?);
                    }
                    ComponentNet::from_params(cfg, params)
                })
                .collect()
        };
        let enc = build(enc_cfgs)?;
        let dec = build(dec_cfgs)?;
        if dims.next().is_some() || values.next().is_some() {
            return Err(fail("weight payload longer than the configuration".into()));
        }
        let model: AnyModel = match header.model {
            ModelConfig::Parallel(c) => {
                let mut dec1 = dec;
                let dec2 = dec1.split_off(ParallelModel::decoder_configs(&c, 1).len());
                ParallelModel::from_parts(c, enc, dec1, dec2, header.calibration)?.into()
            }
            ModelConfig::Serial(c) => SerialModel::from_parts(c, enc, dec, header.calibration)?.into(),
        };
        let (pi_seed, pi_len) = match &model {
            AnyModel::Parallel(m) => (m.interleaver().seed(), m.interleaver().len()),
            AnyModel::Serial(m) => (m.interleaver().seed(), m.interleaver().len()),
        };
        if (pi_seed, pi_len) != (header.interleaver_seed, header.interleaver_len) {
            return Err(fail("interleaver record disagrees with the configuration".into()));
        }
        Ok(Self {
            model,
            state: header.state,
            metrics: header.metrics,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }

    /// Generator to continue from, if the run recorded one.
    pub fn rng(&self) -> Result<Option<SimRng>> {
        self.state.rng.as_ref().map(RngState::restore).transpose()
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| "unexpected end of file".to_string())?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Path of the checkpoint inside a run directory.
pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.bin")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BitBlock;
    use crate::models::{NetArch, SerialConfig};

    fn net() -> NetArch {
        NetArch {
            conv_layers: 1,
            filters: 4,
            ..NetArch::default()
        }
    }

    fn parallel() -> ParallelModel {
        let cfg = ParallelConfig {
            k: 8,
            features: 2,
            net: net(),
            iterations: 2,
            interleaver_seed: 9,
            ..ParallelConfig::default()
        };
        let mut m = ParallelModel::new(cfg, &mut SimRng::seed_from_u64(0)).unwrap();
        m.calibrate(256, 1).unwrap();
        m
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut ckpt = Checkpoint::new(parallel());
        ckpt.state.rng = Some(RngState::capture(&SimRng::seed_from_u64(4)));
        ckpt.metrics.push(MetricsRow {
            epoch: 1,
            phase: "alternating".into(),
            loss: 0.123456789,
            eval_ber: 1.0 / 3.0,
            wall_seconds: 0.0,
        });
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.metrics, ckpt.metrics);
        let u = BitBlock::random(4, 8, &mut SimRng::seed_from_u64(5));
        assert_eq!(back.model.encode(&u).unwrap(), ckpt.model.encode(&u).unwrap());
    }

    #[test]
    fn serial_round_trip() {
        let cfg = SerialConfig {
            k: 8,
            features: 2,
            coded_features: 3,
            net: net(),
            iterations: 2,
            ..SerialConfig::default()
        };
        let ckpt = Checkpoint::new(SerialModel::new(cfg, &mut SimRng::seed_from_u64(1)).unwrap());
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model_config(), ckpt.model_config());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = Checkpoint::new(parallel()).to_bytes().unwrap();
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x01;
        for bad in [&flipped[..], &bytes[..bytes.len() - 1], b"hello"] {
            assert!(matches!(
                Checkpoint::from_bytes(bad, Path::new("x.bin")),
                Err(Error::Integrity { .. })
            ));
        }
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        use rand::Rng;
        let mut rng = SimRng::seed_from_u64(77);
        rng.set_stream(3);
        let _: u64 = rng.random();
        let state = RngState::capture(&rng);
        let mut restored = state.restore().unwrap();
        let a: [u64; 4] = rng.random();
        let b: [u64; 4] = restored.random();
        assert_eq!(a, b);
    }
}
