use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::priors::{MutualInformation, PriorMode};

use super::Phase;

/// Batch size and learning rate for one contiguous share of the epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Encoder-phase overrides; unset means the phase uses the shared values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_learning_rate: Option<f64>,
}

impl Stage {
    pub fn new(batch_size: usize, learning_rate: f64) -> Self {
        Self {
            batch_size,
            learning_rate,
            encoder_batch_size: None,
            encoder_learning_rate: None,
        }
    }

    /// The stage as seen by one phase, with overrides folded in.
    pub fn for_phase(self, phase: Phase) -> Stage {
        match phase {
            Phase::Decoder => Stage::new(self.batch_size, self.learning_rate),
            Phase::Encoder => Stage::new(
                self.encoder_batch_size.unwrap_or(self.batch_size),
                self.encoder_learning_rate.unwrap_or(self.learning_rate),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Encoder updates per epoch.
    pub t_enc: usize,
    /// Decoder updates per epoch.
    pub t_dec: usize,
    /// Stages split the epochs into equal consecutive shares.
    pub stages: Vec<Stage>,
    pub enc_snr_db: f64,
    /// Decoder-phase Eb/N0 is drawn per block, uniformly from this interval.
    pub dec_snr_db_range: [f64; 2],
    /// Pre-training encoder-phase prior levels; the last stage switches to `i_pre_enc_late`.
    pub i_pre_enc: MutualInformation,
    pub i_pre_enc_late: MutualInformation,
    pub i_pre_dec: MutualInformation,
    pub prior_mode: PriorMode,
    pub optimizer: AdamConfig,
    pub eval_snr_db: f64,
    pub eval_blocks: u64,
    pub eval_seed: u64,
    pub calibration_blocks: usize,
    /// Write elapsed time into the metrics; off keeps the metrics reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            t_enc: 100,
            t_dec: 500,
            stages: vec![
                Stage::new(500, 1e-4),
                Stage::new(1000, 1e-5),
                Stage::new(2000, 1e-6),
            ],
            enc_snr_db: 4.0,
            dec_snr_db_range: [0.5, 4.0],
            i_pre_enc: MutualInformation::Uniform { lo: 0.8, hi: 1.0 },
            i_pre_enc_late: MutualInformation::Uniform { lo: 0.5, hi: 1.0 },
            i_pre_dec: MutualInformation::Uniform { lo: 0.0, hi: 1.0 },
            prior_mode: PriorMode::PaperLiteral,
            optimizer: AdamConfig::default(),
            eval_snr_db: 4.0,
            eval_blocks: 10_000,
            eval_seed: 0,
            calibration_blocks: crate::models::CALIBRATION_BLOCKS,
            log_wall_time: false,
        }
    }
}

impl TrainSchedule {
    /// Defaults for component-wise pre-training: more decoder updates per epoch.
    pub fn pretraining() -> Self {
        Self {
            t_dec: 1000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.t_enc == 0 || self.t_dec == 0 {
            return Err(Error::Config("epochs, t_enc and t_dec must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("schedule needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let enc = s.for_phase(Phase::Encoder);
            if s.batch_size == 0 || !(s.learning_rate > 0.0) || enc.batch_size == 0 || !(enc.learning_rate > 0.0) {
                return Err(Error::Config(format!(
                    "stage {i} needs a positive batch size and learning rate"
                )));
            }
            if i > 0 && s.learning_rate > self.stages[i - 1].learning_rate {
                return Err(Error::Config(
                    "learning-rate schedule must be non-increasing".into(),
                ));
            }
        }
        let [lo, hi] = self.dec_snr_db_range;
        if !(lo <= hi) || !self.enc_snr_db.is_finite() || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "bad SNR settings: encoder {} dB, decoder range [{lo}, {hi}] dB",
                self.enc_snr_db
            )));
        }
        if self.eval_blocks == 0 || self.calibration_blocks == 0 {
            return Err(Error::Config(
                "eval_blocks and calibration_blocks must be positive".into(),
            ));
        }
        self.i_pre_enc.validate()?;
        self.i_pre_enc_late.validate()?;
        self.i_pre_dec.validate()
    }

    pub fn stage_index(&self, epoch: usize) -> usize {
        (epoch * self.stages.len() / self.epochs.max(1)).min(self.stages.len() - 1)
    }

    pub fn stage(&self, epoch: usize) -> Stage {
        self.stages[self.stage_index(epoch)]
    }

    pub(crate) fn encoder_prior(&self, epoch: usize) -> MutualInformation {
        if self.stages.len() > 1 && self.stage_index(epoch) + 1 == self.stages.len() {
            self.i_pre_enc_late
        } else {
            self.i_pre_enc
        }
    }
}

/// One row per epoch; `loss` is the mean decoder-phase loss of that epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub phase: String,
    pub loss: f64,
    pub eval_ber: f64,
    pub wall_seconds: f64,
}

pub const METRICS_COLUMNS: [&str; 5] = ["epoch", "phase", "loss", "eval_ber", "wall_seconds"];

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> Result<()> {
    writeln!(w, "{}", METRICS_COLUMNS.join(","))?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.epoch, r.phase, r.loss, r.eval_ber, r.wall_seconds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stages_cover_thirds() {
        let s = TrainSchedule {
            epochs: 9,
            ..TrainSchedule::default()
        };
        s.validate().unwrap();
        let idx: Vec<usize> = (0..9).map(|e| s.stage_index(e)).collect();
        assert_eq!(idx, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(s.encoder_prior(0), s.i_pre_enc);
        assert_eq!(s.encoder_prior(8), s.i_pre_enc_late);
    }

    #[test]
    fn encoder_overrides_apply_to_encoder_phase_only() {
        let stage = Stage {
            encoder_batch_size: Some(1000),
            encoder_learning_rate: Some(1e-2),
            ..Stage::new(200, 3e-3)
        };
        assert_eq!(stage.for_phase(Phase::Encoder), Stage::new(1000, 1e-2));
        assert_eq!(stage.for_phase(Phase::Decoder), Stage::new(200, 3e-3));
    }

    #[test]
    fn increasing_learning_rate_is_rejected() {
        let mut s = TrainSchedule::default();
        s.stages[1].learning_rate = 1e-3;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_counts_are_rejected() {
        let s = TrainSchedule {
            t_dec: 0,
            ..TrainSchedule::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = vec![MetricsRow {
            epoch: 1,
            phase: "alternating".into(),
            loss: 0.5,
            eval_ber: 0.01,
            wall_seconds: 0.0,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,phase,loss,eval_ber,wall_seconds\n1,alternating,0.5,0.01,0\n"
        );
    }
}
