//! Alternating encoder/decoder training, Gaussian-prior component pre-training,
//! iterative assembly and block-length transfer.

mod checkpoint;
mod schedule;

use std::time::Instant;

use rand::{Rng, SeedableRng};

pub use checkpoint::{checkpoint_path, Checkpoint, ModelConfig, RngState, TrainState, FORMAT_VERSION};
pub use schedule::{write_metrics_csv, MetricsRow, Stage, TrainSchedule, METRICS_COLUMNS};

use crate::autograd::{self, Gradients, Var};
use crate::blocks::{ebno_to_sigma, hard_decision, noise_tensor, BitBlock, LlrTensor, SimRng};
use crate::error::{Error, Result};
use crate::evaluate::{monte_carlo, IterativeCodec, StopRule};
use crate::models::{
    bind_all, check_unit_power, AnyModel, BoundNet, ComponentNet, Normalization, ParallelModel,
    TurboAutoencoder, CALIBRATION_BLOCKS,
};
use crate::optim::Adam;
use crate::priors::{sample_priors, PriorSpec};
use crate::ste;

/// Seed of the frozen-statistics batch used after assembly.
pub const ASSEMBLY_CALIBRATION_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Encoder weights move, decoder weights are frozen.
    Encoder,
    /// Decoder weights move, encoder weights are frozen.
    Decoder,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Encoder => "encoder",
            Phase::Decoder => "decoder",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub encoder_passes: u64,
    pub decoder_passes: u64,
}

fn block_sigmas<R: Rng + ?Sized>(
    phase: Phase,
    schedule: &TrainSchedule,
    batch: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match phase {
        Phase::Encoder => Ok(vec![ebno_to_sigma(schedule.enc_snr_db, rate)?; batch]),
        Phase::Decoder => {
            let [lo, hi] = schedule.dec_snr_db_range;
            (0..batch)
                .map(|_| {
                    let snr = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    ebno_to_sigma(snr, rate)
                })
                .collect()
        }
    }
}

fn apply_gradients(
    nets: Vec<&mut ComponentNet>,
    bound: &[BoundNet],
    grads: &Gradients,
    opt: &mut Adam,
    learning_rate: f64,
) {
    let g: Vec<_> = bound.iter().flat_map(|b| b.grads(grads)).collect();
    let mut params: Vec<_> = nets.into_iter().flat_map(|n| n.params_mut()).collect();
    opt.update(&mut params, &g, learning_rate);
}

/// One gradient step of the alternating algorithm through the full iterative decoder.
/// A non-finite loss leaves every weight untouched.
pub fn standard_step<M: TurboAutoencoder + ?Sized>(
    model: &mut M,
    opt: &mut Adam,
    phase: Phase,
    stage: Stage,
    schedule: &TrainSchedule,
    rng: &mut SimRng,
) -> Result<StepStats> {
    let (enc0, dec0) = (model.passes().encoder(), model.passes().decoder());
    let stage = stage.for_phase(phase);
    let train_enc = phase == Phase::Encoder;
    let u = BitBlock::random(stage.batch_size, model.k(), rng);
    let enc = bind_all(&model.encoder_nets(), train_enc);
    let dec = bind_all(&model.decoder_nets(), !train_enc);
    let (x, _) = model.forward_encode(&u, &enc, Normalization::Batch)?;
    check_unit_power(x.value(), model.binarize_symbols())?;
    let sigmas = block_sigmas(phase, schedule, stage.batch_size, model.rate(), rng)?;
    let y = autograd::add(&x, &Var::constant(noise_tensor(x.dims(), &sigmas, rng)))?;
    let logits = model.forward_decode(&y, &dec, model.default_iterations())?;
    let loss = autograd::bce_with_logits(&logits, &u.to_targets())?;
    let value = loss.value().data()[0] as f64;
    if value.is_finite() {
        let grads = loss.backward();
        match phase {
            Phase::Encoder => apply_gradients(model.encoder_nets_mut(), &enc, &grads, opt, stage.learning_rate),
            Phase::Decoder => apply_gradients(model.decoder_nets_mut(), &dec, &grads, opt, stage.learning_rate),
        }
    }
    Ok(StepStats {
        loss: value,
        encoder_passes: model.passes().encoder() - enc0,
        decoder_passes: model.passes().decoder() - dec0,
    })
}

/// One pre-training step of component `component`: a single decoder pass on the
/// component's own observation and Gaussian a-priori LLRs.
pub fn pretrain_step(
    model: &mut ParallelModel,
    component: usize,
    opt: &mut Adam,
    phase: Phase,
    stage: Stage,
    prior: PriorSpec,
    schedule: &TrainSchedule,
    rng: &mut SimRng,
) -> Result<StepStats> {
    let (enc0, dec0) = (model.passes().encoder(), model.passes().decoder());
    let stage = stage.for_phase(phase);
    let train_enc = phase == Phase::Encoder;
    let u = BitBlock::random(stage.batch_size, model.k(), rng);
    let enc = [model.component_encoder(component).bind(train_enc)];
    let dec = [model.component_decoder(component).bind(!train_enc)];
    let raw = enc[0].apply(&Var::constant(u.to_antipodal()))?;
    model.passes().add_encoder();
    let x = if model.binarize_symbols() {
        ste::binarize(&raw)
    } else {
        autograd::normalize_batch(&raw)?.0
    };
    check_unit_power(x.value(), model.binarize_symbols())?;
    let sigmas = block_sigmas(phase, schedule, stage.batch_size, model.rate(), rng)?;
    let y = autograd::add(&x, &Var::constant(noise_tensor(x.dims(), &sigmas, rng)))?;
    let apriori = Var::constant(sample_priors(&u, &prior, rng)?.into_tensor());
    let total = dec[0].apply(&autograd::concat_features(&[&y, &apriori])?)?;
    model.passes().add_decoder();
    let loss = autograd::bce_with_logits(&total, &u.to_targets())?;
    let value = loss.value().data()[0] as f64;
    if value.is_finite() {
        let grads = loss.backward();
        match phase {
            Phase::Encoder => apply_gradients(
                vec![model.component_encoder_mut(component)],
                &enc,
                &grads,
                opt,
                stage.learning_rate,
            ),
            Phase::Decoder => apply_gradients(
                vec![model.component_decoder_mut(component)],
                &dec,
                &grads,
                opt,
                stage.learning_rate,
            ),
        }
    }
    Ok(StepStats {
        loss: value,
        encoder_passes: model.passes().encoder() - enc0,
        decoder_passes: model.passes().decoder() - dec0,
    })
}

fn check_loss(stats: StepStats, epoch: usize, phase: Phase, step: usize) -> Result<f64> {
    if stats.loss.is_finite() {
        Ok(stats.loss)
    } else {
        Err(Error::Divergence {
            epoch,
            phase: phase.name().into(),
            step,
            loss: stats.loss,
        })
    }
}

/// BER of the full model at the schedule's evaluation point, after refreezing the
/// normalization statistics.
pub fn evaluate_model<M: TurboAutoencoder + ?Sized>(model: &mut M, schedule: &TrainSchedule) -> Result<f64> {
    model.calibrate(schedule.calibration_blocks, schedule.eval_seed)?;
    let report = monte_carlo(
        &IterativeCodec::new(&*model),
        &[schedule.eval_snr_db],
        StopRule::fixed(schedule.eval_blocks),
        None,
        schedule.eval_seed,
    )?;
    Ok(report.rows[0].ber)
}

/// BER of component `component` on its own, with zero a-priori information.
pub fn evaluate_component(model: &mut ParallelModel, component: usize, schedule: &TrainSchedule) -> Result<f64> {
    model.calibrate(schedule.calibration_blocks, schedule.eval_seed)?;
    let stats = model.calibration().map(|s| s.to_vec());
    let enc = model.component_encoder(component).bind(false);
    let dec = model.component_decoder(component).bind(false);
    let sigma = ebno_to_sigma(schedule.eval_snr_db, model.rate())?;
    let mut rng = SimRng::seed_from_u64(schedule.eval_seed);
    let (mut errors, mut sent) = (0u64, 0u64);
    while sent < schedule.eval_blocks {
        let batch = (schedule.eval_blocks - sent).min(crate::evaluate::EVAL_BATCH as u64) as usize;
        let u = BitBlock::random(batch, model.k(), &mut rng);
        let raw = enc.apply(&Var::constant(u.to_antipodal()))?;
        let x = match &stats {
            Some(s) if !s.is_empty() => autograd::normalize_frozen(&raw, s[component - 1]),
            _ => ste::binarize(&raw),
        };
        let y = autograd::add(&x, &Var::constant(noise_tensor(x.dims(), &vec![sigma; batch], &mut rng)))?;
        let zeros = Var::constant(crate::tensor::Tensor::zeros(x.dims()));
        let total = dec.apply(&autograd::concat_features(&[&y, &zeros])?)?;
        let decided = hard_decision(&LlrTensor::new(total.value().clone())?)?;
        errors += u.count_errors(&decided)?.0;
        sent += batch as u64;
    }
    Ok(errors as f64 / (sent * model.k() as u64) as f64)
}

struct Tracker<M> {
    start: Instant,
    log_wall_time: bool,
    metrics: Vec<MetricsRow>,
    best: Option<(f64, usize, M)>,
    steps: u64,
}

impl<M: Clone> Tracker<M> {
    fn new(schedule: &TrainSchedule) -> Self {
        Self {
            start: Instant::now(),
            log_wall_time: schedule.log_wall_time,
            metrics: Vec::new(),
            best: None,
            steps: 0,
        }
    }

    fn end_epoch(&mut self, epoch: usize, phase: &str, loss: f64, eval_ber: f64, model: &M) {
        self.metrics.push(MetricsRow {
            epoch,
            phase: phase.into(),
            loss,
            eval_ber,
            wall_seconds: if self.log_wall_time {
                self.start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        if self.best.as_ref().is_none_or(|(b, _, _)| eval_ber < *b) {
            self.best = Some((eval_ber, epoch, model.clone()));
        }
    }

    fn finish(self, kind: &str, component: Option<usize>, rng: &SimRng) -> Checkpoint
    where
        M: Into<AnyModel>,
    {
        let epochs_done = self.metrics.len();
        let (ber, epoch, model) = self.best.expect("at least one epoch");
        Checkpoint {
            model: model.into(),
            state: TrainState {
                kind: kind.into(),
                epochs_done,
                steps_done: self.steps,
                best_epoch: Some(epoch),
                best_eval_ber: Some(ber),
                component,
                rng: Some(RngState::capture(rng)),
            },
            metrics: self.metrics,
        }
    }
}

fn run_alternating<M>(mut model: M, schedule: &TrainSchedule, rng: &mut SimRng, kind: &str) -> Result<Checkpoint>
where
    M: TurboAutoencoder + Clone + Into<AnyModel>,
{
    schedule.validate()?;
    let mut enc_opt = Adam::new(schedule.optimizer.clone());
    let mut dec_opt = Adam::new(schedule.optimizer.clone());
    let mut tracker = Tracker::new(schedule);
    for epoch in 0..schedule.epochs {
        let stage = schedule.stage(epoch);
        for step in 0..schedule.t_enc {
            let s = standard_step(&mut model, &mut enc_opt, Phase::Encoder, stage, schedule, rng)?;
            check_loss(s, epoch + 1, Phase::Encoder, step)?;
        }
        let mut dec_loss = 0.0;
        for step in 0..schedule.t_dec {
            let s = standard_step(&mut model, &mut dec_opt, Phase::Decoder, stage, schedule, rng)?;
            dec_loss += check_loss(s, epoch + 1, Phase::Decoder, step)?;
        }
        tracker.steps += (schedule.t_enc + schedule.t_dec) as u64;
        let ber = evaluate_model(&mut model, schedule)?;
        tracker.end_epoch(epoch + 1, kind, dec_loss / schedule.t_dec as f64, ber, &model);
    }
    Ok(tracker.finish(kind, None, rng))
}

/// The alternating algorithm: per epoch, `t_enc` encoder-only updates at the encoder
/// SNR, then `t_dec` decoder-only updates at per-block random SNRs. The returned
/// checkpoint holds the weights of the epoch with the lowest evaluation BER and the
/// metrics of every epoch.
pub fn train_alternating<M>(model: M, schedule: &TrainSchedule, rng: &mut SimRng) -> Result<Checkpoint>
where
    M: TurboAutoencoder + Clone + Into<AnyModel>,
{
    run_alternating(model, schedule, rng, "alternating")
}

/// Trains encoder/decoder `component` of a weight-sharing, `F = 1` parallel model in
/// isolation with Gaussian a-priori LLRs in place of the other component.
pub fn pretrain_gaussian(
    component: usize,
    mut model: ParallelModel,
    schedule: &TrainSchedule,
    rng: &mut SimRng,
) -> Result<Checkpoint> {
    if component != 1 && component != 2 {
        return Err(Error::Config(format!("component must be 1 or 2, got {component}")));
    }
    if model.config().features != 1 {
        return Err(Error::Config(format!(
            "Gaussian pre-training needs F = 1 messages, got F = {}",
            model.config().features
        )));
    }
    if !model.config().weight_sharing {
        return Err(Error::Config(
            "Gaussian pre-training needs weight sharing across iterations".into(),
        ));
    }
    schedule.validate()?;
    let kind = format!("pretrain_{component}");
    let mut enc_opt = Adam::new(schedule.optimizer.clone());
    let mut dec_opt = Adam::new(schedule.optimizer.clone());
    let mut tracker = Tracker::new(schedule);
    for epoch in 0..schedule.epochs {
        let stage = schedule.stage(epoch);
        let enc_prior = PriorSpec {
            i_pre: schedule.encoder_prior(epoch),
            mode: schedule.prior_mode,
        };
        let dec_prior = PriorSpec {
            i_pre: schedule.i_pre_dec,
            mode: schedule.prior_mode,
        };
        for step in 0..schedule.t_enc {
            let s = pretrain_step(&mut model, component, &mut enc_opt, Phase::Encoder, stage, enc_prior, schedule, rng)?;
            check_loss(s, epoch + 1, Phase::Encoder, step)?;
        }
        let mut dec_loss = 0.0;
        for step in 0..schedule.t_dec {
            let s = pretrain_step(&mut model, component, &mut dec_opt, Phase::Decoder, stage, dec_prior, schedule, rng)?;
            dec_loss += check_loss(s, epoch + 1, Phase::Decoder, step)?;
        }
        tracker.steps += (schedule.t_enc + schedule.t_dec) as u64;
        let ber = evaluate_component(&mut model, component, schedule)?;
        tracker.end_epoch(epoch + 1, &kind, dec_loss / schedule.t_dec as f64, ber, &model);
    }
    Ok(tracker.finish(&kind, Some(component), rng))
}

/// Combines two pre-trained components into the iterative decoder with extrinsic
/// exchange, running `inference_iterations` shared-weight iterations.
pub fn assemble_iterative(ckpt1: &Checkpoint, ckpt2: &Checkpoint, inference_iterations: usize) -> Result<ParallelModel> {
    let (m1, m2) = match (&ckpt1.model, &ckpt2.model) {
        (AnyModel::Parallel(a), AnyModel::Parallel(b)) => (a, b),
        _ => return Err(Error::Incompatible("both checkpoints must hold parallel models".into())),
    };
    for (ckpt, want) in [(ckpt1, 1), (ckpt2, 2)] {
        if ckpt.state.component != Some(want) {
            return Err(Error::Incompatible(format!(
                "expected a component-{want} pre-training checkpoint, got {:?}",
                ckpt.state.component
            )));
        }
    }
    let (c1, c2) = (m1.config(), m2.config());
    for c in [c1, c2] {
        if c.features != 1 || !c.weight_sharing {
            return Err(Error::Incompatible(
                "components must be F = 1 weight-sharing models".into(),
            ));
        }
    }
    if c1.k != c2.k {
        return Err(Error::Incompatible(format!("block lengths differ: {} vs {}", c1.k, c2.k)));
    }
    if c1.interleaver_seed != c2.interleaver_seed {
        return Err(Error::Incompatible(format!(
            "interleaver seeds differ: {} vs {}",
            c1.interleaver_seed, c2.interleaver_seed
        )));
    }
    if c1.net != c2.net || c1.binarize_symbols != c2.binarize_symbols {
        return Err(Error::Incompatible("component architectures differ".into()));
    }
    let mut config = c1.clone();
    config.iterations = inference_iterations;
    let mut model = ParallelModel::from_parts(
        config,
        vec![m1.component_encoder(1).clone(), m2.component_encoder(2).clone()],
        vec![m1.component_decoder(1).clone()],
        vec![m2.component_decoder(2).clone()],
        None,
    )?;
    model.calibrate(CALIBRATION_BLOCKS, ASSEMBLY_CALIBRATION_SEED)?;
    Ok(model)
}

/// Moves a checkpoint to block length `k_new` and continues with the alternating
/// algorithm. A schedule with zero epochs only transfers and recalibrates.
pub fn finetune_length(ckpt: &Checkpoint, k_new: usize, schedule: &TrainSchedule, rng: &mut SimRng) -> Result<Checkpoint> {
    let mut model = ckpt.model.clone();
    model.set_block_length(k_new)?;
    model.calibrate(schedule.calibration_blocks, schedule.eval_seed)?;
    if schedule.epochs == 0 {
        let mut out = Checkpoint::new(model);
        out.state.kind = "finetune".into();
        out.state.rng = Some(RngState::capture(rng));
        return Ok(out);
    }
    run_alternating(model, schedule, rng, "finetune")
}
