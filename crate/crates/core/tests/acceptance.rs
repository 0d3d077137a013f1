//! Acceptance checks, one line per criterion.
//!
//! `cargo test -p turboae --test acceptance -- 4 7` runs a subset. Failures are
//! reported; set `TURBOAE_ACCEPTANCE_STRICT=1` to turn them into a non-zero exit.

use std::time::Instant;

use rand::{Rng, SeedableRng};

use turboae::blocks::{
    extrinsic, hard_decision, make_interleaver, normalize_power, BitBlock, InterleaveMode, LlrTensor, SimRng,
    SymbolBlock,
};
use turboae::evaluate::{
    crc_attach, crc_bitflip_decode, crc_check, monte_carlo, normal_approximation, uncoded_bpsk_ber, CrcConfig,
    CrcStatus, IterativeCodec, StopRule,
};
use turboae::models::{Activation, AnyModel, NetArch, ParallelConfig, ParallelModel, TurboAutoencoder};
use turboae::optim::Adam;
use turboae::priors::{estimate_mi, j_forward, j_inverse, sample_priors, PriorMode, PriorSpec, H1, H2, H3};
use turboae::ste::{binarize_backward, binarize_forward};
use turboae::tensor::Tensor;
use turboae::training::{
    assemble_iterative, finetune_length, pretrain_gaussian, pretrain_step, standard_step, train_alternating,
    write_metrics_csv, Checkpoint, Phase, Stage, TrainSchedule,
};

/// Seed of the final measurements, distinct from the per-epoch evaluation seed.
const MEASURE_SEED: u64 = 20_201;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn desk_net() -> NetArch {
    NetArch {
        conv_layers: 2,
        filters: 32,
        kernel_size: 5,
        activation: Activation::Tanh,
    }
}

fn ber<M: TurboAutoencoder>(model: &M, ebno: f64, blocks: u64, iterations: Option<usize>) -> (f64, u64) {
    let codec = match iterations {
        Some(i) => IterativeCodec::with_iterations(model, i),
        None => IterativeCodec::new(model),
    };
    let r = monte_carlo(&codec, &[ebno], StopRule::fixed(blocks), None, MEASURE_SEED).expect("monte carlo");
    (r.rows[0].ber, r.rows[0].block_errors)
}

fn structural() -> Outcome {
    let t = Instant::now();
    let mut rng = SimRng::seed_from_u64(1);
    for seed in 0..1000u64 {
        let pi = make_interleaver(seed, 64).unwrap();
        if pi.perm().iter().enumerate().any(|(j, &p)| j == p) {
            return outcome(false, format!("seed {seed} has a fixed point"));
        }
        let data: Vec<f32> = (0..2 * 64 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec([2, 64, 3], data).unwrap();
        let back = pi.deinterleave(&pi.interleave(&x, InterleaveMode::Block).unwrap(), InterleaveMode::Block).unwrap();
        if back != x {
            return outcome(false, format!("seed {seed} does not round-trip"));
        }
    }
    let values: Vec<f32> = (0..256).map(|_| rng.random_range(-20.0..20.0)).collect();
    let total = LlrTensor::new(Tensor::from_vec([4, 64, 1], values.clone()).unwrap()).unwrap();
    let zero = LlrTensor::zeros(4, 64, 1);
    if extrinsic(&total, &zero).unwrap().tensor().data() != &values[..]
        || extrinsic(&total, &total).unwrap().tensor().data().iter().any(|&v| v != 0.0)
    {
        return outcome(false, "extrinsic identity violated".into());
    }
    let x = Tensor::from_vec([1, 256, 1], values.iter().map(|v| v / 8.0).collect()).unwrap();
    let fwd = binarize_forward(&x);
    let g = Tensor::from_vec([1, 256, 1], (0..256).map(|i| i as f32 - 100.0).collect()).unwrap();
    let back = binarize_backward(&x, &g).unwrap();
    for i in 0..256 {
        let v = x.data()[i];
        let want_fwd = if v >= 0.0 { 1.0 } else { -1.0 };
        let want_back = if v.abs() < 1.0 { g.data()[i] } else { 0.0 };
        if fwd.data()[i] != want_fwd || back.data()[i] != want_back {
            return outcome(false, format!("STE mask wrong at {v}"));
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let scale = rng.random_range(0.01..100.0f32);
        let raw: Vec<f32> = (0..128).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let out = normalize_power(&SymbolBlock::new(128, raw).unwrap()).unwrap();
        worst = worst.max((out.second_moment() - 1.0).abs());
    }
    if worst > 1e-6 {
        return outcome(false, format!("power deviation {worst:e}"));
    }
    let ties = LlrTensor::new(Tensor::from_vec([1, 3, 1], vec![0.0, -0.0, 1e-30]).unwrap()).unwrap();
    if hard_decision(&ties).unwrap().data() != [0, 0, 1] {
        return outcome(false, "hard decision of 0 is not 0".into());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(secs < 60.0, format!("all assertions hold, max power deviation {worst:.1e}, {secs:.1} s"))
}

fn j_round_trip() -> Outcome {
    let mut worst = 0.0f64;
    for i in 1..=99 {
        let target = i as f64 / 100.0;
        worst = worst.max((j_forward(j_inverse(target).unwrap()).unwrap() - target).abs());
    }
    let closed = (-(1.0 - 0.5f64.powf(1.0 / H3)).ln() / (H1 * std::f64::consts::LN_2)).powf(0.5 / H2);
    let diff = (j_inverse(0.5).unwrap() - closed).abs();
    outcome(
        worst <= 1e-3 && diff <= 1e-6,
        format!("max round-trip error {worst:.2e}, J^-1(0.5) = {closed:.6} (diff {diff:.1e})"),
    )
}

fn prior_fidelity() -> Outcome {
    let mut rng = SimRng::seed_from_u64(3);
    let u = BitBlock::random(1000, 100, &mut rng);
    let literal = PriorSpec::fixed(0.5, PriorMode::PaperLiteral);
    let l = sample_priors(&u, &literal, &mut rng).unwrap();
    let signed: Vec<f64> = l
        .tensor()
        .data()
        .iter()
        .zip(u.data())
        .map(|(&v, &b)| v as f64 * (2.0 * b as f64 - 1.0))
        .collect();
    let n = signed.len() as f64;
    let mean = signed.iter().sum::<f64>() / n;
    let var = signed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mu = j_inverse(0.5).unwrap();
    let (mean_err, var_err) = ((mean - mu).abs() / mu, (var - 2.0 * mu).abs() / (2.0 * mu));
    let mut worst_mi = 0.0f64;
    for i in 1..=9 {
        let target = i as f64 / 10.0;
        let spec = PriorSpec::fixed(target, PriorMode::Consistent);
        let l = sample_priors(&u, &spec, &mut rng).unwrap();
        worst_mi = worst_mi.max((estimate_mi(&l, &u).unwrap() - target).abs());
    }
    outcome(
        mean_err < 0.01 && var_err < 0.01 && worst_mi <= 0.02,
        format!(
            "literal mean err {:.2}%, variance err {:.2}%; consistent max |I - I_pre| {worst_mi:.4}",
            100.0 * mean_err,
            100.0 * var_err
        ),
    )
}

fn desk_schedule() -> TrainSchedule {
    let stage = |bs, lr, enc_lr| Stage {
        encoder_batch_size: Some(1000),
        encoder_learning_rate: Some(enc_lr),
        ..Stage::new(bs, lr)
    };
    TrainSchedule {
        epochs: 90,
        t_enc: 10,
        t_dec: 40,
        stages: vec![stage(200, 3e-3, 1e-2), stage(200, 1e-3, 3e-3), stage(400, 3e-4, 1e-3)],
        eval_blocks: 4000,
        calibration_blocks: 4096,
        ..TrainSchedule::default()
    }
}

fn desk_training() -> (Outcome, Option<Checkpoint>) {
    let t = Instant::now();
    let cfg = ParallelConfig {
        k: 16,
        features: 5,
        net: desk_net(),
        iterations: 6,
        ..ParallelConfig::default()
    };
    let model = ParallelModel::new(cfg, &mut SimRng::seed_from_u64(0)).unwrap();
    let ckpt = match train_alternating(model, &desk_schedule(), &mut SimRng::seed_from_u64(1)) {
        Ok(c) => c,
        Err(e) => return (outcome(false, format!("training failed: {e}")), None),
    };
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let (b4, _) = ber(&ckpt.model, 4.0, 50_000, None);
    let (b0, _) = ber(&ckpt.model, 0.0, 20_000, None);
    let oracle = uncoded_bpsk_ber(4.0);
    let pass = b4 < oracle && b4 <= b0 / 10.0 && minutes <= 30.0;
    (
        outcome(
            pass,
            format!(
                "BER(4 dB) {b4:.3e} vs uncoded {oracle:.3e}, BER(0 dB) {b0:.3e} (ratio {:.1}), best epoch {:?}, {minutes:.1} min",
                b0 / b4,
                ckpt.state.best_epoch
            ),
        ),
        Some(ckpt),
    )
}

fn pretraining_speed() -> Outcome {
    let mut shared = ParallelModel::new(ParallelConfig::shared(16, desk_net(), 6, 0), &mut SimRng::seed_from_u64(0)).unwrap();
    let schedule = TrainSchedule::default();
    let stage = Stage::new(500, 1e-4);
    let prior = PriorSpec::uniform(0.0, 1.0, PriorMode::PaperLiteral);
    let mut rng = SimRng::seed_from_u64(5);
    let mut opt = Adam::new(Default::default());
    let pre = pretrain_step(&mut shared, 1, &mut opt, Phase::Decoder, stage, prior, &schedule, &mut rng).unwrap();
    let std = standard_step(&mut shared, &mut opt, Phase::Decoder, stage, &schedule, &mut rng).unwrap();
    let steps = 10;
    let t = Instant::now();
    for _ in 0..steps {
        pretrain_step(&mut shared, 1, &mut opt, Phase::Decoder, stage, prior, &schedule, &mut rng).unwrap();
    }
    let pre_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    for _ in 0..steps {
        standard_step(&mut shared, &mut opt, Phase::Decoder, stage, &schedule, &mut rng).unwrap();
    }
    let ratio = t.elapsed().as_secs_f64() / pre_secs;
    outcome(
        pre.decoder_passes == 1 && std.decoder_passes == 12 && ratio >= 3.0,
        format!(
            "decoder passes {} vs {}, throughput ratio {ratio:.1}x at batch 500",
            pre.decoder_passes, std.decoder_passes
        ),
    )
}

fn iterative_assembly() -> Outcome {
    let t = Instant::now();
    let schedule = TrainSchedule {
        epochs: 6,
        t_enc: 100,
        t_dec: 1000,
        stages: vec![Stage::new(200, 3e-3)],
        eval_blocks: 4000,
        calibration_blocks: 4096,
        ..TrainSchedule::pretraining()
    };
    let mut rng = SimRng::seed_from_u64(2);
    let mut parts = Vec::new();
    for component in [1, 2] {
        let model = ParallelModel::new(ParallelConfig::shared(16, desk_net(), 6, 0), &mut SimRng::seed_from_u64(0)).unwrap();
        match pretrain_gaussian(component, model, &schedule, &mut rng) {
            Ok(c) => parts.push(c),
            Err(e) => return outcome(false, format!("pre-training component {component} failed: {e}")),
        }
    }
    let model = assemble_iterative(&parts[0], &parts[1], 6).unwrap();
    let blocks = 20_000;
    let (b6, e6) = ber(&model, 2.0, blocks, Some(6));
    let (b96, e96) = ber(&model, 2.0, blocks, Some(96));
    outcome(
        b96 <= b6 && e6 >= 100 && e96 >= 100,
        format!(
            "BER(2 dB) 96 iterations {b96:.3e} ({e96} block errors) vs 6 iterations {b6:.3e} ({e6}), {:.1} min",
            t.elapsed().as_secs_f64() / 60.0
        ),
    )
}

fn length_transfer(ckpt: &Checkpoint) -> Outcome {
    let shapes = |m: &AnyModel| -> Vec<[usize; 3]> {
        m.encoder_nets().into_iter().chain(m.decoder_nets()).flat_map(|n| n.params()).map(|p| p.dims()).collect()
    };
    let base = TrainSchedule {
        epochs: 0,
        ..desk_schedule()
    };
    let mut rng = SimRng::seed_from_u64(4);
    let untuned = finetune_length(ckpt, 32, &base, &mut rng).unwrap();
    if shapes(&untuned.model) != shapes(&ckpt.model) {
        return outcome(false, "weight shapes changed at k = 32".into());
    }
    let tune = TrainSchedule {
        epochs: 10,
        stages: vec![Stage {
            encoder_batch_size: Some(1000),
            encoder_learning_rate: Some(1e-3),
            ..Stage::new(200, 3e-4)
        }],
        ..desk_schedule()
    };
    let t = Instant::now();
    let tuned = match finetune_length(ckpt, 32, &tune, &mut rng) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("fine-tuning failed: {e}")),
    };
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let (before, _) = ber(&untuned.model, 4.0, 20_000, None);
    let (after, _) = ber(&tuned.model, 4.0, 20_000, None);
    outcome(
        after <= before && minutes <= 5.0,
        format!("shapes unchanged; BER(4 dB) at k = 32 untuned {before:.3e}, tuned {after:.3e}, {minutes:.1} min"),
    )
}

fn crc() -> Outcome {
    let t = Instant::now();
    let cfg = CrcConfig::for_block_length(64).unwrap();
    let mut rng = SimRng::seed_from_u64(8);
    let info = BitBlock::random(50, cfg.info_len, &mut rng);
    let words = crc_attach(&info, &cfg).unwrap();
    let (mut detected, mut flips) = (0usize, 0usize);
    for row in words.rows() {
        for pos in 0..64 {
            let mut bad = row.to_vec();
            bad[pos] ^= 1;
            flips += 1;
            detected += !crc_check(&BitBlock::new(64, bad).unwrap(), &cfg).unwrap()[0] as usize;
        }
    }
    let (mut corrected, mut cases) = (0usize, 0usize);
    for (b, row) in words.rows().enumerate() {
        let mags: Vec<f32> = (0..64).map(|_| rng.random_range(0.5..8.0)).collect();
        let mut order: Vec<usize> = (0..64).collect();
        order.sort_by(|&a, &b| mags[a].total_cmp(&mags[b]));
        for &pos in &order[..cfg.flip_budget] {
            let llr: Vec<f32> = (0..64)
                .map(|i| {
                    let sign = if row[i] == 1 { 1.0 } else { -1.0 };
                    if i == pos { -sign * mags[i] } else { sign * mags[i] }
                })
                .collect();
            let l = LlrTensor::new(Tensor::from_vec([1, 64, 1], llr).unwrap()).unwrap();
            let (decoded, status) = crc_bitflip_decode(&l, &cfg).unwrap();
            cases += 1;
            corrected += (decoded.row(0) == info.row(b) && status[0] == CrcStatus::Passed { flips: 1 }) as usize;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        detected == flips && corrected == cases && secs < 60.0,
        format!("detected {detected}/{flips} single flips, corrected {corrected}/{cases} blocks, {secs:.1} s"),
    )
}

fn reference_curves() -> Outcome {
    let closed = |k: f64, n: f64, ebno: f64| {
        let snr = 2.0 * (k / n) * 10f64.powf(ebno / 10.0);
        let c = 0.5 * (1.0 + snr).log2();
        let v = snr * (snr + 2.0) / (2.0 * (1.0 + snr).powi(2)) * std::f64::consts::LOG2_E.powi(2);
        let x = (n * c - k + 0.5 * n.log2()) / (n * v).sqrt();
        0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
    };
    let (mut decreasing, mut worst) = (true, 0.0f64);
    let mut prev = f64::INFINITY;
    for i in 0..=600 {
        let ebno = i as f64 / 100.0;
        let v = normal_approximation(64, 128, ebno).unwrap();
        decreasing &= v < prev;
        prev = v;
        worst = worst.max((v - closed(64.0, 128.0, ebno)).abs());
    }
    let b0 = uncoded_bpsk_ber(0.0);
    outcome(
        decreasing && worst <= 1e-9 && (b0 - 7.865e-2).abs() <= 1e-5,
        format!("normal approximation decreasing on [0, 6] dB (max diff {worst:.1e}); uncoded BER(0 dB) {b0:.6e}"),
    )
}

fn reproducibility() -> Outcome {
    let run = || {
        let cfg = ParallelConfig {
            k: 16,
            features: 3,
            net: NetArch {
                conv_layers: 1,
                filters: 8,
                kernel_size: 3,
                ..NetArch::default()
            },
            iterations: 2,
            ..ParallelConfig::default()
        };
        let schedule = TrainSchedule {
            epochs: 3,
            t_enc: 3,
            t_dec: 5,
            stages: vec![Stage::new(64, 1e-3)],
            eval_blocks: 500,
            calibration_blocks: 512,
            ..TrainSchedule::default()
        };
        let model = ParallelModel::new(cfg, &mut SimRng::seed_from_u64(11)).unwrap();
        let ckpt = train_alternating(model, &schedule, &mut SimRng::seed_from_u64(12)).unwrap();
        let mut metrics = Vec::new();
        write_metrics_csv(&ckpt.metrics, &mut metrics).unwrap();
        let report = monte_carlo(&IterativeCodec::new(&ckpt.model), &[0.0, 2.0], StopRule::default(), None, 13)
            .unwrap()
            .to_csv(Some((16, 32)))
            .unwrap();
        (metrics, report, ckpt.to_bytes().unwrap())
    };
    let (a, b) = (run(), run());
    outcome(
        a.0 == b.0 && a.1 == b.1 && a.2 == b.2,
        format!(
            "metrics CSV {} bytes, report CSV {} bytes, checkpoint {} bytes; identical: {}, {}, {}",
            a.0.len(),
            a.1.len(),
            a.2.len(),
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2
        ),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let strict = std::env::var_os("TURBOAE_ACCEPTANCE_STRICT").is_some();
    let mut failures = 0;
    let mut report = |n: u32, name: &str, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failures += !o.pass as usize;
    };

    let checks: [(u32, &str, fn() -> Outcome); 5] = [
        (1, "structural properties", structural),
        (2, "J-function round trip", j_round_trip),
        (3, "prior fidelity", prior_fidelity),
        (8, "CRC-7 detection and bit-flip decoding", crc),
        (9, "reference curves", reference_curves),
    ];
    for (n, name, f) in checks {
        if want(n) {
            report(n, name, f());
        }
    }
    if want(5) {
        report(5, "pre-training structure and speed", pretraining_speed());
    }
    if want(4) || want(7) {
        let (o, ckpt) = desk_training();
        if want(4) {
            report(4, "desk-scale training", o);
        }
        if want(7) {
            match ckpt {
                Some(c) => report(7, "length transfer", length_transfer(&c)),
                None => report(7, "length transfer", outcome(false, "no k = 16 checkpoint".into())),
            }
        }
    }
    if want(6) {
        report(6, "iterative assembly", iterative_assembly());
    }
    if want(10) {
        report(10, "reproducibility", reproducibility());
    }
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
