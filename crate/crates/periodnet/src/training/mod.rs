//! Training: corpus loading, frame-aligned crop batching, the two-phase
//! schedule (STFT-only warmup with frozen discriminators, then joint
//! adversarial training), and checkpointing.
//!
//! All randomness derives from (config seed, iteration index, clip index), so
//! a run is reproducible and resuming from a checkpoint continues the exact
//! loss trajectory.

mod radam;

pub use radam::{RAdamParams, RAdamState};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{ModelSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::excitation::{gen_noise, gen_sine, smooth_vuv, F0Contour};
use crate::features::{
    upsample_frames, ConditioningTrack, Direction, FeatureTrack, Interp, Normalizer, FEATURE_DIM,
    LF0_COLUMN, VUV_COLUMN,
};
use crate::losses::{adversarial_d_loss, generator_objective, ObjectiveWeights};
use crate::nets::{CondLeaves, DiscriminatorBank, ExcitationLeaves, PeriodNetModel};
use crate::tensor::Graph;
use crate::util::mix_seed;
use crate::wav::read_wav;

const PHASE_STREAM: u64 = 0x70aa;
const NOISE_STREAM: u64 = 0x0153;
const BATCH_STREAM: u64 = 0xba7c;
const MODEL_STREAM: u64 = 0x0de1;

/// Iteration plan; crop lengths are validated against receptive fields and
/// the largest analysis FFT at train start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSchedule {
    pub total_iters: u64,
    pub d_frozen_iters: u64,
    pub batch_size: usize,
    pub crop_samples: usize,
    pub seed: u64,
}

impl TrainSchedule {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        TrainSchedule {
            total_iters: cfg.iterations,
            d_frozen_iters: cfg.warmup_iterations,
            batch_size: cfg.batch_size,
            crop_samples: cfg.crop_samples,
            seed: cfg.seed,
        }
    }

    pub fn phase(&self, iter: u64) -> Phase {
        if iter <= self.d_frozen_iters {
            Phase::Warmup
        } else {
            Phase::Adversarial
        }
    }
}

/// Training phase for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Generator trains on MR-STFT only; discriminators untouched.
    Warmup,
    /// Joint adversarial training.
    Adversarial,
}

/// One clip prepared for training: aligned waveform, normalized upsampled
/// conditioning, and the deterministic per-utterance excitation (noise is
/// drawn fresh per crop).
pub struct LoadedClip {
    pub samples: Vec<f32>,
    pub n_frames: usize,
    pub hop: usize,
    pub cond_full: ConditioningTrack,
    pub cond_no_f0: Option<ConditioningTrack>,
    pub sine: Vec<f32>,
    pub vuv_smooth: Vec<f32>,
}

impl LoadedClip {
    pub fn len_samples(&self) -> usize {
        self.samples.len()
    }
}

/// All clips plus the fitted normalizer.
pub struct Corpus {
    pub clips: Vec<LoadedClip>,
    pub normalizer: Normalizer,
}

/// Extract the F0 contour stored in raw (unnormalized) features.
pub fn contour_from_features(track: &FeatureTrack) -> Result<F0Contour> {
    let frame_values: Vec<f64> = (0..track.n_frames)
        .map(|n| {
            let row = track.frame(n);
            if row[VUV_COLUMN] > 0.5 {
                (row[LF0_COLUMN] as f64).exp()
            } else {
                0.0
            }
        })
        .collect();
    F0Contour::from_frames(frame_values, track.frame_shift)
}

impl Corpus {
    /// Load, align, normalize, and precompute excitation for every clip.
    /// Waveform and features may disagree by at most one frame; both are
    /// trimmed to the shorter length.
    pub fn load(cfg: &TrainConfig, needs_no_f0_cond: bool) -> Result<Self> {
        let mut raw_tracks = Vec::new();
        let mut waves = Vec::new();
        for pair in &cfg.clips {
            let clip = read_wav(&pair.wav)?;
            if clip.sample_rate != cfg.sample_rate {
                return Err(Error::data(format!(
                    "{}: sample rate {} does not match configured {}",
                    pair.wav.display(),
                    clip.sample_rate,
                    cfg.sample_rate
                )));
            }
            let track = FeatureTrack::load(&pair.features)?;
            waves.push(clip);
            raw_tracks.push(track);
        }

        let normalizer = Normalizer::fit(&raw_tracks.iter().collect::<Vec<_>>())?;
        let sample_rate = cfg.sample_rate as f64;

        let mut clips = Vec::new();
        for (idx, (mut track, clip)) in raw_tracks.into_iter().zip(waves).enumerate() {
            let hop = track.hop(sample_rate)?;
            let wav_frames = clip.samples.len() / hop;
            if track.n_frames.abs_diff(wav_frames) > 1 {
                return Err(Error::data(format!(
                    "{}: waveform spans {} frames but features hold {}",
                    cfg.clips[idx].wav.display(),
                    wav_frames,
                    track.n_frames
                )));
            }
            let usable = track.n_frames.min(wav_frames);
            if usable == 0 {
                return Err(Error::data(format!(
                    "{}: clip shorter than one frame",
                    cfg.clips[idx].wav.display()
                )));
            }
            track = FeatureTrack::new(
                usable,
                track.dim,
                track.frame_shift,
                track.values()[..usable * track.dim].to_vec(),
            )?;
            let mut samples = clip.samples;
            samples.truncate(usable * hop);

            let contour = contour_from_features(&track)?;
            let f0 = contour.upsample(sample_rate)?;
            let vuv = contour.vuv_per_sample(sample_rate)?;
            let vuv_smooth_f64 = smooth_vuv(&vuv, cfg.vuv_window_ms, sample_rate);
            let phase_seed = mix_seed(cfg.seed, PHASE_STREAM, idx as u64);
            let initial_phase = ChaCha8Rng::seed_from_u64(phase_seed)
                .gen_range(0.0..2.0 * std::f64::consts::PI);
            let sine_f64 = gen_sine(
                &f0,
                &vuv_smooth_f64,
                sample_rate,
                cfg.sine_amplitude,
                initial_phase,
            )?;

            let normalized = normalizer.apply(&track, Direction::Forward)?;
            let cond_full = upsample_frames(&normalized, sample_rate, Interp::Linear)?;
            let cond_no_f0 = if needs_no_f0_cond {
                Some(upsample_frames(
                    &normalized.drop_f0()?,
                    sample_rate,
                    Interp::Linear,
                )?)
            } else {
                None
            };

            clips.push(LoadedClip {
                samples,
                n_frames: usable,
                hop,
                cond_full,
                cond_no_f0,
                sine: sine_f64.iter().map(|&v| v as f32).collect(),
                vuv_smooth: vuv_smooth_f64.iter().map(|&v| v as f32).collect(),
            });
        }
        Ok(Corpus { clips, normalizer })
    }
}

/// One training example: a frame-aligned crop with its excitation and
/// conditioning slices.
pub struct BatchItem {
    pub wave: Vec<f32>,
    pub sine: Vec<f32>,
    pub noise: Vec<f32>,
    pub vuv: Vec<f32>,
    pub cond_full: Vec<f32>,
    pub cond_channels: usize,
    pub cond_no_f0: Option<Vec<f32>>,
    pub len: usize,
}

/// Draw one batch for an iteration. Crop starts snap to frame boundaries so
/// conditioning stays aligned; the sine keeps its utterance-level phase
/// because crops slice the precomputed signal; noise is redrawn per crop from
/// the iteration seed.
pub fn sample_batch(
    corpus: &Corpus,
    schedule: &TrainSchedule,
    iter: u64,
) -> Result<Vec<BatchItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(schedule.seed, BATCH_STREAM, iter));
    let crop = schedule.crop_samples;
    let mut batch = Vec::with_capacity(schedule.batch_size);
    for b in 0..schedule.batch_size {
        let clip_idx = rng.gen_range(0..corpus.clips.len());
        let clip = &corpus.clips[clip_idx];
        if clip.len_samples() < crop {
            return Err(Error::data(format!(
                "clip of {} samples shorter than crop {crop}",
                clip.len_samples()
            )));
        }
        let max_start_frame = (clip.len_samples() - crop) / clip.hop;
        let start = rng.gen_range(0..=max_start_frame) * clip.hop;
        let noise_seed = mix_seed(schedule.seed, NOISE_STREAM ^ (b as u64) << 32, iter);
        let noise: Vec<f32> = gen_noise(crop, noise_seed).iter().map(|&v| v as f32).collect();
        batch.push(BatchItem {
            wave: clip.samples[start..start + crop].to_vec(),
            sine: clip.sine[start..start + crop].to_vec(),
            noise,
            vuv: clip.vuv_smooth[start..start + crop].to_vec(),
            cond_full: clip.cond_full.crop(start, crop),
            cond_channels: clip.cond_full.channels,
            cond_no_f0: clip.cond_no_f0.as_ref().map(|c| c.crop(start, crop)),
            len: crop,
        });
    }
    Ok(batch)
}

/// Scalar losses of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub stft: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub total: f64,
}

/// Everything mutable during a run.
pub struct Trainer {
    pub spec: ModelSpec,
    pub model: PeriodNetModel<f32>,
    pub bank: DiscriminatorBank<f32>,
    pub gen_opt: RAdamState<f32>,
    pub disc_opt: RAdamState<f32>,
    pub corpus: Corpus,
    pub schedule: TrainSchedule,
    weights: ObjectiveWeights,
    stft_cfg: crate::losses::StftLossConfig,
    config_echo: String,
}

impl Trainer {
    /// Fresh trainer from a config, or a bit-exact continuation of `resume`.
    pub fn new(cfg: &TrainConfig, resume: Option<&Checkpoint>) -> Result<(Self, u64)> {
        let spec = match resume {
            Some(ckpt) => ckpt.spec.clone(),
            None => ModelSpec::from_train_config(cfg)?,
        };
        let corpus = Corpus::load(cfg, spec.variant.aperiodic_drops_f0())?;
        let schedule = TrainSchedule::from_config(cfg);

        let mut model = spec.build_model(mix_seed(cfg.seed, MODEL_STREAM, 0))?;
        let mut bank = DiscriminatorBank::build(
            spec.discriminator.clone(),
            mix_seed(cfg.seed, MODEL_STREAM, 1),
        )?;

        let gen_stores: Vec<&crate::nets::ParamStore<f32>> = match &model.aperiodic {
            Some(a) => vec![&model.primary.params, &a.params],
            None => vec![&model.primary.params],
        };
        let mut gen_opt = RAdamState::new_multi(&gen_stores, cfg.gen_opt_params());
        let disc_stores: Vec<&crate::nets::ParamStore<f32>> =
            bank.stacks.iter().map(|s| &s.params).collect();
        let mut disc_opt = RAdamState::new_multi(&disc_stores, cfg.disc_opt_params());

        let start_iter = match resume {
            Some(ckpt) => {
                ckpt.restore_into(&mut model, &mut bank)?;
                gen_opt = ckpt.gen_opt.to_radam_multi(&gen_opt)?;
                disc_opt = ckpt.disc_opt.to_radam_multi(&disc_opt)?;
                ckpt.iteration
            }
            None => 0,
        };

        // Crops must cover the receptive fields, the largest analysis FFT,
        // and the deepest discriminator scale.
        let stft_cfg = cfg.stft_config();
        stft_cfg.validate()?;
        let min_crop = model
            .receptive_field()
            .max(stft_cfg.max_fft())
            .max(spec.discriminator.receptive_field() * 3);
        if schedule.crop_samples < min_crop {
            return Err(Error::usage(format!(
                "crop_samples {} below the minimum {min_crop} for this architecture",
                schedule.crop_samples
            )));
        }

        Ok((
            Trainer {
                spec,
                model,
                bank,
                gen_opt,
                disc_opt,
                corpus,
                schedule,
                weights: cfg.weights(),
                stft_cfg,
                config_echo: cfg.source_text.clone(),
            },
            start_iter,
        ))
    }

    /// One iteration: generator step (then discriminator step in the
    /// adversarial phase; the discriminator sees the pre-update generator's
    /// output).
    pub fn step(&mut self, iter: u64) -> Result<StepLosses> {
        let phase = self.schedule.phase(iter);
        let batch = sample_batch(&self.corpus, &self.schedule, iter)?;
        self.train_step(&batch, phase)
    }

    fn train_step(&mut self, batch: &[BatchItem], phase: Phase) -> Result<StepLosses> {
        let adversarial = phase == Phase::Adversarial;
        let inv_b = 1.0 / batch.len() as f32;

        // Generator pass.
        let mut graph = Graph::<f32>::new();
        let bound = self.model.bind(&mut graph, true)?;
        let bank_bound = if adversarial {
            Some(self.bank.bind(&mut graph, false)?)
        } else {
            None
        };
        let mut total: Option<crate::tensor::TensorId> = None;
        let mut stft_sum = 0.0;
        let mut adv_sum = 0.0;
        let mut fake_waves = Vec::with_capacity(batch.len());
        for item in batch {
            let t = item.len;
            let ex = ExcitationLeaves {
                sine: graph.leaf(item.sine.clone(), vec![1, t], false)?,
                noise: graph.leaf(item.noise.clone(), vec![1, t], false)?,
                vuv: graph.leaf(item.vuv.clone(), vec![1, t], false)?,
            };
            let cond = CondLeaves {
                full: graph.leaf(item.cond_full.clone(), vec![item.cond_channels, t], false)?,
                no_f0: item
                    .cond_no_f0
                    .as_ref()
                    .map(|c| graph.leaf(c.clone(), vec![item.cond_channels - 1, t], false))
                    .transpose()?,
            };
            let out = self.model.forward(&mut graph, &bound, ex, cond)?;
            let reference = graph.leaf(item.wave.clone(), vec![1, t], false)?;
            let weights = if adversarial {
                self.weights
            } else {
                ObjectiveWeights { lambda_adv: 0.0 }
            };
            let (loss, parts) = generator_objective(
                &mut graph,
                out.sum,
                reference,
                bank_bound.as_ref().map(|b| (&self.bank, b.as_slice())),
                weights,
                &self.stft_cfg,
            )?;
            stft_sum += parts.stft;
            adv_sum += parts.adversarial;
            fake_waves.push(graph.data(out.sum).to_vec());
            total = Some(match total {
                Some(acc) => graph.add(acc, loss)?,
                None => loss,
            });
        }
        let total = graph.affine(total.unwrap(), inv_b, 0.0)?;
        let total_value = graph.data(total)[0] as f64;
        if !total_value.is_finite() {
            return Err(Error::Numeric {
                detail: format!("generator loss became {total_value}"),
            });
        }
        graph.backward(total)?;

        let mut grads = self.model.primary.params.grads(&graph, &bound.primary)?;
        if let (Some(a), Some(ab)) = (&self.model.aperiodic, &bound.aperiodic) {
            grads.extend(a.params.grads(&graph, ab)?);
        }
        {
            let model = &mut self.model;
            let mut stores: Vec<&mut crate::nets::ParamStore<f32>> = match model.aperiodic.as_mut()
            {
                Some(a) => vec![&mut model.primary.params, &mut a.params],
                None => vec![&mut model.primary.params],
            };
            self.gen_opt.step_multi(&mut stores, &grads)?;
        }
        drop(graph);

        // Discriminator pass on the pre-update generator output.
        let mut adv_d = 0.0;
        if adversarial {
            let mut graph = Graph::<f32>::new();
            let bank_bound = self.bank.bind(&mut graph, true)?;
            let mut total: Option<crate::tensor::TensorId> = None;
            for (item, fake) in batch.iter().zip(&fake_waves) {
                let t = item.len;
                let real = graph.leaf(item.wave.clone(), vec![1, t], false)?;
                let fake = graph.leaf(fake.clone(), vec![1, t], false)?;
                let scores_real = self.bank.discriminate(&mut graph, &bank_bound, real)?;
                let scores_fake = self.bank.discriminate(&mut graph, &bank_bound, fake)?;
                let loss = adversarial_d_loss(&mut graph, &scores_real, &scores_fake)?;
                total = Some(match total {
                    Some(acc) => graph.add(acc, loss)?,
                    None => loss,
                });
            }
            let total = graph.affine(total.unwrap(), inv_b, 0.0)?;
            adv_d = graph.data(total)[0] as f64;
            if !adv_d.is_finite() {
                return Err(Error::Numeric {
                    detail: format!("discriminator loss became {adv_d}"),
                });
            }
            graph.backward(total)?;
            let mut grads = Vec::new();
            for (stack, b) in self.bank.stacks.iter().zip(&bank_bound) {
                grads.extend(stack.params.grads(&graph, b)?);
            }
            let mut stores: Vec<&mut crate::nets::ParamStore<f32>> = self
                .bank
                .stacks
                .iter_mut()
                .map(|s| &mut s.params)
                .collect();
            self.disc_opt.step_multi(&mut stores, &grads)?;
        }

        let b = batch.len() as f64;
        Ok(StepLosses {
            stft: stft_sum / b,
            adv_g: adv_sum / b,
            adv_d,
            total: total_value,
        })
    }

    /// Capture the current state as a checkpoint.
    pub fn checkpoint(&self, iteration: u64) -> Checkpoint {
        Checkpoint::capture(
            &self.spec,
            iteration,
            &self.model,
            &self.bank,
            &self.gen_opt,
            &self.disc_opt,
            &self.corpus.normalizer,
            &self.config_echo,
        )
    }
}

/// Loss-log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLosses {
    pub iter: u64,
    pub losses: StepLosses,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub losses: Vec<IterLosses>,
}

/// Run the full schedule from scratch.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_resume(cfg, None)
}

/// Run the schedule, optionally continuing from a checkpoint. The loss CSV
/// is created fresh for new runs and appended to when resuming.
pub fn train_with_resume(cfg: &TrainConfig, resume: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let (mut trainer, start_iter) = Trainer::new(cfg, resume)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join("losses.csv");
    let mut log = if start_iter == 0 {
        let mut f = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
        writeln!(f, "iter,stft_loss,adv_g,adv_d,total").map_err(|e| Error::io(&log_path, e))?;
        f
    } else {
        BufWriter::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)
                .map_err(|e| Error::io(&log_path, e))?,
        )
    };

    let mut losses = Vec::new();
    for iter in start_iter + 1..=trainer.schedule.total_iters {
        let step = trainer.step(iter)?;
        writeln!(
            log,
            "{},{},{},{},{}",
            iter, step.stft, step.adv_g, step.adv_d, step.total
        )
        .map_err(|e| Error::io(&log_path, e))?;
        losses.push(IterLosses { iter, losses: step });
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 && iter != trainer.schedule.total_iters
        {
            let path = cfg.out_dir.join(format!("checkpoint_{iter:07}.pnck"));
            trainer.checkpoint(iter).save(&path)?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let final_path = cfg.out_dir.join("checkpoint_final.pnck");
    trainer
        .checkpoint(trainer.schedule.total_iters)
        .save(&final_path)?;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        loss_log: log_path,
        losses,
    })
}
