//! Training objectives: multi-resolution STFT loss and least-squares
//! adversarial terms over the discriminator bank.
//!
//! The generator objective only ever sees the summed waveform; component
//! waveforms never appear in any loss term.

use crate::error::{Error, Result};
use crate::nets::DiscriminatorBank;
use crate::tensor::{sc, Graph, Scalar, TensorId, MAGNITUDE_EPS};

/// One STFT analysis setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftResolution {
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
}

/// Resolutions and magnitude floor of the spectral loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StftLossConfig {
    pub resolutions: Vec<StftResolution>,
    pub eps: f64,
}

impl Default for StftLossConfig {
    /// Three analysis settings for 48 kHz material.
    fn default() -> Self {
        StftLossConfig {
            resolutions: vec![
                StftResolution {
                    fft_size: 2048,
                    hop: 240,
                    win_length: 1200,
                },
                StftResolution {
                    fft_size: 4096,
                    hop: 480,
                    win_length: 2400,
                },
                StftResolution {
                    fft_size: 1024,
                    hop: 100,
                    win_length: 480,
                },
            ],
            eps: MAGNITUDE_EPS,
        }
    }
}

impl StftLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::InvalidArgument {
                context: "stft loss config",
                detail: "need at least one resolution".into(),
            });
        }
        for r in &self.resolutions {
            if r.win_length > r.fft_size {
                return Err(Error::InvalidArgument {
                    context: "stft loss config",
                    detail: format!("win {} > fft {}", r.win_length, r.fft_size),
                });
            }
        }
        Ok(())
    }

    pub fn max_fft(&self) -> usize {
        self.resolutions.iter().map(|r| r.fft_size).max().unwrap_or(0)
    }
}

/// Relative weight of the adversarial term in the generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub lambda_adv: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights { lambda_adv: 4.0 }
    }
}

fn check_pair<S: Scalar>(
    graph: &Graph<S>,
    estimate: TensorId,
    reference: TensorId,
) -> Result<usize> {
    let t = match graph.shape(estimate) {
        [t] => *t,
        other => {
            return Err(Error::ShapeMismatch {
                context: "stft loss",
                detail: format!("expected [T], got {other:?}"),
            })
        }
    };
    if graph.shape(reference) != [t] {
        return Err(Error::ShapeMismatch {
            context: "stft loss",
            detail: format!("{:?} vs {:?}", graph.shape(estimate), graph.shape(reference)),
        });
    }
    Ok(t)
}

/// Frobenius-normalized magnitude error: ||X - X_hat||_F / ||X||_F.
pub fn spectral_convergence<S: Scalar>(
    graph: &mut Graph<S>,
    estimate: TensorId,
    reference: TensorId,
    res: StftResolution,
) -> Result<TensorId> {
    check_pair(graph, estimate, reference)?;
    let mag_est = graph.stft_magnitude(estimate, res.fft_size, res.hop, res.win_length)?;
    let mag_ref = graph.stft_magnitude(reference, res.fft_size, res.hop, res.win_length)?;
    spectral_convergence_from_mags(graph, mag_est, mag_ref)
}

fn spectral_convergence_from_mags<S: Scalar>(
    graph: &mut Graph<S>,
    mag_est: TensorId,
    mag_ref: TensorId,
) -> Result<TensorId> {
    let diff = graph.sub(mag_ref, mag_est)?;
    let diff_sq = graph.mul(diff, diff)?;
    let num_sq = graph.sum(diff_sq)?;
    let ref_sq = graph.mul(mag_ref, mag_ref)?;
    let den_sq = graph.sum(ref_sq)?;
    // A silent reference makes the ratio meaningless. The clamp floor keeps
    // den_sq strictly positive, so compare against the all-eps level.
    let floor = sc::<S>(MAGNITUDE_EPS * MAGNITUDE_EPS)
        * sc::<S>(graph.numel(mag_ref) as f64)
        * sc::<S>(1.0 + 1e-6);
    if graph.data(den_sq)[0] <= floor {
        return Err(Error::InvalidArgument {
            context: "spectral_convergence",
            detail: "reference signal has zero spectral energy".into(),
        });
    }
    let num = graph.sqrt(num_sq)?;
    let den = graph.sqrt(den_sq)?;
    graph.div(num, den)
}

/// Mean absolute difference of log magnitudes.
pub fn log_stft_magnitude_loss<S: Scalar>(
    graph: &mut Graph<S>,
    estimate: TensorId,
    reference: TensorId,
    res: StftResolution,
) -> Result<TensorId> {
    check_pair(graph, estimate, reference)?;
    let mag_est = graph.stft_magnitude(estimate, res.fft_size, res.hop, res.win_length)?;
    let mag_ref = graph.stft_magnitude(reference, res.fft_size, res.hop, res.win_length)?;
    log_mag_from_mags(graph, mag_est, mag_ref)
}

fn log_mag_from_mags<S: Scalar>(
    graph: &mut Graph<S>,
    mag_est: TensorId,
    mag_ref: TensorId,
) -> Result<TensorId> {
    let eps = sc::<S>(MAGNITUDE_EPS);
    let log_est = graph.log_clamped(mag_est, eps)?;
    let log_ref = graph.log_clamped(mag_ref, eps)?;
    let diff = graph.sub(log_ref, log_est)?;
    let abs = graph.abs(diff)?;
    graph.mean(abs)
}

/// Average over resolutions of spectral convergence + log-magnitude loss.
pub fn mr_stft_loss<S: Scalar>(
    graph: &mut Graph<S>,
    estimate: TensorId,
    reference: TensorId,
    cfg: &StftLossConfig,
) -> Result<TensorId> {
    cfg.validate()?;
    let t = check_pair(graph, estimate, reference)?;
    if t < cfg.max_fft() {
        return Err(Error::InvalidArgument {
            context: "mr_stft_loss",
            detail: format!("signal of {t} samples shorter than max fft {}", cfg.max_fft()),
        });
    }
    let mut total: Option<TensorId> = None;
    for res in &cfg.resolutions {
        let mag_est = graph.stft_magnitude(estimate, res.fft_size, res.hop, res.win_length)?;
        let mag_ref = graph.stft_magnitude(reference, res.fft_size, res.hop, res.win_length)?;
        let sc_term = spectral_convergence_from_mags(graph, mag_est, mag_ref)?;
        let lm_term = log_mag_from_mags(graph, mag_est, mag_ref)?;
        let pair = graph.add(sc_term, lm_term)?;
        total = Some(match total {
            Some(acc) => graph.add(acc, pair)?,
            None => pair,
        });
    }
    let m = cfg.resolutions.len() as f64;
    graph.affine(total.unwrap(), sc::<S>(1.0 / m), S::zero())
}

/// Least-squares generator loss: mean over scales and positions of
/// (1 - D(x_hat))^2.
pub fn adversarial_g_loss<S: Scalar>(
    graph: &mut Graph<S>,
    scores_on_generated: &[TensorId],
) -> Result<TensorId> {
    if scores_on_generated.is_empty() {
        return Err(Error::InvalidArgument {
            context: "adversarial_g_loss",
            detail: "no discriminator scores".into(),
        });
    }
    let mut total: Option<TensorId> = None;
    for &s in scores_on_generated {
        let one_minus = graph.affine(s, -S::one(), S::one())?;
        let sq = graph.mul(one_minus, one_minus)?;
        let m = graph.mean(sq)?;
        total = Some(match total {
            Some(acc) => graph.add(acc, m)?,
            None => m,
        });
    }
    let n = scores_on_generated.len() as f64;
    graph.affine(total.unwrap(), sc::<S>(1.0 / n), S::zero())
}

/// Least-squares discriminator loss: mean over scales of
/// mean[(1 - D(x))^2] + mean[D(x_hat)^2].
pub fn adversarial_d_loss<S: Scalar>(
    graph: &mut Graph<S>,
    scores_real: &[TensorId],
    scores_fake: &[TensorId],
) -> Result<TensorId> {
    if scores_real.is_empty() || scores_real.len() != scores_fake.len() {
        return Err(Error::InvalidArgument {
            context: "adversarial_d_loss",
            detail: format!(
                "scale counts differ: {} real vs {} fake",
                scores_real.len(),
                scores_fake.len()
            ),
        });
    }
    let mut total: Option<TensorId> = None;
    for (&r, &f) in scores_real.iter().zip(scores_fake) {
        let one_minus = graph.affine(r, -S::one(), S::one())?;
        let real_sq = graph.mul(one_minus, one_minus)?;
        let real_term = graph.mean(real_sq)?;
        let fake_sq = graph.mul(f, f)?;
        let fake_term = graph.mean(fake_sq)?;
        let pair = graph.add(real_term, fake_term)?;
        total = Some(match total {
            Some(acc) => graph.add(acc, pair)?,
            None => pair,
        });
    }
    let n = scores_real.len() as f64;
    graph.affine(total.unwrap(), sc::<S>(1.0 / n), S::zero())
}

/// Scalar parts of one generator objective evaluation, for logging.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossParts {
    pub stft: f64,
    pub adversarial: f64,
    pub total: f64,
}

/// Full generator objective on the summed waveform:
/// mr_stft + lambda_adv * adversarial. Pass `bank_bound = None` (or a zero
/// weight) for the STFT-only warmup phase.
pub fn generator_objective<S: Scalar>(
    graph: &mut Graph<S>,
    sum_waveform: TensorId,
    reference: TensorId,
    bank: Option<(&DiscriminatorBank<S>, &[Vec<TensorId>])>,
    weights: ObjectiveWeights,
    cfg: &StftLossConfig,
) -> Result<(TensorId, GeneratorLossParts)> {
    // Losses consume the 1-D view of the [1, T] waveforms.
    let t = graph.numel(sum_waveform);
    let est = graph.reshape(sum_waveform, vec![t])?;
    let refr = graph.reshape(reference, vec![t])?;
    let stft = mr_stft_loss(graph, est, refr, cfg)?;
    let stft_value = graph.data(stft)[0].to_f64().unwrap();

    if weights.lambda_adv == 0.0 || bank.is_none() {
        return Ok((
            stft,
            GeneratorLossParts {
                stft: stft_value,
                adversarial: 0.0,
                total: stft_value,
            },
        ));
    }
    let (bank, bound) = bank.unwrap();
    let wave2d = graph.reshape(est, vec![1, t])?;
    let scores = bank.discriminate(graph, bound, wave2d)?;
    let adv = adversarial_g_loss(graph, &scores)?;
    let adv_value = graph.data(adv)[0].to_f64().unwrap();
    let weighted = graph.affine(adv, sc::<S>(weights.lambda_adv), S::zero())?;
    let total = graph.add(stft, weighted)?;
    Ok((
        total,
        GeneratorLossParts {
            stft: stft_value,
            adversarial: adv_value,
            total: graph.data(total)[0].to_f64().unwrap(),
        },
    ))
}
