//! Explicit per-sample input signals for the generators: sine wave, Gaussian
//! noise, and a smoothed voiced/unvoiced envelope, plus F0-contour utilities
//! including pitch scaling for synthesis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Frame-rate F0 track. `frame_values` holds Hz with 0 marking unvoiced
/// frames; `continuous_log_f0` interpolates through unvoiced gaps in the log
/// domain so it is finite everywhere.
#[derive(Debug, Clone)]
pub struct F0Contour {
    pub frame_values: Vec<f64>,
    /// Seconds per frame (0.005 for a 5 ms shift).
    pub frame_shift: f64,
    pub continuous_log_f0: Vec<f64>,
    pub vuv: Vec<u8>,
}

impl F0Contour {
    /// Build from raw per-frame Hz values (0 = unvoiced). Fails when no frame
    /// is voiced.
    pub fn from_frames(frame_values: Vec<f64>, frame_shift: f64) -> Result<Self> {
        let continuous_log_f0 = interpolate_f0(&frame_values)?;
        let vuv = frame_values.iter().map(|&f| (f > 0.0) as u8).collect();
        Ok(F0Contour {
            frame_values,
            frame_shift,
            continuous_log_f0,
            vuv,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frame_values.len()
    }

    /// Samples per frame at the given rate; must divide evenly.
    pub fn hop(&self, sample_rate: f64) -> Result<usize> {
        let exact = self.frame_shift * sample_rate;
        let hop = exact.round();
        if (exact - hop).abs() > 1e-6 || hop < 1.0 {
            return Err(Error::InvalidArgument {
                context: "hop",
                detail: format!(
                    "frame shift {} s at {} Hz is not an integer hop",
                    self.frame_shift, sample_rate
                ),
            });
        }
        Ok(hop as usize)
    }

    /// Multiply voiced F0 by `factor` (continuous log-F0 shifts by ln factor).
    /// The scaled contour must stay below Nyquist for `sample_rate`.
    pub fn scale(&self, factor: f64, sample_rate: f64) -> Result<F0Contour> {
        if factor <= 0.0 {
            return Err(Error::InvalidArgument {
                context: "scale_f0",
                detail: format!("factor {factor} must be positive"),
            });
        }
        let max_f0 = self.frame_values.iter().cloned().fold(0.0, f64::max);
        if factor * max_f0 >= sample_rate / 2.0 {
            return Err(Error::Nyquist {
                f0_hz: factor * max_f0,
                sample_rate,
            });
        }
        Ok(F0Contour {
            frame_values: self
                .frame_values
                .iter()
                .map(|&f| if f > 0.0 { f * factor } else { 0.0 })
                .collect(),
            frame_shift: self.frame_shift,
            continuous_log_f0: self
                .continuous_log_f0
                .iter()
                .map(|&l| l + factor.ln())
                .collect(),
            vuv: self.vuv.clone(),
        })
    }

    /// Per-sample F0 in Hz: linear interpolation between frame centers, held
    /// flat before the first and after the last center. Length is
    /// `n_frames * hop`.
    pub fn upsample(&self, sample_rate: f64) -> Result<Vec<f64>> {
        let hop = self.hop(sample_rate)?;
        Ok(upsample_frame_track(&self.frame_values, hop))
    }

    /// Per-sample binary V/UV (frame value repeated across its hop).
    pub fn vuv_per_sample(&self, sample_rate: f64) -> Result<Vec<f64>> {
        let hop = self.hop(sample_rate)?;
        let mut out = Vec::with_capacity(self.vuv.len() * hop);
        for &v in &self.vuv {
            out.extend(std::iter::repeat(v as f64).take(hop));
        }
        Ok(out)
    }
}

/// Continuous log-F0: voiced frames keep ln(F0); unvoiced gaps are linearly
/// interpolated in the log domain, and leading/trailing gaps hold the nearest
/// voiced value.
pub fn interpolate_f0(frame_values: &[f64]) -> Result<Vec<f64>> {
    let voiced: Vec<usize> = frame_values
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0.0)
        .map(|(i, _)| i)
        .collect();
    if voiced.is_empty() {
        return Err(Error::AllUnvoiced);
    }
    let mut out = vec![0.0; frame_values.len()];
    for &i in &voiced {
        out[i] = frame_values[i].ln();
    }
    let first = voiced[0];
    let last = *voiced.last().unwrap();
    for i in 0..first {
        out[i] = out[first];
    }
    for i in last + 1..out.len() {
        out[i] = out[last];
    }
    for w in voiced.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a > 1 {
            let (ya, yb) = (out[a], out[b]);
            for i in a + 1..b {
                let t = (i - a) as f64 / (b - a) as f64;
                out[i] = ya + t * (yb - ya);
            }
        }
    }
    Ok(out)
}

/// Linear interpolation between frame centers (frame n anchored at sample
/// n*hop + hop/2), held flat outside the centers.
fn upsample_frame_track(frames: &[f64], hop: usize) -> Vec<f64> {
    let n = frames.len();
    let total = n * hop;
    let mut out = Vec::with_capacity(total);
    if n == 1 {
        out.resize(total, frames[0]);
        return out;
    }
    let half = hop as f64 / 2.0;
    for t in 0..total {
        let pos = (t as f64 - half) / hop as f64;
        if pos <= 0.0 {
            out.push(frames[0]);
        } else if pos >= (n - 1) as f64 {
            out.push(frames[n - 1]);
        } else {
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            out.push(frames[i] * (1.0 - frac) + frames[i + 1] * frac);
        }
    }
    out
}

/// Sine excitation from a per-sample F0 track.
///
/// Phase accumulates as phi[t] = phi[t-1] + 2 pi f0[t] / fs and is held (not
/// reset) across unvoiced gaps; the output is gated to zero wherever the
/// smoothed V/UV envelope is zero.
pub fn gen_sine(
    f0_per_sample: &[f64],
    vuv_smooth: &[f64],
    sample_rate: f64,
    amplitude: f64,
    initial_phase: f64,
) -> Result<Vec<f64>> {
    if f0_per_sample.len() != vuv_smooth.len() {
        return Err(Error::ShapeMismatch {
            context: "gen_sine",
            detail: format!("{} f0 vs {} vuv samples", f0_per_sample.len(), vuv_smooth.len()),
        });
    }
    let nyquist = sample_rate / 2.0;
    let tau = 2.0 * std::f64::consts::PI;
    let mut phase = initial_phase.rem_euclid(tau);
    let mut out = Vec::with_capacity(f0_per_sample.len());
    for (&f0, &vs) in f0_per_sample.iter().zip(vuv_smooth) {
        if f0 < 0.0 || f0 >= nyquist {
            return Err(Error::Nyquist {
                f0_hz: f0,
                sample_rate,
            });
        }
        phase = (phase + tau * f0 / sample_rate).rem_euclid(tau);
        out.push(if vs > 0.0 { amplitude * phase.sin() } else { 0.0 });
    }
    Ok(out)
}

/// Seeded i.i.d. standard Gaussian noise.
pub fn gen_noise(length: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

/// Zero-phase Hann moving average over a binary V/UV sequence, clamped to
/// [0, 1]. A zero-width window is the identity. Edges replicate the boundary
/// value so constant inputs stay constant.
pub fn smooth_vuv(vuv_per_sample: &[f64], window_ms: f64, sample_rate: f64) -> Vec<f64> {
    let width = (window_ms * sample_rate / 1000.0).round() as usize;
    if width < 2 || vuv_per_sample.is_empty() {
        return vuv_per_sample.to_vec();
    }
    let taps = width / 2 * 2 + 1;
    let mut kernel = Vec::with_capacity(taps);
    for j in 0..taps {
        let phase = 2.0 * std::f64::consts::PI * j as f64 / (taps - 1) as f64;
        kernel.push(0.5 - 0.5 * phase.cos());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let half = taps as isize / 2;
    let n = vuv_per_sample.len() as isize;
    let mut out = Vec::with_capacity(vuv_per_sample.len());
    for t in 0..n {
        let mut acc = 0.0;
        for (j, &k) in kernel.iter().enumerate() {
            let idx = (t + j as isize - half).clamp(0, n - 1) as usize;
            acc += k * vuv_per_sample[idx];
        }
        out.push(acc.clamp(0.0, 1.0));
    }
    out
}

/// Aligned per-sample generator inputs.
#[derive(Debug, Clone)]
pub struct ExcitationSet {
    pub sine: Vec<f64>,
    pub noise: Vec<f64>,
    pub vuv_smooth: Vec<f64>,
    pub sample_rate: f64,
}

/// Knobs for building an [`ExcitationSet`]; defaults match training.
#[derive(Debug, Clone, Copy)]
pub struct ExcitationParams {
    pub sine_amplitude: f64,
    pub vuv_window_ms: f64,
    pub initial_phase: f64,
    pub noise_seed: u64,
}

impl Default for ExcitationParams {
    fn default() -> Self {
        ExcitationParams {
            sine_amplitude: 0.1,
            vuv_window_ms: 10.0,
            initial_phase: 0.0,
            noise_seed: 0,
        }
    }
}

impl ExcitationSet {
    /// Build all three signals from a contour. All sequences come out at
    /// `n_frames * hop` samples.
    pub fn build(contour: &F0Contour, sample_rate: f64, params: ExcitationParams) -> Result<Self> {
        let f0 = contour.upsample(sample_rate)?;
        let vuv = contour.vuv_per_sample(sample_rate)?;
        let vuv_smooth = smooth_vuv(&vuv, params.vuv_window_ms, sample_rate);
        let sine = gen_sine(
            &f0,
            &vuv_smooth,
            sample_rate,
            params.sine_amplitude,
            params.initial_phase,
        )?;
        let noise = gen_noise(sine.len(), params.noise_seed);
        Ok(ExcitationSet {
            sine,
            noise,
            vuv_smooth,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.sine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sine.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolate_constant_voiced() {
        let out = interpolate_f0(&[200.0, 200.0, 200.0]).unwrap();
        for v in out {
            assert!((v - 200f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolate_gap_is_log_linear() {
        let out = interpolate_f0(&[200.0, 0.0, 0.0, 400.0]).unwrap();
        let (a, b) = (200f64.ln(), 400f64.ln());
        assert!((out[0] - a).abs() < 1e-12);
        assert!((out[1] - (a + (b - a) / 3.0)).abs() < 1e-12);
        assert!((out[2] - (a + 2.0 * (b - a) / 3.0)).abs() < 1e-12);
        assert!((out[3] - b).abs() < 1e-12);
    }

    #[test]
    fn interpolate_all_unvoiced_fails() {
        assert!(matches!(
            interpolate_f0(&[0.0, 0.0]),
            Err(Error::AllUnvoiced)
        ));
    }

    #[test]
    fn interpolate_holds_edges() {
        let out = interpolate_f0(&[0.0, 100.0, 0.0]).unwrap();
        assert!((out[0] - 100f64.ln()).abs() < 1e-12);
        assert!((out[2] - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn upsample_constant_and_hop_arithmetic() {
        let c = F0Contour::from_frames(vec![100.0, 100.0], 0.005).unwrap();
        assert_eq!(c.hop(48_000.0).unwrap(), 240);
        let up = c.upsample(48_000.0).unwrap();
        assert_eq!(up.len(), 480);
        assert!(up.iter().all(|&v| (v - 100.0).abs() < 1e-12));
    }

    #[test]
    fn upsample_ramps_between_centers() {
        let c = F0Contour::from_frames(vec![100.0, 200.0], 0.005).unwrap();
        let up = c.upsample(48_000.0).unwrap();
        assert_eq!(up[0], 100.0);
        assert_eq!(up[479], 200.0);
        // Midpoint between the two frame centers (samples 120 and 360).
        assert!((up[240] - 150.0).abs() < 0.5);
        let mut prev = up[0];
        for &v in &up {
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn upsample_rejects_non_integer_hop() {
        let c = F0Contour::from_frames(vec![100.0], 0.005).unwrap();
        assert!(c.upsample(44_100.0).is_err());
    }

    #[test]
    fn sine_quarter_cycle_pattern() {
        let f0 = vec![12_000.0; 8];
        let vuv = vec![1.0; 8];
        let s = gen_sine(&f0, &vuv, 48_000.0, 1.0, 0.0).unwrap();
        let expect = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
        for (got, want) in s.iter().zip(expect) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn sine_gated_by_vuv() {
        let f0 = vec![100.0; 16];
        let vuv = vec![0.0; 16];
        let s = gen_sine(&f0, &vuv, 48_000.0, 0.5, 1.0).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_phase_held_through_gaps() {
        let f0 = vec![12_000.0; 8];
        let mut vuv = vec![1.0; 8];
        vuv[2] = 0.0;
        vuv[3] = 0.0;
        let gated = gen_sine(&f0, &vuv, 48_000.0, 1.0, 0.0).unwrap();
        let full = gen_sine(&f0, &vec![1.0; 8], 48_000.0, 1.0, 0.0).unwrap();
        assert_eq!(gated[2], 0.0);
        assert_eq!(gated[3], 0.0);
        for i in [0usize, 1, 4, 5, 6, 7] {
            assert!((gated[i] - full[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_rejects_nyquist() {
        let f0 = vec![24_000.0];
        assert!(matches!(
            gen_sine(&f0, &[1.0], 48_000.0, 1.0, 0.0),
            Err(Error::Nyquist { .. })
        ));
    }

    #[test]
    fn sine_zero_crossing_spacing() {
        let f0 = vec![200.0; 48_000];
        let vuv = vec![1.0; 48_000];
        let s = gen_sine(&f0, &vuv, 48_000.0, 1.0, 0.1).unwrap();
        let mut crossings = Vec::new();
        for t in 1..s.len() {
            if s[t - 1] <= 0.0 && s[t] > 0.0 || s[t - 1] >= 0.0 && s[t] < 0.0 {
                crossings.push(t);
            }
        }
        let expected = 48_000.0 / (2.0 * 200.0);
        for w in crossings.windows(2) {
            let gap = (w[1] - w[0]) as f64;
            assert!((gap - expected).abs() <= 1.0, "gap {gap}");
        }
    }

    #[test]
    fn noise_is_reproducible_and_standard() {
        assert_eq!(gen_noise(64, 7), gen_noise(64, 7));
        assert!(gen_noise(0, 7).is_empty());
        let n = gen_noise(1_000_000, 123);
        let mean: f64 = n.iter().sum::<f64>() / n.len() as f64;
        let var: f64 = n.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn smooth_vuv_preserves_constants() {
        let ones = vec![1.0; 2000];
        let sm = smooth_vuv(&ones, 10.0, 48_000.0);
        assert!(sm.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        let zeros = vec![0.0; 2000];
        assert!(smooth_vuv(&zeros, 10.0, 48_000.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smooth_vuv_step_is_monotone_ramp() {
        let mut step = vec![0.0; 2000];
        for v in step.iter_mut().skip(1000) {
            *v = 1.0;
        }
        let sm = smooth_vuv(&step, 10.0, 48_000.0);
        let width = 481;
        for t in 0..(1000 - width / 2 - 1) {
            assert!(sm[t] < 1e-9, "t={t} -> {}", sm[t]);
        }
        for t in (1000 + width / 2 + 1)..2000 {
            assert!((sm[t] - 1.0).abs() < 1e-9);
        }
        for t in (1000 - width / 2)..(1000 + width / 2) {
            assert!(sm[t + 1] >= sm[t] - 1e-12);
        }
    }

    #[test]
    fn smooth_vuv_zero_window_is_identity() {
        let x = vec![0.0, 1.0, 0.0, 1.0];
        assert_eq!(smooth_vuv(&x, 0.0, 48_000.0), x);
    }

    #[test]
    fn scale_f0_identity_and_double() {
        let c = F0Contour::from_frames(vec![200.0, 0.0, 200.0], 0.005).unwrap();
        let same = c.scale(1.0, 48_000.0).unwrap();
        assert_eq!(same.frame_values, c.frame_values);
        let doubled = c.scale(2.0, 48_000.0).unwrap();
        assert_eq!(doubled.frame_values[0], 400.0);
        assert_eq!(doubled.frame_values[1], 0.0);
        assert!(
            (doubled.continuous_log_f0[0] - (c.continuous_log_f0[0] + 2f64.ln())).abs() < 1e-12
        );
        assert_eq!(doubled.vuv, c.vuv);
    }

    #[test]
    fn scale_f0_composes_in_log_domain() {
        let c = F0Contour::from_frames(vec![150.0, 300.0], 0.005).unwrap();
        let ab = c.scale(1.5, 48_000.0).unwrap().scale(2.0, 48_000.0).unwrap();
        let once = c.scale(3.0, 48_000.0).unwrap();
        for (x, y) in ab.frame_values.iter().zip(&once.frame_values) {
            assert!((x - y).abs() <= f64::EPSILON * x.abs());
        }
    }

    #[test]
    fn scale_f0_rejects_nyquist() {
        let c = F0Contour::from_frames(vec![20_000.0], 0.005).unwrap();
        assert!(matches!(
            c.scale(2.0, 48_000.0),
            Err(Error::Nyquist { .. })
        ));
    }

    #[test]
    fn excitation_set_lengths_align() {
        let c = F0Contour::from_frames(vec![220.0, 220.0, 0.0, 220.0], 0.005).unwrap();
        let ex = ExcitationSet::build(&c, 48_000.0, ExcitationParams::default()).unwrap();
        assert_eq!(ex.len(), 4 * 240);
        assert_eq!(ex.noise.len(), ex.sine.len());
        assert_eq!(ex.vuv_smooth.len(), ex.sine.len());
        for (&s, &v) in ex.sine.iter().zip(&ex.vuv_smooth) {
            assert!((0.0..=1.0).contains(&v));
            if v == 0.0 {
                assert_eq!(s, 0.0);
            }
        }
    }
}
