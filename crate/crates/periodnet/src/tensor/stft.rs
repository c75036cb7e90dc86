//! Differentiable STFT magnitude.
//!
//! Frames are centered (reflection padding of fft_size/2 on each side), the
//! window is a periodic Hann of `win_length` zero-padded symmetrically to
//! `fft_size`, and the output is the one-sided magnitude spectrogram
//! `[fft_size/2 + 1, n_frames]` with `n_frames = T / hop + 1`.
//!
//! The magnitude is clamped from below at [`MAGNITUDE_EPS`] so the gradient
//! d|z|/dz stays defined at the origin: clamped cells pass zero gradient.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{sc, Graph, Op, OpCtx, Scalar, TensorId};
use crate::error::{Error, Result};
use crate::util::pool;

/// Lower clamp applied to STFT magnitudes (and the default floor for log
/// spectral losses).
pub const MAGNITUDE_EPS: f64 = 1e-7;

/// Reflection index without edge repetition: -1 maps to 1, T maps to T-2.
fn reflect(mut i: isize, len: usize) -> usize {
    let n = len as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Periodic Hann window of `win` samples, zero-padded into an `fft`-length
/// buffer at offset (fft - win) / 2.
fn padded_hann<S: Scalar>(fft: usize, win: usize) -> Vec<S> {
    let mut w = vec![S::zero(); fft];
    let off = (fft - win) / 2;
    for j in 0..win {
        let phase = 2.0 * std::f64::consts::PI * j as f64 / win as f64;
        w[off + j] = sc::<S>(0.5 - 0.5 * phase.cos());
    }
    w
}

struct StftMagnitudeOp<S: Scalar> {
    fft_size: usize,
    hop: usize,
    n_frames: usize,
    t_in: usize,
    pad: usize,
    window: Vec<S>,
    /// One-sided spectra per frame, saved for the magnitude adjoint.
    spectra: Vec<Vec<Complex<S>>>,
    inverse: Arc<dyn Fft<S>>,
}

impl<S: Scalar> std::fmt::Debug for StftMagnitudeOp<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftMagnitudeOp")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .field("n_frames", &self.n_frames)
            .finish()
    }
}

impl<S: Scalar> Op<S> for StftMagnitudeOp<S> {
    fn backward(&self, ctx: OpCtx<'_, S>) -> Vec<Option<Vec<S>>> {
        if !ctx.needs[0] {
            return vec![None];
        }
        let bins = self.fft_size / 2 + 1;
        let eps = sc::<S>(MAGNITUDE_EPS);
        let grad = ctx.grad_out;

        // Per-frame adjoint: A[f] = g[f] * X[f] / |X[f]| for unclamped cells,
        // then d(frame)/dt = Re(unnormalized IFFT(A)) over the full spectrum
        // with the unexposed upper bins at zero.
        let frame_grads: Vec<Vec<S>> = pool().install(|| {
            (0..self.n_frames)
                .into_par_iter()
                .map(|n| {
                    let mut buf = vec![Complex::new(S::zero(), S::zero()); self.fft_size];
                    for f in 0..bins {
                        let x = self.spectra[n][f];
                        let m = x.norm();
                        if m > eps {
                            let g = grad[f * self.n_frames + n];
                            buf[f] = x * (g / m);
                        }
                    }
                    self.inverse.process(&mut buf);
                    buf.iter()
                        .zip(&self.window)
                        .map(|(c, &w)| c.re * w)
                        .collect()
                })
                .collect()
        });

        // Overlap-add into padded coordinates, then fold the reflection
        // padding back onto the source signal. Serial for a fixed
        // accumulation order.
        let padded_len = self.t_in + 2 * self.pad;
        let mut gpad = vec![S::zero(); padded_len];
        for (n, fg) in frame_grads.iter().enumerate() {
            let start = n * self.hop;
            for (t, &v) in fg.iter().enumerate() {
                gpad[start + t] = gpad[start + t] + v;
            }
        }
        let mut gx = vec![S::zero(); self.t_in];
        for (p, &v) in gpad.iter().enumerate() {
            let s = reflect(p as isize - self.pad as isize, self.t_in);
            gx[s] = gx[s] + v;
        }
        vec![Some(gx)]
    }
}

impl<S: Scalar> Graph<S> {
    /// One-sided magnitude spectrogram of a 1-D signal, differentiable with
    /// respect to the signal.
    pub fn stft_magnitude(
        &mut self,
        x: TensorId,
        fft_size: usize,
        hop: usize,
        win_length: usize,
    ) -> Result<TensorId> {
        let t_in = match self.shape(x) {
            [t] => *t,
            other => {
                return Err(Error::ShapeMismatch {
                    context: "stft_magnitude",
                    detail: format!("expected [T], got {other:?}"),
                })
            }
        };
        if win_length > fft_size {
            return Err(Error::InvalidArgument {
                context: "stft_magnitude",
                detail: format!("win_length {win_length} > fft_size {fft_size}"),
            });
        }
        if hop < 1 || win_length < 1 || fft_size < 2 || fft_size % 2 != 0 {
            return Err(Error::InvalidArgument {
                context: "stft_magnitude",
                detail: "need hop >= 1, win >= 1, even fft_size >= 2".into(),
            });
        }
        let pad = fft_size / 2;
        if t_in < 2 || t_in <= pad {
            return Err(Error::InvalidArgument {
                context: "stft_magnitude",
                detail: format!("signal length {t_in} too short for fft_size {fft_size}"),
            });
        }

        let n_frames = t_in / hop + 1;
        let bins = fft_size / 2 + 1;
        let window = padded_hann::<S>(fft_size, win_length);

        let mut planner = FftPlanner::<S>::new();
        let forward = planner.plan_fft_forward(fft_size);
        let inverse = planner.plan_fft_inverse(fft_size);

        let xd = self.data(x);
        let mut padded = Vec::with_capacity(t_in + 2 * pad);
        for p in 0..t_in + 2 * pad {
            padded.push(xd[reflect(p as isize - pad as isize, t_in)]);
        }

        let spectra: Vec<Vec<Complex<S>>> = pool().install(|| {
            (0..n_frames)
                .into_par_iter()
                .map(|n| {
                    let start = n * hop;
                    let mut buf: Vec<Complex<S>> = padded[start..start + fft_size]
                        .iter()
                        .zip(&window)
                        .map(|(&v, &w)| Complex::new(v * w, S::zero()))
                        .collect();
                    forward.process(&mut buf);
                    buf.truncate(bins);
                    buf
                })
                .collect()
        });

        let eps = sc::<S>(MAGNITUDE_EPS);
        let mut data = vec![S::zero(); bins * n_frames];
        for (n, spec) in spectra.iter().enumerate() {
            for (f, c) in spec.iter().enumerate() {
                data[f * n_frames + n] = c.norm().max(eps);
            }
        }

        let op = StftMagnitudeOp {
            fft_size,
            hop,
            n_frames,
            t_in,
            pad,
            window,
            spectra,
            inverse,
        };
        Ok(self.push_op(Box::new(op), vec![x], data, vec![bins, n_frames]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(0, 5), 0);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
    }

    #[test]
    fn pure_sine_has_single_dominant_bin() {
        // f = fs/8 puts all energy in bin fft/8 for any window length. A
        // cosine with T - 1 on a half-period boundary survives the reflection
        // padding exactly, so edge frames stay pure too.
        let fft = 64;
        let t = 513;
        let x: Vec<f64> = (0..t)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 8.0).cos())
            .collect();
        let mut g = Graph::<f64>::new();
        let xi = g.leaf(x, vec![t], false).unwrap();
        let m = g.stft_magnitude(xi, fft, 16, fft).unwrap();
        let n_frames = t / 16 + 1;
        let bins = fft / 2 + 1;
        for n in 0..n_frames {
            let col: Vec<f64> = (0..bins).map(|f| g.data(m)[f * n_frames + n]).collect();
            let peak = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, fft / 8, "frame {n}");
        }
    }

    #[test]
    fn zero_signal_clamps_to_eps() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![0.0; 256], vec![256], false).unwrap();
        let m = g.stft_magnitude(x, 64, 16, 64).unwrap();
        assert!(g.data(m).iter().all(|&v| v == MAGNITUDE_EPS));
    }

    #[test]
    fn window_longer_than_fft_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![0.0; 256], vec![256], false).unwrap();
        assert!(g.stft_magnitude(x, 64, 16, 65).is_err());
        assert!(g.stft_magnitude(x, 64, 0, 64).is_err());
    }

    #[test]
    fn short_signal_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![0.0; 16], vec![16], false).unwrap();
        assert!(g.stft_magnitude(x, 64, 16, 64).is_err());
    }

    #[test]
    fn per_frame_parseval_identity() {
        // sum_f weighted |X[f]|^2 == fft_size * sum_t (w x)_t^2 per frame,
        // doubling interior one-sided bins.
        let fft = 64;
        let hop = 16;
        let t = 320;
        let mut state = 0x2468u64;
        let x: Vec<f64> = (0..t)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();

        let mut g = Graph::<f64>::new();
        let xi = g.leaf(x.clone(), vec![t], false).unwrap();
        let m = g.stft_magnitude(xi, fft, hop, fft).unwrap();
        let n_frames = t / hop + 1;
        let bins = fft / 2 + 1;

        let window = padded_hann::<f64>(fft, fft);
        let pad = fft / 2;
        for n in 0..n_frames {
            let mut time_energy = 0.0;
            for j in 0..fft {
                let p = n * hop + j;
                let v = x[reflect(p as isize - pad as isize, t)] * window[j];
                time_energy += v * v;
            }
            let mut freq_energy = 0.0;
            for f in 0..bins {
                let mag = g.data(m)[f * n_frames + n];
                let w = if f == 0 || f == fft / 2 { 1.0 } else { 2.0 };
                freq_energy += w * mag * mag;
            }
            freq_energy /= fft as f64;
            let rel = (freq_energy - time_energy).abs() / time_energy.max(1e-12);
            assert!(rel < 1e-6, "frame {n}: rel err {rel}");
        }
    }
}
