//! Frame-rate acoustic features: loading, normalization, F0-column removal,
//! and upsampling to sample-rate conditioning tracks.
//!
//! A feature frame is 77 values: 50 mel-cepstral coefficients, 25 band
//! aperiodicity measures, 1 continuous log-F0, 1 binary V/UV flag, in that
//! column order.
//!
//! File formats (little-endian):
//! - features: magic "PNFT", u32 version = 1, u32 n_frames, u32 dim,
//!   f64 frame_shift_seconds, then n_frames * dim f32 row-major.
//! - normalizer: magic "PNST", u32 dim, dim f32 means, dim f32 stds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MCEP_DIM: usize = 50;
pub const BAP_DIM: usize = 25;
/// Full conditioning width: mel-cepstrum + aperiodicity + log-F0 + V/UV.
pub const FEATURE_DIM: usize = 77;
/// Column index of continuous log-F0.
pub const LF0_COLUMN: usize = 75;
/// Column index of the binary V/UV flag.
pub const VUV_COLUMN: usize = 76;

const FEATURE_MAGIC: &[u8; 4] = b"PNFT";
const STATS_MAGIC: &[u8; 4] = b"PNST";
const FEATURE_VERSION: u32 = 1;

/// Frame-rate feature matrix, row-major `[n_frames][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub n_frames: usize,
    pub dim: usize,
    pub frame_shift: f64,
    data: Vec<f32>,
}

impl FeatureTrack {
    pub fn new(n_frames: usize, dim: usize, frame_shift: f64, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_frames * dim {
            return Err(Error::data(format!(
                "feature payload holds {} values, expected {}",
                data.len(),
                n_frames * dim
            )));
        }
        Ok(FeatureTrack {
            n_frames,
            dim,
            frame_shift,
            data,
        })
    }

    pub fn frame(&self, n: usize) -> &[f32] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f32] {
        &mut self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f32> + '_ {
        (0..self.n_frames).map(move |n| self.data[n * self.dim + c])
    }

    /// Samples per frame at the given rate; must divide evenly.
    pub fn hop(&self, sample_rate: f64) -> Result<usize> {
        let exact = self.frame_shift * sample_rate;
        let hop = exact.round();
        if (exact - hop).abs() > 1e-6 || hop < 1.0 {
            return Err(Error::InvalidArgument {
                context: "features",
                detail: format!(
                    "frame shift {} s at {} Hz is not an integer hop",
                    self.frame_shift, sample_rate
                ),
            });
        }
        Ok(hop as usize)
    }

    /// Load a "PNFT" file, validating the 77-column layout and the binary
    /// V/UV column.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::format(path, "bad magic, expected PNFT"));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(path, e))?;
        if version != FEATURE_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let n_frames = r
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(path, e))? as usize;
        let dim = r
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(path, e))? as usize;
        if dim != FEATURE_DIM {
            return Err(Error::format(
                path,
                format!("feature dim {dim}, expected {FEATURE_DIM}"),
            ));
        }
        let frame_shift = r
            .read_f64::<LittleEndian>()
            .map_err(|e| Error::io(path, e))?;
        let mut data = vec![0f32; n_frames * dim];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|_| Error::format(path, "truncated feature payload"))?;

        let track = FeatureTrack::new(n_frames, dim, frame_shift, data)?;
        for n in 0..track.n_frames {
            let v = track.frame(n)[VUV_COLUMN];
            if v != 0.0 && v != 1.0 {
                return Err(Error::format(
                    path,
                    format!("frame {n}: V/UV flag {v} is not binary"),
                ));
            }
        }
        Ok(track)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(FEATURE_MAGIC).map_err(|e| Error::io(path, e))?;
        w.write_u32::<LittleEndian>(FEATURE_VERSION)
            .map_err(|e| Error::io(path, e))?;
        w.write_u32::<LittleEndian>(self.n_frames as u32)
            .map_err(|e| Error::io(path, e))?;
        w.write_u32::<LittleEndian>(self.dim as u32)
            .map_err(|e| Error::io(path, e))?;
        w.write_f64::<LittleEndian>(self.frame_shift)
            .map_err(|e| Error::io(path, e))?;
        for &v in &self.data {
            w.write_f32::<LittleEndian>(v).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Remove the continuous log-F0 column (width drops to 76, V/UV kept).
    pub fn drop_f0(&self) -> Result<FeatureTrack> {
        if self.dim != FEATURE_DIM {
            return Err(Error::data(format!(
                "drop_f0 expects {FEATURE_DIM}-dim features, got {}",
                self.dim
            )));
        }
        let mut data = Vec::with_capacity(self.n_frames * (self.dim - 1));
        for n in 0..self.n_frames {
            let row = self.frame(n);
            data.extend_from_slice(&row[..LF0_COLUMN]);
            data.extend_from_slice(&row[LF0_COLUMN + 1..]);
        }
        FeatureTrack::new(self.n_frames, self.dim - 1, self.frame_shift, data)
    }
}

/// Per-dimension mean/std normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub dim: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Direction for [`Normalizer::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

const STD_FLOOR: f64 = 1e-8;

impl Normalizer {
    /// Pooled mean/std over all frames of all tracks, with a floor on std so
    /// constant dimensions survive.
    pub fn fit(tracks: &[&FeatureTrack]) -> Result<Self> {
        let dim = tracks.first().map(|t| t.dim).ok_or(Error::Data {
            detail: "empty corpus".into(),
        })?;
        let total: usize = tracks.iter().map(|t| t.n_frames).sum();
        if total == 0 {
            return Err(Error::data("no frames to fit normalizer"));
        }
        let mut sum = vec![0f64; dim];
        let mut sumsq = vec![0f64; dim];
        for t in tracks {
            if t.dim != dim {
                return Err(Error::data(format!(
                    "mixed feature dims {dim} vs {}",
                    t.dim
                )));
            }
            for n in 0..t.n_frames {
                for (c, &v) in t.frame(n).iter().enumerate() {
                    sum[c] += v as f64;
                    sumsq[c] += (v as f64) * (v as f64);
                }
            }
        }
        let n = total as f64;
        let mean: Vec<f32> = sum.iter().map(|&s| (s / n) as f32).collect();
        let std: Vec<f32> = sum
            .iter()
            .zip(&sumsq)
            .map(|(&s, &sq)| {
                let m = s / n;
                ((sq / n - m * m).max(0.0).sqrt().max(STD_FLOOR)) as f32
            })
            .collect();
        Ok(Normalizer { dim, mean, std })
    }

    /// Per-dimension (x - mean) / std, or its inverse.
    pub fn apply(&self, track: &FeatureTrack, direction: Direction) -> Result<FeatureTrack> {
        if track.dim != self.dim {
            return Err(Error::data(format!(
                "normalizer dim {} vs track dim {}",
                self.dim, track.dim
            )));
        }
        let mut data = Vec::with_capacity(track.data.len());
        for n in 0..track.n_frames {
            for (c, &v) in track.frame(n).iter().enumerate() {
                data.push(match direction {
                    Direction::Forward => (v - self.mean[c]) / self.std[c],
                    Direction::Inverse => v * self.std[c] + self.mean[c],
                });
            }
        }
        FeatureTrack::new(track.n_frames, track.dim, track.frame_shift, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != STATS_MAGIC {
            return Err(Error::format(path, "bad magic, expected PNST"));
        }
        let dim = r
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(path, e))? as usize;
        let mut mean = vec![0f32; dim];
        let mut std = vec![0f32; dim];
        r.read_f32_into::<LittleEndian>(&mut mean)
            .map_err(|_| Error::format(path, "truncated means"))?;
        r.read_f32_into::<LittleEndian>(&mut std)
            .map_err(|_| Error::format(path, "truncated stds"))?;
        Ok(Normalizer { dim, mean, std })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(STATS_MAGIC).map_err(|e| Error::io(path, e))?;
        w.write_u32::<LittleEndian>(self.dim as u32)
            .map_err(|e| Error::io(path, e))?;
        for &v in &self.mean {
            w.write_f32::<LittleEndian>(v).map_err(|e| Error::io(path, e))?;
        }
        for &v in &self.std {
            w.write_f32::<LittleEndian>(v).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Frame-to-sample interpolation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// Repeat each frame across its hop.
    Nearest,
    /// Linear cross-fade between frame centers (default).
    Linear,
}

/// Sample-rate conditioning matrix, channel-major `[channels][t]`.
#[derive(Debug, Clone)]
pub struct ConditioningTrack {
    pub channels: usize,
    pub t: usize,
    pub includes_f0: bool,
    data: Vec<f32>,
}

impl ConditioningTrack {
    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.t..(c + 1) * self.t]
    }

    /// Copy columns `[start, start + len)` into a channel-major buffer.
    pub fn crop(&self, start: usize, len: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            out.extend_from_slice(&self.channel(c)[start..start + len]);
        }
        out
    }
}

/// Expand a frame track to sample rate: each frame repeated over its hop,
/// with per-dimension linear interpolation between frame centers in
/// [`Interp::Linear`] mode. Output length is exactly `n_frames * hop`.
pub fn upsample_frames(
    track: &FeatureTrack,
    sample_rate: f64,
    mode: Interp,
) -> Result<ConditioningTrack> {
    let hop = track.hop(sample_rate)?;
    let t_total = track.n_frames * hop;
    let mut data = vec![0f32; track.dim * t_total];
    let n = track.n_frames;
    let half = hop as f64 / 2.0;
    for c in 0..track.dim {
        let row = &mut data[c * t_total..(c + 1) * t_total];
        match mode {
            Interp::Nearest => {
                for f in 0..n {
                    let v = track.frame(f)[c];
                    row[f * hop..(f + 1) * hop].fill(v);
                }
            }
            Interp::Linear => {
                if n == 1 {
                    row.fill(track.frame(0)[c]);
                    continue;
                }
                for (t, slot) in row.iter_mut().enumerate() {
                    let pos = (t as f64 - half) / hop as f64;
                    *slot = if pos <= 0.0 {
                        track.frame(0)[c]
                    } else if pos >= (n - 1) as f64 {
                        track.frame(n - 1)[c]
                    } else {
                        let i = pos.floor() as usize;
                        let frac = (pos - i as f64) as f32;
                        track.frame(i)[c] * (1.0 - frac) + track.frame(i + 1)[c] * frac
                    };
                }
            }
        }
    }
    Ok(ConditioningTrack {
        channels: track.dim,
        t: t_total,
        includes_f0: track.dim == FEATURE_DIM,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_track(n_frames: usize) -> FeatureTrack {
        let mut data = Vec::new();
        for n in 0..n_frames {
            for c in 0..FEATURE_DIM {
                let v = if c == VUV_COLUMN {
                    (n % 2) as f32
                } else {
                    (n * 7 + c) as f32 * 0.01
                };
                data.push(v);
            }
        }
        FeatureTrack::new(n_frames, FEATURE_DIM, 0.005, data).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pnft");
        let track = toy_track(100);
        track.save(&path).unwrap();
        let loaded = FeatureTrack::load(&path).unwrap();
        assert_eq!(loaded.n_frames, 100);
        assert_eq!(loaded, track);
    }

    #[test]
    fn wrong_dim_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pnft");
        {
            use byteorder::WriteBytesExt;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
            w.write_all(b"PNFT").unwrap();
            w.write_u32::<LittleEndian>(1).unwrap();
            w.write_u32::<LittleEndian>(2).unwrap();
            w.write_u32::<LittleEndian>(76).unwrap();
            w.write_f64::<LittleEndian>(0.005).unwrap();
            for _ in 0..2 * 76 {
                w.write_f32::<LittleEndian>(0.0).unwrap();
            }
        }
        assert!(matches!(
            FeatureTrack::load(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn truncated_and_bad_magic_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("g.pnft");
        toy_track(10).save(&good).unwrap();
        let bytes = std::fs::read(&good).unwrap();

        let trunc = dir.path().join("t.pnft");
        std::fs::write(&trunc, &bytes[..bytes.len() - 3]).unwrap();
        assert!(FeatureTrack::load(&trunc).is_err());

        let badmagic = dir.path().join("m.pnft");
        let mut b2 = bytes.clone();
        b2[0] = b'X';
        std::fs::write(&badmagic, &b2).unwrap();
        assert!(FeatureTrack::load(&badmagic).is_err());
    }

    #[test]
    fn normalizer_constant_track_hits_floor() {
        let data = vec![3.0f32; 2 * FEATURE_DIM];
        let mut t = FeatureTrack::new(2, FEATURE_DIM, 0.005, data).unwrap();
        for n in 0..2 {
            t.frame_mut(n)[VUV_COLUMN] = 1.0;
        }
        let norm = Normalizer::fit(&[&t]).unwrap();
        assert!((norm.mean[0] - 3.0).abs() < 1e-6);
        assert!((norm.std[0] as f64 - STD_FLOOR).abs() < 1e-12);
    }

    #[test]
    fn normalizer_matches_pooled_oracle() {
        let a = toy_track(13);
        let b = toy_track(29);
        let norm = Normalizer::fit(&[&a, &b]).unwrap();
        // Straight single-pass reference over the concatenated frames.
        for c in 0..FEATURE_DIM {
            let vals: Vec<f64> = a
                .column(c)
                .chain(b.column(c))
                .map(|v| v as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            let std = var.sqrt().max(STD_FLOOR);
            assert!((norm.mean[c] as f64 - mean).abs() < 1e-5, "col {c}");
            assert!((norm.std[c] as f64 - std).abs() < 1e-5, "col {c}");
        }
    }

    #[test]
    fn normalize_then_fit_is_standard() {
        let t = toy_track(64);
        let norm = Normalizer::fit(&[&t]).unwrap();
        let normed = norm.apply(&t, Direction::Forward).unwrap();
        let refit = Normalizer::fit(&[&normed]).unwrap();
        for c in 0..FEATURE_DIM {
            assert!(refit.mean[c].abs() < 1e-6, "col {c} mean {}", refit.mean[c]);
            let s = refit.std[c];
            // Constant columns stay at the floor; varying ones become unit.
            assert!(s < 1e-6 || (s - 1.0).abs() < 1e-5, "col {c} std {s}");
        }
    }

    #[test]
    fn forward_inverse_round_trip() {
        let t = toy_track(64);
        let norm = Normalizer::fit(&[&t]).unwrap();
        let fwd = norm.apply(&t, Direction::Forward).unwrap();
        let back = norm.apply(&fwd, Direction::Inverse).unwrap();
        for (x, y) in t.values().iter().zip(back.values()) {
            assert!((x - y).abs() <= 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn identity_stats_are_identity() {
        let t = toy_track(8);
        let norm = Normalizer {
            dim: FEATURE_DIM,
            mean: vec![0.0; FEATURE_DIM],
            std: vec![1.0; FEATURE_DIM],
        };
        let out = norm.apply(&t, Direction::Forward).unwrap();
        assert_eq!(out.values(), t.values());
    }

    #[test]
    fn normalizer_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pnst");
        let t = toy_track(16);
        let norm = Normalizer::fit(&[&t]).unwrap();
        norm.save(&path).unwrap();
        assert_eq!(Normalizer::load(&path).unwrap(), norm);
    }

    #[test]
    fn drop_f0_removes_only_the_lf0_column() {
        let t = toy_track(5);
        let dropped = t.drop_f0().unwrap();
        assert_eq!(dropped.dim, 76);
        for n in 0..5 {
            let full = t.frame(n);
            let red = dropped.frame(n);
            assert_eq!(&full[..LF0_COLUMN], &red[..LF0_COLUMN]);
            assert_eq!(full[VUV_COLUMN], red[75]);
        }
        assert!(dropped.drop_f0().is_err());
    }

    #[test]
    fn upsample_single_frame_repeats() {
        let t = toy_track(1);
        let cond = upsample_frames(&t, 48_000.0, Interp::Linear).unwrap();
        assert_eq!(cond.t, 240);
        for c in 0..cond.channels {
            let v = t.frame(0)[c];
            assert!(cond.channel(c).iter().all(|&x| x == v));
        }
    }

    #[test]
    fn upsample_constant_frames_stay_constant() {
        let data: Vec<f32> = (0..2 * FEATURE_DIM)
            .map(|i| if (i % FEATURE_DIM) == VUV_COLUMN { 1.0 } else { 0.25 })
            .collect();
        let t = FeatureTrack::new(2, FEATURE_DIM, 0.005, data).unwrap();
        let cond = upsample_frames(&t, 48_000.0, Interp::Linear).unwrap();
        for c in 0..FEATURE_DIM {
            let v = t.frame(0)[c];
            assert!(cond.channel(c).iter().all(|&x| (x - v).abs() < 1e-7));
        }
    }

    #[test]
    fn upsample_linear_midpoint_is_average() {
        let t = toy_track(2);
        let cond = upsample_frames(&t, 48_000.0, Interp::Linear).unwrap();
        // Column 240 sits halfway between the frame centers at 120 and 360.
        for c in 0..FEATURE_DIM {
            let mid = cond.channel(c)[240];
            let avg = 0.5 * (t.frame(0)[c] + t.frame(1)[c]);
            assert!((mid - avg).abs() < 1e-6, "col {c}: {mid} vs {avg}");
        }
    }

    #[test]
    fn drop_f0_commutes_with_upsample() {
        let t = toy_track(4);
        let a = upsample_frames(&t.drop_f0().unwrap(), 48_000.0, Interp::Linear).unwrap();
        let b_full = upsample_frames(&t, 48_000.0, Interp::Linear).unwrap();
        // Remove the LF0 channel from the upsampled full track.
        assert_eq!(a.channels, 76);
        for (ca, cb) in (0..76).zip((0..77).filter(|&c| c != LF0_COLUMN)) {
            assert_eq!(a.channel(ca), b_full.channel(cb), "channel {ca}");
        }
    }

    #[test]
    fn length_contract_holds() {
        for frames in [1usize, 3, 17, 100] {
            let t = toy_track(frames);
            let cond = upsample_frames(&t, 48_000.0, Interp::Linear).unwrap();
            assert_eq!(cond.t, frames * 240);
        }
    }
}
