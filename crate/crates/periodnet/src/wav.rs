//! Mono 16-bit PCM WAV reader/writer.
//!
//! Samples map to [-1, 1] by symmetric scaling with 32768; writing clamps to
//! the i16 range, so a full-scale 1.0 lands on 32767.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WavClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl WavClip {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Read a RIFF/WAVE file containing mono 16-bit PCM.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WavClip> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut riff = [0u8; 4];
    r.read_exact(&mut riff).map_err(|e| Error::io(path, e))?;
    if &riff != b"RIFF" {
        return Err(Error::format(path, "not a RIFF file"));
    }
    let _riff_size = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    let mut wave = [0u8; 4];
    r.read_exact(&mut wave).map_err(|e| Error::io(path, e))?;
    if &wave != b"WAVE" {
        return Err(Error::format(path, "missing WAVE form type"));
    }

    let mut sample_rate = None;
    let mut data: Option<Vec<f32>> = None;
    loop {
        let mut chunk_id = [0u8; 4];
        match r.read_exact(&mut chunk_id) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::io(path, e)),
        }
        let chunk_size = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        match &chunk_id {
            b"fmt " => {
                if chunk_size < 16 {
                    return Err(Error::format(path, "fmt chunk too short"));
                }
                let audio_format = r.read_u16::<LittleEndian>().map_err(|e| Error::io(path, e))?;
                let channels = r.read_u16::<LittleEndian>().map_err(|e| Error::io(path, e))?;
                let rate = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
                let _byte_rate = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
                let _block_align = r.read_u16::<LittleEndian>().map_err(|e| Error::io(path, e))?;
                let bits = r.read_u16::<LittleEndian>().map_err(|e| Error::io(path, e))?;
                if audio_format != 1 || bits != 16 {
                    return Err(Error::format(
                        path,
                        format!("need 16-bit PCM, got format {audio_format} at {bits} bits"),
                    ));
                }
                if channels != 1 {
                    return Err(Error::format(path, format!("need mono, got {channels} channels")));
                }
                sample_rate = Some(rate);
                if chunk_size > 16 {
                    r.seek(SeekFrom::Current((chunk_size - 16) as i64))
                        .map_err(|e| Error::io(path, e))?;
                }
            }
            b"data" => {
                let n = chunk_size as usize / 2;
                let mut raw = vec![0i16; n];
                r.read_i16_into::<LittleEndian>(&mut raw)
                    .map_err(|_| Error::format(path, "truncated data chunk"))?;
                data = Some(raw.iter().map(|&s| s as f32 / 32768.0).collect());
                if chunk_size % 2 == 1 {
                    r.seek(SeekFrom::Current(1)).map_err(|e| Error::io(path, e))?;
                }
            }
            _ => {
                // Skip unknown chunks (word-aligned).
                let skip = chunk_size as i64 + (chunk_size % 2) as i64;
                r.seek(SeekFrom::Current(skip)).map_err(|e| Error::io(path, e))?;
            }
        }
    }

    match (sample_rate, data) {
        (Some(sample_rate), Some(samples)) => Ok(WavClip {
            samples,
            sample_rate,
        }),
        _ => Err(Error::format(path, "missing fmt or data chunk")),
    }
}

/// Write a mono 16-bit PCM WAV file.
pub fn write_wav(path: impl AsRef<Path>, clip: &WavClip) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);

    let data_bytes = (clip.samples.len() * 2) as u32;
    w.write_all(b"RIFF").map_err(|e| Error::io(path, e))?;
    w.write_u32::<LittleEndian>(36 + data_bytes).map_err(|e| Error::io(path, e))?;
    w.write_all(b"WAVE").map_err(|e| Error::io(path, e))?;
    w.write_all(b"fmt ").map_err(|e| Error::io(path, e))?;
    w.write_u32::<LittleEndian>(16).map_err(|e| Error::io(path, e))?;
    w.write_u16::<LittleEndian>(1).map_err(|e| Error::io(path, e))?;
    w.write_u16::<LittleEndian>(1).map_err(|e| Error::io(path, e))?;
    w.write_u32::<LittleEndian>(clip.sample_rate).map_err(|e| Error::io(path, e))?;
    w.write_u32::<LittleEndian>(clip.sample_rate * 2).map_err(|e| Error::io(path, e))?;
    w.write_u16::<LittleEndian>(2).map_err(|e| Error::io(path, e))?;
    w.write_u16::<LittleEndian>(16).map_err(|e| Error::io(path, e))?;
    w.write_all(b"data").map_err(|e| Error::io(path, e))?;
    w.write_u32::<LittleEndian>(data_bytes).map_err(|e| Error::io(path, e))?;
    for &s in &clip.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_i16::<LittleEndian>(q).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..480)
            .map(|i| ((i as f32 * 0.13).sin() * 0.8).clamp(-1.0, 1.0))
            .collect();
        let clip = WavClip {
            samples: samples.clone(),
            sample_rate: 48_000,
        };
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 48_000);
        assert_eq!(back.samples.len(), samples.len());
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_maps_to_zero_and_full_scale_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = WavClip {
            samples: vec![0.0, 1.0, -1.0],
            sample_rate: 48_000,
        };
        write_wav(&path, &clip).unwrap();
        // Inspect the raw PCM words.
        let bytes = std::fs::read(&path).unwrap();
        let pcm = &bytes[44..];
        let s0 = i16::from_le_bytes([pcm[0], pcm[1]]);
        let s1 = i16::from_le_bytes([pcm[2], pcm[3]]);
        let s2 = i16::from_le_bytes([pcm[4], pcm[5]]);
        assert_eq!(s0, 0);
        assert_eq!(s1, 32767); // 1.0 * 32768 clamped
        assert_eq!(s2, -32768);
    }

    #[test]
    fn rejects_corrupt_and_unsupported_files() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.wav");
        std::fs::write(&bad, b"JUNKJUNKJUNK").unwrap();
        assert!(read_wav(&bad).is_err());

        // Stereo header gets refused.
        let stereo = dir.path().join("stereo.wav");
        {
            let mut w = BufWriter::new(File::create(&stereo).unwrap());
            w.write_all(b"RIFF").unwrap();
            w.write_u32::<LittleEndian>(36).unwrap();
            w.write_all(b"WAVE").unwrap();
            w.write_all(b"fmt ").unwrap();
            w.write_u32::<LittleEndian>(16).unwrap();
            w.write_u16::<LittleEndian>(1).unwrap();
            w.write_u16::<LittleEndian>(2).unwrap();
            w.write_u32::<LittleEndian>(48_000).unwrap();
            w.write_u32::<LittleEndian>(48_000 * 4).unwrap();
            w.write_u16::<LittleEndian>(4).unwrap();
            w.write_u16::<LittleEndian>(16).unwrap();
            w.write_all(b"data").unwrap();
            w.write_u32::<LittleEndian>(0).unwrap();
        }
        assert!(read_wav(&stereo).is_err());
    }
}
