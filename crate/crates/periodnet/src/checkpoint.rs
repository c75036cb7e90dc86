//! Training checkpoints.
//!
//! Layout (little-endian): magic "PNCK", u32 version, model-spec string,
//! variant tag string, u64 iteration, named parameter table, two optimizer
//! state tables (generators, discriminators), normalizer stats, config echo
//! string, CRC32 trailer over everything before it.
//!
//! Saving is atomic (write temp file, rename) and the byte stream is fully
//! determined by the state, so save -> load -> save reproduces the file
//! exactly.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::config::ModelSpec;
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::nets::{DiscriminatorBank, ParamStore, PeriodNetModel};
use crate::training::{RAdamParams, RAdamState};

const MAGIC: &[u8; 4] = b"PNCK";
const VERSION: u32 = 1;

/// CRC-32 (IEEE 802.3, reflected) over a byte stream.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = 0xffff_ffffu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xff) as usize] ^ (crc >> 8);
    }
    crc ^ 0xffff_ffff
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// One optimizer's serialized state; moment buffers align with the parameter
/// table entries carrying the matching prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub tag: String,
    pub t: u64,
    pub hp: RAdamParams,
    pub moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl OptState {
    pub fn from_radam(tag: &str, state: &RAdamState<f32>) -> Self {
        OptState {
            tag: tag.to_string(),
            t: state.t,
            hp: state.hp,
            moments: state
                .m
                .iter()
                .zip(&state.v)
                .map(|(m, v)| (m.clone(), v.clone()))
                .collect(),
        }
    }

    /// Rebuild an optimizer state over `store`; moment shapes must match.
    pub fn to_radam(&self, store: &ParamStore<f32>) -> Result<RAdamState<f32>> {
        self.to_radam_multi(&RAdamState::new(store, self.hp))
    }

    /// Restore into a freshly initialized state whose moment layout defines
    /// the expected shapes.
    pub fn to_radam_multi(&self, template: &RAdamState<f32>) -> Result<RAdamState<f32>> {
        let mut state = template.clone();
        state.hp = self.hp;
        if self.moments.len() != state.m.len() {
            return Err(Error::data(format!(
                "optimizer '{}' tracks {} tensors, model has {}",
                self.tag,
                self.moments.len(),
                state.m.len()
            )));
        }
        state.t = self.t;
        for (i, (m, v)) in self.moments.iter().enumerate() {
            if m.len() != state.m[i].len() {
                return Err(Error::data(format!(
                    "optimizer '{}' moment {i} length mismatch",
                    self.tag
                )));
            }
            state.m[i] = m.clone();
            state.v[i] = v.clone();
        }
        Ok(state)
    }
}

/// Complete training state: everything needed to resume bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub iteration: u64,
    pub params: Vec<NamedTensor>,
    pub gen_opt: OptState,
    pub disc_opt: OptState,
    pub normalizer: Normalizer,
    pub config_echo: String,
}

fn collect_params(prefix: &str, store: &ParamStore<f32>, out: &mut Vec<NamedTensor>) {
    for p in store.iter() {
        out.push(NamedTensor {
            name: format!("{prefix}.{}", p.name),
            shape: p.shape.clone(),
            data: p.data.clone(),
        });
    }
}

fn restore_params(
    prefix: &str,
    store: &mut ParamStore<f32>,
    params: &[NamedTensor],
    cursor: &mut usize,
) -> Result<()> {
    for p in store.iter_mut() {
        let expect = format!("{prefix}.{}", p.name);
        let Some(saved) = params.get(*cursor) else {
            return Err(Error::data(format!("checkpoint ends before {expect}")));
        };
        if saved.name != expect || saved.shape != p.shape {
            return Err(Error::data(format!(
                "checkpoint entry '{}' {:?} does not match model parameter '{expect}' {:?}",
                saved.name, saved.shape, p.shape
            )));
        }
        p.data = saved.data.clone();
        *cursor += 1;
    }
    Ok(())
}

impl Checkpoint {
    /// Snapshot the full training state.
    pub fn capture(
        spec: &ModelSpec,
        iteration: u64,
        model: &PeriodNetModel<f32>,
        bank: &DiscriminatorBank<f32>,
        gen_opt: &RAdamState<f32>,
        disc_opt: &RAdamState<f32>,
        normalizer: &Normalizer,
        config_echo: &str,
    ) -> Self {
        let mut params = Vec::new();
        collect_params("gp", &model.primary.params, &mut params);
        if let Some(a) = &model.aperiodic {
            collect_params("ga", &a.params, &mut params);
        }
        for (i, stack) in bank.stacks.iter().enumerate() {
            collect_params(&format!("d{i}"), &stack.params, &mut params);
        }
        Checkpoint {
            spec: spec.clone(),
            iteration,
            params,
            gen_opt: OptState::from_radam("gen", gen_opt),
            disc_opt: OptState::from_radam("disc", disc_opt),
            normalizer: normalizer.clone(),
            config_echo: config_echo.to_string(),
        }
    }

    /// Write parameter values back into freshly built model/bank skeletons.
    pub fn restore_into(
        &self,
        model: &mut PeriodNetModel<f32>,
        bank: &mut DiscriminatorBank<f32>,
    ) -> Result<()> {
        let mut cursor = 0;
        restore_params("gp", &mut model.primary.params, &self.params, &mut cursor)?;
        if let Some(a) = model.aperiodic.as_mut() {
            restore_params("ga", &mut a.params, &self.params, &mut cursor)?;
        }
        for (i, stack) in bank.stacks.iter_mut().enumerate() {
            restore_params(&format!("d{i}"), &mut stack.params, &self.params, &mut cursor)?;
        }
        if cursor != self.params.len() {
            return Err(Error::data(format!(
                "checkpoint has {} extra parameter entries",
                self.params.len() - cursor
            )));
        }
        Ok(())
    }

    /// Rebuild model + bank skeletons from the embedded spec and load values.
    pub fn instantiate(&self) -> Result<(PeriodNetModel<f32>, DiscriminatorBank<f32>)> {
        let mut model = self.spec.build_model(0)?;
        let mut bank = DiscriminatorBank::build(self.spec.discriminator.clone(), 0)?;
        self.restore_into(&mut model, &mut bank)?;
        Ok((model, bank))
    }

    fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.write_u32::<LittleEndian>(VERSION).unwrap();
        write_string(&mut w, &self.spec.to_text());
        write_string(&mut w, &self.spec.variant.to_string());
        w.write_u64::<LittleEndian>(self.iteration).unwrap();

        w.write_u32::<LittleEndian>(self.params.len() as u32).unwrap();
        for p in &self.params {
            write_string(&mut w, &p.name);
            w.write_u32::<LittleEndian>(p.shape.len() as u32).unwrap();
            for &d in &p.shape {
                w.write_u32::<LittleEndian>(d as u32).unwrap();
            }
            for &v in &p.data {
                w.write_f32::<LittleEndian>(v).unwrap();
            }
        }

        w.write_u32::<LittleEndian>(2).unwrap();
        for opt in [&self.gen_opt, &self.disc_opt] {
            write_string(&mut w, &opt.tag);
            w.write_u64::<LittleEndian>(opt.t).unwrap();
            for hv in [opt.hp.lr, opt.hp.beta1, opt.hp.beta2, opt.hp.eps] {
                w.write_f64::<LittleEndian>(hv).unwrap();
            }
            w.write_u32::<LittleEndian>(opt.moments.len() as u32).unwrap();
            for (m, v) in &opt.moments {
                w.write_u32::<LittleEndian>(m.len() as u32).unwrap();
                for &x in m {
                    w.write_f32::<LittleEndian>(x).unwrap();
                }
                for &x in v {
                    w.write_f32::<LittleEndian>(x).unwrap();
                }
            }
        }

        w.write_u32::<LittleEndian>(self.normalizer.dim as u32).unwrap();
        for &v in &self.normalizer.mean {
            w.write_f32::<LittleEndian>(v).unwrap();
        }
        for &v in &self.normalizer.std {
            w.write_f32::<LittleEndian>(v).unwrap();
        }
        write_string(&mut w, &self.config_echo);

        let crc = crc32(&w);
        w.write_u32::<LittleEndian>(crc).unwrap();
        w
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format(path, "file too short"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32(body) != stored {
            return Err(Error::format(path, "checksum mismatch (corrupt checkpoint)"));
        }
        let mut r = Cursor::new(body);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(Error::format(path, "bad magic, expected PNCK"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let spec_text = read_string(&mut r, path)?;
        let spec = ModelSpec::from_text(&spec_text)?;
        let variant_tag = read_string(&mut r, path)?;
        if variant_tag != spec.variant.to_string() {
            return Err(Error::format(
                path,
                format!("variant tag '{variant_tag}' disagrees with spec '{}'", spec.variant),
            ));
        }
        let iteration = r.read_u64::<LittleEndian>().map_err(|e| Error::io(path, e))?;

        let n_params = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = read_string(&mut r, path)?;
            let ndim = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0f32; numel];
            r.read_f32_into::<LittleEndian>(&mut data)
                .map_err(|_| Error::format(path, "truncated parameter payload"))?;
            params.push(NamedTensor { name, shape, data });
        }

        let n_opts = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        if n_opts != 2 {
            return Err(Error::format(path, format!("expected 2 optimizer states, got {n_opts}")));
        }
        let mut opts = Vec::with_capacity(2);
        for _ in 0..2 {
            let tag = read_string(&mut r, path)?;
            let t = r.read_u64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            let lr = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            let beta1 = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            let beta2 = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            let eps = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            let n = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
            let mut moments = Vec::with_capacity(n);
            for _ in 0..n {
                let len = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
                let mut m = vec![0f32; len];
                let mut v = vec![0f32; len];
                r.read_f32_into::<LittleEndian>(&mut m)
                    .map_err(|_| Error::format(path, "truncated optimizer payload"))?;
                r.read_f32_into::<LittleEndian>(&mut v)
                    .map_err(|_| Error::format(path, "truncated optimizer payload"))?;
                moments.push((m, v));
            }
            opts.push(OptState {
                tag,
                t,
                hp: RAdamParams {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
                moments,
            });
        }
        let disc_opt = opts.pop().unwrap();
        let gen_opt = opts.pop().unwrap();

        let dim = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
        let mut mean = vec![0f32; dim];
        let mut std = vec![0f32; dim];
        r.read_f32_into::<LittleEndian>(&mut mean)
            .map_err(|_| Error::format(path, "truncated normalizer"))?;
        r.read_f32_into::<LittleEndian>(&mut std)
            .map_err(|_| Error::format(path, "truncated normalizer"))?;
        let config_echo = read_string(&mut r, path)?;

        Ok(Checkpoint {
            spec,
            iteration,
            params,
            gen_opt,
            disc_opt,
            normalizer: Normalizer { dim, mean, std },
            config_echo,
        })
    }

    /// Atomic save: write to a temp sibling then rename into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

fn write_string(w: &mut Vec<u8>, s: &str) {
    w.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    w.extend_from_slice(s.as_bytes());
}

fn read_string(r: &mut Cursor<&[u8]>, path: &Path) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
    if len > 1 << 26 {
        return Err(Error::format(path, "implausible string length"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| Error::format(path, "truncated string"))?;
    String::from_utf8(buf).map_err(|_| Error::format(path, "invalid UTF-8 string"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;

    fn toy_checkpoint() -> Checkpoint {
        let cfg = TrainConfig::from_text(
            "[data]\nclip = a.wav a.pnft\n[model]\nvariant = PM1\nprofile = desk\n",
        )
        .unwrap();
        let spec = ModelSpec::from_train_config(&cfg).unwrap();
        let model = spec.build_model(3).unwrap();
        let bank = DiscriminatorBank::<f32>::build(spec.discriminator.clone(), 3).unwrap();
        let gen_params = {
            let mut merged = ParamStore::new();
            for p in model.primary.params.iter() {
                merged.add(p.name.clone(), p.shape.clone(), p.data.clone());
            }
            if let Some(a) = &model.aperiodic {
                for p in a.params.iter() {
                    merged.add(p.name.clone(), p.shape.clone(), p.data.clone());
                }
            }
            merged
        };
        let gen_opt = RAdamState::new(&gen_params, RAdamParams::with_lr(1e-4));
        let disc_params = {
            let mut merged = ParamStore::new();
            for s in &bank.stacks {
                for p in s.params.iter() {
                    merged.add(p.name.clone(), p.shape.clone(), p.data.clone());
                }
            }
            merged
        };
        let disc_opt = RAdamState::new(&disc_params, RAdamParams::with_lr(5e-5));
        let normalizer = Normalizer {
            dim: 3,
            mean: vec![0.0, 1.0, 2.0],
            std: vec![1.0, 1.0, 0.5],
        };
        Checkpoint::capture(
            &spec,
            42,
            &model,
            &bank,
            &gen_opt,
            &disc_opt,
            &normalizer,
            "echo",
        )
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pnck");
        let p2 = dir.path().join("b.pnck");
        let ckpt = toy_checkpoint();
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded.iteration, 42);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_and_bad_magic_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pnck");
        toy_checkpoint().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let trunc = dir.path().join("t.pnck");
        std::fs::write(&trunc, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(Checkpoint::load(&trunc), Err(Error::Format { .. })));

        let flipped = dir.path().join("f.pnck");
        let mut b2 = bytes.clone();
        let mid = b2.len() / 2;
        b2[mid] ^= 0x40;
        std::fs::write(&flipped, &b2).unwrap();
        assert!(matches!(Checkpoint::load(&flipped), Err(Error::Format { .. })));

        let badmagic = dir.path().join("m.pnck");
        let mut b3 = bytes.clone();
        b3[0] = b'X';
        // Fix the CRC so only the magic check can fail.
        let n = b3.len() - 4;
        let crc = crc32(&b3[..n]).to_le_bytes();
        b3[n..].copy_from_slice(&crc);
        std::fs::write(&badmagic, &b3).unwrap();
        let err = Checkpoint::load(&badmagic).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn instantiate_restores_parameter_values() {
        let ckpt = toy_checkpoint();
        let (model, bank) = ckpt.instantiate().unwrap();
        let mut flat = Vec::new();
        collect_params("gp", &model.primary.params, &mut flat);
        if let Some(a) = &model.aperiodic {
            collect_params("ga", &a.params, &mut flat);
        }
        for (i, s) in bank.stacks.iter().enumerate() {
            collect_params(&format!("d{i}"), &s.params, &mut flat);
        }
        assert_eq!(flat, ckpt.params);
    }

    #[test]
    fn crc32_known_vector() {
        // Standard check value for "123456789".
        assert_eq!(crc32(b"123456789"), 0xcbf4_3926);
    }
}
