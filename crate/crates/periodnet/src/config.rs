//! Flat `key = value` config files with `[section]` headers, plus the
//! training configuration and the model spec echoed into checkpoints.
//!
//! Format rules: UTF-8 text, one `key = value` pair per line, `#` starts a
//! comment, keys may repeat (`clip` collects into a list). Unknown keys are
//! rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{ObjectiveWeights, StftLossConfig, StftResolution};
use crate::nets::{DiscriminatorConfig, GeneratorConfig, Profile, Variant};
use crate::training::RAdamParams;

/// Parsed section -> ordered (key, value) pairs.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                sections.push((name.trim().to_string(), Vec::new()));
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::usage(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let Some(section) = sections.last_mut() else {
                return Err(Error::usage(format!(
                    "config line {}: key before any [section]",
                    lineno + 1
                )));
            };
            section
                .1
                .push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(RawConfig { sections })
    }

    fn section<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a (String, String)> + 'a {
        self.sections
            .iter()
            .filter(move |(s, _)| s == name)
            .flat_map(|(_, kv)| kv.iter())
    }

    fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(s, _)| s.as_str())
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::usage(format!("config key '{key}': cannot parse '{value}'")))
}

/// One (waveform, features) training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipPair {
    pub wav: PathBuf,
    pub features: PathBuf,
}

/// Everything `periodnet train` needs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub clips: Vec<ClipPair>,
    pub variant: Variant,
    pub profile: Profile,
    pub sample_rate: u32,
    pub sine_amplitude: f64,
    pub vuv_window_ms: f64,
    pub iterations: u64,
    pub warmup_iterations: u64,
    pub batch_size: usize,
    pub crop_samples: usize,
    pub seed: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda_adv: f64,
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
    pub resolutions: Vec<StftResolution>,
    /// Original config text, echoed into checkpoints.
    pub source_text: String,
}

impl TrainConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_text(&text)?;
        // Relative clip paths resolve against the config file location.
        if let Some(base) = path.parent() {
            for clip in cfg.clips.iter_mut() {
                if clip.wav.is_relative() {
                    clip.wav = base.join(&clip.wav);
                }
                if clip.features.is_relative() {
                    clip.features = base.join(&clip.features);
                }
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = base.join(&cfg.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        for s in raw.section_names() {
            if !matches!(s, "data" | "model" | "excitation" | "train" | "stft") {
                return Err(Error::usage(format!("unknown config section [{s}]")));
            }
        }

        let mut clips = Vec::new();
        for (k, v) in raw.section("data") {
            match k.as_str() {
                "clip" => {
                    let mut parts = v.split_whitespace();
                    let (Some(wav), Some(feat), None) =
                        (parts.next(), parts.next(), parts.next())
                    else {
                        return Err(Error::usage(format!(
                            "clip entry '{v}' must be '<wav> <features>'"
                        )));
                    };
                    clips.push(ClipPair {
                        wav: PathBuf::from(wav),
                        features: PathBuf::from(feat),
                    });
                }
                other => return Err(Error::usage(format!("unknown [data] key '{other}'"))),
            }
        }
        if clips.is_empty() {
            return Err(Error::usage("config lists no [data] clip entries"));
        }

        let mut variant = None;
        let mut profile = Profile::Desk;
        let mut sample_rate = 48_000u32;
        for (k, v) in raw.section("model") {
            match k.as_str() {
                "variant" => variant = Some(v.parse::<Variant>()?),
                "profile" => profile = v.parse::<Profile>()?,
                "sample_rate" => sample_rate = parse_value(k, v)?,
                other => return Err(Error::usage(format!("unknown [model] key '{other}'"))),
            }
        }
        let variant =
            variant.ok_or_else(|| Error::usage("config is missing [model] variant"))?;

        let mut sine_amplitude = 0.1;
        let mut vuv_window_ms = 10.0;
        for (k, v) in raw.section("excitation") {
            match k.as_str() {
                "sine_amplitude" => sine_amplitude = parse_value(k, v)?,
                "vuv_smooth_ms" => vuv_window_ms = parse_value(k, v)?,
                other => return Err(Error::usage(format!("unknown [excitation] key '{other}'"))),
            }
        }

        let mut iterations = 2000u64;
        let mut warmup_iterations = 200u64;
        let mut batch_size = 1usize;
        let mut crop_samples = 8192usize;
        let mut seed = 0u64;
        let mut lr_g = 1e-4;
        let mut lr_d = 5e-5;
        let mut lambda_adv = 4.0;
        let mut checkpoint_every = 0u64;
        let mut out_dir = PathBuf::from("run");
        for (k, v) in raw.section("train") {
            match k.as_str() {
                "iterations" => iterations = parse_value(k, v)?,
                "warmup_iterations" => warmup_iterations = parse_value(k, v)?,
                "batch_size" => batch_size = parse_value(k, v)?,
                "crop_samples" => crop_samples = parse_value(k, v)?,
                "seed" => seed = parse_value(k, v)?,
                "lr_g" => lr_g = parse_value(k, v)?,
                "lr_d" => lr_d = parse_value(k, v)?,
                "lambda_adv" => lambda_adv = parse_value(k, v)?,
                "checkpoint_every" => checkpoint_every = parse_value(k, v)?,
                "out_dir" => out_dir = PathBuf::from(v),
                other => return Err(Error::usage(format!("unknown [train] key '{other}'"))),
            }
        }
        if warmup_iterations > iterations {
            return Err(Error::usage(format!(
                "warmup_iterations {warmup_iterations} exceeds iterations {iterations}"
            )));
        }
        if batch_size == 0 {
            return Err(Error::usage("batch_size must be positive"));
        }

        let mut resolutions = StftLossConfig::default().resolutions;
        for (k, v) in raw.section("stft") {
            match k.as_str() {
                "resolutions" => resolutions = parse_resolutions(v)?,
                other => return Err(Error::usage(format!("unknown [stft] key '{other}'"))),
            }
        }

        Ok(TrainConfig {
            clips,
            variant,
            profile,
            sample_rate,
            sine_amplitude,
            vuv_window_ms,
            iterations,
            warmup_iterations,
            batch_size,
            crop_samples,
            seed,
            lr_g,
            lr_d,
            lambda_adv,
            checkpoint_every,
            out_dir,
            resolutions,
            source_text: text.to_string(),
        })
    }

    pub fn stft_config(&self) -> StftLossConfig {
        StftLossConfig {
            resolutions: self.resolutions.clone(),
            eps: crate::tensor::MAGNITUDE_EPS,
        }
    }

    pub fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            lambda_adv: self.lambda_adv,
        }
    }

    pub fn gen_opt_params(&self) -> RAdamParams {
        RAdamParams::with_lr(self.lr_g)
    }

    pub fn disc_opt_params(&self) -> RAdamParams {
        RAdamParams::with_lr(self.lr_d)
    }
}

fn parse_resolutions(v: &str) -> Result<Vec<StftResolution>> {
    let mut out = Vec::new();
    for item in v.split(',') {
        let nums: Vec<&str> = item.trim().split(':').collect();
        if nums.len() != 3 {
            return Err(Error::usage(format!(
                "resolution '{item}' must be fft:hop:win"
            )));
        }
        out.push(StftResolution {
            fft_size: parse_value("resolutions", nums[0])?,
            hop: parse_value("resolutions", nums[1])?,
            win_length: parse_value("resolutions", nums[2])?,
        });
    }
    if out.is_empty() {
        return Err(Error::usage("empty resolution list"));
    }
    Ok(out)
}

fn fmt_resolutions(res: &[StftResolution]) -> String {
    res.iter()
        .map(|r| format!("{}:{}:{}", r.fft_size, r.hop, r.win_length))
        .collect::<Vec<_>>()
        .join(",")
}

/// Architecture and synthesis settings carried inside a checkpoint so a model
/// can be rebuilt without the original config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub sample_rate: u32,
    pub primary: GeneratorConfig,
    pub aperiodic: Option<GeneratorConfig>,
    pub discriminator: DiscriminatorConfig,
    pub sine_amplitude: f64,
    pub vuv_window_ms: f64,
    pub resolutions: Vec<StftResolution>,
    pub lambda_adv: f64,
}

fn fmt_gen(cfg: &GeneratorConfig) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        cfg.n_layers,
        cfg.dilation_cycle,
        cfg.residual_channels,
        cfg.gate_channels,
        cfg.skip_channels,
        cfg.kernel,
        cfg.input_channels,
        cfg.cond_channels
    )
}

fn parse_gen(v: &str) -> Result<GeneratorConfig> {
    let nums: Vec<usize> = v
        .split(',')
        .map(|s| parse_value("generator", s.trim()))
        .collect::<Result<_>>()?;
    if nums.len() != 8 {
        return Err(Error::usage(format!("generator spec '{v}' needs 8 fields")));
    }
    Ok(GeneratorConfig {
        n_layers: nums[0],
        dilation_cycle: nums[1],
        residual_channels: nums[2],
        gate_channels: nums[3],
        skip_channels: nums[4],
        kernel: nums[5],
        input_channels: nums[6],
        cond_channels: nums[7],
    })
}

impl ModelSpec {
    /// The spec implied by a training config (desk profile shrinks the
    /// discriminator along with the generators).
    pub fn from_train_config(cfg: &TrainConfig) -> Result<Self> {
        let model = crate::nets::PeriodNetModel::<f32>::build(
            cfg.variant,
            cfg.profile,
            crate::features::FEATURE_DIM,
            0,
        )?;
        let discriminator = match cfg.profile {
            Profile::Full => DiscriminatorConfig::full(),
            Profile::Desk => DiscriminatorConfig::desk(),
        };
        Ok(ModelSpec {
            variant: cfg.variant,
            sample_rate: cfg.sample_rate,
            primary: model.primary.cfg.clone(),
            aperiodic: model.aperiodic.as_ref().map(|a| a.cfg.clone()),
            discriminator,
            sine_amplitude: cfg.sine_amplitude,
            vuv_window_ms: cfg.vuv_window_ms,
            resolutions: cfg.resolutions.clone(),
            lambda_adv: cfg.lambda_adv,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("variant = {}\n", self.variant));
        out.push_str(&format!("sample_rate = {}\n", self.sample_rate));
        out.push_str(&format!("primary = {}\n", fmt_gen(&self.primary)));
        if let Some(a) = &self.aperiodic {
            out.push_str(&format!("aperiodic = {}\n", fmt_gen(a)));
        }
        out.push_str(&format!(
            "discriminator = {},{},{},{}\n",
            self.discriminator.n_layers,
            self.discriminator.kernel,
            self.discriminator.channels,
            self.discriminator.leaky_slope
        ));
        out.push_str(&format!("sine_amplitude = {}\n", self.sine_amplitude));
        out.push_str(&format!("vuv_window_ms = {}\n", self.vuv_window_ms));
        out.push_str(&format!(
            "resolutions = {}\n",
            fmt_resolutions(&self.resolutions)
        ));
        out.push_str(&format!("lambda_adv = {}\n", self.lambda_adv));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("bad model spec line '{line}'")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::data(format!("model spec missing '{k}'")))
        };
        let disc_raw = get("discriminator")?;
        let d: Vec<&str> = disc_raw.split(',').map(str::trim).collect();
        if d.len() != 4 {
            return Err(Error::data(format!("bad discriminator spec '{disc_raw}'")));
        }
        let n_layers: usize = parse_value("discriminator", d[0])?;
        Ok(ModelSpec {
            variant: get("variant")?.parse()?,
            sample_rate: parse_value("sample_rate", get("sample_rate")?)?,
            primary: parse_gen(get("primary")?)?,
            aperiodic: map.get("aperiodic").map(|v| parse_gen(v)).transpose()?,
            discriminator: DiscriminatorConfig {
                n_layers,
                kernel: parse_value("discriminator", d[1])?,
                channels: parse_value("discriminator", d[2])?,
                leaky_slope: parse_value("discriminator", d[3])?,
                dilations: (1..=n_layers).collect(),
            },
            sine_amplitude: parse_value("sine_amplitude", get("sine_amplitude")?)?,
            vuv_window_ms: parse_value("vuv_window_ms", get("vuv_window_ms")?)?,
            resolutions: parse_resolutions(get("resolutions")?)?,
            lambda_adv: parse_value("lambda_adv", get("lambda_adv")?)?,
        })
    }

    /// Rebuild the model skeleton (parameter values come from the checkpoint).
    pub fn build_model(&self, seed: u64) -> Result<crate::nets::PeriodNetModel<f32>> {
        crate::nets::PeriodNetModel::from_configs(
            self.variant,
            self.primary.clone(),
            self.aperiodic.clone(),
            seed,
        )
    }

    pub fn stft_config(&self) -> StftLossConfig {
        StftLossConfig {
            resolutions: self.resolutions.clone(),
            eps: crate::tensor::MAGNITUDE_EPS,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# toy config
[data]
clip = a.wav a.pnft
clip = b.wav b.pnft

[model]
variant = PM2
profile = desk
sample_rate = 48000

[train]
iterations = 100
warmup_iterations = 10
seed = 7
out_dir = out
";

    #[test]
    fn parses_sections_and_repeated_keys() {
        let cfg = TrainConfig::from_text(SAMPLE).unwrap();
        assert_eq!(cfg.clips.len(), 2);
        assert_eq!(cfg.variant, Variant::Pm2);
        assert_eq!(cfg.iterations, 100);
        assert_eq!(cfg.warmup_iterations, 10);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lambda_adv, 4.0);
        assert_eq!(cfg.resolutions.len(), 3);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let bad = SAMPLE.replace("seed = 7", "sneed = 7");
        assert!(matches!(
            TrainConfig::from_text(&bad),
            Err(Error::Usage { .. })
        ));
        let bad_section = format!("{SAMPLE}\n[blah]\nx = 1\n");
        assert!(TrainConfig::from_text(&bad_section).is_err());
    }

    #[test]
    fn warmup_longer_than_run_is_rejected() {
        let bad = SAMPLE.replace("warmup_iterations = 10", "warmup_iterations = 101");
        assert!(TrainConfig::from_text(&bad).is_err());
    }

    #[test]
    fn missing_variant_is_rejected() {
        let bad = SAMPLE.replace("variant = PM2", "");
        assert!(TrainConfig::from_text(&bad).is_err());
    }

    #[test]
    fn model_spec_round_trips_through_text() {
        let cfg = TrainConfig::from_text(SAMPLE).unwrap();
        let spec = ModelSpec::from_train_config(&cfg).unwrap();
        let text = spec.to_text();
        let back = ModelSpec::from_text(&text).unwrap();
        assert_eq!(back, spec);
        assert!(back.aperiodic.is_some());
    }

    #[test]
    fn resolution_list_parses() {
        let res = parse_resolutions("512:120:512, 1024:240:600").unwrap();
        assert_eq!(res.len(), 2);
        assert_eq!(res[1].fft_size, 1024);
        assert!(parse_resolutions("512:120").is_err());
    }
}
