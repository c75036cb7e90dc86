//! The six model topologies and their excitation/conditioning routing.
//!
//! Baseline variants run one generator on a channel concatenation of the
//! excitation signals. Parallel variants run a sine-driven periodic generator
//! and a noise-driven aperiodic generator independently and sum the outputs;
//! PM2 additionally hides F0 from the aperiodic conditioning. The series
//! variant feeds the periodic generator's waveform into the aperiodic
//! generator's input alongside noise and V/UV.

use std::fmt;
use std::str::FromStr;

use super::generator::{GeneratorConfig, GeneratorStack};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, TensorId};
use crate::util::mix_seed;

/// Model topology selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Single generator on [noise; vuv].
    Bm1,
    /// Single generator on [sine; vuv].
    Bm2,
    /// Single generator on [sine; noise; vuv].
    Bm3,
    /// Periodic [sine; vuv] + aperiodic [noise; vuv], both fully conditioned.
    Pm1,
    /// As PM1 but the aperiodic generator never sees F0.
    Pm2,
    /// Series: aperiodic input is [noise; vuv; periodic output].
    Sm,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Bm1,
        Variant::Bm2,
        Variant::Bm3,
        Variant::Pm1,
        Variant::Pm2,
        Variant::Sm,
    ];

    /// True for PM1/PM2/SM, which produce separate component waveforms.
    pub fn has_components(&self) -> bool {
        matches!(self, Variant::Pm1 | Variant::Pm2 | Variant::Sm)
    }

    /// True when the aperiodic conditioning excludes the F0 column.
    pub fn aperiodic_drops_f0(&self) -> bool {
        matches!(self, Variant::Pm2)
    }

    /// Input channels of the primary (or single) generator.
    fn primary_input_channels(&self) -> usize {
        match self {
            Variant::Bm1 | Variant::Bm2 => 2,
            Variant::Bm3 => 3,
            Variant::Pm1 | Variant::Pm2 | Variant::Sm => 2,
        }
    }

    /// Input channels of the aperiodic generator, if the variant has one.
    fn aperiodic_input_channels(&self) -> Option<usize> {
        match self {
            Variant::Bm1 | Variant::Bm2 | Variant::Bm3 => None,
            Variant::Pm1 | Variant::Pm2 => Some(2),
            Variant::Sm => Some(3),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Bm1 => "BM1",
            Variant::Bm2 => "BM2",
            Variant::Bm3 => "BM3",
            Variant::Pm1 => "PM1",
            Variant::Pm2 => "PM2",
            Variant::Sm => "SM",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BM1" => Ok(Variant::Bm1),
            "BM2" => Ok(Variant::Bm2),
            "BM3" => Ok(Variant::Bm3),
            "PM1" => Ok(Variant::Pm1),
            "PM2" => Ok(Variant::Pm2),
            "SM" => Ok(Variant::Sm),
            other => Err(Error::usage(format!(
                "unknown variant '{other}' (expected BM1|BM2|BM3|PM1|PM2|SM)"
            ))),
        }
    }
}

/// Width profile for generator construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 30/10-layer stacks at 64 channels.
    Full,
    /// 20/10-layer stacks at 16 channels for CPU runs.
    Desk,
}

impl Profile {
    fn primary(&self, input_channels: usize, cond_channels: usize) -> GeneratorConfig {
        match self {
            Profile::Full => GeneratorConfig::full_periodic(input_channels, cond_channels),
            Profile::Desk => GeneratorConfig::desk_periodic(input_channels, cond_channels),
        }
    }

    fn aperiodic(&self, input_channels: usize, cond_channels: usize) -> GeneratorConfig {
        match self {
            Profile::Full => GeneratorConfig::full_aperiodic(input_channels, cond_channels),
            Profile::Desk => GeneratorConfig::desk_aperiodic(input_channels, cond_channels),
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::usage(format!(
                "unknown profile '{other}' (expected full|desk)"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        })
    }
}

/// Excitation signals bound into a graph as `[1, T]` leaves.
#[derive(Debug, Clone, Copy)]
pub struct ExcitationLeaves {
    pub sine: TensorId,
    pub noise: TensorId,
    pub vuv: TensorId,
}

/// Conditioning tracks bound into a graph as `[C, T]` leaves. `no_f0` is only
/// consulted by PM2.
#[derive(Debug, Clone, Copy)]
pub struct CondLeaves {
    pub full: TensorId,
    pub no_f0: Option<TensorId>,
}

/// Component and sum waveforms of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub periodic: Option<TensorId>,
    pub aperiodic: Option<TensorId>,
    /// Final waveform; the only tensor the losses ever see.
    pub sum: TensorId,
}

/// A topology variant binding one or two generators.
#[derive(Debug, Clone)]
pub struct PeriodNetModel<S> {
    pub variant: Variant,
    pub primary: GeneratorStack<S>,
    pub aperiodic: Option<GeneratorStack<S>>,
}

impl<S: Scalar> PeriodNetModel<S> {
    /// Build a variant with seeded initialization. `cond_channels` is the
    /// full conditioning width (77).
    pub fn build(variant: Variant, profile: Profile, cond_channels: usize, seed: u64) -> Result<Self> {
        Self::from_configs(
            variant,
            profile.primary(variant.primary_input_channels(), cond_channels),
            variant.aperiodic_input_channels().map(|ic| {
                profile.aperiodic(
                    ic,
                    if variant.aperiodic_drops_f0() {
                        cond_channels - 1
                    } else {
                        cond_channels
                    },
                )
            }),
            seed,
        )
    }

    /// Build from explicit stack configurations (used by checkpoint restore).
    pub fn from_configs(
        variant: Variant,
        primary_cfg: GeneratorConfig,
        aperiodic_cfg: Option<GeneratorConfig>,
        seed: u64,
    ) -> Result<Self> {
        if variant.has_components() != aperiodic_cfg.is_some() {
            return Err(Error::InvalidArgument {
                context: "model",
                detail: format!("variant {variant} and aperiodic config mismatch"),
            });
        }
        if primary_cfg.input_channels != variant.primary_input_channels() {
            return Err(Error::InvalidArgument {
                context: "model",
                detail: format!(
                    "variant {variant} expects {} primary input channels",
                    variant.primary_input_channels()
                ),
            });
        }
        if let (Some(cfg), Some(expect)) = (&aperiodic_cfg, variant.aperiodic_input_channels()) {
            if cfg.input_channels != expect {
                return Err(Error::InvalidArgument {
                    context: "model",
                    detail: format!("variant {variant} expects {expect} aperiodic input channels"),
                });
            }
        }
        let primary = GeneratorStack::build(primary_cfg, mix_seed(seed, 0x6e1, 0))?;
        let aperiodic = aperiodic_cfg
            .map(|cfg| GeneratorStack::build(cfg, mix_seed(seed, 0x6e1, 1)))
            .transpose()?;
        Ok(PeriodNetModel {
            variant,
            primary,
            aperiodic,
        })
    }

    /// Total trainable scalar count across all generators.
    pub fn n_scalars(&self) -> usize {
        self.primary.params.n_scalars()
            + self
                .aperiodic
                .as_ref()
                .map_or(0, |a| a.params.n_scalars())
    }

    /// Largest receptive field across the stacks.
    pub fn receptive_field(&self) -> usize {
        self.primary
            .cfg
            .receptive_field()
            .max(self.aperiodic.as_ref().map_or(0, |a| a.cfg.receptive_field()))
    }

    /// Bind all generator parameters; primary first, then aperiodic.
    pub fn bind(&self, graph: &mut Graph<S>, trainable: bool) -> Result<BoundModel> {
        Ok(BoundModel {
            primary: self.primary.params.bind(graph, trainable)?,
            aperiodic: self
                .aperiodic
                .as_ref()
                .map(|a| a.params.bind(graph, trainable))
                .transpose()?,
        })
    }

    /// Route excitation and conditioning per the variant and produce the
    /// component and sum waveforms. All inputs must share the same length.
    pub fn forward(
        &self,
        graph: &mut Graph<S>,
        bound: &BoundModel,
        ex: ExcitationLeaves,
        cond: CondLeaves,
    ) -> Result<ForwardOutput> {
        match self.variant {
            Variant::Bm1 => {
                let input = graph.concat_channels(&[ex.noise, ex.vuv])?;
                let sum = self.primary.forward(graph, &bound.primary, input, cond.full)?;
                Ok(ForwardOutput {
                    periodic: None,
                    aperiodic: None,
                    sum,
                })
            }
            Variant::Bm2 => {
                let input = graph.concat_channels(&[ex.sine, ex.vuv])?;
                let sum = self.primary.forward(graph, &bound.primary, input, cond.full)?;
                Ok(ForwardOutput {
                    periodic: None,
                    aperiodic: None,
                    sum,
                })
            }
            Variant::Bm3 => {
                let input = graph.concat_channels(&[ex.sine, ex.noise, ex.vuv])?;
                let sum = self.primary.forward(graph, &bound.primary, input, cond.full)?;
                Ok(ForwardOutput {
                    periodic: None,
                    aperiodic: None,
                    sum,
                })
            }
            Variant::Pm1 | Variant::Pm2 => {
                let p_in = graph.concat_channels(&[ex.sine, ex.vuv])?;
                let periodic = self.primary.forward(graph, &bound.primary, p_in, cond.full)?;
                let a_cond = if self.variant == Variant::Pm2 {
                    cond.no_f0.ok_or(Error::InvalidArgument {
                        context: "model",
                        detail: "PM2 needs F0-free conditioning".into(),
                    })?
                } else {
                    cond.full
                };
                let a_in = graph.concat_channels(&[ex.noise, ex.vuv])?;
                let ap = self.aperiodic.as_ref().expect("parallel variant");
                let aperiodic =
                    ap.forward(graph, bound.aperiodic.as_ref().unwrap(), a_in, a_cond)?;
                let sum = graph.add(periodic, aperiodic)?;
                Ok(ForwardOutput {
                    periodic: Some(periodic),
                    aperiodic: Some(aperiodic),
                    sum,
                })
            }
            Variant::Sm => {
                let p_in = graph.concat_channels(&[ex.sine, ex.vuv])?;
                let periodic = self.primary.forward(graph, &bound.primary, p_in, cond.full)?;
                // Residual connection: the periodic waveform joins the
                // aperiodic generator's input channels.
                let a_in = graph.concat_channels(&[ex.noise, ex.vuv, periodic])?;
                let ap = self.aperiodic.as_ref().expect("series variant");
                let aperiodic =
                    ap.forward(graph, bound.aperiodic.as_ref().unwrap(), a_in, cond.full)?;
                let sum = graph.add(periodic, aperiodic)?;
                Ok(ForwardOutput {
                    periodic: Some(periodic),
                    aperiodic: Some(aperiodic),
                    sum,
                })
            }
        }
    }
}

/// Parameter bindings for one graph, aligned with the model's stores.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub primary: Vec<TensorId>,
    pub aperiodic: Option<Vec<TensorId>>,
}
