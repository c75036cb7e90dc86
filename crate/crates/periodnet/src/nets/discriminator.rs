//! Multi-scale discriminator bank: three identical fully convolutional
//! stacks judging the waveform at full, half, and third sample rate via
//! average pooling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generator::ConvWn;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Graph, PadMode, Scalar, TensorId};
use crate::util::mix_seed;

/// Architecture of one discriminator stack.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub n_layers: usize,
    pub kernel: usize,
    pub channels: usize,
    pub leaky_slope: f64,
    /// Per-layer dilations; defaults to 1, 2, ..., n_layers.
    pub dilations: Vec<usize>,
}

impl DiscriminatorConfig {
    /// Full-scale stack: ten dilated non-causal convolutions, 64 channels.
    pub fn full() -> Self {
        Self::with_width(10, 64)
    }

    /// Desk-scale stack at 16 channels.
    pub fn desk() -> Self {
        Self::with_width(10, 16)
    }

    pub fn with_width(n_layers: usize, channels: usize) -> Self {
        DiscriminatorConfig {
            n_layers,
            kernel: 3,
            channels,
            leaky_slope: 0.2,
            dilations: (1..=n_layers).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 || self.channels == 0 {
            return Err(Error::InvalidArgument {
                context: "discriminator config",
                detail: "need >= 2 layers and positive width".into(),
            });
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument {
                context: "discriminator config",
                detail: "non-causal kernel must be odd".into(),
            });
        }
        if self.dilations.len() != self.n_layers {
            return Err(Error::InvalidArgument {
                context: "discriminator config",
                detail: "dilation schedule length must match layer count".into(),
            });
        }
        Ok(())
    }

    /// Receptive field in samples at the stack's own rate.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }
}

/// One weight-normalized conv stack ending in a single-channel score map.
#[derive(Debug, Clone)]
pub struct DiscriminatorStack<S> {
    pub cfg: DiscriminatorConfig,
    pub params: ParamStore<S>,
    layers: Vec<ConvWn>,
}

impl<S: Scalar> DiscriminatorStack<S> {
    pub fn build(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let c_in = if i == 0 { 1 } else { cfg.channels };
                let c_out = if i == cfg.n_layers - 1 { 1 } else { cfg.channels };
                ConvWn::init(
                    &mut params,
                    &mut rng,
                    &format!("layer{i}"),
                    c_out,
                    c_in,
                    cfg.kernel,
                    cfg.dilations[i],
                    PadMode::NonCausalSame,
                )
            })
            .collect();
        Ok(DiscriminatorStack { cfg, params, layers })
    }

    /// Per-sample score map `[1, T]`; leaky ReLU after every layer except the
    /// last.
    pub fn forward(
        &self,
        graph: &mut Graph<S>,
        bound: &[TensorId],
        wave: TensorId,
    ) -> Result<TensorId> {
        let mut h = wave;
        let slope = crate::tensor::sc::<S>(self.cfg.leaky_slope);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(graph, bound, h)?;
            if i + 1 < self.layers.len() {
                h = graph.leaky_relu(h, slope)?;
            }
        }
        Ok(h)
    }
}

/// Average-pooling factors for the three scales (full, half, third rate).
pub const SCALE_FACTORS: [usize; 3] = [1, 2, 3];

/// Three identically configured discriminators with independent parameters.
#[derive(Debug, Clone)]
pub struct DiscriminatorBank<S> {
    pub stacks: Vec<DiscriminatorStack<S>>,
}

impl<S: Scalar> DiscriminatorBank<S> {
    pub fn build(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let stacks = SCALE_FACTORS
            .iter()
            .enumerate()
            .map(|(i, _)| DiscriminatorStack::build(cfg.clone(), mix_seed(seed, 0xd15c, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscriminatorBank { stacks })
    }

    pub fn n_scalars(&self) -> usize {
        self.stacks.iter().map(|s| s.params.n_scalars()).sum()
    }

    /// Bind all three stacks; returns one binding vector per stack.
    pub fn bind(&self, graph: &mut Graph<S>, trainable: bool) -> Result<Vec<Vec<TensorId>>> {
        self.stacks
            .iter()
            .map(|s| s.params.bind(graph, trainable))
            .collect()
    }

    /// Score the waveform at every scale. The input must be long enough that
    /// the deepest pooled scale still covers one receptive field.
    pub fn discriminate(
        &self,
        graph: &mut Graph<S>,
        bound: &[Vec<TensorId>],
        wave: TensorId,
    ) -> Result<Vec<TensorId>> {
        let t = match graph.shape(wave) {
            [1, t] => *t,
            other => {
                return Err(Error::ShapeMismatch {
                    context: "discriminate",
                    detail: format!("expected [1, T], got {other:?}"),
                })
            }
        };
        let rf = self.stacks[0].cfg.receptive_field();
        let max_factor = *SCALE_FACTORS.iter().max().unwrap();
        if t / max_factor < rf {
            return Err(Error::InvalidArgument {
                context: "discriminate",
                detail: format!(
                    "input of {t} samples too short: deepest scale needs {} * {rf}",
                    max_factor
                ),
            });
        }
        SCALE_FACTORS
            .iter()
            .zip(bound)
            .zip(&self.stacks)
            .map(|((&factor, b), stack)| {
                let scaled = if factor == 1 {
                    wave
                } else {
                    graph.avg_pool1d(wave, factor)?
                };
                stack.forward(graph, b, scaled)
            })
            .collect()
    }
}
