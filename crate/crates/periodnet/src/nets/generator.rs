//! WaveNet-style generator: a stack of non-causal dilated residual blocks
//! with gated activations, per-block 1x1 conditioning, and skip connections
//! collected into a two-layer output head. Every convolution is
//! weight-normalized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{kaiming_uniform, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, PadMode, Scalar, TensorId};

/// Architecture of one generator stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub n_layers: usize,
    /// Layers per dilation cycle; block i gets dilation 2^(i % cycle).
    pub dilation_cycle: usize,
    pub residual_channels: usize,
    /// Width of the dilated conv output; split in half for the gate.
    pub gate_channels: usize,
    pub skip_channels: usize,
    pub kernel: usize,
    pub input_channels: usize,
    pub cond_channels: usize,
}

impl GeneratorConfig {
    /// Full-scale periodic/baseline stack: 30 layers in three cycles of ten,
    /// 64 residual/skip channels, kernel 3.
    pub fn full_periodic(input_channels: usize, cond_channels: usize) -> Self {
        GeneratorConfig {
            n_layers: 30,
            dilation_cycle: 10,
            residual_channels: 64,
            gate_channels: 128,
            skip_channels: 64,
            kernel: 3,
            input_channels,
            cond_channels,
        }
    }

    /// Full-scale aperiodic stack: 10 layers, a single dilation cycle.
    pub fn full_aperiodic(input_channels: usize, cond_channels: usize) -> Self {
        GeneratorConfig {
            n_layers: 10,
            ..Self::full_periodic(input_channels, cond_channels)
        }
    }

    /// Desk-scale periodic/baseline stack: same topology laws at CPU-friendly
    /// width (16 channels, 20 layers in two cycles).
    pub fn desk_periodic(input_channels: usize, cond_channels: usize) -> Self {
        GeneratorConfig {
            n_layers: 20,
            dilation_cycle: 10,
            residual_channels: 16,
            gate_channels: 16,
            skip_channels: 16,
            kernel: 3,
            input_channels,
            cond_channels,
        }
    }

    /// Desk-scale aperiodic stack: 10 layers, one cycle.
    pub fn desk_aperiodic(input_channels: usize, cond_channels: usize) -> Self {
        GeneratorConfig {
            n_layers: 10,
            ..Self::desk_periodic(input_channels, cond_channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0
            || self.dilation_cycle == 0
            || self.residual_channels == 0
            || self.skip_channels == 0
            || self.input_channels == 0
            || self.cond_channels == 0
        {
            return Err(Error::InvalidArgument {
                context: "generator config",
                detail: "all sizes must be positive".into(),
            });
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument {
                context: "generator config",
                detail: "non-causal kernel must be odd".into(),
            });
        }
        if self.gate_channels % 2 != 0 {
            return Err(Error::InvalidArgument {
                context: "generator config",
                detail: "gate channels must be even (tanh/sigmoid halves)".into(),
            });
        }
        if self.n_layers % self.dilation_cycle != 0 {
            return Err(Error::InvalidArgument {
                context: "generator config",
                detail: format!(
                    "{} layers not divisible by cycle {}",
                    self.n_layers, self.dilation_cycle
                ),
            });
        }
        Ok(())
    }

    /// Per-block dilations: 1, 2, 4, ... repeated each cycle.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.n_layers)
            .map(|i| 1usize << (i % self.dilation_cycle))
            .collect()
    }

    /// Receptive field of the stack: 1 + (K - 1) * sum(dilations). The 1x1
    /// input and output convolutions add nothing.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations().iter().sum::<usize>()
    }
}

/// A weight-normalized convolution: stores direction `v`, magnitude `g`, and
/// bias `b`; the effective kernel is rebuilt on every forward.
#[derive(Debug, Clone)]
pub(crate) struct ConvWn {
    pub v: ParamId,
    pub g: ParamId,
    pub b: ParamId,
    pub dilation: usize,
    pub pad: PadMode,
}

impl ConvWn {
    pub(crate) fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_out: usize,
        c_in: usize,
        kernel: usize,
        dilation: usize,
        pad: PadMode,
    ) -> Self {
        let fan_in = c_in * kernel;
        let v_data = kaiming_uniform::<S>(rng, c_out * c_in * kernel, fan_in);
        // g starts at the per-channel norm of v so the initial effective
        // weight equals v itself.
        let per = c_in * kernel;
        let g_data: Vec<S> = (0..c_out)
            .map(|c| {
                v_data[c * per..(c + 1) * per]
                    .iter()
                    .fold(S::zero(), |acc, &x| acc + x * x)
                    .sqrt()
            })
            .collect();
        let v = store.add(format!("{name}.v"), vec![c_out, c_in, kernel], v_data);
        let g = store.add(format!("{name}.g"), vec![c_out], g_data);
        let b = store.add(format!("{name}.b"), vec![c_out], vec![S::zero(); c_out]);
        ConvWn {
            v,
            g,
            b,
            dilation,
            pad,
        }
    }

    pub(crate) fn forward<S: Scalar>(
        &self,
        graph: &mut Graph<S>,
        bound: &[TensorId],
        x: TensorId,
    ) -> Result<TensorId> {
        let w = graph.weight_norm(bound[self.v.0], bound[self.g.0])?;
        graph.conv1d(x, w, Some(bound[self.b.0]), self.dilation, self.pad)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    dilated: ConvWn,
    cond: ConvWn,
    out_res: ConvWn,
    out_skip: ConvWn,
}

/// A built generator: configuration plus its parameter store.
#[derive(Debug, Clone)]
pub struct GeneratorStack<S> {
    pub cfg: GeneratorConfig,
    pub params: ParamStore<S>,
    input_conv: ConvWn,
    blocks: Vec<ResBlock>,
    head1: ConvWn,
    head2: ConvWn,
}

impl<S: Scalar> GeneratorStack<S> {
    /// Build with deterministic seeded initialization.
    pub fn build(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let input_conv = ConvWn::init(
            &mut params,
            &mut rng,
            "input",
            cfg.residual_channels,
            cfg.input_channels,
            1,
            1,
            PadMode::NonCausalSame,
        );
        let half = cfg.gate_channels / 2;
        let blocks = cfg
            .dilations()
            .into_iter()
            .enumerate()
            .map(|(i, dilation)| ResBlock {
                dilated: ConvWn::init(
                    &mut params,
                    &mut rng,
                    &format!("block{i}.dilated"),
                    cfg.gate_channels,
                    cfg.residual_channels,
                    cfg.kernel,
                    dilation,
                    PadMode::NonCausalSame,
                ),
                cond: ConvWn::init(
                    &mut params,
                    &mut rng,
                    &format!("block{i}.cond"),
                    cfg.gate_channels,
                    cfg.cond_channels,
                    1,
                    1,
                    PadMode::NonCausalSame,
                ),
                out_res: ConvWn::init(
                    &mut params,
                    &mut rng,
                    &format!("block{i}.res"),
                    cfg.residual_channels,
                    half,
                    1,
                    1,
                    PadMode::NonCausalSame,
                ),
                out_skip: ConvWn::init(
                    &mut params,
                    &mut rng,
                    &format!("block{i}.skip"),
                    cfg.skip_channels,
                    half,
                    1,
                    1,
                    PadMode::NonCausalSame,
                ),
            })
            .collect();
        let head1 = ConvWn::init(
            &mut params,
            &mut rng,
            "head1",
            cfg.skip_channels,
            cfg.skip_channels,
            1,
            1,
            PadMode::NonCausalSame,
        );
        let head2 = ConvWn::init(
            &mut params,
            &mut rng,
            "head2",
            1,
            cfg.skip_channels,
            1,
            1,
            PadMode::NonCausalSame,
        );
        Ok(GeneratorStack {
            cfg,
            params,
            input_conv,
            blocks,
            head1,
            head2,
        })
    }

    /// Run the stack. `bound` must come from `self.params.bind` on the same
    /// graph. Input is `[input_channels, T]`, conditioning `[cond_channels, T]`,
    /// output `[1, T]`.
    pub fn forward(
        &self,
        graph: &mut Graph<S>,
        bound: &[TensorId],
        input: TensorId,
        cond: TensorId,
    ) -> Result<TensorId> {
        let t = match graph.shape(input) {
            [c, t] if *c == self.cfg.input_channels => *t,
            other => {
                return Err(Error::ShapeMismatch {
                    context: "generator input",
                    detail: format!(
                        "expected [{}, T], got {other:?}",
                        self.cfg.input_channels
                    ),
                })
            }
        };
        match graph.shape(cond) {
            [c, tc] if *c == self.cfg.cond_channels && *tc == t => {}
            other => {
                return Err(Error::ShapeMismatch {
                    context: "generator conditioning",
                    detail: format!(
                        "expected [{}, {t}], got {other:?}",
                        self.cfg.cond_channels
                    ),
                })
            }
        }

        let half = self.cfg.gate_channels / 2;
        let mut h = self.input_conv.forward(graph, bound, input)?;
        let mut skip_acc: Option<TensorId> = None;
        for block in &self.blocks {
            let z = block.dilated.forward(graph, bound, h)?;
            let c = block.cond.forward(graph, bound, cond)?;
            let zc = graph.add(z, c)?;
            let a = graph.slice_channels(zc, 0, half)?;
            let b = graph.slice_channels(zc, half, 2 * half)?;
            let gated = graph.gated_activation(a, b)?;
            let res = block.out_res.forward(graph, bound, gated)?;
            h = graph.add(h, res)?;
            let s = block.out_skip.forward(graph, bound, gated)?;
            skip_acc = Some(match skip_acc {
                Some(acc) => graph.add(acc, s)?,
                None => s,
            });
        }
        let mut y = graph.relu(skip_acc.expect("at least one block"))?;
        y = self.head1.forward(graph, bound, y)?;
        y = graph.relu(y)?;
        self.head2.forward(graph, bound, y)
    }

    /// Names of all weight-direction parameters; used to verify that every
    /// convolution carries weight normalization.
    pub fn conv_param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> GeneratorConfig {
        GeneratorConfig {
            n_layers: 4,
            dilation_cycle: 2,
            residual_channels: 3,
            gate_channels: 4,
            skip_channels: 3,
            kernel: 3,
            input_channels: 2,
            cond_channels: 5,
        }
    }

    #[test]
    fn receptive_fields_match_closed_form() {
        let periodic = GeneratorConfig::full_periodic(2, 77);
        assert_eq!(periodic.receptive_field(), 6139);
        assert_eq!(periodic.dilations().iter().max(), Some(&512));
        assert_eq!(periodic.dilations().len(), 30);

        let aperiodic = GeneratorConfig::full_aperiodic(2, 77);
        assert_eq!(aperiodic.receptive_field(), 2047);
        assert_eq!(aperiodic.dilations(), vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512]);
    }

    #[test]
    fn output_length_matches_input_length() {
        let stack = GeneratorStack::<f64>::build(tiny_cfg(), 3).unwrap();
        for t in [16usize, 33, 100] {
            let mut g = Graph::new();
            let bound = stack.params.bind(&mut g, false).unwrap();
            let x = g.leaf(vec![0.1; 2 * t], vec![2, t], false).unwrap();
            let c = g.leaf(vec![0.2; 5 * t], vec![5, t], false).unwrap();
            let y = stack.forward(&mut g, &bound, x, c).unwrap();
            assert_eq!(g.shape(y), &[1, t]);
        }
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let a = GeneratorStack::<f32>::build(tiny_cfg(), 42).unwrap();
        let b = GeneratorStack::<f32>::build(tiny_cfg(), 42).unwrap();
        assert_eq!(a.params.fingerprint(), b.params.fingerprint());
        let c = GeneratorStack::<f32>::build(tiny_cfg(), 43).unwrap();
        assert_ne!(a.params.fingerprint(), c.params.fingerprint());
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let stack = GeneratorStack::<f64>::build(tiny_cfg(), 7).unwrap();
        let run = || {
            let mut g = Graph::new();
            let bound = stack.params.bind(&mut g, false).unwrap();
            let x = g
                .leaf((0..32).map(|i| (i as f64 * 0.37).sin() * 0.1).collect(), vec![2, 16], false)
                .unwrap();
            let c = g
                .leaf((0..80).map(|i| (i as f64 * 0.11).cos()).collect(), vec![5, 16], false)
                .unwrap();
            let y = stack.forward(&mut g, &bound, x, c).unwrap();
            g.data(y).to_vec()
        };
        let y1 = run();
        let y2 = run();
        assert_eq!(y1, y2);
        assert!(y1.iter().all(|v| v.abs() < 1e3));
    }

    #[test]
    fn zeroed_head_gives_zero_output() {
        let mut stack = GeneratorStack::<f64>::build(tiny_cfg(), 7).unwrap();
        for p in stack.params.iter_mut() {
            if p.name == "head2.g" || p.name == "head2.b" {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::new();
        let bound = stack.params.bind(&mut g, false).unwrap();
        let x = g.leaf(vec![0.5; 32], vec![2, 16], false).unwrap();
        let c = g.leaf(vec![0.5; 80], vec![5, 16], false).unwrap();
        let y = stack.forward(&mut g, &bound, x, c).unwrap();
        assert!(g.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_conv_is_weight_normalized() {
        let stack = GeneratorStack::<f32>::build(tiny_cfg(), 0).unwrap();
        let names = stack.conv_param_names();
        let stems: std::collections::BTreeSet<&str> = names
            .iter()
            .filter_map(|n| n.strip_suffix(".v"))
            .collect();
        // 1 input + 4 blocks x 4 convs + 2 head convs.
        assert_eq!(stems.len(), 19);
        for stem in stems {
            assert!(names.contains(&format!("{stem}.g").as_str()), "{stem} missing g");
            assert!(names.contains(&format!("{stem}.b").as_str()), "{stem} missing b");
        }
        // No raw-weight conv present: every tensor is v, g, or b.
        assert!(names
            .iter()
            .all(|n| n.ends_with(".v") || n.ends_with(".g") || n.ends_with(".b")));
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = tiny_cfg();
        cfg.kernel = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.gate_channels = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.n_layers = 5;
        assert!(cfg.validate().is_err());
    }
}
