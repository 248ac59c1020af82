//! Iterative up/down refinement network built from shared-weight encoder stages.
//!
//! Layout of a forward pass on an `[c, h, w]` cube:
//!
//! 1. 3×3 projection `c → C`.
//! 2. For each stage: rescale by its factor, add the most recent
//!    post-rescale feature of equal resolution from the two preceding
//!    stages, then run the encoder layer assigned to that resolution.
//! 3. 3×3 projection `C → c`.
//!
//! Encoder weights are shared between all stages whose encoder sees the
//! same resolution; rescale weights are shared between stages that apply
//! the same factor at the same input resolution.

mod config;
mod params;

pub use config::{
    default_schedule, format_schedule, parse_schedule, Factor, ModelConfig, CONFIG_KEYS,
};
pub use params::{Bound, ParamStore, StageGroups};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::essa_graph;
use crate::data::HsiCube;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{ConvMode, Element, Graph, Tensor, Var};

/// Static description of one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageInfo {
    pub factor: Factor,
    /// Resolution level (base-2 exponent relative to the input) before rescaling.
    pub level_in: i32,
    pub level_out: i32,
    pub groups: StageGroups,
    /// Earlier stage whose post-rescale feature is added after rescaling.
    pub residual_from: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub stages: Vec<StageInfo>,
    /// Input height and width must be multiples of this.
    pub divisor: usize,
}

impl Architecture {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut stages: Vec<StageInfo> = Vec::with_capacity(cfg.schedule.len());
        let mut level = 0i32;
        let mut lowest = 0i32;
        for (i, &f) in cfg.schedule.iter().enumerate() {
            let level_in = level;
            level += f.log2();
            lowest = lowest.min(level);
            let residual_from = (i.saturating_sub(2)..i)
                .rev()
                .find(|&j| stages[j].level_out == level);
            let rescale = (f.log2() != 0).then(|| format!("rescale[{level_in}:{f}]"));
            stages.push(StageInfo {
                factor: f,
                level_in,
                level_out: level,
                groups: StageGroups {
                    encoder: format!("encoder[{level}]"),
                    rescale,
                },
                residual_from,
            });
        }
        Ok(Self {
            stages,
            divisor: 1usize << (-lowest) as u32,
        })
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h % self.divisor != 0 || w % self.divisor != 0 {
            return invalid(format!(
                "input {h}x{w} is not divisible by {} as required by the schedule",
                self.divisor
            ));
        }
        Ok(())
    }
}

/// Configuration, architecture and parameters of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element = f32> {
    pub cfg: ModelConfig,
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

fn init_weight<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor<T>> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
}

fn add_conv<T: Element>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) -> Result<()> {
    store.insert(format!("{name}.w"), init_weight(rng, &[cout, cin, k, k])?)?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout])?)
}

impl<T: Element> Model<T> {
    /// Creates parameters deterministically from `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::from_config(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let (c, b) = (cfg.channels, cfg.bands);
        add_conv(&mut store, &mut rng, "head", c, b, 3)?;
        for st in &arch.stages {
            if let Some(key) = &st.groups.rescale {
                if !store.contains(&format!("{key}.0.w")) {
                    for step in 0..st.factor.log2().unsigned_abs() as usize {
                        let name = format!("{key}.{step}");
                        if st.factor.log2() > 0 {
                            add_conv(&mut store, &mut rng, &name, 4 * c, c, 1)?;
                        } else {
                            add_conv(&mut store, &mut rng, &name, c, 4 * c, 1)?;
                        }
                    }
                }
            }
            let key = &st.groups.encoder;
            if !store.contains(&format!("{key}.q.w")) {
                for proj in ["q", "k", "v"] {
                    add_conv(&mut store, &mut rng, &format!("{key}.{proj}"), c, c, 1)?;
                }
                add_conv(
                    &mut store,
                    &mut rng,
                    &format!("{key}.ffn1"),
                    2 * c,
                    2 * c,
                    1,
                )?;
                add_conv(&mut store, &mut rng, &format!("{key}.dw"), 2 * c, 1, 3)?;
                add_conv(&mut store, &mut rng, &format!("{key}.ffn2"), c, 2 * c, 1)?;
            }
        }
        add_conv(&mut store, &mut rng, "tail", b, c, 3)?;
        store.share_map = arch.stages.iter().map(|s| s.groups.clone()).collect();
        Ok(Self {
            cfg: cfg.clone(),
            arch,
            params: store,
        })
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Records the full network on `g` for an input node of shape `[c, h, w]`.
    pub fn forward_graph(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[0] != self.cfg.bands {
            return shape_err("model input", &shape, &[self.cfg.bands, 0, 0]);
        }
        self.arch.check_input(shape[1], shape[2])?;
        let mut h = conv(g, p, "head", x, ConvMode::Spatial)?;
        let mut retained: Vec<Var> = Vec::with_capacity(self.arch.stages.len());
        for st in &self.arch.stages {
            h = rescale(g, p, st, h)?;
            retained.push(h);
            if let Some(j) = st.residual_from {
                h = g.add(h, retained[j])?;
            }
            h = encoder_layer(g, p, &st.groups.encoder, &self.cfg, h)?;
        }
        conv(g, p, "tail", h, ConvMode::Spatial)
    }

    /// Inference on one cube; the output is not clamped.
    pub fn forward(&self, lr: &HsiCube<T>) -> Result<HsiCube<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.constant(lr.tensor().clone());
        let y = self.forward_graph(&mut g, &bound, x)?;
        HsiCube::new(g.value(y).clone())
    }
}

fn conv<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    name: &str,
    x: Var,
    mode: ConvMode,
) -> Result<Var> {
    let y = g.conv2d(x, p.var(&format!("{name}.w")), mode)?;
    g.channel_bias(y, p.var(&format!("{name}.b")))
}

/// Applies every ×2 / ×½ step of a stage's rescale factor.
fn rescale<T: Element>(g: &mut Graph<T>, p: &Bound, st: &StageInfo, mut x: Var) -> Result<Var> {
    let Some(key) = &st.groups.rescale else {
        return Ok(x);
    };
    let up = st.factor.log2() > 0;
    for step in 0..st.factor.log2().unsigned_abs() as usize {
        let name = format!("{key}.{step}");
        x = if up {
            let y = conv(g, p, &name, x, ConvMode::Pointwise)?;
            g.pixel_shuffle(y, 2)?
        } else {
            let y = g.pixel_unshuffle(x, 2)?;
            conv(g, p, &name, y, ConvMode::Pointwise)?
        };
    }
    Ok(x)
}

/// `[C, H, W]` feature to `[H·W, C]` tokens.
fn to_tokens<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0], s[1] * s[2]])?;
    g.transpose(flat)
}

fn from_tokens<T: Element>(g: &mut Graph<T>, t: Var, c: usize, h: usize, w: usize) -> Result<Var> {
    let ct = g.transpose(t)?;
    g.reshape(ct, &[c, h, w])
}

/// Attention over spatial tokens followed by the convolutional feed-forward block.
pub fn encoder_layer<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    key: &str,
    cfg: &ModelConfig,
    x: Var,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = if cfg.pre_norm {
        let t = to_tokens(g, x)?;
        let n = g.center_normalize(t, T::from_f64(cfg.attention.epsilon))?;
        let n = g.scale(n, T::from_f64((c as f64).sqrt()));
        from_tokens(g, n, c, h, w)?
    } else {
        x
    };
    let mut qkv = [src; 3];
    for (slot, proj) in qkv.iter_mut().zip(["q", "k", "v"]) {
        let y = conv(g, p, &format!("{key}.{proj}"), src, ConvMode::Pointwise)?;
        *slot = to_tokens(g, y)?;
    }
    let a = essa_graph(g, qkv[0], qkv[1], qkv[2], &cfg.attention)?;
    let a = from_tokens(g, a, c, h, w)?;
    let cat = g.concat(&[a, x], 0)?;
    let y = conv(g, p, &format!("{key}.ffn1"), cat, ConvMode::Pointwise)?;
    let y = conv(g, p, &format!("{key}.dw"), y, ConvMode::Depthwise)?;
    let y = g.gelu(y);
    conv(g, p, &format!("{key}.ffn2"), y, ConvMode::Pointwise)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(bands: usize, c: usize, scale: usize, stages: &str) -> ModelConfig {
        ModelConfig {
            channels: c,
            schedule: parse_schedule(stages).unwrap(),
            ..ModelConfig::desk(bands, scale)
        }
    }

    #[test]
    fn default_schedule_shares_alternate_stages() {
        let arch = Architecture::from_config(&ModelConfig::desk(4, 4)).unwrap();
        let enc: Vec<&str> = arch
            .stages
            .iter()
            .map(|s| s.groups.encoder.as_str())
            .collect();
        assert_eq!(enc[0], enc[2]);
        assert_eq!(enc[1], enc[3]);
        assert_ne!(enc[0], enc[1]);
        assert_ne!(enc[4], enc[0]);
        let res: Vec<Option<usize>> = arch.stages.iter().map(|s| s.residual_from).collect();
        assert_eq!(res, vec![None, None, Some(0), Some(1), None]);
        assert_eq!(arch.divisor, 1);
    }

    #[test]
    fn eight_times_final_stage_has_three_steps() {
        let m = Model::<f32>::build(
            &ModelConfig {
                channels: 4,
                ..ModelConfig::desk(3, 8)
            },
            0,
        )
        .unwrap();
        let key = m.arch.stages[4].groups.rescale.clone().unwrap();
        let steps = (0..5)
            .filter(|i| m.params.contains(&format!("{key}.{i}.w")))
            .count();
        assert_eq!(steps, 3);
    }

    #[test]
    fn builds_are_deterministic() {
        let c = cfg(3, 4, 2, "2,1/2,2");
        assert_eq!(
            Model::<f32>::build(&c, 5).unwrap(),
            Model::<f32>::build(&c, 5).unwrap()
        );
        assert_ne!(
            Model::<f32>::build(&c, 5).unwrap(),
            Model::<f32>::build(&c, 6).unwrap()
        );
    }

    #[test]
    fn output_scales_spatial_dims() {
        for (s, stages, hw) in [
            (2, "2,1/2,2,1/2,2", 16),
            (4, "2,1/2,2,1/2,4", 16),
            (2, "1/2,4", 8),
        ] {
            let m = Model::<f32>::build(&cfg(3, 4, s, stages), 1).unwrap();
            let x = HsiCube::new(Tensor::full(&[3, hw, hw], 0.5).unwrap()).unwrap();
            let y = m.forward(&x).unwrap();
            assert_eq!((y.bands(), y.height(), y.width()), (3, s * hw, s * hw));
        }
    }

    #[test]
    fn indivisible_input_rejected() {
        let m = Model::<f32>::build(&cfg(2, 4, 2, "1/2,4"), 1).unwrap();
        let x = HsiCube::new(Tensor::full(&[2, 5, 6], 0.5).unwrap()).unwrap();
        assert!(m.forward(&x).is_err());
        let x = HsiCube::new(Tensor::full(&[1, 6, 6], 0.5).unwrap()).unwrap();
        assert!(m.forward(&x).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = Model::<f64>::build(&cfg(2, 4, 2, "2,1/2,2"), 1).unwrap();
        for p in m.params.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = HsiCube::new(Tensor::full(&[2, 4, 4], 0.3).unwrap()).unwrap();
        assert_eq!(m.forward(&x).unwrap().tensor().max_abs(), 0.0);
    }
}
