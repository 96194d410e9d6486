//! Network components: semantic fusion, encoder, generator, the dual-head
//! discriminator A (critic + projection) and the projection-only
//! discriminator B. All of them run on precomputed feature vectors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{Axis, Tape, Tensor, Var};
use crate::error::{dimension, Error, Result};
use crate::scalar::Real;

/// How the visual feature and the class semantics are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Affine transformation fusion: `alpha(s) * x + theta(s)`.
    Atf,
    /// `Linear([x, s])`, keeping the visual width.
    Concat,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Atf => "ATF",
            FusionMode::Concat => "CONCAT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ATF" => Some(FusionMode::Atf),
            "CONCAT" => Some(FusionMode::Concat),
            _ => None,
        }
    }
}

/// Hidden-layer widths of the two-layer stacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HiddenSizes {
    pub fusion: usize,
    pub encoder: usize,
    pub generator: usize,
    pub disc_a: usize,
    pub disc_b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_visual: usize,
    pub k_semantic: usize,
    pub d_latent: usize,
    pub k_proj: usize,
    pub hidden: HiddenSizes,
    pub fusion: FusionMode,
}

impl ModelConfig {
    /// Hidden widths default to twice the input width of each stack.
    pub fn new(d_visual: usize, k_semantic: usize, d_latent: usize, k_proj: usize) -> Self {
        Self {
            d_visual,
            k_semantic,
            d_latent,
            k_proj,
            hidden: HiddenSizes {
                fusion: 2 * k_semantic,
                encoder: 2 * d_visual,
                generator: 2 * d_latent,
                disc_a: 2 * d_visual,
                disc_b: 2 * d_visual,
            },
            fusion: FusionMode::Atf,
        }
    }

    /// Small profile that trains in seconds.
    pub fn desk() -> Self {
        Self::new(64, 16, 16, 24)
    }

    /// Latent 500 and projection 900 over the given feature widths.
    pub fn full_scale(d_visual: usize, k_semantic: usize) -> Self {
        Self::new(d_visual, k_semantic, 500, 900)
    }

    pub fn with_fusion(mut self, fusion: FusionMode) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hidden;
        let dims = [
            ("d_visual", self.d_visual),
            ("k_semantic", self.k_semantic),
            ("d_latent", self.d_latent),
            ("k_proj", self.k_proj),
            ("hidden.fusion", h.fusion),
            ("hidden.encoder", h.encoder),
            ("hidden.generator", h.generator),
            ("hidden.disc_a", h.disc_a),
            ("hidden.disc_b", h.disc_b),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Which optimizer owns a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Discriminator-A trunk and critic head: the WGAN critic.
    Critic,
    /// Everything trained by the joint objective.
    Joint,
}

/// Affine layers of the model, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    AlphaHidden,
    AlphaOut,
    ThetaHidden,
    ThetaOut,
    Concat,
    EncoderHidden,
    EncoderOut,
    GeneratorHidden,
    GeneratorOut,
    Trunk,
    CriticHead,
    ProjectionA,
    BranchBHidden,
    BranchBOut,
}

impl Layer {
    pub const ALL: [Layer; 14] = [
        Layer::AlphaHidden,
        Layer::AlphaOut,
        Layer::ThetaHidden,
        Layer::ThetaOut,
        Layer::Concat,
        Layer::EncoderHidden,
        Layer::EncoderOut,
        Layer::GeneratorHidden,
        Layer::GeneratorOut,
        Layer::Trunk,
        Layer::CriticHead,
        Layer::ProjectionA,
        Layer::BranchBHidden,
        Layer::BranchBOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layer::AlphaHidden => "alpha.hidden",
            Layer::AlphaOut => "alpha.out",
            Layer::ThetaHidden => "theta.hidden",
            Layer::ThetaOut => "theta.out",
            Layer::Concat => "concat",
            Layer::EncoderHidden => "encoder.hidden",
            Layer::EncoderOut => "encoder.out",
            Layer::GeneratorHidden => "generator.hidden",
            Layer::GeneratorOut => "generator.out",
            Layer::Trunk => "disc_a.trunk",
            Layer::CriticHead => "disc_a.critic",
            Layer::ProjectionA => "disc_a.projection",
            Layer::BranchBHidden => "disc_b.hidden",
            Layer::BranchBOut => "disc_b.out",
        }
    }

    pub fn group(self) -> ParamGroup {
        match self {
            Layer::Trunk | Layer::CriticHead => ParamGroup::Critic,
            _ => ParamGroup::Joint,
        }
    }

    /// `(fan_in, fan_out)` under `cfg`.
    pub fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        let h = &cfg.hidden;
        match self {
            Layer::AlphaHidden | Layer::ThetaHidden => (cfg.k_semantic, h.fusion),
            Layer::AlphaOut => (h.fusion, 1),
            Layer::ThetaOut => (h.fusion, cfg.d_visual),
            Layer::Concat => (cfg.d_visual + cfg.k_semantic, cfg.d_visual),
            Layer::EncoderHidden => (cfg.d_visual, h.encoder),
            Layer::EncoderOut => (h.encoder, 2 * cfg.d_latent),
            Layer::GeneratorHidden => (cfg.d_latent, h.generator),
            Layer::GeneratorOut => (h.generator, cfg.d_visual),
            Layer::Trunk => (cfg.d_visual, h.disc_a),
            Layer::CriticHead => (h.disc_a, 1),
            Layer::ProjectionA => (h.disc_a, cfg.k_proj),
            Layer::BranchBHidden => (cfg.d_visual, h.disc_b),
            Layer::BranchBOut => (h.disc_b, cfg.k_proj),
        }
    }

    /// Layers whose output feeds a ReLU get He-scaled initial weights.
    fn feeds_relu(self) -> bool {
        matches!(
            self,
            Layer::AlphaHidden
                | Layer::ThetaHidden
                | Layer::EncoderHidden
                | Layer::GeneratorHidden
                | Layer::Trunk
                | Layer::BranchBHidden
        )
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }
}

/// All trainable weights. Weights are `fan_in x fan_out`, biases `1 x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T> {
    config: ModelConfig,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

/// Tape handles for every parameter.
#[derive(Clone, Debug)]
pub struct ParamVars {
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl ParamVars {
    pub fn weight(&self, l: Layer) -> Var {
        self.weights[l as usize]
    }

    pub fn bias(&self, l: Layer) -> Var {
        self.biases[l as usize]
    }

    /// Handles of one group, in the order of [`ModelParameters::group_mut`].
    pub fn group(&self, group: ParamGroup) -> Vec<Var> {
        Layer::ALL
            .into_iter()
            .filter(|l| l.group() == group)
            .flat_map(|l| [self.weight(l), self.bias(l)])
            .collect()
    }
}

/// `mu`, `log sigma^2`, the sampled latent and the noise that produced it.
#[derive(Clone, Debug)]
pub struct LatentSample<T> {
    pub mu: Tensor<T>,
    pub log_var: Tensor<T>,
    pub z: Tensor<T>,
    pub noise: Tensor<T>,
}

/// Latent nodes recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
}

impl<T: Real> ModelParameters<T> {
    /// Seeded initialization: He-normal for layers feeding a ReLU, LeCun-normal
    /// otherwise, zero biases except the scale predictor, which starts at
    /// `softplus(b) = 1`.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut weights = Vec::with_capacity(Layer::ALL.len());
        let mut biases = Vec::with_capacity(Layer::ALL.len());
        for layer in Layer::ALL {
            let (fan_in, fan_out) = layer.shape(&config);
            let gain = if layer.feeds_relu() { 2.0 } else { 1.0 };
            let std = (gain / fan_in as f64).sqrt();
            let w = Tensor::from_fn(fan_in, fan_out, |_, _| {
                let n: f64 = rng.sample(StandardNormal);
                T::lit(n * std)
            });
            let b = if layer == Layer::AlphaOut {
                Tensor::full(1, fan_out, T::lit((std::f64::consts::E - 1.0).ln()))
            } else {
                Tensor::zeros(1, fan_out)
            };
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            config,
            weights,
            biases,
        })
    }

    /// Every weight and bias set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (weights, biases) = Layer::ALL
            .into_iter()
            .map(|l| {
                let (i, o) = l.shape(&config);
                (Tensor::zeros(i, o), Tensor::zeros(1, o))
            })
            .unzip();
        Ok(Self {
            config,
            weights,
            biases,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weight(&self, l: Layer) -> &Tensor<T> {
        &self.weights[l as usize]
    }

    pub fn bias(&self, l: Layer) -> &Tensor<T> {
        &self.biases[l as usize]
    }

    pub fn weight_mut(&mut self, l: Layer) -> &mut Tensor<T> {
        &mut self.weights[l as usize]
    }

    pub fn bias_mut(&mut self, l: Layer) -> &mut Tensor<T> {
        &mut self.biases[l as usize]
    }

    /// `(name, tensor)` pairs in storage order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        Layer::ALL
            .into_iter()
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.name()), self.weight(l)),
                    (format!("{}.bias", l.name()), self.bias(l)),
                ]
            })
            .collect()
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut seen = vec![[false; 2]; Layer::ALL.len()];
        for (name, t) in named {
            let (layer_name, kind) = name
                .rsplit_once('.')
                .ok_or_else(|| Error::Format(format!("bad parameter name `{name}`")))?;
            let layer = Layer::from_name(layer_name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            let (i, o) = layer.shape(&config);
            let (slot, expected, k) = match kind {
                "weight" => (params.weight_mut(layer), (i, o), 0),
                "bias" => (params.bias_mut(layer), (1, o), 1),
                _ => return Err(Error::Format(format!("unknown parameter `{name}`"))),
            };
            if t.dims() != expected || t.shape().len() != 2 {
                return Err(dimension(format!(
                    "parameter `{name}` has shape {:?}, config implies {expected:?}",
                    t.shape()
                )));
            }
            *slot = t;
            seen[layer as usize][k] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s[0] || !s[1]) {
            return Err(Error::Format(format!(
                "missing parameters for layer `{}`",
                Layer::ALL[i].name()
            )));
        }
        Ok(params)
    }

    /// Mutable tensors of one group, weight then bias per layer.
    pub fn group_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor<T>> {
        let mask: Vec<bool> = Layer::ALL.iter().map(|l| l.group() == group).collect();
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .zip(mask)
            .filter(|(_, m)| *m)
            .flat_map(|((w, b), _)| [w, b])
            .collect()
    }

    pub fn group(&self, group: ParamGroup) -> Vec<&Tensor<T>> {
        Layer::ALL
            .into_iter()
            .filter(|l| l.group() == group)
            .flat_map(|l| [self.weight(l), self.bias(l)])
            .collect()
    }

    /// Places every parameter on `tape`: as a leaf when `trainable(group)`,
    /// otherwise as a constant.
    pub fn register(&self, tape: &mut Tape<T>, trainable: impl Fn(ParamGroup) -> bool) -> ParamVars {
        let mut weights = Vec::with_capacity(Layer::ALL.len());
        let mut biases = Vec::with_capacity(Layer::ALL.len());
        for l in Layer::ALL {
            let leaf = trainable(l.group());
            let mut put = |t: &Tensor<T>| {
                if leaf {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            };
            weights.push(put(self.weight(l)));
            biases.push(put(self.bias(l)));
        }
        ParamVars { weights, biases }
    }

    fn frozen(&self, tape: &mut Tape<T>) -> ParamVars {
        self.register(tape, |_| false)
    }

    fn check_width(&self, t: &Tensor<T>, width: usize, what: &str) -> Result<()> {
        if t.cols() != width {
            return Err(dimension(format!(
                "{what} has width {}, model expects {width}",
                t.cols()
            )));
        }
        Ok(())
    }

    /// Fuses visual rows with semantic rows; both are `n x d` / `n x k`.
    pub fn atf_fuse(&self, visual: &Tensor<T>, semantic: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_width(visual, self.config.d_visual, "visual input")?;
        self.check_width(semantic, self.config.k_semantic, "semantic input")?;
        if visual.rows() != semantic.rows() {
            return Err(dimension("visual and semantic batches differ in length"));
        }
        let mut tape = Tape::new();
        let pv = self.frozen(&mut tape);
        let x = tape.constant(visual.clone());
        let s = tape.constant(semantic.clone());
        let out = fuse(&mut tape, &pv, &self.config, x, s)?;
        Ok(tape.value(out).clone())
    }

    pub fn encode(&self, x: &Tensor<T>, noise: &Tensor<T>) -> Result<LatentSample<T>> {
        self.check_width(x, self.config.d_visual, "encoder input")?;
        self.check_width(noise, self.config.d_latent, "noise")?;
        if x.rows() != noise.rows() {
            return Err(dimension("encoder input and noise differ in batch length"));
        }
        let mut tape = Tape::new();
        let pv = self.frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let nv = tape.constant(noise.clone());
        let lat = encode(&mut tape, &pv, &self.config, xv, nv)?;
        Ok(LatentSample {
            mu: tape.value(lat.mu).clone(),
            log_var: tape.value(lat.log_var).clone(),
            z: tape.value(lat.z).clone(),
            noise: noise.clone(),
        })
    }

    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_width(z, self.config.d_latent, "latent input")?;
        let mut tape = Tape::new();
        let pv = self.frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let out = generate(&mut tape, &pv, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Projection rows and critic column.
    pub fn discriminate_a(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_width(x, self.config.d_visual, "discriminator A input")?;
        let mut tape = Tape::new();
        let pv = self.frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let (proj, critic) = discriminate_a(&mut tape, &pv, xv)?;
        Ok((tape.value(proj).clone(), tape.value(critic).clone()))
    }

    pub fn discriminate_b(&self, visual: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_width(visual, self.config.d_visual, "discriminator B input")?;
        let mut tape = Tape::new();
        let pv = self.frozen(&mut tape);
        let xv = tape.constant(visual.clone());
        let out = discriminate_b(&mut tape, &pv, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// `x W + b`.
pub fn affine<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, layer: Layer, x: Var) -> Result<Var> {
    let h = tape.matmul(x, pv.weight(layer))?;
    tape.add(h, pv.bias(layer))
}

fn two_layer<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    hidden: Layer,
    out: Layer,
    x: Var,
) -> Result<Var> {
    let h = affine(tape, pv, hidden, x)?;
    let h = tape.relu(h)?;
    affine(tape, pv, out, h)
}

/// Scale predictor output, `softplus`-activated: `n x 1`.
pub fn alpha<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, semantic: Var) -> Result<Var> {
    let a = two_layer(tape, pv, Layer::AlphaHidden, Layer::AlphaOut, semantic)?;
    tape.softplus(a)
}

/// Offset predictor output: `n x d_visual`.
pub fn theta<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, semantic: Var) -> Result<Var> {
    two_layer(tape, pv, Layer::ThetaHidden, Layer::ThetaOut, semantic)
}

pub fn fuse<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    visual: Var,
    semantic: Var,
) -> Result<Var> {
    match cfg.fusion {
        FusionMode::Atf => {
            let a = alpha(tape, pv, semantic)?;
            let t = theta(tape, pv, semantic)?;
            let scaled = tape.mul(a, visual)?;
            tape.add(scaled, t)
        }
        FusionMode::Concat => {
            let joined = tape.concat(&[visual, semantic], Axis::Cols)?;
            affine(tape, pv, Layer::Concat, joined)
        }
    }
}

/// Encoder moments and the reparameterized latent `mu + exp(log_var / 2) * noise`.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    x: Var,
    noise: Var,
) -> Result<LatentVars> {
    let out = two_layer(tape, pv, Layer::EncoderHidden, Layer::EncoderOut, x)?;
    let mu = tape.slice(out, Axis::Cols, 0, cfg.d_latent)?;
    let log_var = tape.slice(out, Axis::Cols, cfg.d_latent, cfg.d_latent)?;
    let half = tape.scale(log_var, T::lit(0.5))?;
    let std = tape.exp(half)?;
    let eps = tape.mul(std, noise)?;
    let z = tape.add(mu, eps)?;
    Ok(LatentVars { mu, log_var, z })
}

pub fn generate<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, z: Var) -> Result<Var> {
    two_layer(tape, pv, Layer::GeneratorHidden, Layer::GeneratorOut, z)
}

/// Pre-activation of the discriminator-A trunk.
fn trunk_pre<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, x: Var) -> Result<Var> {
    affine(tape, pv, Layer::Trunk, x)
}

/// `(projection, critic)` sharing one trunk.
pub fn discriminate_a<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, x: Var) -> Result<(Var, Var)> {
    let pre = trunk_pre(tape, pv, x)?;
    let h = tape.relu(pre)?;
    let proj = affine(tape, pv, Layer::ProjectionA, h)?;
    let critic = affine(tape, pv, Layer::CriticHead, h)?;
    Ok((proj, critic))
}

/// Projection head of discriminator A only.
pub fn project_a<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, x: Var) -> Result<Var> {
    let pre = trunk_pre(tape, pv, x)?;
    let h = tape.relu(pre)?;
    affine(tape, pv, Layer::ProjectionA, h)
}

/// Critic head of discriminator A only.
pub fn critic<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, x: Var) -> Result<Var> {
    let pre = trunk_pre(tape, pv, x)?;
    let h = tape.relu(pre)?;
    affine(tape, pv, Layer::CriticHead, h)
}

pub fn discriminate_b<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, visual: Var) -> Result<Var> {
    two_layer(tape, pv, Layer::BranchBHidden, Layer::BranchBOut, visual)
}

/// Row-wise gradient of the critic with respect to its input, recorded as a
/// differentiable function of the critic parameters.
///
/// For `c(x) = relu(x W_t + b_t) w_c + b_c` the input gradient of row `i` is
/// `(w_c^T * 1[pre_i > 0]) W_t^T`. The ReLU mask is piecewise constant, so it
/// enters as a constant and the expression stays first-order in the
/// parameters.
pub fn critic_input_gradient<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, x: Var) -> Result<Var> {
    let pre = trunk_pre(tape, pv, x)?;
    let mask = tape
        .value(pre)
        .map(|v| if v > T::zero() { T::one() } else { T::zero() });
    let mask = tape.constant(mask);
    let head_row = tape.transpose(pv.weight(Layer::CriticHead))?;
    let gated = tape.mul(mask, head_row)?;
    let trunk_t = tape.transpose(pv.weight(Layer::Trunk))?;
    tape.matmul(gated, trunk_t)
}
