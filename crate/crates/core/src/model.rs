//! Full forecaster: instance normalization, entropy evaluation, patch
//! embedding, a stack of dual-pathway encoder layers and the output head,
//! with every ablation expressed as configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{attention_var, AttentionParams};
use crate::embedding::{denormalize_var, embed_var, head_var, normalize_rows, patch_count, EmbeddingParams, HeadParams};
use crate::error::{Result, SeedError};
use crate::fuser::{blend_var, similarity_var, weights_var};
use crate::numeric::{CustomOp, RngState, Tape, Tensor, Var};
use crate::params::{glorot, linear, Bound, ParamId, ParamStore};
use crate::spatial::{cse_var, CseConfig, CseParams, GcnActivation, GraphVariant, Pool, Windowing};
use crate::spectral::{spectral_entropy_var, EntropyVector, ShapingFilter};
use crate::window::SeriesWindow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WoTattn,
    WoCse,
    ReS1,
    ReS2,
    ReF1,
    ReF2,
    ReF3,
    ReC1,
    ReC2,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Full,
        Variant::WoTattn,
        Variant::WoCse,
        Variant::ReS1,
        Variant::ReS2,
        Variant::ReF1,
        Variant::ReF2,
        Variant::ReF3,
        Variant::ReC1,
        Variant::ReC2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoTattn => "wo_tattn",
            Variant::WoCse => "wo_cse",
            Variant::ReS1 => "re_s1",
            Variant::ReS2 => "re_s2",
            Variant::ReF1 => "re_f1",
            Variant::ReF2 => "re_f2",
            Variant::ReF3 => "re_f3",
            Variant::ReC1 => "re_c1",
            Variant::ReC2 => "re_c2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = SeedError;

    /// Accepts `wo_cse`, `wo-cse`, `w/o-CSE`, `re-S1` and similar spellings.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace("w/o", "wo").replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| SeedError::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_vars: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub d_model: usize,
    pub attn_heads: usize,
    pub gcn_heads: usize,
    /// `None` keeps `max(2, ceil(n / 2))` neighbours per node.
    pub knn_k: Option<usize>,
    pub graph_variant: GraphVariant,
    pub pool: Pool,
    pub lambda: f64,
    pub n_layers: usize,
    pub revin: bool,
    pub detach_entropy: bool,
    pub variant: Variant,
    pub seed: u64,
    pub dropout: f64,
    pub per_head_distance: bool,
    pub keep_self: bool,
    pub gcn_activation: GcnActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_vars: 7,
            lookback: 96,
            horizon: 96,
            patch_len: 16,
            d_model: 64,
            attn_heads: 4,
            gcn_heads: 4,
            knn_k: None,
            graph_variant: GraphVariant::Tanh,
            pool: Pool::Mean,
            lambda: 0.1,
            n_layers: 2,
            revin: true,
            detach_entropy: true,
            variant: Variant::Full,
            seed: 0,
            dropout: 0.0,
            per_head_distance: false,
            keep_self: true,
            gcn_activation: GcnActivation::Silu,
        }
    }
}

/// How the temporal and spatial pathways are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// `w = (1 - SpEn)(1 - Sim)`, `F = w T + (1 - w) E`.
    Entropy,
    /// Entropy weights with the roles of `T` and `E` exchanged.
    Swapped,
    /// `w = sigmoid(theta_c)`, one learnable scalar per variable.
    PerVariable,
    /// `w = sigmoid([T, E] v + b)`.
    Gate,
    TemporalOnly,
    SpatialOnly,
}

/// Resolved structure of a configured variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wiring {
    pub temporal: bool,
    pub spatial: bool,
    pub graph: GraphVariant,
    pub windowing: Windowing,
    pub fusion: Fusion,
}

pub fn apply_variant(config: &ModelConfig) -> Wiring {
    let mut w = Wiring {
        temporal: true,
        spatial: true,
        graph: config.graph_variant,
        windowing: Windowing::Pairs,
        fusion: Fusion::Entropy,
    };
    match config.variant {
        Variant::Full => {}
        Variant::WoTattn => {
            w.temporal = false;
            w.fusion = Fusion::SpatialOnly;
        }
        Variant::WoCse => {
            w.spatial = false;
            w.fusion = Fusion::TemporalOnly;
        }
        Variant::ReS1 => w.graph = GraphVariant::Plain,
        Variant::ReS2 => w.graph = GraphVariant::Softmax,
        Variant::ReF1 => w.fusion = Fusion::PerVariable,
        Variant::ReF2 => w.fusion = Fusion::Swapped,
        Variant::ReF3 => w.fusion = Fusion::Gate,
        Variant::ReC1 => w.windowing = Windowing::Single,
        Variant::ReC2 => w.windowing = Windowing::Global,
    }
    w
}

impl ModelConfig {
    pub fn n_patches(&self) -> usize {
        patch_count(self.lookback, self.patch_len)
    }

    pub fn wiring(&self) -> Wiring {
        apply_variant(self)
    }

    pub fn cse_config(&self) -> CseConfig {
        let wiring = self.wiring();
        CseConfig {
            heads: self.gcn_heads,
            knn_k: self.knn_k,
            variant: wiring.graph,
            pool: self.pool,
            windowing: wiring.windowing,
            keep_self: self.keep_self,
            activation: self.gcn_activation,
            per_head_distance: self.per_head_distance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_vars", self.n_vars),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("patch_len", self.patch_len),
            ("d_model", self.d_model),
            ("attn_heads", self.attn_heads),
            ("gcn_heads", self.gcn_heads),
            ("n_layers", self.n_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(SeedError::config(format!("{name} must be at least 1")));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(SeedError::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SeedError::config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.patch_len > self.lookback {
            return Err(SeedError::config(format!(
                "patch_len {} exceeds lookback {}",
                self.patch_len, self.lookback
            )));
        }
        if self.lookback < 2 {
            return Err(SeedError::config("lookback must be at least 2 for spectral entropy"));
        }
        let wiring = self.wiring();
        if wiring.temporal && !self.d_model.is_multiple_of(self.attn_heads) {
            return Err(SeedError::config(format!(
                "attn_heads {} do not divide d_model {}",
                self.attn_heads, self.d_model
            )));
        }
        if wiring.spatial {
            if self.gcn_heads > self.d_model || !self.d_model.is_multiple_of(self.gcn_heads) {
                return Err(SeedError::config(format!(
                    "gcn_heads {} do not divide d_model {}",
                    self.gcn_heads, self.d_model
                )));
            }
            let n = self.n_patches();
            let size = wiring.windowing.size(n);
            if n < size {
                return Err(SeedError::config(format!(
                    "{n} patches cannot form windows of size {size}; \
                     lookback and patch length are too coarse"
                )));
            }
            self.cse_config().k_for(self.n_vars * size)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FusionParams {
    None,
    PerVariable { theta: ParamId },
    Gate { weight: ParamId, bias: ParamId },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub attention: Option<AttentionParams>,
    pub spatial: Option<CseParams>,
    pub fusion: FusionParams,
    pub ffn: FeedForwardParams,
    pub norm1: NormParams,
    pub norm2: NormParams,
}

#[derive(Clone, Debug)]
pub struct SeedModel {
    config: ModelConfig,
    wiring: Wiring,
    store: ParamStore,
    filter: ParamId,
    embedding: EmbeddingParams,
    layers: Vec<LayerParams>,
    head: HeadParams,
}

// Stream ids for per-component initialization, so that components shared
// by two variants start from identical values under the same seed.
const STREAM_EMBED: u64 = 1;
const STREAM_HEAD: u64 = 2;
const STREAM_LAYER: u64 = 100;

fn norm_params(store: &mut ParamStore, prefix: &str, d: usize) -> NormParams {
    NormParams {
        gamma: store.add(format!("{prefix}.gamma"), Tensor::full(&[d], 1.0)),
        beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[d])),
    }
}

impl SeedModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let wiring = config.wiring();
        let root = RngState::new(config.seed);
        let mut store = ParamStore::new();
        let (d, l) = (config.d_model, config.lookback);
        let filter = store.add("spectral.filter", ShapingFilter::identity(l).to_tensor());
        let embedding = EmbeddingParams::init(&mut store, &mut root.fork(STREAM_EMBED), config.patch_len, d);

        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let base = STREAM_LAYER + 10 * i as u64;
            let p = format!("layer{i}");
            let attention = if wiring.temporal {
                let mut rng = root.fork(base);
                Some(AttentionParams::init(&mut store, &mut rng, &format!("{p}.attn"), d, config.attn_heads)?)
            } else {
                None
            };
            let spatial = if wiring.spatial {
                let mut rng = root.fork(base + 1);
                Some(CseParams::init(&mut store, &mut rng, &format!("{p}.cse"), d, config.cse_config())?)
            } else {
                None
            };
            let mut rng = root.fork(base + 2);
            let ffn = FeedForwardParams {
                w1: store.add(format!("{p}.ffn.w1"), glorot(&mut rng, &[d, 2 * d], d, 2 * d)),
                b1: store.add(format!("{p}.ffn.b1"), Tensor::zeros(&[2 * d])),
                w2: store.add(format!("{p}.ffn.w2"), glorot(&mut rng, &[2 * d, d], 2 * d, d)),
                b2: store.add(format!("{p}.ffn.b2"), Tensor::zeros(&[d])),
            };
            let mut rng = root.fork(base + 3);
            let fusion = match wiring.fusion {
                Fusion::PerVariable => FusionParams::PerVariable {
                    theta: store.add(format!("{p}.fuse.theta"), Tensor::zeros(&[config.n_vars])),
                },
                Fusion::Gate => FusionParams::Gate {
                    weight: store.add(format!("{p}.fuse.weight"), glorot(&mut rng, &[2 * d, 1], 2 * d, 1)),
                    bias: store.add(format!("{p}.fuse.bias"), Tensor::zeros(&[1])),
                },
                _ => FusionParams::None,
            };
            let norm1 = norm_params(&mut store, &format!("{p}.norm1"), d);
            let norm2 = norm_params(&mut store, &format!("{p}.norm2"), d);
            layers.push(LayerParams {
                attention,
                spatial,
                fusion,
                ffn,
                norm1,
                norm2,
            });
        }
        let head = HeadParams::init(
            &mut store,
            &mut root.fork(STREAM_HEAD),
            config.n_patches() * d,
            config.horizon,
        );
        Ok(Self {
            config,
            wiring,
            store,
            filter,
            embedding,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn wiring(&self) -> Wiring {
        self.wiring
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    pub fn embedding(&self) -> &EmbeddingParams {
        &self.embedding
    }

    pub fn filter_param(&self) -> ParamId {
        self.filter
    }

    pub fn shaping_filter(&self) -> ShapingFilter {
        ShapingFilter::from_tensor(self.store.get(self.filter)).expect("filter parameter keeps its shape")
    }

    /// Total learnable scalar count.
    pub fn count_params(&self) -> usize {
        self.store.scalar_count()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok = shape.len() == 3 && shape[1] == self.config.n_vars && shape[2] == self.config.lookback;
        if !ok {
            return Err(SeedError::config(format!(
                "input {shape:?} does not match [B, {}, {}]",
                self.config.n_vars, self.config.lookback
            )));
        }
        Ok(())
    }

    /// Records the forward pass for raw inputs `x [B, C, L]`.
    pub fn forward_var(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: &Tensor,
        opts: &mut ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        self.check_input(x.shape())?;
        if !x.all_finite() {
            return Err(SeedError::Input("input window contains non-finite values".into()));
        }
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let (xn, mean, std) = if self.config.revin {
            normalize_rows(x)
        } else {
            (x.clone(), Tensor::zeros(&[b, c]), Tensor::full(&[b, c], 1.0))
        };

        let xn_var = tape.constant(xn.clone());
        let entropy = if self.config.detach_entropy {
            let mut scratch = Tape::new();
            let xs = scratch.constant(xn.clone());
            let f = scratch.constant(self.store.get(self.filter).clone());
            let h = spectral_entropy_var(&mut scratch, xs, Some(f))?;
            tape.constant(scratch.value(h).clone())
        } else {
            spectral_entropy_var(tape, xn_var, Some(bound[self.filter]))?
        };

        let mut h = embed_var(tape, bound, &self.embedding, &xn)?;
        let mut fusion = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, w) = self.layer_var(tape, bound, layer, h, entropy, opts)?;
            h = next;
            fusion.push(w);
        }
        let y = head_var(tape, bound, &self.head, h)?;
        let prediction = if self.config.revin {
            denormalize_var(tape, y, &mean, &std)?
        } else {
            y
        };
        Ok(ForwardOutput {
            prediction,
            entropy,
            fusion,
        })
    }

    fn layer_var(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        layer: &LayerParams,
        x: Var,
        entropy: Var,
        opts: &mut ForwardOptions<'_>,
    ) -> Result<(Var, Option<Var>)> {
        let t = match &layer.attention {
            Some(p) => Some(attention_var(tape, bound, p, x)?.output),
            None => None,
        };
        let t = match t {
            Some(t) => Some(self.dropout(tape, t, opts)?),
            None => None,
        };
        let e = match &layer.spatial {
            Some(p) => Some(cse_var(tape, bound, p, x)?.output),
            None => None,
        };
        let (f, w) = match (t, e) {
            (Some(t), None) => (t, None),
            (None, Some(e)) => (e, None),
            (Some(t), Some(e)) => {
                let w = match opts.force_fusion_weight {
                    Some(v) => {
                        let shape = tape.shape(t);
                        let shape = shape[..shape.len() - 1].to_vec();
                        tape.constant(Tensor::full(&shape, v))
                    }
                    None => self.fusion_weights(tape, bound, layer, t, e, entropy)?,
                };
                let f = match self.wiring.fusion {
                    Fusion::Swapped => blend_var(tape, e, t, w)?,
                    _ => blend_var(tape, t, e, w)?,
                };
                (f, Some(w))
            }
            (None, None) => return Err(SeedError::Internal("layer without any pathway".into())),
        };
        let n1 = &layer.norm1;
        let sum = tape.add(x, f)?;
        let h = tape.layer_norm(sum, bound[n1.gamma], bound[n1.beta])?;
        let ffn = &layer.ffn;
        let z = linear(tape, h, bound[ffn.w1], Some(bound[ffn.b1]))?;
        let z = tape.silu(z);
        let z = linear(tape, z, bound[ffn.w2], Some(bound[ffn.b2]))?;
        let z = self.dropout(tape, z, opts)?;
        let sum = tape.add(h, z)?;
        let n2 = &layer.norm2;
        Ok((tape.layer_norm(sum, bound[n2.gamma], bound[n2.beta])?, w))
    }

    fn fusion_weights(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        layer: &LayerParams,
        t: Var,
        e: Var,
        entropy: Var,
    ) -> Result<Var> {
        match (&layer.fusion, self.wiring.fusion) {
            (FusionParams::PerVariable { theta }, _) => {
                // sigmoid(theta_c) broadcast to [B, C, N]
                let s = tape.sigmoid(bound[*theta]);
                let shape = tape.shape(t).to_vec();
                let (b, c, n) = (shape[0], shape[1], shape[2]);
                let s = expand_leading(tape, s, b)?;
                let ones = tape.constant(Tensor::full(&[b, c, n], 1.0));
                tape.scale_rows(ones, s)
            }
            (FusionParams::Gate { weight, bias }, _) => {
                let te = tape.concat_last(t, e)?;
                let z = linear(tape, te, bound[*weight], Some(bound[*bias]))?;
                let z = tape.sigmoid(z);
                let shape = tape.shape(z).to_vec();
                tape.reshape(z, &shape[..shape.len() - 1])
            }
            (FusionParams::None, _) => {
                let sim = similarity_var(tape, t, e)?;
                weights_var(tape, sim, entropy)
            }
        }
    }

    fn dropout(&self, tape: &mut Tape, x: Var, opts: &mut ForwardOptions<'_>) -> Result<Var> {
        let p = self.config.dropout;
        match opts.dropout_rng.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = Tensor::from_fn(tape.shape(x), |_| if rng.uniform() < p { 0.0 } else { keep });
                let m = tape.constant(mask);
                tape.mul(x, m)
            }
            _ => Ok(x),
        }
    }

    /// Forecasts `[B, C, T]` for raw inputs `[B, C, L]`.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_batch_with(x, &mut ForwardOptions::default())
    }

    pub fn forward_batch_with(&self, x: &Tensor, opts: &mut ForwardOptions<'_>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let out = self.forward_var(&mut tape, &bound, x, opts)?;
        Ok(tape.value(out.prediction).clone())
    }

    /// Forecast `C x T` for one lookback window.
    pub fn forward(&self, window: &SeriesWindow) -> Result<Tensor> {
        let (c, l) = (window.n_vars(), window.len());
        let x = window.values().reshape(&[1, c, l])?;
        let y = self.forward_batch(&x)?;
        y.reshape(&[c, self.config.horizon])
    }

    /// Entropy vector the model would use for `window`.
    pub fn entropy(&self, window: &SeriesWindow) -> Result<EntropyVector> {
        let (c, l) = (window.n_vars(), window.len());
        let x = window.values().reshape(&[1, c, l])?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let out = self.forward_var(&mut tape, &bound, &x, &mut ForwardOptions::default())?;
        EntropyVector::new(tape.value(out.entropy).data().to_vec())
    }

    /// Rebuilds a model from a config and named parameter tensors.
    pub fn from_parts(config: ModelConfig, params: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = SeedModel::new(config)?;
        if params.len() != model.store.len() {
            return Err(SeedError::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                params.len(),
                model.store.len()
            )));
        }
        for (name, value) in params {
            let id = model
                .store
                .find(&name)
                .ok_or_else(|| SeedError::Checkpoint(format!("unexpected parameter {name:?}")))?;
            if !value.all_finite() {
                return Err(SeedError::Checkpoint(format!("parameter {name:?} is not finite")));
            }
            model
                .store
                .set(id, value)
                .map_err(|e| SeedError::Checkpoint(e.to_string()))?;
        }
        Ok(model)
    }
}

#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Replaces every fusion weight with a constant (both pathways only).
    pub force_fusion_weight: Option<f64>,
    /// Enables dropout when the config asks for it.
    pub dropout_rng: Option<&'a mut RngState>,
}

pub struct ForwardOutput {
    /// `[B, C, T]` in input units.
    pub prediction: Var,
    /// `[B, C]` entropy of the normalized input.
    pub entropy: Var,
    /// Per-layer fusion weights `[B, C, N]` when both pathways are active.
    pub fusion: Vec<Option<Var>>,
}

struct ExpandOp {
    copies: usize,
}

impl CustomOp for ExpandOp {
    fn name(&self) -> &'static str {
        "expand_leading"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let n = inputs[0].numel();
        let mut dx = vec![0.0; n];
        for chunk in grad.data().chunks(n.max(1)).take(self.copies) {
            for (a, g) in dx.iter_mut().zip(chunk) {
                *a += g;
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), dx).unwrap())]
    }
}

/// Tiles `x` along a new leading axis of length `copies`.
pub fn expand_leading(tape: &mut Tape, x: Var, copies: usize) -> Result<Var> {
    let xv = tape.value(x);
    let mut shape = vec![copies];
    shape.extend_from_slice(xv.shape());
    let data = xv.data().repeat(copies);
    let out = Tensor::new(shape, data)?;
    Ok(tape.custom(&[x], out, Box::new(ExpandOp { copies })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradient_errors;

    pub(crate) fn micro(variant: Variant) -> ModelConfig {
        ModelConfig {
            n_vars: 2,
            lookback: 8,
            horizon: 4,
            patch_len: 4,
            d_model: 8,
            attn_heads: 2,
            gcn_heads: 2,
            n_layers: 1,
            variant,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert_eq!("w/o-CSE".parse::<Variant>().unwrap(), Variant::WoCse);
        assert_eq!("re-S1".parse::<Variant>().unwrap(), Variant::ReS1);
        assert!(matches!("re_x9".parse::<Variant>(), Err(SeedError::Config(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = [
            ModelConfig { d_model: 0, ..Default::default() },
            ModelConfig { lambda: -1.0, ..Default::default() },
            ModelConfig { patch_len: 97, ..Default::default() },
            ModelConfig { attn_heads: 5, ..Default::default() },
            ModelConfig { lookback: 16, patch_len: 16, ..Default::default() },
            ModelConfig { knn_k: Some(15), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(SeedModel::new(cfg), Err(SeedError::Config(_))));
        }
        // one patch is fine without the spatial pathway
        let cfg = ModelConfig { lookback: 16, patch_len: 16, variant: Variant::WoCse, ..Default::default() };
        assert!(SeedModel::new(cfg).is_ok());
        let json = serde_json::to_string(&ModelConfig::default()).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ModelConfig::default());
        let partial: ModelConfig = serde_json::from_str(r#"{"variant":"re_c2","d_model":32}"#).unwrap();
        assert_eq!(partial.variant, Variant::ReC2);
        assert_eq!(partial.lookback, 96);
    }

    #[test]
    fn wiring_per_variant() {
        let w = |v| apply_variant(&ModelConfig { variant: v, ..Default::default() });
        assert_eq!(w(Variant::WoTattn).fusion, Fusion::SpatialOnly);
        assert!(!w(Variant::WoCse).spatial);
        assert_eq!(w(Variant::ReS1).graph, GraphVariant::Plain);
        assert_eq!(w(Variant::ReS2).graph, GraphVariant::Softmax);
        assert_eq!(w(Variant::ReC1).windowing, Windowing::Single);
        assert_eq!(w(Variant::ReC2).windowing, Windowing::Global);
        assert_eq!(w(Variant::ReF2).fusion, Fusion::Swapped);
    }

    #[test]
    fn default_forward_shape_and_determinism() {
        let model = SeedModel::new(ModelConfig::default()).unwrap();
        let x = RngState::new(1).normal_tensor(&[7, 96], 1.0);
        let window = SeriesWindow::new(x).unwrap();
        let a = model.forward(&window).unwrap();
        assert_eq!(a.shape(), &[7, 96]);
        assert!(a.all_finite());
        let b = SeedModel::new(ModelConfig::default()).unwrap().forward(&window).unwrap();
        assert_eq!(a, b);
        let wrong = SeriesWindow::new(Tensor::zeros(&[6, 96])).unwrap();
        assert!(matches!(model.forward(&wrong), Err(SeedError::Config(_))));
    }

    #[test]
    fn every_variant_runs() {
        let x = RngState::new(2).normal_tensor(&[2, 3, 32], 1.0);
        for v in Variant::ALL {
            let cfg = ModelConfig {
                n_vars: 3,
                lookback: 32,
                horizon: 8,
                patch_len: 8,
                d_model: 8,
                attn_heads: 2,
                gcn_heads: 2,
                variant: v,
                ..Default::default()
            };
            let y = SeedModel::new(cfg).unwrap().forward_batch(&x).unwrap();
            assert_eq!(y.shape(), &[2, 3, 8], "{v}");
            assert!(y.all_finite(), "{v}");
        }
    }

    #[test]
    fn variant_nesting() {
        let x = RngState::new(4).normal_tensor(&[2, 2, 8], 1.0);
        let full = SeedModel::new(micro(Variant::Full)).unwrap();
        let force = |w: f64| {
            let mut opts = ForwardOptions {
                force_fusion_weight: Some(w),
                ..Default::default()
            };
            full.forward_batch_with(&x, &mut opts).unwrap()
        };
        let wo_cse = SeedModel::new(micro(Variant::WoCse)).unwrap().forward_batch(&x).unwrap();
        let wo_tattn = SeedModel::new(micro(Variant::WoTattn)).unwrap().forward_batch(&x).unwrap();
        for (a, b) in force(1.0).data().iter().zip(wo_cse.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in force(0.0).data().iter().zip(wo_tattn.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn swapped_roles_with_full_weight() {
        // with w forced to 1, re_f2 uses the spatial features alone
        let x = RngState::new(5).normal_tensor(&[1, 2, 8], 1.0);
        let swapped = SeedModel::new(micro(Variant::ReF2)).unwrap();
        let mut opts = ForwardOptions {
            force_fusion_weight: Some(1.0),
            ..Default::default()
        };
        let a = swapped.forward_batch_with(&x, &mut opts).unwrap();
        let b = SeedModel::new(micro(Variant::WoTattn)).unwrap().forward_batch(&x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn wo_cse_is_channel_independent() {
        let model = SeedModel::new(micro(Variant::WoCse)).unwrap();
        let mut rng = RngState::new(6);
        let x = rng.normal_tensor(&[1, 2, 8], 1.0);
        let base = model.forward_batch(&x).unwrap();
        let mut y = x.clone();
        for v in &mut y.data_mut()[8..] {
            *v += rng.normal();
        }
        let pert = model.forward_batch(&y).unwrap();
        assert_eq!(&base.data()[..4], &pert.data()[..4]);
    }

    #[test]
    fn entropy_is_affine_invariant() {
        let model = SeedModel::new(ModelConfig { n_vars: 3, ..ModelConfig::default() }).unwrap();
        let x = RngState::new(7).normal_tensor(&[3, 96], 1.0);
        let a = model.entropy(&SeriesWindow::new(x.clone()).unwrap()).unwrap();
        let b = model.entropy(&SeriesWindow::new(x.map(|v| 2.0 * v + 3.0)).unwrap()).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn param_counts() {
        let model = SeedModel::new(ModelConfig::default()).unwrap();
        let oracle: usize = model.store().iter().map(|(_, t)| t.shape().iter().product::<usize>()).sum();
        assert_eq!(model.count_params(), oracle);
        let head = model.store().get(model.head().weight).numel() + model.store().get(model.head().bias).numel();
        assert_eq!(head, 384 * 96 + 96);
        let wide = SeedModel::new(ModelConfig { d_model: 128, ..Default::default() }).unwrap();
        assert!(wide.count_params() > 2 * model.count_params());
    }

    #[test]
    fn full_model_gradients() {
        for graph in [GraphVariant::Tanh, GraphVariant::Softmax] {
            let cfg = ModelConfig {
                graph_variant: graph,
                detach_entropy: false,
                n_layers: 2,
                ..micro(Variant::Full)
            };
            let model = SeedModel::new(cfg).unwrap();
            let x = RngState::new(8).normal_tensor(&[2, 2, 8], 1.0);
            let y = RngState::new(9).normal_tensor(&[2, 2, 4], 1.0);
            let mut total = 0;
            let mut good = 0;
            for id in model.store().ids() {
                let errs = gradient_errors(
                    |t, p| {
                        let bound = model.store().bind(t, false).with(id, p);
                        let out = model.forward_var(t, &bound, &x, &mut ForwardOptions::default())?;
                        let target = t.constant(y.clone());
                        let d = t.sub(out.prediction, target)?;
                        let sq = t.mul(d, d)?;
                        Ok(t.mean_all(sq))
                    },
                    model.store().get(id),
                    1e-6,
                )
                .unwrap();
                total += errs.len();
                good += errs.iter().filter(|e| **e < 1e-4).count();
            }
            assert!(good as f64 >= 0.99 * total as f64, "{graph:?}: {good}/{total}");
        }
    }
}
