//! The conditional-attention policy network and its baselines.
//!
//! Data flow for the attention variants:
//!
//! ```text
//! cond map m ──patchify──► [u_m; x_m·E_m] + P_m ──TEL×L_m──► token 0 ─┐
//!                                                                     ├─ concat ─► affine ─► v
//! local view ──patchify──► [φ(v); y·E_L] + P_L ──TEL×L_L──► token 0 ──► LN ─► head ─► Q / Z
//! ```
//!
//! With no conditional inputs the first local token is a dedicated
//! trainable saliency token instead of `φ(v)`; that network is exactly
//! the DA3 model.

pub mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{default_patch, ArchDims, HeadConfig, LocalConfig, ModelConfig, SubmoduleConfig, Variant};

use crate::autodiff::{Tape, Var};
use crate::env::obs::{recenter, ObsBundle, SparseMap};
use crate::env::{CondKind, Pos};
use crate::error::{Error, Result};
use crate::params::{init, Binder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transformer::{encoder_layer, patchify, AttentionRecord, EncoderLayerParams, LayerNormParams, LinearParams};

const EMBED_STD: f64 = 0.02;

/// Dense network input for one agent at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyInput<T> {
    /// `channels×view×view` local observation.
    pub local: Tensor<T>,
    /// Conditional maps in absolute coordinates, in config order.
    pub cond: Vec<Tensor<T>>,
    pub position: Pos,
    /// Sparse copies of `cond`, used for relative views.
    cond_sparse: Vec<SparseMap>,
}

impl<T: Scalar> PolicyInput<T> {
    pub fn from_bundle(bundle: &ObsBundle) -> Self {
        Self {
            local: bundle.local.to_tensor(),
            cond: bundle.cond.iter().map(SparseMap::to_tensor).collect(),
            position: bundle.position,
            cond_sparse: bundle.cond.clone(),
        }
    }

    /// Input built from dense tensors; relative views are derived from
    /// the nonzero cells of `cond`.
    pub fn new(local: Tensor<T>, cond: Vec<Tensor<T>>, position: Pos) -> Result<Self> {
        let cond_sparse = cond
            .iter()
            .map(|t| {
                let [c, h, w] = *t.shape() else {
                    return Err(Error::Shape(format!("conditional map shape {:?}", t.shape())));
                };
                let mut m = SparseMap::empty(c, h, w);
                m.ones = t
                    .data()
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != T::zero())
                    .map(|(i, _)| i as u32)
                    .collect();
                Ok(m)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            local,
            cond,
            position,
            cond_sparse,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Submodule {
    pub config: SubmoduleConfig,
    pub saliency: ParamId,
    pub embed: ParamId,
    pub positional: ParamId,
    pub layers: Vec<EncoderLayerParams>,
}

#[derive(Clone, Debug)]
pub struct Head {
    pub norm: Option<LayerNormParams>,
    pub tau_embed: Option<LinearParams>,
    pub hidden: LinearParams,
    pub out: LinearParams,
    pub n_cos: usize,
}

#[derive(Clone, Debug)]
pub enum Body {
    Attention {
        submodules: Vec<Submodule>,
        integration: Option<LinearParams>,
        phi: Option<LinearParams>,
        local_saliency: Option<ParamId>,
        local_embed: ParamId,
        local_positional: ParamId,
        local_layers: Vec<EncoderLayerParams>,
    },
    Mlp {
        torso: Vec<LinearParams>,
    },
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardGraph {
    /// `1×4` Q-values, or `N×4` quantile values for IQN heads.
    pub values: Var,
    /// Integrated saliency vector `v` (conditional module output).
    pub saliency: Option<Var>,
    /// Final local saliency token fed to the head.
    pub h0: Option<Var>,
    pub cm_weights: Vec<(CondKind, Vec<Vec<Var>>)>,
    pub local_weights: Vec<Vec<Var>>,
}

/// Detached result of [`Model::forward_policy`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput<T> {
    pub scores: Vec<T>,
    pub local: Option<AttentionRecord>,
    pub cm: Vec<AttentionRecord>,
    pub saliency: Option<Vec<T>>,
}

impl<T: Scalar> PolicyOutput<T> {
    /// Greedy action, lowest index on ties.
    pub fn greedy(&self) -> usize {
        argmax(&self.scores)
    }
}

pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    body: Body,
    head: Head,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let body = if config.variant.uses_attention() {
            Self::register_attention(&config, &mut params, &mut rng)?
        } else {
            let mut torso = Vec::new();
            let mut width = config.baseline_input_len();
            for (i, &h) in config.baseline_hidden[..config.baseline_hidden.len() - 1].iter().enumerate() {
                torso.push(LinearParams::register(&mut params, &mut rng, &format!("mlp.{i}"), width, h));
                width = h;
            }
            Body::Mlp { torso }
        };
        let head = Self::register_head(&config, &mut params, &mut rng);
        Ok(Self {
            config,
            params,
            body,
            head,
        })
    }

    fn register_attention(config: &ModelConfig, params: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<Body> {
        let local = &config.local;
        let ff = |dim: usize| dim * config.ff_mult;
        let mut submodules = Vec::new();
        for sub in &config.submodules {
            let prefix = format!("cm.{}", sub.kind.name());
            let saliency = params.insert(format!("{prefix}.saliency"), init::normal(rng, &[1, sub.dim], EMBED_STD));
            let embed = params.insert(format!("{prefix}.embed"), init::fan_in_uniform(rng, sub.token_len(), sub.dim));
            let positional = params.insert(
                format!("{prefix}.positional"),
                init::normal(rng, &[sub.tokens() + 1, sub.dim], EMBED_STD),
            );
            let layers = (0..sub.layers)
                .map(|l| EncoderLayerParams::register(params, rng, &format!("{prefix}.layer{l}"), sub.dim, sub.heads, ff(sub.dim)))
                .collect::<Result<_>>()?;
            submodules.push(Submodule {
                config: sub.clone(),
                saliency,
                embed,
                positional,
                layers,
            });
        }
        let (integration, phi, local_saliency) = if submodules.is_empty() {
            let u = params.insert("local.saliency", init::normal(rng, &[1, local.dim], EMBED_STD));
            (None, None, Some(u))
        } else {
            let total: usize = config.submodules.iter().map(|s| s.dim).sum();
            let integration = LinearParams::register(params, rng, "cm.integration", total, local.dim);
            let phi = LinearParams::register(params, rng, "local.phi", local.dim, local.dim);
            (Some(integration), Some(phi), None)
        };
        let local_embed = params.insert("local.embed", init::fan_in_uniform(rng, local.token_len(), local.dim));
        let local_positional = params.insert(
            "local.positional",
            init::normal(rng, &[local.tokens() + 1, local.dim], EMBED_STD),
        );
        let local_layers = (0..local.layers)
            .map(|l| EncoderLayerParams::register(params, rng, &format!("local.layer{l}"), local.dim, local.heads, ff(local.dim)))
            .collect::<Result<_>>()?;
        Ok(Body::Attention {
            submodules,
            integration,
            phi,
            local_saliency,
            local_embed,
            local_positional,
            local_layers,
        })
    }

    fn head_input_width(config: &ModelConfig) -> usize {
        match config.variant {
            Variant::Dqn | Variant::Iqn => {
                let h = &config.baseline_hidden;
                if h.len() >= 2 {
                    h[h.len() - 2]
                } else {
                    config.baseline_input_len()
                }
            }
            Variant::Da3Dqn | Variant::Da3Iqn => {
                config.local.dim + config.cond.iter().map(|&k| config.cond_len(k)).sum::<usize>()
            }
            Variant::Da6Dqn | Variant::Da6Iqn => config.local.dim,
        }
    }

    fn register_head(config: &ModelConfig, params: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Head {
        let width = Self::head_input_width(config);
        let hidden_width = if config.variant.uses_attention() {
            config.head.hidden
        } else {
            *config.baseline_hidden.last().expect("validated")
        };
        let norm = config
            .variant
            .uses_attention()
            .then(|| LayerNormParams::register(params, "head.norm", config.local.dim));
        let tau_embed = config
            .variant
            .is_iqn()
            .then(|| LinearParams::register(params, rng, "head.tau_embed", config.head.n_cos, width));
        let hidden = LinearParams::register(params, rng, "head.hidden", width, hidden_width);
        let out = LinearParams::register(params, rng, "head.out", hidden_width, config.actions());
        Head {
            norm,
            tau_embed,
            hidden,
            out,
            n_cos: config.head.n_cos,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn body(&self) -> &Body {
        &self.body
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    /// Same architecture and weights in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            body: self.body.clone(),
            head: self.head.clone(),
        }
    }

    /// Rebuilds a model around stored parameters, checking the layout.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len()
            || model
                .params
                .iter()
                .zip(params.iter())
                .any(|((_, a, ta), (_, b, tb))| a != b || ta.shape() != tb.shape())
        {
            return Err(Error::Checkpoint("parameter layout does not match the model config".into()));
        }
        model.params = params;
        Ok(model)
    }

    /// `g_{m,0} = [u_m; x_m·E_m] + P_m` for patched tokens `x_m`.
    pub fn embed_conditional_state(
        &self,
        tape: &mut Tape<T>,
        binder: &mut Binder<T>,
        sub: &Submodule,
        tokens: Var,
    ) -> Result<Var> {
        if tape.shape(tokens) != [sub.config.tokens(), sub.config.token_len()] {
            return Err(Error::Dimension {
                op: "embed_conditional_state",
                lhs: tape.shape(tokens).to_vec(),
                rhs: vec![sub.config.tokens(), sub.config.token_len()],
            });
        }
        let u = binder.get(tape, sub.saliency);
        let e = binder.get(tape, sub.embed);
        let p = binder.get(tape, sub.positional);
        let embedded = tape.matmul(tokens, e)?;
        let seq = tape.concat_rows(&[u, embedded])?;
        tape.add(seq, p)
    }

    /// `v = W_int·concat(g⁰_1..g⁰_M) + b_int`.
    pub fn vector_integration(&self, tape: &mut Tape<T>, binder: &mut Binder<T>, g0: &[Var]) -> Result<Var> {
        let Body::Attention {
            integration: Some(integration),
            ..
        } = &self.body
        else {
            return Err(Error::Contract("vector integration needs at least one submodule".into()));
        };
        if g0.is_empty() {
            return Err(Error::Contract("vector integration of an empty list".into()));
        }
        let joined = if g0.len() == 1 { g0[0] } else { tape.concat_last(g0)? };
        integration.apply(tape, binder, joined)
    }

    /// Runs every conditional encoder and integrates their saliency
    /// tokens. With no submodules the trainable local saliency token is
    /// returned unchanged.
    pub fn run_conditional_module(
        &self,
        tape: &mut Tape<T>,
        binder: &mut Binder<T>,
        maps: &[Tensor<T>],
    ) -> Result<(Var, Vec<(CondKind, Vec<Vec<Var>>)>)> {
        let Body::Attention {
            submodules,
            local_saliency,
            ..
        } = &self.body
        else {
            return Err(Error::Config("baseline models have no conditional module".into()));
        };
        if submodules.is_empty() {
            let u = local_saliency.expect("registered when M = 0");
            return Ok((binder.get(tape, u), Vec::new()));
        }
        if maps.len() != submodules.len() {
            return Err(Error::Shape(format!(
                "{} conditional maps for {} submodules",
                maps.len(),
                submodules.len()
            )));
        }
        let mut g0 = Vec::with_capacity(submodules.len());
        let mut records = Vec::with_capacity(submodules.len());
        for (sub, map) in submodules.iter().zip(maps) {
            let c = &sub.config;
            if map.shape() != [c.channels, c.height, c.width] {
                return Err(Error::Dimension {
                    op: "run_conditional_module",
                    lhs: map.shape().to_vec(),
                    rhs: vec![c.channels, c.height, c.width],
                });
            }
            let tokens = tape.constant(patchify(map, c.patch)?);
            let mut g = self.embed_conditional_state(tape, binder, sub, tokens)?;
            let mut weights = Vec::with_capacity(sub.layers.len());
            for layer in &sub.layers {
                let (next, w) = encoder_layer(tape, binder, g, layer)?;
                g = next;
                weights.push(w);
            }
            g0.push(tape.slice_rows(g, 0, 1)?);
            records.push((c.kind, weights));
        }
        Ok((self.vector_integration(tape, binder, &g0)?, records))
    }

    /// `h_0 = [φ(v); y·E_L] + P_L`, then the local encoder stack. Returns
    /// the final token 0 and the per-layer attention handles.
    pub fn run_local_encoder(
        &self,
        tape: &mut Tape<T>,
        binder: &mut Binder<T>,
        v: Var,
        tokens: Var,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let Body::Attention {
            phi,
            local_embed,
            local_positional,
            local_layers,
            ..
        } = &self.body
        else {
            return Err(Error::Config("baseline models have no local encoder".into()));
        };
        let l = &self.config.local;
        if tape.shape(tokens) != [l.tokens(), l.token_len()] {
            return Err(Error::Dimension {
                op: "run_local_encoder",
                lhs: tape.shape(tokens).to_vec(),
                rhs: vec![l.tokens(), l.token_len()],
            });
        }
        let lead = match phi {
            Some(phi) => phi.apply(tape, binder, v)?,
            None => v,
        };
        let e = binder.get(tape, *local_embed);
        let p = binder.get(tape, *local_positional);
        let embedded = tape.matmul(tokens, e)?;
        let seq = tape.concat_rows(&[lead, embedded])?;
        let mut h = tape.add(seq, p)?;
        let mut weights = Vec::with_capacity(local_layers.len());
        for layer in local_layers {
            let (next, w) = encoder_layer(tape, binder, h, layer)?;
            h = next;
            weights.push(w);
        }
        Ok((tape.slice_rows(h, 0, 1)?, weights))
    }

    /// Q-values `1×4` from a `1×W` feature row.
    pub fn dqn_head(&self, tape: &mut Tape<T>, binder: &mut Binder<T>, features: Var) -> Result<Var> {
        let hidden = self.head.hidden.apply(tape, binder, features)?;
        let hidden = tape.relu(hidden)?;
        self.head.out.apply(tape, binder, hidden)
    }

    /// Quantile values `N×4`: cosine τ features, affine-projected,
    /// multiplied into the feature row, then the value MLP.
    pub fn iqn_head(&self, tape: &mut Tape<T>, binder: &mut Binder<T>, features: Var, taus: &[T]) -> Result<Var> {
        let tau_embed = self
            .head
            .tau_embed
            .as_ref()
            .ok_or_else(|| Error::Config("model has no quantile head".into()))?;
        if taus.is_empty() {
            return Err(Error::Contract("at least one quantile fraction required".into()));
        }
        if let Some(t) = taus.iter().find(|&&t| !(t > T::zero() && t < T::one())) {
            return Err(Error::Contract(format!("quantile fraction {t} outside (0, 1)")));
        }
        let cos = tape.constant(cosine_features(taus, self.head.n_cos));
        let phi = tau_embed.apply(tape, binder, cos)?;
        let ones = tape.constant(Tensor::full(vec![taus.len(), 1], T::one()));
        let repeated = tape.matmul(ones, features)?;
        let mixed = tape.mul(repeated, phi)?;
        let hidden = self.head.hidden.apply(tape, binder, mixed)?;
        let hidden = tape.relu(hidden)?;
        self.head.out.apply(tape, binder, hidden)
    }

    /// Flattened baseline input: local view, then each relative view.
    pub fn baseline_input(&self, input: &PolicyInput<T>) -> Result<Tensor<T>> {
        if input.cond_sparse.len() != self.config.cond.len() {
            return Err(Error::Shape(format!(
                "{} conditional maps, config expects {}",
                input.cond_sparse.len(),
                self.config.cond.len()
            )));
        }
        let mut flat = input.local.data().to_vec();
        for map in &input.cond_sparse {
            flat.extend(recenter(map, input.position).to_dense::<T>());
        }
        let expected = self.config.baseline_input_len();
        if flat.len() != expected {
            return Err(Error::Dimension {
                op: "baseline_input",
                lhs: vec![flat.len()],
                rhs: vec![expected],
            });
        }
        Tensor::new(vec![1, expected], flat)
    }

    /// Torso of the plain baselines; returns the `1×W` head features.
    pub fn baseline_mlp_forward(&self, tape: &mut Tape<T>, binder: &mut Binder<T>, x: Var) -> Result<Var> {
        let Body::Mlp { torso } = &self.body else {
            return Err(Error::Config("not a baseline model".into()));
        };
        let expected = self.config.baseline_input_len();
        if tape.shape(x) != [1, expected] {
            return Err(Error::Dimension {
                op: "baseline_mlp_forward",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![1, expected],
            });
        }
        let mut h = x;
        for layer in torso {
            let z = layer.apply(tape, binder, h)?;
            h = tape.relu(z)?;
        }
        Ok(h)
    }

    /// Builds the whole forward graph. `taus` is required for IQN heads.
    pub fn graph(
        &self,
        tape: &mut Tape<T>,
        binder: &mut Binder<T>,
        input: &PolicyInput<T>,
        taus: Option<&[T]>,
    ) -> Result<ForwardGraph> {
        let (features, saliency, h0, cm_weights, local_weights) = match &self.body {
            Body::Mlp { .. } => {
                let x = tape.constant(self.baseline_input(input)?);
                let f = self.baseline_mlp_forward(tape, binder, x)?;
                (f, None, None, Vec::new(), Vec::new())
            }
            Body::Attention { submodules, .. } => {
                let l = &self.config.local;
                if input.local.shape() != [l.channels, l.view, l.view] {
                    return Err(Error::Dimension {
                        op: "forward_policy",
                        lhs: input.local.shape().to_vec(),
                        rhs: vec![l.channels, l.view, l.view],
                    });
                }
                let cond_maps: &[Tensor<T>] = if submodules.is_empty() { &[] } else { &input.cond };
                let (v, cm) = self.run_conditional_module(tape, binder, cond_maps)?;
                let tokens = tape.constant(patchify(&input.local, l.patch)?);
                let (h0, local) = self.run_local_encoder(tape, binder, v, tokens)?;
                let norm = self.head.norm.as_ref().expect("attention heads normalize");
                let mut f = norm.apply(tape, binder, h0)?;
                if matches!(self.config.variant, Variant::Da3Dqn | Variant::Da3Iqn) && !self.config.cond.is_empty() {
                    if input.cond.len() != self.config.cond.len() {
                        return Err(Error::Shape("conditional maps missing for DA3 head".into()));
                    }
                    let mut flat = Vec::new();
                    for m in &input.cond {
                        flat.extend_from_slice(m.data());
                    }
                    let n = flat.len();
                    let c = tape.constant(Tensor::new(vec![1, n], flat)?);
                    f = tape.concat_last(&[f, c])?;
                }
                let saliency = (!submodules.is_empty()).then_some(v);
                (f, saliency, Some(h0), cm, local)
            }
        };
        let values = if self.config.variant.is_iqn() {
            let taus = taus.ok_or_else(|| Error::Contract("IQN forward needs quantile fractions".into()))?;
            self.iqn_head(tape, binder, features, taus)?
        } else {
            self.dqn_head(tape, binder, features)?
        };
        Ok(ForwardGraph {
            values,
            saliency,
            h0,
            cm_weights,
            local_weights,
        })
    }

    /// Fixed evaluation quantile fractions derived from the config seed.
    pub fn eval_taus(&self) -> Vec<T> {
        sample_taus(&mut ChaCha8Rng::seed_from_u64(self.config.tau_seed), self.config.head.eval_quantiles)
    }

    /// Action scores for one input. IQN scores average the evaluation
    /// τ-set. Attention records are copied out only when `capture`.
    pub fn forward_policy(&self, input: &PolicyInput<T>, capture: bool) -> Result<PolicyOutput<T>> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, false);
        let taus = self.config.variant.is_iqn().then(|| self.eval_taus());
        let g = self.graph(&mut tape, &mut binder, input, taus.as_deref())?;
        let scores = column_means(tape.value(g.values));
        let (local, cm) = if capture && self.config.variant.uses_attention() {
            (
                Some(AttentionRecord::capture("local", &tape, &g.local_weights)),
                g.cm_weights
                    .iter()
                    .map(|(k, w)| AttentionRecord::capture(&format!("cm:{}", k.name()), &tape, w))
                    .collect(),
            )
        } else {
            (None, Vec::new())
        };
        Ok(PolicyOutput {
            scores,
            local,
            cm,
            saliency: g.saliency.map(|v| tape.value(v).data().to_vec()),
        })
    }
}

/// `cos(π·i·τ)` for `i = 0..n_cos`, one row per τ.
pub fn cosine_features<T: Scalar>(taus: &[T], n_cos: usize) -> Tensor<T> {
    let data = taus
        .iter()
        .flat_map(|&tau| (0..n_cos).map(move |i| (T::PI() * T::lit(i as f64) * tau).cos()))
        .collect();
    Tensor::new(vec![taus.len(), n_cos], data).expect("cosine shape")
}

/// Uniform fractions strictly inside (0, 1).
pub fn sample_taus<T: Scalar, R: Rng>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            T::lit(u.clamp(1e-6, 1.0 - 1e-6))
        })
        .collect()
}

/// Mean of each column of an `N×A` matrix.
pub fn column_means<T: Scalar>(values: &Tensor<T>) -> Vec<T> {
    let (rows, cols) = values.rows_cols();
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(values.row(r)) {
            *o += v;
        }
    }
    let n = T::lit(rows as f64);
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[cfg(test)]
mod tests;
