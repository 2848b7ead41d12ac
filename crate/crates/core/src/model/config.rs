use serde::{Deserialize, Serialize};

use crate::env::obs::{CondKind, LOCAL_CHANNELS, VIEW};
use crate::env::Action;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "DQN")]
    Dqn,
    #[serde(rename = "IQN")]
    Iqn,
    #[serde(rename = "DA3-DQN")]
    Da3Dqn,
    #[serde(rename = "DA3-IQN")]
    Da3Iqn,
    #[serde(rename = "DA6-DQN")]
    Da6Dqn,
    #[serde(rename = "DA6-IQN")]
    Da6Iqn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Dqn,
        Variant::Iqn,
        Variant::Da3Dqn,
        Variant::Da3Iqn,
        Variant::Da6Dqn,
        Variant::Da6Iqn,
    ];

    pub fn is_iqn(self) -> bool {
        matches!(self, Variant::Iqn | Variant::Da3Iqn | Variant::Da6Iqn)
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::Dqn | Variant::Iqn)
    }

    pub fn has_conditional_module(self) -> bool {
        matches!(self, Variant::Da6Dqn | Variant::Da6Iqn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dqn => "DQN",
            Variant::Iqn => "IQN",
            Variant::Da3Dqn => "DA3-DQN",
            Variant::Da3Iqn => "DA3-IQN",
            Variant::Da6Dqn => "DA6-DQN",
            Variant::Da6Iqn => "DA6-IQN",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// One conditional-module encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmoduleConfig {
    pub kind: CondKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
}

impl SubmoduleConfig {
    pub fn tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn token_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::Config(format!(
                "{}: patch {} does not divide {}×{}",
                self.kind.name(),
                self.patch,
                self.height,
                self.width
            )));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!("{}: heads must divide dim", self.kind.name())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub channels: usize,
    pub view: usize,
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
}

impl LocalConfig {
    pub fn tokens(&self) -> usize {
        (self.view / self.patch).pow(2)
    }

    pub fn token_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Hidden width of the value MLP.
    pub hidden: usize,
    pub n_cos: usize,
    pub train_quantiles: usize,
    pub target_quantiles: usize,
    pub eval_quantiles: usize,
    pub kappa: f64,
}

/// Full network description; stored verbatim in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Conditional inputs in feed order. DA6 encodes them in the
    /// conditional module, DA3 appends them to the head input and the
    /// plain baselines read their relative views.
    pub cond: Vec<CondKind>,
    pub map_height: usize,
    pub map_width: usize,
    pub submodules: Vec<SubmoduleConfig>,
    pub local: LocalConfig,
    pub ff_mult: usize,
    pub head: HeadConfig,
    /// Torso widths of the plain MLP baselines.
    pub baseline_hidden: Vec<usize>,
    /// Seed of the fixed evaluation τ-set.
    pub tau_seed: u64,
}

/// Size knobs used to derive a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchDims {
    pub dim: usize,
    pub heads: usize,
    pub cond_layers: usize,
    pub local_layers: usize,
    pub ff_mult: usize,
    /// Hidden width of the value head of the attention variants.
    pub head_hidden: usize,
    pub n_cos: usize,
    pub train_quantiles: usize,
    pub eval_quantiles: usize,
    pub kappa: f64,
    pub baseline_hidden: Vec<usize>,
    pub tau_seed: u64,
}

impl Default for ArchDims {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            cond_layers: 1,
            local_layers: 2,
            ff_mult: 2,
            head_hidden: 128,
            n_cos: 64,
            train_quantiles: 8,
            eval_quantiles: 32,
            kappa: 1.0,
            baseline_hidden: vec![256, 128],
            tau_seed: 0x7a5e_ed,
        }
    }
}

/// Smallest divisor of `n` that is at least `√n`: 25 → 5, 9 → 3, 7 → 7.
pub fn default_patch(n: usize) -> usize {
    (1..=n).find(|&p| n % p == 0 && p * p >= n).unwrap_or(n)
}

impl ModelConfig {
    pub fn build(variant: Variant, cond: &[CondKind], map_height: usize, map_width: usize, dims: &ArchDims) -> Result<Self> {
        let patch = default_patch(map_height).max(default_patch(map_width));
        let patch = if map_height % patch == 0 && map_width % patch == 0 { patch } else { 1 };
        let submodules = if variant.has_conditional_module() {
            cond.iter()
                .map(|&kind| SubmoduleConfig {
                    kind,
                    channels: kind.channels(),
                    height: map_height,
                    width: map_width,
                    patch,
                    dim: dims.dim,
                    layers: dims.cond_layers,
                    heads: dims.heads,
                })
                .collect()
        } else {
            Vec::new()
        };
        let config = Self {
            variant,
            cond: cond.to_vec(),
            map_height,
            map_width,
            submodules,
            local: LocalConfig {
                channels: LOCAL_CHANNELS,
                view: VIEW,
                patch: 1,
                dim: dims.dim,
                layers: dims.local_layers,
                heads: dims.heads,
            },
            ff_mult: dims.ff_mult,
            head: HeadConfig {
                hidden: dims.head_hidden,
                n_cos: dims.n_cos,
                train_quantiles: dims.train_quantiles,
                target_quantiles: dims.train_quantiles,
                eval_quantiles: dims.eval_quantiles,
                kappa: dims.kappa,
            },
            baseline_hidden: dims.baseline_hidden.clone(),
            tau_seed: dims.tau_seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.variant.has_conditional_module() && !self.submodules.is_empty() {
            return Err(Error::Config(format!("{} has no conditional module", self.variant.name())));
        }
        for sub in &self.submodules {
            sub.validate()?;
        }
        let l = &self.local;
        if l.patch == 0 || l.view % l.patch != 0 {
            return Err(Error::Config("local patch must divide the view".into()));
        }
        if self.variant.uses_attention() && (l.heads == 0 || l.dim % l.heads != 0) {
            return Err(Error::Config(format!("{} heads do not divide dim {}", l.heads, l.dim)));
        }
        if self.variant.has_conditional_module() && self.submodules.len() != self.cond.len() {
            return Err(Error::Config("one submodule per conditional input".into()));
        }
        if !self.variant.uses_attention() && self.baseline_hidden.is_empty() {
            return Err(Error::Config("baseline needs at least one hidden layer".into()));
        }
        if self.head.kappa <= 0.0 {
            return Err(Error::Config("kappa must be positive".into()));
        }
        Ok(())
    }

    pub fn actions(&self) -> usize {
        Action::COUNT
    }

    /// Length of one flattened conditional map of `kind` in absolute coordinates.
    pub fn cond_len(&self, kind: CondKind) -> usize {
        kind.channels() * self.map_height * self.map_width
    }

    /// Length of one relative-view canvas of `kind`.
    pub fn relative_len(&self, kind: CondKind) -> usize {
        kind.channels() * (2 * self.map_height - 1) * (2 * self.map_width - 1)
    }

    pub fn baseline_input_len(&self) -> usize {
        self.local.channels * self.local.view * self.local.view
            + self.cond.iter().map(|&k| self.relative_len(k)).sum::<usize>()
    }
}
