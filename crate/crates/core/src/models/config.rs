use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "MNL", alias = "mnl")]
    Mnl,
    #[serde(rename = "SDW", alias = "sdw")]
    Sdw,
    #[serde(rename = "SDE", alias = "sde")]
    Sde,
    #[serde(rename = "SDA", alias = "sda")]
    Sda,
}

/// How an item's base embedding meets the set reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `F(x) − r(s)`, per dimension (requires `h = 1`).
    Diff,
    /// `⟨F_i(x), r_i(s)⟩` over the `h` axis.
    Inner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mu {
    Identity,
    Tanh,
    KinkedTanh,
    /// `z` for `z ≥ 0`, `c·z` below.
    KinkedLinear,
    /// `max(z, 0)^ρ` with learnable `ρ`.
    Power,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WMode {
    Setnet,
    FreeVector,
    Ones,
    /// Softmax over dimensions of each dimension's best score in the set.
    SoftmaxMax,
}

impl WMode {
    pub fn is_set_dependent(self) -> bool {
        matches!(self, WMode::Setnet | WMode::SoftmaxMax)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RMode {
    Setnet,
    Zero,
    Min,
    MaxPlusMinHalf,
}

fn default_hidden() -> usize {
    16
}

/// Component tuple of an aggregation model `g(x,s) = ⟨w(s), μ(F(x) ∘ r(s))⟩`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub mechanism: Mechanism,
    pub ell: usize,
    pub h: usize,
    pub comparison: Comparison,
    pub mu: Mu,
    pub w_mode: WMode,
    pub r_mode: RMode,
    /// Width of both hidden layers of each set network.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// One `c` (or `ρ`) per dimension instead of a shared scalar.
    #[serde(default)]
    pub per_dim_c: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
}

pub const PRESET_NAMES: [&str; 11] = [
    "mnl",
    "lam",
    "ccm_min_power",
    "kalai_softmax",
    "sda_default",
    "sda_tanh",
    "sda_no_mu",
    "sda_free_w",
    "sde",
    "sdw",
    "mnl_setnn_w",
];

impl AggregatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.ell == 0 || self.h == 0 {
            return bad("ell and h must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1");
        }
        match self.comparison {
            Comparison::Diff if self.h != 1 => return bad("comparison = diff requires h = 1"),
            Comparison::Inner if self.r_mode == RMode::Zero => {
                return bad("comparison = inner with r = zero is identically zero")
            }
            _ => {}
        }
        match self.mechanism {
            Mechanism::Mnl => {
                if self.w_mode != WMode::Ones || self.r_mode != RMode::Zero || self.mu != Mu::Identity {
                    return bad("MNL requires w = ones, r = zero, mu = identity");
                }
            }
            Mechanism::Sdw => {
                if self.r_mode != RMode::Zero || self.mu != Mu::Identity || self.comparison != Comparison::Diff {
                    return bad("SDW requires r = zero, mu = identity, comparison = diff");
                }
            }
            Mechanism::Sde => {
                if self.w_mode.is_set_dependent() {
                    return bad("SDE requires set-independent weights (free_vector or ones)");
                }
            }
            Mechanism::Sda => {}
        }
        Ok(())
    }

    /// Width of the flattened base embedding `F(x)`.
    pub fn embed_width(&self) -> usize {
        self.ell * self.h
    }
}

/// Named component tuples for classical choice models and the ablation
/// variants of SDA.
pub fn preset(name: &str) -> Result<AggregatorConfig> {
    let base = |mechanism, ell, h, comparison, mu, w_mode, r_mode| AggregatorConfig {
        mechanism,
        ell,
        h,
        comparison,
        mu,
        w_mode,
        r_mode,
        hidden: 16,
        per_dim_c: false,
        preset: Some(name.to_string()),
    };
    use Comparison::*;
    use Mechanism::*;
    let cfg = match name {
        "mnl" => base(Mnl, 1, 1, Diff, Mu::Identity, WMode::Ones, RMode::Zero),
        "lam" => base(Sde, 24, 1, Diff, Mu::KinkedLinear, WMode::Ones, RMode::MaxPlusMinHalf),
        "ccm_min_power" => base(Sde, 24, 1, Diff, Mu::Power, WMode::Ones, RMode::Min),
        "kalai_softmax" => base(Sdw, 24, 1, Diff, Mu::Identity, WMode::SoftmaxMax, RMode::Zero),
        "sda_default" => base(Sda, 24, 8, Inner, Mu::KinkedTanh, WMode::Setnet, RMode::Setnet),
        "sda_tanh" => base(Sda, 24, 8, Inner, Mu::Tanh, WMode::Setnet, RMode::Setnet),
        "sda_no_mu" => base(Sda, 24, 8, Inner, Mu::Identity, WMode::Setnet, RMode::Setnet),
        "sda_free_w" => base(Sda, 24, 8, Inner, Mu::KinkedTanh, WMode::FreeVector, RMode::Setnet),
        "sde" => base(Sde, 24, 1, Diff, Mu::KinkedTanh, WMode::FreeVector, RMode::Setnet),
        "sdw" => base(Sdw, 24, 1, Diff, Mu::Identity, WMode::Setnet, RMode::Zero),
        "mnl_setnn_w" => base(Sdw, 1, 1, Diff, Mu::Identity, WMode::Setnet, RMode::Zero),
        _ => {
            return Err(Error::UnknownPreset { name: name.to_string(), valid: PRESET_NAMES.join(", ") });
        }
    };
    Ok(cfg)
}
