//! Parameter accounting for upcycled models.
//!
//! Closed forms over the layer spec:
//! - adapters per expert: `n_layers * 2 * d_model * d_adapter`
//! - router:              `n_layers * n_experts * d_model`
//! - total:  base + all experts' adapters + router
//! - active: base + top_k experts' adapters + router
//!
//! The frozen shared FFN replicas are part of the base count.

use serde::Serialize;

use super::layer::MoeLayerSpec;
use super::MoeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub per_expert_adapter: u64,
    pub router: u64,
    pub total: u64,
    pub active: u64,
}

pub fn count_params(spec: &MoeLayerSpec, base_params: u64) -> Result<ParamCounts, MoeError> {
    if spec.n_experts == 0 || spec.top_k == 0 || spec.top_k > spec.n_experts || spec.n_layers == 0
    {
        return Err(MoeError::InvalidSpec(format!("invalid spec {spec:?}")));
    }
    let per_expert_adapter = spec.n_layers as u64 * 2 * spec.d_model as u64 * spec.d_adapter as u64;
    let router = spec.n_layers as u64 * spec.n_experts as u64 * spec.d_model as u64;
    let total = base_params + spec.n_experts as u64 * per_expert_adapter + router;
    let active = base_params + spec.top_k as u64 * per_expert_adapter + router;
    Ok(ParamCounts { per_expert_adapter, router, total, active })
}

/// Named configuration presets for the accounting CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoePreset {
    pub name: &'static str,
    pub spec: MoeLayerSpec,
    pub base_params: u64,
}

impl MoePreset {
    /// 7B-class config: 32 layers, hidden 4096, adapter 512, 8 experts
    /// with 2 active, on a 6.74B dense base.
    pub fn llama2_7b() -> MoePreset {
        MoePreset {
            name: "7b",
            spec: MoeLayerSpec {
                d_model: 4096,
                d_adapter: 512,
                n_experts: 8,
                top_k: 2,
                n_layers: 32,
            },
            base_params: 6_740_000_000,
        }
    }

    /// 13B-class config: 40 layers, hidden 5120, on a 13.02B dense base.
    pub fn llama2_13b() -> MoePreset {
        MoePreset {
            name: "13b",
            spec: MoeLayerSpec {
                d_model: 5120,
                d_adapter: 512,
                n_experts: 8,
                top_k: 2,
                n_layers: 40,
            },
            base_params: 13_020_000_000,
        }
    }

    /// Small config for demos and tests.
    pub fn toy() -> MoePreset {
        MoePreset {
            name: "toy",
            spec: MoeLayerSpec {
                d_model: 16,
                d_adapter: 8,
                n_experts: 4,
                top_k: 2,
                n_layers: 2,
            },
            base_params: 2 * (16 * 32 * 2),
        }
    }

    pub fn by_name(name: &str) -> Option<MoePreset> {
        match name {
            "7b" => Some(Self::llama2_7b()),
            "13b" => Some(Self::llama2_13b()),
            "toy" => Some(Self::toy()),
            _ => None,
        }
    }
}

/// Relative deviation of `value` from `target`.
pub fn relative_gap(value: f64, target: f64) -> f64 {
    (value - target).abs() / target
}
