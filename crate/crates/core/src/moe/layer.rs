//! Sparse mixture-of-experts block at desk scale.
//!
//! A block holds a top-k router, one frozen shared FFN replica, and one
//! trainable bottleneck adapter per expert. Routing picks k experts by
//! logit, softmaxes over the selected logits only, and mixes the adapter
//! outputs. Because the gates sum to 1, the adapters' shared residual is
//! pulled out of the mixture: `y = h + sum_e g_e * delta_e(h)` with
//! `h = ffn(x)` and `delta_e(h) = sigma(h W_down) W_up`. That keeps a
//! freshly upcycled block (all `W_up = 0`) bit-identical to the dense FFN.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::MoeError;

/// Dimensions of a MoE block stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoeLayerSpec {
    pub d_model: usize,
    pub d_adapter: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub n_layers: usize,
}

impl MoeLayerSpec {
    pub fn validate(&self) -> Result<(), MoeError> {
        if self.d_model == 0 || self.n_experts == 0 || self.top_k == 0 || self.n_layers == 0 {
            return Err(MoeError::InvalidSpec(format!("all dimensions must be >= 1: {self:?}")));
        }
        if self.top_k > self.n_experts {
            return Err(MoeError::InvalidSpec(format!(
                "top_k {} exceeds n_experts {}",
                self.top_k, self.n_experts
            )));
        }
        Ok(())
    }
}

/// Pointwise nonlinearity. The adapter default is SiLU, which satisfies
/// sigma(0) = 0 so zero input propagates to zero output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s + x * s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    /// Smooth activations are safe for finite-difference checking.
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn parse_label(s: &str) -> Option<Activation> {
        match s {
            "silu" => Some(Activation::Silu),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

/// Router weight matrix, one row per expert.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterWeights {
    pub w: Array2<f64>,
}

impl RouterWeights {
    pub fn n_experts(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.w.ncols()
    }
}

/// Trainable bottleneck adapter: `sigma(x W_down) W_up + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertAdapter {
    pub w_down: Array2<f64>,
    pub w_up: Array2<f64>,
}

impl ExpertAdapter {
    pub fn d_model(&self) -> usize {
        self.w_down.nrows()
    }

    pub fn d_adapter(&self) -> usize {
        self.w_down.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w_down.len() + self.w_up.len()
    }

    pub fn check_shapes(&self, d_model: usize) -> Result<(), MoeError> {
        if self.w_down.nrows() != d_model
            || self.w_up.ncols() != d_model
            || self.w_down.ncols() != self.w_up.nrows()
        {
            return Err(MoeError::ShapeMismatch {
                what: "adapter",
                expected: format!("({d_model} x a) down, (a x {d_model}) up"),
                got: format!("{:?} down, {:?} up", self.w_down.dim(), self.w_up.dim()),
            });
        }
        Ok(())
    }
}

/// Residual adapter forward pass.
pub fn adapter_forward(
    x: ArrayView1<f64>,
    adapter: &ExpertAdapter,
    sigma: Activation,
) -> Result<Array1<f64>, MoeError> {
    adapter.check_shapes(x.len())?;
    Ok(adapter_delta(x, adapter, sigma) + &x)
}

/// The adapter without its residual: `sigma(x W_down) W_up`.
fn adapter_delta(x: ArrayView1<f64>, adapter: &ExpertAdapter, sigma: Activation) -> Array1<f64> {
    let hidden = x.dot(&adapter.w_down).mapv(|v| sigma.apply(v));
    hidden.dot(&adapter.w_up)
}

/// The frozen feed-forward sublayer shared by every expert. Exactly one
/// replica is stored per block no matter how many experts there are.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedFfn {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub activation: Activation,
}

impl SharedFfn {
    pub fn d_model(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_ff(&self) -> usize {
        self.w1.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, MoeError> {
        if x.len() != self.d_model() || self.w2.nrows() != self.d_ff()
            || self.w2.ncols() != self.d_model()
        {
            return Err(MoeError::ShapeMismatch {
                what: "ffn",
                expected: format!("input of length {}", self.d_model()),
                got: format!("length {}", x.len()),
            });
        }
        let hidden = x.dot(&self.w1).mapv(|v| self.activation.apply(v));
        Ok(hidden.dot(&self.w2))
    }
}

/// Sparse gates over the experts: a dense vector with exactly `top_k`
/// nonzero entries summing to 1. Ties in the logits break toward the
/// lowest expert index.
pub fn route(
    x_in: ArrayView1<f64>,
    router: &RouterWeights,
    top_k: usize,
) -> Result<Vec<f64>, MoeError> {
    Ok(route_detailed(x_in, router, top_k)?.gates)
}

/// Routing with everything the load-balancing loss and statistics need.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    /// Sparse mixture weights, one per expert.
    pub gates: Vec<f64>,
    /// Selected expert indices, ascending.
    pub selected: Vec<usize>,
    /// Softmax over *all* logits, used by the load-balancing loss.
    pub full_probs: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn route_detailed(
    x_in: ArrayView1<f64>,
    router: &RouterWeights,
    top_k: usize,
) -> Result<Routing, MoeError> {
    if x_in.len() != router.d_model() {
        return Err(MoeError::ShapeMismatch {
            what: "router",
            expected: format!("input of length {}", router.d_model()),
            got: format!("length {}", x_in.len()),
        });
    }
    let n_experts = router.n_experts();
    if top_k == 0 || top_k > n_experts {
        return Err(MoeError::InvalidSpec(format!(
            "top_k {top_k} not in 1..={n_experts}"
        )));
    }
    let logits: Vec<f64> = router.w.dot(&x_in).to_vec();
    let selected = top_k_indices(&logits, top_k);

    let mut gates = vec![0.0; n_experts];
    let max_sel = selected.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for &i in &selected {
        denom += (logits[i] - max_sel).exp();
    }
    for &i in &selected {
        gates[i] = (logits[i] - max_sel).exp() / denom;
    }

    let max_all = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut full_probs: Vec<f64> = logits.iter().map(|&z| (z - max_all).exp()).collect();
    let full_sum: f64 = full_probs.iter().sum();
    for p in &mut full_probs {
        *p /= full_sum;
    }

    Ok(Routing { gates, selected, full_probs, logits })
}

/// Indices of the `k` largest values; ties resolve to the lowest index.
/// The result is sorted ascending.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

/// One MoE block: router + shared frozen FFN + per-expert adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeLayer {
    pub router: RouterWeights,
    pub ffn: SharedFfn,
    pub adapters: Vec<ExpertAdapter>,
    pub top_k: usize,
    /// Adapter nonlinearity (the FFN carries its own).
    pub sigma: Activation,
}

/// Forward intermediates, kept around for the backward pass and for
/// routing statistics. Adapter intermediates are stored per *selected*
/// expert, aligned with `routing.selected`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub h: Array1<f64>,
    pub routing: Routing,
    pub adapter_pre: Vec<Array1<f64>>,
    pub adapter_act: Vec<Array1<f64>>,
    pub adapter_delta: Vec<Array1<f64>>,
    pub y: Array1<f64>,
}

impl MoeLayer {
    pub fn new(
        router: RouterWeights,
        ffn: SharedFfn,
        adapters: Vec<ExpertAdapter>,
        top_k: usize,
        sigma: Activation,
    ) -> Result<Self, MoeError> {
        let d_model = ffn.d_model();
        if router.d_model() != d_model {
            return Err(MoeError::ShapeMismatch {
                what: "router",
                expected: format!("{d_model} columns"),
                got: format!("{}", router.d_model()),
            });
        }
        if router.n_experts() != adapters.len() {
            return Err(MoeError::ShapeMismatch {
                what: "router",
                expected: format!("{} rows", adapters.len()),
                got: format!("{}", router.n_experts()),
            });
        }
        for a in &adapters {
            a.check_shapes(d_model)?;
        }
        if top_k == 0 || top_k > adapters.len() {
            return Err(MoeError::InvalidSpec(format!(
                "top_k {top_k} not in 1..={}",
                adapters.len()
            )));
        }
        Ok(MoeLayer { router, ffn, adapters, top_k, sigma })
    }

    pub fn d_model(&self) -> usize {
        self.ffn.d_model()
    }

    pub fn n_experts(&self) -> usize {
        self.adapters.len()
    }

    /// Trainable parameters: adapters plus router. The frozen FFN is not
    /// counted.
    pub fn trainable_param_count(&self) -> usize {
        self.adapters.iter().map(ExpertAdapter::param_count).sum::<usize>() + self.router.w.len()
    }

    /// Forward pass routing on `x` itself (the desk-scale convention where
    /// the caller's attention output equals the block input).
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, MoeError> {
        Ok(self.forward_trace(x, x)?.y)
    }

    /// Forward pass with an explicit routing input `x_in`. Only selected
    /// experts are evaluated.
    pub fn forward_trace(
        &self,
        x: ArrayView1<f64>,
        x_in: ArrayView1<f64>,
    ) -> Result<ForwardTrace, MoeError> {
        let routing = route_detailed(x_in, &self.router, self.top_k)?;
        let h = self.ffn.forward(x)?;
        let mut adapter_pre = Vec::with_capacity(routing.selected.len());
        let mut adapter_act = Vec::with_capacity(routing.selected.len());
        let mut adapter_delta = Vec::with_capacity(routing.selected.len());
        let mut y = h.clone();
        for &e in &routing.selected {
            let adapter = &self.adapters[e];
            adapter.check_shapes(h.len())?;
            let pre = h.dot(&adapter.w_down);
            let act = pre.mapv(|v| self.sigma.apply(v));
            let delta = act.dot(&adapter.w_up);
            y.scaled_add(routing.gates[e], &delta);
            adapter_pre.push(pre);
            adapter_act.push(act);
            adapter_delta.push(delta);
        }
        Ok(ForwardTrace { h, routing, adapter_pre, adapter_act, adapter_delta, y })
    }
}

/// Switch-style auxiliary load-balancing loss: `N_E * sum_e f_e * P_e`,
/// where `f_e` is the fraction of (token, slot) assignments landing on
/// expert `e` and `P_e` the mean full-softmax router probability. Equals 1
/// under perfectly uniform routing and `N_E` under full concentration.
pub fn load_balance_loss(routings: &[Routing], n_experts: usize) -> Result<f64, MoeError> {
    if routings.is_empty() {
        return Err(MoeError::EmptyBatch);
    }
    let n_tokens = routings.len() as f64;
    let mut assigned = vec![0.0f64; n_experts];
    let mut mean_prob = vec![0.0f64; n_experts];
    for r in routings {
        let k = r.selected.len() as f64;
        for &e in &r.selected {
            assigned[e] += 1.0 / (n_tokens * k);
        }
        for (e, p) in r.full_probs.iter().enumerate() {
            mean_prob[e] += p / n_tokens;
        }
    }
    Ok(n_experts as f64
        * assigned.iter().zip(mean_prob.iter()).map(|(f, p)| f * p).sum::<f64>())
}

/// Default coefficient applied to the auxiliary loss during training.
pub const LOAD_BALANCE_COEFF: f64 = 0.01;
