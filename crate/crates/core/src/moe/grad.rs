//! Analytic gradients of the MoE block and finite-difference verification.
//!
//! Gradients are taken with respect to the trainable parameters only: the
//! router matrix and the adapter pairs. The shared FFN is frozen. Router
//! gradients flow through the softmax over the selected logits; the
//! selection itself is treated as locally constant, which is exact
//! everywhere except at top-k ties, so the checker skips parameters whose
//! perturbation changes the selection set.

use ndarray::{Array1, Array2, ArrayView1};

use super::layer::{ForwardTrace, MoeLayer};
use super::MoeError;

/// A scalar loss over the block output with an analytic gradient.
pub trait LossFn {
    fn value(&self, y: ArrayView1<f64>) -> f64;
    fn grad(&self, y: ArrayView1<f64>) -> Array1<f64>;
}

/// `L(y) = c . y`
pub struct DotLoss(pub Array1<f64>);

impl LossFn for DotLoss {
    fn value(&self, y: ArrayView1<f64>) -> f64 {
        self.0.dot(&y)
    }
    fn grad(&self, _y: ArrayView1<f64>) -> Array1<f64> {
        self.0.clone()
    }
}

/// `L(y) = 0.5 |y|^2`
pub struct QuadLoss;

impl LossFn for QuadLoss {
    fn value(&self, y: ArrayView1<f64>) -> f64 {
        0.5 * y.dot(&y)
    }
    fn grad(&self, y: ArrayView1<f64>) -> Array1<f64> {
        y.to_owned()
    }
}

/// `L(y) = 0`
pub struct ZeroLoss;

impl LossFn for ZeroLoss {
    fn value(&self, _y: ArrayView1<f64>) -> f64 {
        0.0
    }
    fn grad(&self, y: ArrayView1<f64>) -> Array1<f64> {
        Array1::zeros(y.len())
    }
}

/// Gradients of the trainable parameters. Adapter entries for unselected
/// experts are zero matrices.
#[derive(Debug, Clone)]
pub struct Grads {
    pub router: Array2<f64>,
    pub down: Vec<Array2<f64>>,
    pub up: Vec<Array2<f64>>,
}

/// Backward pass through `y = h + sum_{e in S} g_e * delta_e(h)`.
pub fn backward(
    layer: &MoeLayer,
    x_in: ArrayView1<f64>,
    trace: &ForwardTrace,
    loss: &dyn LossFn,
) -> Grads {
    let d_model = layer.d_model();
    let n_experts = layer.n_experts();
    let v = loss.grad(trace.y.view());

    let mut down: Vec<Array2<f64>> = layer
        .adapters
        .iter()
        .map(|a| Array2::zeros((a.w_down.nrows(), a.w_down.ncols())))
        .collect();
    let mut up: Vec<Array2<f64>> = layer
        .adapters
        .iter()
        .map(|a| Array2::zeros((a.w_up.nrows(), a.w_up.ncols())))
        .collect();
    let mut router = Array2::zeros((n_experts, d_model));

    // dL/dg_e = v . delta_e for the selected experts.
    let selected = &trace.routing.selected;
    let mut dgate = vec![0.0f64; selected.len()];
    for (slot, _) in selected.iter().enumerate() {
        dgate[slot] = v.dot(&trace.adapter_delta[slot]);
    }

    for (slot, &e) in selected.iter().enumerate() {
        let gate = trace.routing.gates[e];
        let adapter = &layer.adapters[e];
        // dL/dW_up = s^T (g v)
        let s = &trace.adapter_act[slot];
        for (i, si) in s.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                up[e][[i, j]] = si * gate * vj;
            }
        }
        // dL/ds = g (v W_up^T), dL/du = dL/ds * sigma'(u)
        let ds = adapter.w_up.dot(&v); // len a: (a x d) . (d) = row sums
        let mut du = Array1::zeros(ds.len());
        for (i, dui) in du.iter_mut().enumerate() {
            *dui = gate * ds[i] * layer.sigma.derivative(trace.adapter_pre[slot][i]);
        }
        // dL/dW_down = h^T du
        for (i, hi) in trace.h.iter().enumerate() {
            for (j, duj) in du.iter().enumerate() {
                down[e][[i, j]] = hi * duj;
            }
        }
    }

    // Softmax over the selected logits: dL/dz_e = g_e (dgate_e - sum_j g_j dgate_j).
    let weighted: f64 = selected
        .iter()
        .enumerate()
        .map(|(slot, &e)| trace.routing.gates[e] * dgate[slot])
        .sum();
    for (slot, &e) in selected.iter().enumerate() {
        let dz = trace.routing.gates[e] * (dgate[slot] - weighted);
        for (j, xj) in x_in.iter().enumerate() {
            router[[e, j]] = dz * xj;
        }
    }

    Grads { router, down, up }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters skipped because perturbing them changed the top-k set.
    pub skipped: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Compare the analytic gradients against central finite differences over
/// every trainable parameter.
pub fn grad_check(
    layer: &MoeLayer,
    x: ArrayView1<f64>,
    x_in: ArrayView1<f64>,
    loss: &dyn LossFn,
    eps: f64,
) -> Result<GradCheckReport, MoeError> {
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(MoeError::InvalidSpec(format!("eps {eps} outside [1e-6, 1e-4]")));
    }
    let base = layer.forward_trace(x, x_in)?;
    let analytic = backward(layer, x_in, &base, loss);
    let base_selected = base.routing.selected.clone();

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    let mut work = layer.clone();

    let mut probe = |work: &mut MoeLayer,
                     write: &mut dyn FnMut(&mut MoeLayer, f64),
                     orig: f64,
                     analytic_grad: f64|
     -> Result<(), MoeError> {
        write(work, orig + eps);
        let plus = work.forward_trace(x, x_in)?;
        write(work, orig - eps);
        let minus = work.forward_trace(x, x_in)?;
        write(work, orig);
        if plus.routing.selected != base_selected || minus.routing.selected != base_selected {
            report.skipped += 1;
            return Ok(());
        }
        let fd = (loss.value(plus.y.view()) - loss.value(minus.y.view())) / (2.0 * eps);
        let err = rel_error(analytic_grad, fd);
        if fd == 0.0 && analytic_grad == 0.0 {
            // Both exactly zero: error is zero by definition.
        } else {
            report.max_rel_error = report.max_rel_error.max(err);
        }
        report.checked += 1;
        Ok(())
    };

    let n_experts = layer.n_experts();
    for e in 0..n_experts {
        let (rows, cols) = layer.adapters[e].w_down.dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = layer.adapters[e].w_down[[i, j]];
                probe(
                    &mut work,
                    &mut |l, v| l.adapters[e].w_down[[i, j]] = v,
                    orig,
                    analytic.down[e][[i, j]],
                )?;
            }
        }
        let (rows, cols) = layer.adapters[e].w_up.dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = layer.adapters[e].w_up[[i, j]];
                probe(
                    &mut work,
                    &mut |l, v| l.adapters[e].w_up[[i, j]] = v,
                    orig,
                    analytic.up[e][[i, j]],
                )?;
            }
        }
    }
    let (rows, cols) = layer.router.w.dim();
    for i in 0..rows {
        for j in 0..cols {
            let orig = layer.router.w[[i, j]];
            probe(
                &mut work,
                &mut |l, v| l.router.w[[i, j]] = v,
                orig,
                analytic.router[[i, j]],
            )?;
        }
    }
    Ok(report)
}
