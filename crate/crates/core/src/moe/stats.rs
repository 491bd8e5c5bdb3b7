//! Routing statistics over a token stream.

use std::io::Write;

use ndarray::Array1;

use super::checkpoint::MoeModel;
use super::MoeError;

/// Per-(layer, expert) activation counts collected while feeding tokens
/// through the block stack. Frequencies are counts over tokens, so each
/// layer's frequencies sum to `top_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingStats {
    pub n_experts: usize,
    pub tokens: u64,
    /// `counts[layer][expert]`
    pub counts: Vec<Vec<u64>>,
}

impl RoutingStats {
    pub fn frequency(&self, layer: usize, expert: usize) -> f64 {
        self.counts[layer][expert] as f64 / self.tokens as f64
    }

    /// CSV with header `layer,expert,count,frequency`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "layer,expert,count,frequency")?;
        for (layer, row) in self.counts.iter().enumerate() {
            for (expert, count) in row.iter().enumerate() {
                writeln!(
                    w,
                    "{layer},{expert},{count},{}",
                    self.frequency(layer, expert)
                )?;
            }
        }
        Ok(())
    }
}

/// Run every token through the model and histogram the expert selections
/// per layer.
pub fn routing_stats(model: &MoeModel, tokens: &[Array1<f64>]) -> Result<RoutingStats, MoeError> {
    if tokens.is_empty() {
        return Err(MoeError::EmptyBatch);
    }
    let n_layers = model.layers.len();
    let n_experts = model.layers.first().map_or(0, |l| l.n_experts());
    let mut counts = vec![vec![0u64; n_experts]; n_layers];
    for token in tokens {
        let mut x = token.clone();
        for (li, layer) in model.layers.iter().enumerate() {
            let trace = layer.forward_trace(x.view(), x.view())?;
            debug_assert_eq!(trace.routing.selected.len(), layer.top_k);
            for &e in &trace.routing.selected {
                counts[li][e] += 1;
            }
            x = trace.y;
        }
    }
    Ok(RoutingStats { n_experts, tokens: tokens.len() as u64, counts })
}
