//! Server-side aggregation: federated averaging with fixed coefficients and
//! attentive federated averaging.
//!
//! The attentive rule measures, for every layer, the L2 distance between
//! the global parameters and each client's parameters, turns the distances
//! into per-layer weights with a softmax, and takes one gradient step of
//! size `epsilon` on `Σ_k ½ α_k ‖w − w_k‖²`:
//!
//! ```text
//! w' = w − ε Σ_k α_k (w − w_k)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{assert_schema_compatible, layer_l2_distance, squared_distance, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedAtt,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedAtt => "fedatt",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FedAvgCoefficients {
    Uniform,
    DataProportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    pub strategy: Strategy,
    /// Step size of the attentive update.
    pub epsilon: f64,
    pub fedavg_coefficients: FedAvgCoefficients,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::FedAtt,
            epsilon: 1.0,
            fedavg_coefficients: FedAvgCoefficients::Uniform,
        }
    }
}

impl AggregationConfig {
    pub fn fedavg() -> Self {
        Self {
            strategy: Strategy::FedAvg,
            ..Self::default()
        }
    }

    pub fn fedatt(epsilon: f64) -> Self {
        Self {
            strategy: Strategy::FedAtt,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config(
                "aggregation.epsilon",
                format!("must be a positive finite number, got {}", self.epsilon),
            ));
        }
        Ok(())
    }
}

/// Per-layer attention weights, one entry per client, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    per_layer: Vec<(String, Vec<f64>)>,
}

impl AttentionWeights {
    pub fn layers(&self) -> &[(String, Vec<f64>)] {
        &self.per_layer
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.per_layer
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a.as_slice())
    }

    pub fn num_clients(&self) -> usize {
        self.per_layer.first().map_or(0, |(_, a)| a.len())
    }

    fn check_against(&self, global: &ParameterSet, clients: usize) -> Result<()> {
        let names_match = self.per_layer.len() == global.num_layers()
            && self
                .per_layer
                .iter()
                .zip(global.layers())
                .all(|((n, a), l)| n == l.name() && a.len() == clients);
        if names_match {
            Ok(())
        } else {
            Err(Error::SchemaMismatch(
                "attention weights do not match the parameter schema or client count".into(),
            ))
        }
    }
}

/// Softmax with max subtraction. Entries that would underflow to zero are
/// floored at the smallest positive normal so every weight stays in (0, 1].
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores
        .iter()
        .map(|s| (s - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

fn check_inputs(global: &ParameterSet, clients: &[ParameterSet]) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::Empty("aggregation needs at least one client"));
    }
    let mut all: Vec<&ParameterSet> = Vec::with_capacity(clients.len() + 1);
    all.push(global);
    all.extend(clients);
    assert_schema_compatible(&all)
}

/// Softmax over client-to-global layer distances, computed per layer.
pub fn attention_weights(
    global: &ParameterSet,
    clients: &[ParameterSet],
) -> Result<AttentionWeights> {
    check_inputs(global, clients)?;
    let mut per_layer = Vec::with_capacity(global.num_layers());
    for (l, layer) in global.layers().iter().enumerate() {
        let distances = clients
            .iter()
            .map(|c| layer_l2_distance(layer, &c.layers()[l]))
            .collect::<Result<Vec<_>>>()?;
        per_layer.push((layer.name().to_owned(), softmax(&distances)));
    }
    Ok(AttentionWeights { per_layer })
}

/// One attentive update of the global parameters. Returns the new global
/// parameters together with the attention weights that produced them.
pub fn fedatt_aggregate(
    global: &ParameterSet,
    clients: &[ParameterSet],
    config: &AggregationConfig,
) -> Result<(ParameterSet, AttentionWeights)> {
    config.validate()?;
    let weights = attention_weights(global, clients)?;
    let eps = config.epsilon;
    let mut next = global.clone();
    for (l, layer) in next.layers_mut().iter_mut().enumerate() {
        let alphas = &weights.per_layer[l].1;
        let w = global.layers()[l].values();
        let mut grad = vec![0.0; w.len()];
        for (client, &alpha) in clients.iter().zip(alphas) {
            for ((g, wi), ci) in grad.iter_mut().zip(w).zip(client.layers()[l].values()) {
                *g += alpha * (wi - ci);
            }
        }
        for (dst, g) in layer.values_mut().iter_mut().zip(&grad) {
            *dst -= eps * g;
        }
    }
    next.ensure_finite()?;
    Ok((next, weights))
}

/// Fixed-coefficient averaging: `1/m` each, or proportional to sample counts.
pub fn fedavg_aggregate(
    clients: &[ParameterSet],
    sample_counts: &[usize],
    config: &AggregationConfig,
) -> Result<ParameterSet> {
    if clients.is_empty() {
        return Err(Error::Empty("aggregation needs at least one client"));
    }
    if sample_counts.len() != clients.len() {
        return Err(Error::Dimension(format!(
            "{} clients but {} sample counts",
            clients.len(),
            sample_counts.len()
        )));
    }
    let coefficients: Vec<f64> = match config.fedavg_coefficients {
        FedAvgCoefficients::Uniform => vec![1.0 / clients.len() as f64; clients.len()],
        FedAvgCoefficients::DataProportional => {
            let total: usize = sample_counts.iter().sum();
            if total == 0 {
                return Err(Error::Empty("total sample count is zero"));
            }
            sample_counts
                .iter()
                .map(|&n| n as f64 / total as f64)
                .collect()
        }
    };
    // Written as w_0 + Σ c_k (w_k - w_0) so that identical clients are
    // returned bit-exactly.
    let refs: Vec<&ParameterSet> = clients.iter().collect();
    assert_schema_compatible(&refs)?;
    let anchor = &clients[0];
    let mut out = anchor.clone();
    for (l, layer) in out.layers_mut().iter_mut().enumerate() {
        let base = anchor.layers()[l].values();
        for (client, &c) in clients.iter().zip(&coefficients) {
            for ((dst, b), w) in layer
                .values_mut()
                .iter_mut()
                .zip(base)
                .zip(client.layers()[l].values())
            {
                *dst += c * (w - b);
            }
        }
    }
    out.ensure_finite()?;
    Ok(out)
}

/// `Σ_l Σ_k ½ α^l_k ‖w^l − w^l_k‖²`, for logging.
pub fn aggregation_loss(
    global: &ParameterSet,
    clients: &[ParameterSet],
    weights: &AttentionWeights,
) -> Result<f64> {
    check_inputs(global, clients)?;
    weights.check_against(global, clients.len())?;
    let mut loss = 0.0;
    for (l, layer) in global.layers().iter().enumerate() {
        for (client, &alpha) in clients.iter().zip(&weights.per_layer[l].1) {
            loss += 0.5 * alpha * squared_distance(layer.values(), client.layers()[l].values());
        }
    }
    Ok(loss)
}

/// Uniform weights, used to report an aggregation loss for FedAvg rounds.
pub fn uniform_weights(global: &ParameterSet, clients: usize) -> AttentionWeights {
    AttentionWeights {
        per_layer: global
            .layers()
            .iter()
            .map(|l| (l.name().to_owned(), vec![1.0 / clients as f64; clients]))
            .collect(),
    }
}

/// Result of one aggregation step under either strategy.
#[derive(Debug, Clone)]
pub struct Aggregated {
    pub params: ParameterSet,
    pub attention: Option<AttentionWeights>,
    pub loss: f64,
}

/// Dispatches on `config.strategy`. The reported loss is evaluated at the
/// pre-update global parameters with the weights of the step.
pub fn aggregate(
    global: &ParameterSet,
    clients: &[ParameterSet],
    sample_counts: &[usize],
    config: &AggregationConfig,
) -> Result<Aggregated> {
    match config.strategy {
        Strategy::FedAtt => {
            let (params, weights) = fedatt_aggregate(global, clients, config)?;
            let loss = aggregation_loss(global, clients, &weights)?;
            Ok(Aggregated {
                params,
                attention: Some(weights),
                loss,
            })
        }
        Strategy::FedAvg => {
            let params = fedavg_aggregate(clients, sample_counts, config)?;
            check_inputs(global, clients)?;
            let loss = aggregation_loss(global, clients, &uniform_weights(global, clients.len()))?;
            Ok(Aggregated {
                params,
                attention: None,
                loss,
            })
        }
    }
}
