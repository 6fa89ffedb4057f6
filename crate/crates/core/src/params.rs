//! Layer-wise parameter containers and the vector algebra used by the
//! aggregation strategies.
//!
//! A [`ParameterSet`] is an ordered list of named, shaped, flat `f64`
//! vectors. Weights and biases of one network layer are separate entries,
//! so per-layer attention operates at that granularity.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl LayerParams {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::SchemaMismatch("layer name must be non-empty".into()));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::SchemaMismatch(format!(
                "layer `{name}` has invalid shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::SchemaMismatch(format!(
                "layer `{name}` has {} values but shape {shape:?} needs {expected}",
                values.len()
            )));
        }
        Ok(Self {
            name,
            shape,
            values,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(name, shape, vec![0.0; len])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn same_schema(&self, other: &LayerParams) -> bool {
        self.name == other.name && self.shape == other.shape
    }
}

/// Euclidean distance between two layers of identical shape.
pub fn layer_l2_distance(a: &LayerParams, b: &LayerParams) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::SchemaMismatch(format!(
            "cannot compare layer `{}` {:?} with layer `{}` {:?}",
            a.name, a.shape, b.name, b.shape
        )));
    }
    Ok(squared_distance(&a.values, &b.values).sqrt())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    layers: Vec<LayerParams>,
}

impl ParameterSet {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            if layers[..i].iter().any(|l| l.name == layer.name) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate layer name `{}`",
                    layer.name
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerParams> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    /// A set with this schema and every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name.clone(),
                    shape: l.shape.clone(),
                    values: vec![0.0; l.values.len()],
                })
                .collect(),
        }
    }

    pub fn is_schema_compatible(&self, other: &ParameterSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_schema(b))
    }

    /// Fails on the first NaN or infinite value, naming its layer.
    pub fn ensure_finite(&self) -> Result<()> {
        for layer in &self.layers {
            if let Some(i) = layer.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("layer `{}` index {i}", layer.name),
                });
            }
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParameterSet, scale: f64) -> Result<()> {
        assert_schema_compatible(&[self, other])?;
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.values.iter_mut().zip(&src.values) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.values.iter().copied())
    }

    pub fn to_json(&self) -> Result<String> {
        self.ensure_finite()?;
        Ok(serde_json::to_string(&ParameterSetJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ParameterSetJson = serde_json::from_str(text)?;
        let set = raw.into_set()?;
        set.ensure_finite()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Succeeds iff every set shares the schema of the first one.
pub fn assert_schema_compatible(sets: &[&ParameterSet]) -> Result<()> {
    let Some((first, rest)) = sets.split_first() else {
        return Ok(());
    };
    for (k, other) in rest.iter().enumerate() {
        if first.layers.len() != other.layers.len() {
            let divergent = first
                .layers
                .iter()
                .zip(&other.layers)
                .find(|(a, b)| !a.same_schema(b))
                .map(|(a, _)| a.name.clone())
                .or_else(|| {
                    let shorter = first.layers.len().min(other.layers.len());
                    first
                        .layers
                        .get(shorter)
                        .or_else(|| other.layers.get(shorter))
                        .map(|l| l.name.clone())
                })
                .unwrap_or_default();
            return Err(Error::SchemaMismatch(format!(
                "set {} has {} layers, expected {}; first divergent layer `{divergent}`",
                k + 1,
                other.layers.len(),
                first.layers.len()
            )));
        }
        for (a, b) in first.layers.iter().zip(&other.layers) {
            if !a.same_schema(b) {
                return Err(Error::SchemaMismatch(format!(
                    "layer `{}` {:?} does not match layer `{}` {:?} in set {}",
                    a.name,
                    a.shape,
                    b.name,
                    b.shape,
                    k + 1
                )));
            }
        }
    }
    Ok(())
}

/// Element-wise `Σ_k coefficients[k] * sets[k]`.
pub fn linear_combine(sets: &[&ParameterSet], coefficients: &[f64]) -> Result<ParameterSet> {
    if sets.is_empty() {
        return Err(Error::Empty("linear_combine needs at least one set"));
    }
    if sets.len() != coefficients.len() {
        return Err(Error::Dimension(format!(
            "{} sets but {} coefficients",
            sets.len(),
            coefficients.len()
        )));
    }
    assert_schema_compatible(sets)?;
    let mut out = sets[0].zeros_like();
    for (set, &c) in sets.iter().zip(coefficients) {
        for (dst, src) in out.layers.iter_mut().zip(&set.layers) {
            for (d, s) in dst.values.iter_mut().zip(&src.values) {
                *d += c * s;
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParameterSetJson {
    order: Vec<String>,
    layers: BTreeMap<String, LayerJson>,
}

impl From<&ParameterSet> for ParameterSetJson {
    fn from(set: &ParameterSet) -> Self {
        Self {
            order: set.layers.iter().map(|l| l.name.clone()).collect(),
            layers: set
                .layers
                .iter()
                .map(|l| {
                    (
                        l.name.clone(),
                        LayerJson {
                            shape: l.shape.clone(),
                            values: l.values.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}

impl ParameterSetJson {
    fn into_set(mut self) -> Result<ParameterSet> {
        if self.order.len() != self.layers.len() {
            return Err(Error::SchemaMismatch(format!(
                "`order` lists {} layers but {} are present",
                self.order.len(),
                self.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.order.len());
        for name in self.order {
            let raw = self.layers.remove(&name).ok_or_else(|| {
                Error::SchemaMismatch(format!("layer `{name}` listed in `order` is missing"))
            })?;
            layers.push(LayerParams::new(name, raw.shape, raw.values)?);
        }
        ParameterSet::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec_layer(name: &str, values: Vec<f64>) -> LayerParams {
        LayerParams::new(name, vec![values.len()], values).unwrap()
    }

    fn single(values: Vec<f64>) -> ParameterSet {
        ParameterSet::new(vec![vec_layer("w", values)]).unwrap()
    }

    #[test]
    fn distance_identity_and_pythagoras() {
        let a = vec_layer("a", vec![0.3, -1.2, 7.0]);
        assert_eq!(layer_l2_distance(&a, &a).unwrap(), 0.0);
        let a = vec_layer("a", vec![0.0, 0.0]);
        let b = vec_layer("b", vec![3.0, 4.0]);
        assert_eq!(layer_l2_distance(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn distance_matches_scalar_oracle() {
        // (1.0)^2 + (-3.0)^2 + 0^2 = 10, computed by hand.
        let a = vec_layer("a", vec![1.5, -2.0, 0.25]);
        let b = vec_layer("b", vec![0.5, 1.0, 0.25]);
        let d = layer_l2_distance(&a, &b).unwrap();
        assert!((d - 3.1622776601683795).abs() < 1e-15);
    }

    #[test]
    fn distance_shape_mismatch_names_layers() {
        let a = LayerParams::zeros("lstm1", vec![4, 8]).unwrap();
        let b = LayerParams::zeros("lstm2", vec![4, 9]).unwrap();
        let err = layer_l2_distance(&a, &b).unwrap_err().to_string();
        assert!(err.contains("lstm1") && err.contains("lstm2"), "{err}");
    }

    #[test]
    fn layer_rejects_bad_shapes() {
        assert!(LayerParams::new("x", vec![2, 2], vec![0.0; 3]).is_err());
        assert!(LayerParams::new("x", vec![0], vec![]).is_err());
        assert!(LayerParams::new("", vec![1], vec![0.0]).is_err());
        let dup = vec![vec_layer("x", vec![1.0]), vec_layer("x", vec![2.0])];
        assert!(ParameterSet::new(dup).is_err());
    }

    #[test]
    fn combine_examples() {
        let a = single(vec![1.0, 2.0]);
        assert_eq!(linear_combine(&[&a], &[1.0]).unwrap(), a);
        assert_eq!(linear_combine(&[&a, &a], &[0.5, 0.5]).unwrap(), a);
        let b = single(vec![3.0, 6.0]);
        let c = linear_combine(&[&a, &b], &[0.25, 0.75]).unwrap();
        assert_eq!(c.layers()[0].values(), &[2.5, 5.0]);
    }

    #[test]
    fn combine_errors() {
        assert!(matches!(linear_combine(&[], &[]), Err(Error::Empty(_))));
        let a = single(vec![1.0]);
        assert!(linear_combine(&[&a], &[1.0, 2.0]).is_err());
        let b = single(vec![1.0, 2.0]);
        assert!(matches!(
            linear_combine(&[&a, &b], &[0.5, 0.5]),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn schema_check_examples() {
        assert!(assert_schema_compatible(&[]).is_ok());
        let a = single(vec![1.0, 2.0]);
        let b = single(vec![5.0, 6.0]);
        assert!(assert_schema_compatible(&[&a, &b]).is_ok());

        let x = ParameterSet::new(vec![
            LayerParams::zeros("lstm1", vec![4, 8]).unwrap(),
            LayerParams::zeros("fc", vec![2]).unwrap(),
        ])
        .unwrap();
        let y = ParameterSet::new(vec![
            LayerParams::zeros("lstm1", vec![4, 9]).unwrap(),
            LayerParams::zeros("fc", vec![2]).unwrap(),
        ])
        .unwrap();
        let err = assert_schema_compatible(&[&x, &y]).unwrap_err().to_string();
        assert!(err.contains("lstm1"), "{err}");

        let z = ParameterSet::new(vec![LayerParams::zeros("lstm1", vec![4, 8]).unwrap()]).unwrap();
        let err = assert_schema_compatible(&[&x, &z]).unwrap_err().to_string();
        assert!(err.contains("fc"), "{err}");
    }

    #[test]
    fn ensure_finite_rejects_nan() {
        let s = single(vec![1.0, f64::NAN]);
        let err = s.ensure_finite().unwrap_err().to_string();
        assert!(err.contains("`w`"), "{err}");
        assert!(s.to_json().is_err());
    }

    #[test]
    fn json_layout_preserves_order() {
        let s = ParameterSet::new(vec![
            vec_layer("zeta", vec![1.0]),
            vec_layer("alpha", vec![2.0, 3.0]),
        ])
        .unwrap();
        let json: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(json["order"], serde_json::json!(["zeta", "alpha"]));
        assert_eq!(json["layers"]["alpha"]["shape"], serde_json::json!([2]));
        let back = ParameterSet::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back.layers()[0].name(), "zeta");
    }

    #[test]
    fn json_rejects_inconsistent_order() {
        let text = r#"{"order":["a","b"],"layers":{"a":{"shape":[1],"values":[1.0]}}}"#;
        assert!(ParameterSet::from_json(text).is_err());
    }

    fn arb_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1e3f64..1e3, len)
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in arb_vec(6), b in arb_vec(6), c in arb_vec(6)) {
            let (a, b, c) = (vec_layer("a", a), vec_layer("a", b), vec_layer("a", c));
            let ab = layer_l2_distance(&a, &b).unwrap();
            let ba = layer_l2_distance(&b, &a).unwrap();
            let bc = layer_l2_distance(&b, &c).unwrap();
            let ac = layer_l2_distance(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-9 * (1.0 + ab + bc));
        }

        #[test]
        fn convex_combination_of_copies_is_fixed(v in arb_vec(5), raw in proptest::collection::vec(0.01f64..1.0, 1..6)) {
            let total: f64 = raw.iter().sum();
            let coeffs: Vec<f64> = raw.iter().map(|c| c / total).collect();
            let s = single(v);
            let refs = vec![&s; coeffs.len()];
            let out = linear_combine(&refs, &coeffs).unwrap();
            for (x, y) in out.iter_values().zip(s.iter_values()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn json_round_trip_is_bit_identical(a in arb_vec(3), b in proptest::collection::vec(proptest::num::f64::NORMAL, 4)) {
            let s = ParameterSet::new(vec![
                vec_layer("fc.w", a),
                LayerParams::new("fc.b", vec![2, 2], b).unwrap(),
            ]).unwrap();
            let back = ParameterSet::from_json(&s.to_json().unwrap()).unwrap();
            prop_assert!(s.iter_values().zip(back.iter_values()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(s, back);
        }
    }
}
