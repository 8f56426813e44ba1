use std::collections::BTreeMap;
use std::path::Path;

use super::{container, Graph, Tensor, Var};
use crate::error::{Error, Result};

const MOMENT1_PREFIX: &str = "adam/m/";
const MOMENT2_PREFIX: &str = "adam/v/";
const STEP_PREFIX: &str = "adam/t/";

/// A learnable tensor plus its Adam slots.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    step: u64,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let n = value.len();
        ParamEntry {
            value,
            grad: None,
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
            step: 0,
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.moment1, &self.moment2)
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Named learnable parameters, kept in sorted path order.
#[derive(Clone, Debug, Default)]
pub struct Parameters {
    entries: BTreeMap<String, ParamEntry>,
}

/// Graph handles for every parameter bound into one forward pass.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Binds paths to existing graph nodes, e.g. leaves built by a gradient check.
    pub fn from_vars<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Var)>,
        S: Into<String>,
    {
        BoundParams {
            vars: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))
    }
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter path `{path}`"
            )));
        }
        self.entries.insert(path, ParamEntry::new(value));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.entries
            .get(path)
            .map(|e| &e.value)
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(path)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))
    }

    pub fn entry(&self, path: &str) -> Option<&ParamEntry> {
        self.entries.get(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Copies every parameter into `graph` as a gradient-requiring leaf.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        self.bind_with(graph, true)
    }

    /// Like [`bind`](Self::bind) but as constants, for inference.
    pub fn bind_frozen(&self, graph: &mut Graph) -> BoundParams {
        self.bind_with(graph, false)
    }

    fn bind_with(&self, graph: &mut Graph, requires_grad: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), graph.leaf(e.value.clone(), requires_grad)))
            .collect();
        BoundParams { vars }
    }

    /// Adds the graph's gradients into each parameter's grad slot. Parameters
    /// the loss does not depend on receive a zero gradient.
    pub fn accumulate_grads(&mut self, graph: &Graph, bound: &BoundParams) {
        for (path, var) in &bound.vars {
            let Some(entry) = self.entries.get_mut(path) else {
                continue;
            };
            let slot = entry
                .grad
                .get_or_insert_with(|| vec![0.0; entry.value.len()]);
            if let Some(g) = graph.grad(*var) {
                for (s, x) in slot.iter_mut().zip(g) {
                    *s += x;
                }
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = None;
        }
    }

    pub fn set_grad(&mut self, path: &str, grad: Vec<f64>) -> Result<()> {
        let e = self
            .entries
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))?;
        if grad.len() != e.value.len() {
            return Err(Error::Shape {
                op: "set_grad",
                lhs: e.value.shape().to_vec(),
                rhs: vec![grad.len()],
            });
        }
        e.grad = Some(grad);
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter_map(|e| e.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Values plus, optionally, optimizer slots as container records.
    pub fn to_records(&self, with_optimizer: bool) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (path, e) in &self.entries {
            out.insert(path.clone(), e.value.clone());
            if with_optimizer {
                let shape = e.value.shape().to_vec();
                out.insert(
                    format!("{MOMENT1_PREFIX}{path}"),
                    Tensor::new(shape.clone(), e.moment1.clone()).expect("slot shape matches"),
                );
                out.insert(
                    format!("{MOMENT2_PREFIX}{path}"),
                    Tensor::new(shape, e.moment2.clone()).expect("slot shape matches"),
                );
                out.insert(
                    format!("{STEP_PREFIX}{path}"),
                    Tensor::scalar(e.step as f64),
                );
            }
        }
        out
    }

    pub fn from_records(mut records: BTreeMap<String, Tensor>) -> Result<Self> {
        let slot_paths: Vec<String> = records
            .keys()
            .filter(|k| k.starts_with("adam/"))
            .cloned()
            .collect();
        let mut slots: BTreeMap<String, Tensor> = BTreeMap::new();
        for k in slot_paths {
            let t = records.remove(&k).expect("key listed above");
            slots.insert(k, t);
        }
        let mut params = Parameters::new();
        for (path, value) in records {
            let mut entry = ParamEntry::new(value);
            if let Some(m) = slots.remove(&format!("{MOMENT1_PREFIX}{path}")) {
                check_slot(&path, &entry.value, &m)?;
                entry.moment1 = m.into_data();
            }
            if let Some(v) = slots.remove(&format!("{MOMENT2_PREFIX}{path}")) {
                check_slot(&path, &entry.value, &v)?;
                entry.moment2 = v.into_data();
            }
            if let Some(t) = slots.remove(&format!("{STEP_PREFIX}{path}")) {
                entry.step = t.data().first().copied().unwrap_or(0.0) as u64;
            }
            params.entries.insert(path, entry);
        }
        if let Some(orphan) = slots.keys().next() {
            return Err(Error::Format(format!(
                "optimizer slot `{orphan}` has no parameter"
            )));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path, with_optimizer: bool) -> Result<()> {
        container::write_file(path, &self.to_records(with_optimizer))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(container::read_file(path)?)
    }
}

fn check_slot(path: &str, value: &Tensor, slot: &Tensor) -> Result<()> {
    if slot.shape() != value.shape() {
        return Err(Error::Format(format!(
            "optimizer slot for `{path}` has shape {:?}, parameter has {:?}",
            slot.shape(),
            value.shape()
        )));
    }
    Ok(())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut Parameters, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for e in params.entries.values_mut() {
            if let Some(g) = &mut e.grad {
                g.iter_mut().for_each(|x| *x *= scale);
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Self::default()
        }
    }

    /// One bias-corrected Adam update of every parameter; clears the grads.
    pub fn step(&self, params: &mut Parameters) -> Result<()> {
        if let Some((path, _)) = params.entries.iter().find(|(_, e)| e.grad.is_none()) {
            return Err(Error::MissingGrad(path.clone()));
        }
        for e in params.entries.values_mut() {
            let grad = e.grad.take().expect("checked above");
            e.step += 1;
            let t = e.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let value = e.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                e.moment1[i] = self.beta1 * e.moment1[i] + (1.0 - self.beta1) * g;
                e.moment2[i] = self.beta2 * e.moment2[i] + (1.0 - self.beta2) * g * g;
                let m_hat = e.moment1[i] / c1;
                let v_hat = e.moment2[i] / c2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
