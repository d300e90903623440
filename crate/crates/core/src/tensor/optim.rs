use super::{Graph, Result, Tensor, TensorError, Var};

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.tensors[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a gradient-requiring leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.leaf(t.clone(), true)).collect()
    }
}

/// One gradient slot per parameter, in [`ParamSet`] order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(pub Vec<Option<Tensor>>);

impl Gradients {
    /// Reads the gradients of `vars` after `graph.backward`.
    pub fn collect(graph: &Graph, vars: &[Var]) -> Self {
        Self(vars.iter().map(|&v| graph.grad(v).cloned()).collect())
    }
}

/// Momentum SGD state: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            learning_rate,
            momentum,
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

pub fn sgd_momentum_step(params: &mut ParamSet, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.0.len() != params.len() || state.velocity.len() != params.len() {
        return Err(TensorError::Invalid(format!(
            "optimizer expected {} gradients/velocities, got {}/{}",
            params.len(),
            grads.0.len(),
            state.velocity.len()
        )));
    }
    // validate everything before mutating anything
    for (i, g) in grads.0.iter().enumerate() {
        let g = g
            .as_ref()
            .ok_or_else(|| TensorError::MissingGradient(params.names[i].clone()))?;
        if g.shape() != params.tensors[i].shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sgd_momentum_step",
                dim: format!("gradient of `{}`", params.names[i]),
                expected: params.tensors[i].len(),
                found: g.len(),
            });
        }
    }
    let (mu, lr) = (state.momentum, state.learning_rate);
    for ((p, v), g) in params.tensors.iter_mut().zip(&mut state.velocity).zip(&grads.0) {
        let g = g.as_ref().expect("validated above");
        for ((p, v), g) in p.values_mut().iter_mut().zip(v.values_mut()).zip(g.values()) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}
