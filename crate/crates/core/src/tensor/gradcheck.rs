//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Result, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of `|analytic − numeric| / max(1, |numeric|)`
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate
    pub worst: (usize, usize),
    pub coordinates_checked: usize,
}

/// Checks `d f / d x` for a scalar function of one tensor, over every coordinate.
pub fn finite_difference_check<F>(f: F, x: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = check_gradients(|g, vars| f(g, vars[0]), std::slice::from_ref(x), epsilon, None)?;
    Ok(report.max_rel_error)
}

/// Checks the gradient of a scalar function of several tensors.
///
/// With `sample_per_input = Some((k, seed))`, at most `k` coordinates per input are
/// checked, chosen uniformly without replacement; otherwise all of them.
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor],
    epsilon: f64,
    sample_per_input: Option<(usize, u64)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::InvalidEpsilon(epsilon));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out)
            .item()
            .ok_or_else(|| TensorError::NonScalarLoss(g.shape(out).to_vec()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().expect("leaf requires grad"))
        .collect();
    drop(g);

    let mut rng = sample_per_input.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates_checked: 0,
    };
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match (sample_per_input, rng.as_mut()) {
            (Some((k, _)), Some(rng)) if k < input.len() => sample(rng, input.len(), k).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let orig = input.values()[c];
            work[i].values_mut()[c] = orig + epsilon;
            let plus = eval(&work)?;
            work[i].values_mut()[c] = orig - epsilon;
            let minus = eval(&work)?;
            work[i].values_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = (analytic[i].values()[c] - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (i, c);
            }
        }
    }
    Ok(report)
}
