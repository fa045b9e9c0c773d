//! Analytic gradients against central finite differences.

use ndarray::Array2;

use crate::graph::{Graph, Var};
use crate::params::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    /// Finite-difference step.
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel: 1e-4,
            abs: 1e-6,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        (analytic - numeric).abs() <= self.abs.max(self.rel * analytic.abs().max(numeric.abs()))
    }
}

/// First entry whose analytic and numeric gradients disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    /// Input index or parameter name.
    pub input: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}[{},{}]: analytic {} numeric {}",
            self.input, self.row, self.col, self.analytic, self.numeric
        )
    }
}

/// Fixed target pattern in [-1, 1] so checks need no random source.
fn target(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| ((i * 7 + j * 13) % 11) as f64 / 5.0 - 1.0)
}

pub type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

fn op_loss(inputs: &[Array2<f64>], y: &Array2<f64>, build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.constant(a.clone())).collect();
    let out = build(&mut g, &vars);
    let l = g.mse(out, y.clone()).expect("target matches output shape");
    g.value(l)[[0, 0]]
}

/// Checks d mse(build(inputs), target) / d inputs entry by entry. Returns the
/// number of entries checked.
pub fn check_op(inputs: &[Array2<f64>], build: &Build, tol: Tolerance) -> Result<usize, Mismatch> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.variable(a.clone())).collect();
    let out = build(&mut g, &vars);
    let [r, c] = g.shape(out);
    let y = target(r, c);
    let l = g.mse(out, y.clone()).expect("target matches output shape");
    g.backward(l).expect("scalar loss");

    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Array2::zeros(inputs[k].dim()));
        for ((i, j), &a) in analytic.indexed_iter() {
            let orig = inputs[k][[i, j]];
            probe[k][[i, j]] = orig + tol.step;
            let lp = op_loss(&probe, &y, build);
            probe[k][[i, j]] = orig - tol.step;
            let lm = op_loss(&probe, &y, build);
            probe[k][[i, j]] = orig;
            let numeric = (lp - lm) / (2.0 * tol.step);
            if !tol.accepts(a, numeric) {
                return Err(Mismatch {
                    input: format!("input {k}"),
                    row: i,
                    col: j,
                    analytic: a,
                    numeric,
                });
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Checks the trainable parameters of `store`. `analytic` is indexed by
/// parameter id (missing entries mean zero gradient); `loss` evaluates the
/// same scalar loss for a perturbed store.
pub fn check_params(
    store: &ParamStore,
    analytic: &[Option<Array2<f64>>],
    loss: impl Fn(&ParamStore) -> f64,
    tol: Tolerance,
) -> Result<usize, Mismatch> {
    let mut probe = store.clone();
    let mut checked = 0;
    for (id, entry) in store.iter() {
        if entry.kind != ParamKind::Trainable {
            continue;
        }
        let value = store.get(id);
        for ((i, j), &orig) in value.indexed_iter() {
            let a = analytic
                .get(id.index())
                .and_then(|g| g.as_ref())
                .map_or(0.0, |g| g[[i, j]]);
            probe.get_mut(id)[[i, j]] = orig + tol.step;
            let lp = loss(&probe);
            probe.get_mut(id)[[i, j]] = orig - tol.step;
            let lm = loss(&probe);
            probe.get_mut(id)[[i, j]] = orig;
            let numeric = (lp - lm) / (2.0 * tol.step);
            if !tol.accepts(a, numeric) {
                return Err(Mismatch {
                    input: entry.name.clone(),
                    row: i,
                    col: j,
                    analytic: a,
                    numeric,
                });
            }
            checked += 1;
        }
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        let x = ndarray::array![[0.5, -0.3], [1.2, 0.7]];
        let ok = check_op(
            std::slice::from_ref(&x),
            &|g, v| g.scale(v[0], 2.0),
            Tolerance::default(),
        );
        assert_eq!(ok, Ok(4));

        let mut store = ParamStore::new();
        let w = store.add_param("w", x).unwrap();
        // d sum / dw is all ones, not zero
        let wrong = vec![Some(Array2::zeros((2, 2)))];
        let err = check_params(&store, &wrong, |s| s.get(w).sum(), Tolerance::default()).unwrap_err();
        assert_eq!((err.row, err.col), (0, 0));
        assert!((err.numeric - 1.0).abs() < 1e-8);
    }
}
