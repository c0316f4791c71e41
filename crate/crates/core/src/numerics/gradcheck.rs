use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `|analytic − numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Numeric(format!(
            "finite-difference step must be positive and finite, got {h}"
        )));
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("non-finite {what}: {v}")))
    }
}

/// Compares the tape gradient of a scalar function of `x` against central
/// differences and returns the maximum relative error over coordinates.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    check_step(h)?;
    let mut g = Graph::new();
    let xv = g.leaf(x.clone().with_requires_grad());
    let loss = f(&mut g, xv)?;
    finite(g.scalar(loss), "loss")?;
    g.backward(loss)?;
    let analytic = g
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut eval = |probe: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(probe);
        let l = f(&mut g, v)?;
        finite(g.scalar(l), "loss")
    };
    let mut worst = 0.0f64;
    for (j, &a) in analytic.iter().enumerate() {
        finite(a, "analytic gradient")?;
        let mut plus = x.clone();
        plus.data_mut()[j] += h;
        let mut minus = x.clone();
        minus.data_mut()[j] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// Summary of a parameter-space gradient check.
#[derive(Clone, Debug)]
pub struct ParamCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Central-difference check of `loss(store)` over every coordinate of every
/// trainable parameter. `build` must be a deterministic function of the store.
pub fn param_gradcheck<F>(store: &ParamStore, mut build: F, h: f64) -> Result<ParamCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    check_step(h)?;
    let mut work = store.clone();
    work.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, &work)?;
    finite(g.scalar(loss), "loss")?;
    g.backward_into(loss, &mut work)?;
    let analytic: Vec<Vec<f64>> = work
        .iter()
        .map(|(_, _, t)| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, s)?;
        finite(g.scalar(l), "loss")
    };
    let mut report = ParamCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = work.ids().collect();
    for id in ids {
        if !work.get(id).requires_grad() {
            continue;
        }
        for j in 0..work.get(id).numel() {
            let a = finite(analytic[id.index()][j], "analytic gradient")?;
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let err = relative_error(a, (up - down) / (2.0 * h));
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                if err >= report.max_relative_error {
                    report.worst = Some((work.name(id).to_string(), j));
                }
            }
        }
    }
    Ok(report)
}
