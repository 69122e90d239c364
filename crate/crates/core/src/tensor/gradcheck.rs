//! Finite-difference gradient checking.
//!
//! The oracle evaluates the forward path twice per element (central
//! differences) and never touches the backward implementation it verifies.
//! Run it at `f64` for 64-bit accumulation.

use super::{Graph, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;

/// Elementwise relative deviation between autodiff and central differences:
/// `|ad - fd| / (|fd| + 1e-8)`.
pub struct GradCheckReport {
    pub max_rel: f64,
    pub checked: usize,
}

/// Checks `d f(inputs) / d inputs` against central finite differences with
/// step `h`, failing if any element deviates more than `tol` relative.
pub fn check_gradients<T, F>(f: F, inputs: &[Tensor<T>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Tensor<T>]) -> Result<Tensor<T>>,
{
    for t in inputs {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    let mut graph = Graph::recording();
    let loss = f(&mut graph, inputs)?;
    graph.backward(&loss)?;
    let autodiff: Vec<Vec<T>> =
        inputs.iter().map(|t| t.grad().expect("leaf gradient populated")).collect();

    let eval = |inputs: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::inference();
        Ok(f(&mut g, inputs)?.item().to_f64_lossy())
    };

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let orig = t.data()[e];
            t.data_mut()[e] = orig + T::cast(h);
            let fp = eval(inputs)?;
            t.data_mut()[e] = orig - T::cast(h);
            let fm = eval(inputs)?;
            t.data_mut()[e] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let ad = autodiff[ti][e].to_f64_lossy();
            let rel = (ad - fd).abs() / (fd.abs() + 1e-8);
            max_rel = max_rel.max(rel);
            checked += 1;
            if rel > tol {
                return Err(crate::error::Error::Metric(format!(
                    "gradient check failed: input {ti} element {e}: autodiff {ad} vs finite-diff {fd} (rel {rel:.3e} > {tol:.1e})"
                )));
            }
        }
    }
    Ok(GradCheckReport { max_rel, checked })
}
