//! Central finite-difference gradient checking.

use crate::tensor::{Array, Graph, Var};
use crate::{CoreError, Result};

/// Relative-error floor in the denominator.
const DENOM_EPS: f64 = 1e-8;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// `build` must construct the same scalar expression from whatever parameter
/// values it is handed; it is invoked once for the analytic pass and twice
/// per parameter element for the numeric pass. Returns the maximum over all
/// parameter elements of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(params: &[Array], step: f64, build: F) -> Result<f64>
where
    F: Fn(&Graph, &[Var]) -> Var,
{
    if step <= 0.0 {
        return Err(CoreError::invalid("grad_check step must be positive"));
    }

    let eval = |arrays: &[Array]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = arrays.iter().map(|a| g.param(a.clone())).collect();
        let root = build(&g, &vars);
        let v = root.value();
        if v.numel() != 1 {
            return Err(CoreError::invalid(format!(
                "grad_check function must be scalar-valued, got shape {:?}",
                v.shape()
            )));
        }
        if !v.is_finite() {
            return Err(CoreError::non_finite("grad_check intermediate value"));
        }
        Ok(v.data()[0])
    };

    // Analytic gradients.
    let g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|a| g.param(a.clone())).collect();
    let root = build(&g, &vars);
    if root.value().numel() != 1 {
        return Err(CoreError::invalid("grad_check function must be scalar-valued"));
    }
    g.backward(&root)?;
    let analytic: Vec<Array> = vars.iter().map(|v| v.grad_or_zero()).collect();
    for a in &analytic {
        a.check_finite("grad_check analytic gradient")?;
    }

    // Numeric gradients, one element at a time.
    let mut max_rel = 0.0f64;
    let mut work: Vec<Array> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for e in 0..param.numel() {
            let orig = param.data()[e];
            work[pi].data_mut()[e] = orig + step;
            let fp = eval(&work)?;
            work[pi].data_mut()[e] = orig - step;
            let fm = eval(&work)?;
            work[pi].data_mut()[e] = orig;

            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[pi].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_EPS);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
