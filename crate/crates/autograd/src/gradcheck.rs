use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Lower bound on the relative-error denominator, so gradients that are
/// exactly zero are compared in absolute terms.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` receives a fresh graph and one tracked leaf per input, and must return
/// a scalar. Relative error per element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, GRADCHECK_ABS_FLOOR)`.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut work = inputs.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for (ti, grads) in analytic.iter().enumerate() {
        for j in 0..inputs[ti].numel() {
            let orig = inputs[ti].data()[j];
            work[ti].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grads[j];
            let denom = a.abs().max(numeric.abs()).max(GRADCHECK_ABS_FLOOR);
            let rel = (a - numeric).abs() / denom;
            checked += 1;
            if rel > max_rel_error || rel.is_nan() {
                max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = Some((ti, j));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        checked,
        tol,
        passed: max_rel_error < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_zero_error() {
        let x = Tensor::from_vec(vec![2, 3], vec![0.1, -0.4, 2.0, 3.3, -1.0, 0.0]).unwrap();
        let r = finite_diff_check(|g, v| Ok(g.sum(v[0])), &[x], 1e-5, 1e-4).unwrap();
        assert!(r.passed && r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 6);
    }

    #[test]
    fn gelu_at_zero_passes() {
        let x = Tensor::zeros(&[5]);
        let r = finite_diff_check(
            |g, v| {
                let y = g.gelu(v[0]);
                Ok(g.sum(y))
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        // Forward is x³ but the declared derivative is 2x.
        let x = Tensor::from_vec(vec![3], vec![0.5, 1.0, -2.0]).unwrap();
        let r = finite_diff_check(
            |g, v| {
                let y = g.map(v[0], |x| x * x * x, |x| 2.0 * x);
                Ok(g.sum(y))
            },
            &[x.clone()],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed, "{r:?}");

        let ok = finite_diff_check(
            |g, v| {
                let y = g.map(v[0], |x| x * x * x, |x| 3.0 * x * x);
                Ok(g.sum(y))
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(ok.passed, "{ok:?}");
    }
}
