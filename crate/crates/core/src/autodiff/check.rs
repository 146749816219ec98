use super::{Graph, Real, Tensor, Var};
use crate::error::Result;

pub const FD_EPSILON: Real = 1e-5;

/// Magnitude below which gradients are compared absolutely.
const REL_FLOOR: Real = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-5)`
pub fn relative_error(analytic: Real, numeric: Real) -> Real {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference `(f(+eps) - f(-eps)) / 2eps`, where `f(delta)` evaluates
/// the loss with the probed scalar shifted by `delta`.
pub fn finite_difference(mut f: impl FnMut(Real) -> Result<Real>) -> Result<Real> {
    let up = f(FD_EPSILON)?;
    let down = f(-FD_EPSILON)?;
    Ok((up - down) / (2.0 * FD_EPSILON))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: Real,
    pub probes: usize,
}

impl GradCheck {
    /// Compares the analytic gradient of `build` with respect to every
    /// element of every input against central differences.
    pub fn inputs(
        inputs: &[Tensor],
        build: impl Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
    ) -> Result<Self> {
        let eval = |xs: &[Tensor]| -> Result<Real> {
            let mut g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
            let out = build(&mut g, &vars)?;
            Ok(g.scalar(out))
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let grads = g.backward(out)?;
        let mut report = GradCheck {
            max_rel_error: 0.0,
            probes: 0,
        };
        let mut work = inputs.to_vec();
        for (n, v) in vars.iter().enumerate() {
            let zeros = vec![0.0; inputs[n].len()];
            let analytic = grads.wrt(*v).unwrap_or(&zeros).to_vec();
            for i in 0..inputs[n].len() {
                let base = inputs[n].data()[i];
                let numeric = finite_difference(|d| {
                    work[n].data_mut()[i] = base + d;
                    eval(&work)
                })?;
                work[n].data_mut()[i] = base;
                report.max_rel_error = report
                    .max_rel_error
                    .max(relative_error(analytic[i], numeric));
                report.probes += 1;
            }
        }
        Ok(report)
    }
}
