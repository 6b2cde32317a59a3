//! Conjugate-gradient least squares (CGLS) for `min_x |y - A x|^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CVector, C64};
use crate::operators::LinearOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CglsConfig {
    /// Stop when `|A^H (y - A x)| <= tol * |A^H y|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CglsConfig {
    fn default() -> Self {
        CglsConfig::mean_default()
    }
}

impl CglsConfig {
    /// Mean-image solve: tolerance 1e-3, at most 10 iterations.
    pub fn mean_default() -> Self {
        CglsConfig { tol: 1e-3, max_iter: 10 }
    }

    /// Fixed-count solve used for modeling-error correction (3 iterations).
    pub fn fixed(iters: usize) -> Self {
        CglsConfig { tol: 1e-36, max_iter: iters }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "CGLS needs tol >= 0 and max_iter >= 1 (got tol = {}, max_iter = {})",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CglsOutcome {
    pub x: CVector,
    pub iterations: usize,
    /// `|A^H (y - A x)| / |A^H y|` at exit (0 when `A^H y = 0`).
    pub rel_residual: f64,
    /// `|y - A x_t|` for t = 0..=iterations.
    pub residual_norms: Vec<f64>,
    /// Set when a search direction vanished in the range of `A`.
    pub breakdown: bool,
}

/// Run CGLS from `x0` (zero when `None`).
pub fn cgls_solve<A: LinearOperator + ?Sized>(
    op: &A,
    y: &CVector,
    cfg: &CglsConfig,
    x0: Option<&CVector>,
) -> Result<CglsOutcome> {
    cfg.validate()?;
    if y.len() != op.output_len() {
        return Err(Error::Dimension(format!(
            "CGLS: {} measurements for an operator with {} outputs",
            y.len(),
            op.output_len()
        )));
    }
    if !crate::numerics::all_finite(y.as_slice()) {
        return Err(Error::NonFinite("CGLS right-hand side"));
    }
    let n = op.input_len();
    let (mut x, mut r) = match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(Error::Dimension("CGLS warm start has the wrong length".into()));
            }
            (x0.clone(), y - op.forward(x0))
        }
        None => (CVector::zeros(n), y.clone()),
    };
    let mut s = op.backward(&r);
    let reference = match x0 {
        Some(_) => op.backward(y).norm(),
        None => s.norm(),
    };
    let mut gamma = s.norm_squared();
    let mut residual_norms = vec![r.norm()];
    let rel = |g: f64| if reference > 0.0 { g.sqrt() / reference } else { 0.0 };

    if reference == 0.0 || rel(gamma) <= cfg.tol {
        return Ok(CglsOutcome {
            x,
            iterations: 0,
            rel_residual: rel(gamma),
            residual_norms,
            breakdown: false,
        });
    }

    let mut p = s.clone();
    let mut iterations = 0;
    let mut breakdown = false;
    while iterations < cfg.max_iter {
        let qv = op.forward(&p);
        let delta = qv.norm_squared();
        if !(delta > 0.0) {
            breakdown = true;
            break;
        }
        let alpha = C64::new(gamma / delta, 0.0);
        x.axpy(alpha, &p, C64::new(1.0, 0.0));
        r.axpy(-alpha, &qv, C64::new(1.0, 0.0));
        s = op.backward(&r);
        let gamma_new = s.norm_squared();
        iterations += 1;
        residual_norms.push(r.norm());
        if rel(gamma_new) <= cfg.tol || gamma_new == 0.0 {
            gamma = gamma_new;
            break;
        }
        let beta = C64::new(gamma_new / gamma, 0.0);
        gamma = gamma_new;
        p = &s + p * beta;
    }
    Ok(CglsOutcome {
        x,
        iterations,
        rel_residual: rel(gamma),
        residual_norms,
        breakdown,
    })
}
