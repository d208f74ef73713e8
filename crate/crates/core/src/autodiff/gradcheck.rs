use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(param, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub passed: bool,
    /// Tape gradient of the first parameter.
    pub analytic: Tensor,
    /// Central-difference gradient of the first parameter (checked entries only;
    /// unchecked entries are 0).
    pub numeric: Tensor,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape gradient of a scalar `f` at `params` with central
/// differences of step `eps`.
pub fn grad_check<F>(f: F, params: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|t, vs| f(t, vs[0]), std::slice::from_ref(params), eps, tol, None)
}

/// Multi-parameter variant. With `max_entries = Some(k)` at most `k` entries
/// per parameter (a seeded subset) are perturbed.
pub fn grad_check_many<F>(
    f: F,
    params: &[Tensor],
    eps: f64,
    tol: f64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective = {v}")));
        }
        Ok(v)
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&tape, &vars)?;
    if !out.item().is_finite() {
        return Err(Error::NonFinite(format!("grad_check objective = {}", out.item())));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x6a7d);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst = (0, 0);
    let mut checked = 0;
    let mut numeric_first = Tensor::zeros(params[0].shape());
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let entries: Vec<usize> = match max_entries {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in entries {
            let orig = p.data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[i] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let num = (fp - fm) / (2.0 * eps);
            if pi == 0 {
                numeric_first.data_mut()[i] = num;
            }
            let e = rel_err(analytic[pi].data()[i], num);
            if e > max_rel_err {
                max_rel_err = e;
                worst = (pi, i);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        checked,
        passed: max_rel_err <= tol,
        analytic: analytic.into_iter().next().expect("at least one param"),
        numeric: numeric_first,
    })
}
