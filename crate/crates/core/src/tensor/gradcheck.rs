use super::{Result, Tape, Tensor, Var};

/// Gradients below this magnitude are compared absolutely rather than
/// relatively.
const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    /// Largest relative error over elements whose finite-difference
    /// estimate is stable.
    pub max_relative_error: f64,
    pub worst_element: usize,
    /// Stable elements whose error exceeds the tolerance.
    pub failures: usize,
    /// Elements where central differences at `step` and `step / 2` disagree,
    /// e.g. next to an epsilon floor. These are reported, not judged.
    pub reduced_accuracy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.failures == 0)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn has_reduced_accuracy(&self) -> bool {
        self.params.iter().any(|p| p.reduced_accuracy > 0)
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares analytic gradients of `f` against central differences.
///
/// `f` builds a scalar on the given tape from one variable per entry of
/// `params`. Errors from `f` propagate; gradient mismatches are carried in
/// the report.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let central = |work: &mut Vec<Tensor>, p: usize, e: usize, h: f64| -> Result<f64> {
        let orig = work[p].values()[e];
        work[p].values_mut()[e] = orig + h;
        let plus = evaluate(&f, work)?;
        work[p].values_mut()[e] = orig - h;
        let minus = evaluate(&f, work)?;
        work[p].values_mut()[e] = orig;
        Ok((plus - minus) / (2.0 * h))
    };

    let mut work = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("parameter gradient").to_vec();
        let mut check = ParamCheck {
            index: p,
            max_relative_error: 0.0,
            worst_element: 0,
            failures: 0,
            reduced_accuracy: 0,
        };
        for (e, &a) in analytic.iter().enumerate() {
            let numeric = central(&mut work, p, e, step)?;
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            if err < tol {
                if err > check.max_relative_error {
                    check.max_relative_error = err;
                    check.worst_element = e;
                }
                continue;
            }
            let half = central(&mut work, p, e, step / 2.0)?;
            let drift = (numeric - half).abs() / numeric.abs().max(half.abs()).max(RELATIVE_FLOOR);
            if drift >= tol {
                check.reduced_accuracy += 1;
                continue;
            }
            check.failures += 1;
            if err > check.max_relative_error {
                check.max_relative_error = err;
                check.worst_element = e;
            }
        }
        checks.push(check);
    }
    Ok(GradCheckReport {
        tolerance: tol,
        params: checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_gradient() {
        let p = Tensor::vector(vec![0.3, -0.7, 0.1]);
        let report = finite_difference_check(|t, v| t.sum(v[0]), &[p], 1e-5, 1e-8).unwrap();
        assert!(report.passed());
        assert!(report.max_relative_error() < 1e-8);
    }

    #[test]
    fn sigmoid_composition() {
        let p = Tensor::vector(vec![0.3, -0.7, 0.9]);
        let q = Tensor::vector(vec![-0.2, 0.5, 0.4]);
        let report = finite_difference_check(
            |t, v| {
                let m = t.mul(v[0], v[1])?;
                let s = t.sigmoid(m)?;
                let s2 = t.sigmoid(s)?;
                t.sum(s2)
            },
            &[p, q],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn sqrt_near_floor_is_flagged_not_failed() {
        let p = Tensor::vector(vec![1e-7]);
        let report = finite_difference_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                let r = t.sqrt_eps(sq)?;
                t.sum(r)
            },
            &[p],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.has_reduced_accuracy());
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // clamp hides gradient outside [lo, hi] while values still change via the sum.
        let p = Tensor::vector(vec![2.0]);
        let report = finite_difference_check(
            |t, v| {
                let c = t.clamp(v[0], -1.0, 1.0)?;
                let s = t.sum(c)?;
                let raw = t.sum(v[0])?;
                let detached = t.constant(t.value(raw).clone());
                t.add(s, detached)
            },
            &[p],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
    }
}
