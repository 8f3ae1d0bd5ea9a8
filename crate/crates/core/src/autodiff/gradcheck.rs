use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor on the denominator of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` receives a fresh tape and one `Var` per entry of `params` (in the
/// same order) and must return a scalar loss. It is called once for the
/// analytic pass and twice per parameter entry for the numeric pass, so it
/// must be deterministic.
pub fn grad_check<F>(params: &[(String, Matrix)], build: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!("finite-difference step must be > 0, got {h}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, m)| tape.param(m.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    check_finite(tape.value(loss)[(0, 0)], "loss at the unperturbed point")?;
    tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(&v, (_, m))| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
        })
        .collect();

    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss)[(0, 0)])
    };

    let mut values: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        entries_checked: 0,
    };
    for (p, (name, _)) in params.iter().enumerate() {
        check_finite_matrix(&analytic[p], name)?;
        for k in 0..values[p].len() {
            let orig = values[p].as_slice()[k];
            values[p].as_mut_slice()[k] = orig + h;
            let plus = eval(&values)?;
            values[p].as_mut_slice()[k] = orig - h;
            let minus = eval(&values)?;
            values[p].as_mut_slice()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::Numeric {
                    context: format!("finite difference for parameter `{name}` entry {k}"),
                });
            }
            let a = analytic[p].as_slice()[k];
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64, context: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            context: context.to_string(),
        })
    }
}

fn check_finite_matrix(m: &Matrix, name: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            context: format!("analytic gradient of parameter `{name}`"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_is_exact() {
        let params = vec![("w".to_string(), Matrix::scalar(0.7))];
        let report = grad_check(
            &params,
            |t, v| {
                let x = t.constant(Matrix::scalar(2.5));
                let y = t.matmul(v[0], x)?;
                let target = t.constant(Matrix::scalar(1.0));
                t.mse_loss(y, target)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
        assert_eq!(report.entries_checked, 1);
    }

    #[test]
    fn sigmoid_chain() {
        let params = vec![
            ("a".to_string(), Matrix::from_rows(&[[0.3, -1.2], [0.8, 0.1]])),
            ("b".to_string(), Matrix::from_rows(&[[1.1], [-0.4]])),
        ];
        let report = grad_check(
            &params,
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let s = t.sigmoid(h);
                let s2 = t.sigmoid(s);
                let p = t.hadamard(s2, s)?;
                Ok(t.sum(p))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let params = vec![("w".to_string(), Matrix::scalar(1.0))];
        let r = grad_check(&params, |t, v| Ok(t.sum(v[0])), 0.0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        // Loss is finite at 0 but its slope overflows.
        let params = vec![("blowup".to_string(), Matrix::scalar(0.0))];
        let r = grad_check(
            &params,
            |t, v| {
                let s = t.scale(v[0], f64::MAX);
                let s = t.scale(s, 10.0);
                Ok(t.sum(s))
            },
            1e-5,
        );
        match r {
            Err(Error::Numeric { context }) => assert!(context.contains("blowup"), "{context}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
