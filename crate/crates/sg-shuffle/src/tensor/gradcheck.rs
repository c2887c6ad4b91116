use super::{Result, Tape, Tensor, TensorError, Var};

/// Default central-difference step.
pub fn grad_check_default_eps() -> f64 {
    1e-5
}

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per probed tensor, in input order.
    pub per_param: Vec<f64>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `f` rebuilds the computation from scratch on every probe: it receives a
/// fresh tape plus leaves holding (possibly perturbed) copies of `params`
/// and must return a scalar. The relative error per coordinate is
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |probe: &[Tensor], with_grad: bool| -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe
            .iter()
            .map(|t| {
                if with_grad {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).numel() != 1 {
            return Err(TensorError::ShapeMismatch(
                "grad_check requires a scalar-valued function".into(),
            ));
        }
        let value = tape.value(out).data()[0];
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check probe" });
        }
        let grads = if with_grad {
            tape.backward(out)?;
            Some(
                vars.iter()
                    .map(|v| match tape.grad(*v) {
                        Some(g) => g.to_vec(),
                        None => vec![0.0; tape.value(*v).numel()],
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok((value, grads))
    };

    let (_, grads) = eval(params, true)?;
    let analytic = grads.expect("gradients requested");

    let mut per_param = Vec::with_capacity(params.len());
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let mut param_worst = 0.0f64;
        for ci in 0..param.numel() {
            let original = param.data()[ci];
            probe[pi].data_mut()[ci] = original + eps;
            let (plus, _) = eval(&probe, false)?;
            probe[pi].data_mut()[ci] = original - eps;
            let (minus, _) = eval(&probe, false)?;
            probe[pi].data_mut()[ci] = original;
            let fd = (plus - minus) / (2.0 * eps);
            let ad = analytic[pi][ci];
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            param_worst = param_worst.max(rel);
        }
        per_param.push(param_worst);
        worst = worst.max(param_worst);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_err: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        // f(x) = sum(x^2) at x = [1, 2]: grad [2, 4].
        let x = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let report = grad_check(
            |tape, vars| {
                let sq = tape.mul(vars[0], vars[0])?;
                tape.sum(sq)
            },
            &[x.clone()],
            grad_check_default_eps(),
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-8, "rel err {}", report.max_rel_err);

        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let sq = tape.mul(v, v).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        let mut rng = crate::testutil::rng(7);
        let a = crate::testutil::random_tensor(&mut rng, &[5, 4]);
        let b = crate::testutil::random_tensor(&mut rng, &[4, 3]);
        let report = grad_check(
            |tape, vars| {
                let c = tape.matmul(vars[0], vars[1])?;
                tape.sum(c)
            },
            &[a, b],
            grad_check_default_eps(),
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = crate::testutil::rng(11);
        let x = crate::testutil::random_tensor(&mut rng, &[3, 8]);
        let gain = crate::testutil::random_tensor(&mut rng, &[8]);
        let bias = crate::testutil::random_tensor(&mut rng, &[8]);
        let report = grad_check(
            |tape, vars| {
                let y = tape.layer_norm(vars[0], vars[1], vars[2], 1e-5)?;
                let sq = tape.mul(y, y)?;
                tape.sum(sq)
            },
            &[x, gain, bias],
            grad_check_default_eps(),
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn softmax_and_ce_backward_match_finite_differences() {
        let mut rng = crate::testutil::rng(13);
        let logits = crate::testutil::random_tensor(&mut rng, &[5, 4]);
        let weights = [0.5, 1.5, 2.0, 1.0];
        let targets = [0, 3, 1, 2, 2];
        let report = grad_check(
            |tape, vars| tape.weighted_cross_entropy(vars[0], &targets, &weights),
            &[logits.clone()],
            grad_check_default_eps(),
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-7, "rel err {}", report.max_rel_err);

        let report = grad_check(
            |tape, vars| {
                let s = tape.softmax(vars[0], 1)?;
                let sq = tape.mul(s, s)?;
                tape.sum(sq)
            },
            &[logits],
            grad_check_default_eps(),
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
    }
}
