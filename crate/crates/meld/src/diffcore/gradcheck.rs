//! Finite-difference gradient checking.

use super::{DiffResult, Dtype, Tape, Tensor, TensorRef};

/// Result of comparing analytic gradients to central finite differences.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Worst relative error over all inputs and elements.
    pub max_rel_err: f64,
    /// (input index, element index, analytic, numeric) of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub elements_checked: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Compare analytic gradients of a scalar-valued tensor function against
/// central finite differences, element by element, in f64.
///
/// `f` receives a fresh tape and one ref per input and must return a scalar.
pub fn gradcheck<F>(f: F, inputs: &[Tensor]) -> DiffResult<GradcheckReport>
where
    F: Fn(&mut Tape, &[TensorRef]) -> DiffResult<TensorRef>,
{
    let eval = |points: &[Tensor]| -> DiffResult<f64> {
        let mut tape = Tape::new(Dtype::F64);
        let refs: Vec<TensorRef> = points.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&mut tape, &refs)?;
        Ok(tape.value_scalar(root))
    };

    // Analytic pass.
    let mut tape = Tape::new(Dtype::F64);
    let refs: Vec<TensorRef> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &refs)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = refs
        .iter()
        .map(|&r| grads.get_or_zeros(&tape, r))
        .collect();

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: None,
        elements_checked: 0,
    };
    let mut points: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.len() {
            let x = input.values[ei];
            let h = 1e-5 * x.abs().max(1.0);
            points[ti].values[ei] = x + h;
            let fp = eval(&points)?;
            points[ti].values[ei] = x - h;
            let fm = eval(&points)?;
            points[ti].values[ei] = x;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.elements_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sum_has_zero_error() {
        let report = gradcheck(
            |tape, refs| tape.sum(refs[0], None),
            &[Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.0])],
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert_eq!(report.elements_checked, 4);
    }

    #[test]
    fn layer_norm_then_sum_passes() {
        let report = gradcheck(
            |tape, refs| {
                let y = tape.layer_norm(refs[0], refs[1], refs[2], 1)?;
                let sq = tape.mul(y, y)?;
                tape.sum(sq, None)
            },
            &[
                Tensor::new(vec![2, 3], vec![0.3, -0.7, 1.2, 0.9, 0.1, -0.4]),
                Tensor::new(vec![3], vec![1.1, 0.9, 1.3]),
                Tensor::new(vec![3], vec![0.1, -0.2, 0.0]),
            ],
        )
        .unwrap();
        assert!(report.passes(1e-5), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn every_primitive_passes_gradcheck() {
        // A composite touching matmul, softmax paths, reductions, and the
        // shaped ops; per-primitive sweeps live in the acceptance suite.
        let report = gradcheck(
            |tape, refs| {
                let prod = tape.matmul(refs[0], refs[1])?;
                let sm = tape.softmax(prod, 1)?;
                let lsm = tape.log_softmax(prod, 0)?;
                let mixed = tape.mul(sm, lsm)?;
                let e = tape.exp(refs[2])?;
                let l = tape.log(e)?;
                let sp = tape.softplus(l)?;
                let si = tape.silu(sp)?;
                let summed = tape.sum(mixed, None)?;
                let m = tape.mean(si, None)?;
                tape.add(summed, m)
            },
            &[
                Tensor::new(vec![2, 3], vec![0.5, -0.3, 0.8, 0.2, 0.9, -0.6]),
                Tensor::new(vec![3, 2], vec![0.4, 0.7, -0.5, 0.3, 0.1, -0.2]),
                Tensor::new(vec![4], vec![0.5, 1.5, -0.5, 0.25]),
            ],
        )
        .unwrap();
        assert!(report.passes(1e-5), "max rel err {}", report.max_rel_err);
    }
}
