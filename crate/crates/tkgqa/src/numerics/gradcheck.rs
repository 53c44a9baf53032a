//! Central finite-difference gradient checking.

use super::{Result, Tape, Tensor};

/// Shape and initial values for one checked parameter.
#[derive(Clone)]
pub struct ParamSpec {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamSpec {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self { shape, values }
    }
}

/// Compare analytic gradients of a scalar function against central finite
/// differences with the given step.
///
/// Returns the max over parameter entries of
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[ParamSpec], step: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let eval = |values: &[Vec<f64>], requires_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let tape = Tape::new();
        let tensors: Vec<Tensor> = params
            .iter()
            .zip(values)
            .map(|(spec, v)| tape.leaf(&spec.shape, v.clone(), requires_grad))
            .collect::<Result<_>>()?;
        let loss = f(&tape, &tensors)?;
        let value = loss.item();
        let grads = if requires_grad {
            loss.backward()?;
            tensors
                .iter()
                .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let base: Vec<Vec<f64>> = params.iter().map(|p| p.values.clone()).collect();
    let (_, analytic) = eval(&base, true)?;

    let mut max_err = 0.0f64;
    for (pi, spec) in params.iter().enumerate() {
        for i in 0..spec.values.len() {
            let mut plus = base.clone();
            plus[pi][i] += step;
            let mut minus = base.clone();
            minus[pi][i] -= step;
            let (fp, _) = eval(&plus, false)?;
            let (fm, _) = eval(&minus, false)?;
            let numeric = (fp - fm) / (2.0 * step);
            let err = (analytic[pi][i] - numeric).abs() / numeric.abs().max(1e-8);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
