use super::{AutodiffError, Tape, Tensor, Var};

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Gradients of the scalar `f(inputs)` with respect to every input, by one
/// reverse sweep.
pub fn analytic_gradients<G>(f: &G, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>, AutodiffError>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect())
}

fn evaluate<G>(f: &G, inputs: &[Tensor<f64>]) -> Result<f64, AutodiffError>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(AutodiffError::NotScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares supplied analytic gradients against central differences with
/// step `eps`; returns the max relative error per input.
pub fn compare_gradients<G>(
    f: &G,
    inputs: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    eps: f64,
) -> Result<Vec<f64>, AutodiffError>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (t, grad) in analytic.iter().enumerate() {
        let mut worst = 0f64;
        for k in 0..inputs[t].numel() {
            let orig = inputs[t].data()[k];
            work[t].data_mut()[k] = orig + eps;
            let plus = evaluate(f, &work)?;
            work[t].data_mut()[k] = orig - eps;
            let minus = evaluate(f, &work)?;
            work[t].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad[k], numeric));
        }
        errors.push(worst);
    }
    Ok(errors)
}

/// Max relative error per input of the reverse-mode gradient of `f`.
pub fn grad_check_many<G>(f: G, inputs: &[Tensor<f64>], eps: f64) -> Result<Vec<f64>, AutodiffError>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let analytic = analytic_gradients(&f, inputs)?;
    compare_gradients(&f, inputs, &analytic, eps)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<G>(f: G, x: &Tensor<f64>, eps: f64) -> Result<f64, AutodiffError>
where
    G: Fn(&mut Tape<f64>, Var) -> Result<Var, AutodiffError>,
{
    let errs = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)?;
    Ok(errs[0])
}
