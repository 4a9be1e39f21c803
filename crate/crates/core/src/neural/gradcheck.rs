use super::Mlp;
use crate::error::Result;

const STEP: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|)`, with a floor so that two near-zero values
/// compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Central differences with step 1e-4 over every parameter.
pub fn numeric_gradient(net: &Mlp, loss: impl Fn(&Mlp) -> Result<f64>) -> Result<Vec<f64>> {
    let base = net.flat();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut values = base.clone();
    for i in 0..base.len() {
        values[i] = base[i] + STEP;
        probe.set_flat(&values)?;
        let plus = loss(&probe)?;
        values[i] = base[i] - STEP;
        probe.set_flat(&values)?;
        let minus = loss(&probe)?;
        values[i] = base[i];
        out.push((plus - minus) / (2.0 * STEP));
    }
    Ok(out)
}

/// Largest relative error between the analytic gradient returned by
/// `loss_and_grad` and central finite differences.
pub fn gradient_check(net: &Mlp, loss_and_grad: impl Fn(&Mlp) -> Result<(f64, Mlp)>) -> Result<f64> {
    let (_, analytic) = loss_and_grad(net)?;
    let numeric = numeric_gradient(net, |n| Ok(loss_and_grad(n)?.0))?;
    Ok(analytic
        .flat()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
