//! Central finite-difference gradients, used to validate `backward`.

use super::{no_grad, DiffTensor, TensorError};

/// Central differences of the scalar `loss` with respect to every entry of
/// `param`. `loss` is re-evaluated with graph recording disabled.
pub fn numeric_grad<E>(
    param: &DiffTensor,
    step: f64,
    loss: impl Fn() -> Result<DiffTensor, E>,
) -> Result<Vec<f64>, E> {
    let mut out = Vec::with_capacity(param.numel());
    for i in 0..param.numel() {
        let orig = param.values()[i];
        param.update_values(|v| v[i] = orig + step);
        let plus = no_grad(&loss)?.item();
        param.update_values(|v| v[i] = orig - step);
        let minus = no_grad(&loss)?.item();
        param.update_values(|v| v[i] = orig);
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Gradients whose norms both fall below this are compared in absolute
/// terms. Some gradients vanish identically (attention key biases under
/// softmax shift invariance) and their finite differences are pure noise.
pub const NORM_FLOOR: f64 = 1e-8;

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    relative_error_floored(a, b, 0.0)
}

/// [`relative_error`] with the denominator bounded below by `floor`.
pub fn relative_error_floored(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Runs `loss` once with recording, backpropagates, and returns the worst
/// relative error between analytic and numeric gradients over `params`.
pub fn check<E: From<TensorError>>(
    params: &[DiffTensor],
    step: f64,
    loss: impl Fn() -> Result<DiffTensor, E>,
) -> Result<f64, E> {
    for p in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let mut worst: f64 = 0.0;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let numeric = numeric_grad(p, step, &loss)?;
        worst = worst.max(relative_error_floored(&analytic, &numeric, NORM_FLOOR));
    }
    Ok(worst)
}
