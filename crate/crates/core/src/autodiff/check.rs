use super::{AutodiffError, Tape, Tensor, Var};

/// `|a - b| / max(1e-12, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-12)
}

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences at `point`, returning the worst relative error over all
/// coordinates.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, h: f64) -> Result<f64, AutodiffError>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, Var) -> Result<Var, AutodiffError>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(AutodiffError::InvalidStep(h));
    }
    let analytic = {
        let mut tape = Tape::with_finite_checks(true);
        let x = tape.leaf(point.clone());
        let y = f(&mut tape, x)?;
        let mut grads = tape.backward(y)?;
        grads.take_or_zeros(x, point.shape())
    };
    let eval = |p: Tensor<f64>| -> Result<f64, AutodiffError> {
        let mut tape = Tape::with_finite_checks(true);
        let x = tape.leaf(p);
        let y = f(&mut tape, x)?;
        let v = tape.value(y);
        if v.numel() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    };
    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], fd));
    }
    Ok(worst)
}
