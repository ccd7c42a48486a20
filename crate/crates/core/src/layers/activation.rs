use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::scalar::Scalar;

fn check_same<T: Scalar>(a: &Grid4<T>, b: &Grid4<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Exponential linear unit with `alpha = 1`.
pub fn elu<T: Scalar>(x: &Grid4<T>) -> Grid4<T> {
    x.map(|v| if v > T::zero() { v } else { v.exp_m1() })
}

/// Gradient of [`elu`] given the forward input.
pub fn elu_backward<T: Scalar>(input: &Grid4<T>, grad_out: &Grid4<T>) -> Result<Grid4<T>> {
    check_same(input, grad_out, "elu backward")?;
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *gv *= x.exp();
        }
    }
    Ok(g)
}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Scalar>(x: &Grid4<T>) -> Grid4<T> {
    x.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Gradient of [`sigmoid`] given the forward output `s`: `g * s * (1 - s)`.
pub fn sigmoid_backward<T: Scalar>(output: &Grid4<T>, grad_out: &Grid4<T>) -> Result<Grid4<T>> {
    check_same(output, grad_out, "sigmoid backward")?;
    let mut g = grad_out.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv *= s * (T::one() - s);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(vals: &[f64]) -> Grid4<f64> {
        Grid4::from_vec((1, 1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    #[test]
    fn elu_values() {
        let y = elu(&g(&[0.0, 1.0, -1.0]));
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 1.0);
        assert!((y.data()[2] - (-1.0f64).exp_m1()).abs() < 1e-15);
        assert!((y.data()[2] + 0.6321).abs() < 1e-4);
    }

    #[test]
    fn elu_gradient_matches_finite_differences() {
        let xs = [-2.0, -0.5, 0.5, 2.0];
        let analytic = elu_backward(&g(&xs), &g(&[1.0; 4])).unwrap();
        let h = 1e-6;
        for (i, &x) in xs.iter().enumerate() {
            let fd = (elu(&g(&[x + h])).data()[0] - elu(&g(&[x - h])).data()[0]) / (2.0 * h);
            assert!((analytic.data()[i] - fd).abs() < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        let s = sigmoid(&g(&[0.0, 40.0, -40.0, 800.0, -800.0]));
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] - 1.0).abs() < 1e-15);
        assert!(s.data()[2] < 1e-15 && s.data()[2] >= 0.0);
        assert!(s.data().iter().all(|v| v.is_finite()));
        assert_eq!(s.data()[3], 1.0);
        assert_eq!(s.data()[4], 0.0);
    }

    #[test]
    fn sigmoid_gradient() {
        let xs = [-3.0, -0.2, 0.0, 1.3];
        let s = sigmoid(&g(&xs));
        let analytic = sigmoid_backward(&s, &g(&[1.0; 4])).unwrap();
        let h = 1e-6;
        for (i, &x) in xs.iter().enumerate() {
            let sv = s.data()[i];
            assert!((analytic.data()[i] - sv * (1.0 - sv)).abs() < 1e-15);
            let fd = (sigmoid(&g(&[x + h])).data()[0] - sigmoid(&g(&[x - h])).data()[0]) / (2.0 * h);
            assert!((analytic.data()[i] - fd).abs() < 1e-7);
        }
    }
}
