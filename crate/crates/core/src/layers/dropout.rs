use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Per-element multipliers applied in the forward pass; `None` means identity.
#[derive(Debug, Clone)]
pub struct DropoutTape<T> {
    scale: Option<Vec<T>>,
}

/// Inverted dropout: in training mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. Inference is identity.
pub fn dropout<T: Scalar>(x: &Grid4<T>, rate: f64, rng: &mut Rng, training: bool) -> Result<(Grid4<T>, DropoutTape<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), DropoutTape { scale: None }));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len()).map(|_| if rng.next_f64() < rate { T::zero() } else { keep }).collect();
    let mut y = x.clone();
    for (v, &s) in y.data_mut().iter_mut().zip(&scale) {
        *v *= s;
    }
    Ok((y, DropoutTape { scale: Some(scale) }))
}

pub fn dropout_backward<T: Scalar>(tape: &DropoutTape<T>, grad_out: &Grid4<T>) -> Result<Grid4<T>> {
    let mut g = grad_out.clone();
    if let Some(scale) = &tape.scale {
        if scale.len() != g.len() {
            return Err(Error::ShapeMismatch(format!("dropout grad of {} elements, mask of {}", g.len(), scale.len())));
        }
        for (v, &s) in g.data_mut().iter_mut().zip(scale) {
            *v *= s;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_and_inference_are_identity() {
        let x = Grid4::from_vec((1, 1, 2, 3), vec![1.0f64, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let mut rng = Rng::new(1);
        for training in [true, false] {
            let (y, _) = dropout(&x, 0.0, &mut rng, training).unwrap();
            assert_eq!(y, x);
        }
        let (y, tape) = dropout(&x, 0.5, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert_eq!(dropout_backward(&tape, &x).unwrap(), x);
    }

    #[test]
    fn zeroed_fraction_matches_rate() {
        let x = Grid4::new((1, 1, 100, 1000), 1.0f32).unwrap();
        let mut rng = Rng::new(42);
        let (y, _) = dropout(&x, 0.2, &mut rng, true).unwrap();
        let zeroed = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / y.len() as f64;
        assert!((0.19..=0.21).contains(&zeroed), "zeroed {zeroed}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-6));
    }

    #[test]
    fn backward_uses_forward_mask() {
        let x = Grid4::new((1, 2, 4, 4), 2.0f64).unwrap();
        let mut rng = Rng::new(3);
        let (y, tape) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let g = dropout_backward(&tape, &Grid4::new(x.shape(), 1.0).unwrap()).unwrap();
        for (gv, yv) in g.data().iter().zip(y.data()) {
            assert_eq!(*gv, yv / 2.0);
        }
    }

    #[test]
    fn invalid_rate_rejected() {
        let x = Grid4::new((1, 1, 2, 2), 1.0f32).unwrap();
        let mut rng = Rng::new(0);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, false).is_err());
    }
}
