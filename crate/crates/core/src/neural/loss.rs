//! Huber loss: quadratic within delta of the target, linear beyond it.

use crate::neural::tensor::Scalar;

/// Loss and its gradient w.r.t. the prediction:
///
/// L = e²/2 for |e| <= delta, else delta·|e| − delta²/2, with e = yhat − y;
/// dL/dyhat = e inside the quadratic branch, delta·sign(e) outside.
pub fn huber_loss<T: Scalar>(y: T, yhat: T, delta: T) -> (T, T) {
    debug_assert!(delta > T::zero());
    let e = yhat - y;
    let half = T::of(0.5);
    if e.abs() <= delta {
        (half * e * e, e)
    } else {
        (delta * e.abs() - half * delta * delta, delta * e.signum())
    }
}

/// Mean Huber loss over a batch with per-item prediction gradients.
pub fn huber_batch<T: Scalar>(y: &[T], yhat: &[T], delta: T) -> (T, Vec<T>) {
    assert_eq!(y.len(), yhat.len());
    assert!(!y.is_empty());
    let inv_n = T::one() / T::of(y.len() as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(y.len());
    for (yi, pi) in y.iter().zip(yhat) {
        let (l, g) = huber_loss(*yi, *pi, delta);
        total += l;
        grads.push(g * inv_n);
    }
    (total * inv_n, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_prediction_has_zero_loss_and_gradient() {
        let (l, g) = huber_loss(20.0f64, 20.0, 1.0);
        assert_eq!((l, g), (0.0, 0.0));
    }

    #[test]
    fn quadratic_branch_worked_value() {
        let (l, g) = huber_loss(0.0f64, 0.5, 1.0);
        assert_eq!(l, 0.125);
        assert_eq!(g, 0.5);
    }

    #[test]
    fn linear_branch_worked_value() {
        let (l, g) = huber_loss(0.0f64, 3.0, 1.0);
        assert_eq!(l, 2.5);
        assert_eq!(g, 1.0);
        let (l2, g2) = huber_loss(0.0f64, -3.0, 1.0);
        assert_eq!(l2, 2.5);
        assert_eq!(g2, -1.0);
    }

    #[test]
    fn branches_agree_at_delta() {
        let delta = 1.0f64;
        let quad = 0.5 * delta * delta;
        let lin = delta * delta - 0.5 * delta * delta;
        assert!((quad - lin).abs() < 1e-12);
        let (l, _) = huber_loss(0.0, delta, delta);
        assert!((l - quad).abs() < 1e-12);
    }

    #[test]
    fn loss_is_continuous_and_convex_along_yhat() {
        let delta = 1.0f64;
        let mut prev_slope = f64::NEG_INFINITY;
        let mut prev_loss: Option<f64> = None;
        let mut yhat = -4.0;
        while yhat <= 4.0 {
            let (l, _) = huber_loss(0.0, yhat, delta);
            if let Some(pl) = prev_loss {
                let slope = (l - pl) / 1e-3;
                assert!(slope >= prev_slope - 1e-9, "non-convex at {yhat}");
                prev_slope = slope;
            }
            prev_loss = Some(l);
            yhat += 1e-3;
        }
    }

    #[test]
    fn batch_loss_is_mean() {
        let (l, g) = huber_batch(&[0.0f64, 0.0], &[0.5, 3.0], 1.0);
        assert!((l - (0.125 + 2.5) / 2.0).abs() < 1e-12);
        assert_eq!(g, vec![0.25, 0.5]);
    }
}
