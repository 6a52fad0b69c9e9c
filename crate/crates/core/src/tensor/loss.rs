use super::Tensor4;
use crate::error::{Error, Result};

fn check3(op: &'static str, a: &Tensor4, b: &Tensor4, c: &Tensor4) -> Result<()> {
    a.check_same(op, b)?;
    a.check_same(op, c)
}

/// Weighted L1 loss `mean |w*p - w*t|` and its gradient with respect to `p`.
///
/// The gradient is `w * sign(w * (p - t)) / N`, i.e. the exact gradient of the
/// returned mean. Elements with zero weight contribute nothing to either.
pub fn masked_l1(prediction: &Tensor4, target: &Tensor4, weight: &Tensor4) -> Result<(f64, Tensor4)> {
    check3("masked_l1", prediction, target, weight)?;
    if let Some(w) = weight.data().iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::InvalidParam(format!("masked_l1 weight {w} outside [0, 1]")));
    }
    let n = prediction.len().max(1) as f64;
    let mut grad = Tensor4::zeros(prediction.shape());
    let mut loss = 0.0;
    for (((g, &p), &t), &w) in grad
        .data_mut()
        .iter_mut()
        .zip(prediction.data())
        .zip(target.data())
        .zip(weight.data())
    {
        let d = w * p - w * t;
        loss += d.abs();
        if d > 0.0 {
            *g = w / n;
        } else if d < 0.0 {
            *g = -w / n;
        }
    }
    Ok((loss / n, grad))
}

/// Mean squared error and its gradient with respect to `prediction`.
pub fn mse(prediction: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    prediction.check_same("mse", target)?;
    let n = prediction.len().max(1) as f64;
    let mut grad = Tensor4::zeros(prediction.shape());
    let mut loss = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(prediction.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor4 {
        Tensor4::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn equal_inputs_give_zero() {
        let p = t(&[1.0, -2.0, 3.5]);
        let (l, g) = masked_l1(&p, &p, &t(&[1.0, 0.5, 0.2])).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_weight_masks_everything() {
        let (l, g) = masked_l1(&t(&[5.0, -7.0]), &t(&[0.0, 0.0]), &t(&[0.0, 0.0])).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_evaluated_single_pixel() {
        let (l, g) = masked_l1(&t(&[2.0]), &t(&[0.0]), &t(&[0.5])).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        assert!((g.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_and_range_errors() {
        assert!(masked_l1(&t(&[1.0]), &t(&[1.0, 2.0]), &t(&[1.0])).is_err());
        assert!(masked_l1(&t(&[1.0]), &t(&[1.0]), &t(&[1.5])).is_err());
    }

    proptest! {
        #[test]
        fn unit_weight_is_mean_absolute_error(v in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..40)) {
            let p: Vec<f64> = v.iter().map(|x| x.0).collect();
            let q: Vec<f64> = v.iter().map(|x| x.1).collect();
            let (l, _) = masked_l1(&t(&p), &t(&q), &t(&vec![1.0; p.len()])).unwrap();
            let mae = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
            prop_assert!((l - mae).abs() <= 1e-12 * mae.max(1.0));
        }
    }
}
