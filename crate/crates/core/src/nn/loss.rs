use crate::numerics::Tensor;
use crate::Result;

/// Mean squared error and its gradient with respect to `pred`.
pub fn loss_l2(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.ensure_same_shape(target)?;
    let n = pred.len() as f64;
    let loss = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.zip_map(target, |p, t| 2.0 * (p - t) / n)?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_target() {
        let t = Tensor::full(&[2, 3], 1.5);
        let (l, g) = loss_l2(&t, &t).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn mean_of_squares() {
        let p = Tensor::new(vec![2], vec![1.0, 3.0]).unwrap();
        let t = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let (l, g) = loss_l2(&p, &t).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g.data(), &[1.0, 3.0]);
    }
}
