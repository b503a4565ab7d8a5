use super::tensor::{Scalar, Tensor};
use super::{NnError, Result};

/// Mean over the batch of `‖pred − target‖₂`, with its gradient with
/// respect to `pred`. The gradient is taken as zero where the residual
/// vanishes.
pub fn l2_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape != target.shape || pred.shape.is_empty() {
        return Err(NnError::Shape(format!(
            "loss: prediction {:?} vs target {:?}",
            pred.shape, target.shape
        )));
    }
    let b = pred.shape[0];
    if b == 0 {
        return Err(NnError::Shape("loss: empty batch".into()));
    }
    let width = pred.len() / b;
    let inv_b = T::one() / T::c(b as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for ((p, t), g) in pred
        .data
        .chunks_exact(width)
        .zip(target.data.chunks_exact(width))
        .zip(grad.chunks_exact_mut(width))
    {
        let norm = p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
        total += norm;
        if norm > T::zero() {
            let s = inv_b / norm;
            for ((gi, &a), &b) in g.iter_mut().zip(p).zip(t) {
                *gi = (a - b) * s;
            }
        }
    }
    Ok((total * inv_b, Tensor::new(pred.shape.clone(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::new(vec![1, n], v).unwrap()
    }

    #[test]
    fn examples() {
        let (l, g) = l2_loss(&t(vec![0.3, 0.4]), &t(vec![0.3, 0.4])).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert_eq!(l2_loss(&t(vec![0.0, 0.0]), &t(vec![3.0, 4.0])).unwrap().0, 5.0);
        let (a, b) = (t(vec![1.0, -2.0, 0.5]), t(vec![0.1, 0.7, -3.0]));
        assert_eq!(l2_loss(&a, &b).unwrap().0, l2_loss(&b, &a).unwrap().0);
    }

    #[test]
    fn batch_mean() {
        let p = Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let q = Tensor::new(vec![2, 2], vec![3.0, 4.0, 1.0, 1.0]).unwrap();
        let (l, g) = l2_loss(&p, &q).unwrap();
        assert_eq!(l, 2.5);
        for (a, e) in g.data.iter().zip([-0.3f64, -0.4, 0.0, 0.0]) {
            assert!((a - e).abs() < 1e-15);
        }
    }
}
