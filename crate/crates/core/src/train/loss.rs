//! Pixel losses with analytic gradients with respect to the prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, TensorBase};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LossKind {
    L1,
    Mse,
    Charbonnier {
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_eps() -> f64 {
    1e-3
}

impl LossKind {
    pub fn charbonnier() -> Self {
        LossKind::Charbonnier { eps: default_eps() }
    }
}

/// Mean loss over all elements and its gradient `∂loss/∂pred`.
pub fn loss<T: Real>(pred: &TensorBase<T>, target: &TensorBase<T>, kind: LossKind) -> Result<(f64, TensorBase<T>)> {
    if pred.dims() != target.dims() {
        return Err(Error::shape("loss", format!("{:?} vs {:?}", pred.dims(), target.dims())));
    }
    let n = pred.numel().max(1) as f64;
    let mut total = 0.0f64;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            let (v, g) = match kind {
                LossKind::L1 => (d.abs(), if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 }),
                LossKind::Mse => (d * d, 2.0 * d),
                LossKind::Charbonnier { eps } => {
                    let r = (d * d + eps * eps).sqrt();
                    (r, d / r)
                }
            };
            total += v;
            T::of(g / n)
        })
        .collect();
    Ok((total / n, TensorBase::new(pred.dims(), grad)?))
}

/// Value and gradients of `MSE(out) + λ·MSE(feat)`.
#[derive(Clone, Debug)]
pub struct DistillLoss<T: Real> {
    pub value: f64,
    pub grad_out: TensorBase<T>,
    pub grad_feat: TensorBase<T>,
}

pub fn distill_loss<T: Real>(
    student_out: &TensorBase<T>,
    teacher_out: &TensorBase<T>,
    student_feat: &TensorBase<T>,
    teacher_feat: &TensorBase<T>,
    lambda: f64,
) -> Result<DistillLoss<T>> {
    let (lo, go) = loss(student_out, teacher_out, LossKind::Mse)?;
    let (lf, gf) = loss(student_feat, teacher_feat, LossKind::Mse)?;
    Ok(DistillLoss {
        value: lo + lambda * lf,
        grad_out: go,
        grad_feat: gf.map(|g| g * T::of(lambda)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn closed_forms() {
        let a = Tensor::from_fn([1, 2, 3, 3], |[_, c, y, x]| (c + y + x) as f32 * 0.1);
        assert_eq!(loss(&a, &a, LossKind::L1).unwrap().0, 0.0);
        assert_eq!(loss(&a, &a, LossKind::Mse).unwrap().0, 0.0);
        assert!((loss(&a, &a, LossKind::charbonnier()).unwrap().0 - 1e-3).abs() < 1e-15);
        let b = a.map(|v| v + 0.5);
        assert!((loss(&a, &b, LossKind::L1).unwrap().0 - 0.5).abs() < 1e-6);
        assert!((loss(&a, &b, LossKind::Mse).unwrap().0 - 0.25).abs() < 1e-6);
        assert!(loss(&a, &Tensor::zeros([1, 2, 3, 4]), LossKind::L1).is_err());
    }

    #[test]
    fn distill_reduces_to_output_mse() {
        let a = Tensor::full([1, 1, 2, 2], 0.2);
        let b = Tensor::full([1, 1, 2, 2], 0.6);
        let f = Tensor::full([1, 3, 2, 2], 1.0);
        let g = Tensor::zeros([1, 3, 2, 2]);
        let d = distill_loss(&a, &b, &f, &g, 0.0).unwrap();
        assert!((d.value - 0.16).abs() < 1e-6);
        assert!(d.grad_feat.data().iter().all(|&v| v == 0.0));
        assert_eq!(distill_loss(&a, &a, &f, &f, 3.0).unwrap().value, 0.0);
        let d = distill_loss(&a, &b, &f, &g, 2.0).unwrap();
        assert!((d.value - (0.16 + 2.0)).abs() < 1e-6);
    }
}
