use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    Relu,
    Sigmoid,
    /// Normalizes over the last axis.
    Softmax,
}

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Real>(input: &Tensor<T>, mode: ActivationMode) -> Tensor<T> {
    match mode {
        ActivationMode::Relu => input.map(|v| v.max(T::zero())),
        ActivationMode::Sigmoid => input.map(sigmoid_scalar),
        ActivationMode::Softmax => {
            let k = *input.shape().last().unwrap_or(&1);
            let mut out = input.clone();
            for row in out.data_mut().chunks_exact_mut(k) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    sum = sum + *v;
                }
                for v in row.iter_mut() {
                    *v = *v / sum;
                }
            }
            out
        }
    }
}

/// Gradient through an activation given its forward output.
pub fn activation_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>, mode: ActivationMode) -> Result<Tensor<T>> {
    let y = output.data();
    let dy = grad_out.data();
    let dx: Vec<T> = match mode {
        ActivationMode::Relu => y
            .iter()
            .zip(dy)
            .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
            .collect(),
        ActivationMode::Sigmoid => y.iter().zip(dy).map(|(&o, &g)| g * o * (T::one() - o)).collect(),
        ActivationMode::Softmax => {
            let k = *output.shape().last().unwrap_or(&1);
            let mut dx = Vec::with_capacity(y.len());
            for (yr, gr) in y.chunks_exact(k).zip(dy.chunks_exact(k)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                dx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
            }
            dx
        }
    };
    Tensor::new(output.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_cases() {
        let x = Tensor::new([3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(activation(&x, ActivationMode::Relu).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(activation(&x, ActivationMode::Sigmoid).data()[1], 0.5);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Tensor::full([2, 5], 3.0f32);
        for &v in activation(&x, ActivationMode::Softmax).data() {
            assert!((v - 0.2).abs() < 1e-7);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let x = Tensor::new([2], vec![-1000.0f32, 1000.0]).unwrap();
        let y = activation(&x, ActivationMode::Sigmoid);
        assert_eq!(y.data(), &[0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in proptest::collection::vec(-30.0f32..30.0, 12)) {
            let x = Tensor::new([3, 4], v).unwrap();
            let y = activation(&x, ActivationMode::Softmax);
            for row in y.data().chunks(4) {
                prop_assert!(row.iter().all(|&p| p > 0.0));
                prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn relu_is_nonnegative(v in proptest::collection::vec(-10.0f32..10.0, 16)) {
            let y = activation(&Tensor::new([16], v).unwrap(), ActivationMode::Relu);
            prop_assert!(y.data().iter().all(|&p| p >= 0.0));
        }
    }
}
