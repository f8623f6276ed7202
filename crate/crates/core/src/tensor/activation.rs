use crate::scalar::Scalar;

use super::{debug_check_finite, Tensor};

/// Pointwise nonlinearities used by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    HSwish,
    Relu6,
    Silu,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn relu6(x: f64) -> f64 {
    x.clamp(0.0, 6.0)
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::HSwish => x * relu6(x + 3.0) / 6.0,
            Activation::Relu6 => relu6(x),
            Activation::Silu => x * sigmoid(x),
        }
    }

    /// Derivative at `x`; kink points take the value of the outer piece.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::HSwish => {
                if x <= -3.0 {
                    0.0
                } else if x >= 3.0 {
                    1.0
                } else {
                    (2.0 * x + 3.0) / 6.0
                }
            }
            Activation::Relu6 => {
                if x > 0.0 && x < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }

    /// Points where the derivative is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Activation::HSwish => &[-3.0, 3.0],
            Activation::Relu6 => &[0.0, 6.0],
            Activation::Sigmoid | Activation::Silu => &[],
        }
    }

    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        let y = x.map(|v| T::of(self.eval(v.f64())));
        debug_check_finite("activation", &[x], &y);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_swish_kink_values() {
        let a = Activation::HSwish;
        assert_eq!(a.eval(0.0), 0.0);
        assert_eq!(a.eval(3.0), 3.0);
        assert_eq!(a.eval(-3.0), 0.0);
        assert!((a.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(Activation::Sigmoid.eval(0.0), 0.5);
        assert_eq!(Activation::Sigmoid.eval(-1000.0), 0.0);
        assert_eq!(Activation::Sigmoid.eval(1000.0), 1.0);
    }

    #[test]
    fn derivatives_match_central_differences_off_kinks() {
        let eps = 1e-6;
        for act in [Activation::Sigmoid, Activation::HSwish, Activation::Relu6, Activation::Silu] {
            for &x in &[-4.2, -2.5, -0.7, 0.3, 1.9, 2.8, 4.4, 5.5, 7.0] {
                let fd = (act.eval(x + eps) - act.eval(x - eps)) / (2.0 * eps);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }
}
