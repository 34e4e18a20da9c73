use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by `f64` and tape variables.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;

    /// A constant living wherever `self` lives (same tape, for tape variables).
    fn constant_like(&self, c: f64) -> Self;

    fn exp(self) -> Self;

    fn sigmoid(self) -> Self;

    /// `bias + Σ weights[i] * inputs[i]`.
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self;

    /// Sum of a non-empty slice.
    fn sum(items: &[Self]) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }

    fn constant_like(&self, c: f64) -> Self {
        c
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }

    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        weights.iter().zip(inputs).fold(bias, |acc, (w, x)| acc + w * x)
    }

    fn sum(items: &[Self]) -> Self {
        assert!(!items.is_empty(), "sum of empty slice");
        items.iter().sum()
    }
}
