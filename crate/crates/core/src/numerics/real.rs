//! Scalar abstraction shared by plain `f64` evaluation and reverse-mode
//! differentiation.
//!
//! Densities, primitive networks and walk scores are written once against
//! [`Real`]. Running them with `f64` gives values; running them with [`Var`]
//! records a tape that [`Tape::gradient`] differentiates.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + fmt::Debug
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
    fn value(self) -> f64;
    /// A constant living in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    /// Clamps into `[lo, hi]`; outside the interval the result is a constant.
    fn clamp(self, lo: f64, hi: f64) -> Self;

    /// Sum of a non-empty slice.
    fn sum(xs: &[Self]) -> Self {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = acc + x;
        }
        acc
    }

    /// `ln Σ exp(x_i)` of a non-empty slice, shifted by the maximum.
    fn log_sum_exp(xs: &[Self]) -> Self;

    /// Inner product of two equal-length non-empty slices.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = a[0] * b[0];
        for i in 1..a.len() {
            acc = acc + a[i] * b[i];
        }
        acc
    }
}

pub(crate) fn softplus_f64(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// Inverse of softplus, used to initialise pre-activation scale parameters.
pub fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "softplus is strictly positive");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    #[inline]
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
    fn log_sum_exp(xs: &[Self]) -> Self {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
        max + s.ln()
    }
}

#[derive(Default)]
struct TapeInner {
    values: Vec<f64>,
    // node i owns parents[starts[i]..starts[i + 1]]
    starts: Vec<u32>,
    parents: Vec<(u32, f64)>,
}

/// Wengert list storing each node's value and local partial derivatives.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Tape {
    pub fn new() -> Self {
        let tape = Tape::default();
        tape.inner.borrow_mut().starts.push(0);
        tape
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A fresh leaf (parameter or constant).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, &[])
    }

    fn push(&self, value: f64, parents: &[(u32, f64)]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let index = inner.values.len() as u32;
        inner.values.push(value);
        inner.parents.extend_from_slice(parents);
        let end = inner.parents.len() as u32;
        inner.starts.push(end);
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Adjoints of `output` with respect to every node on the tape.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let inner = self.inner.borrow();
        let mut adjoint = vec![0.0; inner.values.len()];
        adjoint[output.index as usize] = 1.0;
        for node in (0..=output.index as usize).rev() {
            let a = adjoint[node];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (inner.starts[node] as usize, inner.starts[node + 1] as usize);
            for &(p, d) in &inner.parents[s..e] {
                adjoint[p as usize] += a * d;
            }
        }
        adjoint
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index as usize
    }

    fn unary(self, value: f64, d: f64) -> Self {
        self.tape.push(value, &[(self.index, d)])
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "mixing tapes");
        self.tape
            .push(value, &[(self.index, da), (other.index, db)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }
    fn lift(self, c: f64) -> Self {
        self.tape.var(c)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.value);
        self.unary(s, s * (1.0 - s))
    }
    fn softplus(self) -> Self {
        self.unary(softplus_f64(self.value), sigmoid_f64(self.value))
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self.value < lo {
            self.tape.var(lo)
        } else if self.value > hi {
            self.tape.var(hi)
        } else {
            self
        }
    }
    fn sum(xs: &[Self]) -> Self {
        let tape = xs[0].tape;
        let value: f64 = xs.iter().map(|x| x.value).sum();
        let parents: Vec<(u32, f64)> = xs.iter().map(|x| (x.index, 1.0)).collect();
        tape.push(value, &parents)
    }
    fn log_sum_exp(xs: &[Self]) -> Self {
        let tape = xs[0].tape;
        let vals: Vec<f64> = xs.iter().map(|x| x.value).collect();
        let lse = f64::log_sum_exp(&vals);
        let parents: Vec<(u32, f64)> = xs
            .iter()
            .map(|x| (x.index, (x.value - lse).exp()))
            .collect();
        tape.push(lse, &parents)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        let tape = a[0].tape;
        let mut value = 0.0;
        let mut parents = Vec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            value += x.value * y.value;
            parents.push((x.index, y.value));
            parents.push((y.index, x.value));
        }
        tape.push(value, &parents)
    }
}
