//! Minimal forward-mode automatic differentiation.
//!
//! The vehicle dynamics are written generically over [`Real`] so the same
//! assembly code evaluates with `f64` (simulation), `Dual<f64>` (Jacobian
//! columns, sensitivity right-hand sides), and `Dual<Dual<f64>>` (the
//! velocity-bias sweep nested inside an outer derivative). Only the small
//! operation set the model needs is provided.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar usable in the dynamics assembly.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    /// Real (value) part, stripped of all derivative payload. Used for
    /// branching; branches are constant in a neighbourhood of the point.
    fn re(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T) -> Self {
        Self { re, eps: T::zero() }
    }

    pub fn seeded(re: T) -> Self {
        Self { re, eps: T::one() }
    }

    pub fn with_eps(re: T, eps: T) -> Self {
        Self { re, eps }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            re: self.re + rhs.re,
            eps: self.eps + rhs.eps,
        }
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self {
            re: self.re - rhs.re,
            eps: self.eps - rhs.eps,
        }
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self {
            re: self.re * rhs.re,
            eps: self.re * rhs.eps + self.eps * rhs.re,
        }
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.re;
        Self {
            re: self.re * inv,
            eps: (self.eps * rhs.re - self.re * rhs.eps) * inv * inv,
        }
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            eps: -self.eps,
        }
    }
}

impl<T: Real> Real for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Self::new(T::from_f64(v))
    }
    fn re(self) -> f64 {
        self.re.re()
    }
    fn sin(self) -> Self {
        Self {
            re: self.re.sin(),
            eps: self.eps * self.re.cos(),
        }
    }
    fn cos(self) -> Self {
        Self {
            re: self.re.cos(),
            eps: -(self.eps * self.re.sin()),
        }
    }
    fn atan(self) -> Self {
        Self {
            re: self.re.atan(),
            eps: self.eps / (T::one() + self.re * self.re),
        }
    }
    fn sqrt(self) -> Self {
        let root = self.re.sqrt();
        Self {
            re: root,
            eps: self.eps / (T::from_f64(2.0) * root),
        }
    }
    fn abs(self) -> Self {
        if self.re.re() < 0.0 {
            -self
        } else {
            self
        }
    }
}

/// `clamp(x/x0, -1, 1)` — a smooth-enough signed saturation used where a
/// hard `sign()` would make the residual non-differentiable at rest.
pub fn sat<T: Real>(x: T, x0: f64) -> T {
    let ratio = x / T::from_f64(x0);
    if ratio.re() > 1.0 {
        T::one()
    } else if ratio.re() < -1.0 {
        -T::one()
    } else {
        ratio
    }
}
