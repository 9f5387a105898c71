//! Single-parameterized edge functions `f(k, x)`.
//!
//! Every edge of a SKAN layer carries exactly one learnable scalar `k`. The
//! three functions here are built from trigonometric reference functions:
//!
//! | kind      | f(k, x)       | ∂f/∂k            | ∂f/∂x            |
//! |-----------|---------------|------------------|------------------|
//! | `LSin`    | k·sin(x)      | sin(x)           | k·cos(x)         |
//! | `LCos`    | k·cos(x)      | cos(x)           | −k·sin(x)        |
//! | `LArctan` | arctan(k·x)   | x / (1 + (kx)²)  | k / (1 + (kx)²)  |
//!
//! # Which reference functions qualify
//!
//! A reference function is usable only if its domain is all of ℝ, since inner
//! layers feed arbitrary real sums into the next layer's edges. sin, cos and
//! arctan pass; tan, cot, sec and csc have poles and are not provided.
//!
//! # Adding a new kind
//!
//! Where the parameter goes is decided by two rules, applied in order:
//!
//! 1. If the reference function has a bounded range, place `k` so that the
//!    range becomes all of ℝ. For sin and cos that is an outer factor,
//!    `k·sin(x)`.
//! 2. If the range already covers ℝ (or one parameter cannot extend it),
//!    extend the function anyway, preferring a multiplicative term over an
//!    additive one, and a position closer to `x` over one further out. For
//!    arctan this gives `arctan(k·x)`.
//!
//! A new variant adds an arm to [`SFuncKind`], its derivative rules, and a
//! [`ParameterPlacement`] stating which rule placed `k`. The gradient
//! property tests iterate over [`SFuncKind::ALL`] and pick it up
//! automatically.
//!
//! Large `|x|` gets no range reduction beyond what the platform `sin`/`cos`
//! do; first-layer inputs are pixels in `[0, 1]` and LArctan outputs stay in
//! `(−π/2, π/2)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkanError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SFuncKind {
    LSin,
    LCos,
    LArctan,
}

/// How the learnable parameter was attached to the reference function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParameterPlacement {
    /// `k · g(x)`: stretches a bounded range to all of ℝ.
    OuterScale,
    /// `g(k · x)`: reference range already covers ℝ; `k` scales the argument.
    InnerScale,
}

impl SFuncKind {
    pub const ALL: [SFuncKind; 3] = [SFuncKind::LSin, SFuncKind::LCos, SFuncKind::LArctan];

    pub fn name(self) -> &'static str {
        match self {
            SFuncKind::LSin => "lsin",
            SFuncKind::LCos => "lcos",
            SFuncKind::LArctan => "larctan",
        }
    }

    pub fn placement(self) -> ParameterPlacement {
        match self {
            SFuncKind::LSin | SFuncKind::LCos => ParameterPlacement::OuterScale,
            SFuncKind::LArctan => ParameterPlacement::InnerScale,
        }
    }

    /// `f(k, x)` without input validation. Used by the kernels.
    #[inline(always)]
    pub fn eval_unchecked(self, k: f64, x: f64) -> f64 {
        match self {
            SFuncKind::LSin => k * x.sin(),
            SFuncKind::LCos => k * x.cos(),
            SFuncKind::LArctan => (k * x).atan(),
        }
    }

    /// `(∂f/∂k, ∂f/∂x)` without input validation.
    #[inline(always)]
    pub fn grad_unchecked(self, k: f64, x: f64) -> (f64, f64) {
        match self {
            SFuncKind::LSin => (x.sin(), k * x.cos()),
            SFuncKind::LCos => (x.cos(), -(k * x.sin())),
            SFuncKind::LArctan => {
                let t = k * x;
                let denom = 1.0 + t * t;
                (x / denom, k / denom)
            }
        }
    }

    /// Checked evaluation; rejects NaN and infinite inputs.
    pub fn eval(self, k: f64, x: f64) -> Result<f64> {
        check_finite("sfunc_eval", k, x)?;
        Ok(self.eval_unchecked(k, x))
    }

    /// Checked partial derivatives `(∂f/∂k, ∂f/∂x)`.
    pub fn grad(self, k: f64, x: f64) -> Result<(f64, f64)> {
        check_finite("sfunc_grad", k, x)?;
        Ok(self.grad_unchecked(k, x))
    }
}

fn check_finite(op: &'static str, k: f64, x: f64) -> Result<()> {
    if k.is_finite() && x.is_finite() {
        Ok(())
    } else {
        Err(SkanError::Domain { op, k, x })
    }
}

pub fn sfunc_eval(kind: SFuncKind, k: f64, x: f64) -> Result<f64> {
    kind.eval(k, x)
}

pub fn sfunc_grad(kind: SFuncKind, k: f64, x: f64) -> Result<(f64, f64)> {
    kind.grad(k, x)
}

impl fmt::Display for SFuncKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SFuncKind {
    type Err = SkanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsin" => Ok(SFuncKind::LSin),
            "lcos" => Ok(SFuncKind::LCos),
            "larctan" => Ok(SFuncKind::LArctan),
            other => Err(SkanError::Config(format!("unknown sfunc '{other}' (expected lsin, lcos or larctan)"))),
        }
    }
}
