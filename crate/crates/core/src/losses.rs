//! Margin losses `g` and regularizers `R`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm1, norm2, norm2_sq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Logistic,
    Sigmoid,
    Hinge,
    Relu,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Logistic,
        LossKind::Sigmoid,
        LossKind::Hinge,
        LossKind::Relu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Sigmoid => "sigmoid",
            LossKind::Hinge => "hinge",
            LossKind::Relu => "relu",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(LossKind::Logistic),
            "sigmoid" => Ok(LossKind::Sigmoid),
            "hinge" => Ok(LossKind::Hinge),
            "relu" => Ok(LossKind::Relu),
            other => Err(Error::Configuration(format!("unknown loss '{other}'"))),
        }
    }
}

/// A loss `r -> scale * g(r)` for one of the four base kinds.
///
/// `scale` is 1 except after [`crate::model::normalize_instance`], which divides
/// the loss by its Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl From<LossKind> for LossSpec {
    fn from(kind: LossKind) -> Self {
        LossSpec::new(kind)
    }
}

/// `ln(1 + e^{-r})` without overflow.
#[inline]
fn softplus_neg(r: f64) -> f64 {
    (-r).max(0.0) + (-r.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{r})` without overflow.
#[inline]
fn logistic_tail(r: f64) -> f64 {
    if r >= 0.0 {
        let e = (-r).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + r.exp())
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec { kind, scale: 1.0 }
    }

    pub fn scaled(self, factor: f64) -> Self {
        LossSpec {
            kind: self.kind,
            scale: self.scale * factor,
        }
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        let g = match self.kind {
            LossKind::Logistic => softplus_neg(r),
            LossKind::Sigmoid => logistic_tail(r),
            LossKind::Hinge => (1.0 - r).max(0.0),
            LossKind::Relu => (-r).max(0.0),
        };
        self.scale * g
    }

    /// Derivative in `r`; the left derivative at the hinge and ReLU kinks.
    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        let d = match self.kind {
            LossKind::Logistic => -logistic_tail(r),
            LossKind::Sigmoid => {
                let g = logistic_tail(r);
                -g * (1.0 - g)
            }
            LossKind::Hinge => {
                if r <= 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Relu => {
                if r <= 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        self.scale * d
    }

    pub fn lipschitz_tight(&self) -> f64 {
        let l = match self.kind {
            LossKind::Sigmoid => 0.25,
            _ => 1.0,
        };
        self.scale * l
    }

    /// Lipschitz constant to plug into sample-size formulas, never below 1
    /// for an unscaled loss.
    pub fn lipschitz_formula(&self) -> f64 {
        let l = match self.kind {
            LossKind::Sigmoid => 0.25f64.max(1.0),
            _ => 1.0,
        };
        self.scale * l
    }

    pub fn g0(&self) -> f64 {
        self.eval(0.0)
    }

    /// Whether `|g'(r)| <= g(r)` holds for every `r`.
    pub fn bounded_derivative(&self) -> bool {
        matches!(self.kind, LossKind::Logistic | LossKind::Sigmoid)
    }

    /// Whether `g` is positively homogeneous of degree 1.
    pub fn homogeneous(&self) -> bool {
        self.kind == LossKind::Relu
    }

    /// Homogeneous part `h` of the split `g = h + b`.
    #[inline]
    pub fn homogeneous_part(&self, r: f64) -> f64 {
        match self.kind {
            LossKind::Logistic | LossKind::Hinge | LossKind::Relu => self.scale * (-r).max(0.0),
            LossKind::Sigmoid => 0.0,
        }
    }

    /// Bounded part `b = g - h`. Lies in `[0, g(0)]` for logistic, hinge and
    /// ReLU; for the sigmoid `h = 0` is forced and `b = g` reaches `2 g(0)`.
    #[inline]
    pub fn bounded_part(&self, r: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => self.scale * (-r.abs()).exp().ln_1p(),
            LossKind::Hinge => self.scale * (1.0 - r).clamp(0.0, 1.0),
            LossKind::Sigmoid => self.eval(r),
            LossKind::Relu => 0.0,
        }
    }

    pub fn decompose(&self) -> Decomposition {
        Decomposition { loss: *self }
    }
}

/// The split `g = h + b` with `h` positively homogeneous and `0 <= b <= g(0)`.
#[derive(Debug, Clone, Copy)]
pub struct Decomposition {
    loss: LossSpec,
}

impl Decomposition {
    pub fn h(&self, r: f64) -> f64 {
        self.loss.homogeneous_part(r)
    }

    pub fn b(&self, r: f64) -> f64 {
        self.loss.bounded_part(r)
    }
}

pub fn eval_loss(loss: &LossSpec, r: f64) -> f64 {
    loss.eval(r)
}

pub fn eval_loss_derivative(loss: &LossSpec, r: f64) -> f64 {
    loss.derivative(r)
}

/// True iff `|g'(r)| <= g(r)` (up to 1e-12) at every grid point.
pub fn check_bounded_derivative(loss: &LossSpec, grid: &[f64]) -> Result<bool> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    Ok(grid
        .iter()
        .all(|&r| loss.derivative(r).abs() <= loss.eval(r) + 1e-12))
}

/// Evenly spaced points from `lo` to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    L1,
    L2,
    L2sq,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::L1 => "l1",
            RegKind::L2 => "l2",
            RegKind::L2sq => "l2sq",
        }
    }

    pub fn degree(self) -> u32 {
        match self {
            RegKind::L2sq => 2,
            _ => 1,
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            RegKind::L1 => norm1(x),
            RegKind::L2 => norm2(x),
            RegKind::L2sq => norm2_sq(x),
        }
    }

    /// A subgradient of `R` at `x`, written into `out`.
    pub fn subgradient(self, x: &[f64], out: &mut [f64]) {
        match self {
            RegKind::L1 => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = if *v > 0.0 {
                        1.0
                    } else if *v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            RegKind::L2 => {
                let n = norm2(x);
                for (o, v) in out.iter_mut().zip(x) {
                    *o = if n > 0.0 { v / n } else { 0.0 };
                }
            }
            RegKind::L2sq => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v;
                }
            }
        }
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(RegKind::L1),
            "l2" => Ok(RegKind::L2),
            "l2sq" | "l2^2" | "ridge" => Ok(RegKind::L2sq),
            other => Err(Error::Configuration(format!(
                "unknown regularizer '{other}'"
            ))),
        }
    }
}

pub fn eval_regularizer(reg: RegKind, x: &[f64]) -> f64 {
    reg.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(kind: LossKind) -> LossSpec {
        LossSpec::new(kind)
    }

    #[test]
    fn loss_values() {
        assert_abs_diff_eq!(spec(LossKind::Logistic).eval(0.0), 2f64.ln(), epsilon = 1e-15);
        let g = spec(LossKind::Logistic);
        assert_abs_diff_eq!(g.eval(-3.0) - g.eval(3.0), 3.0, epsilon = 1e-12);
        assert_eq!(spec(LossKind::Sigmoid).eval(0.0), 0.5);
        assert_eq!(spec(LossKind::Hinge).eval(-1.0), 2.0);
        assert_eq!(spec(LossKind::Relu).eval(-1.0), 1.0);
    }

    #[test]
    fn logistic_is_stable_far_out() {
        let g = spec(LossKind::Logistic);
        assert_abs_diff_eq!(g.eval(-1000.0), 1000.0, epsilon = 1e-9);
        assert!(g.eval(1000.0) >= 0.0 && g.eval(1000.0) < 1e-300);
        let s = spec(LossKind::Sigmoid);
        assert_abs_diff_eq!(s.eval(-1000.0), 1.0, epsilon = 1e-15);
        assert!(s.derivative(1000.0).is_finite());
    }

    #[test]
    fn derivatives() {
        assert_abs_diff_eq!(spec(LossKind::Logistic).derivative(0.0), -0.5, epsilon = 1e-15);
        assert_eq!(spec(LossKind::Relu).derivative(3.0), 0.0);
        assert_abs_diff_eq!(spec(LossKind::Sigmoid).derivative(0.0), -0.25, epsilon = 1e-15);
        assert_eq!(spec(LossKind::Hinge).derivative(1.0), -1.0);
        assert_eq!(spec(LossKind::Relu).derivative(0.0), -1.0);
    }

    #[test]
    fn bounded_derivative_grid() {
        let pts = grid(-50.0, 50.0, 0.01);
        for kind in LossKind::ALL {
            let l = spec(kind);
            assert_eq!(check_bounded_derivative(&l, &pts).unwrap(), l.bounded_derivative());
        }
        let relu = spec(LossKind::Relu);
        assert!(!check_bounded_derivative(&relu, &[-0.5]).unwrap());
        let hinge = spec(LossKind::Hinge);
        assert!(!check_bounded_derivative(&hinge, &[0.5]).unwrap());
        assert!(check_bounded_derivative(&relu, &[]).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let relu = spec(LossKind::Relu).decompose();
        assert_eq!(relu.h(-2.0), 2.0);
        assert_eq!(relu.b(-2.0), 0.0);
        let sig = spec(LossKind::Sigmoid).decompose();
        assert_eq!(sig.h(-2.0), 0.0);
        assert_eq!(sig.b(-2.0), spec(LossKind::Sigmoid).eval(-2.0));
        let log = spec(LossKind::Logistic).decompose();
        assert_eq!(log.h(0.0), 0.0);
        assert_abs_diff_eq!(log.b(0.0), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn regularizers() {
        assert_eq!(RegKind::L2sq.eval(&[1.0, 1.0]), 2.0);
        assert_eq!(RegKind::L1.eval(&[1.0, -2.0]), 3.0);
        let d = 9;
        let h = (d - 1) / 2;
        let mut x = vec![0.0; d];
        x[d - 1] = 1.0;
        for v in x.iter_mut().take(h) {
            *v = -1.0 / (h as f64).sqrt();
        }
        assert_abs_diff_eq!(RegKind::L2sq.eval(&x), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(RegKind::L2.eval(&x), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn names_round_trip() {
        for kind in LossKind::ALL {
            assert_eq!(kind.name().parse::<LossKind>().unwrap(), kind);
        }
        for reg in [RegKind::L1, RegKind::L2, RegKind::L2sq] {
            assert_eq!(reg.name().parse::<RegKind>().unwrap(), reg);
        }
        assert!("square".parse::<LossKind>().is_err());
    }
}
