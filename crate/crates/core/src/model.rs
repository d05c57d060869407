//! Finite weighted instances, objective configuration and derived constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm2};
use crate::losses::{LossKind, LossSpec, RegKind};
use crate::sampler::ScoreKind;

/// A finite distribution: atoms `a_i` in `R^dim` with masses `p_i`.
///
/// Atoms are stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    dim: usize,
    atoms: Vec<f64>,
    masses: Vec<f64>,
}

impl Instance {
    /// Builds an instance from rows and masses. Masses must sum to 1 within
    /// 1e-9; sums off by more than rounding are renormalized.
    pub fn new(rows: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::InvalidInput("instance has no atoms".into()))?;
        let mut atoms = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            atoms.extend_from_slice(row);
        }
        Self::from_flat(dim, atoms, masses)
    }

    pub fn from_flat(dim: usize, atoms: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if masses.is_empty() {
            return Err(Error::InvalidInput("instance has no atoms".into()));
        }
        if atoms.len() != dim * masses.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * masses.len(),
                got: atoms.len(),
            });
        }
        if !all_finite(&atoms) {
            return Err(Error::InvalidInput("non-finite atom coordinate".into()));
        }
        if masses.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::InvalidInput("masses must be positive and finite".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("masses sum to {total}, not 1")));
        }
        let masses = if (total - 1.0).abs() > 1e-12 {
            masses.into_iter().map(|p| p / total).collect()
        } else {
            masses
        };
        Ok(Instance { dim, atoms, masses })
    }

    /// Uniform masses over the given rows.
    pub fn uniform(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        Self::new(rows, vec![1.0 / n as f64; n])
    }

    /// Masses proportional to nonnegative weights.
    pub fn from_weights(rows: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidInput("weights must have positive finite sum".into()));
        }
        Self::new(rows, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    #[inline]
    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn flat_atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.dim)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.atoms().map(norm2).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.atoms().map(norm2).fold(0.0, f64::max)
    }

    fn scaled_atoms(&self, factor: f64) -> Instance {
        Instance {
            dim: self.dim,
            atoms: self.atoms.iter().map(|v| v * factor).collect(),
            masses: self.masses.clone(),
        }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Loss, regularizer and regularization parameter `k` of
/// `f(x) = sum_i p_i g(<a_i, x>) + R(x) / k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub loss: LossSpec,
    pub reg: RegKind,
    pub k: f64,
}

impl ObjectiveSpec {
    pub fn new(loss: LossKind, reg: RegKind, k: f64) -> Result<Self> {
        let spec = ObjectiveSpec {
            loss: LossSpec::new(loss),
            reg,
            k,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k >= 1.0) {
            return Err(Error::InvalidInput(format!("k must be >= 1, got {}", self.k)));
        }
        Ok(())
    }

    #[inline]
    pub fn reg_term(&self, x: &[f64]) -> f64 {
        self.reg.eval(x) / self.k
    }
}

/// Scalar summaries of an instance under a score and loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Lipschitz constant used in formulas.
    pub l: f64,
    pub l_tight: f64,
    /// Mean norm, or mean squared norm for the squared-norm score.
    pub b: f64,
    /// Largest atom norm.
    pub d: f64,
    /// Score mass `sum_i p_i s(a_i)`.
    pub s: f64,
    pub g0: f64,
}

/// Multiplies a feature vector by its label.
pub fn fold_label(z: &[f64], y: i8) -> Result<Vec<f64>> {
    if !all_finite(z) {
        return Err(Error::InvalidInput("non-finite feature".into()));
    }
    let sign = match y {
        1 => 1.0,
        -1 => -1.0,
        _ => return Err(Error::InvalidInput(format!("label must be +1 or -1, got {y}"))),
    };
    Ok(z.iter().map(|v| sign * v).collect())
}

pub fn compute_constants(instance: &Instance, score: ScoreKind, loss: &LossSpec) -> Constants {
    let d = instance.max_norm();
    let squared = score.power() == 2;
    let mut b = 0.0;
    let mut s = 0.0;
    for (a, &p) in instance.atoms().zip(instance.masses()) {
        let n = norm2(a);
        b += p * if squared { n * n } else { n };
        s += p * score.eval_with_max(n, d);
    }
    Constants {
        l: loss.lipschitz_formula(),
        l_tight: loss.lipschitz_tight(),
        b,
        d,
        s,
        g0: loss.g0(),
    }
}

/// Rescales atoms by `1/B` and the loss by `1/L`, with `k' = L B k`, so that
/// the rescaled pair has `B' = L' = 1`. Only valid for degree-1 regularizers.
pub fn normalize_instance(
    instance: &Instance,
    spec: &ObjectiveSpec,
) -> Result<(Instance, ObjectiveSpec)> {
    if spec.reg == RegKind::L2sq {
        return Err(Error::UnsupportedNormalization(spec.reg.name().into()));
    }
    let c = compute_constants(instance, ScoreKind::NormPlus1, &spec.loss);
    if c.b <= 0.0 {
        return Err(Error::DegenerateInstance("mean norm B is zero".into()));
    }
    let scaled = instance.scaled_atoms(1.0 / c.b);
    let out = ObjectiveSpec {
        loss: spec.loss.scaled(1.0 / c.l),
        reg: spec.reg,
        k: c.l * c.b * spec.k,
    };
    Ok((scaled, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fold_label_examples() {
        assert_eq!(fold_label(&[1.0, 2.0], 1).unwrap(), vec![1.0, 2.0]);
        assert_eq!(fold_label(&[1.0, 2.0], -1).unwrap(), vec![-1.0, -2.0]);
        assert_eq!(fold_label(&[0.0, 0.0], -1).unwrap(), vec![0.0, 0.0]);
        assert!(fold_label(&[f64::NAN], 1).is_err());
        assert!(fold_label(&[1.0], 0).is_err());
    }

    #[test]
    fn instance_validation() {
        assert!(Instance::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
        assert!(Instance::new(vec![vec![1.0], vec![2.0]], vec![0.5, 0.6]).is_err());
        assert!(Instance::new(vec![vec![1.0], vec![2.0]], vec![1.0, 0.0]).is_err());
        assert!(Instance::new(vec![vec![f64::INFINITY]], vec![1.0]).is_err());
        let inst = Instance::uniform(vec![vec![1.0]; 3]).unwrap();
        let total: f64 = inst.masses().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn constants_examples() {
        let logistic = LossSpec::new(LossKind::Logistic);
        let inst = Instance::uniform(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let c = compute_constants(&inst, ScoreKind::NormPlus1, &logistic);
        assert_abs_diff_eq!(c.b, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.s, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.d, 1.0, epsilon = 1e-15);

        let zero = Instance::uniform(vec![vec![0.0, 0.0]]).unwrap();
        let c = compute_constants(&zero, ScoreKind::NormPlus1, &logistic);
        assert_eq!((c.b, c.s), (0.0, 1.0));

        let two = Instance::uniform(vec![vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let c = compute_constants(&two, ScoreKind::SqNormPlus2, &logistic);
        assert_abs_diff_eq!(c.b, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.s, 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.g0, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let unit = Instance::uniform(vec![vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let spec = ObjectiveSpec::new(LossKind::Hinge, RegKind::L1, 10.0).unwrap();
        let (inst, s) = normalize_instance(&unit, &spec).unwrap();
        assert_eq!(inst, unit);
        assert_abs_diff_eq!(s.k, 10.0, epsilon = 1e-12);

        let big = Instance::uniform(vec![vec![2.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let (inst, s) = normalize_instance(&big, &spec).unwrap();
        assert_eq!(inst.atom(0), &[1.0, 0.0]);
        assert_abs_diff_eq!(s.k, 20.0, epsilon = 1e-12);

        let ridge = ObjectiveSpec::new(LossKind::Hinge, RegKind::L2sq, 10.0).unwrap();
        assert!(matches!(
            normalize_instance(&big, &ridge),
            Err(Error::UnsupportedNormalization(_))
        ));
        let zero = Instance::uniform(vec![vec![0.0]]).unwrap();
        assert!(matches!(
            normalize_instance(&zero, &spec),
            Err(Error::DegenerateInstance(_))
        ));
    }

    #[test]
    fn k_must_be_at_least_one() {
        assert!(ObjectiveSpec::new(LossKind::Relu, RegKind::L1, 0.5).is_err());
        assert!(ObjectiveSpec::new(LossKind::Relu, RegKind::L1, 2.5).is_ok());
    }
}
