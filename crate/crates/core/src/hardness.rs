//! Hard instances: distributions with adversarial queries on which small
//! importance samples provably violate the relative-error guarantee, and the
//! deterministic predicates that detect the violation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{basis, ceil_tol, dot, norm2_sq};
use crate::losses::{LossKind, LossSpec, RegKind};
use crate::model::{Instance, ObjectiveSpec};
use crate::objective::{
    full_objective, Coreset, PreparedQueries, QuerySet, QueryTag, RelError,
};
use crate::sampler::{Convention, CountedSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HardKind {
    QuadLogistic,
    QuadSigmoid,
    QuadHinge,
    QuadRelu,
    LinRelu,
    LinLogistic,
    LinSigmoid,
    CouponRelu,
    MomentCurve,
}

impl HardKind {
    pub const ALL: [HardKind; 9] = [
        HardKind::QuadLogistic,
        HardKind::QuadSigmoid,
        HardKind::QuadHinge,
        HardKind::QuadRelu,
        HardKind::LinRelu,
        HardKind::LinLogistic,
        HardKind::LinSigmoid,
        HardKind::CouponRelu,
        HardKind::MomentCurve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HardKind::QuadLogistic => "quad-logistic",
            HardKind::QuadSigmoid => "quad-sigmoid",
            HardKind::QuadHinge => "quad-hinge",
            HardKind::QuadRelu => "quad-relu",
            HardKind::LinRelu => "lin-relu",
            HardKind::LinLogistic => "lin-logistic",
            HardKind::LinSigmoid => "lin-sigmoid",
            HardKind::CouponRelu => "coupon-relu",
            HardKind::MomentCurve => "moment-curve",
        }
    }

    /// Sampling convention the failure predicates assume.
    pub fn convention(self) -> Convention {
        match self {
            HardKind::LinRelu
            | HardKind::LinLogistic
            | HardKind::LinSigmoid
            | HardKind::MomentCurve => Convention::Proportional,
            _ => Convention::Mixture,
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            HardKind::QuadLogistic | HardKind::LinLogistic => LossKind::Logistic,
            HardKind::QuadSigmoid | HardKind::LinSigmoid => LossKind::Sigmoid,
            HardKind::QuadHinge => LossKind::Hinge,
            HardKind::QuadRelu
            | HardKind::LinRelu
            | HardKind::CouponRelu
            | HardKind::MomentCurve => LossKind::Relu,
        }
    }

    /// Regularizers the construction supports; the first is the default.
    pub fn regularizers(self) -> &'static [RegKind] {
        match self {
            HardKind::QuadLogistic | HardKind::QuadSigmoid => &[RegKind::L2],
            HardKind::QuadHinge | HardKind::QuadRelu => &[RegKind::L2sq, RegKind::L2],
            HardKind::LinRelu => &[RegKind::L1, RegKind::L2],
            HardKind::LinLogistic | HardKind::LinSigmoid => &[RegKind::L1, RegKind::L2sq],
            HardKind::CouponRelu | HardKind::MomentCurve => &[RegKind::L2sq],
        }
    }
}

impl fmt::Display for HardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HardKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Configuration(format!("unknown instance kind '{s}'")))
    }
}

/// Construction parameters recorded with a hard instance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HardParams {
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Number of atoms for the moment curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Ambient dimension.
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardInstance {
    pub kind: HardKind,
    pub instance: Instance,
    pub spec: ObjectiveSpec,
    /// Stored adversarial queries plus the origin.
    pub queries: QuerySet,
    /// For each query, the atom it isolates, if any.
    pub targets: Vec<Option<usize>>,
    pub params: HardParams,
}

impl HardInstance {
    pub fn convention(&self) -> Convention {
        self.kind.convention()
    }

    /// Stored queries other than the origin.
    pub fn adversarial(&self) -> impl Iterator<Item = (&[f64], Option<usize>)> {
        self.queries
            .queries()
            .iter()
            .zip(self.queries.tags())
            .zip(&self.targets)
            .filter(|((_, t), _)| **t != QueryTag::Origin)
            .map(|((q, _), target)| (q.as_slice(), *target))
    }

    /// Re-checks instance and query invariants, including the isolation
    /// sign pattern of every query that targets an atom.
    pub fn verify(&self) -> Result<()> {
        self.spec.validate()?;
        if self.targets.len() != self.queries.len() {
            return Err(Error::Construction("one target slot per query is required".into()));
        }
        if self.queries.dim() != self.instance.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.instance.dim(),
                got: self.queries.dim(),
            });
        }
        for (q, target) in self.queries.queries().iter().zip(&self.targets) {
            if let Some(j) = *target {
                if !isolates(&self.instance, j, q) {
                    return Err(Error::Construction(format!(
                        "query does not isolate atom {j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn isolates(instance: &Instance, j: usize, x: &[f64]) -> bool {
    instance.atoms().enumerate().all(|(i, a)| {
        let v = dot(a, x);
        if i == j {
            v < 0.0
        } else {
            v >= 0.0
        }
    })
}

fn check_reg(kind: HardKind, reg: RegKind) -> Result<()> {
    if kind.regularizers().contains(&reg) {
        Ok(())
    } else {
        Err(Error::Configuration(format!(
            "{kind} does not support regularizer {reg}"
        )))
    }
}

fn check_eps(eps: f64, hi: f64, closed: bool) -> Result<()> {
    if eps > 0.0 && (eps < hi || closed && eps == hi) {
        Ok(())
    } else {
        let close = if closed { ']' } else { ')' };
        Err(Error::InvalidInput(format!("eps must lie in (0, {hi}{close}, got {eps}")))
    }
}

fn check_k(k: f64) -> Result<()> {
    if k.is_finite() && k >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("k must be >= 1, got {k}")))
    }
}

fn unit_vectors(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|j| basis(d, j)).collect()
}

fn build(
    kind: HardKind,
    instance: Instance,
    reg: RegKind,
    k: f64,
    adversarial: Vec<(Vec<f64>, Option<usize>)>,
    params: HardParams,
) -> Result<HardInstance> {
    let spec = ObjectiveSpec::new(kind.loss(), reg, k)?;
    let dim = instance.dim();
    let mut targets: Vec<Option<usize>> = adversarial.iter().map(|(_, t)| *t).collect();
    let (queries, _): (Vec<_>, Vec<_>) = adversarial.into_iter().unzip();
    let tags = vec![QueryTag::Adversarial; queries.len()];
    let queries = QuerySet::new(dim, queries, tags)?;
    targets.resize(queries.len(), None);
    let hard = HardInstance {
        kind,
        instance,
        spec,
        queries,
        targets,
        params,
    };
    hard.verify()?;
    Ok(hard)
}

/// Dimension of the quadratic logistic construction.
pub fn quad_logistic_dim(k: f64, eps: f64) -> usize {
    (ceil_tol(2.0 * (k * 2f64.ln() / (40.0 * eps)).powi(2)) as usize).max(2)
}

pub fn quad_sigmoid_dim(k: f64, eps: f64) -> usize {
    (ceil_tol(2.0 * ((k / 2.0) / (50.0 * eps)).powi(2)) as usize).max(2)
}

pub fn quad_hinge_dim(k: f64, eps: f64) -> usize {
    (ceil_tol((k / (6.0 * eps)).powi(2)) as usize).max(2) + 1
}

pub fn quad_relu_dim(k: f64, eps: f64) -> usize {
    (ceil_tol((k / (6.0 * eps)).powi(2)) as usize).max(2)
}

fn quad_basis(kind: HardKind, k: f64, eps: f64, d: usize, reg: RegKind) -> Result<HardInstance> {
    let instance = Instance::uniform(unit_vectors(d))?;
    let mut hard = build(
        kind,
        instance,
        reg,
        k,
        vec![],
        HardParams {
            k,
            eps: Some(eps),
            dim: d,
            ..Default::default()
        },
    )?;
    let template: Vec<usize> = (0..adversarial_half(&hard)).collect();
    let x = quad_query(&hard, &template)?;
    let mut q = QuerySet::new(d, vec![x], vec![QueryTag::Adversarial])?;
    std::mem::swap(&mut hard.queries, &mut q);
    hard.targets = vec![None; hard.queries.len()];
    Ok(hard)
}

/// Uniform distribution on the unit vectors in dimension
/// `ceil(2 (k ln 2 / 40 eps)^2)`, with `l2` regularization.
pub fn gen_quad_logistic(k: f64, eps: f64) -> Result<HardInstance> {
    check_k(k)?;
    check_eps(eps, 0.1, false)?;
    quad_basis(HardKind::QuadLogistic, k, eps, quad_logistic_dim(k, eps), RegKind::L2)
}

/// Uniform distribution on the unit vectors in dimension
/// `ceil(2 ((k/2) / 50 eps)^2)`, with `l2` regularization.
pub fn gen_quad_sigmoid(k: f64, eps: f64) -> Result<HardInstance> {
    check_k(k)?;
    check_eps(eps, 0.1, false)?;
    quad_basis(HardKind::QuadSigmoid, k, eps, quad_sigmoid_dim(k, eps), RegKind::L2)
}

/// Atoms `e_d + e_j / sqrt 2` for `j < d - 1`, `d = ceil((k / 6 eps)^2) + 1`.
pub fn gen_quad_hinge(k: f64, eps: f64, reg: RegKind) -> Result<HardInstance> {
    check_k(k)?;
    check_eps(eps, 0.25, true)?;
    check_reg(HardKind::QuadHinge, reg)?;
    let d = quad_hinge_dim(k, eps);
    let rows = (0..d - 1)
        .map(|j| {
            let mut v = basis(d, d - 1);
            v[j] = std::f64::consts::FRAC_1_SQRT_2;
            v
        })
        .collect();
    let instance = Instance::uniform(rows)?;
    let mut hard = build(
        HardKind::QuadHinge,
        instance,
        reg,
        k,
        vec![],
        HardParams {
            k,
            eps: Some(eps),
            dim: d,
            ..Default::default()
        },
    )?;
    let template: Vec<usize> = (0..adversarial_half(&hard)).collect();
    let x = quad_query(&hard, &template)?;
    hard.queries = QuerySet::new(d, vec![x], vec![QueryTag::Adversarial])?;
    hard.targets = vec![None; hard.queries.len()];
    Ok(hard)
}

/// Uniform distribution on the unit vectors in dimension
/// `ceil((k / 6 eps)^2)`.
pub fn gen_quad_relu(k: f64, eps: f64, reg: RegKind) -> Result<HardInstance> {
    check_k(k)?;
    check_eps(eps, 0.25, true)?;
    check_reg(HardKind::QuadRelu, reg)?;
    quad_basis(HardKind::QuadRelu, k, eps, quad_relu_dim(k, eps), reg)
}

/// Number of atoms the adversarial query of a quadratic instance targets.
pub fn adversarial_half(hard: &HardInstance) -> usize {
    match hard.kind {
        HardKind::QuadHinge => hard.instance.len() / 2,
        _ => hard.instance.dim() / 2,
    }
}

/// Adversarial query of a quadratic instance aimed at the atoms in `set`.
pub fn quad_query(hard: &HardInstance, set: &[usize]) -> Result<Vec<f64>> {
    let d = hard.instance.dim();
    if set.is_empty() || set.iter().any(|&j| j >= hard.instance.len()) {
        return Err(Error::InvalidInput("adversarial set must be nonempty and in range".into()));
    }
    match hard.kind {
        HardKind::QuadLogistic | HardKind::QuadSigmoid => {
            let mut x = vec![0.0; d];
            set.iter().for_each(|&j| x[j] = 1.0);
            Ok(x)
        }
        HardKind::QuadHinge => {
            let mut x = basis(d, d - 1);
            let c = 1.0 / (set.len() as f64).sqrt();
            set.iter().for_each(|&j| x[j] = -c);
            Ok(x)
        }
        HardKind::QuadRelu => {
            // unit norm: negative on the set, positive elsewhere
            let c = 1.0 / (d as f64).sqrt();
            let mut x = vec![c; d];
            set.iter().for_each(|&j| x[j] = -c);
            Ok(x)
        }
        other => Err(Error::Configuration(format!("{other} has no quadratic query"))),
    }
}

/// Mass `1 / 2k` on each of `+e_j` and `-e_j`, `j < k`; the query for atom
/// `a` is `-a`.
pub fn gen_lin_relu(k: usize, reg: RegKind) -> Result<HardInstance> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be >= 2, got {k}")));
    }
    check_reg(HardKind::LinRelu, reg)?;
    let mut rows = Vec::with_capacity(2 * k);
    for j in 0..k {
        let e = basis(k, j);
        rows.push(e.clone());
        rows.push(e.iter().map(|v| -v).collect());
    }
    let queries = rows
        .iter()
        .enumerate()
        .map(|(i, a)| (a.iter().map(|v| -v).collect(), Some(i)))
        .collect();
    let instance = Instance::uniform(rows)?;
    build(
        HardKind::LinRelu,
        instance,
        reg,
        k as f64,
        queries,
        HardParams {
            k: k as f64,
            dim: k,
            ..Default::default()
        },
    )
}

/// `alpha` with `k g(alpha) = 1` for the logistic loss.
pub fn lin_logistic_alpha(k: f64) -> f64 {
    (1.0 / (1.0 / k).exp_m1()).ln()
}

/// `alpha` with `k g(alpha) = 1` for the sigmoid loss.
pub fn lin_sigmoid_alpha(k: f64) -> f64 {
    (k - 1.0).ln()
}

fn gen_lin_smooth(kind: HardKind, k: usize, reg: RegKind) -> Result<HardInstance> {
    if k < 4 {
        return Err(Error::InvalidInput(format!("k must be >= 4, got {k}")));
    }
    check_reg(kind, reg)?;
    let kf = k as f64;
    let alpha = match kind {
        HardKind::LinLogistic => lin_logistic_alpha(kf),
        _ => lin_sigmoid_alpha(kf),
    };
    let d = k + 1;
    let rows = (0..k)
        .map(|i| {
            let mut v = basis(d, i);
            v[k] = 1.0;
            v
        })
        .collect();
    let queries = (0..k)
        .map(|j| {
            let mut x = vec![0.0; d];
            x[j] = -2.0 * alpha;
            x[k] = alpha;
            (x, Some(j))
        })
        .collect();
    let instance = Instance::uniform(rows)?;
    build(
        kind,
        instance,
        reg,
        kf,
        queries,
        HardParams {
            k: kf,
            alpha: Some(alpha),
            dim: d,
            ..Default::default()
        },
    )
}

/// Uniform on `e_i + e_{k+1}` with queries `alpha (-2 e_j + e_{k+1})`.
pub fn gen_lin_logistic(k: usize, reg: RegKind) -> Result<HardInstance> {
    gen_lin_smooth(HardKind::LinLogistic, k, reg)
}

pub fn gen_lin_sigmoid(k: usize, reg: RegKind) -> Result<HardInstance> {
    gen_lin_smooth(HardKind::LinSigmoid, k, reg)
}

/// Uniform on the `d` unit vectors with query template `-alpha e_i`,
/// `alpha = 2k / 3d`; only `e_i` has positive loss there.
pub fn gen_coupon_relu(d: usize, k: f64) -> Result<HardInstance> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("d must be >= 2, got {d}")));
    }
    check_k(k)?;
    let alpha = 2.0 * k / (3.0 * d as f64);
    let instance = Instance::uniform(unit_vectors(d))?;
    build(
        HardKind::CouponRelu,
        instance,
        RegKind::L2sq,
        k,
        vec![(crate::linalg::scale(&basis(d, 0), -alpha), None)],
        HardParams {
            k,
            alpha: Some(alpha),
            dim: d,
            ..Default::default()
        },
    )
}

pub const MOMENT_ETAS: [f64; 3] = [1.0, 1e-3, 1e-6];

/// Uniform on `N` points `(1, t, ..., t^d)` of the moment curve, with an
/// isolating direction `x_j` per atom and queries `eta x_j`.
pub fn gen_moment_curve(
    n: usize,
    d: usize,
    t_values: Option<Vec<f64>>,
    k: f64,
) -> Result<HardInstance> {
    if d < 2 || n < d + 1 {
        return Err(Error::InvalidInput(format!(
            "need N >= d + 1 >= 3, got N={n}, d={d}"
        )));
    }
    check_k(k)?;
    let t = t_values.unwrap_or_else(|| (1..=n).map(|j| j as f64).collect());
    if t.len() != n {
        return Err(Error::InvalidInput(format!("expected {n} t-values, got {}", t.len())));
    }
    let mut sorted = t.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) || !t.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("t-values must be finite and distinct".into()));
    }
    let rows: Vec<Vec<f64>> = t.iter().map(|&tj| moment_point(tj, d)).collect();
    let instance = Instance::uniform(rows)?;
    let mut queries = Vec::with_capacity(n * MOMENT_ETAS.len());
    for j in 0..n {
        let x = isolating_direction(&instance, j)?;
        for eta in MOMENT_ETAS {
            queries.push((crate::linalg::scale(&x, eta), Some(j)));
        }
    }
    build(
        HardKind::MomentCurve,
        instance,
        RegKind::L2sq,
        k,
        queries,
        HardParams {
            k,
            n: Some(n),
            dim: d + 1,
            t_values: Some(t),
            etas: Some(MOMENT_ETAS.to_vec()),
            ..Default::default()
        },
    )
}

pub fn moment_point(t: f64, d: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(d + 1);
    let mut p = 1.0;
    for _ in 0..=d {
        v.push(p);
        p *= t;
    }
    v
}

// parameters t if every atom is (1, t, t^2, ...) with dimension >= 3
fn moment_parameters(instance: &Instance) -> Option<Vec<f64>> {
    if instance.dim() < 3 {
        return None;
    }
    instance
        .atoms()
        .map(|a| {
            let t = a[1];
            let on_curve = a[0] == 1.0
                && a.iter().enumerate().all(|(p, &v)| {
                    let want = t.powi(p as i32);
                    (v - want).abs() <= 1e-9 * want.abs().max(1.0)
                });
            on_curve.then_some(t)
        })
        .collect()
}

/// Quadratic `(t - l)(t - r)` around `t[j]`, negative only at `t[j]`.
fn polynomial_start(t: &[f64], j: usize, dim: usize) -> Option<Vec<f64>> {
    let tj = t[j];
    let below = t.iter().copied().filter(|&v| v < tj).fold(None, |m: Option<f64>, v| {
        Some(m.map_or(v, |m| m.max(v)))
    });
    let above = t.iter().copied().filter(|&v| v > tj).fold(None, |m: Option<f64>, v| {
        Some(m.map_or(v, |m| m.min(v)))
    });
    let (l, r) = match (below, above) {
        (Some(b), Some(a)) => ((b + tj) / 2.0, (tj + a) / 2.0),
        (None, Some(a)) => (tj - (a - tj), (tj + a) / 2.0),
        (Some(b), None) => ((b + tj) / 2.0, tj + (tj - b)),
        (None, None) => return None,
    };
    let mut x = vec![0.0; dim];
    x[0] = l * r;
    x[1] = -(l + r);
    x[2] = 1.0;
    Some(x)
}

const ISOLATION_SWEEPS: usize = 20_000;

/// Direction `x` with `<a_j, x> < 0` and `<a_i, x> >= 0` for every other atom.
///
/// Tries a closed-form start (a quadratic polynomial for points on the moment
/// curve, `-a_j` otherwise), then relaxed cyclic projections onto the
/// constraints `<a_j, x> <= -1`, `<a_i, x> >= 0`. The sign pattern is verified
/// before returning.
pub fn isolating_direction(instance: &Instance, j: usize) -> Result<Vec<f64>> {
    if j >= instance.len() {
        return Err(Error::InvalidInput(format!("atom index {j} out of range")));
    }
    if let Some(x) = moment_parameters(instance)
        .and_then(|t| polynomial_start(&t, j, instance.dim()))
        .filter(|x| isolates(instance, j, x))
    {
        return Ok(x);
    }
    let aj = instance.atom(j);
    let mut x: Vec<f64> = aj.iter().map(|v| -v).collect();
    if isolates(instance, j, &x) {
        return Ok(x);
    }
    // small positive target keeps rounding from landing just below zero
    let margin = 1e-9;
    let norms: Vec<f64> = instance.atoms().map(norm2_sq).collect();
    for _ in 0..ISOLATION_SWEEPS {
        let mut moved = false;
        for (i, a) in instance.atoms().enumerate() {
            if norms[i] == 0.0 {
                continue;
            }
            let v = dot(a, &x);
            let shift = if i == j {
                if v > -1.0 {
                    (-1.0 - v) / norms[i]
                } else {
                    0.0
                }
            } else if v < margin {
                (margin - v) / norms[i]
            } else {
                0.0
            };
            if shift != 0.0 {
                moved = true;
                for (xv, av) in x.iter_mut().zip(a) {
                    *xv += 1.5 * shift * av;
                }
            }
        }
        if !moved || isolates(instance, j, &x) {
            break;
        }
    }
    if isolates(instance, j, &x) {
        Ok(x)
    } else {
        Err(Error::Construction(format!(
            "no direction isolates atom {j}; it is not a vertex of the hull"
        )))
    }
}

/// Generator parameters for any hard instance kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub kind: HardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<RegKind>,
    /// Atom count for the moment curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Dimension for the coupon and moment-curve instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_values: Option<Vec<f64>>,
}

impl GenParams {
    pub fn new(kind: HardKind) -> Self {
        GenParams {
            kind,
            k: None,
            eps: None,
            reg: None,
            n: None,
            d: None,
            t_values: None,
        }
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = Some(eps);
        self
    }

    pub fn with_reg(mut self, reg: RegKind) -> Self {
        self.reg = Some(reg);
        self
    }
}

fn need<T: Copy>(v: Option<T>, name: &str, kind: HardKind) -> Result<T> {
    v.ok_or_else(|| Error::Configuration(format!("{kind} requires parameter '{name}'")))
}

fn whole(k: f64) -> Result<usize> {
    if k.fract() == 0.0 && k >= 0.0 && k.is_finite() {
        Ok(k as usize)
    } else {
        Err(Error::InvalidInput(format!("k must be an integer here, got {k}")))
    }
}

/// Builds the hard instance described by `params`.
pub fn generate(params: &GenParams) -> Result<HardInstance> {
    let kind = params.kind;
    let reg = params.reg.unwrap_or(kind.regularizers()[0]);
    check_reg(kind, reg)?;
    match kind {
        HardKind::QuadLogistic => gen_quad_logistic(
            need(params.k, "k", kind)?,
            need(params.eps, "eps", kind)?,
        ),
        HardKind::QuadSigmoid => gen_quad_sigmoid(
            need(params.k, "k", kind)?,
            need(params.eps, "eps", kind)?,
        ),
        HardKind::QuadHinge => gen_quad_hinge(
            need(params.k, "k", kind)?,
            need(params.eps, "eps", kind)?,
            reg,
        ),
        HardKind::QuadRelu => gen_quad_relu(
            need(params.k, "k", kind)?,
            need(params.eps, "eps", kind)?,
            reg,
        ),
        HardKind::LinRelu => gen_lin_relu(whole(need(params.k, "k", kind)?)?, reg),
        HardKind::LinLogistic => gen_lin_logistic(whole(need(params.k, "k", kind)?)?, reg),
        HardKind::LinSigmoid => gen_lin_sigmoid(whole(need(params.k, "k", kind)?)?, reg),
        HardKind::CouponRelu => gen_coupon_relu(
            need(params.d, "d", kind)?,
            need(params.k, "k", kind)?,
        ),
        HardKind::MomentCurve => gen_moment_curve(
            need(params.n, "n", kind)?,
            need(params.d, "d", kind)?,
            params.t_values.clone(),
            params.k.unwrap_or(1.0),
        ),
    }
}

/// Result of evaluating a hard instance's failure predicate on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureVerdict {
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_query: Option<Vec<f64>>,
    /// Index into the stored queries, when the witness is one of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_index: Option<usize>,
    pub counts: Vec<u32>,
    /// Relative-error tolerance the verdict was taken at.
    pub threshold: f64,
    /// Largest finite relative error over the evaluated queries.
    pub max_error: f64,
    /// Stored queries whose error exceeds the tolerance.
    pub violations: Vec<usize>,
}

/// Expected counts `mu_j = m q_j` and the count deviations the proofs use for
/// each target atom of a linear instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountThresholds {
    pub atoms: Vec<usize>,
    pub mu: Vec<f64>,
    pub deviation: Vec<f64>,
}

/// Per-atom sampling probabilities recovered from the sample's weights,
/// using `w = p / q`.
fn sample_probabilities(instance: &Instance, sample: &CountedSample) -> Vec<f64> {
    instance
        .masses()
        .iter()
        .zip(sample.weights.iter())
        .map(|(p, w)| p / w)
        .collect()
}

/// Count deviations at which the failure conditions trigger:
/// `3 eps mu_j` for signed basis vectors, `eps mu_j` on the moment curve, and
/// the one-sided thresholds `t_j` of the smooth linear instances.
pub fn count_thresholds(
    hard: &HardInstance,
    sample: &CountedSample,
    eps: f64,
) -> Result<CountThresholds> {
    let q = sample_probabilities(&hard.instance, sample);
    let m = sample.m as f64;
    let p = hard.spec.reg.degree() as i32;
    let alpha = hard.params.alpha.unwrap_or(0.0);
    let factor = match hard.kind {
        HardKind::LinRelu => 3.0,
        HardKind::MomentCurve => 1.0,
        HardKind::LinLogistic => 2.0 + 10.0 * alpha.powi(p - 1),
        HardKind::LinSigmoid => 4.0 + 20.0 * alpha.powi(p),
        other => {
            return Err(Error::Configuration(format!(
                "{other} has no count-based condition"
            )))
        }
    };
    let atoms: Vec<usize> = (0..hard.instance.len()).collect();
    let mu: Vec<f64> = atoms.iter().map(|&j| m * q[j]).collect();
    let deviation = mu.iter().map(|u| eps * u * factor).collect();
    Ok(CountThresholds {
        atoms,
        mu,
        deviation,
    })
}

/// Atoms whose counts meet the count failure condition. For the smooth
/// linear instances this is the one-sided event `N_j >= mu_j + t_j`, which is
/// sufficient for failure; otherwise the two-sided `|N_j - mu_j| > dev_j`.
pub fn count_events(hard: &HardInstance, sample: &CountedSample, eps: f64) -> Result<Vec<usize>> {
    let th = count_thresholds(hard, sample, eps)?;
    let one_sided = matches!(hard.kind, HardKind::LinLogistic | HardKind::LinSigmoid);
    Ok(th
        .atoms
        .iter()
        .filter(|&&j| {
            let n = sample.counts[j] as f64;
            if one_sided {
                n >= th.mu[j] + th.deviation[j]
            } else {
                (n - th.mu[j]).abs() > th.deviation[j]
            }
        })
        .copied()
        .collect())
}

/// Failure predicate of a hard instance, prepared once and applied to many
/// samples.
#[derive(Debug, Clone)]
pub struct FailureChecker<'a> {
    hard: &'a HardInstance,
    prepared: Option<PreparedQueries>,
}

impl<'a> FailureChecker<'a> {
    pub fn new(hard: &'a HardInstance) -> Result<Self> {
        let prepared = match hard.kind {
            HardKind::LinRelu
            | HardKind::LinLogistic
            | HardKind::LinSigmoid
            | HardKind::MomentCurve => Some(PreparedQueries::new(
                &hard.instance,
                &hard.spec,
                hard.queries.queries(),
            )?),
            _ => None,
        };
        Ok(FailureChecker { hard, prepared })
    }

    pub fn check(&self, sample: &CountedSample, eps: f64) -> Result<FailureVerdict> {
        let hard = self.hard;
        if sample.convention != hard.convention() {
            return Err(Error::Configuration(format!(
                "{} expects the {} convention, sample uses {}",
                hard.kind,
                hard.convention().name(),
                sample.convention.name()
            )));
        }
        if sample.counts.len() != hard.instance.len() {
            return Err(Error::DimensionMismatch {
                expected: hard.instance.len(),
                got: sample.counts.len(),
            });
        }
        match &self.prepared {
            Some(p) => Ok(self.check_stored(p, sample, eps)),
            None => self.check_resolved(sample, eps),
        }
    }

    fn check_stored(&self, prepared: &PreparedQueries, sample: &CountedSample, eps: f64) -> FailureVerdict {
        let errors = prepared.errors(sample);
        let mut max_error = 0.0f64;
        let mut worst: Option<(usize, f64)> = None;
        let mut violations = Vec::new();
        for (q, e) in errors.iter().enumerate() {
            if let Some(v) = e.value() {
                max_error = max_error.max(v);
                if v > eps {
                    violations.push(q);
                    if worst.is_none_or(|(_, w)| v > w) {
                        worst = Some((q, v));
                    }
                }
            }
        }
        FailureVerdict {
            failed: worst.is_some(),
            witness_query: worst.map(|(q, _)| self.hard.queries.queries()[q].clone()),
            witness_index: worst.map(|(q, _)| q),
            counts: sample.counts.clone(),
            threshold: eps,
            max_error,
            violations,
        }
    }

    fn check_resolved(&self, sample: &CountedSample, eps: f64) -> Result<FailureVerdict> {
        let hard = self.hard;
        let candidates: Vec<Vec<f64>> = match hard.kind {
            HardKind::CouponRelu => {
                match sample.counts.iter().position(|&c| c == 0) {
                    Some(i) => {
                        let alpha = hard.params.alpha.unwrap_or(0.0);
                        vec![crate::linalg::scale(&basis(hard.instance.dim(), i), -alpha)]
                    }
                    None => vec![],
                }
            }
            _ => {
                let mut order: Vec<usize> = (0..hard.instance.len()).collect();
                order.sort_by_key(|&i| (sample.counts[i], i));
                order.truncate(adversarial_half(hard));
                order.sort_unstable();
                vec![quad_query(hard, &order)?, vec![0.0; hard.instance.dim()]]
            }
        };
        let mut max_error = 0.0f64;
        let mut worst: Option<(usize, f64)> = None;
        for (c, x) in candidates.iter().enumerate() {
            let (f0, f) = full_objective(&hard.instance, &hard.spec, x)?;
            let h = sample.f0_hat(&hard.instance, &hard.spec.loss, x)?;
            if let Some(v) = RelError::from_values(f0, h, f).value() {
                max_error = max_error.max(v);
                if v > eps && worst.is_none_or(|(_, w)| v > w) {
                    worst = Some((c, v));
                }
            }
        }
        Ok(FailureVerdict {
            failed: worst.is_some(),
            witness_query: worst.map(|(c, _)| candidates[c].clone()),
            witness_index: None,
            counts: sample.counts.clone(),
            threshold: eps,
            max_error,
            violations: vec![],
        })
    }
}

/// Evaluates the instance's failure predicate on one sample.
pub fn check_failure(hard: &HardInstance, sample: &CountedSample, eps: f64) -> Result<FailureVerdict> {
    FailureChecker::new(hard)?.check(sample, eps)
}

/// `beta x`, the query scaling under which `g(beta r) / beta` tends to the
/// ReLU for the logistic and hinge losses.
pub fn reduction_scale(loss: LossKind, reg: RegKind, x: &[f64], beta: f64) -> Result<Vec<f64>> {
    if reg.degree() != 1 {
        return Err(Error::Applicability(
            "scaling reduction needs a degree-1 regularizer".into(),
        ));
    }
    if !matches!(loss, LossKind::Logistic | LossKind::Hinge | LossKind::Relu) {
        return Err(Error::Applicability(format!("{loss} has no ReLU limit")));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    Ok(crate::linalg::scale(x, beta))
}

/// `g(beta r) / beta`.
pub fn reduction_value(loss: &LossSpec, r: f64, beta: f64) -> f64 {
    loss.eval(beta * r) / beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn counted(counts: Vec<u32>, weights: Vec<f64>, convention: Convention) -> CountedSample {
        CountedSample {
            m: counts.iter().map(|&c| c as usize).sum(),
            counts,
            weights: weights.into(),
            convention,
        }
    }

    #[test]
    fn quad_dimensions() {
        assert_eq!(quad_logistic_dim(8.0, 0.05), 16);
        assert_eq!(quad_logistic_dim(40.0 * 0.05 / 2f64.ln(), 0.05), 2);
        assert_eq!(quad_sigmoid_dim(20.0, 0.1), 8);
        assert_eq!(quad_relu_dim(6.0, 1.0 / 6.0), 36);
        assert_eq!(quad_hinge_dim(6.0, 1.0 / 6.0), 37);
        assert!(gen_quad_logistic(8.0, 0.1).is_err());
        assert!(gen_quad_relu(8.0, 0.26, RegKind::L2).is_err());
        assert!(gen_quad_relu(8.0, 0.25, RegKind::L2).is_ok());
        assert!(gen_quad_relu(8.0, 0.2, RegKind::L1).is_err());
    }

    #[test]
    fn hinge_geometry() {
        let h = gen_quad_hinge(6.0, 1.0 / 6.0, RegKind::L2sq).unwrap();
        let d = h.instance.dim();
        for a in h.instance.atoms() {
            assert_abs_diff_eq!(norm2_sq(a), 1.5, epsilon = 1e-12);
        }
        let x = &h.queries.queries()[0];
        assert_abs_diff_eq!(RegKind::L2sq.eval(x), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(RegKind::L2.eval(x), 2f64.sqrt(), epsilon = 1e-12);
        let half = adversarial_half(&h);
        for (j, a) in h.instance.atoms().enumerate() {
            let r = dot(a, x);
            if j < half {
                assert_abs_diff_eq!(r, 1.0 - 1.0 / ((d - 1) as f64).sqrt(), epsilon = 1e-12);
            } else {
                assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
                assert_eq!(h.spec.loss.eval(r), 0.0);
            }
        }
    }

    #[test]
    fn relu_query_objective() {
        for reg in [RegKind::L2, RegKind::L2sq] {
            let h = gen_quad_relu(6.0, 1.0 / 6.0, reg).unwrap();
            let x = &h.queries.queries()[0];
            assert_abs_diff_eq!(reg.eval(x), 1.0, epsilon = 1e-12);
            let (_, f) = full_objective(&h.instance, &h.spec, x).unwrap();
            assert_abs_diff_eq!(f, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn logistic_query_objective() {
        let eps = 0.05;
        let h = gen_quad_logistic(8.0, eps).unwrap();
        let x = &h.queries.queries()[0];
        let (f0, _) = full_objective(&h.instance, &h.spec, x).unwrap();
        let c = (1.0 + (-1f64).exp()).ln() / (2.0 * 2f64.ln());
        assert_abs_diff_eq!(f0 / 2f64.ln(), 0.5 + c, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 0.225971, epsilon = 1e-6);
    }

    #[test]
    fn lin_relu_shape_and_predicate() {
        let h = gen_lin_relu(8, RegKind::L1).unwrap();
        assert_eq!(h.instance.len(), 16);
        assert_eq!(h.adversarial().count(), 16);
        let x = h.adversarial().next().unwrap().0.to_vec();
        let (f0, f) = full_objective(&h.instance, &h.spec, &x).unwrap();
        assert_abs_diff_eq!(f0, 1.0 / 16.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f, 3.0 / 16.0, epsilon = 1e-15);

        // k=10, m=100, constant scores: mu = 5, allowed deviation 1.5
        let h = gen_lin_relu(10, RegKind::L1).unwrap();
        let mut counts = vec![5u32; 20];
        counts[0] = 7;
        counts[1] = 3;
        let s = counted(counts, vec![1.0; 20], Convention::Proportional);
        let th = count_thresholds(&h, &s, 0.1).unwrap();
        assert_abs_diff_eq!(th.mu[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(th.deviation[0], 1.5, epsilon = 1e-12);
        assert_eq!(count_events(&h, &s, 0.1).unwrap(), vec![0, 1]);
        let v = check_failure(&h, &s, 0.1).unwrap();
        assert!(v.failed && v.witness_query.is_some());

        let exact = counted(vec![5; 20], vec![1.0; 20], Convention::Proportional);
        assert!(!check_failure(&h, &exact, 0.1).unwrap().failed);
        let wrong = counted(vec![5; 20], vec![1.0; 20], Convention::Mixture);
        assert!(matches!(check_failure(&h, &wrong, 0.1), Err(Error::Configuration(_))));
    }

    #[test]
    fn lin_smooth_alphas() {
        let a = lin_logistic_alpha(10.0);
        assert_abs_diff_eq!(a, 2.2522, epsilon = 1e-4);
        let g = LossSpec::new(LossKind::Logistic);
        assert_abs_diff_eq!(g.eval(a) * 10.0, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.eval(-a) - g.eval(a), a, epsilon = 1e-10);
        let b = lin_sigmoid_alpha(10.0);
        assert_abs_diff_eq!(b, 9f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(LossSpec::new(LossKind::Sigmoid).eval(b), 0.1, epsilon = 1e-15);

        let h = gen_lin_logistic(10, RegKind::L2sq).unwrap();
        for (x, t) in h.adversarial() {
            let j = t.unwrap();
            for (i, p) in h.instance.atoms().enumerate() {
                let want = if i == j { -a } else { a };
                assert_abs_diff_eq!(dot(p, x), want, epsilon = 1e-12);
            }
        }
        assert!(gen_lin_sigmoid(3, RegKind::L1).is_err());
    }

    #[test]
    fn coupon_shape() {
        let h = gen_coupon_relu(3, 9.0).unwrap();
        assert_eq!(h.params.alpha, Some(2.0));
        let x = &h.queries.queries()[0];
        let (_, f) = full_objective(&h.instance, &h.spec, x).unwrap();
        assert_abs_diff_eq!(f, 2.0 / 3.0 + 4.0 / 9.0, epsilon = 1e-12);

        let h = gen_coupon_relu(8, 9.0).unwrap();
        let mut counts = vec![2u32; 8];
        counts[3] = 0;
        let s = counted(counts, vec![1.0; 8], Convention::Mixture);
        let v = check_failure(&h, &s, 0.25).unwrap();
        assert!(v.failed);
        assert_abs_diff_eq!(v.max_error, 0.6, epsilon = 1e-12);
        assert_eq!(v.witness_query.unwrap()[3], -2.0 * 9.0 / 24.0);
        let full = counted(vec![1; 8], vec![1.0; 8], Convention::Mixture);
        assert!(!check_failure(&h, &full, 0.25).unwrap().failed);
    }

    #[test]
    fn moment_curve_examples() {
        let inst = Instance::uniform((1..=4).map(|t| moment_point(t as f64, 2)).collect()).unwrap();
        let x = isolating_direction(&inst, 0).unwrap();
        assert_eq!(x, vec![0.0, -1.5, 1.0]);
        let margins: Vec<f64> = inst.atoms().map(|a| dot(a, &x)).collect();
        assert_eq!(margins, vec![-0.5, 1.0, 4.5, 10.0]);
        let x = isolating_direction(&inst, 1).unwrap();
        assert_eq!(x, vec![3.75, -4.0, 1.0]);
        let margins: Vec<f64> = inst.atoms().map(|a| dot(a, &x)).collect();
        assert_eq!(margins, vec![0.75, -0.25, 0.75, 3.75]);

        let h = gen_moment_curve(6, 2, None, 6.0).unwrap();
        assert_eq!(h.instance.len(), 6);
        assert_eq!(h.adversarial().count(), 18);
        h.verify().unwrap();
    }

    #[test]
    fn isolation_generic_cases() {
        let line = Instance::uniform(vec![vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(isolating_direction(&line, 0).unwrap(), vec![1.0]);
        let triple = Instance::uniform(vec![vec![-1.0], vec![0.5], vec![1.0]]).unwrap();
        assert!(matches!(
            isolating_direction(&triple, 1),
            Err(Error::Construction(_))
        ));
        // a vertex that -a_j alone does not isolate
        let pts = Instance::uniform(vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, -1.0], vec![1.0, 3.0]])
            .unwrap();
        let x = isolating_direction(&pts, 3).unwrap();
        assert!(isolates(&pts, 3, &x));
    }

    #[test]
    fn reduction_examples() {
        let log = LossSpec::new(LossKind::Logistic);
        assert_abs_diff_eq!(reduction_value(&log, -1.0, 1e6), 1.0, epsilon = 1e-6);
        let hinge = LossSpec::new(LossKind::Hinge);
        assert_abs_diff_eq!(reduction_value(&hinge, -1.0, 1e3), 1001.0 / 1000.0, epsilon = 1e-15);
        assert_eq!(reduction_scale(LossKind::Hinge, RegKind::L1, &[1.0, 2.0], 1.0).unwrap(), vec![1.0, 2.0]);
        assert!(reduction_scale(LossKind::Hinge, RegKind::L2sq, &[1.0], 2.0).is_err());
    }

    #[test]
    fn generate_dispatch() {
        let h = generate(&GenParams::new(HardKind::LinRelu).with_k(8.0)).unwrap();
        assert_eq!(h.spec.reg, RegKind::L1);
        assert_eq!(h.instance.len(), 16);
        assert!(generate(&GenParams::new(HardKind::LinRelu).with_k(1.0)).is_err());
        assert!(generate(&GenParams::new(HardKind::LinRelu).with_k(8.5)).is_err());
        assert!(matches!(
            generate(&GenParams::new(HardKind::QuadRelu).with_k(8.0)),
            Err(Error::Configuration(_))
        ));
        let mut p = GenParams::new(HardKind::MomentCurve);
        p.n = Some(6);
        p.d = Some(2);
        assert_eq!(generate(&p).unwrap().adversarial().count(), 18);
        let h = generate(&GenParams::new(HardKind::QuadHinge).with_k(8.0).with_eps(0.25)).unwrap();
        assert_eq!(h.spec.reg, RegKind::L2sq);
        assert_eq!(h.instance.dim(), 30);
    }

    #[test]
    fn kinds_round_trip() {
        for k in HardKind::ALL {
            assert_eq!(k.name().parse::<HardKind>().unwrap(), k);
        }
    }
}
