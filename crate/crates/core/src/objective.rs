//! Exact and subsampled objective values, relative errors, OPT estimation and
//! theorem-based sample sizes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, ceil_tol, dot, norm2};
use crate::losses::{LossKind, LossSpec, RegKind};
use crate::model::{compute_constants, Constants, Instance, ObjectiveSpec};
use crate::rng;
use crate::sampler::{CountedSample, ScoreKind, WeightedSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryTag {
    Adversarial,
    RandomGaussian,
    RandomSparse,
    Grid,
    Origin,
}

impl QueryTag {
    pub fn name(self) -> &'static str {
        match self {
            QueryTag::Adversarial => "adversarial",
            QueryTag::RandomGaussian => "random-gaussian",
            QueryTag::RandomSparse => "random-sparse",
            QueryTag::Grid => "grid",
            QueryTag::Origin => "origin",
        }
    }
}

impl fmt::Display for QueryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adversarial" => Ok(QueryTag::Adversarial),
            "random-gaussian" => Ok(QueryTag::RandomGaussian),
            "random-sparse" => Ok(QueryTag::RandomSparse),
            "grid" => Ok(QueryTag::Grid),
            "origin" => Ok(QueryTag::Origin),
            other => Err(Error::Configuration(format!("unknown query tag '{other}'"))),
        }
    }
}

/// Finite set of query points, always containing the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    dim: usize,
    queries: Vec<Vec<f64>>,
    tags: Vec<QueryTag>,
}

impl QuerySet {
    /// Validates the queries and appends the origin if it is missing.
    pub fn new(dim: usize, queries: Vec<Vec<f64>>, tags: Vec<QueryTag>) -> Result<Self> {
        if queries.len() != tags.len() {
            return Err(Error::InvalidInput("one tag per query is required".into()));
        }
        for q in &queries {
            if q.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: q.len(),
                });
            }
            if !all_finite(q) {
                return Err(Error::InvalidInput("non-finite query".into()));
            }
        }
        let mut set = QuerySet { dim, queries, tags };
        if !set.queries.iter().any(|q| q.iter().all(|&v| v == 0.0)) {
            set.queries.push(vec![0.0; dim]);
            set.tags.push(QueryTag::Origin);
        }
        Ok(set)
    }

    pub fn origin(dim: usize) -> Self {
        QuerySet {
            dim,
            queries: vec![vec![0.0; dim]],
            tags: vec![QueryTag::Origin],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[Vec<f64>] {
        &self.queries
    }

    pub fn tags(&self) -> &[QueryTag] {
        &self.tags
    }

    pub fn get(&self, i: usize) -> (&[f64], QueryTag) {
        (&self.queries[i], self.tags[i])
    }

    /// Appends another set, keeping a single origin.
    pub fn extend(&mut self, other: &QuerySet) {
        for (q, &t) in other.queries.iter().zip(&other.tags) {
            if t == QueryTag::Origin {
                continue;
            }
            self.queries.push(q.clone());
            self.tags.push(t);
        }
    }
}

/// Random probe queries: unit Gaussian directions at radii
/// `{0.1, 1, sqrt k, k, 10 k}`, sums of up to three signed basis vectors, and
/// the origin.
pub fn probe_queries(dim: usize, k: f64, directions: usize, sparse: usize, seed: u64) -> QuerySet {
    let mut rng = rng::stream(seed, rng::stream_id(&[0x7072_6f62, dim as u64]));
    let radii = [0.1, 1.0, k.sqrt(), k, 10.0 * k];
    let mut queries = Vec::with_capacity(directions * radii.len() + sparse + 1);
    let mut tags = Vec::with_capacity(queries.capacity());
    for _ in 0..directions {
        let mut u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&u).max(f64::MIN_POSITIVE);
        u.iter_mut().for_each(|v| *v /= n);
        for r in radii {
            queries.push(u.iter().map(|v| v * r).collect());
            tags.push(QueryTag::RandomGaussian);
        }
    }
    for _ in 0..sparse {
        let mut x = vec![0.0; dim];
        let nnz = rng.random_range(1..=dim.min(3));
        for _ in 0..nnz {
            let j = rng.random_range(0..dim);
            x[j] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        queries.push(x);
        tags.push(QueryTag::RandomSparse);
    }
    queries.push(vec![0.0; dim]);
    tags.push(QueryTag::Origin);
    QuerySet { dim, queries, tags }
}

/// `(f0(x), f(x))` with `f0 = sum_i p_i g(<a_i, x>)` and `f = f0 + R(x)/k`.
pub fn full_objective(instance: &Instance, spec: &ObjectiveSpec, x: &[f64]) -> Result<(f64, f64)> {
    instance.check_dim(x)?;
    let f0: f64 = instance
        .atoms()
        .zip(instance.masses())
        .map(|(a, &p)| p * spec.loss.eval(dot(a, x)))
        .sum();
    Ok((f0, f0 + spec.reg_term(x)))
}

/// A weighted subsample that can estimate `f0`.
pub trait Coreset {
    /// `(1/m) sum_i w_i g(<a_i, x>)`.
    fn f0_hat(&self, instance: &Instance, loss: &LossSpec, x: &[f64]) -> Result<f64>;
}

impl Coreset for [WeightedSample] {
    fn f0_hat(&self, _instance: &Instance, loss: &LossSpec, x: &[f64]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Precondition("empty sample".into()));
        }
        let mut total = 0.0;
        for s in self {
            if s.a.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: s.a.len(),
                    got: x.len(),
                });
            }
            total += s.w * loss.eval(dot(&s.a, x));
        }
        Ok(total / self.len() as f64)
    }
}

impl Coreset for Vec<WeightedSample> {
    fn f0_hat(&self, instance: &Instance, loss: &LossSpec, x: &[f64]) -> Result<f64> {
        self.as_slice().f0_hat(instance, loss, x)
    }
}

impl Coreset for CountedSample {
    fn f0_hat(&self, instance: &Instance, loss: &LossSpec, x: &[f64]) -> Result<f64> {
        if self.m == 0 {
            return Err(Error::Precondition("empty sample".into()));
        }
        if self.counts.len() != instance.len() {
            return Err(Error::DimensionMismatch {
                expected: instance.len(),
                got: self.counts.len(),
            });
        }
        instance.check_dim(x)?;
        let total: f64 = self
            .support()
            .map(|(i, c)| c as f64 * self.weights[i] * loss.eval(dot(instance.atom(i), x)))
            .sum();
        Ok(total / self.m as f64)
    }
}

/// `(f0_hat(x), f0_hat(x) + R(x)/k)`.
pub fn coreset_objective<C: Coreset + ?Sized>(
    instance: &Instance,
    coreset: &C,
    spec: &ObjectiveSpec,
    x: &[f64],
) -> Result<(f64, f64)> {
    let f0 = coreset.f0_hat(instance, &spec.loss, x)?;
    Ok((f0, f0 + spec.reg_term(x)))
}

/// Relative error, or a flag when `f(x) = 0` makes it undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "value")]
pub enum RelError {
    Finite(f64),
    ZeroObjective,
}

impl RelError {
    pub fn from_values(f0: f64, f0_hat: f64, f: f64) -> Self {
        if f > 0.0 {
            RelError::Finite((f0 - f0_hat).abs() / f)
        } else {
            RelError::ZeroObjective
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            RelError::Finite(v) => Some(v),
            RelError::ZeroObjective => None,
        }
    }

    pub fn exceeds(self, eps: f64) -> bool {
        matches!(self, RelError::Finite(v) if v > eps)
    }
}

/// `|f0(x) - f0_hat(x)| / f(x)`.
pub fn relative_error<C: Coreset + ?Sized>(
    instance: &Instance,
    spec: &ObjectiveSpec,
    coreset: &C,
    x: &[f64],
) -> Result<RelError> {
    let (f0, f) = full_objective(instance, spec, x)?;
    let f0_hat = coreset.f0_hat(instance, &spec.loss, x)?;
    Ok(RelError::from_values(f0, f0_hat, f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxError {
    pub max: f64,
    pub argmax: usize,
    pub errors: Vec<RelError>,
    /// Queries skipped because `f(x) = 0` there.
    pub zero_objective: Vec<usize>,
}

pub fn max_relative_error<C: Coreset + ?Sized>(
    instance: &Instance,
    spec: &ObjectiveSpec,
    coreset: &C,
    queries: &QuerySet,
) -> Result<MaxError> {
    let errors = queries
        .queries()
        .iter()
        .map(|x| relative_error(instance, spec, coreset, x))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(usize, f64)> = None;
    let mut zero_objective = Vec::new();
    for (i, e) in errors.iter().enumerate() {
        match e.value() {
            Some(v) if best.is_none_or(|(_, b)| v > b) => best = Some((i, v)),
            Some(_) => {}
            None => zero_objective.push(i),
        }
    }
    let (argmax, max) = best.ok_or_else(|| {
        Error::Precondition("no query with positive objective to evaluate".into())
    })?;
    Ok(MaxError {
        max,
        argmax,
        errors,
        zero_objective,
    })
}

/// Loss values of every atom at a fixed list of queries, so that subsampled
/// objectives at those queries cost one pass over the sampled atoms.
#[derive(Debug, Clone)]
pub struct PreparedQueries {
    nq: usize,
    // table[i * nq + q] = g(<a_i, x_q>)
    table: Vec<f64>,
    f0: Vec<f64>,
    f: Vec<f64>,
}

impl PreparedQueries {
    pub fn new(instance: &Instance, spec: &ObjectiveSpec, queries: &[Vec<f64>]) -> Result<Self> {
        let nq = queries.len();
        for x in queries {
            instance.check_dim(x)?;
        }
        let mut table = vec![0.0; instance.len() * nq];
        for (i, a) in instance.atoms().enumerate() {
            for (q, x) in queries.iter().enumerate() {
                table[i * nq + q] = spec.loss.eval(dot(a, x));
            }
        }
        let mut f0 = vec![0.0; nq];
        for (i, &p) in instance.masses().iter().enumerate() {
            for q in 0..nq {
                f0[q] += p * table[i * nq + q];
            }
        }
        let f = f0
            .iter()
            .zip(queries)
            .map(|(v, x)| v + spec.reg_term(x))
            .collect();
        Ok(PreparedQueries { nq, table, f0, f })
    }

    pub fn len(&self) -> usize {
        self.nq
    }

    pub fn is_empty(&self) -> bool {
        self.nq == 0
    }

    pub fn exact(&self, q: usize) -> (f64, f64) {
        (self.f0[q], self.f[q])
    }

    /// Subsampled `f0` at every query.
    pub fn f0_hat(&self, sample: &CountedSample) -> Vec<f64> {
        let mut out = vec![0.0; self.nq];
        for (i, c) in sample.support() {
            let cw = c as f64 * sample.weights[i];
            let row = &self.table[i * self.nq..(i + 1) * self.nq];
            for (o, v) in out.iter_mut().zip(row) {
                *o += cw * v;
            }
        }
        let m = sample.m as f64;
        out.iter_mut().for_each(|v| *v /= m);
        out
    }

    pub fn errors(&self, sample: &CountedSample) -> Vec<RelError> {
        self.f0_hat(sample)
            .into_iter()
            .enumerate()
            .map(|(q, h)| RelError::from_values(self.f0[q], h, self.f[q]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptReport {
    pub opt_value: f64,
    pub minimizer: Vec<f64>,
    pub analytic_lower: f64,
    pub analytic_upper: f64,
}

/// Lower bound on `inf_x f(x)`: `g(0)^2 / (4 (LB)^2 k)` for squared `l2`
/// regularization and `g(0) / (LBk)` otherwise.
pub fn opt_lower_bound(loss: &LossSpec, reg: RegKind, k: f64, l: f64, b: f64) -> Result<f64> {
    if !(l > 0.0 && b > 0.0) {
        return Err(Error::InvalidInput(format!("L and B must be positive, got {l}, {b}")));
    }
    let g0 = loss.g0();
    let lb = l * b;
    Ok(match reg {
        RegKind::L2sq => g0 * g0 / (4.0 * lb * lb * k),
        RegKind::L1 | RegKind::L2 => g0 / (lb * k),
    })
}

/// Subgradient of `f` at `x`, written into `grad`.
fn subgradient(instance: &Instance, spec: &ObjectiveSpec, x: &[f64], grad: &mut [f64]) {
    spec.reg.subgradient(x, grad);
    grad.iter_mut().for_each(|g| *g /= spec.k);
    for (a, &p) in instance.atoms().zip(instance.masses()) {
        let d = p * spec.loss.derivative(dot(a, x));
        if d != 0.0 {
            for (g, v) in grad.iter_mut().zip(a) {
                *g += d * v;
            }
        }
    }
}

const OPT_ITERATIONS: usize = 2000;

fn descend(instance: &Instance, spec: &ObjectiveSpec, x0: Vec<f64>) -> (f64, Vec<f64>) {
    let c = norm2(&x0) + 1.0;
    let mut x = x0;
    let mut grad = vec![0.0; x.len()];
    let eval = |x: &[f64]| {
        let f0: f64 = instance
            .atoms()
            .zip(instance.masses())
            .map(|(a, &p)| p * spec.loss.eval(dot(a, x)))
            .sum();
        f0 + spec.reg_term(x)
    };
    let mut best = (eval(&x), x.clone());
    for t in 1..=OPT_ITERATIONS {
        subgradient(instance, spec, &x, &mut grad);
        let gn = norm2(&grad);
        if gn == 0.0 {
            break;
        }
        let step = c / (t as f64).sqrt() / gn.max(1.0);
        for (v, g) in x.iter_mut().zip(&grad) {
            *v -= step * g;
        }
        let fx = eval(&x);
        if fx < best.0 {
            best = (fx, x.clone());
        }
    }
    best
}

/// Best value of `f` found by subgradient descent from the origin and
/// `restarts - 1` Gaussian starting points.
pub fn estimate_opt(
    instance: &Instance,
    spec: &ObjectiveSpec,
    restarts: usize,
    seed: u64,
) -> Result<OptReport> {
    if restarts == 0 {
        return Err(Error::Precondition("at least one restart is required".into()));
    }
    let dim = instance.dim();
    let runs: Vec<(f64, Vec<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let x0 = if r == 0 {
                vec![0.0; dim]
            } else {
                let mut rng = rng::stream(seed, r as u64);
                let scale = 1.0 / (dim as f64).sqrt();
                (0..dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            descend(instance, spec, x0)
        })
        .collect();
    let (opt_value, minimizer) = runs
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one run");
    let g0 = spec.loss.g0();
    if !opt_value.is_finite() || opt_value > g0 + 1e-9 {
        return Err(Error::OptimizerFailure(format!(
            "best value {opt_value} exceeds f(0) = {g0}"
        )));
    }
    let c = compute_constants(instance, ScoreKind::NormPlus1, &spec.loss);
    let analytic_lower = if c.b > 0.0 {
        opt_lower_bound(&spec.loss, spec.reg, spec.k, c.l, c.b)?
    } else {
        g0
    };
    Ok(OptReport {
        opt_value,
        minimizer,
        analytic_lower,
        analytic_upper: g0,
    })
}

/// Share `w g(<a, x>) / f(x)` of one sampled atom in the objective.
pub fn sensitivity(
    sample: &WeightedSample,
    instance: &Instance,
    spec: &ObjectiveSpec,
    x: &[f64],
) -> Result<RelError> {
    let (_, f) = full_objective(instance, spec, x)?;
    if f <= 0.0 {
        return Ok(RelError::ZeroObjective);
    }
    Ok(RelError::Finite(sample.w * spec.loss.eval(dot(&sample.a, x)) / f))
}

/// `16 S B L^2 k / g(0)`.
pub fn sensitivity_bound(c: &Constants, k: f64) -> f64 {
    16.0 * c.s * c.b * c.l * c.l * k / c.g0
}

/// Constants for [`sensitivity_bound`]: `S` from the squared-norm score and
/// `B` the mean norm.
pub fn sensitivity_constants(instance: &Instance, loss: &LossSpec) -> Constants {
    let mut c = compute_constants(instance, ScoreKind::SqNormPlus2, loss);
    c.b = compute_constants(instance, ScoreKind::NormPlus1, loss).b;
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    /// Norm sampling for any Lipschitz loss.
    NormSampling,
    /// Squared `l2` regularization with `|g'| <= g`.
    BoundedDerivative,
    /// `l1` regularization for any Lipschitz loss.
    GeneralL1,
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norm-sampling" => Ok(Theorem::NormSampling),
            "bounded-derivative" => Ok(Theorem::BoundedDerivative),
            "general-l1" => Ok(Theorem::GeneralL1),
            other => Err(Error::Configuration(format!("unknown theorem '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeRequest {
    pub theorem: Theorem,
    pub loss: LossSpec,
    pub reg: RegKind,
    pub k: f64,
    pub eps: f64,
    pub delta: f64,
    pub constants: Constants,
    pub opt_hint: Option<f64>,
    /// Stand-in for the unstated absolute constant of the bound.
    pub c_abs: f64,
}

// logarithmic factors are floored at 1 so tiny arguments cannot flip signs
fn log_factor(v: f64) -> f64 {
    v.ln().max(1.0)
}

/// Sample size `m0` of the chosen bound, up to its unstated absolute
/// constant (`c_abs`).
pub fn recommended_sample_size(req: &SizeRequest) -> Result<usize> {
    let SizeRequest {
        theorem,
        loss,
        reg,
        k,
        eps,
        delta,
        constants: c,
        opt_hint,
        c_abs,
    } = *req;
    if !(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput("eps and delta must lie in (0,1)".into()));
    }
    let ln_delta = (1.0 / delta).ln();
    let m = match theorem {
        Theorem::NormSampling => {
            let cc = (c.s * c.l).powi(2);
            match reg {
                RegKind::L2sq => {
                    let opt = match opt_hint {
                        Some(v) => v,
                        None => opt_lower_bound(&loss, reg, k, c.l, c.b)?,
                    };
                    if !(opt > 0.0) {
                        return Err(Error::Applicability(
                            "OPT must be positive for the squared l2 bound".into(),
                        ));
                    }
                    c_abs * cc * k * ln_delta / (eps * eps * opt)
                }
                RegKind::L1 | RegKind::L2 => c_abs * cc * k * k * ln_delta / (eps * eps),
            }
        }
        Theorem::BoundedDerivative => {
            if !loss.bounded_derivative() {
                return Err(Error::Applicability(format!(
                    "loss {} violates |g'| <= g",
                    loss.kind
                )));
            }
            if reg != RegKind::L2sq {
                return Err(Error::Applicability(
                    "bounded-derivative bound needs squared l2 regularization".into(),
                ));
            }
            let cc = c.s * c.b * c.l * c.l / c.g0;
            c_abs
                * cc
                * k
                * log_factor(cc * k * ln_delta / eps).powi(3)
                * log_factor(ln_delta * log_factor(c.s * c.l * k / c.g0))
                / (eps * eps)
        }
        Theorem::GeneralL1 => {
            if reg != RegKind::L1 {
                return Err(Error::Applicability(
                    "general bound needs l1 regularization".into(),
                ));
            }
            let cc = c.s * c.l;
            let poly = log_factor(cc * k * ln_delta / eps).powi(3);
            let tail = if loss.homogeneous() {
                ln_delta
            } else {
                log_factor(ln_delta * log_factor(c.b * c.l * k / eps))
            };
            c_abs * cc * k * poly * tail / (eps * eps)
        }
    };
    if !m.is_finite() {
        return Err(Error::InvalidInput("sample size is not finite".into()));
    }
    Ok((ceil_tol(m) as usize).max(1))
}

/// Whether `x` lies in the level set `f(x) <= g(0)/eps` on which the
/// general `l1` bound holds for non-homogeneous losses.
pub fn within_level_set(instance: &Instance, spec: &ObjectiveSpec, x: &[f64], eps: f64) -> Result<bool> {
    if spec.loss.kind == LossKind::Relu {
        return Ok(true);
    }
    let (_, f) = full_objective(instance, spec, x)?;
    Ok(f <= spec.loss.g0() / eps)
}
