//! Monte Carlo harness: failure rates with Wilson intervals, minimal sample
//! size search, scaling curves, and statistical sanity checks.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardness::{generate, FailureChecker, GenParams, HardInstance, HardKind};
use crate::linalg::dot;
use crate::model::{Instance, ObjectiveSpec};
use crate::objective::{probe_queries, PreparedQueries, QuerySet};
use crate::rng;
use crate::sampler::{Convention, CountedSample, Sampler, ScoreKind};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_M_CAP: usize = 2_000_000;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryPolicy {
    AdversarialOnly,
    AdversarialPlusRandom,
}

/// What the trials sample from and how failure is decided.
#[derive(Debug, Clone)]
pub enum Target {
    /// Failure is the instance's own predicate.
    Hard(Arc<HardInstance>),
    /// Failure is a relative error above `eps` at any of the queries.
    Plain {
        instance: Arc<Instance>,
        spec: ObjectiveSpec,
        queries: QuerySet,
    },
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub target: Target,
    pub score: ScoreKind,
    pub convention: Convention,
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub query_policy: QueryPolicy,
    /// Largest sample size the search may try.
    pub m_cap: usize,
}

impl TrialConfig {
    /// Defaults for a hard instance: norm scores under its own convention,
    /// 200 trials, adversarial queries only.
    pub fn hard(hard: HardInstance, eps: f64, delta: f64, seed: u64) -> Self {
        let convention = hard.convention();
        TrialConfig {
            target: Target::Hard(Arc::new(hard)),
            score: ScoreKind::NormPlus1,
            convention,
            eps,
            delta,
            trials: DEFAULT_TRIALS,
            master_seed: seed,
            query_policy: QueryPolicy::AdversarialOnly,
            m_cap: DEFAULT_M_CAP,
        }
    }

    pub fn plain(instance: Instance, spec: ObjectiveSpec, queries: QuerySet, eps: f64, delta: f64, seed: u64) -> Self {
        TrialConfig {
            target: Target::Plain {
                instance: Arc::new(instance),
                spec,
                queries,
            },
            score: ScoreKind::NormPlus1,
            convention: Convention::Mixture,
            eps,
            delta,
            trials: DEFAULT_TRIALS,
            master_seed: seed,
            query_policy: QueryPolicy::AdversarialOnly,
            m_cap: DEFAULT_M_CAP,
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be >= 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidInput(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.m_cap == 0 {
            return Err(Error::InvalidInput("m_cap must be >= 1".into()));
        }
        Ok(())
    }

    pub fn instance(&self) -> &Instance {
        match &self.target {
            Target::Hard(h) => &h.instance,
            Target::Plain { instance, .. } => instance,
        }
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        match &self.target {
            Target::Hard(h) => &h.spec,
            Target::Plain { spec, .. } => spec,
        }
    }
}

/// Failure count at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub m: usize,
    pub trials: usize,
    pub failures: usize,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl RateEstimate {
    pub fn from_counts(m: usize, failures: usize, trials: usize) -> Self {
        let (ci_lo, ci_hi) = wilson(failures, trials, Z95);
        RateEstimate {
            m,
            trials,
            failures,
            rate: failures as f64 / trials as f64,
            ci_lo,
            ci_hi,
        }
    }

    /// Interval too wide to support any conclusion.
    pub fn is_wide(&self) -> bool {
        self.ci_hi - self.ci_lo > 0.5
    }
}

enum Checker<'a> {
    Hard(FailureChecker<'a>),
    Plain(PreparedQueries),
}

/// A trial configuration with its sampler and query tables built once.
pub struct TrialRunner<'a> {
    cfg: &'a TrialConfig,
    sampler: Sampler,
    checker: Checker<'a>,
    extra: Option<PreparedQueries>,
}

impl<'a> TrialRunner<'a> {
    pub fn new(cfg: &'a TrialConfig) -> Result<Self> {
        cfg.validate()?;
        let instance = cfg.instance();
        let spec = cfg.spec();
        let sampler = Sampler::new(instance, cfg.score, cfg.convention)?;
        let checker = match &cfg.target {
            Target::Hard(h) => Checker::Hard(FailureChecker::new(h)?),
            Target::Plain { queries, .. } => {
                Checker::Plain(PreparedQueries::new(instance, spec, queries.queries())?)
            }
        };
        let extra = match cfg.query_policy {
            QueryPolicy::AdversarialOnly => None,
            QueryPolicy::AdversarialPlusRandom => {
                let probes = probe_queries(instance.dim(), spec.k, 8, 8, cfg.master_seed);
                Some(PreparedQueries::new(instance, spec, probes.queries())?)
            }
        };
        Ok(TrialRunner {
            cfg,
            sampler,
            checker,
            extra,
        })
    }

    /// The sample drawn in trial `t` at size `m`. Depends only on the master
    /// seed, `m` and `t`.
    pub fn sample(&self, m: usize, t: usize) -> CountedSample {
        let mut rng = rng::stream(self.cfg.master_seed, rng::stream_id(&[m as u64, t as u64]));
        self.sampler.draw_counts(m, &mut rng)
    }

    fn exceeds(prepared: &PreparedQueries, sample: &CountedSample, eps: f64) -> bool {
        prepared.errors(sample).into_iter().any(|e| e.exceeds(eps))
    }

    pub fn trial_fails(&self, m: usize, t: usize) -> Result<bool> {
        let sample = self.sample(m, t);
        let eps = self.cfg.eps;
        let failed = match &self.checker {
            Checker::Hard(c) => c.check(&sample, eps)?.failed,
            Checker::Plain(p) => Self::exceeds(p, &sample, eps),
        };
        Ok(failed || self.extra.as_ref().is_some_and(|p| Self::exceeds(p, &sample, eps)))
    }

    pub fn rate(&self, m: usize) -> Result<RateEstimate> {
        if m == 0 {
            return Err(Error::Precondition("sample size must be >= 1".into()));
        }
        let outcomes: Vec<bool> = (0..self.cfg.trials)
            .into_par_iter()
            .map(|t| self.trial_fails(m, t))
            .collect::<Result<_>>()?;
        let failures = outcomes.iter().filter(|&&f| f).count();
        Ok(RateEstimate::from_counts(m, failures, self.cfg.trials))
    }
}

/// Fraction of `cfg.trials` independent samples of size `m` that fail.
pub fn failure_rate(cfg: &TrialConfig, m: usize) -> Result<RateEstimate> {
    TrialRunner::new(cfg)?.rate(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinSampleSize {
    pub m_star: usize,
    /// Every rate evaluated by the search, sorted by `m`.
    pub evaluated: Vec<RateEstimate>,
}

struct Search<'r, 'a> {
    runner: &'r TrialRunner<'a>,
    delta: f64,
    cache: BTreeMap<usize, RateEstimate>,
}

impl Search<'_, '_> {
    fn passes(&mut self, m: usize) -> Result<bool> {
        let est = match self.cache.get(&m) {
            Some(e) => *e,
            None => {
                let e = self.runner.rate(m)?;
                self.cache.insert(m, e);
                e
            }
        };
        Ok(est.ci_hi <= self.delta)
    }

    // smoothing against non-monotone rates: m must pass and so must 2m
    fn accepts(&mut self, m: usize) -> Result<bool> {
        Ok(self.passes(m)? && self.passes(2 * m)?)
    }

    fn partial(&self) -> Vec<(usize, f64)> {
        self.cache.values().map(|e| (e.m, e.rate)).collect()
    }
}

/// Smallest `m` whose failure rate has Wilson upper bound at most `delta`,
/// with the same holding at `2m`. Doubling search from 1, then binary search
/// in the last bracket.
pub fn min_sample_size(cfg: &TrialConfig) -> Result<MinSampleSize> {
    let runner = TrialRunner::new(cfg)?;
    let mut search = Search {
        runner: &runner,
        delta: cfg.delta,
        cache: BTreeMap::new(),
    };
    let mut hi = 1usize;
    loop {
        if 2 * hi > cfg.m_cap {
            return Err(Error::Budget {
                cap: cfg.m_cap,
                partial: search.partial(),
            });
        }
        if search.accepts(hi)? {
            break;
        }
        hi *= 2;
    }
    let mut lo = hi / 2; // rejected, or 0 when hi = 1
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if search.accepts(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(MinSampleSize {
        m_star: hi,
        evaluated: search.cache.into_values().collect(),
    })
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Percentile bootstrap interval (95%) for the log-log slope, resampling
/// points with replacement. Resamples with a single distinct `x` are skipped.
pub fn bootstrap_slope_ci(x: &[f64], y: &[f64], resamples: usize, seed: u64) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mut rng = rng::stream(seed, rng::stream_id(&[0xb007]));
    let mut slopes = Vec::with_capacity(resamples);
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            bx[i] = x[j];
            by[i] = y[j];
        }
        if let Some(s) = ls_slope(&bx, &by) {
            slopes.push(s);
        }
    }
    if slopes.is_empty() {
        return None;
    }
    slopes.sort_by(f64::total_cmp);
    let at = |q: f64| slopes[((q * (slopes.len() - 1) as f64).round()) as usize];
    Some((at(0.025), at(0.975)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub kind: HardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<crate::losses::RegKind>,
    pub k_list: Vec<f64>,
    pub eps: f64,
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_score")]
    pub score: ScoreKind,
    #[serde(default = "default_m_cap")]
    pub m_cap: usize,
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_score() -> ScoreKind {
    ScoreKind::NormPlus1
}

fn default_m_cap() -> usize {
    DEFAULT_M_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub k: f64,
    pub m_star: usize,
    pub evaluated: Vec<RateEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPoint {
    pub k: f64,
    pub reason: String,
    pub evaluated: Vec<RateEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub kind: HardKind,
    pub points: Vec<ScalingPoint>,
    /// Values of `k` whose search ran out of budget.
    pub failed: Vec<FailedPoint>,
    pub fitted_slope: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
}

/// Trial configuration for one point of a scaling curve. The generator's
/// `eps` is the evaluation tolerance.
pub fn scaling_config(spec: &ScalingSpec, k: f64) -> Result<TrialConfig> {
    let mut params = GenParams::new(spec.kind).with_k(k).with_eps(spec.eps);
    params.reg = spec.reg;
    if spec.kind == HardKind::CouponRelu {
        params.d = Some(k.round() as usize);
    }
    let hard = generate(&params)?;
    let mut cfg = TrialConfig::hard(hard, spec.eps, spec.delta, spec.seed);
    cfg.trials = spec.trials;
    cfg.score = spec.score;
    cfg.m_cap = spec.m_cap;
    Ok(cfg)
}

/// `m_star` for each `k`, with the least-squares slope of `log m_star` on
/// `log k` and its bootstrap interval. Budget errors are recorded per `k`.
pub fn scaling_curve(spec: &ScalingSpec) -> Result<ScalingCurve> {
    if spec.k_list.len() < 3 {
        return Err(Error::Precondition("scaling needs at least 3 values of k".into()));
    }
    let mut ks = spec.k_list.clone();
    ks.sort_by(f64::total_cmp);
    let mut points = Vec::new();
    let mut failed = Vec::new();
    for &k in &ks {
        let cfg = scaling_config(spec, k)?;
        match min_sample_size(&cfg) {
            Ok(r) => points.push(ScalingPoint {
                k,
                m_star: r.m_star,
                evaluated: r.evaluated,
            }),
            Err(e @ Error::Budget { .. }) => {
                let evaluated = match &e {
                    Error::Budget { partial, .. } => partial
                        .iter()
                        .map(|&(m, rate)| {
                            let failures = (rate * cfg.trials as f64).round() as usize;
                            RateEstimate::from_counts(m, failures, cfg.trials)
                        })
                        .collect(),
                    _ => Vec::new(),
                };
                failed.push(FailedPoint {
                    k,
                    reason: e.to_string(),
                    evaluated,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let lx: Vec<f64> = points.iter().map(|p| p.k.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| (p.m_star as f64).ln()).collect();
    Ok(ScalingCurve {
        kind: spec.kind,
        fitted_slope: ls_slope(&lx, &ly),
        slope_ci: bootstrap_slope_ci(&lx, &ly, BOOTSTRAP_RESAMPLES, spec.seed),
        points,
        failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FellerReport {
    pub empirical: f64,
    /// `exp(-t^2 / 3 sigma^2)`, before the unknown constant.
    pub bound: f64,
    /// Largest `c <= 1` with `empirical >= c * bound`.
    pub fitted_c: f64,
    pub sigma: f64,
    /// Set when `sigma < 200` or `t > sigma^2 / 100`, outside the range the
    /// tail bound is stated for.
    pub advisory: bool,
}

/// Empirical `P[Z >= E Z + t]` for `Z ~ Binomial(m, q)` against the
/// anti-concentration shape `exp(-t^2 / 3 sigma^2)`.
pub fn feller_check(q: f64, m: u64, t: f64, trials: usize, seed: u64) -> Result<FellerReport> {
    if !(q > 0.0 && q < 1.0) || m == 0 || trials == 0 || !(t >= 0.0) {
        return Err(Error::InvalidInput("need 0 < q < 1, m >= 1, trials >= 1, t >= 0".into()));
    }
    let mean = m as f64 * q;
    let var = mean * (1.0 - q);
    let sigma = var.sqrt();
    let bin = Binomial::new(m, q).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let hits: usize = (0..trials)
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            let mut rng = rng::stream(seed, rng::stream_id(&[0xfe11e4, i as u64]));
            usize::from(bin.sample(&mut rng) as f64 >= mean + t)
        })
        .sum();
    let empirical = hits as f64 / trials as f64;
    let bound = (-t * t / (3.0 * var)).exp();
    Ok(FellerReport {
        empirical,
        bound,
        fitted_c: (empirical / bound).min(1.0),
        sigma,
        advisory: sigma < 200.0 || t > var / 100.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `w = p / q`, the unbiased importance weights.
    Importance,
    /// `w = 1`, a deliberately biased control.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unbiasedness {
    pub mean_gap: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Mean of `f0_hat(x) - f0(x)` over independent samples of size `m` under the
/// mixture law, with its standard error. Passes iff `|gap| <= 4 stderr`.
pub fn unbiasedness_check(
    instance: &Instance,
    spec: &ObjectiveSpec,
    kind: ScoreKind,
    x: &[f64],
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<Unbiasedness> {
    unbiasedness_check_with(instance, spec, kind, x, m, trials, seed, WeightMode::Importance)
}

#[allow(clippy::too_many_arguments)]
pub fn unbiasedness_check_with(
    instance: &Instance,
    spec: &ObjectiveSpec,
    kind: ScoreKind,
    x: &[f64],
    m: usize,
    trials: usize,
    seed: u64,
    mode: WeightMode,
) -> Result<Unbiasedness> {
    if trials < 100 {
        return Err(Error::Precondition(format!("need at least 100 trials, got {trials}")));
    }
    if m == 0 {
        return Err(Error::Precondition("sample size must be >= 1".into()));
    }
    instance.check_dim(x)?;
    let sampler = Sampler::new(instance, kind, Convention::Mixture)?;
    let losses: Vec<f64> = instance.atoms().map(|a| spec.loss.eval(dot(a, x))).collect();
    let f0: f64 = losses.iter().zip(instance.masses()).map(|(g, p)| g * p).sum();
    let weights: Vec<f64> = match mode {
        WeightMode::Importance => sampler.weights().to_vec(),
        WeightMode::Unit => vec![1.0; instance.len()],
    };
    let gaps: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, rng::stream_id(&[0x0b1a5, t as u64]));
            let sample = sampler.draw_counts(m, &mut rng);
            let est: f64 = sample
                .support()
                .map(|(i, c)| c as f64 * weights[i] * losses[i])
                .sum::<f64>()
                / m as f64;
            est - f0
        })
        .collect();
    let n = trials as f64;
    let mean_gap = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / (n - 1.0);
    let stderr = (var / n).sqrt();
    Ok(Unbiasedness {
        mean_gap,
        stderr,
        pass: mean_gap.abs() <= 4.0 * stderr,
    })
}

/// One row of the failure-rate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub run_id: String,
    pub kind: String,
    pub loss: String,
    pub reg: String,
    pub k: f64,
    pub eps: f64,
    pub delta: f64,
    pub m: usize,
    pub trials: usize,
    pub failures: usize,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// One row of the scaling summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub kind: String,
    pub k: f64,
    pub m_star: usize,
    pub slope: Option<f64>,
    pub slope_lo: Option<f64>,
    pub slope_hi: Option<f64>,
}

/// Rate rows for every evaluated `m` of every point, including points whose
/// search ran out of budget, ordered by `k` then `m`.
pub fn rate_rows(run_id: &str, spec: &ScalingSpec, curve: &ScalingCurve) -> Result<Vec<RateRow>> {
    let reg = spec.reg.unwrap_or(spec.kind.regularizers()[0]);
    let mut groups: Vec<(f64, &[RateEstimate])> = curve
        .points
        .iter()
        .map(|p| (p.k, p.evaluated.as_slice()))
        .chain(curve.failed.iter().map(|f| (f.k, f.evaluated.as_slice())))
        .collect();
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(groups
        .into_iter()
        .flat_map(|(k, evaluated)| {
            evaluated.iter().map(move |e| RateRow {
                run_id: run_id.to_string(),
                kind: spec.kind.name().into(),
                loss: spec.kind.loss().name().into(),
                reg: reg.name().into(),
                k,
                eps: spec.eps,
                delta: spec.delta,
                m: e.m,
                trials: e.trials,
                failures: e.failures,
                rate: e.rate,
                ci_lo: e.ci_lo,
                ci_hi: e.ci_hi,
            })
        })
        .collect())
}

pub fn scaling_rows(curve: &ScalingCurve) -> Vec<ScalingRow> {
    curve
        .points
        .iter()
        .map(|p| ScalingRow {
            kind: curve.kind.name().into(),
            k: p.k,
            m_star: p.m_star,
            slope: curve.fitted_slope,
            slope_lo: curve.slope_ci.map(|c| c.0),
            slope_hi: curve.slope_ci.map(|c| c.1),
        })
        .collect()
}

pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain two-column `k m_star` data, one point per line.
pub fn write_plot_data<W: Write>(mut out: W, curve: &ScalingCurve) -> Result<()> {
    writeln!(out, "# {} k m_star", curve.kind)?;
    for p in &curve.points {
        writeln!(out, "{} {}", p.k, p.m_star)?;
    }
    Ok(())
}
