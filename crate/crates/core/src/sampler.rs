//! Score functions, the sampling law `Q`, importance weights and the
//! batch and streaming samplers built on them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ceil_tol, norm2};
use crate::model::Instance;
use crate::rng;

/// Score `s(a)` used to build the sampling law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    /// `||a|| + 1`
    #[serde(rename = "norm")]
    NormPlus1,
    /// `||a||^2 + 2`
    #[serde(rename = "sqnorm")]
    SqNormPlus2,
    /// `D + 1` for every atom.
    #[serde(rename = "uniform-d")]
    UniformD,
    /// `D^2 + 2` for every atom.
    #[serde(rename = "uniform-d2")]
    UniformD2,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::NormPlus1 => "norm",
            ScoreKind::SqNormPlus2 => "sqnorm",
            ScoreKind::UniformD => "uniform-d",
            ScoreKind::UniformD2 => "uniform-d2",
        }
    }

    /// Power of the norm the score grows with.
    pub fn power(self) -> u32 {
        match self {
            ScoreKind::NormPlus1 | ScoreKind::UniformD => 1,
            ScoreKind::SqNormPlus2 | ScoreKind::UniformD2 => 2,
        }
    }

    /// Score of an atom of norm `norm` when the largest norm is `d`.
    #[inline]
    pub fn eval_with_max(self, norm: f64, d: f64) -> f64 {
        match self {
            ScoreKind::NormPlus1 => norm + 1.0,
            ScoreKind::SqNormPlus2 => norm * norm + 2.0,
            ScoreKind::UniformD => d + 1.0,
            ScoreKind::UniformD2 => d * d + 2.0,
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "norm" | "norm+1" => Ok(ScoreKind::NormPlus1),
            "sqnorm" | "sqnorm+2" => Ok(ScoreKind::SqNormPlus2),
            "uniform-d" => Ok(ScoreKind::UniformD),
            "uniform-d2" => Ok(ScoreKind::UniformD2),
            other => Err(Error::Configuration(format!("unknown score '{other}'"))),
        }
    }
}

/// How scores turn into sampling probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// `q = p (s + S) / 2S`, weights `2S / (s + S)`.
    Mixture,
    /// `q = p s / S`, weights `S / s`.
    Proportional,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Mixture => "mixture",
            Convention::Proportional => "proportional",
        }
    }

    #[inline]
    pub fn weight(self, s: f64, total: f64) -> f64 {
        match self {
            Convention::Mixture => 2.0 * total / (s + total),
            Convention::Proportional => total / s,
        }
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mixture" => Ok(Convention::Mixture),
            "proportional" => Ok(Convention::Proportional),
            other => Err(Error::Configuration(format!("unknown convention '{other}'"))),
        }
    }
}

/// One drawn atom with its score and importance weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub atom_index: usize,
    pub a: Vec<f64>,
    pub w: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEstimate {
    pub s_hat: f64,
    pub m_used: usize,
    pub eps: f64,
    pub delta: f64,
}

pub fn score(kind: ScoreKind, a: &[f64], d: Option<f64>) -> Result<f64> {
    let n = norm2(a);
    match kind {
        ScoreKind::NormPlus1 | ScoreKind::SqNormPlus2 => Ok(kind.eval_with_max(n, 0.0)),
        ScoreKind::UniformD | ScoreKind::UniformD2 => {
            let d = d.ok_or_else(|| {
                Error::Configuration(format!("score '{}' needs the maximum norm D", kind))
            })?;
            Ok(kind.eval_with_max(n, d))
        }
    }
}

/// Mixture weight `2S / (s + S)`.
pub fn weight(s: f64, total: f64) -> Result<f64> {
    if !(s > 0.0 && total > 0.0) {
        return Err(Error::InvalidInput(format!(
            "score and score mass must be positive, got s={s}, S={total}"
        )));
    }
    Ok(Convention::Mixture.weight(s, total))
}

/// Scores of every atom, with `D` taken as the instance's largest norm.
pub fn scores(instance: &Instance, kind: ScoreKind) -> Vec<f64> {
    let d = instance.max_norm();
    instance
        .atoms()
        .map(|a| kind.eval_with_max(norm2(a), d))
        .collect()
}

pub fn score_mass(instance: &Instance, scores: &[f64]) -> f64 {
    instance.masses().iter().zip(scores).map(|(p, s)| p * s).sum()
}

pub fn sampling_probabilities(
    instance: &Instance,
    kind: ScoreKind,
    convention: Convention,
) -> Vec<f64> {
    let s = scores(instance, kind);
    let total = score_mass(instance, &s);
    let raw: Vec<f64> = instance
        .masses()
        .iter()
        .zip(&s)
        .map(|(&p, &si)| match convention {
            Convention::Mixture => p * (si + total) / (2.0 * total),
            Convention::Proportional => p * si / total,
        })
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|q| q / z).collect()
}

pub fn mixture_probabilities(instance: &Instance, kind: ScoreKind) -> Vec<f64> {
    sampling_probabilities(instance, kind, Convention::Mixture)
}

/// Per-atom sample counts of one draw of size `m`, with the shared per-atom
/// weights. Evaluating a coreset through counts costs one pass over the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct CountedSample {
    pub m: usize,
    pub counts: Vec<u32>,
    pub weights: Arc<[f64]>,
    pub convention: Convention,
}

impl CountedSample {
    /// Aggregates a list of samples over an instance with `n` atoms.
    /// Samples of the same atom must carry the same weight.
    pub fn from_samples(
        n: usize,
        samples: &[WeightedSample],
        convention: Convention,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Precondition("empty sample".into()));
        }
        let mut counts = vec![0u32; n];
        let mut weights = vec![0.0; n];
        for smp in samples {
            let i = smp.atom_index;
            if i >= n {
                return Err(Error::InvalidInput(format!("atom index {i} out of range")));
            }
            if counts[i] > 0 && (weights[i] - smp.w).abs() > 1e-12 * smp.w.abs().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "atom {i} appears with different weights"
                )));
            }
            counts[i] += 1;
            weights[i] = smp.w;
        }
        Ok(CountedSample {
            m: samples.len(),
            counts,
            weights: weights.into(),
            convention,
        })
    }

    /// Atoms with a nonzero count.
    pub fn support(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
    }

    pub fn mean_weight(&self) -> f64 {
        self.support()
            .map(|(i, c)| c as f64 * self.weights[i])
            .sum::<f64>()
            / self.m as f64
    }
}

/// Sampler for one instance, score and convention. Holds the alias table and
/// per-atom weights, built once and shared read-only across trials.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: ScoreKind,
    convention: Convention,
    scores: Vec<f64>,
    score_mass: f64,
    probs: Vec<f64>,
    tails: Vec<f64>,
    weights: Arc<[f64]>,
    alias: WeightedAliasIndex<f64>,
}

impl Sampler {
    pub fn new(instance: &Instance, kind: ScoreKind, convention: Convention) -> Result<Self> {
        let scores = scores(instance, kind);
        let total = score_mass(instance, &scores);
        let probs = sampling_probabilities(instance, kind, convention);
        let weights: Vec<f64> = scores.iter().map(|&s| convention.weight(s, total)).collect();
        let mut tails = vec![0.0; probs.len() + 1];
        for i in (0..probs.len()).rev() {
            tails[i] = tails[i + 1] + probs[i];
        }
        let alias = WeightedAliasIndex::new(probs.clone())
            .map_err(|e| Error::InvalidInput(format!("alias table: {e}")))?;
        Ok(Sampler {
            kind,
            convention,
            scores,
            score_mass: total,
            probs,
            tails,
            weights: weights.into(),
            alias,
        })
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn weights(&self) -> &Arc<[f64]> {
        &self.weights
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn score_mass(&self) -> f64 {
        self.score_mass
    }

    /// `m` i.i.d. atom indices.
    pub fn draw_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<usize> {
        (0..m).map(|_| self.alias.sample(rng)).collect()
    }

    /// Per-atom counts of `m` i.i.d. draws, generated as a multinomial vector
    /// by sequential conditional binomials.
    pub fn draw_counts<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> CountedSample {
        let n = self.probs.len();
        let mut counts = vec![0u32; n];
        let mut rest = m as u64;
        for i in 0..n {
            if rest == 0 {
                break;
            }
            if i + 1 == n {
                counts[i] = rest as u32;
                break;
            }
            let p = (self.probs[i] / self.tails[i]).clamp(0.0, 1.0);
            let c = if p >= 1.0 {
                rest
            } else {
                Binomial::new(rest, p).expect("valid binomial").sample(rng)
            };
            counts[i] = c as u32;
            rest -= c;
        }
        CountedSample {
            m,
            counts,
            weights: self.weights.clone(),
            convention: self.convention,
        }
    }

    pub fn to_samples(&self, instance: &Instance, indices: &[usize]) -> Vec<WeightedSample> {
        indices
            .iter()
            .map(|&i| WeightedSample {
                atom_index: i,
                a: instance.atom(i).to_vec(),
                w: self.weights[i],
                s: self.scores[i],
            })
            .collect()
    }
}

/// `m` i.i.d. draws from the mixture law with exact weights.
pub fn draw_iid(
    instance: &Instance,
    kind: ScoreKind,
    m: usize,
    seed: u64,
) -> Result<Vec<WeightedSample>> {
    draw_iid_with(instance, kind, Convention::Mixture, m, seed)
}

pub fn draw_iid_with(
    instance: &Instance,
    kind: ScoreKind,
    convention: Convention,
    m: usize,
    seed: u64,
) -> Result<Vec<WeightedSample>> {
    if m == 0 {
        return Err(Error::Precondition("sample size m must be at least 1".into()));
    }
    let sampler = Sampler::new(instance, kind, convention)?;
    let mut rng = rng::stream(seed, 0);
    let idx = sampler.draw_indices(m, &mut rng);
    Ok(sampler.to_samples(instance, &idx))
}

/// Probability `1/2 + s / (2 s_hat)` that the first atom of a round is kept.
pub fn acceptance_probability(s: f64, s_hat: f64) -> Result<f64> {
    if !(s_hat > 0.0) || s < 0.0 {
        return Err(Error::InvalidInput(format!("bad score {s} or bound {s_hat}")));
    }
    let p = 0.5 + s / (2.0 * s_hat);
    if p > 1.0 + 1e-12 {
        return Err(Error::EstimatorInconsistency { score: s, bound: s_hat });
    }
    Ok(p.min(1.0))
}

/// One-pass sampler turning a stream of draws from `P` into draws from the
/// mixture law.
///
/// Each output is produced by a round. A round flips a fair coin: on heads it
/// keeps the next arriving atom; on tails it keeps each arriving atom with
/// probability `s / s_hat` until one is kept, which yields an atom with law
/// `p s / S`. The first atom of a round is therefore kept with probability
/// `1/2 + s / (2 s_hat)`. `s_hat` must bound every score.
#[derive(Debug, Clone)]
pub struct RejectionSampler {
    s_hat: f64,
    round: Option<bool>,
}

impl RejectionSampler {
    pub fn new(s_hat: f64) -> Result<Self> {
        if !(s_hat.is_finite() && s_hat > 0.0) {
            return Err(Error::InvalidInput(format!("score bound must be positive, got {s_hat}")));
        }
        Ok(RejectionSampler { s_hat, round: None })
    }

    /// Offers one atom of score `s`; returns whether it is kept.
    pub fn offer<R: Rng + ?Sized>(&mut self, s: f64, rng: &mut R) -> Result<bool> {
        if s > self.s_hat * (1.0 + 1e-12) {
            return Err(Error::EstimatorInconsistency {
                score: s,
                bound: self.s_hat,
            });
        }
        let heads = *self.round.get_or_insert_with(|| rng.random_bool(0.5));
        let keep = heads || rng.random::<f64>() * self.s_hat < s;
        if keep {
            self.round = None;
        }
        Ok(keep)
    }
}

/// Consumes `(item, score)` pairs until `m` items are kept or the stream ends.
pub fn rejection_stream<T, I, R>(stream: I, s_hat: f64, m: usize, rng: &mut R) -> Result<Vec<T>>
where
    I: IntoIterator<Item = (T, f64)>,
    R: Rng + ?Sized,
{
    let mut sampler = RejectionSampler::new(s_hat)?;
    let mut out = Vec::with_capacity(m.min(1 << 16));
    for (item, s) in stream {
        if out.len() == m {
            break;
        }
        if sampler.offer(s, rng)? {
            out.push(item);
        }
    }
    Ok(out)
}

struct Keyed<T> {
    key: f64,
    item: T,
}

impl<T> PartialEq for Keyed<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl<T> Eq for Keyed<T> {}

impl<T> PartialOrd for Keyed<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Keyed<T> {
    // reversed so the heap top is the smallest key
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key)
    }
}

/// Weighted reservoir of size `m` with exponential jumps: each item gets the
/// key `u^(1/w)` and the `m` largest keys are kept, while items that cannot
/// enter the reservoir are skipped without drawing a key for each.
pub struct WeightedReservoir<T> {
    m: usize,
    heap: BinaryHeap<Keyed<T>>,
    // remaining weight to skip before the next insertion
    skip: f64,
}

impl<T> WeightedReservoir<T> {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Precondition("reservoir size must be at least 1".into()));
        }
        Ok(WeightedReservoir {
            m,
            heap: BinaryHeap::with_capacity(m),
            skip: 0.0,
        })
    }

    fn threshold(&self) -> f64 {
        self.heap.peek().map(|k| k.key).unwrap_or(f64::NEG_INFINITY)
    }

    fn draw_skip<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        // log keys are negative; a jump of total weight X is needed where
        // X = ln(u) / threshold
        let u: f64 = 1.0 - rng.random::<f64>();
        self.skip = u.ln() / self.threshold();
    }

    pub fn push<R: Rng + ?Sized>(&mut self, item: T, w: f64, rng: &mut R) -> Result<()> {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidInput(format!("reservoir weight must be positive, got {w}")));
        }
        if self.heap.len() < self.m {
            let u: f64 = 1.0 - rng.random::<f64>();
            self.heap.push(Keyed { key: u.ln() / w, item });
            if self.heap.len() == self.m {
                self.draw_skip(rng);
            }
            return Ok(());
        }
        self.skip -= w;
        if self.skip > 0.0 {
            return Ok(());
        }
        // the new key is uniform on (threshold, 0] in log-key space scaled by w
        let t = self.threshold();
        let lo = (t * w).exp();
        let r = lo + (1.0 - lo) * rng.random::<f64>();
        let key = if r > 0.0 { r.ln() / w } else { t };
        self.heap.pop();
        self.heap.push(Keyed { key: key.max(t), item });
        self.draw_skip(rng);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// The kept items in decreasing key order.
    pub fn into_items(self) -> Vec<T> {
        let mut v = self.heap.into_vec();
        v.sort_by(|a, b| b.key.total_cmp(&a.key));
        v.into_iter().map(|k| k.item).collect()
    }
}

pub fn weighted_reservoir<T, I, R>(stream: I, m: usize, rng: &mut R) -> Result<Vec<T>>
where
    I: IntoIterator<Item = (T, f64)>,
    R: Rng + ?Sized,
{
    let mut res = WeightedReservoir::new(m)?;
    for (item, s) in stream {
        res.push(item, s, rng)?;
    }
    Ok(res.into_items())
}

/// `ceil(D^p ln(1/delta) / eps^2)`, at least 1.
pub fn s_estimate_size(d: f64, p: u32, eps: f64, delta: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "eps and delta must lie in (0,1), got {eps}, {delta}"
        )));
    }
    if !d.is_finite() {
        return Err(Error::Configuration("a finite norm bound D is required".into()));
    }
    let m = ceil_tol(d.powi(p as i32) * (1.0 / delta).ln() / (eps * eps));
    Ok((m as usize).max(1))
}

/// Mean score of i.i.d. draws from `P`, with the sample size set by the
/// largest norm of the instance.
pub fn estimate_s(
    instance: &Instance,
    kind: ScoreKind,
    eps: f64,
    delta: f64,
    seed: u64,
) -> Result<SEstimate> {
    let m = s_estimate_size(instance.max_norm(), kind.power(), eps, delta)?;
    let s = scores(instance, kind);
    let alias = WeightedAliasIndex::new(instance.masses().to_vec())
        .map_err(|e| Error::InvalidInput(format!("alias table: {e}")))?;
    let mut rng = rng::stream(seed, 0);
    let sum: f64 = (0..m).map(|_| s[alias.sample(&mut rng)]).sum();
    Ok(SEstimate {
        s_hat: sum / m as f64,
        m_used: m,
        eps,
        delta,
    })
}

/// Replaces every weight by `2 s_hat / (s + s_hat)`.
pub fn weights_from_estimate(samples: &[WeightedSample], s_hat: f64) -> Result<Vec<WeightedSample>> {
    samples
        .iter()
        .map(|smp| {
            Ok(WeightedSample {
                w: weight(smp.s, s_hat)?,
                ..smp.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_atoms() -> Instance {
        // norms 0 and 2 under NORM_PLUS_1 give scores 1 and 3
        Instance::uniform(vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap()
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(ScoreKind::NormPlus1, &[0.0, 0.0], None).unwrap(), 1.0);
        assert_eq!(score(ScoreKind::SqNormPlus2, &[3.0, 0.0], None).unwrap(), 11.0);
        assert_eq!(score(ScoreKind::UniformD, &[0.3, 0.0], Some(1.0)).unwrap(), 2.0);
        assert!(matches!(
            score(ScoreKind::UniformD, &[0.3], None),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(weight(30.0, 10.0).unwrap(), 0.5);
        assert!(weight(0.0, 1.0).is_err());
        assert!(weight(1.0, -1.0).is_err());
    }

    #[test]
    fn mixture_examples() {
        let q = mixture_probabilities(&two_atoms(), ScoreKind::NormPlus1);
        assert_abs_diff_eq!(q[0], 3.0 / 8.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 5.0 / 8.0, epsilon = 1e-15);

        let inst = Instance::uniform(vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![0.5, 0.5]]).unwrap();
        let q = mixture_probabilities(&inst, ScoreKind::UniformD);
        for v in q {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let sampler = Sampler::new(&inst, ScoreKind::UniformD, Convention::Mixture).unwrap();
        assert!(sampler.weights().iter().all(|&w| (w - 1.0).abs() < 1e-15));
    }

    #[test]
    fn draw_iid_examples() {
        let single = Instance::uniform(vec![vec![3.0, 4.0]]).unwrap();
        assert!(matches!(
            draw_iid(&single, ScoreKind::NormPlus1, 0, 1),
            Err(Error::Precondition(_))
        ));
        let s = draw_iid(&single, ScoreKind::NormPlus1, 5, 1).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|x| x.atom_index == 0 && x.w == 1.0));

        let n = 10_000;
        let s = draw_iid(&two_atoms(), ScoreKind::NormPlus1, n, 42).unwrap();
        let hits = s.iter().filter(|x| x.atom_index == 1).count() as f64;
        let sd = (n as f64 * 0.625 * 0.375).sqrt();
        assert!((hits - 0.625 * n as f64).abs() <= 3.0 * sd);
        assert_eq!(s, draw_iid(&two_atoms(), ScoreKind::NormPlus1, n, 42).unwrap());
    }

    #[test]
    fn counts_match_the_law() {
        let inst = Instance::from_weights(
            (0..5).map(|i| vec![i as f64]).collect(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
        )
        .unwrap();
        let sampler = Sampler::new(&inst, ScoreKind::NormPlus1, Convention::Mixture).unwrap();
        let mut rng = rng::stream(3, 0);
        let m = 200_000;
        let c = sampler.draw_counts(m, &mut rng);
        assert_eq!(c.counts.iter().map(|&x| x as usize).sum::<usize>(), m);
        for (i, &q) in sampler.probabilities().iter().enumerate() {
            let sd = (m as f64 * q * (1.0 - q)).sqrt();
            assert!((c.counts[i] as f64 - m as f64 * q).abs() <= 4.0 * sd);
        }
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_probability(5.0, 5.0).unwrap(), 1.0);
        assert_eq!(acceptance_probability(0.0, 5.0).unwrap(), 0.5);
        assert!(matches!(
            acceptance_probability(6.0, 5.0),
            Err(Error::EstimatorInconsistency { .. })
        ));
    }

    #[test]
    fn rejection_stream_matches_mixture() {
        let inst = two_atoms();
        let s = scores(&inst, ScoreKind::NormPlus1);
        let mut rng = rng::stream(11, 0);
        let stream: Vec<(usize, f64)> = (0..100_000)
            .map(|_| {
                let i = rng.random_range(0..2);
                (i, s[i])
            })
            .collect();
        let kept = rejection_stream(stream, 3.0, usize::MAX, &mut rng).unwrap();
        let n = kept.len() as f64;
        let hits = kept.iter().filter(|&&i| i == 1).count() as f64;
        let sd = (n * 0.625 * 0.375).sqrt();
        assert!((hits - 0.625 * n).abs() <= 3.0 * sd, "{hits} of {n}");

        let mut rng = rng::stream(1, 0);
        assert!(matches!(
            rejection_stream(vec![(0, 4.0)], 3.0, 1, &mut rng),
            Err(Error::EstimatorInconsistency { .. })
        ));
    }

    #[test]
    fn reservoir_examples() {
        let mut rng = rng::stream(5, 0);
        let items = weighted_reservoir((0..4).map(|i| (i, 1.0)), 4, &mut rng).unwrap();
        let mut sorted = items.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);

        let trials = 10_000;
        let mut third = 0;
        for t in 0..trials {
            let mut rng = rng::stream(6, t);
            let kept = weighted_reservoir(vec![(0, 1.0), (1, 1.0), (2, 8.0)], 1, &mut rng).unwrap();
            if kept[0] == 2 {
                third += 1;
            }
        }
        let sd = (trials as f64 * 0.8 * 0.2).sqrt();
        assert!((third as f64 - 0.8 * trials as f64).abs() <= 3.0 * sd);
        assert!(WeightedReservoir::<usize>::new(0).is_err());
    }

    #[test]
    fn s_estimate_examples() {
        assert_eq!(s_estimate_size(1.0, 1, 0.1, 0.01).unwrap(), 461);
        let same = Instance::uniform(vec![vec![1.0, 1.0]; 4]).unwrap();
        let est = estimate_s(&same, ScoreKind::NormPlus1, 0.1, 0.1, 9).unwrap();
        assert_abs_diff_eq!(est.s_hat, 2f64.sqrt() + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reweighting_examples() {
        let smp = vec![WeightedSample {
            atom_index: 0,
            a: vec![1.0],
            w: weight(10.0, 10.0).unwrap(),
            s: 10.0,
        }];
        let same = weights_from_estimate(&smp, 10.0).unwrap();
        assert_eq!(same[0].w, smp[0].w);
        let off = weights_from_estimate(&smp, 10.5).unwrap();
        assert_abs_diff_eq!(off[0].w, 21.0 / 20.5, epsilon = 1e-15);
        assert!((0.95..=1.05).contains(&(off[0].w / smp[0].w)));
    }
}
