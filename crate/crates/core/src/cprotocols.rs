//! Classical distribution testing: flat distributions, down-walks, KL
//! machinery, certificate-fiber transcript pipelines, and the private-coin
//! set-comparison tester.
//!
//! The transcript pipeline builds, exactly (in `i128` rationals), the joint
//! distribution of (proof, samples) seen by a verifier under a faithful
//! prover and under the sample-independent adversarial prover, and checks
//! the total-variation bound `sqrt(t p / (2 s))` together with every
//! intermediate step of the KL chain that proves it.

use crate::comb::{binomial, binomial_u128, for_each_subset, subset_rank, subset_unrank};
use crate::qprotocols::{ProtocolTranscript, Verdict};
use crate::rng::Rng;
use crate::{Error, Result};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Enumeration budget for subset-indexed distributions.
pub const ENUMERATION_BUDGET: usize = 100_000;

/// A flat (uniform-over-support) distribution on `[n]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlatDistribution {
    n: usize,
    support: Vec<usize>,
}

impl FlatDistribution {
    pub fn new(n: usize, mut support: Vec<usize>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::invalid("support must be nonempty"));
        }
        support.sort_unstable();
        support.dedup();
        if *support.last().unwrap() >= n {
            return Err(Error::invalid("support element out of range"));
        }
        Ok(Self { n, support })
    }

    /// Support `{0, 1, ..., size-1}`.
    pub fn prefix(n: usize, size: usize) -> Result<Self> {
        Self::new(n, (0..size).collect())
    }

    pub fn domain(&self) -> usize {
        self.n
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.support.binary_search(&x).is_ok()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        self.support[rng.random_range(0..self.support.len())]
    }
}

/// Draws `t` i.i.d. samples.
pub fn sample_flat(mu: &FlatDistribution, t: usize, rng: &mut Rng) -> Vec<usize> {
    (0..t).map(|_| mu.sample(rng)).collect()
}

/// Number of colliding pairs among the samples.
pub fn collision_statistic(samples: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in samples {
        *counts.entry(s).or_insert(0) += 1;
    }
    counts.values().map(|&c| c * (c - 1) / 2).sum()
}

/// A `GapSupp` instance: decide support size `s` versus `ell` on domain `[n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSuppInstance {
    pub n: usize,
    pub s: usize,
    pub ell: usize,
}

impl GapSuppInstance {
    pub fn new(n: usize, s: usize, ell: usize) -> Result<Self> {
        if s == 0 || ell == 0 || s > n || ell > n {
            return Err(Error::invalid("GapSupp sizes must lie in [1, n]"));
        }
        Ok(Self { n, s, ell })
    }
}

/// A finitely supported distribution with outcomes indexed by `usize`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    probs: BTreeMap<usize, f64>,
}

impl DiscreteDistribution {
    /// Validates nonnegativity and total mass 1 within `1e-12`. Zero-mass
    /// outcomes are dropped.
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut probs = BTreeMap::new();
        let mut total = 0.0f64;
        for (outcome, p) in entries {
            if p < -1e-15 {
                return Err(Error::invalid(format!("negative probability {p} at {outcome}")));
            }
            total += p;
            if p > 0.0 {
                *probs.entry(outcome).or_insert(0.0) += p;
            }
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized { norm: total, tolerance: 1e-12 });
        }
        Ok(Self { probs })
    }

    pub fn delta(outcome: usize) -> Self {
        Self { probs: BTreeMap::from([(outcome, 1.0)]) }
    }

    pub fn uniform_over(outcomes: impl IntoIterator<Item = usize>) -> Self {
        let outcomes: Vec<usize> = outcomes.into_iter().collect();
        let p = 1.0 / outcomes.len() as f64;
        Self { probs: outcomes.into_iter().map(|o| (o, p)).collect() }
    }

    pub fn prob(&self, outcome: usize) -> f64 {
        self.probs.get(&outcome).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().map(|(&o, &p)| (o, p))
    }

    pub fn support_len(&self) -> usize {
        self.probs.len()
    }

    pub fn total_variation(&self, other: &DiscreteDistribution) -> f64 {
        let mut acc = 0.0;
        for (&o, &p) in &self.probs {
            acc += (p - other.prob(o)).abs();
        }
        for (&o, &q) in &other.probs {
            if !self.probs.contains_key(&o) {
                acc += q;
            }
        }
        acc / 2.0
    }
}

/// KL divergence in bits, with a support-violation flag (the value is
/// `+inf` when the first argument puts mass outside the second's support).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlDivergence {
    pub bits: f64,
    pub support_violation: bool,
}

pub fn kl_divergence(mu0: &DiscreteDistribution, mu1: &DiscreteDistribution) -> KlDivergence {
    let mut bits = 0.0f64;
    for (o, p) in mu0.iter() {
        let q = mu1.prob(o);
        if q == 0.0 {
            return KlDivergence { bits: f64::INFINITY, support_violation: true };
        }
        bits += p * (p / q).log2();
    }
    KlDivergence { bits: bits.max(0.0), support_violation: false }
}

/// Applies the down-walk `D_{s -> t}` to a distribution over `s`-subset
/// ranks of `[n]`, yielding a distribution over `t`-subset ranks.
pub fn down_walk(
    mu: &DiscreteDistribution,
    n: usize,
    s: usize,
    t: usize,
) -> Result<DiscreteDistribution> {
    if t > s || t == 0 {
        return Err(Error::invalid(format!("down walk needs 1 <= t <= s, got t={t}, s={s}")));
    }
    let targets = binomial(n, t) as usize;
    if targets > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded { requested: targets, budget: ENUMERATION_BUDGET });
    }
    let per = 1.0 / binomial(s, t);
    let mut out: BTreeMap<usize, f64> = BTreeMap::new();
    for (rank, p) in mu.iter() {
        let subset = subset_unrank(n, s, rank);
        for_each_subset(s, t, |positions| {
            let sub: Vec<usize> = positions.iter().map(|&i| subset[i]).collect();
            *out.entry(subset_rank(n, &sub)).or_insert(0.0) += p * per;
        });
    }
    DiscreteDistribution::new(out.into_iter().collect())
}

/// Uniform distribution over all `s`-subset ranks of `[n]`.
pub fn uniform_subsets(n: usize, s: usize) -> Result<DiscreteDistribution> {
    let count = binomial(n, s) as usize;
    if count > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded { requested: count, budget: ENUMERATION_BUDGET });
    }
    Ok(DiscreteDistribution::uniform_over(0..count))
}

/// Both sides of the down-walk KL contraction, with the tight factor `t/s`
/// and the weaker self-contained factor `t/(s-t+1)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ContractionReport {
    pub kl_top_bits: f64,
    pub kl_down_bits: f64,
    pub tight_rhs: f64,
    pub weak_rhs: f64,
    pub holds_tight: bool,
    pub holds_weak: bool,
}

/// Checks `KL(mu1 D || mu0 D) <= (t/s) KL(mu1 || mu0)` against the uniform
/// reference `mu0`, reporting both factors.
pub fn divergence_contraction_check(
    mu1: &DiscreteDistribution,
    n: usize,
    s: usize,
    t: usize,
) -> Result<ContractionReport> {
    let mu0 = uniform_subsets(n, s)?;
    let lam0 = down_walk(&mu0, n, s, t)?;
    let lam1 = down_walk(mu1, n, s, t)?;
    let kl_top = kl_divergence(mu1, &mu0);
    let kl_down = kl_divergence(&lam1, &lam0);
    let tight_rhs = t as f64 / s as f64 * kl_top.bits;
    let weak_rhs = t as f64 / (s - t + 1) as f64 * kl_top.bits;
    let slack = 1e-12;
    Ok(ContractionReport {
        kl_top_bits: kl_top.bits,
        kl_down_bits: kl_down.bits,
        tight_rhs,
        weak_rhs,
        holds_tight: kl_down.bits <= tight_rhs + slack,
        holds_weak: kl_down.bits <= weak_rhs + slack,
    })
}

/// A partition of all `s`-subsets of `[n]` into at most `2^p` certificate
/// fibers: fiber `assignment[rank]` is the proof string the faithful prover
/// sends for that support.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CertificateFibers {
    n: usize,
    s: usize,
    p: usize,
    assignment: Vec<u32>,
}

impl CertificateFibers {
    pub fn new(n: usize, s: usize, p: usize, assignment: Vec<u32>) -> Result<Self> {
        let count = binomial(n, s) as usize;
        if count > ENUMERATION_BUDGET {
            return Err(Error::BudgetExceeded { requested: count, budget: ENUMERATION_BUDGET });
        }
        if assignment.len() != count {
            return Err(Error::DimensionMismatch { left: assignment.len(), right: count });
        }
        let fibers = 1u64 << p.min(63);
        if assignment.iter().any(|&f| (f as u64) >= fibers) {
            return Err(Error::invalid(format!("fiber id exceeds 2^{p}")));
        }
        Ok(Self { n, s, p, assignment })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn proof_bits(&self) -> usize {
        self.p
    }

    pub fn fiber_of(&self, rank: usize) -> u32 {
        self.assignment[rank]
    }

    /// Single fiber: the proof carries no information.
    pub fn trivial(n: usize, s: usize) -> Result<Self> {
        let count = binomial(n, s) as usize;
        Self::new(n, s, 0, vec![0; count])
    }

    /// Fiber = parity of the smallest element.
    pub fn by_min_parity(n: usize, s: usize) -> Result<Self> {
        let count = binomial(n, s) as usize;
        let mut assignment = Vec::with_capacity(count);
        for rank in 0..count {
            let subset = subset_unrank(n, s, rank);
            assignment.push((subset[0] % 2) as u32);
        }
        Self::new(n, s, 1, assignment)
    }

    /// `2^p` buckets keyed by the smallest element (adversarially skewed:
    /// bucket sizes vary wildly).
    pub fn by_min_bucket(n: usize, s: usize, p: usize) -> Result<Self> {
        let count = binomial(n, s) as usize;
        let fibers = 1usize << p;
        let mut assignment = Vec::with_capacity(count);
        for rank in 0..count {
            let subset = subset_unrank(n, s, rank);
            assignment.push((subset[0] % fibers) as u32);
        }
        Self::new(n, s, p, assignment)
    }

    /// One singled-out subset in its own fiber, everything else together:
    /// the most unbalanced two-fiber partition.
    pub fn singleton(n: usize, s: usize, special_rank: usize, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("singleton partition needs p >= 1"));
        }
        let count = binomial(n, s) as usize;
        let mut assignment = vec![0u32; count];
        if special_rank >= count {
            return Err(Error::invalid("special rank out of range"));
        }
        assignment[special_rank] = 1;
        Self::new(n, s, p, assignment)
    }

    /// Uniformly random assignment into `2^p` fibers.
    pub fn random(n: usize, s: usize, p: usize, rng: &mut Rng) -> Result<Self> {
        let count = binomial(n, s) as usize;
        let fibers = 1u32 << p;
        let assignment = (0..count).map(|_| rng.random_range(0..fibers)).collect();
        Self::new(n, s, p, assignment)
    }

    /// Refines this partition by splitting each fiber with an extra bit
    /// taken from the subset's second element's parity.
    pub fn refined(&self) -> Result<Self> {
        let mut assignment = Vec::with_capacity(self.assignment.len());
        for (rank, &f) in self.assignment.iter().enumerate() {
            let subset = subset_unrank(self.n, self.s, rank);
            let bit = (subset.get(1).copied().unwrap_or(0) % 2) as u32;
            assignment.push(f * 2 + bit);
        }
        Self::new(self.n, self.s, self.p + 1, assignment)
    }
}

/// Exact transcript analysis of the faithful versus adversarial processes.
#[derive(Debug, Clone, Serialize)]
pub struct MaBoundReport {
    pub n: usize,
    pub s: usize,
    pub t: usize,
    pub p: usize,
    /// Exact total variation between the two transcript distributions.
    pub tv: f64,
    /// The bound `sqrt(t p / (2 s))`.
    pub bound: f64,
    /// Collision correction term `t^2 / s` (context: the modified processes
    /// replace i.i.d. sampling, which differs by at most this much).
    pub collision_term: f64,
    pub kl_chain: KlChainReport,
    pub pass: bool,
}

/// Intermediate quantities of the KL chain, all in bits.
#[derive(Debug, Clone, Serialize)]
pub struct KlChainReport {
    /// `2 TV^2` (Pinsker's lower bound on the joint KL).
    pub pinsker_lhs: f64,
    /// `KL(faithful || adversarial)` over (proof, samples).
    pub kl_joint: f64,
    /// `E_pi KL(T | pi || T')`: the joint KL after removing the equal proof
    /// marginals and the independent ordering.
    pub kl_samples_given_proof: f64,
    /// `(t/s) E_pi KL(S | pi || S')`: the contraction upper bound.
    pub contraction_rhs: f64,
    /// `E_pi KL(S | pi || S') = I(S; Pi)`.
    pub information: f64,
    /// `t p / s`: the final bound on the joint KL.
    pub information_rhs: f64,
    pub pinsker_holds: bool,
    pub contraction_holds: bool,
    pub information_holds: bool,
}

type Rat = Ratio<i128>;

/// Builds the exact transcript distributions of the faithful and adversarial
/// processes for the given certificate fibers and sample count `t`, computes
/// their total variation exactly, and checks it against `sqrt(tp/(2s))`
/// along with every step of the KL chain.
pub fn ma_bound_pipeline(fibers: &CertificateFibers, t: usize) -> Result<MaBoundReport> {
    let (n, s, p) = (fibers.n, fibers.s, fibers.p);
    if t > s || t == 0 {
        return Err(Error::invalid(format!("need 1 <= t <= s, got t={t}, s={s}")));
    }
    let n_subsets = binomial_u128(n, s) as i128;
    let t_subsets_count = binomial(n, t) as usize;
    if t_subsets_count > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            requested: t_subsets_count,
            budget: ENUMERATION_BUDGET,
        });
    }
    let fiber_count = fibers.assignment.iter().map(|&f| f + 1).max().unwrap_or(1) as usize;
    let choose_s_t = binomial_u128(s, t) as i128;

    // Faithful: P1(pi, T) = #{S in F_pi : T subset of S} / (C(n,s) C(s,t)).
    // The random ordering of T is uniform under both processes, so total
    // variation over (pi, T-as-set) is exact.
    let mut faithful: Vec<Vec<Rat>> =
        vec![vec![Rat::new(0, 1); t_subsets_count]; fiber_count];
    let mut fiber_sizes: Vec<i128> = vec![0; fiber_count];
    let mut s_rank = 0usize;
    for_each_subset(n, s, |subset| {
        let fiber = fibers.assignment[s_rank] as usize;
        fiber_sizes[fiber] += 1;
        for_each_subset(s, t, |positions| {
            let sub: Vec<usize> = positions.iter().map(|&i| subset[i]).collect();
            let t_rank = subset_rank(n, &sub);
            faithful[fiber][t_rank] += Rat::new(1, n_subsets * choose_s_t);
        });
        s_rank += 1;
    });

    // Adversarial: P0(pi, T) = (|F_pi| / C(n,s)) * (1 / C(n,t)).
    let choose_n_t = binomial_u128(n, t) as i128;
    let adversarial_of = |fiber: usize| Rat::new(fiber_sizes[fiber], n_subsets * choose_n_t);

    let mut tv_rat = Rat::new(0, 1);
    let mut kl_joint = 0.0f64;
    let mut kl_samples = 0.0f64;
    for fiber in 0..fiber_count {
        let p0 = adversarial_of(fiber);
        let pi_mass = Rat::new(fiber_sizes[fiber], n_subsets);
        let pi_mass_f = ratio_to_f64(pi_mass);
        for t_rank in 0..t_subsets_count {
            let p1 = faithful[fiber][t_rank];
            let diff = if p1 > p0 { p1 - p0 } else { p0 - p1 };
            tv_rat += diff;
            let p1f = ratio_to_f64(p1);
            let p0f = ratio_to_f64(p0);
            if p1f > 0.0 {
                kl_joint += p1f * (p1f / p0f).log2();
                // Conditionals given the proof: divide both by P(pi).
                kl_samples += p1f * ((p1f / pi_mass_f) / (p0f / pi_mass_f)).log2();
            }
        }
    }
    let tv = ratio_to_f64(tv_rat) / 2.0;

    // Information term: E_pi KL(S | pi || uniform) = sum P(pi) log2(C(n,s)/|F_pi|).
    let mut information = 0.0f64;
    for fiber in 0..fiber_count {
        if fiber_sizes[fiber] == 0 {
            continue;
        }
        let pi_mass = fiber_sizes[fiber] as f64 / n_subsets as f64;
        information += pi_mass * (n_subsets as f64 / fiber_sizes[fiber] as f64).log2();
    }

    let bound = (t as f64 * p as f64 / (2.0 * s as f64)).sqrt();
    let slack = 1e-12;
    let kl_chain = KlChainReport {
        pinsker_lhs: 2.0 * tv * tv,
        kl_joint,
        kl_samples_given_proof: kl_samples,
        contraction_rhs: t as f64 / s as f64 * information,
        information,
        information_rhs: t as f64 * p as f64 / s as f64,
        pinsker_holds: 2.0 * tv * tv <= kl_joint + slack,
        contraction_holds: kl_samples <= t as f64 / s as f64 * information + slack,
        information_holds: information <= p as f64 + slack,
    };
    Ok(MaBoundReport {
        n,
        s,
        t,
        p,
        tv,
        bound,
        collision_term: (t * t) as f64 / s as f64,
        pass: tv <= bound + slack,
        kl_chain,
    })
}

fn ratio_to_f64(r: Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Merlin strategies for the private-coin set tester.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MerlinStrategy {
    /// Returns exactly `M intersect supp(mu)`.
    Honest,
    /// Returns `M intersect supp(mu)` truncated to `1.5k` elements by
    /// dropping uniformly random ones (sample-independent).
    TruncateCheat,
    /// Returns a uniformly random subset of `M` of size `min(|M|, 1.5k)`.
    RandomSubsetCheat,
}

/// One round of the private-coin tester: the verifier samples `k` elements
/// from the unknown distribution and `k` uniform decoys, sends the shuffled
/// union, and accepts iff the prover's reply is small and covers every real
/// sample.
pub fn ip_gapsupp(
    mu: &FlatDistribution,
    k: usize,
    merlin: MerlinStrategy,
    seed: u64,
) -> Result<ProtocolTranscript> {
    if k == 0 {
        return Err(Error::invalid("need k >= 1"));
    }
    let mut rng = crate::rng::seeded(seed);
    let n = mu.domain();

    let mut s_set: Vec<usize> = sample_flat(mu, k, &mut rng);
    s_set.sort_unstable();
    s_set.dedup();
    let mut r_set: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
    r_set.sort_unstable();
    r_set.dedup();

    let mut m: Vec<usize> = s_set.iter().chain(r_set.iter()).copied().collect();
    m.sort_unstable();
    m.dedup();
    m.shuffle(&mut rng);

    let limit = (1.5 * k as f64).floor() as usize;
    let m_prime: Vec<usize> = match merlin {
        MerlinStrategy::Honest => m.iter().copied().filter(|&x| mu.contains(x)).collect(),
        MerlinStrategy::TruncateCheat => {
            let mut known: Vec<usize> = m.iter().copied().filter(|&x| mu.contains(x)).collect();
            known.shuffle(&mut rng);
            known.truncate(limit);
            known
        }
        MerlinStrategy::RandomSubsetCheat => {
            let mut all = m.clone();
            all.shuffle(&mut rng);
            all.truncate(limit.min(m.len()));
            all
        }
    };

    let size_ok = m_prime.len() as f64 <= 1.5 * k as f64;
    let covers = s_set.iter().all(|x| m_prime.contains(x));
    let verdict = if size_ok && covers { Verdict::Accept } else { Verdict::Reject };
    let reason = if !size_ok {
        "reply-too-large"
    } else if !covers {
        "sample-not-covered"
    } else {
        "ok"
    };

    let mut stats = BTreeMap::new();
    stats.insert("k".to_string(), k as f64);
    stats.insert("m_size".to_string(), m.len() as f64);
    stats.insert("m_prime_size".to_string(), m_prime.len() as f64);
    stats.insert("s_size".to_string(), s_set.len() as f64);
    Ok(ProtocolTranscript::new(
        "ip-gapsupp",
        seed,
        format!("n={n},supp={},k={k},merlin={merlin:?}", mu.support_size()),
        stats,
        verdict,
        reason,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn sample_flat_singleton() {
        let mu = FlatDistribution::new(10, vec![3]).unwrap();
        let mut r = rng::seeded(1);
        assert_eq!(sample_flat(&mu, 4, &mut r), vec![3, 3, 3, 3]);
    }

    #[test]
    fn sample_flat_birthday_bound() {
        let mu = FlatDistribution::prefix(10_000, 100).unwrap();
        let mut r = rng::seeded(2);
        let trials = 10_000;
        let mut collisions = 0;
        for _ in 0..trials {
            let samples = sample_flat(&mu, 5, &mut r);
            if collision_statistic(&samples) > 0 {
                collisions += 1;
            }
        }
        let rate = collisions as f64 / trials as f64;
        assert!(rate <= 25.0 / 200.0, "collision rate {rate} above t^2/2s");
        assert!(rate > 0.05, "collision rate {rate} implausibly low");
    }

    #[test]
    fn sample_flat_marginal_chi_squared() {
        let s = 100usize;
        let mu = FlatDistribution::prefix(1000, s).unwrap();
        let mut r = rng::seeded(3);
        let draws = 100_000;
        let mut counts = vec![0usize; s];
        for x in sample_flat(&mu, draws, &mut r) {
            counts[x] += 1;
        }
        let expected = draws as f64 / s as f64;
        let chi2: f64 = counts.iter().map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        }).sum();
        // 99.99th percentile of chi^2 with 99 dof is ~161.
        assert!(chi2 < 161.0, "chi2 = {chi2}");
    }

    #[test]
    fn collision_statistic_counts_pairs() {
        assert_eq!(collision_statistic(&[1, 2, 3]), 0);
        assert_eq!(collision_statistic(&[1, 1, 1]), 3);
        assert_eq!(collision_statistic(&[2, 2, 5, 5, 5]), 1 + 3);
    }

    #[test]
    fn collision_statistic_birthday_expectation() {
        let s = 16usize;
        let mu = FlatDistribution::prefix(64, s).unwrap();
        let mut r = rng::seeded(4);
        let trials = 10_000;
        let mut total = 0usize;
        for _ in 0..trials {
            total += collision_statistic(&sample_flat(&mu, 8, &mut r));
        }
        let mean = total as f64 / trials as f64;
        let expect = binomial(8, 2) / s as f64; // 28/16
        // Per-trial variance is a few units; 3 sigma of the mean.
        let sigma = (3.0f64 / trials as f64).sqrt();
        assert!((mean - expect).abs() < 3.0 * sigma + 0.05, "mean {mean} vs {expect}");
    }

    #[test]
    fn down_walk_examples() {
        let n = 4;
        // Delta on {0,1}, t=s: identity.
        let rank_01 = subset_rank(n, &[0, 1]);
        let delta = DiscreteDistribution::delta(rank_01);
        let same = down_walk(&delta, n, 2, 2).unwrap();
        assert!((same.prob(rank_01) - 1.0).abs() < 1e-15);

        // Delta on {0,1}, t=1: uniform on {0} and {1} singleton ranks.
        let down = down_walk(&delta, n, 2, 1).unwrap();
        assert!((down.prob(subset_rank(n, &[0])) - 0.5).abs() < 1e-15);
        assert!((down.prob(subset_rank(n, &[1])) - 0.5).abs() < 1e-15);

        // Uniform over C(4,2) down to t=1: uniform on [4].
        let uni = uniform_subsets(n, 2).unwrap();
        let down1 = down_walk(&uni, n, 2, 1).unwrap();
        for i in 0..4 {
            assert!((down1.prob(subset_rank(n, &[i])) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn down_walk_mass_and_composition() {
        let mut r = rng::seeded(5);
        let n = 6;
        let count = binomial(n, 3) as usize;
        // Random distribution over 3-subsets.
        let mut weights: Vec<f64> = (0..count).map(|_| r.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mu = DiscreteDistribution::new(weights.into_iter().enumerate().collect()).unwrap();

        let direct = down_walk(&mu, n, 3, 1).unwrap();
        let stepped = down_walk(&down_walk(&mu, n, 3, 2).unwrap(), n, 2, 1).unwrap();
        for i in 0..n {
            let rank = subset_rank(n, &[i]);
            assert!((direct.prob(rank) - stepped.prob(rank)).abs() < 1e-12);
        }
        let mass: f64 = direct.iter().map(|(_, p)| p).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let uni = DiscreteDistribution::uniform_over(0..8);
        assert_eq!(kl_divergence(&uni, &uni).bits, 0.0);

        let delta = DiscreteDistribution::delta(3);
        let kl = kl_divergence(&delta, &uni);
        assert!((kl.bits - 3.0).abs() < 1e-12); // log2 8
        assert!(!kl.support_violation);

        // Bern(1) vs Bern(1/2): 1 bit.
        let bern1 = DiscreteDistribution::delta(1);
        let bern_half = DiscreteDistribution::uniform_over(0..2);
        assert!((kl_divergence(&bern1, &bern_half).bits - 1.0).abs() < 1e-12);

        // Support violation: +inf with flag.
        let wide = DiscreteDistribution::uniform_over(0..4);
        let narrow = DiscreteDistribution::uniform_over(0..2);
        let bad = kl_divergence(&wide, &narrow);
        assert!(bad.bits.is_infinite() && bad.support_violation);
    }

    #[test]
    fn contraction_worked_case() {
        // N=4, s=2, t=1, mu1 = delta on {0,1}: KL(lambda) = 1 bit,
        // (t/s) KL(mu) = 0.5 log2 6 ~ 1.2925.
        let n = 4;
        let mu1 = DiscreteDistribution::delta(subset_rank(n, &[0, 1]));
        let report = divergence_contraction_check(&mu1, n, 2, 1).unwrap();
        assert!((report.kl_down_bits - 1.0).abs() < 1e-12);
        assert!((report.kl_top_bits - 6f64.log2()).abs() < 1e-12);
        assert!(report.holds_tight && report.holds_weak);

        // mu1 = mu0: zero on both sides.
        let mu0 = uniform_subsets(n, 2).unwrap();
        let r0 = divergence_contraction_check(&mu0, n, 2, 1).unwrap();
        assert_eq!(r0.kl_top_bits, 0.0);
        assert_eq!(r0.kl_down_bits, 0.0);
    }

    #[test]
    fn contraction_random_distributions() {
        let mut r = rng::seeded(6);
        let n = 6;
        let s = 3;
        let count = binomial(n, s) as usize;
        for t in [1usize, 2] {
            for _ in 0..100 {
                let mut weights: Vec<f64> = (0..count).map(|_| r.random::<f64>()).collect();
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                let mu1 =
                    DiscreteDistribution::new(weights.into_iter().enumerate().collect()).unwrap();
                let report = divergence_contraction_check(&mu1, n, s, t).unwrap();
                assert!(report.holds_tight, "tight contraction violated: {report:?}");
            }
        }
    }

    #[test]
    fn per_coordinate_chain_bound() {
        // Sequential sampling without replacement from a random mu1 versus
        // uniform: coordinate i's KL is at most 1/(s-i+1) of the tail KL.
        let n = 5usize;
        let s = 3usize;
        let mut r = rng::seeded(7);
        let count = binomial(n, s) as usize;
        for _ in 0..20 {
            let mut weights: Vec<f64> = (0..count).map(|_| r.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);

            // Joint density over ordered distinct triples.
            let seq_prob = |w: &[f64], seq: &[usize]| -> f64 {
                let mut set: Vec<usize> = seq.to_vec();
                set.sort_unstable();
                if set.windows(2).any(|x| x[0] == x[1]) {
                    return 0.0;
                }
                w[subset_rank(n, &set)] / 6.0
            };
            let uniform_w = vec![1.0 / count as f64; count];

            for i in 1usize..=2 {
                // Enumerate prefixes of length i-1 with distinct elements.
                let prefixes: Vec<Vec<usize>> = match i {
                    1 => vec![vec![]],
                    2 => (0..n).map(|a| vec![a]).collect(),
                    _ => unreachable!(),
                };
                for prefix in prefixes {
                    // Tail distributions over completions (ordered).
                    let mut kl_tail = 0.0f64;
                    let mut kl_coord = 0.0f64;
                    // Probability of the prefix under each measure.
                    let prefix_mass = |w: &[f64]| -> f64 {
                        let mut mass = 0.0;
                        every_sequence(n, s, &mut |seq| {
                            if seq[..i - 1] == prefix[..] {
                                mass += seq_prob(w, seq);
                            }
                        });
                        mass
                    };
                    let mass1 = prefix_mass(&weights);
                    let mass0 = prefix_mass(&uniform_w);
                    if mass1 == 0.0 {
                        continue;
                    }
                    // Tail KL over full continuations.
                    every_sequence(n, s, &mut |seq| {
                        if seq[..i - 1] != prefix[..] {
                            return;
                        }
                        let p = seq_prob(&weights, seq) / mass1;
                        let q = seq_prob(&uniform_w, seq) / mass0;
                        if p > 0.0 {
                            kl_tail += p * (p / q).log2();
                        }
                    });
                    // Coordinate KL: marginal of position i given prefix.
                    for x in 0..n {
                        if prefix.contains(&x) {
                            continue;
                        }
                        let mut p = 0.0f64;
                        let mut q = 0.0f64;
                        every_sequence(n, s, &mut |seq| {
                            if seq[..i - 1] == prefix[..] && seq[i - 1] == x {
                                p += seq_prob(&weights, seq);
                                q += seq_prob(&uniform_w, seq);
                            }
                        });
                        p /= mass1;
                        q /= mass0;
                        if p > 0.0 {
                            kl_coord += p * (p / q).log2();
                        }
                    }
                    let factor = 1.0 / (s - i + 1) as f64;
                    assert!(
                        kl_coord <= factor * kl_tail + 1e-10,
                        "coordinate KL {kl_coord} exceeds {factor} * {kl_tail} at i={i}"
                    );
                }
            }
        }

        fn every_sequence(n: usize, s: usize, f: &mut dyn FnMut(&[usize])) {
            let mut seq = vec![0usize; s];
            rec(n, s, 0, &mut seq, f);
            fn rec(n: usize, s: usize, depth: usize, seq: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
                if depth == s {
                    f(seq);
                    return;
                }
                for v in 0..n {
                    if seq[..depth].contains(&v) {
                        continue;
                    }
                    seq[depth] = v;
                    rec(n, s, depth + 1, seq, f);
                }
            }
        }
    }

    #[test]
    fn ma_bound_trivial_fiber_has_zero_tv() {
        let fibers = CertificateFibers::trivial(6, 2).unwrap();
        let report = ma_bound_pipeline(&fibers, 1).unwrap();
        assert!(report.tv.abs() < 1e-15);
        assert!(report.pass);
        assert!(report.kl_chain.pinsker_holds);
    }

    #[test]
    fn ma_bound_min_parity_worked_case() {
        let fibers = CertificateFibers::by_min_parity(6, 2).unwrap();
        let report = ma_bound_pipeline(&fibers, 1).unwrap();
        assert!(report.tv <= 0.5 + 1e-12, "tv {} above sqrt(1/4)", report.tv);
        assert!(report.pass);
        assert!(report.kl_chain.contraction_holds);
        assert!(report.kl_chain.information_holds);
        assert!(report.tv > 0.0, "parity fiber must carry some information");
    }

    #[test]
    fn ma_bound_monotone_under_refinement() {
        let base = CertificateFibers::by_min_parity(7, 3).unwrap();
        let refined = base.refined().unwrap();
        let r1 = ma_bound_pipeline(&base, 2).unwrap();
        let r2 = ma_bound_pipeline(&refined, 2).unwrap();
        assert!(r2.tv >= r1.tv - 1e-12, "refinement decreased TV: {} -> {}", r1.tv, r2.tv);
        assert!(r1.pass && r2.pass);
    }

    #[test]
    fn ip_gapsupp_small_support_honest_accepts() {
        let n = 300;
        let mu = FlatDistribution::prefix(n, n / 3).unwrap();
        let mut accepts = 0;
        let trials = 200;
        for i in 0..trials {
            let t = ip_gapsupp(&mu, 30, MerlinStrategy::Honest, 1000 + i).unwrap();
            if t.verdict == Verdict::Accept {
                accepts += 1;
            }
        }
        assert!(accepts as f64 / trials as f64 >= 0.9, "honest accept rate too low");
    }

    #[test]
    fn ip_gapsupp_large_support_cheats_fail() {
        let n = 300;
        let mu = FlatDistribution::prefix(n, 2 * n / 3).unwrap();
        for strategy in [MerlinStrategy::TruncateCheat, MerlinStrategy::RandomSubsetCheat] {
            let mut accepts = 0;
            let trials = 200;
            for i in 0..trials {
                let t = ip_gapsupp(&mu, 30, strategy, 2000 + i).unwrap();
                if t.verdict == Verdict::Accept {
                    accepts += 1;
                }
            }
            assert!(
                accepts as f64 / trials as f64 <= 0.1,
                "{strategy:?} accept rate too high"
            );
        }
    }

    #[test]
    fn ip_gapsupp_full_support_honest_rejects_by_size() {
        let n = 3000;
        let mu = FlatDistribution::prefix(n, n).unwrap();
        let t = ip_gapsupp(&mu, 60, MerlinStrategy::Honest, 5).unwrap();
        assert_eq!(t.verdict, Verdict::Reject);
        assert_eq!(t.reason, "reply-too-large");
    }

    #[test]
    fn ip_gapsupp_reproducible() {
        let mu = FlatDistribution::prefix(100, 33).unwrap();
        let a = ip_gapsupp(&mu, 10, MerlinStrategy::Honest, 9).unwrap();
        let b = ip_gapsupp(&mu, 10, MerlinStrategy::Honest, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn ip_gapsupp_completeness_monotone_in_k() {
        let n = 3000;
        let mu = FlatDistribution::prefix(n, n / 3).unwrap();
        let mut rates = Vec::new();
        for k in [10usize, 30, 60] {
            let trials = 300;
            let mut accepts = 0;
            for i in 0..trials {
                let t = ip_gapsupp(&mu, k, MerlinStrategy::Honest, 7000 + i).unwrap();
                if t.verdict == Verdict::Accept {
                    accepts += 1;
                }
            }
            rates.push(accepts as f64 / trials as f64);
        }
        assert!(rates[0] <= rates[1] + 0.02 && rates[1] <= rates[2] + 0.02, "{rates:?}");
    }
}
