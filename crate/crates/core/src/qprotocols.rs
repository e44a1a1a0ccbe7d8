//! The quantum protocol stack: swap tests, the random-matching symmetry
//! test, tilted-collection analysis, the three-overlap subset test, the
//! support-size certification pipeline with honest and adversarial provers,
//! the support-halving decision rule, and the absolute-amplitude
//! distinguisher experiment.
//!
//! Protocols run in one of two modes. In exact-probability mode every swap
//! outcome is replaced by its exact acceptance probability, so completeness
//! and soundness structure can be asserted deterministically. In sampled
//! mode outcomes are Bernoulli draws from a seed-derived stream and the
//! transcript is reproducible byte for byte.

use crate::ensembles::{subset_state, SubsetSpec};
use crate::linalg::{self, StateVector};
use crate::rng::{self, Rng};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Exact-mode verdicts treat an acceptance probability this close to one as
/// certain acceptance.
const EXACT_ACCEPT_TOL: f64 = 1e-9;

/// Configured constant in the halving precondition `delta < C * mu^4`.
pub const HALVING_DELTA_CAP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject,
}

/// How swap outcomes are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMode {
    /// Replace Bernoulli outcomes by their exact probabilities.
    ExactProbability,
    /// Draw outcomes from the seed-derived stream.
    Sampled,
}

/// Record of one protocol run: inputs digest, statistics, verdict, reason.
/// Identical seed and inputs reproduce identical transcript bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolTranscript {
    pub protocol: String,
    pub seed: u64,
    pub inputs_digest: String,
    pub stats: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub reason: String,
}

impl ProtocolTranscript {
    pub fn new(
        protocol: &str,
        seed: u64,
        inputs: String,
        stats: BTreeMap<String, f64>,
        verdict: Verdict,
        reason: &str,
    ) -> Self {
        Self {
            protocol: protocol.to_string(),
            seed,
            inputs_digest: format!("{:016x}", fnv1a64(inputs.as_bytes())),
            stats,
            verdict,
            reason: reason.to_string(),
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// A labeled list of equal-dimension pure states.
#[derive(Debug, Clone)]
pub struct StateCollection {
    states: Vec<StateVector>,
    label: String,
}

impl StateCollection {
    pub fn new(states: Vec<StateVector>, label: impl Into<String>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("collection must be nonempty"));
        }
        let dim = states[0].dim();
        if states.iter().any(|s| s.dim() != dim) {
            return Err(Error::invalid("collection states must share a dimension"));
        }
        Ok(Self { states, label: label.into() })
    }

    /// `m` copies of one state.
    pub fn copies(state: StateVector, m: usize, label: impl Into<String>) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("collection must be nonempty"));
        }
        Ok(Self { states: vec![state; m], label: label.into() })
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    fn digest_input(&self) -> String {
        let mut out = format!("{}:{}x{}", self.label, self.len(), self.dim());
        for s in &self.states {
            for a in s.amps() {
                out.push_str(&format!("{:.12e},{:.12e};", a.re, a.im));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Swap test.

/// Exact swap-test acceptance probability `(1 + |<a|b>|^2) / 2`.
pub fn swap_test_prob(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok((1.0 + linalg::overlap_sq(a, b)?) / 2.0)
}

/// One Bernoulli swap outcome.
pub fn swap_test_sample(a: &StateVector, b: &StateVector, rng: &mut Rng) -> Result<bool> {
    let p = swap_test_prob(a, b)?;
    Ok(rng.random::<f64>() < p)
}

// ---------------------------------------------------------------------------
// Symmetry test.

/// Runs the random-matching symmetry test on a collection of even size.
///
/// Exact mode returns the acceptance probability averaged over all perfect
/// matchings (feasible for `m <= 10`); the verdict is Accept iff that
/// probability is 1. Sampled mode draws a matching and Bernoulli outcomes.
pub fn symmetry_test(c: &StateCollection, mode: TestMode, seed: u64) -> Result<ProtocolTranscript> {
    let m = c.len();
    if m % 2 != 0 {
        return Err(Error::invalid(format!("symmetry test needs even m, got {m}")));
    }
    let mut stats = BTreeMap::new();
    let (verdict, reason) = match mode {
        TestMode::ExactProbability => {
            if m > 10 {
                return Err(Error::invalid(format!(
                    "exact matching average is capped at m = 10, got {m}"
                )));
            }
            let p = exact_matching_acceptance(c)?;
            stats.insert("acceptance_probability".into(), p);
            if p >= 1.0 - EXACT_ACCEPT_TOL {
                (Verdict::Accept, "exact-probability-one")
            } else {
                (Verdict::Reject, "exact-probability-below-one")
            }
        }
        TestMode::Sampled => {
            let mut rng = rng::seeded(seed);
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng);
            let mut all = true;
            let mut accepted_pairs = 0usize;
            for pair in order.chunks(2) {
                if swap_test_sample(&c.states[pair[0]], &c.states[pair[1]], &mut rng)? {
                    accepted_pairs += 1;
                } else {
                    all = false;
                }
            }
            stats.insert("accepted_pairs".into(), accepted_pairs as f64);
            stats.insert("pairs".into(), (m / 2) as f64);
            if all {
                (Verdict::Accept, "all-pairs-accepted")
            } else {
                (Verdict::Reject, "pair-rejected")
            }
        }
    };
    Ok(ProtocolTranscript::new("symmetry-test", seed, c.digest_input(), stats, verdict, reason))
}

/// Average over all perfect matchings of the product of pair acceptance
/// probabilities.
pub fn exact_matching_acceptance(c: &StateCollection) -> Result<f64> {
    let m = c.len();
    if m % 2 != 0 {
        return Err(Error::invalid("even collection required"));
    }
    // Pairwise probabilities.
    let mut probs = vec![0.0f64; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let p = swap_test_prob(&c.states[i], &c.states[j])?;
            probs[i * m + j] = p;
            probs[j * m + i] = p;
        }
    }
    let mut used = vec![false; m];
    let (total, count) = matching_rec(&mut used, &probs, m);
    Ok(total / count as f64)
}

fn matching_rec(used: &mut [bool], probs: &[f64], m: usize) -> (f64, u64) {
    let first = match used.iter().position(|&u| !u) {
        Some(i) => i,
        None => return (1.0, 1),
    };
    used[first] = true;
    let mut total = 0.0;
    let mut count = 0u64;
    for j in (first + 1)..m {
        if used[j] {
            continue;
        }
        used[j] = true;
        let (sub, subcount) = matching_rec(used, probs, m);
        total += probs[first * m + j] * sub;
        count += subcount;
        used[j] = false;
    }
    used[first] = false;
    (total, count)
}

// ---------------------------------------------------------------------------
// Tilted collections.

/// Witness that a collection is delta-tilted: a representative index set of
/// size at least `(1 - delta) m` whose states are pairwise within
/// `sqrt(delta)` trace distance.
#[derive(Debug, Clone, Serialize)]
pub struct TiltedReport {
    pub delta: f64,
    pub representative_indices: Vec<usize>,
    pub max_pairwise_td_in_r: f64,
}

#[derive(Debug, Clone, Serialize)]
pub enum TiltedOutcome {
    Tilted(TiltedReport),
    NotTilted { max_clique: usize, needed: usize },
}

/// Pure-state trace distance `sqrt(1 - |<a|b>|^2)`.
pub fn pure_trace_distance(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok((1.0 - linalg::overlap_sq(a, b)?).max(0.0).sqrt())
}

/// Exact maximum-clique check of the tilted property (collections up to
/// `m = 24`). The graph joins indices whose states are within
/// `sqrt(delta)` trace distance.
pub fn tilted_check(c: &StateCollection, delta: f64) -> Result<TiltedOutcome> {
    let m = c.len();
    if m > 24 {
        return Err(Error::BudgetExceeded { requested: m, budget: 24 });
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid("delta must lie in [0, 1]"));
    }
    let threshold = delta.sqrt() + 1e-9;
    let mut adj = vec![0u32; m];
    let mut dists = vec![0.0f64; m * m];
    for i in 0..m {
        adj[i] |= 1 << i;
        for j in (i + 1)..m {
            let td = pure_trace_distance(&c.states[i], &c.states[j])?;
            dists[i * m + j] = td;
            dists[j * m + i] = td;
            if td <= threshold {
                adj[i] |= 1 << j;
                adj[j] |= 1 << i;
            }
        }
    }
    let best = max_clique(&adj, m);
    let needed = ((1.0 - delta) * m as f64).ceil() as usize;
    if best.count_ones() as usize >= needed {
        let indices: Vec<usize> = (0..m).filter(|&i| best >> i & 1 == 1).collect();
        let mut worst = 0.0f64;
        for (a, &i) in indices.iter().enumerate() {
            for &j in &indices[a + 1..] {
                worst = worst.max(dists[i * m + j]);
            }
        }
        Ok(TiltedOutcome::Tilted(TiltedReport {
            delta,
            representative_indices: indices,
            max_pairwise_td_in_r: worst,
        }))
    } else {
        Ok(TiltedOutcome::NotTilted { max_clique: best.count_ones() as usize, needed })
    }
}

/// Greedy fallback for larger collections; may underestimate the clique, so
/// a `Tilted` answer is trustworthy and `NotTilted` is heuristic.
pub fn tilted_check_greedy(c: &StateCollection, delta: f64) -> Result<TiltedOutcome> {
    let m = c.len();
    let threshold = delta.sqrt() + 1e-9;
    let mut best: Vec<usize> = Vec::new();
    for start in 0..m {
        let mut clique = vec![start];
        for j in 0..m {
            if j == start {
                continue;
            }
            let mut ok = true;
            for &i in &clique {
                if pure_trace_distance(&c.states[i], &c.states[j])? > threshold {
                    ok = false;
                    break;
                }
            }
            if ok {
                clique.push(j);
            }
        }
        if clique.len() > best.len() {
            best = clique;
        }
    }
    let needed = ((1.0 - delta) * m as f64).ceil() as usize;
    if best.len() >= needed {
        best.sort_unstable();
        let mut worst = 0.0f64;
        for (a, &i) in best.iter().enumerate() {
            for &j in &best[a + 1..] {
                worst = worst.max(pure_trace_distance(&c.states[i], &c.states[j])?);
            }
        }
        Ok(TiltedOutcome::Tilted(TiltedReport {
            delta,
            representative_indices: best,
            max_pairwise_td_in_r: worst,
        }))
    } else {
        Ok(TiltedOutcome::NotTilted { max_clique: best.len(), needed })
    }
}

fn max_clique(adj: &[u32], m: usize) -> u32 {
    fn expand(adj: &[u32], candidates: u32, current: u32, best: &mut u32) {
        if current.count_ones() + candidates.count_ones() <= best.count_ones() {
            return;
        }
        if candidates == 0 {
            if current.count_ones() > best.count_ones() {
                *best = current;
            }
            return;
        }
        let mut cand = candidates;
        while cand != 0 {
            if current.count_ones() + cand.count_ones() <= best.count_ones() {
                return;
            }
            let v = cand.trailing_zeros() as usize;
            cand &= !(1 << v);
            expand(adj, cand & adj[v], current | (1 << v), best);
        }
    }
    let mut best = 0u32;
    let all = if m == 32 { u32::MAX } else { (1u32 << m) - 1 };
    expand(adj, all, 0, &mut best);
    best
}

/// Pairwise tensor of two equal-length collections; a delta-tilted and a
/// gamma-tilted input yield a (delta+gamma)-tilted output.
pub fn tensor_tilted(a: &StateCollection, b: &StateCollection) -> Result<StateCollection> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let states = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| x.tensor(y))
        .collect();
    StateCollection::new(states, format!("{}(x){}", a.label, b.label))
}

// ---------------------------------------------------------------------------
// Support halving.

/// Applies the three overlap conditions of the halving rule:
/// `ov_ss' <= delta`, `|ov_hs - mu| <= delta`, `|ov_hs' - (1-mu)| <= delta`.
pub fn halving_decision(
    ov_ss_prime: f64,
    ov_hs: f64,
    ov_hs_prime: f64,
    mu: f64,
    delta: f64,
) -> Result<bool> {
    for (name, v) in [("ov_ss'", ov_ss_prime), ("ov_hs", ov_hs), ("ov_hs'", ov_hs_prime)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("overlap {name}={v} outside [0,1]")));
        }
    }
    if !(0.0 < mu && mu < 1.0) {
        return Err(Error::invalid(format!("mu={mu} outside (0,1)")));
    }
    if !(0.0..1.0).contains(&delta) || delta >= HALVING_DELTA_CAP * mu.powi(4) {
        return Err(Error::invalid(format!(
            "delta={delta} violates delta < {HALVING_DELTA_CAP} * mu^4"
        )));
    }
    Ok(ov_ss_prime <= delta && (ov_hs - mu).abs() <= delta && (ov_hs_prime - (1.0 - mu)).abs() <= delta)
}

/// Exhaustive calibration of the halving rule over all subset triples of a
/// small domain: every accepted triple must have `|S|/|H|` within
/// `mu +- 4 delta^(1/4)`.
#[derive(Debug, Clone, Serialize)]
pub struct HalvingScanReport {
    pub d: usize,
    pub mu: f64,
    pub delta: f64,
    pub accepted: usize,
    pub counterexamples: usize,
    pub max_ratio_deviation: f64,
    /// `max |ratio - mu| / delta^(1/4)` over accepted triples: the measured
    /// constant in front of the fourth-root error term.
    pub measured_constant: f64,
    pub ratio_bound: f64,
}

pub fn halving_scan(d: usize, mu: f64, delta: f64) -> Result<HalvingScanReport> {
    if d == 0 || d > 16 {
        return Err(Error::invalid("halving scan supports 1 <= d <= 16"));
    }
    if !(0.0 < mu && mu < 1.0) || !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid("bad mu or delta"));
    }
    let full = 1u32 << d;
    let popcount = |x: u32| x.count_ones() as f64;
    let mut accepted = 0usize;
    let mut counterexamples = 0usize;
    let mut max_dev = 0.0f64;
    let ratio_bound = 4.0 * delta.powf(0.25);

    for h in 1..full {
        let hc = popcount(h);
        for s in 1..full {
            let sc = popcount(s);
            let ov_hs = {
                let i = popcount(h & s);
                i * i / (hc * sc)
            };
            if (ov_hs - mu).abs() > delta {
                continue;
            }
            for sp in 1..full {
                let spc = popcount(sp);
                let i_ssp = popcount(s & sp);
                let ov_ssp = i_ssp * i_ssp / (sc * spc);
                if ov_ssp > delta {
                    continue;
                }
                let i_hsp = popcount(h & sp);
                let ov_hsp = i_hsp * i_hsp / (hc * spc);
                if (ov_hsp - (1.0 - mu)).abs() > delta {
                    continue;
                }
                accepted += 1;
                let ratio = sc / hc;
                let dev = (ratio - mu).abs();
                max_dev = max_dev.max(dev);
                if dev > ratio_bound {
                    counterexamples += 1;
                }
            }
        }
    }
    let measured_constant = if delta > 0.0 { max_dev / delta.powf(0.25) } else { 0.0 };
    Ok(HalvingScanReport {
        d,
        mu,
        delta,
        accepted,
        counterexamples,
        max_ratio_deviation: max_dev,
        measured_constant,
        ratio_bound,
    })
}

// ---------------------------------------------------------------------------
// Subset test.

/// Three-overlap subset test on collections supposedly holding copies of
/// `phi_H`, `phi_S`, `phi_S'`. Each collection is split deterministically
/// into first/second halves; `alpha`, `beta`, `zeta` estimate the three
/// squared overlaps through swap tests; accept iff all three statistics sit
/// within `gamma` of their targets.
pub fn subset_test(
    phi1: &StateCollection,
    phi2: &StateCollection,
    psi2: &StateCollection,
    mu: f64,
    gamma: f64,
    mode: TestMode,
    seed: u64,
) -> Result<ProtocolTranscript> {
    let m = phi1.len();
    if phi2.len() != m || psi2.len() != m {
        return Err(Error::DimensionMismatch { left: m, right: phi2.len().max(psi2.len()) });
    }
    if m % 2 != 0 || m == 0 {
        return Err(Error::invalid("subset test needs even nonempty collections"));
    }
    if phi1.dim() != phi2.dim() || phi1.dim() != psi2.dim() {
        return Err(Error::DimensionMismatch { left: phi1.dim(), right: phi2.dim() });
    }
    let half = m / 2;
    let mut rng = rng::seeded(seed);
    let mut pair_stat = |a: &[StateVector], b: &[StateVector]| -> Result<f64> {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += match mode {
                TestMode::ExactProbability => swap_test_prob(x, y)?,
                TestMode::Sampled => {
                    if swap_test_sample(x, y, &mut rng)? {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
        Ok(acc / half as f64)
    };
    // alpha from (Phi1', Phi2'), beta from (Phi1'', Psi2'), zeta from (Phi2'', Psi2'').
    let alpha = pair_stat(&phi1.states[..half], &phi2.states[..half])?;
    let beta = pair_stat(&phi1.states[half..], &psi2.states[..half])?;
    let zeta = pair_stat(&phi2.states[half..], &psi2.states[half..])?;

    let ok_alpha = ((2.0 * alpha - 1.0) - mu).abs() <= gamma;
    let ok_beta = ((2.0 * beta - 1.0) - (1.0 - mu)).abs() <= gamma;
    let ok_zeta = (2.0 * zeta - 1.0).abs() <= gamma;
    let verdict = if ok_alpha && ok_beta && ok_zeta { Verdict::Accept } else { Verdict::Reject };
    let reason = if verdict == Verdict::Accept {
        "all-three-within-gamma"
    } else if !ok_alpha {
        "alpha-out-of-band"
    } else if !ok_beta {
        "beta-out-of-band"
    } else {
        "zeta-out-of-band"
    };
    let mut stats = BTreeMap::new();
    stats.insert("alpha".into(), alpha);
    stats.insert("beta".into(), beta);
    stats.insert("zeta".into(), zeta);
    stats.insert("mu".into(), mu);
    stats.insert("gamma".into(), gamma);
    let inputs = format!(
        "{}|{}|{}",
        phi1.digest_input(),
        phi2.digest_input(),
        psi2.digest_input()
    );
    Ok(ProtocolTranscript::new("subset-test", seed, inputs, stats, verdict, reason))
}

// ---------------------------------------------------------------------------
// Certification pipeline.

/// Tolerances and sizes for the certification pipeline. The paper-style
/// schedule fixes `delta` and `gamma` from `(eps, n)`; desk-scale overrides
/// are permitted and flagged.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CertParams {
    pub eps: f64,
    pub delta: f64,
    pub gamma: f64,
    pub m: usize,
    pub mode: TestMode,
    pub desk_scale_override: bool,
}

impl CertParams {
    /// `delta = eps^16 / (320^2 n^8)`, `gamma = eps^8 / (80 n^4)`.
    pub fn paper_schedule(eps: f64, n: usize, m: usize, mode: TestMode) -> Result<Self> {
        if !(0.0 < eps && eps <= 0.5) {
            return Err(Error::invalid("eps must lie in (0, 1/2]"));
        }
        let nf = n as f64;
        Ok(Self {
            eps,
            delta: eps.powi(16) / (320.0 * 320.0 * nf.powi(8)),
            gamma: eps.powi(8) / (80.0 * nf.powi(4)),
            m,
            mode,
            desk_scale_override: false,
        })
    }

    /// Directly chosen `(delta, gamma, m)`, flagged as an override.
    pub fn desk_scale(eps: f64, delta: f64, gamma: f64, m: usize, mode: TestMode) -> Self {
        Self { eps, delta, gamma, m, mode, desk_scale_override: true }
    }

    /// The soundness margins `gamma <= kappa^4 - 16 sqrt(delta)` and
    /// `kappa^4 >= 17 sqrt(delta)` for a given detection scale `kappa`.
    pub fn check_margins(&self, kappa: f64) -> Result<()> {
        let k4 = kappa.powi(4);
        let rt = self.delta.sqrt();
        if k4 < 17.0 * rt {
            return Err(Error::invalid(format!(
                "kappa^4 = {k4:.3e} below 17 sqrt(delta) = {:.3e}",
                17.0 * rt
            )));
        }
        if self.gamma > k4 - 16.0 * rt {
            return Err(Error::invalid(format!(
                "gamma = {:.3e} above kappa^4 - 16 sqrt(delta) = {:.3e}",
                self.gamma,
                k4 - 16.0 * rt
            )));
        }
        Ok(())
    }
}

/// A certification proof: collections of subset states. `phi[i]` holds the
/// claimed copies of `phi_{S_i}` for `i = 0..=ell`; `psi[i-1]` holds the
/// claimed copies of the complement-within-parent states for `i = 1..=ell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofBundle {
    pub d: usize,
    pub m: usize,
    pub ell: usize,
    pub phi: Vec<Vec<SubsetSpec>>,
    pub psi: Vec<Vec<SubsetSpec>>,
}

impl ProofBundle {
    /// Structural sanity: collection counts and sizes line up and all specs
    /// live on the declared domain.
    pub fn well_formed(&self) -> std::result::Result<(), String> {
        if self.phi.len() != self.ell + 1 {
            return Err(format!("expected {} phi collections, got {}", self.ell + 1, self.phi.len()));
        }
        if self.psi.len() != self.ell {
            return Err(format!("expected {} psi collections, got {}", self.ell, self.psi.len()));
        }
        if self.m == 0 || self.m % 2 != 0 {
            return Err(format!("m = {} must be positive and even", self.m));
        }
        for (tag, group) in [("phi", &self.phi), ("psi", &self.psi)] {
            for (i, collection) in group.iter().enumerate() {
                if collection.len() != self.m {
                    return Err(format!("{tag}[{i}] has {} states, expected {}", collection.len(), self.m));
                }
                if collection.iter().any(|s| s.domain() != self.d) {
                    return Err(format!("{tag}[{i}] contains a state on the wrong domain"));
                }
            }
        }
        Ok(())
    }

    pub fn collection(&self, specs: &[SubsetSpec], label: String) -> Result<StateCollection> {
        StateCollection::new(specs.iter().map(subset_state).collect(), label)
    }

    /// The support size this proof certifies.
    pub fn certified_size(&self) -> usize {
        self.d >> self.ell
    }
}

/// Honest prover: nested lowest-index halving chain ending at the target.
/// Requires `d` and `|T|` to be powers of two with `|T|` dividing `d`.
pub fn honest_prover(target: &SubsetSpec, m: usize) -> Result<ProofBundle> {
    let d = target.domain();
    let t_size = target.size();
    if !d.is_power_of_two() || !t_size.is_power_of_two() {
        return Err(Error::invalid("domain and target sizes must be powers of two"));
    }
    if m == 0 || m % 2 != 0 {
        return Err(Error::invalid("m must be positive and even"));
    }
    let ell = (d / t_size).trailing_zeros() as usize;
    let chain = nested_chain(target, &size_chain(d, t_size, ell))?;
    bundle_from_chain(d, m, &chain)
}

/// Sizes `d, d/2, ..., |T|`.
fn size_chain(d: usize, t_size: usize, ell: usize) -> Vec<usize> {
    (0..=ell).map(|i| (d >> i).max(t_size)).collect()
}

/// Nested sets of the given sizes, each containing the target, filled with
/// the lowest available indices.
fn nested_chain(target: &SubsetSpec, sizes: &[usize]) -> Result<Vec<SubsetSpec>> {
    let d = target.domain();
    let rest: Vec<usize> = (0..d).filter(|i| !target.contains(*i)).collect();
    let mut chain = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size < target.size() {
            return Err(Error::invalid("chain size dips below the target"));
        }
        let mut indices = target.indices().to_vec();
        indices.extend_from_slice(&rest[..size - target.size()]);
        chain.push(SubsetSpec::new(d, indices)?);
    }
    Ok(chain)
}

fn bundle_from_chain(d: usize, m: usize, chain: &[SubsetSpec]) -> Result<ProofBundle> {
    let ell = chain.len() - 1;
    let phi: Vec<Vec<SubsetSpec>> = chain.iter().map(|s| vec![s.clone(); m]).collect();
    let mut psi = Vec::with_capacity(ell);
    for i in 1..=ell {
        let comp = chain[i].complement_within(&chain[i - 1])?;
        psi.push(vec![comp; m]);
    }
    Ok(ProofBundle { d, m, ell, phi, psi })
}

/// The engineered attacks, each triggering exactly one rejection path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversaryKind {
    /// One collection mixes two orthogonal subset states half and half.
    NonTilted,
    /// Claims `ell - 1` halvings: some chain ratio must stray from 1/2.
    WrongEll,
    /// The final collection encodes a shifted target, caught by the swap
    /// test against the input state.
    WrongFinal,
    /// A 3/4 ratio step hidden in an otherwise valid nested chain.
    SkewedRatio,
}

pub fn adversarial_provers(
    kind: AdversaryKind,
    target: &SubsetSpec,
    m: usize,
) -> Result<ProofBundle> {
    let d = target.domain();
    let t_size = target.size();
    if !d.is_power_of_two() || !t_size.is_power_of_two() || m == 0 || m % 2 != 0 {
        return Err(Error::invalid("target shape or m invalid"));
    }
    let ell = (d / t_size).trailing_zeros() as usize;
    match kind {
        AdversaryKind::NonTilted => {
            let mut bundle = honest_prover(target, m)?;
            if ell == 0 {
                return Err(Error::invalid("non-tilted attack needs ell >= 1"));
            }
            // Replace Phi_1 by half copies of S_1 and half of its complement
            // within S_0: orthogonal states, maximally non-tilted.
            let s1 = bundle.phi[1][0].clone();
            let comp = s1.complement_within(&bundle.phi[0][0])?;
            let mut mixed = vec![s1; m / 2];
            mixed.extend(vec![comp; m - m / 2]);
            bundle.phi[1] = mixed;
            Ok(bundle)
        }
        AdversaryKind::WrongEll => {
            if ell == 0 {
                return Err(Error::invalid("wrong-ell attack needs ell >= 1"));
            }
            let claimed = ell - 1;
            // Halve while possible, then jump to the target.
            let mut sizes: Vec<usize> = (0..claimed).map(|i| d >> i).collect();
            sizes.push(t_size);
            let chain = nested_chain(target, &sizes)?;
            bundle_from_chain(d, m, &chain)
        }
        AdversaryKind::WrongFinal => {
            // Honest-shaped chain for a shifted target disjoint from the
            // real one (orthogonal final state).
            let shifted: Vec<usize> =
                target.indices().iter().map(|&i| (i + t_size) % d).collect();
            let wrong = SubsetSpec::new(d, shifted)?;
            if wrong.intersection_size(target) != 0 {
                return Err(Error::invalid("shifted target overlaps the real one"));
            }
            honest_prover(&wrong, m)
        }
        AdversaryKind::SkewedRatio => {
            if d < 8 || ell < 2 {
                return Err(Error::invalid("skewed-ratio attack needs d >= 8 and ell >= 2"));
            }
            // First step keeps 3/4 of the domain, later steps halve and the
            // last jumps to the target size.
            let mut sizes = vec![d, 3 * d / 4];
            while *sizes.last().unwrap() / 2 > t_size {
                sizes.push(sizes.last().unwrap() / 2);
            }
            if *sizes.last().unwrap() != t_size {
                sizes.push(t_size);
            }
            // Keep the declared ell consistent with the honest claim.
            while sizes.len() < ell + 1 {
                sizes.push(t_size);
            }
            sizes.truncate(ell + 1);
            *sizes.last_mut().unwrap() = t_size;
            let chain = nested_chain(target, &sizes)?;
            bundle_from_chain(d, m, &chain)
        }
    }
}

/// Which of the four test groups to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestChoice {
    /// Uniformly random group, the default.
    Random,
    /// Diagnostic mode: run every group and report per-test verdicts.
    RunAll,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubTestReport {
    pub id: String,
    pub group: &'static str,
    pub verdict: Verdict,
    /// Acceptance probability in exact mode, accept fraction in sampled mode.
    pub statistic: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportTestOutcome {
    pub transcript: ProtocolTranscript,
    pub sub_tests: Vec<SubTestReport>,
    pub certified_size: usize,
}

/// The support-size certification pipeline: applies (i) symmetry tests on
/// every collection, (ii) even-index subset tests, (iii) odd-index subset
/// tests, or (iv) a swap test of the input against the final collection.
///
/// A malformed proof is rejected with a reason code; a dimension mismatch
/// with the input state is a structural error.
pub fn support_size_test(
    rho: &StateVector,
    proof: &ProofBundle,
    params: &CertParams,
    choice: TestChoice,
    seed: u64,
) -> Result<SupportTestOutcome> {
    let digest = format!("{}", serde_json::to_string(proof).unwrap_or_default().len())
        + &format!("|d={},m={},ell={}", proof.d, proof.m, proof.ell);
    if let Err(msg) = proof.well_formed() {
        let transcript = ProtocolTranscript::new(
            "support-size-test",
            seed,
            digest,
            BTreeMap::new(),
            Verdict::Reject,
            &format!("malformed-proof: {msg}"),
        );
        return Ok(SupportTestOutcome {
            transcript,
            sub_tests: Vec::new(),
            certified_size: 0,
        });
    }
    if rho.dim() != proof.d {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: proof.d });
    }

    let mut groups: Vec<&'static str> = Vec::new();
    match choice {
        TestChoice::Random => {
            let mut rng = rng::seeded(seed);
            groups.push(["symmetry", "even-subset", "odd-subset", "swap-final"]
                [rng.random_range(0..4)]);
        }
        TestChoice::RunAll => {
            groups.extend(["symmetry", "even-subset", "odd-subset", "swap-final"]);
        }
    }

    let mut sub_tests = Vec::new();
    let mut sub_seed = seed;
    for group in &groups {
        match *group {
            "symmetry" => {
                for (tag, collections) in [("phi", &proof.phi), ("psi", &proof.psi)] {
                    for (i, specs) in collections.iter().enumerate() {
                        let idx = if tag == "phi" { i } else { i + 1 };
                        let c = proof.collection(specs, format!("{tag}{idx}"))?;
                        sub_seed = sub_seed.wrapping_add(1);
                        let t = run_symmetry_subtest(&c, params, sub_seed)?;
                        sub_tests.push(SubTestReport {
                            id: format!("symmetry:{tag}{idx}"),
                            group: "symmetry",
                            verdict: t.0,
                            statistic: t.1,
                        });
                    }
                }
            }
            "even-subset" | "odd-subset" => {
                let start = if *group == "even-subset" { 0 } else { 1 };
                let mut j = start;
                while j + 1 <= proof.ell {
                    let phi1 = proof.collection(&proof.phi[j], format!("phi{j}"))?;
                    let phi2 = proof.collection(&proof.phi[j + 1], format!("phi{}", j + 1))?;
                    let psi2 = proof.collection(&proof.psi[j], format!("psi{}", j + 1))?;
                    sub_seed = sub_seed.wrapping_add(1);
                    let t = subset_test(&phi1, &phi2, &psi2, 0.5, params.gamma, params.mode, sub_seed)?;
                    sub_tests.push(SubTestReport {
                        id: format!("{group}:{j}->{}", j + 1),
                        group: if *group == "even-subset" { "even-subset" } else { "odd-subset" },
                        verdict: t.verdict,
                        statistic: t.stats["alpha"],
                    });
                    j += 2;
                }
            }
            "swap-final" => {
                let c = proof.collection(&proof.phi[proof.ell], "phi-final".into())?;
                sub_seed = sub_seed.wrapping_add(1);
                let (verdict, stat) = match params.mode {
                    TestMode::ExactProbability => {
                        let mut acc = 0.0;
                        for s in c.states() {
                            acc += swap_test_prob(rho, s)?;
                        }
                        let p = acc / c.len() as f64;
                        (
                            if p >= 1.0 - EXACT_ACCEPT_TOL { Verdict::Accept } else { Verdict::Reject },
                            p,
                        )
                    }
                    TestMode::Sampled => {
                        let mut rng = rng::seeded(sub_seed);
                        let pick = rng.random_range(0..c.len());
                        let ok = swap_test_sample(rho, &c.states()[pick], &mut rng)?;
                        (if ok { Verdict::Accept } else { Verdict::Reject }, if ok { 1.0 } else { 0.0 })
                    }
                };
                sub_tests.push(SubTestReport {
                    id: "swap-final".into(),
                    group: "swap-final",
                    verdict,
                    statistic: stat,
                });
            }
            _ => unreachable!(),
        }
    }

    let all_accept = sub_tests.iter().all(|t| t.verdict == Verdict::Accept);
    let mut stats = BTreeMap::new();
    stats.insert("sub_tests".into(), sub_tests.len() as f64);
    stats.insert("ell".into(), proof.ell as f64);
    stats.insert(
        "accepted".into(),
        sub_tests.iter().filter(|t| t.verdict == Verdict::Accept).count() as f64,
    );
    let verdict = if all_accept { Verdict::Accept } else { Verdict::Reject };
    let reason = if all_accept {
        "chosen-tests-accept".to_string()
    } else {
        let first = sub_tests.iter().find(|t| t.verdict == Verdict::Reject).unwrap();
        format!("rejected-by:{}", first.id)
    };
    let transcript = ProtocolTranscript::new(
        "support-size-test",
        seed,
        digest,
        stats,
        verdict,
        &reason,
    );
    Ok(SupportTestOutcome { transcript, sub_tests, certified_size: proof.certified_size() })
}

fn run_symmetry_subtest(
    c: &StateCollection,
    params: &CertParams,
    seed: u64,
) -> Result<(Verdict, f64)> {
    match params.mode {
        TestMode::ExactProbability => {
            // Identical-copies collections have acceptance exactly one under
            // any matching, so the matching average collapses to a single
            // pair product estimate that stays exact for large m too.
            let p = if c.len() <= 10 {
                exact_matching_acceptance(c)?
            } else {
                // For m beyond the matching-enumeration cap, the exact
                // acceptance of a deterministically chosen matching
                // (adjacent pairs) is used; for tilted analysis at scale the
                // sampled mode is the meaningful one.
                let mut acc = 1.0;
                for pair in c.states().chunks(2) {
                    acc *= swap_test_prob(&pair[0], &pair[1])?;
                }
                acc
            };
            Ok((
                if p >= 1.0 - EXACT_ACCEPT_TOL { Verdict::Accept } else { Verdict::Reject },
                p,
            ))
        }
        TestMode::Sampled => {
            let t = symmetry_test(c, TestMode::Sampled, seed)?;
            let stat = t.stats.get("accepted_pairs").copied().unwrap_or(0.0)
                / t.stats.get("pairs").copied().unwrap_or(1.0);
            Ok((t.verdict, stat))
        }
    }
}

// ---------------------------------------------------------------------------
// Absolute-amplitude distinguisher.

/// Swap-testing a state against its absolute-amplitude counterpart: subset
/// states pass with certainty while random binary-phase states hover near
/// one half. Reports the mean acceptance on both sides and the gap.
#[derive(Debug, Clone, Serialize)]
pub struct AbsDistinguisherReport {
    pub d: usize,
    pub trials: usize,
    pub subset_acceptance: f64,
    pub phase_mean_acceptance: f64,
    pub gap: f64,
}

pub fn abs_transform_distinguisher(
    d: usize,
    trials: usize,
    rng: &mut Rng,
) -> Result<AbsDistinguisherReport> {
    if d < 16 {
        return Err(Error::invalid("distinguisher needs d >= 16"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    // Subset side: the absolute-amplitude state IS the state.
    let spec = SubsetSpec::new(d, (0..d / 2).collect())?;
    let phi = subset_state(&spec);
    let subset_acceptance = swap_test_prob(&phi, &phi)?;

    // Binary-phase side: acceptance (1 + (sum signs / d)^2) / 2 per draw.
    let mut acc = 0.0;
    for _ in 0..trials {
        let mut sum = 0i64;
        for _ in 0..d {
            sum += if rng.random::<bool>() { 1 } else { -1 };
        }
        let overlap = (sum as f64 / d as f64).powi(2);
        acc += (1.0 + overlap) / 2.0;
    }
    let phase_mean_acceptance = acc / trials as f64;
    Ok(AbsDistinguisherReport {
        d,
        trials,
        subset_acceptance,
        phase_mean_acceptance,
        gap: subset_acceptance - phase_mean_acceptance,
    })
}
