//! State families and their exact k-th moment operators.
//!
//! The moment operator of an ensemble is the density matrix a k-copy tester
//! actually sees. This module constructs them exactly, entry by entry:
//!
//! - Haar: the normalized projector onto the symmetric subspace, with entry
//!   `#[pi : pi(i) = j] / (k! * C(d+k-1, k))`.
//! - Random subset states of size `s`: entry `s_fall(l) / (s^k * d_fall(l))`
//!   where `l` counts distinct indices across the row/column tuples.
//! - Their restrictions to collision-free tuples (the approximants used in
//!   the indistinguishability bounds).
//! - The dense-regime flattened operators, whose matched parameter pairs are
//!   entrywise identical.
//!
//! Moment operators live on dimension `d^k` with a hard budget of
//! `d^k <= 4096`; the trace-norm gap between Haar and subset moments is also
//! computable through a symmetric-subspace compression that stays cheap at
//! the top of that range.

use crate::comb::{binomial, factorial, falling};
use crate::cprotocols::DiscreteDistribution;
use crate::linalg::{self, Complex64, HermitianOperator, StateVector};
use crate::{rng::Rng, Error, Result};
use num_complex::Complex;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Hard cap on moment-operator dimension `d^k`.
pub const MOMENT_BUDGET: usize = 4096;
/// Cap on the symmetric-subspace dimension `C(d+k-1, k)` used by the
/// compressed trace-norm route.
pub const SYMMETRIC_BUDGET: usize = 8192;

const ZERO: Complex64 = Complex::new(0.0, 0.0);

/// A domain size together with a sorted index set: the combinatorial seed of
/// the subset state `phi_S`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubsetSpec {
    d: usize,
    indices: Vec<usize>,
}

impl SubsetSpec {
    /// Validates and sorts the index set. Requires `1 <= |S| <= d`, all
    /// indices distinct and in `[0, d)`.
    pub fn new(d: usize, mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("subset must be nonempty"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("subset indices must be distinct"));
        }
        if *indices.last().unwrap() >= d {
            return Err(Error::invalid(format!(
                "subset index {} out of range for domain {}",
                indices.last().unwrap(),
                d
            )));
        }
        Ok(Self { d, indices })
    }

    /// The full domain `[d]`.
    pub fn full(d: usize) -> Self {
        Self { d, indices: (0..d).collect() }
    }

    pub fn domain(&self) -> usize {
        self.d
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn intersection_size(&self, other: &SubsetSpec) -> usize {
        let mut count = 0;
        let (mut a, mut b) = (0, 0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        count
    }

    /// Complement within a superset (errors if `self` is not contained).
    pub fn complement_within(&self, parent: &SubsetSpec) -> Result<SubsetSpec> {
        if self.d != parent.d {
            return Err(Error::DimensionMismatch { left: self.d, right: parent.d });
        }
        if self.intersection_size(parent) != self.size() {
            return Err(Error::invalid("subset is not contained in the parent set"));
        }
        let rest: Vec<usize> =
            parent.indices.iter().copied().filter(|i| !self.contains(*i)).collect();
        SubsetSpec::new(self.d, rest)
    }
}

#[derive(Debug, Deserialize)]
struct SubsetSpecRepr {
    d: usize,
    indices: Vec<usize>,
}

impl<'de> Deserialize<'de> for SubsetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SubsetSpecRepr::deserialize(deserializer)?;
        SubsetSpec::new(repr.d, repr.indices).map_err(serde::de::Error::custom)
    }
}

/// Exact squared overlap of two subset states:
/// `|<phi_S|phi_T>|^2 = |S cap T|^2 / (|S| |T|)`.
pub fn subset_overlap_sq(a: &SubsetSpec, b: &SubsetSpec) -> f64 {
    let inter = a.intersection_size(b) as f64;
    inter * inter / (a.size() as f64 * b.size() as f64)
}

/// Row-major bijection between `[0, d)^k` tuples and `[0, d^k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TupleIndexer {
    d: usize,
    k: usize,
    total: usize,
}

impl TupleIndexer {
    pub fn new(d: usize, k: usize) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::invalid("tuple indexer needs d >= 1 and k >= 1"));
        }
        let mut total: usize = 1;
        for _ in 0..k {
            total = total
                .checked_mul(d)
                .ok_or(Error::BudgetExceeded { requested: usize::MAX, budget: MOMENT_BUDGET })?;
        }
        Ok(Self { d, k, total })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn encode(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.k);
        let mut idx = 0;
        for &t in tuple {
            debug_assert!(t < self.d);
            idx = idx * self.d + t;
        }
        idx
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut tuple = vec![0usize; self.k];
        for slot in (0..self.k).rev() {
            tuple[slot] = index % self.d;
            index /= self.d;
        }
        tuple
    }
}

/// Whether a moment operator is an exact ensemble average or a sub-normalized
/// approximant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exactness {
    Exact,
    Approximant,
}

/// A k-th moment operator of a named ensemble on dimension `d^k`.
#[derive(Debug, Clone)]
pub struct MomentOperator {
    d: usize,
    k: usize,
    label: String,
    exactness: Exactness,
    matrix: HermitianOperator,
}

impl MomentOperator {
    pub fn new(
        d: usize,
        k: usize,
        label: impl Into<String>,
        exactness: Exactness,
        matrix: HermitianOperator,
    ) -> Result<Self> {
        let indexer = TupleIndexer::new(d, k)?;
        if matrix.dim() != indexer.total() {
            return Err(Error::DimensionMismatch { left: matrix.dim(), right: indexer.total() });
        }
        let tr = matrix.trace();
        match exactness {
            Exactness::Exact if (tr - 1.0).abs() > 1e-9 => {
                return Err(Error::NotNormalized { norm: tr, tolerance: 1e-9 });
            }
            Exactness::Approximant if tr > 1.0 + 1e-9 => {
                return Err(Error::NotNormalized { norm: tr, tolerance: 1e-9 });
            }
            _ => {}
        }
        Ok(Self { d, k, label: label.into(), exactness, matrix })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn exactness(&self) -> Exactness {
        self.exactness
    }

    pub fn matrix(&self) -> &HermitianOperator {
        &self.matrix
    }

    pub fn indexer(&self) -> TupleIndexer {
        TupleIndexer::new(self.d, self.k).expect("validated at construction")
    }

    /// Smallest eigenvalue; the PSD invariant asks for `>= -1e-8`.
    pub fn min_eigenvalue(&self) -> f64 {
        let vals = linalg::hermitian_eigenvalues(&self.matrix);
        vals.last().copied().unwrap_or(0.0)
    }

    /// JSON container `{d, k, label, exactness, entries: [[re, im], ...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<[f64; 2]> =
            self.matrix.entries().iter().map(|e| [e.re, e.im]).collect();
        serde_json::json!({
            "d": self.d,
            "k": self.k,
            "label": self.label,
            "exactness": match self.exactness {
                Exactness::Exact => "exact",
                Exactness::Approximant => "approximant",
            },
            "entries": entries,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("moment JSON: {m}"));
        let d = value["d"].as_u64().ok_or_else(|| bad("missing d"))? as usize;
        let k = value["k"].as_u64().ok_or_else(|| bad("missing k"))? as usize;
        let label = value["label"].as_str().ok_or_else(|| bad("missing label"))?.to_string();
        let exactness = match value["exactness"].as_str() {
            Some("exact") => Exactness::Exact,
            Some("approximant") => Exactness::Approximant,
            _ => return Err(bad("bad exactness")),
        };
        let raw = value["entries"].as_array().ok_or_else(|| bad("missing entries"))?;
        let mut entries = Vec::with_capacity(raw.len());
        for e in raw {
            let pair = e.as_array().filter(|p| p.len() == 2).ok_or_else(|| bad("bad entry"))?;
            entries.push(Complex::new(
                pair[0].as_f64().ok_or_else(|| bad("bad re"))?,
                pair[1].as_f64().ok_or_else(|| bad("bad im"))?,
            ));
        }
        let dim = (entries.len() as f64).sqrt().round() as usize;
        let matrix = HermitianOperator::new(dim, entries)?;
        MomentOperator::new(d, k, label, exactness, matrix)
    }
}

/// Densities of the dense-regime ensembles. The matched pair satisfies
/// `sqrt(s/2) - sqrt(t/2) = sqrt(p)`, which is exactly the condition making
/// the two flattened moment operators coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseEnsembleParams {
    pub d: usize,
    pub p: f64,
    pub s: f64,
    pub t: f64,
}

impl DenseEnsembleParams {
    pub fn new(d: usize, p: f64, s: f64, t: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("s", s), ("t", t)] {
            if !(0.0..1.0).contains(&v) || v == 0.0 {
                return Err(Error::invalid(format!("density {name}={v} must lie in (0,1)")));
            }
        }
        if s + t > 1.0 {
            return Err(Error::invalid("dense densities must satisfy s + t <= 1"));
        }
        Ok(Self { d, p, s, t })
    }

    /// The concrete matched choice `s = 8p'`, `t = 2p'` (which makes `p = p'`).
    pub fn matched(d: usize, p_prime: f64) -> Result<Self> {
        Self::new(d, p_prime, 8.0 * p_prime, 2.0 * p_prime)
    }

    /// Deviation from the matched-overlap condition.
    pub fn mismatch(&self) -> f64 {
        ((self.s / 2.0).sqrt() - (self.t / 2.0).sqrt() - self.p.sqrt()).abs()
    }
}

/// Which dense-regime ensemble a constructor refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenseSide {
    /// Two-mode states `phi_{S,T}`.
    E0,
    /// Plain subset states with density `p`.
    E1,
}

// ---------------------------------------------------------------------------
// State constructors.

/// Uniform superposition over the subset.
pub fn subset_state(spec: &SubsetSpec) -> StateVector {
    let amp = Complex::new(1.0 / (spec.size() as f64).sqrt(), 0.0);
    let mut amps = vec![ZERO; spec.domain()];
    for &i in spec.indices() {
        amps[i] = amp;
    }
    StateVector::new(amps).expect("subset state is unit norm by construction")
}

/// State with amplitudes `signs[i] / sqrt(d)`.
pub fn binary_phase_state(d: usize, signs: &[i8]) -> Result<StateVector> {
    if signs.len() != d {
        return Err(Error::DimensionMismatch { left: signs.len(), right: d });
    }
    if signs.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::invalid("signs must be +1 or -1"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    StateVector::new(signs.iter().map(|&s| Complex::new(s as f64 * scale, 0.0)).collect())
}

/// Two-mode state: `+1/sqrt(2|S|)` on `S`, `-1/sqrt(2|T|)` on `T`.
pub fn two_mode_state(s: &SubsetSpec, t: &SubsetSpec) -> Result<StateVector> {
    if s.domain() != t.domain() {
        return Err(Error::DimensionMismatch { left: s.domain(), right: t.domain() });
    }
    if s.intersection_size(t) != 0 {
        return Err(Error::invalid("two-mode supports must be disjoint"));
    }
    let mut amps = vec![ZERO; s.domain()];
    let pos = Complex::new(1.0 / (2.0 * s.size() as f64).sqrt(), 0.0);
    let neg = Complex::new(-1.0 / (2.0 * t.size() as f64).sqrt(), 0.0);
    for &i in s.indices() {
        amps[i] = pos;
    }
    for &i in t.indices() {
        amps[i] = neg;
    }
    StateVector::new(amps)
}

/// Haar-random state: normalized vector of i.i.d. standard complex Gaussians.
pub fn haar_sample(d: usize, rng: &mut Rng) -> StateVector {
    assert!(d >= 1);
    let amps: Vec<Complex64> = (0..d)
        .map(|_| Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    StateVector::normalized(amps).expect("Gaussian vector is nonzero almost surely")
}

// ---------------------------------------------------------------------------
// Tuple scaffolding shared by the moment constructors.

struct TupleTable {
    indexer: TupleIndexer,
    /// Sorted copy of each tuple, flattened (`k` entries per row).
    sorted: Vec<usize>,
    /// Whether the tuple has no repeated element.
    collision_free: Vec<bool>,
    /// Product of multiplicities factorials (permutations fixing the tuple).
    perm_count: Vec<f64>,
}

impl TupleTable {
    fn build(d: usize, k: usize) -> Result<Self> {
        let indexer = TupleIndexer::new(d, k)?;
        let n = indexer.total();
        if n > MOMENT_BUDGET {
            return Err(Error::BudgetExceeded { requested: n, budget: MOMENT_BUDGET });
        }
        let mut sorted = Vec::with_capacity(n * k);
        let mut collision_free = Vec::with_capacity(n);
        let mut perm_count = Vec::with_capacity(n);
        let mut tuple = vec![0usize; k];
        for idx in 0..n {
            let mut rem = idx;
            for slot in (0..k).rev() {
                tuple[slot] = rem % d;
                rem /= d;
            }
            let mut srt = tuple.clone();
            srt.sort_unstable();
            let mut cf = true;
            let mut perms = 1.0f64;
            let mut run = 1usize;
            for w in 1..k {
                if srt[w] == srt[w - 1] {
                    cf = false;
                    run += 1;
                    perms *= run as f64;
                } else {
                    run = 1;
                }
            }
            sorted.extend_from_slice(&srt);
            collision_free.push(cf);
            perm_count.push(perms);
        }
        Ok(Self { indexer, sorted, collision_free, perm_count })
    }

    fn k(&self) -> usize {
        self.indexer.k()
    }

    fn sorted_row(&self, idx: usize) -> &[usize] {
        let k = self.k();
        &self.sorted[idx * k..(idx + 1) * k]
    }

    /// Number of distinct values in the union of two sorted tuples.
    fn union_distinct(&self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.sorted_row(a), self.sorted_row(b));
        let mut count = 0usize;
        let (mut i, mut j) = (0usize, 0usize);
        let mut last: Option<usize> = None;
        while i < ra.len() || j < rb.len() {
            let v = if i < ra.len() && (j >= rb.len() || ra[i] <= rb[j]) {
                let v = ra[i];
                i += 1;
                v
            } else {
                let v = rb[j];
                j += 1;
                v
            };
            if last != Some(v) {
                count += 1;
                last = Some(v);
            }
        }
        count
    }
}

// ---------------------------------------------------------------------------
// Exact moments and approximants.

/// Exact k-th moment of the Haar ensemble: the symmetric-subspace projector
/// normalized to trace one. Supported where the row and column tuples are
/// equal as multisets.
pub fn haar_moment_exact(d: usize, k: usize) -> Result<MomentOperator> {
    let table = TupleTable::build(d, k)?;
    let n = table.indexer.total();
    let norm = factorial(k) * binomial(d + k - 1, k);
    let mut entries = vec![ZERO; n * n];

    // Group rows by sorted signature; only same-multiset pairs are nonzero.
    let mut by_signature: std::collections::HashMap<&[usize], Vec<usize>> =
        std::collections::HashMap::new();
    for idx in 0..n {
        by_signature.entry(table.sorted_row(idx)).or_default().push(idx);
    }
    for rows in by_signature.values() {
        for &i in rows {
            let value = Complex::new(table.perm_count[i] / norm, 0.0);
            for &j in rows {
                entries[i * n + j] = value;
            }
        }
    }
    let matrix = HermitianOperator::new(n, entries)?;
    MomentOperator::new(d, k, format!("haar(d={d},k={k})"), Exactness::Exact, matrix)
}

/// Exact k-th moment of the uniform random size-`s` subset-state ensemble.
/// Entry value `s_fall(l) / (s^k * d_fall(l))` with `l` the number of
/// distinct indices in the two tuples combined.
pub fn subset_moment_exact(d: usize, s: usize, k: usize) -> Result<MomentOperator> {
    if s == 0 || s > d {
        return Err(Error::invalid(format!("subset size {s} out of range for domain {d}")));
    }
    let table = TupleTable::build(d, k)?;
    let n = table.indexer.total();
    let s_pow_k = (s as f64).powi(k as i32);
    // Entry depends only on l <= 2k; precompute the value per l.
    let mut value_by_l = vec![0.0f64; 2 * k + 1];
    for l in 1..=(2 * k).min(d) {
        value_by_l[l] = falling(s, l) / (s_pow_k * falling(d, l));
    }
    let mut entries = vec![ZERO; n * n];
    for i in 0..n {
        for j in i..n {
            let l = table.union_distinct(i, j);
            let v = Complex::new(value_by_l[l], 0.0);
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    let matrix = HermitianOperator::new(n, entries)?;
    MomentOperator::new(d, k, format!("subset(d={d},s={s},k={k})"), Exactness::Exact, matrix)
}

/// Haar moment restricted to collision-free tuples. Its trace-norm distance
/// from the exact moment is exactly `1 - d_fall(k) / (d+k-1)_fall(k)`.
pub fn haar_moment_approx(d: usize, k: usize) -> Result<MomentOperator> {
    if k > d {
        return Err(Error::invalid(format!("approximant needs k <= d, got k={k}, d={d}")));
    }
    let table = TupleTable::build(d, k)?;
    let n = table.indexer.total();
    let value = 1.0 / falling(d + k - 1, k);
    let mut by_signature: std::collections::HashMap<&[usize], Vec<usize>> =
        std::collections::HashMap::new();
    for idx in 0..n {
        if table.collision_free[idx] {
            by_signature.entry(table.sorted_row(idx)).or_default().push(idx);
        }
    }
    let mut entries = vec![ZERO; n * n];
    for rows in by_signature.values() {
        for &i in rows {
            for &j in rows {
                entries[i * n + j] = Complex::new(value, 0.0);
            }
        }
    }
    let matrix = HermitianOperator::new(n, entries)?;
    MomentOperator::new(
        d,
        k,
        format!("haar-approx(d={d},k={k})"),
        Exactness::Approximant,
        matrix,
    )
}

/// Closed-form trace-norm error of the Haar approximant.
pub fn haar_approx_error(d: usize, k: usize) -> f64 {
    1.0 - falling(d, k) / falling(d + k - 1, k)
}

/// Subset moment restricted (and renormalized per subset) to collision-free
/// tuples: entry `s_fall(l) / (s_fall(k) * d_fall(l))`.
pub fn subset_moment_approx(d: usize, s: usize, k: usize) -> Result<MomentOperator> {
    if k > s {
        return Err(Error::invalid(format!("approximant needs k <= s, got k={k}, s={s}")));
    }
    if s > d {
        return Err(Error::invalid(format!("subset size {s} out of range for domain {d}")));
    }
    let table = TupleTable::build(d, k)?;
    let n = table.indexer.total();
    let s_fall_k = falling(s, k);
    let mut value_by_l = vec![0.0f64; 2 * k + 1];
    for l in 1..=(2 * k).min(d) {
        value_by_l[l] = falling(s, l) / (s_fall_k * falling(d, l));
    }
    let mut entries = vec![ZERO; n * n];
    for i in 0..n {
        if !table.collision_free[i] {
            continue;
        }
        for j in 0..n {
            if !table.collision_free[j] {
                continue;
            }
            let l = table.union_distinct(i, j);
            entries[i * n + j] = Complex::new(value_by_l[l], 0.0);
        }
    }
    let matrix = HermitianOperator::new(n, entries)?;
    MomentOperator::new(
        d,
        k,
        format!("subset-approx(d={d},s={s},k={k})"),
        Exactness::Approximant,
        matrix,
    )
}

/// Flattened, collision-free dense-regime moment: entry `p^(l-k) / d^k` on
/// collision-free tuple pairs. The `E0` side derives its effective density
/// from `(s, t)` and requires the matched-overlap condition, so that the two
/// sides agreeing entrywise is a genuine check rather than a tautology.
pub fn dense_flattened_moment(
    params: &DenseEnsembleParams,
    which: DenseSide,
    k: usize,
) -> Result<MomentOperator> {
    let p_eff = match which {
        DenseSide::E1 => params.p,
        DenseSide::E0 => {
            if params.mismatch() > 1e-12 {
                return Err(Error::invalid(format!(
                    "matched-overlap condition violated by {:.3e}",
                    params.mismatch()
                )));
            }
            let r = (params.s / 2.0).sqrt() - (params.t / 2.0).sqrt();
            r * r
        }
    };
    let d = params.d;
    let table = TupleTable::build(d, k)?;
    let n = table.indexer.total();
    let d_pow_k = (d as f64).powi(k as i32);
    let mut entries = vec![ZERO; n * n];
    for i in 0..n {
        if !table.collision_free[i] {
            continue;
        }
        for j in 0..n {
            if !table.collision_free[j] {
                continue;
            }
            let l = table.union_distinct(i, j);
            entries[i * n + j] =
                Complex::new(p_eff.powi(l as i32 - k as i32) / d_pow_k, 0.0);
        }
    }
    let matrix = HermitianOperator::new(n, entries)?;
    let label = match which {
        DenseSide::E0 => format!("dense-e0-flat(d={d},k={k})"),
        DenseSide::E1 => format!("dense-e1-flat(d={d},k={k})"),
    };
    MomentOperator::new(d, k, label, Exactness::Approximant, matrix)
}

/// A Monte Carlo moment estimate with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloMoment {
    pub moment: MomentOperator,
    /// Per-entry standard error `sqrt((var_re + var_im) / trials)`, row-major.
    pub stderr: Vec<f64>,
    pub trials: usize,
}

impl MonteCarloMoment {
    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().fold(0.0f64, |m, &s| m.max(s))
    }

    /// Largest `|entry - reference| / stderr` over the given entries.
    pub fn max_sigma_distance(&self, reference: &MomentOperator, only_cf: bool) -> Result<f64> {
        let table = TupleTable::build(self.moment.d(), self.moment.k())?;
        let n = table.indexer.total();
        if reference.matrix().dim() != n {
            return Err(Error::DimensionMismatch { left: reference.matrix().dim(), right: n });
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if only_cf && !(table.collision_free[i] && table.collision_free[j]) {
                    continue;
                }
                let diff = (self.moment.matrix().get(i, j) - reference.matrix().get(i, j)).norm();
                let se = self.stderr[i * n + j].max(1e-300);
                worst = worst.max(diff / se);
            }
        }
        Ok(worst)
    }
}

fn sample_dense_supports(
    params: &DenseEnsembleParams,
    which: DenseSide,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut s_set = Vec::new();
    let mut t_set = Vec::new();
    for i in 0..params.d {
        match which {
            DenseSide::E1 => {
                if rng.random::<f64>() < params.p {
                    s_set.push(i);
                }
            }
            DenseSide::E0 => {
                let r = rng.random::<f64>();
                if r < params.s {
                    s_set.push(i);
                } else if r < params.s + params.t {
                    t_set.push(i);
                }
            }
        }
    }
    (s_set, t_set)
}

fn tensor_power_amps(amps: &[Complex64], k: usize, n: usize) -> Vec<Complex64> {
    let d = amps.len();
    let mut w = vec![Complex::new(1.0, 0.0)];
    for _ in 0..k {
        let mut next = Vec::with_capacity(w.len() * d);
        for &x in &w {
            for &a in amps {
                next.push(x * a);
            }
        }
        w = next;
    }
    debug_assert_eq!(w.len(), n);
    w
}

/// Empirical average of `phi^(x)k` over sampled supports. Degenerate draws
/// (empty `S`, or empty `T` on the two-mode side) are resampled; 100
/// consecutive rejects abort.
pub fn dense_moment_monte_carlo(
    params: &DenseEnsembleParams,
    which: DenseSide,
    k: usize,
    trials: usize,
    rng: &mut Rng,
) -> Result<MonteCarloMoment> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let indexer = TupleIndexer::new(params.d, k)?;
    let n = indexer.total();
    if n > MOMENT_BUDGET {
        return Err(Error::BudgetExceeded { requested: n, budget: MOMENT_BUDGET });
    }
    let mut sum = vec![ZERO; n * n];
    let mut sumsq = vec![0.0f64; n * n];
    for _ in 0..trials {
        let mut attempts = 0;
        let state = loop {
            let (s_set, t_set) = sample_dense_supports(params, which, rng);
            let degenerate = match which {
                DenseSide::E1 => s_set.is_empty(),
                DenseSide::E0 => s_set.is_empty() || t_set.is_empty(),
            };
            if !degenerate {
                break match which {
                    DenseSide::E1 => subset_state(&SubsetSpec::new(params.d, s_set)?),
                    DenseSide::E0 => two_mode_state(
                        &SubsetSpec::new(params.d, s_set)?,
                        &SubsetSpec::new(params.d, t_set)?,
                    )?,
                };
            }
            attempts += 1;
            if attempts >= 100 {
                return Err(Error::invalid(
                    "100 consecutive degenerate support samples; densities too small",
                ));
            }
        };
        let w = tensor_power_amps(state.amps(), k, n);
        for i in 0..n {
            let wi = w[i];
            for j in 0..n {
                let v = wi * w[j].conj();
                sum[i * n + j] += v;
                sumsq[i * n + j] += v.norm_sqr();
            }
        }
    }
    finish_monte_carlo(params, which, k, trials, n, sum, sumsq, Exactness::Exact, "mc")
}

/// Unbiased Monte Carlo estimator of the *flattened* moments: amplitudes use
/// the expected support sizes instead of the drawn ones and the estimate is
/// restricted to collision-free tuples, so its expectation equals
/// [`dense_flattened_moment`] exactly. Degenerate draws contribute zero and
/// are kept.
pub fn dense_flattened_monte_carlo(
    params: &DenseEnsembleParams,
    which: DenseSide,
    k: usize,
    trials: usize,
    rng: &mut Rng,
) -> Result<MonteCarloMoment> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let table = TupleTable::build(params.d, k)?;
    let n = table.indexer.total();
    let d = params.d as f64;
    let mut sum = vec![ZERO; n * n];
    let mut sumsq = vec![0.0f64; n * n];
    let mut amps = vec![ZERO; params.d];
    for _ in 0..trials {
        let (s_set, t_set) = sample_dense_supports(params, which, rng);
        amps.iter_mut().for_each(|a| *a = ZERO);
        match which {
            DenseSide::E1 => {
                let a = Complex::new(1.0 / (params.p * d).sqrt(), 0.0);
                for &i in &s_set {
                    amps[i] = a;
                }
            }
            DenseSide::E0 => {
                let pos = Complex::new(1.0 / (2.0 * params.s * d).sqrt(), 0.0);
                let neg = Complex::new(-1.0 / (2.0 * params.t * d).sqrt(), 0.0);
                for &i in &s_set {
                    amps[i] = pos;
                }
                for &i in &t_set {
                    amps[i] = neg;
                }
            }
        }
        let w = tensor_power_amps(&amps, k, n);
        for i in 0..n {
            if !table.collision_free[i] {
                continue;
            }
            let wi = w[i];
            if wi == ZERO {
                continue;
            }
            for j in 0..n {
                if !table.collision_free[j] {
                    continue;
                }
                let v = wi * w[j].conj();
                sum[i * n + j] += v;
                sumsq[i * n + j] += v.norm_sqr();
            }
        }
    }
    finish_monte_carlo(params, which, k, trials, n, sum, sumsq, Exactness::Approximant, "flat-mc")
}

#[allow(clippy::too_many_arguments)]
fn finish_monte_carlo(
    params: &DenseEnsembleParams,
    which: DenseSide,
    k: usize,
    trials: usize,
    n: usize,
    sum: Vec<Complex64>,
    sumsq: Vec<f64>,
    exactness: Exactness,
    tag: &str,
) -> Result<MonteCarloMoment> {
    let t = trials as f64;
    let mean: Vec<Complex64> = sum.iter().map(|v| v / t).collect();
    let stderr: Vec<f64> = mean
        .iter()
        .zip(&sumsq)
        .map(|(m, &sq)| ((sq / t - m.norm_sqr()).max(0.0) / t).sqrt())
        .collect();
    let matrix = HermitianOperator::new(n, mean)?;
    let side = match which {
        DenseSide::E0 => "e0",
        DenseSide::E1 => "e1",
    };
    let moment = MomentOperator::new(
        params.d,
        k,
        format!("dense-{side}-{tag}(d={},k={k},trials={trials})", params.d),
        exactness,
        matrix,
    )?;
    Ok(MonteCarloMoment { moment, stderr, trials })
}

/// Largest `|estimate - closed_form| / stderr` over collision-free entries
/// for a flattened Monte Carlo run, with the standard error taken from the
/// *exact* per-entry sampling variance (the per-trial entry value is a small
/// product distribution with known moments). This keeps the z-score
/// meaningful even for entries so rare that the run never hits them.
pub fn flattened_mc_max_z(
    params: &DenseEnsembleParams,
    which: DenseSide,
    k: usize,
    mc: &MonteCarloMoment,
) -> Result<f64> {
    let reference = dense_flattened_moment(params, which, k)?;
    let table = TupleTable::build(params.d, k)?;
    let n = table.indexer.total();
    if mc.moment.matrix().dim() != n {
        return Err(Error::DimensionMismatch { left: mc.moment.matrix().dim(), right: n });
    }
    let d = params.d as f64;
    let trials = mc.trials as f64;
    // Per-entry second moment by the number of distinct indices l:
    // "once" indices appear in one tuple only (2(l-k) of them), "twice"
    // indices appear in both (2k-l).
    let second_moment = |l: usize| -> f64 {
        let once = 2 * (l - k);
        let twice = 2 * k - l;
        match which {
            DenseSide::E1 => params.p.powi(l as i32) / (params.p * d).powi(2 * k as i32),
            DenseSide::E0 => {
                let e_sq = 1.0 / d;
                let e_fourth = (1.0 / params.s + 1.0 / params.t) / (4.0 * d * d);
                e_sq.powi(once as i32) * e_fourth.powi(twice as i32)
            }
        }
    };
    let mut worst = 0.0f64;
    for i in 0..n {
        if !table.collision_free[i] {
            continue;
        }
        for j in 0..n {
            if !table.collision_free[j] {
                continue;
            }
            let l = table.union_distinct(i, j);
            let mean = reference.matrix().get(i, j).re;
            let var = (second_moment(l) - mean * mean).max(0.0);
            if var == 0.0 {
                continue;
            }
            let se = (var / trials).sqrt();
            let diff = (mc.moment.matrix().get(i, j) - reference.matrix().get(i, j)).norm();
            worst = worst.max(diff / se);
        }
    }
    Ok(worst)
}

/// Measures every copy in the computational basis: the output distribution
/// over k-tuples is the diagonal of the moment operator.
pub fn classical_shadow_channel(rho: &MomentOperator) -> Result<DiscreteDistribution> {
    if rho.exactness() != Exactness::Exact {
        return Err(Error::invalid("shadow channel requires an exact (trace-one) moment"));
    }
    let m = rho.matrix();
    let tr = m.trace();
    if (tr - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized { norm: tr, tolerance: 1e-8 });
    }
    let n = m.dim();
    let mut probs = Vec::with_capacity(n);
    for i in 0..n {
        let p = m.get(i, i).re;
        if p < -1e-10 {
            return Err(Error::invalid(format!("negative diagonal {p} at {i}")));
        }
        probs.push((i, p.max(0.0)));
    }
    let total: f64 = probs.iter().map(|(_, p)| p).sum();
    DiscreteDistribution::new(probs.into_iter().map(|(i, p)| (i, p / total)).collect())
}

// ---------------------------------------------------------------------------
// Symmetric-subspace compressed gap computation.

/// Exact trace norm `|| haar_k - subset_k ||_1`, computed on the symmetric
/// subspace (both operators are supported there), where the matrix is only
/// `C(d+k-1, k)` dimensional. Agrees with the dense route and stays feasible
/// at the top of the budget.
pub fn haar_subset_gap_trace_norm(d: usize, s: usize, k: usize) -> Result<f64> {
    if s == 0 || s > d {
        return Err(Error::invalid(format!("subset size {s} out of range for domain {d}")));
    }
    // Enumerate multisets as non-decreasing tuples.
    let dim_sym = binomial(d + k - 1, k) as usize;
    if dim_sym > SYMMETRIC_BUDGET {
        return Err(Error::BudgetExceeded { requested: dim_sym, budget: SYMMETRIC_BUDGET });
    }
    let mut multisets: Vec<Vec<usize>> = Vec::with_capacity(dim_sym);
    let mut current = vec![0usize; k];
    loop {
        multisets.push(current.clone());
        let mut slot = k;
        loop {
            if slot == 0 {
                break;
            }
            slot -= 1;
            if current[slot] + 1 < d {
                let v = current[slot] + 1;
                for x in current.iter_mut().skip(slot) {
                    *x = v;
                }
                break;
            }
            if slot == 0 {
                current.clear();
                break;
            }
        }
        if current.is_empty() {
            break;
        }
    }
    assert_eq!(multisets.len(), dim_sym);

    // Orbit weight: number of distinct orderings of the multiset.
    let weight: Vec<f64> = multisets
        .iter()
        .map(|m| {
            let mut perms = 1.0f64;
            let mut run = 1usize;
            for w in 1..k {
                if m[w] == m[w - 1] {
                    run += 1;
                    perms *= run as f64;
                } else {
                    run = 1;
                }
            }
            factorial(k) / perms
        })
        .collect();
    let sqrt_w: Vec<f64> = weight.iter().map(|w| w.sqrt()).collect();

    let s_pow_k = (s as f64).powi(k as i32);
    let mut value_by_l = vec![0.0f64; 2 * k + 1];
    for l in 1..=(2 * k).min(d) {
        value_by_l[l] = falling(s, l) / (s_pow_k * falling(d, l));
    }
    let haar_diag = 1.0 / dim_sym as f64;

    let union_distinct = |a: &[usize], b: &[usize]| -> usize {
        let mut count = 0usize;
        let (mut i, mut j) = (0usize, 0usize);
        let mut last: Option<usize> = None;
        while i < a.len() || j < b.len() {
            let v = if i < a.len() && (j >= b.len() || a[i] <= b[j]) {
                let v = a[i];
                i += 1;
                v
            } else {
                let v = b[j];
                j += 1;
                v
            };
            if last != Some(v) {
                count += 1;
                last = Some(v);
            }
        }
        count
    };

    let n = dim_sym;
    let mut m = vec![0.0f64; n * n];
    for a in 0..n {
        for b in a..n {
            let l = union_distinct(&multisets[a], &multisets[b]);
            let mut v = sqrt_w[a] * sqrt_w[b] * value_by_l[l];
            if a == b {
                v -= haar_diag;
            }
            v = -v; // haar - subset
            m[a * n + b] = v;
            m[b * n + a] = v;
        }
    }
    let vals = linalg::real_symmetric_eigenvalues(n, &mut m);
    Ok(vals.iter().map(|v| v.abs()).sum())
}

/// The shape bound `k^2/d + k/sqrt(s) + s*k/d` the gap is compared against.
pub fn haar_subset_gap_bound_terms(d: usize, s: usize, k: usize) -> f64 {
    let (df, sf, kf) = (d as f64, s as f64, k as f64);
    kf * kf / df + kf / sf.sqrt() + sf * kf / df
}
