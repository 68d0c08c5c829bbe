//! Sparse next-token distributions and the divergences computed over them.
//!
//! All logarithms are natural, so divergences are in nats and the
//! Jensen-Shannon divergence is bounded by `ln 2`.
//!
//! A distribution may be *truncated*: a backend returned only its top-k
//! entries and the remaining mass is carried as a single `residual`. Divergence
//! routines treat that residual as one pseudo-token present in both arguments,
//! which is exact whenever the top-k entries cover the full support.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Vocabulary index of a token.
pub type TokenId = u32;

/// Mass tolerance accepted by the constructors.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Probabilities below this floor are treated as zero inside log terms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("distribution is not normalized (total mass {total})")]
    UnnormalizedDistribution { total: f64 },
    #[error("KL divergence is infinite: token {token:?} has mass in p but not in q")]
    InfiniteDivergence { token: Option<TokenId> },
    #[error("distribution has no entries")]
    EmptyDistribution,
    #[error("top_p must lie in (0, 1], got {0}")]
    InvalidTopP(f64),
    #[error("token {token} has invalid probability {value}")]
    InvalidProbability { token: TokenId, value: f64 },
    #[error("token {0} appears more than once")]
    DuplicateToken(TokenId),
    #[error("vocab_size must be positive")]
    EmptyVocabulary,
}

/// Next-token probability distribution over a vocabulary, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TokenDistribution<T: Scalar> {
    entries: BTreeMap<TokenId, T>,
    vocab_size: usize,
    truncated: bool,
    residual: T,
}

impl<T: Scalar> TokenDistribution<T> {
    /// Builds a full (non-truncated) distribution. Zero-probability entries are
    /// dropped from the support.
    pub fn new<I>(entries: I, vocab_size: usize) -> Result<Self, DistError>
    where
        I: IntoIterator<Item = (TokenId, T)>,
    {
        Self::build(entries, vocab_size, false, T::zero())
    }

    /// Builds a top-k distribution whose omitted mass is `residual`.
    pub fn truncated<I>(entries: I, vocab_size: usize, residual: T) -> Result<Self, DistError>
    where
        I: IntoIterator<Item = (TokenId, T)>,
    {
        Self::build(entries, vocab_size, true, residual)
    }

    /// Normalizes non-negative weights into a full distribution.
    pub fn from_weights<I>(weights: I, vocab_size: usize) -> Result<Self, DistError>
    where
        I: IntoIterator<Item = (TokenId, T)>,
    {
        let raw: Vec<(TokenId, T)> = weights.into_iter().collect();
        let mut total = T::zero();
        for &(token, w) in &raw {
            if !(w >= T::zero()) || !w.is_finite() {
                return Err(DistError::InvalidProbability { token, value: w.as_f64() });
            }
            total = total + w;
        }
        if total <= T::zero() {
            return Err(DistError::EmptyDistribution);
        }
        Self::new(raw.into_iter().map(|(t, w)| (t, w / total)), vocab_size)
    }

    /// Point mass on a single token.
    pub fn point(token: TokenId, vocab_size: usize) -> Result<Self, DistError> {
        Self::new([(token, T::one())], vocab_size)
    }

    fn build<I>(entries: I, vocab_size: usize, truncated: bool, residual: T) -> Result<Self, DistError>
    where
        I: IntoIterator<Item = (TokenId, T)>,
    {
        if vocab_size == 0 {
            return Err(DistError::EmptyVocabulary);
        }
        if !(residual >= T::zero()) || !residual.is_finite() {
            return Err(DistError::InvalidProbability { token: TokenId::MAX, value: residual.as_f64() });
        }
        let mut map = BTreeMap::new();
        let mut total = residual.as_f64();
        for (token, p) in entries {
            if !(p >= T::zero()) || !p.is_finite() {
                return Err(DistError::InvalidProbability { token, value: p.as_f64() });
            }
            if map.contains_key(&token) {
                return Err(DistError::DuplicateToken(token));
            }
            total += p.as_f64();
            if p > T::zero() {
                map.insert(token, p);
            }
        }
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DistError::UnnormalizedDistribution { total });
        }
        Ok(Self { entries: map, vocab_size, truncated, residual })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Mass not covered by the explicit entries (zero for full distributions).
    pub fn residual(&self) -> T {
        self.residual
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Probability of `token`; zero outside the explicit support.
    pub fn prob(&self, token: TokenId) -> T {
        self.entries.get(&token).copied().unwrap_or_else(T::zero)
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.entries.contains_key(&token)
    }

    /// Entries in ascending token-id order.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, T)> + '_ {
        self.entries.iter().map(|(&t, &p)| (t, p))
    }

    pub fn support(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.keys().copied()
    }

    /// Total explicit mass plus residual.
    pub fn total_mass(&self) -> f64 {
        self.entries.values().map(|p| p.as_f64()).sum::<f64>() + self.residual.as_f64()
    }

    /// Entries sorted by descending probability, ties by ascending token id.
    pub fn ranked(&self) -> Vec<(TokenId, T)> {
        let mut v: Vec<(TokenId, T)> = self.iter().collect();
        v.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        v
    }

    /// Keeps the `k` most probable entries and folds the rest into the residual.
    pub fn top_k(&self, k: usize) -> Self {
        if k >= self.entries.len() {
            return self.clone();
        }
        let ranked = self.ranked();
        let dropped = ranked[k..].iter().fold(T::zero(), |acc, &(_, p)| acc + p);
        Self {
            entries: ranked[..k].iter().copied().collect(),
            vocab_size: self.vocab_size,
            truncated: true,
            residual: self.residual + dropped,
        }
    }

    /// Multiplies the probability of each listed token (once per distinct id) by `factor` and
    /// renormalizes the explicit entries together with the residual.
    pub fn reweight(&self, tokens: impl IntoIterator<Item = TokenId>, factor: T) -> Self {
        let mut entries = self.entries.clone();
        let tokens: std::collections::BTreeSet<TokenId> = tokens.into_iter().collect();
        for t in tokens {
            if let Some(p) = entries.get_mut(&t) {
                *p = *p * factor;
            }
        }
        let total = entries.values().fold(self.residual, |acc, &p| acc + p);
        if total <= T::zero() {
            return self.clone();
        }
        for p in entries.values_mut() {
            *p = *p / total;
        }
        Self {
            entries,
            vocab_size: self.vocab_size,
            truncated: self.truncated,
            residual: self.residual / total,
        }
    }

    fn floor() -> T {
        T::of(PROBABILITY_FLOOR)
    }

    fn check_normalized(&self) -> Result<(), DistError> {
        let total = self.total_mass();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DistError::UnnormalizedDistribution { total });
        }
        Ok(())
    }
}

/// Joint walk over the union of both supports plus the residual pseudo-token.
/// The pseudo-token is reported with `token == None`.
fn union_walk<T: Scalar>(
    p: &TokenDistribution<T>,
    q: &TokenDistribution<T>,
    mut f: impl FnMut(Option<TokenId>, T, T),
) {
    let mut a = p.entries.iter().peekable();
    let mut b = q.entries.iter().peekable();
    loop {
        match (a.peek(), b.peek()) {
            (Some(&(&ta, &pa)), Some(&(&tb, &pb))) => {
                if ta == tb {
                    f(Some(ta), pa, pb);
                    a.next();
                    b.next();
                } else if ta < tb {
                    f(Some(ta), pa, T::zero());
                    a.next();
                } else {
                    f(Some(tb), T::zero(), pb);
                    b.next();
                }
            }
            (Some(&(&ta, &pa)), None) => {
                f(Some(ta), pa, T::zero());
                a.next();
            }
            (None, Some(&(&tb, &pb))) => {
                f(Some(tb), T::zero(), pb);
                b.next();
            }
            (None, None) => break,
        }
    }
    if p.residual > T::zero() || q.residual > T::zero() {
        f(None, p.residual, q.residual);
    }
}

/// Kullback-Leibler divergence `KL(p || q)` in nats.
pub fn kl_divergence<T: Scalar>(p: &TokenDistribution<T>, q: &TokenDistribution<T>) -> Result<T, DistError> {
    p.check_normalized()?;
    q.check_normalized()?;
    let floor = TokenDistribution::<T>::floor();
    let mut sum = T::zero();
    let mut infinite = None;
    union_walk(p, q, |token, pa, qa| {
        if infinite.is_some() || pa < floor {
            return;
        }
        if qa < floor {
            infinite = Some(token);
            return;
        }
        sum = sum + pa * (pa / qa).ln();
    });
    match infinite {
        Some(token) => Err(DistError::InfiniteDivergence { token }),
        None => Ok(sum.max(T::zero())),
    }
}

/// Jensen-Shannon divergence in nats, within `[0, ln 2]`.
pub fn jsd<T: Scalar>(p: &TokenDistribution<T>, q: &TokenDistribution<T>) -> Result<T, DistError> {
    p.check_normalized()?;
    q.check_normalized()?;
    let floor = TokenDistribution::<T>::floor();
    let half = T::of(0.5);
    let (mut kl_p, mut kl_q) = (T::zero(), T::zero());
    union_walk(p, q, |_, pa, qa| {
        let m = (pa + qa) * half;
        if pa >= floor {
            kl_p = kl_p + pa * (pa / m).ln();
        }
        if qa >= floor {
            kl_q = kl_q + qa * (qa / m).ln();
        }
    });
    let d = half * kl_p + half * kl_q;
    Ok(d.max(T::zero()).min(T::ln_2()))
}

/// Most probable token; ties go to the lowest token id.
pub fn argmax_token<T: Scalar>(p: &TokenDistribution<T>) -> Result<TokenId, DistError> {
    let mut best: Option<(TokenId, T)> = None;
    for (t, prob) in p.iter() {
        match best {
            Some((_, b)) if prob <= b => {}
            _ => best = Some((t, prob)),
        }
    }
    best.map(|(t, _)| t).ok_or(DistError::EmptyDistribution)
}

/// Keeps the smallest probability-sorted prefix whose mass reaches `top_p`
/// and renormalizes it. `top_p == 1` returns the input unchanged.
pub fn nucleus_filter<T: Scalar>(p: &TokenDistribution<T>, top_p: f64) -> Result<TokenDistribution<T>, DistError> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(DistError::InvalidTopP(top_p));
    }
    if p.is_empty() {
        return Err(DistError::EmptyDistribution);
    }
    if top_p == 1.0 {
        return Ok(p.clone());
    }
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for (t, prob) in p.ranked() {
        kept.push((t, prob));
        cum += prob.as_f64();
        if cum >= top_p - 1e-12 {
            break;
        }
    }
    let mass = kept.iter().fold(T::zero(), |acc, &(_, p)| acc + p);
    let entries: BTreeMap<TokenId, T> = kept.into_iter().map(|(t, p)| (t, p / mass)).collect();
    Ok(TokenDistribution { entries, vocab_size: p.vocab_size, truncated: false, residual: T::zero() })
}
