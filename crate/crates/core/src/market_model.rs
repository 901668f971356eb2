//! Conditions, markets and the resolution-vector semantics built on top of them.
//!
//! A market is exhaustive and exclusive: exactly one of its conditions resolves
//! true. Joint outcome spaces over two markets are sets of concatenated
//! resolution vectors; comparing their cardinality to the full product tells
//! whether the markets are independent, and scanning condition subsets whose
//! true-counts always agree yields the dependent subsets that combinatorial
//! arbitrage trades on.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of conditions kept when reducing a market before prompting.
pub const DEFAULT_REDUCE_K: usize = 4;

/// Maximum length of a synthesized catch-all question, in characters.
pub const CATCH_ALL_MAX_CHARS: usize = 512;

/// Largest market side the subset scan accepts (2^16 subsets per side).
pub const MAX_SUBSET_SCAN: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("condition {0}: yes and no tokens must be distinct and nonempty")]
    BadTokens(String),
    #[error("condition {0}: total volume must be finite and non-negative")]
    BadVolume(String),
    #[error("market has no conditions")]
    NoConditions,
    #[error("duplicate condition id {0} in market")]
    DuplicateCondition(String),
    #[error("market with {0} conditions requires a market id")]
    MissingMarketId(usize),
    #[error("outcome space is empty")]
    EmptySpace,
    #[error("vector {index} has length {len}, expected {expected}")]
    VectorLength { index: usize, len: usize, expected: usize },
    #[error("duplicate resolution vector at index {0}")]
    DuplicateVector(usize),
    #[error("expected a {expected} outcome space")]
    WrongArity { expected: &'static str },
    #[error("space holds {found} vectors but the full product is only {product}")]
    ExceedsProduct { found: usize, product: usize },
    #[error("market side of size {0} is too large for the subset scan")]
    TooLarge(usize),
}

/// Topic labels used to prune the pair search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Topic {
    Politics,
    Economy,
    Technology,
    Crypto,
    Twitter,
    Culture,
    Sports,
}

impl Topic {
    /// The fixed list, in tie-break order.
    pub const ALL: [Topic; 7] = [
        Topic::Politics,
        Topic::Economy,
        Topic::Technology,
        Topic::Crypto,
        Topic::Twitter,
        Topic::Culture,
        Topic::Sports,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::Politics => "Politics",
            Topic::Economy => "Economy",
            Topic::Technology => "Technology",
            Topic::Crypto => "Crypto",
            Topic::Twitter => "Twitter",
            Topic::Culture => "Culture",
            Topic::Sports => "Sports",
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A binary question with its YES/NO token pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub condition_id: String,
    pub question: String,
    pub yes_token: String,
    pub no_token: String,
    pub end_date: NaiveDate,
    /// Combined YES+NO traded volume in USDC.
    #[serde(default)]
    pub total_volume: f64,
}

impl Condition {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.yes_token.is_empty() || self.no_token.is_empty() || self.yes_token == self.no_token {
            return Err(ModelError::BadTokens(self.condition_id.clone()));
        }
        if !self.total_volume.is_finite() || self.total_volume < 0.0 {
            return Err(ModelError::BadVolume(self.condition_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarketKind {
    Single,
    NegRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub market_id: Option<String>,
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub topic: Option<Topic>,
    pub canonical_end_date: NaiveDate,
    pub kind: MarketKind,
}

impl Market {
    /// Builds a market, deriving `kind` from the condition count.
    pub fn new(
        market_id: Option<String>,
        conditions: Vec<Condition>,
        canonical_end_date: NaiveDate,
    ) -> Result<Self, ModelError> {
        let kind = if conditions.len() == 1 {
            MarketKind::Single
        } else {
            MarketKind::NegRisk
        };
        let market = Market {
            market_id,
            conditions,
            topic: None,
            canonical_end_date,
            kind,
        };
        market.validate()?;
        Ok(market)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.conditions.len();
        if n == 0 {
            return Err(ModelError::NoConditions);
        }
        match self.kind {
            MarketKind::Single if n != 1 => return Err(ModelError::MissingMarketId(n)),
            MarketKind::NegRisk if n < 2 || self.market_id.is_none() => {
                return Err(ModelError::MissingMarketId(n))
            }
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for c in &self.conditions {
            c.validate()?;
            if !seen.insert(c.condition_id.as_str()) {
                return Err(ModelError::DuplicateCondition(c.condition_id.clone()));
            }
        }
        Ok(())
    }

    /// Stable identifier: the market id, or the condition id of a single-condition market.
    pub fn key(&self) -> &str {
        match (&self.market_id, self.kind) {
            (Some(id), MarketKind::NegRisk) => id,
            _ => &self.conditions[0].condition_id,
        }
    }

    pub fn n(&self) -> usize {
        self.conditions.len()
    }

    pub fn total_volume(&self) -> f64 {
        self.conditions.iter().map(|c| c.total_volume).sum()
    }

    pub fn yes_tokens(&self) -> impl Iterator<Item = &str> {
        self.conditions.iter().map(|c| c.yes_token.as_str())
    }
}

/// One boolean per condition; `true` marks the condition that resolves YES.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResolutionVector(pub Vec<bool>);

impl ResolutionVector {
    pub fn true_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn count_in(&self, offset: usize, indices: &[usize]) -> usize {
        indices.iter().filter(|&&i| self.0[offset + i]).count()
    }
}

impl From<Vec<bool>> for ResolutionVector {
    fn from(bits: Vec<bool>) -> Self {
        ResolutionVector(bits)
    }
}

/// Which bit positions belong to which market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arity {
    Single(usize),
    Pair(usize, usize),
}

impl Arity {
    pub fn width(self) -> usize {
        match self {
            Arity::Single(n) => n,
            Arity::Pair(n, m) => n + m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpace {
    vectors: Vec<ResolutionVector>,
    arity: Arity,
}

impl OutcomeSpace {
    /// Builds a space; vectors must share the arity's width and be distinct.
    /// An empty vector set is accepted here and rejected by the operations.
    pub fn new(vectors: Vec<ResolutionVector>, arity: Arity) -> Result<Self, ModelError> {
        let expected = arity.width();
        let mut seen = BTreeSet::new();
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != expected {
                return Err(ModelError::VectorLength {
                    index,
                    len: v.len(),
                    expected,
                });
            }
            if !seen.insert(v) {
                return Err(ModelError::DuplicateVector(index));
            }
        }
        Ok(OutcomeSpace { vectors, arity })
    }

    /// Convenience for tests and fixtures: rows of 0/1.
    pub fn from_rows(rows: &[&[u8]], arity: Arity) -> Result<Self, ModelError> {
        let vectors = rows
            .iter()
            .map(|r| ResolutionVector(r.iter().map(|&b| b != 0).collect()))
            .collect();
        Self::new(vectors, arity)
    }

    /// The full product of two single-market bases.
    pub fn full_product(n: usize, m: usize) -> Self {
        let mut vectors = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let mut bits = vec![false; n + m];
                bits[i] = true;
                bits[n + j] = true;
                vectors.push(ResolutionVector(bits));
            }
        }
        OutcomeSpace {
            vectors,
            arity: Arity::Pair(n, m),
        }
    }

    pub fn vectors(&self) -> &[ResolutionVector] {
        &self.vectors
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// |V| differs from the number of conditions.
    Cardinality { expected: usize, found: usize },
    /// A vector does not have exactly one true bit (per market side for pairs).
    NotExactlyOne { vector: usize, side: usize, true_count: usize },
    /// |V| exceeds the allowed bound.
    TooMany { limit: usize, found: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a single market's space: |V| = n and every vector has exactly one true bit.
pub fn validate_single_market(space: &OutcomeSpace, n: usize) -> Result<ValidityReport, ModelError> {
    if space.is_empty() {
        return Err(ModelError::EmptySpace);
    }
    if space.arity.width() != n {
        return Err(ModelError::WrongArity { expected: "single-market" });
    }
    let mut report = ValidityReport::default();
    if space.len() != n {
        report.violations.push(Violation::Cardinality {
            expected: n,
            found: space.len(),
        });
    }
    for (i, v) in space.vectors.iter().enumerate() {
        let c = v.true_count();
        if c != 1 {
            report.violations.push(Violation::NotExactlyOne {
                vector: i,
                side: 0,
                true_count: c,
            });
        }
    }
    Ok(report)
}

/// Checks a joint space: each vector has exactly one true bit on each market's side.
pub fn validate_joint(space: &OutcomeSpace) -> Result<ValidityReport, ModelError> {
    let Arity::Pair(n, m) = space.arity else {
        return Err(ModelError::WrongArity { expected: "two-market" });
    };
    if space.is_empty() {
        return Err(ModelError::EmptySpace);
    }
    let mut report = ValidityReport::default();
    for (i, v) in space.vectors.iter().enumerate() {
        for (side, range) in [(0, 0..n), (1, n..n + m)] {
            let c = v.0[range].iter().filter(|&&b| b).count();
            if c != 1 {
                report.violations.push(Violation::NotExactlyOne {
                    vector: i,
                    side,
                    true_count: c,
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dependence {
    Independent,
    Dependent,
}

/// Independent iff the joint space is the full n·m product.
pub fn classify_pair(space: &OutcomeSpace, n: usize, m: usize) -> Result<Dependence, ModelError> {
    if space.arity != Arity::Pair(n, m) {
        return Err(ModelError::WrongArity { expected: "two-market" });
    }
    let product = n * m;
    match space.len() {
        0 => Err(ModelError::EmptySpace),
        l if l > product => Err(ModelError::ExceedsProduct { found: l, product }),
        l if l == product => Ok(Dependence::Independent),
        _ => Ok(Dependence::Dependent),
    }
}

/// Order-independent identifier of a market pair: the two keys sorted and joined by `~`.
pub fn pair_id(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}~{b}")
    } else {
        format!("{b}~{a}")
    }
}

/// Condition subsets of two markets whose true-counts agree in every joint vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DependentSubsets {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
}

impl DependentSubsets {
    pub fn complement(&self, n: usize, m: usize) -> DependentSubsets {
        DependentSubsets {
            s1: (0..n).filter(|i| !self.s1.contains(i)).collect(),
            s2: (0..m).filter(|j| !self.s2.contains(j)).collect(),
        }
    }

    /// Whether `self` is the preferred representative over its complement:
    /// smaller s1 first, then lexicographic on (s1, s2).
    pub fn is_canonical_against(&self, other: &DependentSubsets) -> bool {
        (self.s1.len(), &self.s1, &self.s2) <= (other.s1.len(), &other.s1, &other.s2)
    }

    /// Checks the defining equality on every vector of a two-market space.
    pub fn holds_on(&self, space: &OutcomeSpace) -> bool {
        let Arity::Pair(n, _) = space.arity else {
            return false;
        };
        space
            .vectors
            .iter()
            .all(|v| v.count_in(0, &self.s1) == v.count_in(n, &self.s2))
    }
}

fn mask_to_indices(mask: u32, width: usize) -> Vec<usize> {
    (0..width).filter(|i| mask & (1 << i) != 0).collect()
}

fn side_masks(space: &OutcomeSpace, offset: usize, width: usize) -> Vec<u32> {
    space
        .vectors
        .iter()
        .map(|v| {
            (0..width).fold(0u32, |acc, i| if v.0[offset + i] { acc | (1 << i) } else { acc })
        })
        .collect()
}

/// Every pair of nonempty proper subsets (S ⊂ M1, S' ⊂ M2) with equal
/// true-counts across all vectors, one representative per complement pair,
/// sorted lexicographically by (s1, s2).
pub fn find_dependent_subsets(space: &OutcomeSpace) -> Result<Vec<DependentSubsets>, ModelError> {
    let Arity::Pair(n, m) = space.arity else {
        return Err(ModelError::WrongArity { expected: "two-market" });
    };
    if space.is_empty() {
        return Err(ModelError::EmptySpace);
    }
    for w in [n, m] {
        if w > MAX_SUBSET_SCAN {
            return Err(ModelError::TooLarge(w));
        }
    }
    let left = side_masks(space, 0, n);
    let right = side_masks(space, n, m);

    // Group market-2 subsets by their true-count signature over all vectors,
    // then look each market-1 subset's signature up.
    let signature = |rows: &[u32], subset: u32| -> Vec<u8> {
        rows.iter().map(|r| (r & subset).count_ones() as u8).collect()
    };
    let mut by_signature: HashMap<Vec<u8>, Vec<u32>> = HashMap::new();
    for s2 in 1..(1u32 << m) - 1 {
        by_signature.entry(signature(&right, s2)).or_default().push(s2);
    }

    let full1 = (1u32 << n) - 1;
    let full2 = (1u32 << m) - 1;
    let mut found: BTreeSet<(u32, u32)> = BTreeSet::new();
    for s1 in 1..full1 {
        if let Some(matches) = by_signature.get(&signature(&left, s1)) {
            for &s2 in matches {
                found.insert((s1, s2));
            }
        }
    }

    let mut out: Vec<DependentSubsets> = found
        .iter()
        .filter_map(|&(s1, s2)| {
            let pair = DependentSubsets {
                s1: mask_to_indices(s1, n),
                s2: mask_to_indices(s2, m),
            };
            let comp = (full1 & !s1, full2 & !s2);
            if found.contains(&comp) {
                let other = DependentSubsets {
                    s1: mask_to_indices(comp.0, n),
                    s2: mask_to_indices(comp.1, m),
                };
                if !pair.is_canonical_against(&other) {
                    return None;
                }
            }
            Some(pair)
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Synthetic condition standing for the logical OR of dropped conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchAll {
    pub question: String,
    pub members: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedMarket {
    pub origin: String,
    pub kind: MarketKind,
    pub kept: Vec<Condition>,
    pub catch_all: Option<CatchAll>,
}

/// One prompted outcome of a reduced market and the YES-like tokens that pay
/// when it resolves true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub question: String,
    pub tokens: Vec<String>,
    pub catch_all: bool,
}

impl ReducedMarket {
    /// The exhaustive, exclusive outcome list. A single-condition market
    /// contributes its YES and NO sides as two outcomes.
    pub fn outcomes(&self) -> Vec<Outcome> {
        if self.kind == MarketKind::Single {
            let c = &self.kept[0];
            return vec![
                Outcome {
                    question: c.question.clone(),
                    tokens: vec![c.yes_token.clone()],
                    catch_all: false,
                },
                Outcome {
                    question: format!("NOT: {}", c.question),
                    tokens: vec![c.no_token.clone()],
                    catch_all: false,
                },
            ];
        }
        let mut out: Vec<Outcome> = self
            .kept
            .iter()
            .map(|c| Outcome {
                question: c.question.clone(),
                tokens: vec![c.yes_token.clone()],
                catch_all: false,
            })
            .collect();
        if let Some(ca) = &self.catch_all {
            out.push(Outcome {
                question: ca.question.clone(),
                tokens: ca.members.iter().map(|c| c.yes_token.clone()).collect(),
                catch_all: true,
            });
        }
        out
    }

    pub fn outcome_count(&self) -> usize {
        match self.kind {
            MarketKind::Single => 2,
            MarketKind::NegRisk => self.kept.len() + usize::from(self.catch_all.is_some()),
        }
    }

    pub fn catch_all_index(&self) -> Option<usize> {
        self.catch_all.as_ref().map(|_| self.kept.len())
    }
}

fn catch_all_question(dropped: &[&Condition]) -> String {
    let mut q = String::from("OTHER: ");
    q.push_str(
        &dropped
            .iter()
            .map(|c| c.question.as_str())
            .collect::<Vec<_>>()
            .join(" OR "),
    );
    match q.char_indices().nth(CATCH_ALL_MAX_CHARS) {
        Some((cut, _)) => q[..cut].to_string(),
        None => q,
    }
}

/// Keeps the `k` highest-volume conditions (ties by ascending condition id),
/// in their original order, and folds the rest into one catch-all.
pub fn reduce_market(market: &Market, k: usize) -> ReducedMarket {
    let n = market.n();
    if n <= k {
        return ReducedMarket {
            origin: market.key().to_string(),
            kind: market.kind,
            kept: market.conditions.clone(),
            catch_all: None,
        };
    }
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        let (ca, cb) = (&market.conditions[a], &market.conditions[b]);
        cb.total_volume
            .total_cmp(&ca.total_volume)
            .then_with(|| ca.condition_id.cmp(&cb.condition_id))
    });
    let keep: BTreeSet<usize> = ranked[..k].iter().copied().collect();
    let kept = keep.iter().map(|&i| market.conditions[i].clone()).collect();
    let dropped: Vec<&Condition> = (0..n)
        .filter(|i| !keep.contains(i))
        .map(|i| &market.conditions[i])
        .collect();
    ReducedMarket {
        origin: market.key().to_string(),
        kind: market.kind,
        kept,
        catch_all: Some(CatchAll {
            question: catch_all_question(&dropped),
            members: dropped.into_iter().cloned().collect(),
        }),
    }
}

/// Cumulative share of market volume captured by the top-r conditions,
/// averaged over multi-condition markets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankShare {
    pub rank: usize,
    pub mean_cumulative: f64,
    pub std_cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidityProfile {
    pub markets: usize,
    pub ranks: Vec<RankShare>,
}

impl LiquidityProfile {
    /// Mean cumulative share at `rank` (1-based); saturates at 1 past the data.
    pub fn top_share(&self, rank: usize) -> f64 {
        self.ranks
            .iter()
            .find(|r| r.rank == rank)
            .map(|r| r.mean_cumulative)
            .unwrap_or(if self.ranks.is_empty() { 0.0 } else { 1.0 })
    }

    pub fn is_monotone(&self) -> bool {
        self.ranks
            .windows(2)
            .all(|w| w[1].mean_cumulative + 1e-12 >= w[0].mean_cumulative)
    }
}

/// Liquidity-concentration diagnostic over NegRisk markets with positive volume.
/// Markets with fewer conditions than a rank count as fully covered at that rank.
pub fn liquidity_profile(markets: &[Market]) -> LiquidityProfile {
    let curves: Vec<Vec<f64>> = markets
        .iter()
        .filter(|m| m.kind == MarketKind::NegRisk && m.total_volume() > 0.0)
        .map(|m| {
            let total = m.total_volume();
            let mut vols: Vec<f64> = m.conditions.iter().map(|c| c.total_volume).collect();
            vols.sort_by(|a, b| b.total_cmp(a));
            let mut acc = 0.0;
            vols.iter()
                .map(|v| {
                    acc += v;
                    acc / total
                })
                .collect()
        })
        .collect();
    let max_rank = curves.iter().map(Vec::len).max().unwrap_or(0);
    let ranks = (1..=max_rank)
        .map(|rank| {
            let vals: Vec<f64> = curves
                .iter()
                .map(|c| c.get(rank - 1).copied().unwrap_or(1.0))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            RankShare {
                rank,
                mean_cumulative: mean,
                std_cumulative: var.sqrt(),
            }
        })
        .collect();
    LiquidityProfile {
        markets: curves.len(),
        ranks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cond(id: &str, vol: f64) -> Condition {
        Condition {
            condition_id: id.to_string(),
            question: format!("Will {id} happen?"),
            yes_token: format!("{id}-y"),
            no_token: format!("{id}-n"),
            end_date: NaiveDate::from_ymd_opt(2024, 11, 5).unwrap(),
            total_volume: vol,
        }
    }

    fn market(vols: &[(&str, f64)]) -> Market {
        Market::new(
            Some("0xm".into()),
            vols.iter().map(|(id, v)| cond(id, *v)).collect(),
            NaiveDate::from_ymd_opt(2024, 11, 5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_market_examples() {
        let basis = OutcomeSpace::from_rows(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]], Arity::Single(3)).unwrap();
        assert!(validate_single_market(&basis, 3).unwrap().is_valid());

        let double = OutcomeSpace::from_rows(&[&[1, 1, 0], &[0, 1, 0], &[0, 0, 1]], Arity::Single(3)).unwrap();
        let r = validate_single_market(&double, 3).unwrap();
        assert_eq!(
            r.violations,
            vec![Violation::NotExactlyOne { vector: 0, side: 0, true_count: 2 }]
        );

        let short = OutcomeSpace::from_rows(&[&[1, 0, 0], &[0, 1, 0]], Arity::Single(3)).unwrap();
        let r = validate_single_market(&short, 3).unwrap();
        assert_eq!(r.violations, vec![Violation::Cardinality { expected: 3, found: 2 }]);
    }

    #[test]
    fn empty_space_is_structural_error() {
        let empty = OutcomeSpace::new(vec![], Arity::Single(3)).unwrap();
        assert_eq!(validate_single_market(&empty, 3), Err(ModelError::EmptySpace));
    }

    #[test]
    fn duplicate_vectors_rejected() {
        let err = OutcomeSpace::from_rows(&[&[1, 0], &[1, 0]], Arity::Single(2)).unwrap_err();
        assert_eq!(err, ModelError::DuplicateVector(1));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(
            classify_pair(&OutcomeSpace::full_product(2, 2), 2, 2).unwrap(),
            Dependence::Independent
        );
        let three =
            OutcomeSpace::from_rows(&[&[1, 0, 1, 0], &[1, 0, 0, 1], &[0, 1, 0, 1]], Arity::Pair(2, 2)).unwrap();
        assert_eq!(classify_pair(&three, 2, 2).unwrap(), Dependence::Dependent);
    }

    #[test]
    fn classify_rejects_oversized_space() {
        // Not a valid joint space, but the cardinality guard must still fire.
        let rows: Vec<Vec<u8>> = (0..8u8).map(|i| vec![i & 1, (i >> 1) & 1, (i >> 2) & 1]).collect();
        let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
        let space = OutcomeSpace::from_rows(&refs, Arity::Pair(1, 2)).unwrap();
        assert_eq!(
            classify_pair(&space, 1, 2),
            Err(ModelError::ExceedsProduct { found: 8, product: 2 })
        );
    }

    #[test]
    fn winner_and_margin_markets_are_dependent() {
        // winner {D, R} x margin {D margin, R margin}, perfectly aligned.
        let space = OutcomeSpace::from_rows(&[&[1, 0, 1, 0], &[0, 1, 0, 1]], Arity::Pair(2, 2)).unwrap();
        let subsets = find_dependent_subsets(&space).unwrap();
        assert_eq!(subsets, vec![DependentSubsets { s1: vec![0], s2: vec![0] }]);
    }

    #[test]
    fn independent_space_has_no_subsets() {
        assert!(find_dependent_subsets(&OutcomeSpace::full_product(2, 2)).unwrap().is_empty());
        assert!(find_dependent_subsets(&OutcomeSpace::full_product(3, 4)).unwrap().is_empty());
    }

    #[test]
    fn one_deletion_is_dependent_without_subsets() {
        // {A wins, B wins} x {A by >=2, A by 1, B wins}; only (A wins, B wins) deleted.
        let space = OutcomeSpace::from_rows(
            &[&[1, 0, 1, 0, 0], &[1, 0, 0, 1, 0], &[0, 1, 1, 0, 0], &[0, 1, 0, 1, 0], &[0, 1, 0, 0, 1]],
            Arity::Pair(2, 3),
        )
        .unwrap();
        assert_eq!(classify_pair(&space, 2, 3).unwrap(), Dependence::Dependent);
        assert!(find_dependent_subsets(&space).unwrap().is_empty());
    }

    #[test]
    fn margin_market_implied_by_winner() {
        let space = OutcomeSpace::from_rows(
            &[&[1, 0, 1, 0, 0], &[1, 0, 0, 1, 0], &[0, 1, 0, 0, 1]],
            Arity::Pair(2, 3),
        )
        .unwrap();
        assert_eq!(
            find_dependent_subsets(&space).unwrap(),
            vec![DependentSubsets { s1: vec![0], s2: vec![0, 1] }]
        );
    }

    #[test]
    fn subsets_require_pair_arity() {
        let space = OutcomeSpace::from_rows(&[&[1, 0]], Arity::Single(2)).unwrap();
        assert!(matches!(
            find_dependent_subsets(&space),
            Err(ModelError::WrongArity { .. })
        ));
    }

    #[test]
    fn reduce_below_threshold_is_identity() {
        let m = market(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]);
        let r = reduce_market(&m, 4);
        assert_eq!(r.kept, m.conditions);
        assert!(r.catch_all.is_none());
    }

    #[test]
    fn reduce_keeps_top_volume() {
        let m = market(&[("a", 100.0), ("b", 90.0), ("c", 80.0), ("d", 70.0), ("e", 5.0), ("f", 5.0)]);
        let r = reduce_market(&m, 4);
        let kept: Vec<&str> = r.kept.iter().map(|c| c.condition_id.as_str()).collect();
        assert_eq!(kept, ["a", "b", "c", "d"]);
        let ca = r.catch_all.unwrap();
        let dropped: Vec<&str> = ca.members.iter().map(|c| c.condition_id.as_str()).collect();
        assert_eq!(dropped, ["e", "f"]);
        assert_eq!(ca.question, "OTHER: Will e happen? OR Will f happen?");
    }

    #[test]
    fn reduce_tie_breaks_by_condition_id() {
        let m = market(&[("f", 100.0), ("e", 90.0), ("d", 80.0), ("c2", 70.0), ("c1", 70.0), ("a", 5.0)]);
        let first = reduce_market(&m, 4);
        for _ in 0..10 {
            assert_eq!(reduce_market(&m, 4), first);
        }
        let kept: Vec<&str> = first.kept.iter().map(|c| c.condition_id.as_str()).collect();
        assert_eq!(kept, ["f", "e", "d", "c1"]);
        let ids: BTreeSet<String> = first
            .kept
            .iter()
            .chain(first.catch_all.as_ref().unwrap().members.iter())
            .map(|c| c.condition_id.clone())
            .collect();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn catch_all_question_truncated() {
        let conds: Vec<(String, f64)> = (0..40).map(|i| (format!("long-condition-{i:02}"), 100.0 - i as f64)).collect();
        let refs: Vec<(&str, f64)> = conds.iter().map(|(s, v)| (s.as_str(), *v)).collect();
        let r = reduce_market(&market(&refs), 4);
        let q = r.catch_all.unwrap().question;
        assert_eq!(q.chars().count(), CATCH_ALL_MAX_CHARS);
        assert!(q.starts_with("OTHER: "));
    }

    #[test]
    fn single_market_expands_to_two_outcomes() {
        let m = Market::new(None, vec![cond("s", 1.0)], NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()).unwrap();
        let r = reduce_market(&m, 4);
        let outs = r.outcomes();
        assert_eq!(outs.len(), 2);
        assert_eq!(outs[1].tokens, vec!["s-n".to_string()]);
        assert_eq!(r.outcome_count(), 2);
    }

    #[test]
    fn market_invariants() {
        let d = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        assert_eq!(
            Market::new(None, vec![cond("a", 1.0), cond("b", 1.0)], d),
            Err(ModelError::MissingMarketId(2))
        );
        assert_eq!(
            Market::new(Some("m".into()), vec![cond("a", 1.0), cond("a", 1.0)], d),
            Err(ModelError::DuplicateCondition("a".into()))
        );
        let mut bad = cond("x", 1.0);
        bad.no_token = bad.yes_token.clone();
        assert_eq!(bad.validate(), Err(ModelError::BadTokens("x".into())));
    }

    #[test]
    fn liquidity_profile_is_monotone() {
        let m = market(&[("a", 50.0), ("b", 30.0), ("c", 15.0), ("d", 4.0), ("e", 1.0)]);
        let p = liquidity_profile(&[m]);
        assert!(p.is_monotone());
        assert!((p.top_share(4) - 0.99).abs() < 1e-12);
        assert!((p.top_share(5) - 1.0).abs() < 1e-12);
    }
}
