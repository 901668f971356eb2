//! Rebalancing and combinatorial arbitrage detection over VWAP series.
//!
//! Each scope (a condition, a NegRisk market, or a certified pair subset) is
//! scanned by walking the segments over which all of its quotes are
//! constant, so cost scales with the number of price changes rather than
//! the number of blocks. Opportunities are still reported per block.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dependency::CertifiedPair;
use crate::market_model::{Market, MarketKind, Outcome};
use crate::pricing::{segments, PriceBook, PriceSeries, Quote, SupplyBook, DEFAULT_DETERMINED_THRESHOLD, DEFAULT_WINDOW};

/// Slack for comparing VWAP-derived sums against thresholds.
pub const PRICE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("report line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub determined_threshold: f64,
    pub min_profit_per_dollar: f64,
    pub min_prob_for_sizing: f64,
    pub window: u64,
    /// Caps sizing at this much capital, when set.
    pub budget_cap: Option<f64>,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            determined_threshold: DEFAULT_DETERMINED_THRESHOLD,
            min_profit_per_dollar: 0.05,
            min_prob_for_sizing: 0.02,
            window: DEFAULT_WINDOW,
            budget_cap: None,
        }
    }
}

impl DetectParams {
    /// The 2-cent bound used for the opportunity plots.
    pub fn figure5() -> Self {
        DetectParams {
            min_profit_per_dollar: 0.02,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let open = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(DetectError::Params(format!("{name} must be in (0, 1), got {v}")))
            }
        };
        open("determined_threshold", self.determined_threshold)?;
        open("min_profit_per_dollar", self.min_profit_per_dollar)?;
        open("min_prob_for_sizing", self.min_prob_for_sizing)?;
        if self.min_prob_for_sizing >= self.determined_threshold {
            return Err(DetectError::Params(
                "min_prob_for_sizing must be below determined_threshold".into(),
            ));
        }
        if self.window == 0 {
            return Err(DetectError::Params("window must be at least 1".into()));
        }
        if let Some(b) = self.budget_cap {
            if !(b.is_finite() && b > 0.0) {
                return Err(DetectError::Params(format!("budget_cap must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpportunityKind {
    CondRebalanceLong,
    /// Split the condition and sell both sides.
    CondRebalanceShort,
    MarketRebalanceLong,
    MarketRebalanceShort,
    Combinatorial,
}

impl OpportunityKind {
    pub const ALL: [OpportunityKind; 5] = [
        OpportunityKind::CondRebalanceLong,
        OpportunityKind::CondRebalanceShort,
        OpportunityKind::MarketRebalanceLong,
        OpportunityKind::MarketRebalanceShort,
        OpportunityKind::Combinatorial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpportunityKind::CondRebalanceLong => "CondRebalanceLong",
            OpportunityKind::CondRebalanceShort => "CondRebalanceShort",
            OpportunityKind::MarketRebalanceLong => "MarketRebalanceLong",
            OpportunityKind::MarketRebalanceShort => "MarketRebalanceShort",
            OpportunityKind::Combinatorial => "Combinatorial",
        }
    }
}

impl std::str::FromStr for OpportunityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        OpportunityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown opportunity kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LegSide {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub token: String,
    pub condition_id: String,
    pub price: f64,
    pub side: LegSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opportunity {
    pub kind: OpportunityKind,
    pub block: u64,
    pub scope_id: String,
    /// Profit per dollar.
    pub deviation: f64,
    pub max_profit: f64,
    pub legs: Vec<Leg>,
}

/// One token of a scope: its series (if it ever traded) and its condition.
#[derive(Debug, Clone, Copy)]
pub struct TokenInput<'a> {
    pub token: &'a str,
    pub condition_id: &'a str,
    pub series: Option<&'a PriceSeries>,
}

fn leg(t: &TokenInput, price: f64, side: LegSide) -> Leg {
    Leg {
        token: t.token.to_string(),
        condition_id: t.condition_id.to_string(),
        price,
        side,
    }
}

/// Units available for an opportunity: the smallest leg supply among legs
/// priced above the sizing floor; 0 when every leg is below it.
pub fn size_opportunity(opp: &Opportunity, supplies: &[f64], p: &DetectParams) -> f64 {
    let units = opp
        .legs
        .iter()
        .zip(supplies)
        .filter(|(l, _)| l.price > p.min_prob_for_sizing)
        .map(|(_, s)| *s)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))))
        .unwrap_or(0.0);
    let profit = opp.deviation * units.max(0.0);
    match p.budget_cap {
        Some(b) => profit.min(b * opp.deviation),
        None => profit,
    }
}

fn sized(mut opp: Opportunity, supply: &SupplyBook, p: &DetectParams) -> Opportunity {
    let supplies: Vec<f64> = opp.legs.iter().map(|l| supply.at(&l.condition_id, opp.block)).collect();
    opp.max_profit = size_opportunity(&opp, &supplies, p);
    opp
}

/// What one scope emits for a fixed set of quote values (`None` = no price).
/// Shared by the streaming scan and its per-block evaluation.
pub trait Rule: Sync {
    fn tokens(&self) -> Vec<TokenInput<'_>>;
    /// Outcome for one snapshot: `Err(())` marks a skipped block.
    fn evaluate(&self, prices: &[Option<f64>], p: &DetectParams) -> Result<Option<(OpportunityKind, f64, Vec<Leg>)>, ()>;
    fn scope_id(&self) -> &str;
}

/// YES/NO of one condition.
pub struct ConditionRule<'a> {
    pub condition_id: &'a str,
    pub yes: TokenInput<'a>,
    pub no: TokenInput<'a>,
}

impl Rule for ConditionRule<'_> {
    fn tokens(&self) -> Vec<TokenInput<'_>> {
        vec![self.yes, self.no]
    }

    fn scope_id(&self) -> &str {
        self.condition_id
    }

    fn evaluate(&self, prices: &[Option<f64>], p: &DetectParams) -> Result<Option<(OpportunityKind, f64, Vec<Leg>)>, ()> {
        let (Some(y), Some(n)) = (prices[0], prices[1]) else {
            return Err(());
        };
        if y > p.determined_threshold || n > p.determined_threshold {
            return Ok(None);
        }
        let sum = y + n;
        let dev = (1.0 - sum).abs();
        if dev + PRICE_EPS < p.min_profit_per_dollar {
            return Ok(None);
        }
        let (kind, side) = if sum < 1.0 {
            (OpportunityKind::CondRebalanceLong, LegSide::Buy)
        } else {
            (OpportunityKind::CondRebalanceShort, LegSide::Sell)
        };
        Ok(Some((kind, dev, vec![leg(&self.yes, y, side), leg(&self.no, n, side)])))
    }
}

/// All YES tokens of one NegRisk market.
pub struct MarketRule<'a> {
    pub market_id: &'a str,
    pub yes: Vec<TokenInput<'a>>,
}

impl Rule for MarketRule<'_> {
    fn tokens(&self) -> Vec<TokenInput<'_>> {
        self.yes.clone()
    }

    fn scope_id(&self) -> &str {
        self.market_id
    }

    fn evaluate(&self, prices: &[Option<f64>], p: &DetectParams) -> Result<Option<(OpportunityKind, f64, Vec<Leg>)>, ()> {
        let Some(ys) = prices.iter().copied().collect::<Option<Vec<f64>>>() else {
            return Err(());
        };
        if ys.len() < 2 {
            return Err(());
        }
        if ys.iter().any(|y| *y > p.determined_threshold) {
            return Ok(None);
        }
        let s: f64 = ys.iter().sum();
        let (kind, dev, side) = if 1.0 - s + PRICE_EPS >= p.min_profit_per_dollar {
            (OpportunityKind::MarketRebalanceLong, 1.0 - s, LegSide::Buy)
        } else if s - 1.0 + PRICE_EPS >= p.min_profit_per_dollar {
            (OpportunityKind::MarketRebalanceShort, s - 1.0, LegSide::Sell)
        } else {
            return Ok(None);
        };
        let legs = self.yes.iter().zip(&ys).map(|(t, y)| leg(t, *y, side)).collect();
        Ok(Some((kind, dev, legs)))
    }
}

/// Guaranteed profit per unit of buying every NO of an `n`-condition market:
/// exactly `n - 1` NO tokens pay out.
pub fn short_profit_from_no(no_prices: &[f64]) -> f64 {
    (no_prices.len() as f64 - 1.0) - no_prices.iter().sum::<f64>()
}

/// One certified subset case of a dependent pair.
pub struct PairRule<'a> {
    pub scope_id: String,
    tokens: Vec<TokenInput<'a>>,
    /// Token positions of each outcome, per market.
    left: Vec<Vec<usize>>,
    right: Vec<Vec<usize>>,
    s1: Vec<usize>,
    s2: Vec<usize>,
}

impl<'a> PairRule<'a> {
    pub fn new(
        pair: &'a CertifiedPair,
        case: usize,
        lookup: &dyn Fn(&'a str) -> TokenInput<'a>,
    ) -> PairRule<'a> {
        let mut tokens = Vec::new();
        let mut index = |outcomes: &'a [Outcome]| -> Vec<Vec<usize>> {
            outcomes
                .iter()
                .map(|o| {
                    o.tokens
                        .iter()
                        .map(|t| {
                            tokens.push(lookup(t));
                            tokens.len() - 1
                        })
                        .collect()
                })
                .collect()
        };
        let left = index(&pair.left_outcomes);
        let right = index(&pair.right_outcomes);
        let sub = &pair.subsets[case];
        PairRule {
            scope_id: format!("{}:{case}", pair.pair_id),
            tokens,
            left,
            right,
            s1: sub.s1.clone(),
            s2: sub.s2.clone(),
        }
    }
}

impl Rule for PairRule<'_> {
    fn tokens(&self) -> Vec<TokenInput<'_>> {
        self.tokens.clone()
    }

    fn scope_id(&self) -> &str {
        &self.scope_id
    }

    fn evaluate(&self, prices: &[Option<f64>], p: &DetectParams) -> Result<Option<(OpportunityKind, f64, Vec<Leg>)>, ()> {
        if prices.iter().flatten().any(|x| *x > p.determined_threshold) {
            return Ok(None);
        }
        let total = |outcomes: &[Vec<usize>], pick: &mut dyn Iterator<Item = usize>| -> Option<f64> {
            pick.flat_map(|i| outcomes[i].iter()).map(|&t| prices[t]).sum()
        };
        let (Some(a), Some(b)) = (
            total(&self.left, &mut self.s1.iter().copied()),
            total(&self.right, &mut self.s2.iter().copied()),
        ) else {
            return Err(());
        };
        let dev = (a - b).abs();
        if dev + PRICE_EPS < p.min_profit_per_dollar {
            return Ok(None);
        }
        // Buy YES on the cheap side's subset and on the complement of the dear side's.
        let (cheap, cheap_set, dear, dear_set) = if a < b {
            (&self.left, &self.s1, &self.right, &self.s2)
        } else {
            (&self.right, &self.s2, &self.left, &self.s1)
        };
        let mut positions: Vec<usize> = cheap_set.iter().flat_map(|&i| cheap[i].iter().copied()).collect();
        positions.extend(
            (0..dear.len())
                .filter(|i| !dear_set.contains(i))
                .flat_map(|i| dear[i].iter().copied()),
        );
        let mut legs = Vec::with_capacity(positions.len());
        for t in positions {
            let price = prices[t].ok_or(())?;
            legs.push(leg(&self.tokens[t], price, LegSide::Buy));
        }
        Ok(Some((OpportunityKind::Combinatorial, dev, legs)))
    }
}

/// Streaming scan of one scope, stopping after `horizon` when given.
/// Returns opportunities (unsized) and the number of skipped blocks.
pub fn scan_rule(rule: &dyn Rule, p: &DetectParams, horizon: Option<u64>) -> (Vec<Opportunity>, u64) {
    let tokens = rule.tokens();
    let series: Vec<&PriceSeries> = tokens.iter().filter_map(|t| t.series).collect();
    let slots: Vec<Option<usize>> = {
        let mut k = 0;
        tokens
            .iter()
            .map(|t| {
                t.series.map(|_| {
                    k += 1;
                    k - 1
                })
            })
            .collect()
    };
    let mut out = Vec::new();
    let mut skipped = 0;
    let horizon = horizon.unwrap_or(u64::MAX);
    for mut seg in segments(&series) {
        if seg.start > horizon {
            break;
        }
        seg.end = seg.end.min(horizon);
        let prices: Vec<Option<f64>> = slots
            .iter()
            .map(|s| s.and_then(|i| seg.quotes[i].value()))
            .collect();
        match rule.evaluate(&prices, p) {
            Err(()) => skipped += seg.end - seg.start + 1,
            Ok(None) => {}
            Ok(Some((kind, deviation, legs))) => {
                for block in seg.start..=seg.end {
                    out.push(Opportunity {
                        kind,
                        block,
                        scope_id: rule.scope_id().to_string(),
                        deviation,
                        max_profit: 0.0,
                        legs: legs.clone(),
                    });
                }
            }
        }
    }
    (out, skipped)
}

/// Reference evaluation: rescans every block from the first trade to the
/// last live quote (or `horizon`). Quadratic; for tests and small inputs.
pub fn rescan_rule(rule: &dyn Rule, p: &DetectParams, horizon: Option<u64>) -> Vec<Opportunity> {
    let tokens = rule.tokens();
    let first = tokens.iter().filter_map(|t| t.series?.first_block()).min();
    let last = tokens.iter().filter_map(|t| t.series?.last_quoted_block()).max();
    let (Some(first), Some(last)) = (first, last) else {
        return Vec::new();
    };
    let last = last.min(horizon.unwrap_or(u64::MAX));
    let mut out = Vec::new();
    for block in first..=last {
        let prices: Vec<Option<f64>> = tokens
            .iter()
            .map(|t| t.series.map_or(Quote::NoPrice, |s| s.quote(block)).value())
            .collect();
        if let Ok(Some((kind, deviation, legs))) = rule.evaluate(&prices, p) {
            out.push(Opportunity {
                kind,
                block,
                scope_id: rule.scope_id().to_string(),
                deviation,
                max_profit: 0.0,
                legs,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectReport {
    /// Sorted by (scope, block, kind).
    pub opportunities: Vec<Opportunity>,
    /// Blocks skipped for missing prices, summed over scopes.
    pub skipped_blocks: u64,
    pub scopes: usize,
}

impl DetectReport {
    pub fn count(&self, kind: OpportunityKind) -> usize {
        self.opportunities.iter().filter(|o| o.kind == kind).count()
    }
}

fn token_input<'a>(book: &'a PriceBook, token: &'a str, condition_id: &'a str) -> TokenInput<'a> {
    TokenInput {
        token,
        condition_id,
        series: book.get(token),
    }
}

/// Runs every detector over every scope: each condition, each NegRisk
/// market, and each certified subset case of each dependent pair. Blocks
/// after the book's last logged block are not scanned: quotes expiring
/// there reflect the end of the data, not the market.
pub fn detect_all(markets: &[Market], pairs: &[CertifiedPair], book: &PriceBook, p: &DetectParams) -> DetectReport {
    let cond_of: std::collections::HashMap<&str, &str> = markets
        .iter()
        .flat_map(|m| &m.conditions)
        .flat_map(|c| [(c.yes_token.as_str(), c.condition_id.as_str()), (c.no_token.as_str(), c.condition_id.as_str())])
        .collect();
    let mut rules: Vec<Box<dyn Rule + '_>> = Vec::new();
    for m in markets {
        for c in &m.conditions {
            rules.push(Box::new(ConditionRule {
                condition_id: &c.condition_id,
                yes: token_input(book, &c.yes_token, &c.condition_id),
                no: token_input(book, &c.no_token, &c.condition_id),
            }));
        }
        if m.kind == MarketKind::NegRisk {
            rules.push(Box::new(MarketRule {
                market_id: m.key(),
                yes: m
                    .conditions
                    .iter()
                    .map(|c| token_input(book, &c.yes_token, &c.condition_id))
                    .collect(),
            }));
        }
    }
    for pair in pairs {
        for case in 0..pair.subsets.len() {
            let rule = PairRule::new(pair, case, &|t| TokenInput {
                token: t,
                condition_id: cond_of.get(t).copied().unwrap_or(""),
                series: book.get(t),
            });
            rules.push(Box::new(rule));
        }
    }
    let results: Vec<(Vec<Opportunity>, u64)> = rules
        .par_iter()
        .map(|r| {
            let (opps, skipped) = scan_rule(r.as_ref(), p, book.last_block);
            (opps.into_iter().map(|o| sized(o, &book.supply, p)).collect(), skipped)
        })
        .collect();
    let mut report = DetectReport {
        scopes: rules.len(),
        ..Default::default()
    };
    for (opps, skipped) in results {
        report.opportunities.extend(opps);
        report.skipped_blocks += skipped;
    }
    report
        .opportunities
        .sort_by(|a, b| (&a.scope_id, a.block, a.kind).cmp(&(&b.scope_id, b.block, b.kind)));
    report
}

pub const REPORT_HEADER: [&str; 6] = ["kind", "block", "scope_id", "deviation", "max_profit", "legs_json"];

pub fn write_report<W: Write>(opps: &[Opportunity], out: W) -> Result<(), DetectError> {
    let mut w = csv::WriterBuilder::new().buffer_capacity(1 << 20).from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for o in opps {
        let legs = serde_json::to_string(&o.legs).map_err(|e| DetectError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_record([
            o.kind.as_str(),
            &o.block.to_string(),
            &o.scope_id,
            &o.deviation.to_string(),
            &o.max_profit.to_string(),
            &legs,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<Opportunity>, DetectError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let bad = |message: String| DetectError::Malformed { line, message };
        if rec.len() != REPORT_HEADER.len() {
            return Err(bad(format!("expected {} fields", REPORT_HEADER.len())));
        }
        out.push(Opportunity {
            kind: rec[0].parse().map_err(bad)?,
            block: rec[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            scope_id: rec[2].to_string(),
            deviation: rec[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            max_profit: rec[4].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            legs: serde_json::from_str(&rec[5]).map_err(|e| bad(e.to_string()))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::PricePoint;

    fn flat(token: &str, price: f64) -> PriceSeries {
        PriceSeries::from_points(
            token,
            vec![PricePoint {
                block: 10,
                vwap: price,
                volume: 1.0,
            }],
            1,
            5,
        )
    }

    fn input<'a>(token: &'a str, s: &'a PriceSeries) -> TokenInput<'a> {
        TokenInput {
            token,
            condition_id: token,
            series: Some(s),
        }
    }

    fn eval(rule: &dyn Rule, prices: &[f64]) -> Option<(OpportunityKind, f64)> {
        let p: Vec<Option<f64>> = prices.iter().map(|x| Some(*x)).collect();
        rule.evaluate(&p, &DetectParams::default()).unwrap().map(|(k, d, _)| (k, d))
    }

    #[test]
    fn condition_examples() {
        let (y, n) = (flat("y", 0.0), flat("n", 0.0));
        let r = ConditionRule {
            condition_id: "c",
            yes: input("y", &y),
            no: input("n", &n),
        };
        let (k, d) = eval(&r, &[0.60, 0.35]).unwrap();
        assert_eq!(k, OpportunityKind::CondRebalanceLong);
        assert!((d - 0.05).abs() < 1e-12);
        assert_eq!(eval(&r, &[0.60, 0.40]), None);
        let (_, d) = eval(&r, &[0.009, 0.012]).unwrap();
        assert!((d - 0.979).abs() < 1e-12);
        assert_eq!(eval(&r, &[0.60, 0.50]).unwrap().0, OpportunityKind::CondRebalanceShort);
    }

    #[test]
    fn market_examples() {
        let s: Vec<PriceSeries> = (0..3).map(|i| flat(&i.to_string(), 0.0)).collect();
        let names = ["0", "1", "2"];
        let r = MarketRule {
            market_id: "m",
            yes: names.iter().zip(&s).map(|(n, s)| input(n, s)).collect(),
        };
        let (k, d) = eval(&r, &[0.50, 0.30, 0.10]).unwrap();
        assert_eq!(k, OpportunityKind::MarketRebalanceLong);
        assert!((d - 0.10).abs() < 1e-12);
        let (k, d) = eval(&r, &[0.50, 0.40, 0.20]).unwrap();
        assert_eq!(k, OpportunityKind::MarketRebalanceShort);
        assert!((d - 0.10).abs() < 1e-12);
        assert!((short_profit_from_no(&[0.50, 0.60, 0.80]) - 0.10).abs() < 1e-12);
        assert_eq!(eval(&r, &[0.97, 0.02, 0.01]), None);
    }

    #[test]
    fn missing_price_skips_market_block() {
        let a = flat("a", 0.3);
        let b = PriceSeries::from_points(
            "b",
            vec![PricePoint {
                block: 12,
                vwap: 0.3,
                volume: 1.0,
            }],
            1,
            5,
        );
        let r = MarketRule {
            market_id: "m",
            yes: vec![input("a", &a), input("b", &b)],
        };
        let (opps, skipped) = scan_rule(&r, &DetectParams::default(), None);
        // Blocks 10-11 lack b; 12-15 are long; 16-17 have a expired (0) + b.
        assert_eq!(skipped, 2);
        assert_eq!(opps.iter().map(|o| o.block).collect::<Vec<_>>(), (12..=17).collect::<Vec<_>>());
        assert_eq!(opps, rescan_rule(&r, &DetectParams::default(), None));
        let (clipped, _) = scan_rule(&r, &DetectParams::default(), Some(13));
        assert_eq!(clipped.len(), 2);
        assert_eq!(clipped, rescan_rule(&r, &DetectParams::default(), Some(13)));
    }

    #[test]
    fn sizing_rules() {
        let opp = |prices: &[f64]| Opportunity {
            kind: OpportunityKind::MarketRebalanceLong,
            block: 0,
            scope_id: "m".into(),
            deviation: 0.10,
            max_profit: 0.0,
            legs: prices
                .iter()
                .map(|p| Leg {
                    token: String::new(),
                    condition_id: String::new(),
                    price: *p,
                    side: LegSide::Buy,
                })
                .collect(),
        };
        let p = DetectParams::default();
        let v = size_opportunity(&opp(&[0.3, 0.3, 0.3]), &[1000.0, 500.0, 800.0], &p);
        assert!((v - 50.0).abs() < 1e-9);
        let v = size_opportunity(&opp(&[0.3, 0.01, 0.3]), &[1000.0, 10.0, 800.0], &p);
        assert!((v - 80.0).abs() < 1e-9);
        assert_eq!(size_opportunity(&opp(&[0.01, 0.01]), &[5.0, 5.0], &p), 0.0);
        let capped = DetectParams {
            budget_cap: Some(100.0),
            ..p
        };
        let v = size_opportunity(&opp(&[0.3, 0.3, 0.3]), &[1000.0, 500.0, 800.0], &capped);
        assert!((v - 10.0).abs() < 1e-9);
    }

    #[test]
    fn params_validation() {
        assert!(DetectParams::default().validate().is_ok());
        assert!(DetectParams::figure5().validate().is_ok());
        let bad = DetectParams {
            min_prob_for_sizing: 0.96,
            ..DetectParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn report_round_trip() {
        let o = Opportunity {
            kind: OpportunityKind::Combinatorial,
            block: 7,
            scope_id: "a~b:0".into(),
            deviation: 0.12,
            max_profit: 3.5,
            legs: vec![Leg {
                token: "t".into(),
                condition_id: "c".into(),
                price: 0.4,
                side: LegSide::Buy,
            }],
        };
        let mut buf = Vec::new();
        write_report(std::slice::from_ref(&o), &mut buf).unwrap();
        assert_eq!(read_report(buf.as_slice()).unwrap(), vec![o]);
    }
}
