//! Realized-profit attribution: per-account episodes, position ledgers,
//! scope scoring, strategy labels and the leaderboard.
//!
//! Lots are kept per condition side in FIFO order. A split creates a pair of
//! linked lots (one per side, carrying half the dollar each). Selling one
//! linked side re-prices the other at `1 - sale price`; that retained lot is
//! then an open arbitrage leg, and selling it too completes the trade.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependency::CertifiedPair;
use crate::ingest::{EventKind, Outcome, Side, TokenIndex, TradeEvent};
use crate::market_model::{Market, MarketKind};

pub const DEFAULT_EPISODE_WINDOW: u64 = 950;
/// Minimum profit for an episode-scope to count as arbitrage.
pub const DEFAULT_EPSILON: f64 = 1.0;

const UNIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub account: String,
    pub bids: Vec<TradeEvent>,
    pub window: u64,
}

impl Episode {
    pub fn first_block(&self) -> u64 {
        self.bids.first().map_or(0, |b| b.block)
    }

    pub fn last_block(&self) -> u64 {
        self.bids.last().map_or(0, |b| b.block)
    }

    /// Lower median of the bid blocks.
    pub fn median_block(&self) -> u64 {
        self.bids.get((self.bids.len().max(1) - 1) / 2).map_or(0, |b| b.block)
    }
}

/// Splits each account's bids wherever consecutive bids are more than
/// `window` blocks apart. Output is ordered by account, then time.
pub fn group_user_bids(events: impl IntoIterator<Item = TradeEvent>, window: u64) -> Vec<Episode> {
    let mut by_account: BTreeMap<String, Vec<TradeEvent>> = BTreeMap::new();
    for e in events {
        by_account.entry(e.account.clone()).or_default().push(e);
    }
    let mut out = Vec::new();
    for (account, mut bids) in by_account {
        bids.sort_by_key(|b| (b.block, b.tx_index));
        let mut current: Vec<TradeEvent> = Vec::new();
        for b in bids {
            if current.last().is_some_and(|l| b.block - l.block > window) {
                out.push(Episode {
                    account: account.clone(),
                    bids: std::mem::take(&mut current),
                    window,
                });
            }
            current.push(b);
        }
        if !current.is_empty() {
            out.push(Episode {
                account,
                bids: current,
                window,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LotKind {
    /// Bought outright.
    Cost,
    /// The remaining side of a split whose other side was sold.
    Retained,
    /// Minted by a split, other side still held.
    Paired(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lot {
    pub units: f64,
    /// Per-unit basis; linked split lots carry 0.5.
    pub cost: f64,
    pub kind: LotKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionBook {
    pub yes: VecDeque<Lot>,
    pub no: VecDeque<Lot>,
    /// Merges and completed split-and-sell trades.
    pub arb_realized: f64,
    /// Sales of bought inventory.
    pub trading_realized: f64,
    pub merge_notional: f64,
    /// Proceeds of sales that completed a split, per side.
    pub completing_yes: f64,
    pub completing_no: f64,
}

impl ConditionBook {
    fn side(&mut self, o: Outcome) -> (&mut VecDeque<Lot>, &mut VecDeque<Lot>) {
        match o {
            Outcome::Yes => (&mut self.yes, &mut self.no),
            Outcome::No => (&mut self.no, &mut self.yes),
        }
    }

    fn lots(&self, o: Outcome) -> &VecDeque<Lot> {
        match o {
            Outcome::Yes => &self.yes,
            Outcome::No => &self.no,
        }
    }

    /// Units held outright (linked split lots excluded: they hedge themselves).
    pub fn held(&self, o: Outcome) -> f64 {
        self.lots(o)
            .iter()
            .filter(|l| !matches!(l.kind, LotKind::Paired(_)))
            .map(|l| l.units)
            .sum()
    }

    /// FIFO basis of the first `units` outright units.
    pub fn basis_of_first(&self, o: Outcome, units: f64) -> f64 {
        let mut left = units;
        let mut basis = 0.0;
        for l in self.lots(o).iter().filter(|l| !matches!(l.kind, LotKind::Paired(_))) {
            if left <= UNIT_EPS {
                break;
            }
            let t = left.min(l.units);
            basis += t * l.cost;
            left -= t;
        }
        basis
    }

    fn residual_basis(&self) -> f64 {
        self.yes.iter().chain(&self.no).map(|l| l.units * l.cost).sum()
    }
}

/// One account's positions over one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PositionLedger {
    pub account: String,
    pub conditions: BTreeMap<String, ConditionBook>,
    pub cash_in: f64,
    /// Excludes proceeds from inventory acquired before the episode.
    pub cash_out: f64,
    /// Units sold or merged beyond what the episode held.
    pub external_units: f64,
    pub external_events: u64,
    /// Fills on tokens of unknown markets.
    pub unknown_tokens: u64,
    next_pair: u64,
}

impl PositionLedger {
    pub fn new(account: impl Into<String>) -> Self {
        PositionLedger {
            account: account.into(),
            ..Default::default()
        }
    }

    pub fn arb_realized(&self) -> f64 {
        self.conditions.values().map(|c| c.arb_realized).sum()
    }

    pub fn trading_realized(&self) -> f64 {
        self.conditions.values().map(|c| c.trading_realized).sum()
    }

    pub fn residual_basis(&self) -> f64 {
        self.conditions.values().map(ConditionBook::residual_basis).sum()
    }

    pub fn book(&self, condition_id: &str) -> Option<&ConditionBook> {
        self.conditions.get(condition_id)
    }

    pub fn held(&self, condition_id: &str, o: Outcome) -> f64 {
        self.book(condition_id).map_or(0.0, |b| b.held(o))
    }

    pub fn apply(&mut self, e: &TradeEvent, index: &TokenIndex) {
        match e.kind {
            EventKind::OrderFilled => {
                let Some(r) = index.get(&e.token) else {
                    self.unknown_tokens += 1;
                    return;
                };
                let Some(price) = e.unit_price() else { return };
                let cond = r.condition_id.clone();
                match e.side {
                    Side::Buy => self.buy(&cond, r.outcome, e.tokens, price),
                    Side::Sell => self.sell(&cond, r.outcome, e.tokens, price),
                    Side::NA => {}
                }
            }
            EventKind::PositionSplit => self.split(&e.condition_id.clone(), e.tokens),
            EventKind::PositionsMerge => self.merge(&e.condition_id.clone(), e.tokens),
        }
    }

    pub fn buy(&mut self, cond: &str, o: Outcome, units: f64, price: f64) {
        self.cash_in += units * price;
        let book = self.conditions.entry(cond.to_string()).or_default();
        book.side(o).0.push_back(Lot {
            units,
            cost: price,
            kind: LotKind::Cost,
        });
    }

    pub fn split(&mut self, cond: &str, units: f64) {
        self.cash_in += units;
        self.next_pair += 1;
        let lot = Lot {
            units,
            cost: 0.5,
            kind: LotKind::Paired(self.next_pair),
        };
        let book = self.conditions.entry(cond.to_string()).or_default();
        book.yes.push_back(lot);
        book.no.push_back(lot);
    }

    pub fn sell(&mut self, cond: &str, o: Outcome, units: f64, price: f64) {
        let book = self.conditions.entry(cond.to_string()).or_default();
        let mut left = units;
        let (mut arb, mut trading, mut completing) = (0.0, 0.0, 0.0);
        let (this, other) = book.side(o);
        while left > UNIT_EPS {
            let Some(front) = this.front_mut() else { break };
            let t = left.min(front.units);
            match front.kind {
                LotKind::Cost => trading += t * (price - front.cost),
                LotKind::Retained => {
                    arb += t * (price - front.cost);
                    completing += t * price;
                }
                LotKind::Paired(id) => retain(other, id, t, 1.0 - price),
            }
            front.units -= t;
            if front.units <= UNIT_EPS {
                this.pop_front();
            }
            left -= t;
        }
        book.arb_realized += arb;
        book.trading_realized += trading;
        match o {
            Outcome::Yes => book.completing_yes += completing,
            Outcome::No => book.completing_no += completing,
        }
        let covered = units - left.max(0.0);
        self.cash_out += covered * price;
        self.note_external(left);
    }

    pub fn merge(&mut self, cond: &str, units: f64) {
        let book = self.conditions.entry(cond.to_string()).or_default();
        let mut left = units;
        // Linked lots first: merging a split back is a wash.
        while left > UNIT_EPS {
            let Some(i) = book.yes.iter().position(|l| matches!(l.kind, LotKind::Paired(_))) else { break };
            let LotKind::Paired(id) = book.yes[i].kind else { unreachable!() };
            let j = book
                .no
                .iter()
                .position(|l| l.kind == LotKind::Paired(id))
                .expect("linked lots are symmetric");
            let t = left.min(book.yes[i].units);
            for (side, k) in [(&mut book.yes, i), (&mut book.no, j)] {
                side[k].units -= t;
                if side[k].units <= UNIT_EPS {
                    side.remove(k);
                }
            }
            left -= t;
        }
        let first_outright = |q: &VecDeque<Lot>| q.iter().position(|l| !matches!(l.kind, LotKind::Paired(_)));
        let mut arb = 0.0;
        while left > UNIT_EPS {
            let (Some(i), Some(j)) = (first_outright(&book.yes), first_outright(&book.no)) else { break };
            let t = left.min(book.yes[i].units).min(book.no[j].units);
            arb += t * (1.0 - book.yes[i].cost - book.no[j].cost);
            book.merge_notional += t;
            for (side, k) in [(&mut book.yes, i), (&mut book.no, j)] {
                side[k].units -= t;
                if side[k].units <= UNIT_EPS {
                    side.remove(k);
                }
            }
            left -= t;
        }
        book.arb_realized += arb;
        self.cash_out += units - left.max(0.0);
        self.note_external(left);
    }

    fn note_external(&mut self, left: f64) {
        if left > UNIT_EPS {
            self.external_units += left;
            self.external_events += 1;
        }
    }
}

/// Re-prices `t` units of the linked lot `id` on `side` as a retained lot.
fn retain(side: &mut VecDeque<Lot>, id: u64, t: f64, cost: f64) {
    let i = side
        .iter()
        .position(|l| l.kind == LotKind::Paired(id))
        .expect("linked lots are symmetric");
    let retained = Lot {
        units: t,
        cost,
        kind: LotKind::Retained,
    };
    if side[i].units - t > UNIT_EPS {
        side[i].units -= t;
        side.insert(i, retained);
    } else {
        side[i] = Lot {
            units: side[i].units,
            ..retained
        };
    }
}

pub fn build_ledger(episode: &Episode, index: &TokenIndex) -> PositionLedger {
    let mut ledger = PositionLedger::new(episode.account.clone());
    for b in &episode.bids {
        ledger.apply(b, index);
    }
    ledger
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyLabel {
    YesBuy,
    YesSell,
    NoBuy,
    NoSell,
    Rebalance,
}

impl StrategyLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyLabel::YesBuy => "YesBuy",
            StrategyLabel::YesSell => "YesSell",
            StrategyLabel::NoBuy => "NoBuy",
            StrategyLabel::NoSell => "NoSell",
            StrategyLabel::Rebalance => "Rebalance",
        }
    }
}

/// Notional behind a scope's profit, by flow.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Notional {
    pub rebalance: f64,
    pub yes_buy: f64,
    pub yes_sell: f64,
    pub no_buy: f64,
    pub no_sell: f64,
}

/// Largest notional wins; ties go to `Rebalance`, then list order.
pub fn classify_strategy(n: &Notional) -> StrategyLabel {
    let mut best = (StrategyLabel::Rebalance, n.rebalance);
    for (label, v) in [
        (StrategyLabel::YesBuy, n.yes_buy),
        (StrategyLabel::YesSell, n.yes_sell),
        (StrategyLabel::NoBuy, n.no_buy),
        (StrategyLabel::NoSell, n.no_sell),
    ] {
        if v > best.1 {
            best = (label, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    Condition,
    Market,
    Pair,
}

impl ScopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScopeKind::Condition => "condition",
            ScopeKind::Market => "market",
            ScopeKind::Pair => "pair",
        }
    }
}

/// A scope's score within one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopeScore {
    pub kind: ScopeKind,
    pub scope_id: String,
    pub profit: f64,
    pub guaranteed_units: f64,
    pub notional: Notional,
}

/// Condition scope: realized arbitrage plus the hedged YES+NO units still held.
pub fn condition_profit(ledger: &PositionLedger, condition_id: &str) -> ScopeScore {
    let mut s = ScopeScore {
        kind: ScopeKind::Condition,
        scope_id: condition_id.to_string(),
        profit: 0.0,
        guaranteed_units: 0.0,
        notional: Notional::default(),
    };
    let Some(b) = ledger.book(condition_id) else { return s };
    let g = b.held(Outcome::Yes).min(b.held(Outcome::No));
    let basis = b.basis_of_first(Outcome::Yes, g) + b.basis_of_first(Outcome::No, g);
    s.profit = b.arb_realized + g - basis;
    s.guaranteed_units = g;
    s.notional = Notional {
        rebalance: basis + b.merge_notional,
        yes_sell: b.completing_yes,
        no_sell: b.completing_no,
        ..Notional::default()
    };
    s
}

/// Market scope: every YES (payout 1 per unit) or every NO (payout n-1).
/// A YES leg that was never bought may be priced in when its condition is
/// near-impossible (`estimate` returns its YES price at or below
/// `floor`); it is charged but does not add guaranteed units.
pub fn market_profit(
    ledger: &PositionLedger,
    market: &Market,
    estimate: &dyn Fn(&str) -> Option<f64>,
    floor: f64,
) -> ScopeScore {
    let mut best = ScopeScore {
        kind: ScopeKind::Market,
        scope_id: market.key().to_string(),
        profit: 0.0,
        guaranteed_units: 0.0,
        notional: Notional::default(),
    };
    for side in [Outcome::Yes, Outcome::No] {
        let mut g = f64::INFINITY;
        let mut estimated = 0.0;
        let mut ok = true;
        for c in &market.conditions {
            let h = ledger.held(&c.condition_id, side);
            if h > UNIT_EPS {
                g = g.min(h);
                continue;
            }
            match (side, estimate(&c.yes_token)) {
                (Outcome::Yes, Some(p)) if p <= floor => estimated += p,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || !g.is_finite() {
            continue;
        }
        let basis: f64 = market
            .conditions
            .iter()
            .filter_map(|c| ledger.book(&c.condition_id))
            .map(|b| b.basis_of_first(side, g))
            .sum();
        let payout = match side {
            Outcome::Yes => 1.0,
            Outcome::No => market.n() as f64 - 1.0,
        };
        let profit = g * (payout - estimated) - basis;
        if profit > best.profit || best.guaranteed_units == 0.0 {
            best.profit = profit;
            best.guaranteed_units = g;
            best.notional = match side {
                Outcome::Yes => Notional {
                    yes_buy: basis,
                    ..Notional::default()
                },
                Outcome::No => Notional {
                    no_buy: basis,
                    ..Notional::default()
                },
            };
        }
    }
    best
}

/// Pair scope: the legs of either direction of one certified subset case.
pub fn pair_profit(ledger: &PositionLedger, pair: &CertifiedPair, case: usize, index: &TokenIndex) -> ScopeScore {
    let mut best = ScopeScore {
        kind: ScopeKind::Pair,
        scope_id: format!("{}:{case}", pair.pair_id),
        profit: 0.0,
        guaranteed_units: 0.0,
        notional: Notional::default(),
    };
    let sub = &pair.subsets[case];
    let legs = |cheap: &[crate::market_model::Outcome], s: &[usize], dear: &[crate::market_model::Outcome], d: &[usize]| {
        let mut tokens: Vec<String> = s.iter().flat_map(|&i| cheap[i].tokens.clone()).collect();
        tokens.extend(
            (0..dear.len())
                .filter(|i| !d.contains(i))
                .flat_map(|i| dear[i].tokens.clone()),
        );
        tokens
    };
    for tokens in [
        legs(&pair.left_outcomes, &sub.s1, &pair.right_outcomes, &sub.s2),
        legs(&pair.right_outcomes, &sub.s2, &pair.left_outcomes, &sub.s1),
    ] {
        let refs: Option<Vec<(String, Outcome)>> = tokens
            .iter()
            .map(|t| index.get(t).map(|r| (r.condition_id.clone(), r.outcome)))
            .collect();
        let Some(refs) = refs else { continue };
        let g = refs
            .iter()
            .map(|(c, o)| ledger.held(c, *o))
            .fold(f64::INFINITY, f64::min);
        if !(g > UNIT_EPS) || !g.is_finite() {
            continue;
        }
        let mut notional = Notional::default();
        let mut basis = 0.0;
        for (c, o) in &refs {
            let b = ledger.book(c).map_or(0.0, |b| b.basis_of_first(*o, g));
            basis += b;
            match o {
                Outcome::Yes => notional.yes_buy += b,
                Outcome::No => notional.no_buy += b,
            }
        }
        let profit = g - basis;
        if profit > best.profit || best.guaranteed_units == 0.0 {
            best.profit = profit;
            best.guaranteed_units = g;
            best.notional = notional;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionParams {
    pub window: u64,
    pub epsilon: f64,
    /// Missing YES legs priced at or below this may be estimated.
    pub min_prob_for_sizing: f64,
}

impl Default for AttributionParams {
    fn default() -> Self {
        AttributionParams {
            window: DEFAULT_EPISODE_WINDOW,
            epsilon: DEFAULT_EPSILON,
            min_prob_for_sizing: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub account: String,
    pub scope_kind: ScopeKind,
    pub scope_id: String,
    pub strategy: StrategyLabel,
    pub profit: f64,
    pub bids: usize,
    pub first_block: u64,
    pub last_block: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderRow {
    pub rank: usize,
    pub account: String,
    pub total_profit: f64,
    pub bids: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributionReport {
    /// Qualifying episode-scopes, ordered by account, first block, scope.
    pub rows: Vec<AttributionRow>,
    pub leaderboard: Vec<LeaderRow>,
    pub episodes: usize,
    /// Scored scopes with negative profit (excluded).
    pub negative_scopes: u64,
    /// Scored scopes with profit in (0, epsilon] (excluded).
    pub below_epsilon: u64,
    /// Episodes with more than one qualifying scope.
    pub overlapping_episodes: u64,
    pub external_units: f64,
    pub unknown_tokens: u64,
}

/// Strategy totals over qualifying rows.
impl AttributionReport {
    pub fn strategy_totals(&self) -> BTreeMap<StrategyLabel, f64> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            *out.entry(r.strategy).or_insert(0.0) += r.profit;
        }
        out
    }
}

struct EpisodeResult {
    rows: Vec<AttributionRow>,
    negative: u64,
    below: u64,
    external: f64,
    unknown: u64,
}

/// Scores every scope an episode touched.
pub fn score_episode(
    ep: &Episode,
    index: &TokenIndex,
    markets: &HashMap<&str, &Market>,
    pairs_by_market: &HashMap<&str, Vec<&CertifiedPair>>,
    estimate: &dyn Fn(&str, u64) -> Option<f64>,
    p: &AttributionParams,
) -> (Vec<ScopeScore>, PositionLedger) {
    let ledger = build_ledger(ep, index);
    let mut scores = Vec::new();
    let mut touched_markets = BTreeSet::new();
    for cond in ledger.conditions.keys() {
        scores.push(condition_profit(&ledger, cond));
    }
    for b in &ep.bids {
        let market = if b.is_fill() {
            index.get(&b.token).map(|r| r.market.as_str())
        } else {
            index.market_of_condition(&b.condition_id)
        };
        touched_markets.extend(market);
    }
    let median = ep.median_block();
    let est = |token: &str| estimate(token, median);
    let mut pair_cases = BTreeSet::new();
    for key in &touched_markets {
        if let Some(m) = markets.get(key) {
            if m.kind == MarketKind::NegRisk {
                scores.push(market_profit(&ledger, m, &est, p.min_prob_for_sizing));
            }
        }
        for pair in pairs_by_market.get(key).into_iter().flatten() {
            for case in 0..pair.subsets.len() {
                if pair_cases.insert((pair.pair_id.clone(), case)) {
                    scores.push(pair_profit(&ledger, pair, case, index));
                }
            }
        }
    }
    (scores, ledger)
}

/// Groups bids into episodes, scores every touched scope and keeps those
/// above `epsilon`. Accounts are processed in parallel.
pub fn attribute(
    events: impl IntoIterator<Item = TradeEvent>,
    index: &TokenIndex,
    markets: &[Market],
    pairs: &[CertifiedPair],
    estimate: &(dyn Fn(&str, u64) -> Option<f64> + Sync),
    p: &AttributionParams,
) -> AttributionReport {
    let episodes = group_user_bids(events, p.window);
    let by_key: HashMap<&str, &Market> = markets.iter().map(|m| (m.key(), m)).collect();
    let mut pairs_by_market: HashMap<&str, Vec<&CertifiedPair>> = HashMap::new();
    for pair in pairs {
        pairs_by_market.entry(pair.left.as_str()).or_default().push(pair);
        pairs_by_market.entry(pair.right.as_str()).or_default().push(pair);
    }
    let results: Vec<EpisodeResult> = episodes
        .par_iter()
        .map(|ep| {
            let (scores, ledger) = score_episode(ep, index, &by_key, &pairs_by_market, estimate, p);
            let mut r = EpisodeResult {
                rows: Vec::new(),
                negative: 0,
                below: 0,
                external: ledger.external_units,
                unknown: ledger.unknown_tokens,
            };
            for s in scores {
                if s.profit < -UNIT_EPS {
                    r.negative += 1;
                } else if s.profit > p.epsilon {
                    r.rows.push(AttributionRow {
                        account: ep.account.clone(),
                        scope_kind: s.kind,
                        scope_id: s.scope_id,
                        strategy: classify_strategy(&s.notional),
                        profit: s.profit,
                        bids: ep.bids.len(),
                        first_block: ep.first_block(),
                        last_block: ep.last_block(),
                    });
                } else if s.profit > UNIT_EPS {
                    r.below += 1;
                }
            }
            r
        })
        .collect();

    let mut report = AttributionReport {
        episodes: episodes.len(),
        ..Default::default()
    };
    for r in results {
        if r.rows.len() > 1 {
            report.overlapping_episodes += 1;
        }
        report.rows.extend(r.rows);
        report.negative_scopes += r.negative;
        report.below_epsilon += r.below;
        report.external_units += r.external;
        report.unknown_tokens += r.unknown;
    }
    report.rows.sort_by(|a, b| {
        (&a.account, a.first_block, a.scope_kind, &a.scope_id).cmp(&(&b.account, b.first_block, b.scope_kind, &b.scope_id))
    });
    report.leaderboard = leaderboard(&report.rows);
    report
}

/// Per-account totals, descending by profit with ties by account. Each
/// contributing episode's bids are counted once.
pub fn leaderboard(rows: &[AttributionRow]) -> Vec<LeaderRow> {
    let mut acc: BTreeMap<&str, (f64, BTreeMap<u64, usize>)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(&r.account).or_default();
        e.0 += r.profit;
        e.1.insert(r.first_block, r.bids);
    }
    let mut board: Vec<LeaderRow> = acc
        .into_iter()
        .map(|(account, (total, eps))| LeaderRow {
            rank: 0,
            account: account.to_string(),
            total_profit: total,
            bids: eps.values().sum(),
        })
        .collect();
    board.sort_by(|a, b| b.total_profit.total_cmp(&a.total_profit).then_with(|| a.account.cmp(&b.account)));
    for (i, r) in board.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    board
}

pub const ATTRIBUTION_HEADER: [&str; 8] =
    ["account", "scope_kind", "scope_id", "strategy", "profit", "bids", "first_block", "last_block"];
pub const LEADERBOARD_HEADER: [&str; 4] = ["rank", "account", "total_profit", "bids"];

pub fn write_rows<W: std::io::Write>(rows: &[AttributionRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ATTRIBUTION_HEADER)?;
    for r in rows {
        w.write_record([
            r.account.as_str(),
            r.scope_kind.as_str(),
            &r.scope_id,
            r.strategy.as_str(),
            &format!("{:.6}", r.profit),
            &r.bids.to_string(),
            &r.first_block.to_string(),
            &r.last_block.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_leaderboard<W: std::io::Write>(board: &[LeaderRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEADERBOARD_HEADER)?;
    for r in board {
        w.write_record([
            r.rank.to_string(),
            r.account.clone(),
            format!("{:.6}", r.total_profit),
            r.bids.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
