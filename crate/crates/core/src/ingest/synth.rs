//! Deterministic synthetic event logs with planted arbitrage episodes.
//!
//! Noise traders trade every token around a fixed fair price: buyers pay up
//! to `max_spread` above it and sellers receive up to `max_spread` below, so
//! noise alone never completes a profitable arbitrage and VWAP sums stay
//! within `n * max_spread` of 1. Each planted episode gets its own markets;
//! at the planted block its tokens trade only at controlled prices, and one
//! block later they are reset to fair value.
//!
//! All prices are integer basis points and all sizes whole tokens, so every
//! amount survives the six-decimal CSV encoding exactly.

use std::collections::{BTreeMap, HashSet, VecDeque};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EventKind, MarketDescriptor, Side, TokenDescriptor, TradeEvent, EXCHANGE};
use crate::market_model::{pair_id, Condition, Market, Topic};

const BP: u32 = 10_000;
const MAX_PLANT_PRICE_BP: u32 = 9_500;
const MARK_UNITS: u32 = 500;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("combinatorial plant #{0} needs a dependent pair index below {1}")]
    MissingPair(usize, usize),
    #[error("plant #{0} at block {1} is outside the tradable range {2}..={3}")]
    BlockOutOfRange(usize, u64, u64, u64),
    #[error("plant #{0}: magnitude {1} pushes a price outside (0, 0.95]")]
    Magnitude(usize, f64),
    #[error("plants #{0} and #{1} touch the same markets at adjacent blocks")]
    Overlap(usize, usize),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    CondRebalanceLong,
    CondRebalanceShort,
    MarketRebalanceLong,
    MarketRebalanceShort,
    Combinatorial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub kind: PlantKind,
    pub block: u64,
    /// Profit per unit, in USDC.
    pub magnitude: f64,
    #[serde(default = "default_units")]
    pub units: u32,
    /// Dependent pair index, for combinatorial plants.
    #[serde(default)]
    pub pair: Option<usize>,
}

fn default_units() -> u32 {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub single_markets: usize,
    pub negrisk_markets: usize,
    pub min_conditions: usize,
    pub max_conditions: usize,
    pub dependent_pairs: usize,
    pub noise_traders: usize,
    pub market_makers: usize,
    pub start_block: u64,
    /// Blocks generated, starting at `start_block`.
    pub blocks: u64,
    pub fills_per_block: usize,
    pub max_spread: f64,
    pub min_units: u32,
    pub max_units: u32,
    /// Tokens each market maker splits per condition at the start.
    pub maker_supply: u32,
    /// When set, conditions within a market are picked with Zipf weights of
    /// this exponent, concentrating volume in the first conditions.
    pub zipf_exponent: Option<f64>,
    pub plants: Vec<PlantSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            single_markets: 6,
            negrisk_markets: 4,
            min_conditions: 2,
            max_conditions: 4,
            dependent_pairs: 0,
            noise_traders: 50,
            market_makers: 3,
            start_block: 1_000_000,
            blocks: 2_000,
            fills_per_block: 4,
            max_spread: 0.005,
            min_units: 10,
            max_units: 200,
            maker_supply: 100_000,
            zipf_exponent: None,
            plants: Vec::new(),
        }
    }
}

impl SynthConfig {
    /// The acceptance fixture: five planted episodes (two condition, two
    /// market incl. one short, one combinatorial) among >100k noise fills.
    pub fn planted_fixture() -> Self {
        let start = 1_000_000;
        SynthConfig {
            single_markets: 8,
            negrisk_markets: 6,
            dependent_pairs: 1,
            noise_traders: 400,
            blocks: 12_000,
            fills_per_block: 10,
            start_block: start,
            plants: vec![
                PlantSpec {
                    kind: PlantKind::CondRebalanceLong,
                    block: start + 2_000,
                    magnitude: 0.10,
                    units: 1_000,
                    pair: None,
                },
                PlantSpec {
                    kind: PlantKind::CondRebalanceShort,
                    block: start + 4_100,
                    magnitude: 0.07,
                    units: 800,
                    pair: None,
                },
                PlantSpec {
                    kind: PlantKind::MarketRebalanceLong,
                    block: start + 6_000,
                    magnitude: 0.12,
                    units: 1_500,
                    pair: None,
                },
                PlantSpec {
                    kind: PlantKind::MarketRebalanceShort,
                    block: start + 8_050,
                    magnitude: 0.09,
                    units: 1_200,
                    pair: None,
                },
                PlantSpec {
                    kind: PlantKind::Combinatorial,
                    block: start + 10_000,
                    magnitude: 0.08,
                    units: 2_000,
                    pair: Some(0),
                },
            ],
            ..SynthConfig::default()
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.min_conditions < 2 || self.max_conditions < self.min_conditions {
            return bad("need 2 <= min_conditions <= max_conditions");
        }
        if self.noise_traders == 0 || self.market_makers == 0 {
            return bad("need at least one noise trader and one market maker");
        }
        if self.min_units == 0 || self.max_units < self.min_units {
            return bad("need 1 <= min_units <= max_units");
        }
        if !(0.0..0.05).contains(&self.max_spread) {
            return bad("max_spread must be in [0, 0.05)");
        }
        if self.blocks < 4 {
            return bad("need at least 4 blocks");
        }
        if self.single_markets + self.negrisk_markets + self.dependent_pairs == 0 && self.plants.is_empty() {
            return bad("no markets to trade");
        }
        let (lo, hi) = (self.start_block + 2, self.start_block + self.blocks - 2);
        for (i, p) in self.plants.iter().enumerate() {
            if p.block < lo || p.block > hi {
                return Err(SynthError::BlockOutOfRange(i, p.block, lo, hi));
            }
            if p.kind == PlantKind::Combinatorial {
                match p.pair {
                    Some(k) if k < self.dependent_pairs => {}
                    _ => return Err(SynthError::MissingPair(i, self.dependent_pairs)),
                }
            }
            if !(p.magnitude > 0.0) || p.units == 0 {
                return Err(SynthError::Magnitude(i, p.magnitude));
            }
        }
        for (i, a) in self.plants.iter().enumerate() {
            for (j, b) in self.plants.iter().enumerate().skip(i + 1) {
                let same_pair = a.kind == PlantKind::Combinatorial && b.kind == PlantKind::Combinatorial && a.pair == b.pair;
                if same_pair && a.block.abs_diff(b.block) < 2 {
                    return Err(SynthError::Overlap(i, j));
                }
            }
        }
        Ok(())
    }
}

/// One planted episode, as written to the sidecar manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEpisode {
    #[serde(rename = "type")]
    pub kind: PlantKind,
    pub block: u64,
    /// Market key, or pair id for combinatorial plants.
    pub market_id: String,
    /// Planted profit per unit, in USDC.
    pub magnitude_usd: f64,
    pub account: String,
    /// Detection scope id the episode should surface under.
    pub scope_id: String,
    pub units: u32,
    pub profit_usd: f64,
}

/// Canned oracle response for a dependent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub pair_id: String,
    pub response: String,
}

#[derive(Debug, Clone)]
struct Tok {
    id: String,
    fair: u32,
}

#[derive(Debug, Clone)]
struct Cond {
    id: String,
    yes: usize,
    no: usize,
}

#[derive(Debug, Clone)]
struct SynthMarket {
    conds: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Buy,
    Sell,
    Split,
}

#[derive(Debug, Clone)]
struct Scripted {
    account: String,
    action: Action,
    /// Token index, or condition index for splits.
    target: usize,
    price: u32,
    units: u32,
}

/// Everything a run produces except the event stream, which is generated lazily.
#[derive(Debug, Clone)]
pub struct SynthRun {
    pub config: SynthConfig,
    pub seed: u64,
    pub markets: Vec<Market>,
    pub descriptors: Vec<MarketDescriptor>,
    pub manifest: Vec<PlantedEpisode>,
    pub oracle_fixtures: Vec<OracleFixture>,
    toks: Vec<Tok>,
    conds: Vec<Cond>,
    smarkets: Vec<SynthMarket>,
    zipf: Vec<Vec<f64>>,
    noise_traders: Vec<String>,
    makers: Vec<String>,
    script: BTreeMap<u64, Vec<Scripted>>,
    reserved: BTreeMap<u64, HashSet<usize>>,
}

fn hex_id(rng: &mut ChaCha8Rng, nibbles: usize) -> String {
    let mut s = String::with_capacity(nibbles + 2);
    s.push_str("0x");
    for _ in 0..nibbles {
        s.push(char::from_digit(rng.gen_range(0..16), 16).unwrap());
    }
    s
}

fn token_id(rng: &mut ChaCha8Rng) -> String {
    format!("{}{:018}", rng.gen_range(1..10u8), rng.gen_range(0..1_000_000_000_000_000_000u64))
}

const NAMES: [&str; 12] = [
    "Harlow", "Mendez", "Okafor", "Lindqvist", "Tanaka", "Brennan", "Costa", "Ivanova", "Dubois", "Kowalski",
    "Reyes", "Sato",
];

fn question_for(topic: Topic, rng: &mut ChaCha8Rng, subject: &str) -> String {
    let n = rng.gen_range(1..100);
    match topic {
        Topic::Politics => format!("Will {subject} win the governor election in district {n}?"),
        Topic::Economy => format!("Will the {subject} inflation rate exceed {n} basis points this quarter?"),
        Topic::Technology => format!("Will {subject} release a new AI chip before product event {n}?"),
        Topic::Crypto => format!("Will the {subject} token price reach {n}k on the crypto exchange?"),
        Topic::Twitter => format!("Will {subject} post more than {n} tweets this week?"),
        Topic::Culture => format!("Will {subject} win the award at film festival {n}?"),
        Topic::Sports => format!("Will {subject} win the league match {n}?"),
    }
}

/// Fair YES prices in basis points summing to exactly 10 000.
fn negrisk_fairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..3.0)).collect();
    let total: f64 = w.iter().sum();
    let mut bp: Vec<u32> = w.iter().map(|x| (x / total * BP as f64).floor() as u32).collect();
    let rest = BP - bp.iter().sum::<u32>();
    bp[0] += rest;
    bp
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    cfg: &'a SynthConfig,
    toks: Vec<Tok>,
    conds: Vec<Cond>,
    smarkets: Vec<SynthMarket>,
    markets: Vec<Market>,
    descriptors: Vec<MarketDescriptor>,
    dates: Vec<NaiveDate>,
}

impl Builder<'_> {
    /// Adds a market whose conditions have the given fair YES prices.
    fn add_market(&mut self, topic: Topic, date: NaiveDate, questions: Vec<String>, fairs: &[u32], perturb: bool) -> usize {
        let negrisk = fairs.len() > 1;
        let market_id = negrisk.then(|| hex_id(&mut self.rng, 64));
        let mut conditions = Vec::new();
        let mut cidx = Vec::new();
        for (i, (q, &fair)) in questions.into_iter().zip(fairs).enumerate() {
            let cid = hex_id(&mut self.rng, 64);
            let (yes_id, no_id) = (token_id(&mut self.rng), token_id(&mut self.rng));
            let c = self.conds.len();
            self.toks.push(Tok {
                id: yes_id.clone(),
                fair,
            });
            self.toks.push(Tok {
                id: no_id.clone(),
                fair: BP - fair,
            });
            self.conds.push(Cond {
                id: cid.clone(),
                yes: self.toks.len() - 2,
                no: self.toks.len() - 1,
            });
            cidx.push(c);
            // Shifting one date of a 3+ condition market leaves the mode intact.
            let desc_date = if perturb && i == fairs.len() - 1 { date + Duration::days(1) } else { date };
            self.descriptors.push(MarketDescriptor {
                condition_id: cid.clone(),
                question: q.clone(),
                end_date_iso: format!("{} 00:00:00+00:00", desc_date.format("%Y-%m-%d")),
                neg_risk_market_id: market_id.clone(),
                tokens: vec![
                    TokenDescriptor {
                        token_id: yes_id.clone(),
                        outcome: "Yes".into(),
                        price: Some(fair as f64 / BP as f64),
                        winner: None,
                    },
                    TokenDescriptor {
                        token_id: no_id.clone(),
                        outcome: "No".into(),
                        price: Some((BP - fair) as f64 / BP as f64),
                        winner: None,
                    },
                ],
            });
            conditions.push(Condition {
                condition_id: cid,
                question: q,
                yes_token: yes_id,
                no_token: no_id,
                end_date: date,
                total_volume: 0.0,
            });
        }
        let mut market = Market::new(market_id, conditions, date).expect("generator builds valid markets");
        market.topic = Some(topic);
        self.markets.push(market);
        self.smarkets.push(SynthMarket { conds: cidx });
        self.markets.len() - 1
    }

    fn random_date(&mut self) -> NaiveDate {
        *self.dates.choose(&mut self.rng).unwrap()
    }

    fn subject(&mut self) -> String {
        NAMES.choose(&mut self.rng).unwrap().to_string()
    }
}

/// Builds a deterministic fixture. Same config and seed give identical output.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SynthRun, SynthError> {
    config.validate()?;
    let base = NaiveDate::from_ymd_opt(2024, 6, 1).unwrap();
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        cfg: config,
        toks: Vec::new(),
        conds: Vec::new(),
        smarkets: Vec::new(),
        markets: Vec::new(),
        descriptors: Vec::new(),
        dates: (0..4).map(|k| base + Duration::days(7 * k)).collect(),
    };
    let cfg = b.cfg;

    for _ in 0..cfg.single_markets {
        let topic = *Topic::ALL.choose(&mut b.rng).unwrap();
        let subject = b.subject();
        let q = question_for(topic, &mut b.rng, &subject);
        let fair = b.rng.gen_range(1_000..=9_000);
        let date = b.random_date();
        b.add_market(topic, date, vec![q], &[fair], false);
    }
    for _ in 0..cfg.negrisk_markets {
        let topic = *Topic::ALL.choose(&mut b.rng).unwrap();
        let n = b.rng.gen_range(cfg.min_conditions..=cfg.max_conditions);
        let fairs = negrisk_fairs(&mut b.rng, n);
        let mut names = NAMES.to_vec();
        names.shuffle(&mut b.rng);
        let qs = names[..n].iter().map(|s| question_for(topic, &mut b.rng, s)).collect();
        let date = b.random_date();
        let perturb = n >= 3 && b.rng.gen_bool(0.3);
        b.add_market(topic, date, qs, &fairs, perturb);
    }

    // Dependent pairs: a winner market and a margin market on the same race.
    let election = NaiveDate::from_ymd_opt(2024, 11, 5).unwrap();
    let mut pairs = Vec::new();
    let mut oracle_fixtures = Vec::new();
    for k in 0..cfg.dependent_pairs {
        let (x, y) = (NAMES[(2 * k) % NAMES.len()], NAMES[(2 * k + 1) % NAMES.len()]);
        let winner = b.add_market(
            Topic::Politics,
            election,
            vec![
                format!("Will {x} win the state {k} presidential election?"),
                format!("Will {y} win the state {k} presidential election?"),
            ],
            &[5_000, 5_000],
            false,
        );
        let margin = b.add_market(
            Topic::Politics,
            election,
            vec![
                format!("Will {x} win the state {k} election by 5 points or more?"),
                format!("Will {x} win the state {k} election by less than 5 points?"),
                format!("Will {y} win the state {k} election?"),
            ],
            &[3_000, 2_000, 5_000],
            false,
        );
        let (ka, kb) = (b.markets[winner].key().to_string(), b.markets[margin].key().to_string());
        let winner_first = ka <= kb;
        let rows: [[u8; 5]; 3] = [[1, 0, 1, 0, 0], [1, 0, 0, 1, 0], [0, 1, 0, 0, 1]];
        let vectors: Vec<Vec<bool>> = rows
            .iter()
            .map(|r| {
                let (w, m) = r.split_at(2);
                let ordered: Vec<u8> = if winner_first { [w, m].concat() } else { [m, w].concat() };
                ordered.into_iter().map(|v| v == 1).collect()
            })
            .collect();
        let body = serde_json::json!({ "valid_combinations": vectors });
        oracle_fixtures.push(OracleFixture {
            pair_id: pair_id(&ka, &kb),
            response: format!(
                "Considering each race outcome in turn.\n```json\n{}\n```\n",
                serde_json::to_string_pretty(&body).unwrap()
            ),
        });
        pairs.push((winner, margin));
    }

    let noise_traders: Vec<String> = (0..cfg.noise_traders).map(|_| hex_id(&mut b.rng, 40)).collect();
    let makers: Vec<String> = (0..cfg.market_makers).map(|_| hex_id(&mut b.rng, 40)).collect();

    let mut script: BTreeMap<u64, Vec<Scripted>> = BTreeMap::new();
    let mut reserved: BTreeMap<u64, HashSet<usize>> = BTreeMap::new();
    let mut manifest = Vec::new();
    let mark = |acct: &str, tok: usize, price: u32| Scripted {
        account: acct.to_string(),
        action: Action::Sell,
        target: tok,
        price,
        units: MARK_UNITS,
    };

    for (i, p) in cfg.plants.iter().enumerate() {
        let g = (p.magnitude * BP as f64).round() as u32;
        let check = |prices: &[i64]| -> Result<(), SynthError> {
            if prices.iter().all(|&x| x >= 1 && x <= MAX_PLANT_PRICE_BP as i64) {
                Ok(())
            } else {
                Err(SynthError::Magnitude(i, p.magnitude))
            }
        };
        let bot = hex_id(&mut b.rng, 40);
        let marker = noise_traders[i % noise_traders.len()].clone();
        let mut acts = Vec::new();
        let mut touched = Vec::new();
        let (market_id, scope_id);
        match p.kind {
            PlantKind::CondRebalanceLong | PlantKind::CondRebalanceShort => {
                let subject = b.subject();
                let q = question_for(Topic::Sports, &mut b.rng, &subject);
                let date = b.random_date();
                let m = b.add_market(Topic::Sports, date, vec![q], &[5_000], false);
                let c = b.smarkets[m].conds[0];
                let (yes, no) = (b.conds[c].yes, b.conds[c].no);
                let half = g / 2;
                if p.kind == PlantKind::CondRebalanceLong {
                    let (py, pn) = (5_000 - half as i64, 5_000 - (g - half) as i64);
                    check(&[py, pn])?;
                    acts.push(Scripted { account: bot.clone(), action: Action::Buy, target: yes, price: py as u32, units: p.units });
                    acts.push(Scripted { account: bot.clone(), action: Action::Buy, target: no, price: pn as u32, units: p.units });
                } else {
                    let (py, pn) = (5_000 + half as i64, 5_000 + (g - half) as i64);
                    check(&[py, pn])?;
                    acts.push(Scripted { account: bot.clone(), action: Action::Split, target: c, price: BP, units: p.units });
                    acts.push(Scripted { account: bot.clone(), action: Action::Sell, target: yes, price: py as u32, units: p.units });
                    acts.push(Scripted { account: bot.clone(), action: Action::Sell, target: no, price: pn as u32, units: p.units });
                }
                touched.extend([yes, no]);
                market_id = b.markets[m].key().to_string();
                scope_id = b.conds[c].id.clone();
            }
            PlantKind::MarketRebalanceLong | PlantKind::MarketRebalanceShort => {
                let fairs = [5_000u32, 3_000, 2_000];
                let qs = ["Harlow", "Mendez", "Okafor"]
                    .iter()
                    .map(|s| format!("Will {s} win the championship final {i}?"))
                    .collect();
                let date = b.random_date();
                let m = b.add_market(Topic::Sports, date, qs, &fairs, false);
                let n = fairs.len() as u32;
                let long = p.kind == PlantKind::MarketRebalanceLong;
                let mut prices = Vec::new();
                for (j, &f) in fairs.iter().enumerate() {
                    let share = g / n + if j == 0 { g % n } else { 0 };
                    prices.push(if long { f as i64 - share as i64 } else { f as i64 + share as i64 });
                }
                check(&prices)?;
                for (j, &c) in b.smarkets[m].conds.clone().iter().enumerate() {
                    let (yes, no) = (b.conds[c].yes, b.conds[c].no);
                    let py = prices[j] as u32;
                    if long {
                        acts.push(Scripted { account: bot.clone(), action: Action::Buy, target: yes, price: py, units: p.units });
                    } else {
                        acts.push(Scripted { account: bot.clone(), action: Action::Split, target: c, price: BP, units: p.units });
                        acts.push(Scripted { account: bot.clone(), action: Action::Sell, target: yes, price: py, units: p.units });
                    }
                    acts.push(mark(&marker, no, BP - py));
                    touched.extend([yes, no]);
                }
                market_id = b.markets[m].key().to_string();
                scope_id = market_id.clone();
            }
            PlantKind::Combinatorial => {
                let (w, mg) = pairs[p.pair.expect("validated")];
                let wc = b.smarkets[w].conds.clone();
                let mc = b.smarkets[mg].conds.clone();
                let (a_yes, a_no) = (b.conds[wc[0]].yes, b.conds[wc[0]].no);
                let (b_yes, b_no) = (b.conds[wc[1]].yes, b.conds[wc[1]].no);
                check(&[5_000 - g as i64, 5_000 + g as i64])?;
                acts.push(Scripted { account: bot.clone(), action: Action::Buy, target: a_yes, price: 5_000 - g, units: p.units });
                acts.push(Scripted { account: bot.clone(), action: Action::Buy, target: b.conds[mc[2]].yes, price: 5_000, units: p.units });
                acts.push(mark(&marker, b_yes, 5_000 + g));
                acts.push(mark(&marker, a_no, 5_000 + g));
                acts.push(mark(&marker, b_no, 5_000 - g));
                for &c in &mc {
                    let (yes, no) = (b.conds[c].yes, b.conds[c].no);
                    if c != mc[2] {
                        acts.push(mark(&marker, yes, b.toks[yes].fair));
                    }
                    acts.push(mark(&marker, no, b.toks[no].fair));
                }
                touched.extend([a_yes, a_no, b_yes, b_no]);
                for &c in &mc {
                    touched.extend([b.conds[c].yes, b.conds[c].no]);
                }
                market_id = pair_id(b.markets[w].key(), b.markets[mg].key());
                scope_id = format!("{market_id}:0");
            }
        }
        let restore: Vec<Scripted> = touched.iter().map(|&t| mark(&marker, t, b.toks[t].fair)).collect();
        script.entry(p.block).or_default().extend(acts);
        script.entry(p.block + 1).or_default().extend(restore);
        reserved.entry(p.block).or_default().extend(touched.iter().copied());
        reserved.entry(p.block + 1).or_default().extend(touched.iter().copied());
        manifest.push(PlantedEpisode {
            kind: p.kind,
            block: p.block,
            market_id,
            magnitude_usd: g as f64 / BP as f64,
            account: bot,
            scope_id,
            units: p.units,
            profit_usd: p.units as f64 * g as f64 / BP as f64,
        });
    }

    let zipf = b
        .smarkets
        .iter()
        .map(|m| {
            let s = cfg.zipf_exponent.unwrap_or(0.0);
            (1..=m.conds.len()).map(|r| 1.0 / (r as f64).powf(s)).collect()
        })
        .collect();

    Ok(SynthRun {
        config: cfg.clone(),
        seed,
        markets: b.markets,
        descriptors: b.descriptors,
        manifest,
        oracle_fixtures,
        toks: b.toks,
        conds: b.conds,
        smarkets: b.smarkets,
        zipf,
        noise_traders,
        makers,
        script,
        reserved,
    })
}

impl SynthRun {
    /// Lazily generated event log, in `(block, tx_index)` order.
    pub fn events(&self) -> SynthEvents<'_> {
        SynthEvents {
            run: self,
            rng: ChaCha8Rng::seed_from_u64(self.seed ^ 0x5EED_E7E7_0000_0001),
            block: self.config.start_block,
            end: self.config.start_block + self.config.blocks,
            buf: VecDeque::new(),
        }
    }

    /// Noise fills requested per block times blocks, plus scripted fills.
    pub fn approx_event_count(&self) -> u64 {
        self.config.blocks * self.config.fills_per_block as u64 + self.toks.len() as u64 + self.conds.len() as u64
    }
}

pub struct SynthEvents<'a> {
    run: &'a SynthRun,
    rng: ChaCha8Rng,
    block: u64,
    end: u64,
    buf: VecDeque<TradeEvent>,
}

impl SynthEvents<'_> {
    fn emit(&mut self, account: &str, counterparty: &str, action: Action, target: usize, price: u32, units: u32) {
        let tx_index = self.buf.len() as u32;
        let usdc = (units as u64 * price as u64) as f64 / BP as f64;
        let ev = match action {
            Action::Split => TradeEvent {
                block: self.block,
                tx_index,
                kind: EventKind::PositionSplit,
                account: account.to_string(),
                counterparty: EXCHANGE.to_string(),
                token: String::new(),
                condition_id: self.run.conds[target].id.clone(),
                usdc: units as f64,
                tokens: units as f64,
                side: Side::NA,
            },
            Action::Buy | Action::Sell => TradeEvent {
                block: self.block,
                tx_index,
                kind: EventKind::OrderFilled,
                account: account.to_string(),
                counterparty: counterparty.to_string(),
                token: self.run.toks[target].id.clone(),
                condition_id: String::new(),
                usdc,
                tokens: units as f64,
                side: if action == Action::Buy { Side::Buy } else { Side::Sell },
            },
        };
        self.buf.push_back(ev);
    }

    fn maker(&mut self) -> String {
        self.run.makers.choose(&mut self.rng).unwrap().clone()
    }

    fn pick_token(&mut self, reserved: Option<&HashSet<usize>>) -> Option<usize> {
        let run = self.run;
        for _ in 0..64 {
            let m = self.rng.gen_range(0..run.smarkets.len());
            let weights = &run.zipf[m];
            let total: f64 = weights.iter().sum();
            let mut x = self.rng.gen_range(0.0..total);
            let mut ci = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if x < *w {
                    ci = i;
                    break;
                }
                x -= w;
            }
            let c = &run.conds[run.smarkets[m].conds[ci]];
            let t = if self.rng.gen_bool(0.5) { c.yes } else { c.no };
            if reserved.is_none_or(|r| !r.contains(&t)) {
                return Some(t);
            }
        }
        None
    }

    fn fill_block(&mut self) {
        let run = self.run;
        let cfg = &run.config;
        let start = cfg.start_block;
        if self.block == start {
            for c in 0..run.conds.len() {
                for mk in 0..run.makers.len() {
                    let acct = run.makers[mk].clone();
                    self.emit(&acct, EXCHANGE, Action::Split, c, BP, cfg.maker_supply);
                }
            }
            return;
        }
        if self.block == start + 1 {
            for t in 0..run.toks.len() {
                let acct = run.noise_traders.choose(&mut self.rng).unwrap().clone();
                let mk = self.maker();
                self.emit(&acct, &mk, Action::Sell, t, run.toks[t].fair, MARK_UNITS);
            }
            return;
        }
        if let Some(acts) = run.script.get(&self.block) {
            for a in acts {
                let mk = self.maker();
                self.emit(&a.account, &mk, a.action, a.target, a.price, a.units);
            }
        }
        let reserved = run.reserved.get(&self.block);
        let spread_bp = (cfg.max_spread * BP as f64).round() as u32;
        for _ in 0..cfg.fills_per_block {
            let Some(t) = self.pick_token(reserved) else { continue };
            let buy = self.rng.gen_bool(0.5);
            let s = self.rng.gen_range(0..=spread_bp);
            let fair = run.toks[t].fair;
            let price = if buy { (fair + s).min(BP - 1) } else { fair.saturating_sub(s).max(1) };
            let units = self.rng.gen_range(cfg.min_units..=cfg.max_units);
            let acct = run.noise_traders.choose(&mut self.rng).unwrap().clone();
            let mk = self.maker();
            let action = if buy { Action::Buy } else { Action::Sell };
            self.emit(&acct, &mk, action, t, price, units);
        }
    }
}

impl Iterator for SynthEvents<'_> {
    type Item = TradeEvent;

    fn next(&mut self) -> Option<TradeEvent> {
        while self.buf.is_empty() {
            if self.block >= self.end {
                return None;
            }
            self.fill_block();
            self.block += 1;
        }
        self.buf.pop_front()
    }
}
