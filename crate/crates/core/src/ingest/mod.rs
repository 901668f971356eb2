//! Trade-event and market-descriptor ingestion.
//!
//! Events arrive as an exported log (CSV or line-delimited JSON) holding the
//! three conditional-token events we care about: order fills, position splits
//! and position merges. Parsing is streaming; nothing is buffered beyond the
//! current record.

mod descriptors;
mod events;
pub mod synth;

pub use descriptors::{
    assemble_markets, canonical_end_date, canonical_end_date_of, parse_descriptors, parse_end_date,
    write_descriptors, DescriptorError, MarketDescriptor, TokenDescriptor,
};
pub use events::{
    filter_bids, parse_event_log, write_events_csv, EventFormat, EventReader, EventWriter, ParseError, ParseMode,
    EVENT_CSV_HEADER,
};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::market_model::Market;

/// Default dust threshold for attribution bids, in USDC (inclusive).
pub const DEFAULT_MIN_BID_USDC: f64 = 2.0;

/// Counterparty recorded when the exchange contract mints or burns.
pub const EXCHANGE: &str = "EXCHANGE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    OrderFilled,
    PositionSplit,
    PositionsMerge,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::OrderFilled => "OrderFilled",
            EventKind::PositionSplit => "PositionSplit",
            EventKind::PositionsMerge => "PositionsMerge",
        }
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OrderFilled" => Ok(EventKind::OrderFilled),
            "PositionSplit" => Ok(EventKind::PositionSplit),
            "PositionsMerge" => Ok(EventKind::PositionsMerge),
            other => Err(format!("unknown event kind {other:?}")),
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trade direction from the recording account's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
    #[serde(rename = "NA")]
    NA,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "Buy",
            Side::Sell => "Sell",
            Side::NA => "NA",
        }
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Buy" => Ok(Side::Buy),
            "Sell" => Ok(Side::Sell),
            "NA" | "" => Ok(Side::NA),
            other => Err(format!("unknown side {other:?}")),
        }
    }
}

/// One normalized on-chain record. Fills belong to `account`; the
/// counterparty is informational.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeEvent {
    pub block: u64,
    pub tx_index: u32,
    pub kind: EventKind,
    pub account: String,
    pub counterparty: String,
    #[serde(default)]
    pub token: String,
    #[serde(default)]
    pub condition_id: String,
    pub usdc: f64,
    pub tokens: f64,
    pub side: Side,
}

impl TradeEvent {
    pub fn is_fill(&self) -> bool {
        self.kind == EventKind::OrderFilled
    }

    /// Unit price of a fill; `None` when no tokens changed hands.
    pub fn unit_price(&self) -> Option<f64> {
        (self.tokens > 0.0).then(|| self.usdc / self.tokens)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("usdc", self.usdc), ("tokens", self.tokens)] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.account.is_empty() {
            return Err("account is empty".into());
        }
        match self.kind {
            EventKind::OrderFilled => {
                if self.token.is_empty() {
                    return Err("OrderFilled requires a token".into());
                }
                if self.side == Side::NA {
                    return Err("OrderFilled requires side Buy or Sell".into());
                }
            }
            EventKind::PositionSplit | EventKind::PositionsMerge => {
                if self.condition_id.is_empty() {
                    return Err(format!("{} requires a condition_id", self.kind));
                }
                if self.side != Side::NA {
                    return Err(format!("{} must have side NA", self.kind));
                }
            }
        }
        Ok(())
    }
}

/// Which side of a condition a token pays on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRef {
    pub condition_id: String,
    pub outcome: Outcome,
    /// Key of the market the condition belongs to.
    pub market: String,
}

/// token id → (condition, side, market) lookup built from assembled markets.
#[derive(Debug, Clone, Default)]
pub struct TokenIndex {
    tokens: HashMap<String, TokenRef>,
    conditions: HashMap<String, String>,
}

impl TokenIndex {
    pub fn new(markets: &[Market]) -> Self {
        let mut tokens = HashMap::new();
        let mut conditions = HashMap::new();
        for m in markets {
            for c in &m.conditions {
                conditions.insert(c.condition_id.clone(), m.key().to_string());
                for (tok, outcome) in [(&c.yes_token, Outcome::Yes), (&c.no_token, Outcome::No)] {
                    tokens.insert(
                        tok.clone(),
                        TokenRef {
                            condition_id: c.condition_id.clone(),
                            outcome,
                            market: m.key().to_string(),
                        },
                    );
                }
            }
        }
        TokenIndex { tokens, conditions }
    }

    pub fn get(&self, token: &str) -> Option<&TokenRef> {
        self.tokens.get(token)
    }

    pub fn market_of_condition(&self, condition_id: &str) -> Option<&str> {
        self.conditions.get(condition_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Combined YES+NO fill notional per condition, in USDC.
pub fn volume_by_condition<'a>(
    events: impl IntoIterator<Item = &'a TradeEvent>,
    index: &TokenIndex,
) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    for e in events {
        if !e.is_fill() {
            continue;
        }
        if let Some(r) = index.get(&e.token) {
            *out.entry(r.condition_id.clone()).or_insert(0.0) += e.usdc;
        }
    }
    out
}
