//! Block-indexed VWAP price series.
//!
//! Each token's fills are bucketed into fixed windows of blocks and averaged
//! by token amount. Between trades the last price is carried forward for a
//! bounded number of blocks, after which the token is worth 0. Before a
//! token's first trade there is no price at all, which is different from 0.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EventKind, TradeEvent};

pub const DEFAULT_WINDOW: u64 = 1;
pub const DEFAULT_CARRY_LIMIT: u64 = 5_000;
pub const DEFAULT_DETERMINED_THRESHOLD: f64 = 0.95;

/// Unit prices above 1 by more than this are rejected as bad data.
const PRICE_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("window must be at least one block")]
    ZeroWindow,
    #[error("fill for token {found} in series for {expected}")]
    TokenMismatch { expected: String, found: String },
    #[error("fills out of order at block {0}")]
    Unsorted(u64),
    #[error("prices file line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    /// First block of the bucket.
    pub block: u64,
    pub vwap: f64,
    /// Tokens traded in the bucket.
    pub volume: f64,
}

/// Price of a token at a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quote {
    /// Before the first trade.
    NoPrice,
    /// Carried too long; the token is treated as worthless.
    Expired,
    Price(f64),
}

impl Quote {
    /// `None` for no price yet; expired quotes read as 0.
    pub fn value(self) -> Option<f64> {
        match self {
            Quote::NoPrice => None,
            Quote::Expired => Some(0.0),
            Quote::Price(p) => Some(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub token: String,
    points: Vec<PricePoint>,
    window: u64,
    carry_limit: u64,
    /// Fills dropped because they moved no tokens or priced above 1.
    pub skipped: u64,
}

impl PriceSeries {
    pub fn from_points(token: impl Into<String>, points: Vec<PricePoint>, window: u64, carry_limit: u64) -> Self {
        PriceSeries {
            token: token.into(),
            points,
            window: window.max(1),
            carry_limit,
            skipped: 0,
        }
    }

    pub fn points(&self) -> &[PricePoint] {
        &self.points
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn carry_limit(&self) -> u64 {
        self.carry_limit
    }

    pub fn with_carry_limit(mut self, carry_limit: u64) -> Self {
        self.carry_limit = carry_limit;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_block(&self) -> Option<u64> {
        self.points.first().map(|p| p.block)
    }

    /// Last block at which point `idx` is still quoted.
    fn valid_until(&self, idx: usize) -> u64 {
        self.points[idx]
            .block
            .saturating_add(self.window - 1)
            .saturating_add(self.carry_limit)
    }

    /// Last block with a live (non-expired) quote.
    pub fn last_quoted_block(&self) -> Option<u64> {
        (!self.points.is_empty()).then(|| self.valid_until(self.points.len() - 1))
    }

    /// Index of the last point at or before `block`.
    fn active_index(&self, block: u64) -> Option<usize> {
        self.points.partition_point(|p| p.block <= block).checked_sub(1)
    }

    pub fn quote(&self, block: u64) -> Quote {
        match self.active_index(block) {
            None => Quote::NoPrice,
            Some(i) if block <= self.valid_until(i) => Quote::Price(self.points[i].vwap),
            Some(_) => Quote::Expired,
        }
    }

    /// First block after `block` at which the quote may change, if any.
    pub fn next_change_after(&self, block: u64) -> Option<u64> {
        let next_point = self.points.get(self.points.partition_point(|p| p.block <= block)).map(|p| p.block);
        let expiry = self
            .active_index(block)
            .map(|i| self.valid_until(i))
            .filter(|&v| v >= block)
            .map(|v| v.saturating_add(1));
        match (next_point, expiry) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Bucket {
    start: u64,
    usdc: f64,
    tokens: f64,
}

/// Accumulates one token's fills into bucketed points.
#[derive(Debug, Clone)]
struct SeriesBuilder {
    points: Vec<PricePoint>,
    open: Option<Bucket>,
    skipped: u64,
    last_block: u64,
}

impl SeriesBuilder {
    fn new() -> Self {
        SeriesBuilder {
            points: Vec::new(),
            open: None,
            skipped: 0,
            last_block: 0,
        }
    }

    fn push(&mut self, block: u64, usdc: f64, tokens: f64, window: u64, origin: u64) -> Result<(), PricingError> {
        if block < self.last_block {
            return Err(PricingError::Unsorted(block));
        }
        self.last_block = block;
        if tokens <= 0.0 || usdc > tokens * (1.0 + PRICE_SLACK) || !usdc.is_finite() {
            self.skipped += 1;
            return Ok(());
        }
        let start = origin + (block.saturating_sub(origin) / window) * window;
        match &mut self.open {
            Some(b) if b.start == start => {
                b.usdc += usdc;
                b.tokens += tokens;
            }
            _ => {
                self.flush();
                self.open = Some(Bucket { start, usdc, tokens });
            }
        }
        Ok(())
    }

    fn flush(&mut self) {
        if let Some(b) = self.open.take() {
            self.points.push(PricePoint {
                block: b.start,
                vwap: (b.usdc / b.tokens).clamp(0.0, 1.0),
                volume: b.tokens,
            });
        }
    }

    fn finish(mut self, token: String, window: u64, carry_limit: u64) -> PriceSeries {
        self.flush();
        PriceSeries {
            token,
            points: self.points,
            window,
            carry_limit,
            skipped: self.skipped,
        }
    }
}

/// Builds one token's series. Buckets start at the first fill's block.
pub fn vwap_series<'a>(
    token: &str,
    fills: impl IntoIterator<Item = &'a TradeEvent>,
    window: u64,
    carry_limit: u64,
) -> Result<PriceSeries, PricingError> {
    if window == 0 {
        return Err(PricingError::ZeroWindow);
    }
    let mut builder = SeriesBuilder::new();
    let mut origin = None;
    for e in fills {
        if !e.is_fill() {
            continue;
        }
        if e.token != token {
            return Err(PricingError::TokenMismatch {
                expected: token.to_string(),
                found: e.token.clone(),
            });
        }
        let o = *origin.get_or_insert(e.block);
        builder.push(e.block, e.usdc, e.tokens, window, o)?;
    }
    Ok(builder.finish(token.to_string(), window, carry_limit))
}

/// Blocks excluded from detection, as sorted disjoint inclusive ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockMask {
    ranges: Vec<(u64, u64)>,
}

impl BlockMask {
    fn push(&mut self, start: u64, end: u64) {
        match self.ranges.last_mut() {
            Some(last) if last.1 + 1 >= start => last.1 = last.1.max(end),
            _ => self.ranges.push((start, end)),
        }
    }

    pub fn contains(&self, block: u64) -> bool {
        let i = self.ranges.partition_point(|r| r.1 < block);
        self.ranges.get(i).is_some_and(|r| r.0 <= block)
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn block_count(&self) -> u64 {
        self.ranges.iter().map(|r| r.1 - r.0 + 1).sum()
    }
}

/// A maximal run of blocks over which every series' quote is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: u64,
    /// Inclusive.
    pub end: u64,
    pub quotes: Vec<Quote>,
}

/// Walks the union of change points of several series, from the earliest
/// first trade to the last block any of them is still quoted.
pub struct Segments<'a> {
    series: &'a [&'a PriceSeries],
    cursor: Option<u64>,
    horizon: u64,
}

pub fn segments<'a>(series: &'a [&'a PriceSeries]) -> Segments<'a> {
    let cursor = series.iter().filter_map(|s| s.first_block()).min();
    let horizon = series.iter().filter_map(|s| s.last_quoted_block()).max().unwrap_or(0);
    Segments { series, cursor, horizon }
}

impl Iterator for Segments<'_> {
    type Item = Segment;

    fn next(&mut self) -> Option<Segment> {
        let start = self.cursor?;
        if start > self.horizon {
            self.cursor = None;
            return None;
        }
        let quotes = self.series.iter().map(|s| s.quote(start)).collect();
        let next = self
            .series
            .iter()
            .filter_map(|s| s.next_change_after(start))
            .min();
        let end = match next {
            Some(n) => (n - 1).min(self.horizon),
            None => self.horizon,
        };
        self.cursor = next.filter(|&n| n <= self.horizon);
        Some(Segment { start, end, quotes })
    }
}

/// Blocks where some YES price strictly exceeds `threshold`.
pub fn determined_mask(yes_series: &[&PriceSeries], threshold: f64) -> BlockMask {
    let mut mask = BlockMask::default();
    for seg in segments(yes_series) {
        if seg
            .quotes
            .iter()
            .any(|q| matches!(q, Quote::Price(p) if *p > threshold))
        {
            mask.push(seg.start, seg.end);
        }
    }
    mask
}

/// Outstanding token supply per condition: cumulative splits minus merges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupplyBook {
    steps: HashMap<String, Vec<(u64, f64)>>,
}

impl SupplyBook {
    pub fn push(&mut self, e: &TradeEvent) {
        let delta = match e.kind {
            EventKind::PositionSplit => e.tokens,
            EventKind::PositionsMerge => -e.tokens,
            EventKind::OrderFilled => return,
        };
        let steps = self.steps.entry(e.condition_id.clone()).or_default();
        let prev = steps.last().map_or(0.0, |s| s.1);
        let next = (prev + delta).max(0.0);
        match steps.last_mut() {
            Some(last) if last.0 == e.block => last.1 = next,
            _ => steps.push((e.block, next)),
        }
    }

    /// Supply of either token of `condition_id` as of `block`.
    pub fn at(&self, condition_id: &str, block: u64) -> f64 {
        self.steps.get(condition_id).map_or(0.0, |steps| {
            let i = steps.partition_point(|s| s.0 <= block);
            if i == 0 {
                0.0
            } else {
                steps[i - 1].1
            }
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PricingError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["condition_id", "block", "supply"])?;
        let sorted: BTreeMap<&String, &Vec<(u64, f64)>> = self.steps.iter().collect();
        for (cond, steps) in sorted {
            for (b, s) in steps.iter() {
                w.write_record([cond.as_str(), &b.to_string(), &s.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, PricingError> {
        let mut r = csv::Reader::from_reader(input);
        let mut book = SupplyBook::default();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |message: String| PricingError::Malformed {
                line: i as u64 + 2,
                message,
            };
            let block = rec[1].parse::<u64>().map_err(|e| bad(e.to_string()))?;
            let supply = rec[2].parse::<f64>().map_err(|e| bad(e.to_string()))?;
            book.steps.entry(rec[0].to_string()).or_default().push((block, supply));
        }
        Ok(book)
    }
}

/// Every token's series plus supply, built in one pass over the event log.
#[derive(Debug, Clone)]
pub struct PriceBook {
    pub series: HashMap<String, PriceSeries>,
    pub supply: SupplyBook,
    pub window: u64,
    pub carry_limit: u64,
    /// Last block of the source log; detection stops here.
    pub last_block: Option<u64>,
}

pub struct PriceBookBuilder {
    builders: HashMap<String, SeriesBuilder>,
    supply: SupplyBook,
    window: u64,
    carry_limit: u64,
    origin: Option<u64>,
    events: u64,
    last_block: Option<u64>,
}

impl PriceBookBuilder {
    /// Buckets align to `origin`, or to the first event seen when `None`.
    pub fn new(window: u64, carry_limit: u64, origin: Option<u64>) -> Result<Self, PricingError> {
        if window == 0 {
            return Err(PricingError::ZeroWindow);
        }
        Ok(PriceBookBuilder {
            builders: HashMap::new(),
            supply: SupplyBook::default(),
            window,
            carry_limit,
            origin,
            events: 0,
            last_block: None,
        })
    }

    pub fn push(&mut self, e: &TradeEvent) -> Result<(), PricingError> {
        self.events += 1;
        self.last_block = Some(self.last_block.map_or(e.block, |b| b.max(e.block)));
        let origin = *self.origin.get_or_insert(e.block);
        if e.is_fill() {
            let b = match self.builders.get_mut(&e.token) {
                Some(b) => b,
                None => self.builders.entry(e.token.clone()).or_insert_with(SeriesBuilder::new),
            };
            b.push(e.block, e.usdc, e.tokens, self.window, origin)
        } else {
            self.supply.push(e);
            Ok(())
        }
    }

    pub fn events_seen(&self) -> u64 {
        self.events
    }

    pub fn finish(self) -> PriceBook {
        let (window, carry) = (self.window, self.carry_limit);
        let series = self
            .builders
            .into_par_iter()
            .map(|(token, b)| {
                let s = b.finish(token.clone(), window, carry);
                (token, s)
            })
            .collect();
        PriceBook {
            series,
            supply: self.supply,
            window,
            carry_limit: carry,
            last_block: self.last_block,
        }
    }
}

impl PriceBook {
    pub fn get(&self, token: &str) -> Option<&PriceSeries> {
        self.series.get(token)
    }

    pub fn point_count(&self) -> usize {
        self.series.values().map(|s| s.points.len()).sum()
    }

    /// Series dump, `token,block,vwap,volume`, sorted by token then block.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PricingError> {
        let mut w = csv::WriterBuilder::new().buffer_capacity(1 << 20).from_writer(out);
        w.write_record(["token", "block", "vwap", "volume"])?;
        let mut tokens: Vec<&String> = self.series.keys().collect();
        tokens.sort();
        for t in tokens {
            for p in &self.series[t].points {
                w.write_record([t.as_str(), &p.block.to_string(), &p.vwap.to_string(), &p.volume.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, window: u64, carry_limit: u64) -> Result<Self, PricingError> {
        let mut r = csv::ReaderBuilder::new().buffer_capacity(1 << 20).from_reader(input);
        let mut points: HashMap<String, Vec<PricePoint>> = HashMap::new();
        let mut rec = csv::StringRecord::new();
        let mut line = 1u64;
        while r.read_record(&mut rec)? {
            line += 1;
            let bad = |message: String| PricingError::Malformed { line, message };
            if rec.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", rec.len())));
            }
            let p = PricePoint {
                block: rec[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                vwap: rec[2].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                volume: rec[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            };
            let v = match points.get_mut(&rec[0]) {
                Some(v) => v,
                None => points.entry(rec[0].to_string()).or_default(),
            };
            if v.last().is_some_and(|last| last.block >= p.block) {
                return Err(bad("blocks not increasing".into()));
            }
            v.push(p);
        }
        let series = points
            .into_iter()
            .map(|(t, pts)| {
                let s = PriceSeries::from_points(t.clone(), pts, window, carry_limit);
                (t, s)
            })
            .collect();
        Ok(PriceBook {
            series,
            supply: SupplyBook::default(),
            window,
            carry_limit,
            last_block: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Side;

    fn fill(block: u64, usdc: f64, tokens: f64) -> TradeEvent {
        TradeEvent {
            block,
            tx_index: 0,
            kind: EventKind::OrderFilled,
            account: "a".into(),
            counterparty: "b".into(),
            token: "t".into(),
            condition_id: String::new(),
            usdc,
            tokens,
            side: Side::Buy,
        }
    }

    #[test]
    fn one_block_vwap() {
        let s = vwap_series("t", &[fill(10, 5.0, 10.0), fill(10, 21.0, 30.0)], 1, 5000).unwrap();
        assert_eq!(s.points().len(), 1);
        assert!((s.points()[0].vwap - 0.65).abs() < 1e-12);
        assert_eq!(s.points()[0].volume, 40.0);
    }

    #[test]
    fn carry_boundary_inclusive() {
        let s = vwap_series("t", &[fill(100, 5.0, 10.0)], 1, 5000).unwrap();
        assert_eq!(s.quote(99), Quote::NoPrice);
        assert_eq!(s.quote(100 + 5000), Quote::Price(0.5));
        assert_eq!(s.quote(100 + 5001), Quote::Expired);
        assert_eq!(s.quote(100 + 5001).value(), Some(0.0));
        assert_eq!(Quote::NoPrice.value(), None);
    }

    #[test]
    fn zero_token_fill_skipped() {
        let s = vwap_series("t", &[fill(1, 0.0, 0.0), fill(2, 1.0, 2.0)], 1, 10).unwrap();
        assert_eq!(s.skipped, 1);
        assert_eq!(s.points().len(), 1);
    }

    #[test]
    fn rejects_mismatched_token_and_zero_window() {
        let mut other = fill(1, 1.0, 2.0);
        other.token = "u".into();
        assert!(matches!(vwap_series("t", &[other], 1, 10), Err(PricingError::TokenMismatch { .. })));
        assert!(matches!(vwap_series("t", &[], 0, 10), Err(PricingError::ZeroWindow)));
        assert!(matches!(
            vwap_series("t", &[fill(5, 1.0, 2.0), fill(4, 1.0, 2.0)], 1, 10),
            Err(PricingError::Unsorted(4))
        ));
    }

    #[test]
    fn window_buckets_align_to_first_block() {
        let fills = [fill(7, 1.0, 2.0), fill(16, 3.0, 4.0), fill(17, 1.0, 4.0)];
        let s = vwap_series("t", &fills, 10, 0).unwrap();
        let blocks: Vec<u64> = s.points().iter().map(|p| p.block).collect();
        assert_eq!(blocks, [7, 17]);
        assert!((s.points()[0].vwap - 4.0 / 6.0).abs() < 1e-12);
        // a bucket is quoted through its last block when carry is 0
        assert_eq!(s.quote(16), Quote::Price(s.points()[0].vwap));
        assert_eq!(s.quote(27), Quote::Expired);
    }

    #[test]
    fn mask_is_strict() {
        let a = vwap_series("t", &[fill(1, 0.95, 1.0)], 1, 10).unwrap();
        assert!(determined_mask(&[&a], 0.95).is_empty());
        let b = vwap_series("t", &[fill(1, 0.5, 1.0), fill(5, 0.96, 1.0), fill(8, 0.5, 1.0)], 1, 10).unwrap();
        let m = determined_mask(&[&a, &b], 0.95);
        assert_eq!(m.ranges(), &[(5, 7)]);
        assert!(m.contains(5) && m.contains(7) && !m.contains(8) && !m.contains(4));
    }

    #[test]
    fn segments_cover_range() {
        let a = vwap_series("t", &[fill(1, 0.5, 1.0), fill(4, 0.6, 1.0)], 1, 2).unwrap();
        let mut b = vwap_series("t", &[fill(3, 0.2, 1.0)], 1, 2).unwrap();
        b.token = "u".into();
        let segs: Vec<Segment> = segments(&[&a, &b]).collect();
        let spans: Vec<(u64, u64)> = segs.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, [(1, 2), (3, 3), (4, 5), (6, 6)]);
        assert_eq!(segs[0].quotes, [Quote::Price(0.5), Quote::NoPrice]);
        assert_eq!(segs[3].quotes, [Quote::Price(0.6), Quote::Expired]);
    }

    #[test]
    fn supply_tracks_splits_and_merges() {
        let mut book = SupplyBook::default();
        let mut split = fill(5, 10.0, 10.0);
        split.kind = EventKind::PositionSplit;
        split.condition_id = "c".into();
        book.push(&split);
        let mut merge = split.clone();
        merge.kind = EventKind::PositionsMerge;
        merge.block = 9;
        merge.tokens = 4.0;
        book.push(&merge);
        assert_eq!(book.at("c", 4), 0.0);
        assert_eq!(book.at("c", 5), 10.0);
        assert_eq!(book.at("c", 9), 6.0);
        let mut buf = Vec::new();
        book.write_csv(&mut buf).unwrap();
        assert_eq!(SupplyBook::read_csv(buf.as_slice()).unwrap(), book);
    }

    #[test]
    fn book_csv_round_trip() {
        let mut b = PriceBookBuilder::new(1, 50, None).unwrap();
        for e in [fill(1, 0.5, 1.0), fill(2, 0.75, 1.5)] {
            b.push(&e).unwrap();
        }
        let book = b.finish();
        let mut buf = Vec::new();
        book.write_csv(&mut buf).unwrap();
        let back = PriceBook::read_csv(buf.as_slice(), 1, 50).unwrap();
        assert_eq!(back.series["t"].points(), book.series["t"].points());
    }
}
