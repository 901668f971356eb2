//! One function per subcommand. Each reads upstream artifacts from the output
//! directory, writes its own files atomically and finishes with a manifest.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use arbscan_core::attribution::{self, attribute, AttributionRow, LeaderRow};
use arbscan_core::dependency::{
    self, assign_topics, candidate_pairs, CertifiedPair, DiscoveryRecord, Embedder, HttpEmbedder, HttpOracle,
    KeywordEmbedder, Oracle, ReplayOracle, TopicAssignment, Verdict,
};
use arbscan_core::detect::{self, detect_all, OpportunityKind};
use arbscan_core::ingest::synth::{generate_synthetic, OracleFixture, SynthConfig};
use arbscan_core::ingest::{
    assemble_markets, filter_bids, parse_descriptors, parse_event_log, write_descriptors, EventFormat, EventWriter,
    ParseMode, TokenIndex, TradeEvent,
};
use arbscan_core::market_model::{liquidity_profile, Market};
use arbscan_core::pricing::{PriceBook, PriceBookBuilder, SupplyBook};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::RunConfig;

pub type Env<'a> = &'a dyn Fn(&str) -> Option<String>;

/// What a stage reports back to the operator.
pub struct Outcome {
    pub summary: String,
    /// Set when results were persisted but some work failed.
    pub partial: bool,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Outcome { summary, partial: false }
    }
}

fn write_jsonl<T: Serialize>(out: &mut impl Write, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, &item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in bytes.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", what.display(), i + 1))?);
    }
    Ok(out)
}

fn input_path<'a>(p: &'a Option<std::path::PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = p.as_deref().ok_or_else(|| anyhow!("no {flag} given: pass --{flag} or set paths.{flag} in the config"))?;
    if !p.is_file() {
        bail!("{flag} file {} does not exist", p.display());
    }
    Ok(p)
}

fn load_markets(stage: &mut Stage) -> Result<Vec<Market>> {
    let p = stage.require(MARKETS)?;
    let bytes = stage.read_input(&p)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
}

/// Applies stored topics; markets whose topic is not in the configured list
/// are left without one.
fn apply_topics(stage: &mut Stage, cfg: &RunConfig, markets: &mut [Market]) -> Result<()> {
    let p = stage.require(TOPICS)?;
    let bytes = stage.read_input(&p)?;
    let topics: HashMap<String, _> = read_jsonl::<TopicAssignment>(&bytes, &p)?
        .into_iter()
        .map(|t| (t.market_id, t.topic))
        .collect();
    for m in markets.iter_mut() {
        m.topic = topics.get(m.key()).copied().filter(|t| cfg.topics.contains(t));
    }
    Ok(())
}

fn load_certified(stage: &mut Stage) -> Result<Vec<CertifiedPair>> {
    match stage.optional(CERTIFIED) {
        Some(p) => {
            let bytes = stage.read_input(&p)?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
        }
        None => {
            eprintln!("note: no {CERTIFIED}; combinatorial scopes are skipped (run `arbscan discover` to include them)");
            Ok(Vec::new())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PricesMeta {
    window: u64,
    carry_limit: u64,
    last_block: Option<u64>,
    events: u64,
}

fn load_book(stage: &mut Stage, cfg: &RunConfig) -> Result<PriceBook> {
    let meta_path = stage.require(PRICES_META)?;
    let prices_path = stage.require(PRICES)?;
    let supply_path = stage.require(SUPPLY)?;
    let meta: PricesMeta = serde_json::from_slice(&stage.read_input(&meta_path)?)?;
    if meta.window != cfg.detect.window {
        bail!(
            "{PRICES} was built with a {}-block window but {} is configured: rerun `arbscan prices --window {}`",
            meta.window,
            cfg.detect.window,
            cfg.detect.window
        );
    }
    let mut r = stage.open_input(&prices_path)?;
    // Carry-forward is applied at read time, so it can change without re-pricing.
    let mut book = PriceBook::read_csv(&mut r, meta.window, cfg.carry_limit)?;
    stage.close_input(r, &prices_path)?;
    let mut r = stage.open_input(&supply_path)?;
    book.supply = SupplyBook::read_csv(&mut r)?;
    stage.close_input(r, &supply_path)?;
    book.last_block = meta.last_block;
    Ok(book)
}

/// Streams normalized events, stopping at the first malformed line.
fn for_each_event(stage: &mut Stage, mut f: impl FnMut(TradeEvent) -> Result<()>) -> Result<u64> {
    let p = stage.require(EVENTS)?;
    let mut r = stage.open_input(&p)?;
    let mut n = 0;
    for e in parse_event_log(&mut r, EventFormat::Csv, ParseMode::Strict) {
        f(e.with_context(|| format!("reading {}", p.display()))?)?;
        n += 1;
    }
    stage.close_input(r, &p)?;
    Ok(n)
}

pub fn ingest(cfg: &RunConfig, env: Env) -> Result<Outcome> {
    let mut stage = Stage::begin("ingest", cfg, env)?;
    let desc_path = input_path(&cfg.paths.descriptors, "descriptors")?;
    let events_path = input_path(&cfg.paths.events, "events")?;

    let bytes = stage.read_input(desc_path)?;
    let descriptors = parse_descriptors(&bytes[..])?;
    let index = TokenIndex::new(&assemble_markets(&descriptors, &HashMap::new())?);

    let mode = if cfg.lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let mut reader = stage.open_input(events_path)?;
    let mut out = EventWriter::new(stage.create(EVENTS)?)?;
    let mut volumes: HashMap<String, f64> = HashMap::new();
    let mut unknown = 0u64;
    let mut kinds: BTreeMap<&'static str, u64> = BTreeMap::new();
    let mut parser = parse_event_log(&mut reader, EventFormat::from_path(events_path), mode);
    for e in parser.by_ref() {
        let e = e.with_context(|| format!("parsing {}", events_path.display()))?;
        *kinds.entry(e.kind.as_str()).or_default() += 1;
        if e.is_fill() {
            match index.get(&e.token) {
                Some(t) => *volumes.entry(t.condition_id.clone()).or_default() += e.usdc,
                None => unknown += 1,
            }
        } else if index.market_of_condition(&e.condition_id).is_none() {
            unknown += 1;
        }
        out.write(&e)?;
    }
    let (skipped, samples) = (parser.skipped(), parser.sample_errors().to_vec());
    drop(parser);
    let written = out.written();
    stage.output(out.finish()?.commit()?);
    stage.close_input(reader, events_path)?;
    for s in &samples {
        eprintln!("skipped {}: {s}", events_path.display());
    }

    let markets = assemble_markets(&descriptors, &volumes)?;
    stage.write_output(MARKETS, |f| {
        serde_json::to_writer_pretty(&mut *f, &markets)?;
        Ok(f.write_all(b"\n")?)
    })?;
    stage.count("events", written);
    stage.count("events_by_kind", &kinds);
    stage.count("skipped_lines", skipped);
    stage.count("unknown_market_events", unknown);
    stage.count("markets", markets.len());
    stage.count("conditions", markets.iter().map(Market::n).sum::<usize>());
    stage.finish()?;
    Ok(Outcome::ok(format!(
        "ingest: {written} events ({skipped} skipped, {unknown} outside known markets), {} markets",
        markets.len()
    )))
}

pub fn topics(cfg: &RunConfig, env: Env) -> Result<Outcome> {
    let mut stage = Stage::begin("topics", cfg, env)?;
    let mut markets = load_markets(&mut stage)?;
    let embedder: Box<dyn Embedder> = if cfg.oracle.embed_endpoint.is_empty() {
        Box::new(KeywordEmbedder)
    } else {
        Box::new(HttpEmbedder::new(&cfg.oracle))
    };
    let assigned = assign_topics(&mut markets, embedder.as_ref())?;
    let mut per_topic: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &assigned {
        *per_topic.entry(a.topic.as_str()).or_default() += 1;
    }
    stage.write_output(TOPICS, |f| write_jsonl(f, &assigned))?;
    stage.count("markets", assigned.len());
    stage.count("per_topic", &per_topic);
    stage.finish()?;
    Ok(Outcome::ok(format!("topics: {} markets assigned", assigned.len())))
}

pub fn pairs(cfg: &RunConfig, env: Env) -> Result<Outcome> {
    let mut stage = Stage::begin("pairs", cfg, env)?;
    let mut markets = load_markets(&mut stage)?;
    apply_topics(&mut stage, cfg, &mut markets)?;
    let pairs = candidate_pairs(&markets);
    stage.write_output(PAIRS, |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["pair_id", "left", "right"])?;
        for &(a, b) in &pairs {
            let (l, r) = (markets[a].key(), markets[b].key());
            w.write_record([arbscan_core::market_model::pair_id(l, r).as_str(), l, r])?;
        }
        w.flush()?;
        Ok(())
    })?;
    stage.count("candidate_pairs", pairs.len());
    stage.count("markets_with_topic", markets.iter().filter(|m| m.topic.is_some()).count());
    stage.finish()?;
    Ok(Outcome::ok(format!("pairs: {} candidate pairs", pairs.len())))
}

pub fn discover(cfg: &RunConfig, env: Env) -> Result<Outcome> {
    let mut stage = Stage::begin("discover", cfg, env)?;
    let markets = load_markets(&mut stage)?;
    let pairs_path = stage.require(PAIRS)?;
    let bytes = stage.read_input(&pairs_path)?;
    let by_key: HashMap<&str, usize> = markets.iter().enumerate().map(|(i, m)| (m.key(), i)).collect();
    let mut pairs = Vec::new();
    for rec in csv::Reader::from_reader(&bytes[..]).records() {
        let rec = rec?;
        let idx = |k: &str| {
            by_key.get(k).copied().ok_or_else(|| {
                anyhow!("{PAIRS} names unknown market {k}: rerun `arbscan pairs` after `arbscan ingest`")
            })
        };
        pairs.push((idx(&rec[1])?, idx(&rec[2])?));
    }

    let oracle: Box<dyn Oracle> = if cfg.oracle.endpoint.is_empty() {
        let fixtures: Vec<OracleFixture> = match &cfg.paths.oracle_fixtures {
            Some(p) => {
                let bytes = stage.read_input(p)?;
                read_jsonl(&bytes, p)?
            }
            None => Vec::new(),
        };
        Box::new(ReplayOracle::new(fixtures.into_iter().map(|f| (f.pair_id, f.response))))
    } else {
        Box::new(HttpOracle::new(&cfg.oracle))
    };
    let found = dependency::discover(&markets, &pairs, oracle.as_ref(), cfg.oracle.parallelism, cfg.reduce_k);

    stage.write_output(DISCOVERY, |f| write_jsonl(f, &found.records))?;
    stage.write_output(CERTIFIED, |f| {
        serde_json::to_writer_pretty(&mut *f, &found.certified)?;
        Ok(f.write_all(b"\n")?)
    })?;
    stage.write_output(REVIEW, |f| write_jsonl(f, &found.review))?;
    stage.write_output(FAILURES, |f| write_jsonl(f, &found.failures))?;
    let verdicts: BTreeMap<String, usize> = [Verdict::NoParse, Verdict::InvalidShape, Verdict::Independent, Verdict::Dependent]
        .into_iter()
        .map(|v| (format!("{v:?}"), found.count(v)))
        .collect();
    stage.count("pairs", pairs.len());
    stage.count("verdicts", &verdicts);
    stage.count("certified", found.certified.len());
    stage.count("failures", found.failures.len());
    stage.finish()?;
    let summary = format!(
        "discover: {} pairs, {} dependent, {} certified, {} oracle failures",
        pairs.len(),
        found.count(Verdict::Dependent),
        found.certified.len(),
        found.failures.len()
    );
    Ok(Outcome {
        summary,
        partial: !found.failures.is_empty(),
    })
}

pub fn prices(cfg: &RunConfig, env: Env) -> Result<Outcome> {
    let mut stage = Stage::begin("prices", cfg, env)?;
    let mut builder = PriceBookBuilder::new(cfg.detect.window, cfg.carry_limit, None)?;
    let events = for_each_event(&mut stage, |e| Ok(builder.push(&e)?))?;
    let book = builder.finish();
    stage.write_output(PRICES, |f| Ok(book.write_csv(f)?))?;
    stage.write_output(SUPPLY, |f| Ok(book.supply.write_csv(f)?))?;
    let meta = PricesMeta {
        window: book.window,
        carry_limit: book.carry_limit,
        last_block: book.last_block,
        events,
    };
    stage.write_output(PRICES_META, |f| {
        serde_json::to_writer_pretty(&mut *f, &meta)?;
        Ok(f.write_all(b"\n")?)
    })?;
    stage.count("events", events);
    stage.count("tokens", book.series.len());
    stage.count("price_points", book.point_count());
    stage.finish()?;
    Ok(Outcome::ok(format!(
        "prices: {} points over {} tokens from {events} events",
        book.point_count(),
        book.series.len()
    )))
}

pub fn detect(cfg: &RunConfig, env: Env) -> Result<Outcome> {
    let mut stage = Stage::begin("detect", cfg, env)?;
    let markets = load_markets(&mut stage)?;
    let book = load_book(&mut stage, cfg)?;
    let certified = load_certified(&mut stage)?;
    let report = detect_all(&markets, &certified, &book, &cfg.detect);
    stage.write_output(OPPORTUNITIES, |f| Ok(detect::write_report(&report.opportunities, f)?))?;
    let per_kind: BTreeMap<&str, usize> = OpportunityKind::ALL
        .iter()
        .map(|&k| (k.as_str(), report.count(k)))
        .collect();
    stage.count("opportunities", report.opportunities.len());
    stage.count("per_kind", &per_kind);
    stage.count("skipped_blocks", report.skipped_blocks);
    stage.count("scopes", report.scopes);
    stage.finish()?;
    Ok(Outcome::ok(format!(
        "detect: {} opportunities over {} scopes",
        report.opportunities.len(),
        report.scopes
    )))
}

pub fn attribute_stage(cfg: &RunConfig, env: Env) -> Result<Outcome> {
    let mut stage = Stage::begin("attribute", cfg, env)?;
    let markets = load_markets(&mut stage)?;
    let book = load_book(&mut stage, cfg)?;
    let certified = load_certified(&mut stage)?;
    let index = TokenIndex::new(&markets);
    let mut bids = Vec::new();
    for_each_event(&mut stage, |e| {
        bids.extend(filter_bids([e], cfg.min_bid_usdc));
        Ok(())
    })?;
    let estimate = |token: &str, block: u64| book.get(token).and_then(|s| s.quote(block).value());
    let report = attribute(bids, &index, &markets, &certified, &estimate, &cfg.attribution);
    stage.write_output(ATTRIBUTION, |f| Ok(attribution::write_rows(&report.rows, f)?))?;
    stage.write_output(LEADERBOARD, |f| Ok(attribution::write_leaderboard(&report.leaderboard, f)?))?;
    let totals: BTreeMap<&str, f64> = report.strategy_totals().into_iter().map(|(k, v)| (k.as_str(), v)).collect();
    stage.count("episodes", report.episodes);
    stage.count("rows", report.rows.len());
    stage.count("accounts", report.leaderboard.len());
    stage.count("negative_scopes", report.negative_scopes);
    stage.count("below_epsilon", report.below_epsilon);
    stage.count("overlapping_episodes", report.overlapping_episodes);
    stage.count("external_units", report.external_units);
    stage.count("unknown_tokens", report.unknown_tokens);
    stage.count("strategy_totals", &totals);
    stage.finish()?;
    let total: f64 = report.leaderboard.iter().map(|r| r.total_profit).sum();
    Ok(Outcome::ok(format!(
        "attribute: {} episodes, {} qualifying scopes, {} accounts, ${total:.2} total",
        report.episodes,
        report.rows.len(),
        report.leaderboard.len()
    )))
}

#[derive(Debug, Serialize)]
struct Report {
    markets: usize,
    negrisk_markets_with_volume: usize,
    top4_share: f64,
    liquidity_monotone: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdicts: Option<BTreeMap<String, usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    opportunities: Option<BTreeMap<String, KindSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy_totals: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scope_totals: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_accounts: Option<Vec<LeaderRow>>,
}

#[derive(Debug, Default, Serialize)]
struct KindSummary {
    count: usize,
    max_profit: f64,
}

pub fn report(cfg: &RunConfig, env: Env) -> Result<Outcome> {
    let mut stage = Stage::begin("report", cfg, env)?;
    let markets = load_markets(&mut stage)?;
    let profile = liquidity_profile(&markets);
    stage.write_output(LIQUIDITY, |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["rank", "mean_cumulative_share", "std_cumulative_share"])?;
        for r in &profile.ranks {
            w.write_record([r.rank.to_string(), format!("{:.6}", r.mean_cumulative), format!("{:.6}", r.std_cumulative)])?;
        }
        w.flush()?;
        Ok(())
    })?;

    let verdicts = match stage.optional(DISCOVERY) {
        Some(p) => {
            let bytes = stage.read_input(&p)?;
            let mut m = BTreeMap::new();
            for r in read_jsonl::<DiscoveryRecord>(&bytes, &p)? {
                *m.entry(format!("{:?}", r.verdict)).or_default() += 1;
            }
            Some(m)
        }
        None => None,
    };
    let opportunities = match stage.optional(OPPORTUNITIES) {
        Some(p) => {
            let bytes = stage.read_input(&p)?;
            let mut m: BTreeMap<String, KindSummary> = BTreeMap::new();
            for o in detect::read_report(&bytes[..])? {
                let s = m.entry(o.kind.as_str().to_string()).or_default();
                s.count += 1;
                s.max_profit += o.max_profit;
            }
            Some(m)
        }
        None => None,
    };
    let (strategy_totals, scope_totals) = match stage.optional(ATTRIBUTION) {
        Some(p) => {
            let bytes = stage.read_input(&p)?;
            let (mut by_strategy, mut by_scope) = (BTreeMap::new(), BTreeMap::new());
            for row in csv::Reader::from_reader(&bytes[..]).deserialize::<AttributionRow>() {
                let row = row.with_context(|| format!("parsing {}", p.display()))?;
                *by_strategy.entry(row.strategy.as_str().to_string()).or_insert(0.0) += row.profit;
                *by_scope.entry(row.scope_kind.as_str().to_string()).or_insert(0.0) += row.profit;
            }
            (Some(by_strategy), Some(by_scope))
        }
        None => (None, None),
    };
    let top_accounts = match stage.optional(LEADERBOARD) {
        Some(p) => {
            let bytes = stage.read_input(&p)?;
            let rows: Vec<LeaderRow> = csv::Reader::from_reader(&bytes[..])
                .deserialize()
                .take(10)
                .collect::<Result<_, _>>()
                .with_context(|| format!("parsing {}", p.display()))?;
            Some(rows)
        }
        None => None,
    };

    let report = Report {
        markets: markets.len(),
        negrisk_markets_with_volume: profile.markets,
        top4_share: profile.top_share(4),
        liquidity_monotone: profile.is_monotone(),
        verdicts,
        opportunities,
        strategy_totals,
        scope_totals,
        top_accounts,
    };
    let text = serde_json::to_string_pretty(&report)?;
    stage.write_output(REPORT, |f| Ok(writeln!(f, "{text}")?))?;
    stage.count("markets", markets.len());
    stage.finish()?;
    Ok(Outcome::ok(text))
}

pub fn synth(cfg: &RunConfig, env: Env, planted: bool) -> Result<Outcome> {
    let mut stage = Stage::begin("synth", cfg, env)?;
    let config = if planted { SynthConfig::planted_fixture() } else { cfg.synth.clone() };
    let run = generate_synthetic(&config, cfg.seed)?;
    let mut out = EventWriter::new(stage.create(SYNTH_EVENTS)?)?;
    for e in run.events() {
        out.write(&e)?;
    }
    let events = out.written();
    stage.output(out.finish()?.commit()?);
    stage.write_output(SYNTH_DESCRIPTORS, |f| Ok(write_descriptors(&run.descriptors, f)?))?;
    stage.write_output(SYNTH_PLANTED, |f| write_jsonl(f, &run.manifest))?;
    stage.write_output(SYNTH_FIXTURES, |f| write_jsonl(f, &run.oracle_fixtures))?;
    stage.count("events", events);
    stage.count("markets", run.markets.len());
    stage.count("planted", run.manifest.len());
    stage.count("planted_fixture", planted);
    stage.finish()?;
    Ok(Outcome::ok(format!(
        "synth: {events} events, {} markets, {} planted episodes (seed {})",
        run.markets.len(),
        run.manifest.len(),
        cfg.seed
    )))
}
