use std::collections::{BTreeMap, BTreeSet, HashMap};

use arbscan_core::attribution::{attribute, AttributionParams};
use arbscan_core::dependency::{assign_topics, candidate_pairs, discover, KeywordEmbedder, ReplayOracle, Verdict};
use arbscan_core::detect::{detect_all, DetectParams, OpportunityKind};
use arbscan_core::ingest::synth::{generate_synthetic, PlantKind, SynthConfig};
use arbscan_core::ingest::{assemble_markets, filter_bids, volume_by_condition, TokenIndex, DEFAULT_MIN_BID_USDC};
use arbscan_core::pricing::{PriceBookBuilder, DEFAULT_CARRY_LIMIT};

fn kind_of(p: PlantKind) -> BTreeSet<OpportunityKind> {
    match p {
        PlantKind::CondRebalanceLong => [OpportunityKind::CondRebalanceLong].into(),
        PlantKind::CondRebalanceShort => [OpportunityKind::CondRebalanceShort].into(),
        PlantKind::MarketRebalanceLong => [OpportunityKind::MarketRebalanceLong].into(),
        PlantKind::MarketRebalanceShort => [OpportunityKind::MarketRebalanceShort].into(),
        PlantKind::Combinatorial => [OpportunityKind::Combinatorial].into(),
    }
}

#[test]
fn planted_episodes_are_recovered_end_to_end() {
    let mut cfg = SynthConfig::planted_fixture();
    // A shorter run with the same plants keeps this test quick.
    cfg.blocks = 10_500;
    cfg.fills_per_block = 4;
    let run = generate_synthetic(&cfg, 11).unwrap();
    let events: Vec<_> = run.events().collect();

    let probe = TokenIndex::new(&run.markets);
    let volumes = volume_by_condition(&events, &probe);
    let mut markets = assemble_markets(&run.descriptors, &volumes).unwrap();
    let index = TokenIndex::new(&markets);
    assign_topics(&mut markets, &KeywordEmbedder).unwrap();

    let pairs = candidate_pairs(&markets);
    let oracle = ReplayOracle::new(run.oracle_fixtures.iter().map(|f| (f.pair_id.clone(), f.response.clone())));
    let found = discover(&markets, &pairs, &oracle, 2, 4);
    assert!(found.failures.is_empty());
    assert_eq!(found.count(Verdict::Dependent), 1, "{:?}", found.records.iter().filter(|r| r.verdict == Verdict::Dependent).collect::<Vec<_>>());
    assert_eq!(found.certified.len(), 1);

    let mut builder = PriceBookBuilder::new(1, DEFAULT_CARRY_LIMIT, None).unwrap();
    for e in &events {
        builder.push(e).unwrap();
    }
    let book = builder.finish();
    let params = DetectParams::default();
    let report = detect_all(&markets, &found.certified, &book, &params);

    let detected: BTreeMap<(String, u64), BTreeSet<OpportunityKind>> =
        report.opportunities.iter().fold(BTreeMap::new(), |mut acc, o| {
            acc.entry((o.scope_id.clone(), o.block)).or_default().insert(o.kind);
            acc
        });
    let planted: BTreeMap<(String, u64), BTreeSet<OpportunityKind>> = run
        .manifest
        .iter()
        .map(|m| ((m.scope_id.clone(), m.block), kind_of(m.kind)))
        .collect();
    assert_eq!(detected, planted);
    for m in &run.manifest {
        let o = report
            .opportunities
            .iter()
            .find(|o| o.scope_id == m.scope_id && o.block == m.block)
            .unwrap();
        assert!((o.deviation - m.magnitude_usd).abs() < 1e-9, "{m:?} vs {o:?}");
    }

    let bids = filter_bids(events, DEFAULT_MIN_BID_USDC);
    let estimate = |token: &str, block: u64| book.get(token).and_then(|s| s.quote(block).value());
    let attr = attribute(bids, &index, &markets, &found.certified, &estimate, &AttributionParams::default());
    let by_account: HashMap<&str, f64> = attr.leaderboard.iter().map(|r| (r.account.as_str(), r.total_profit)).collect();
    assert_eq!(attr.leaderboard.len(), run.manifest.len(), "{:#?}", attr.leaderboard);
    for m in &run.manifest {
        let got = by_account.get(m.account.as_str()).copied().unwrap_or(0.0);
        assert!((got - m.profit_usd).abs() < 1e-4, "{m:?}: got {got}");
        let row = attr.rows.iter().find(|r| r.account == m.account).unwrap();
        assert_eq!(row.scope_id, m.scope_id);
    }
}
