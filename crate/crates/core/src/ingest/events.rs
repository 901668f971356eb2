use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

use super::{EventKind, Side, TradeEvent};

/// Exact column order of the event log CSV.
pub const EVENT_CSV_HEADER: [&str; 10] = [
    "block",
    "tx_index",
    "kind",
    "account",
    "counterparty",
    "token",
    "condition_id",
    "usdc",
    "tokens",
    "side",
];

const MAX_FRACTION_DIGITS: usize = 6;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Stop at the first malformed line.
    #[default]
    Strict,
    /// Skip malformed lines and count them.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    JsonLines,
}

impl EventFormat {
    /// Guesses the format from a file name; `.jsonl`/`.ndjson`/`.json` are JSON lines.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => EventFormat::JsonLines,
            _ => EventFormat::Csv,
        }
    }
}

enum Source<R: Read> {
    Csv {
        reader: csv::Reader<R>,
        record: csv::StringRecord,
        header_checked: bool,
    },
    Json {
        lines: BufReader<R>,
        buf: String,
        line: u64,
    },
}

/// Streaming reader over an event log. Yields events in file order and
/// enforces strictly increasing `(block, tx_index)`.
pub struct EventReader<R: Read> {
    source: Source<R>,
    mode: ParseMode,
    last: Option<(u64, u32)>,
    skipped: u64,
    yielded: u64,
    done: bool,
    first_errors: Vec<ParseError>,
}

/// Opens a streaming parse over `source`.
pub fn parse_event_log<R: Read>(source: R, format: EventFormat, mode: ParseMode) -> EventReader<R> {
    let source = match format {
        EventFormat::Csv => Source::Csv {
            reader: csv::ReaderBuilder::new()
                .has_headers(false)
                .buffer_capacity(1 << 20)
                .from_reader(source),
            record: csv::StringRecord::new(),
            header_checked: false,
        },
        EventFormat::JsonLines => Source::Json {
            lines: BufReader::with_capacity(1 << 20, source),
            buf: String::new(),
            line: 0,
        },
    };
    EventReader {
        source,
        mode,
        last: None,
        skipped: 0,
        yielded: 0,
        done: false,
        first_errors: Vec::new(),
    }
}

impl<R: Read> EventReader<R> {
    /// Lines skipped in lenient mode.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn yielded(&self) -> u64 {
        self.yielded
    }

    /// The first few errors seen in lenient mode, for reporting.
    pub fn sample_errors(&self) -> &[ParseError] {
        &self.first_errors
    }

    fn next_raw(&mut self) -> Option<Result<(u64, TradeEvent), ParseError>> {
        match &mut self.source {
            Source::Csv {
                reader,
                record,
                header_checked,
            } => {
                if !*header_checked {
                    *header_checked = true;
                    match reader.read_record(record) {
                        Ok(true) => {
                            let got: Vec<&str> = record.iter().collect();
                            if got != EVENT_CSV_HEADER {
                                self.done = true;
                                return Some(Err(ParseError {
                                    line: 1,
                                    message: format!(
                                        "header must be `{}`, got `{}`",
                                        EVENT_CSV_HEADER.join(","),
                                        got.join(",")
                                    ),
                                }));
                            }
                        }
                        Ok(false) => {
                            self.done = true;
                            return Some(Err(ParseError {
                                line: 1,
                                message: "missing header row".into(),
                            }));
                        }
                        Err(e) => {
                            self.done = true;
                            return Some(Err(ParseError {
                                line: 1,
                                message: e.to_string(),
                            }));
                        }
                    }
                }
                match reader.read_record(record) {
                    Ok(false) => None,
                    Ok(true) => {
                        let line = record.position().map_or(0, |p| p.line());
                        Some(
                            event_from_record(record)
                                .map(|ev| (line, ev))
                                .map_err(|message| ParseError { line, message }),
                        )
                    }
                    Err(e) => {
                        let line = e.position().map_or(0, |p| p.line());
                        if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                            self.done = true;
                        }
                        Some(Err(ParseError {
                            line,
                            message: e.to_string(),
                        }))
                    }
                }
            }
            Source::Json { lines, buf, line } => loop {
                buf.clear();
                match lines.read_line(buf) {
                    Ok(0) => return None,
                    Ok(_) => {
                        *line += 1;
                        let text = buf.trim();
                        if text.is_empty() {
                            continue;
                        }
                        let parsed = serde_json::from_str::<TradeEvent>(text)
                            .map_err(|e| e.to_string())
                            .and_then(|ev| ev.validate().map(|_| ev));
                        let line = *line;
                        return Some(parsed.map(|ev| (line, ev)).map_err(|message| ParseError { line, message }));
                    }
                    Err(e) => {
                        self.done = true;
                        return Some(Err(ParseError {
                            line: *line + 1,
                            message: e.to_string(),
                        }));
                    }
                }
            },
        }
    }
}

impl<R: Read> Iterator for EventReader<R> {
    type Item = Result<TradeEvent, ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.done {
                return None;
            }
            let item = match self.next_raw()? {
                Ok((line, ev)) => {
                    let key = (ev.block, ev.tx_index);
                    match self.last {
                        Some(prev) if key <= prev => Err(ParseError {
                            line,
                            message: format!(
                                "event ({}, {}) is not after ({}, {})",
                                key.0, key.1, prev.0, prev.1
                            ),
                        }),
                        _ => {
                            self.last = Some(key);
                            Ok(ev)
                        }
                    }
                }
                Err(e) => Err(e),
            };
            match item {
                Ok(ev) => {
                    self.yielded += 1;
                    return Some(Ok(ev));
                }
                Err(e) => {
                    // Header and I/O failures end the stream in either mode.
                    match (self.done, self.mode) {
                        (true, _) | (_, ParseMode::Strict) => {
                            self.done = true;
                            return Some(Err(e));
                        }
                        (false, ParseMode::Lenient) => {
                            self.skipped += 1;
                            if self.first_errors.len() < 16 {
                                self.first_errors.push(e);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn event_from_record(r: &csv::StringRecord) -> Result<TradeEvent, String> {
    if r.len() != EVENT_CSV_HEADER.len() {
        return Err(format!("expected {} fields, got {}", EVENT_CSV_HEADER.len(), r.len()));
    }
    let block = r[0].parse::<u64>().map_err(|e| format!("block: {e}"))?;
    let tx_index = r[1].parse::<u32>().map_err(|e| format!("tx_index: {e}"))?;
    let kind = r[2].parse::<EventKind>()?;
    let ev = TradeEvent {
        block,
        tx_index,
        kind,
        account: r[3].to_string(),
        counterparty: r[4].to_string(),
        token: r[5].to_string(),
        condition_id: r[6].to_string(),
        usdc: parse_amount(&r[7]).map_err(|e| format!("usdc: {e}"))?,
        tokens: parse_amount(&r[8]).map_err(|e| format!("tokens: {e}"))?,
        side: r[9].parse::<Side>()?,
    };
    ev.validate()?;
    Ok(ev)
}

/// Plain decimal: digits, optional `.` and at most six fractional digits.
fn parse_amount(s: &str) -> Result<f64, String> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if s.starts_with('-') {
        return Err(format!("negative amount {s:?}"));
    }
    if int.is_empty() || !digits_ok(int) || !digits_ok(frac) || (s.contains('.') && frac.is_empty()) {
        return Err(format!("malformed amount {s:?}"));
    }
    if frac.len() > MAX_FRACTION_DIGITS {
        return Err(format!("more than {MAX_FRACTION_DIGITS} fractional digits in {s:?}"));
    }
    s.parse::<f64>().map_err(|e| e.to_string())
}

pub(crate) fn format_amount(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Streaming writer for the canonical CSV layout.
pub struct EventWriter<W: Write> {
    inner: csv::Writer<W>,
    written: u64,
}

impl<W: Write> EventWriter<W> {
    pub fn new(out: W) -> std::io::Result<Self> {
        let mut inner = csv::WriterBuilder::new().buffer_capacity(1 << 20).from_writer(out);
        inner.write_record(EVENT_CSV_HEADER)?;
        Ok(EventWriter { inner, written: 0 })
    }

    pub fn write(&mut self, e: &TradeEvent) -> std::io::Result<()> {
        self.written += 1;
        write_event(&mut self.inner, e)
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    /// Flushes and returns the underlying writer.
    pub fn finish(self) -> std::io::Result<W> {
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}

/// Writes events in the canonical CSV layout, header included.
pub fn write_events_csv<'a, W: Write>(
    events: impl IntoIterator<Item = &'a TradeEvent>,
    out: W,
) -> std::io::Result<u64> {
    let mut w = csv::WriterBuilder::new().buffer_capacity(1 << 20).from_writer(out);
    w.write_record(EVENT_CSV_HEADER)?;
    let mut n = 0;
    for e in events {
        write_event(&mut w, e)?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub(crate) fn write_event<W: Write>(w: &mut csv::Writer<W>, e: &TradeEvent) -> std::io::Result<()> {
    let block = e.block.to_string();
    let tx = e.tx_index.to_string();
    let usdc = format_amount(e.usdc);
    let tokens = format_amount(e.tokens);
    w.write_record([
        block.as_str(),
        tx.as_str(),
        e.kind.as_str(),
        &e.account,
        &e.counterparty,
        &e.token,
        &e.condition_id,
        &usdc,
        &tokens,
        e.side.as_str(),
    ])?;
    Ok(())
}

/// Keeps fills with `usdc >= min_usdc` and every split/merge.
pub fn filter_bids<I>(events: I, min_usdc: f64) -> impl Iterator<Item = TradeEvent>
where
    I: IntoIterator<Item = TradeEvent>,
{
    events
        .into_iter()
        .filter(move |e| !e.is_fill() || e.usdc >= min_usdc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "block,tx_index,kind,account,counterparty,token,condition_id,usdc,tokens,side\n";

    fn parse_all(text: &str, mode: ParseMode) -> (Vec<Result<TradeEvent, ParseError>>, u64) {
        let mut r = parse_event_log(text.as_bytes(), EventFormat::Csv, mode);
        let out: Vec<_> = r.by_ref().collect();
        (out, r.skipped())
    }

    fn fill(block: u64, tx: u32, usdc: f64) -> TradeEvent {
        TradeEvent {
            block,
            tx_index: tx,
            kind: EventKind::OrderFilled,
            account: "0xa".into(),
            counterparty: "0xb".into(),
            token: "t1".into(),
            condition_id: String::new(),
            usdc,
            tokens: 10.0,
            side: Side::Buy,
        }
    }

    #[test]
    fn parses_one_fill() {
        let text = format!("{HEADER}12,0,OrderFilled,0xa,0xb,t1,,5.25,10,Buy\n");
        let (events, _) = parse_all(&text, ParseMode::Strict);
        assert_eq!(events, vec![Ok(fill(12, 0, 5.25))]);
    }

    #[test]
    fn negative_usdc_is_error_with_line() {
        let text = format!("{HEADER}12,0,OrderFilled,0xa,0xb,t1,,-5,10,Buy\n");
        let (events, _) = parse_all(&text, ParseMode::Strict);
        let err = events[0].clone().unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("negative"));
    }

    #[test]
    fn lenient_skips_and_counts() {
        let text = format!(
            "{HEADER}1,0,OrderFilled,0xa,0xb,t1,,5,10,Buy\n1,1,Bogus,0xa,0xb,t1,,5,10,Buy\n2,0,OrderFilled,0xa,0xb,t1,,1.1234567,10,Buy\n3,0,PositionSplit,0xa,EXCHANGE,,c1,4,4,NA\n"
        );
        let (events, skipped) = parse_all(&text, ParseMode::Lenient);
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(Result::is_ok));
        assert_eq!(skipped, 2);

        let (strict, _) = parse_all(&text, ParseMode::Strict);
        assert_eq!(strict.len(), 2);
        assert_eq!(strict[1].clone().unwrap_err().line, 3);
    }

    #[test]
    fn out_of_order_rejected() {
        let text = format!("{HEADER}5,1,OrderFilled,0xa,0xb,t1,,5,10,Buy\n5,1,OrderFilled,0xa,0xb,t1,,5,10,Buy\n");
        let (events, _) = parse_all(&text, ParseMode::Strict);
        assert!(events[1].as_ref().unwrap_err().message.contains("not after"));
        assert_eq!(events[1].as_ref().unwrap_err().line, 3);
    }

    #[test]
    fn split_must_carry_condition() {
        let text = format!("{HEADER}1,0,PositionSplit,0xa,EXCHANGE,,,4,4,NA\n");
        let (events, _) = parse_all(&text, ParseMode::Strict);
        assert!(events[0].is_err());
    }

    #[test]
    fn bad_header_rejected() {
        let (events, _) = parse_all("block,kind\n1,OrderFilled\n", ParseMode::Lenient);
        assert_eq!(events.len(), 1);
        assert!(events[0].is_err());
    }

    #[test]
    fn json_lines_parse() {
        let line = serde_json::to_string(&fill(3, 2, 7.5)).unwrap();
        let text = format!("{line}\n\n{line}\n");
        let out: Vec<_> = parse_event_log(text.as_bytes(), EventFormat::JsonLines, ParseMode::Strict).collect();
        assert_eq!(out[0], Ok(fill(3, 2, 7.5)));
        assert_eq!(out[1].clone().unwrap_err().line, 3);
    }

    #[test]
    fn bid_filter_boundary() {
        let mut split = fill(3, 0, 1.5);
        split.kind = EventKind::PositionSplit;
        split.token.clear();
        split.condition_id = "c".into();
        split.side = Side::NA;
        let kept: Vec<_> = filter_bids(vec![fill(1, 0, 1.99), fill(2, 0, 2.0), split.clone()], 2.0).collect();
        assert_eq!(kept, vec![fill(2, 0, 2.0), split]);
    }

    fn arb_event() -> impl Strategy<Value = TradeEvent> {
        (0u64..1_000_000, 0u32..50, 0u8..3, 0u64..100_000_000, 1u64..100_000_000, "[a-z0-9]{1,8}").prop_map(
            |(block, tx, kind, usdc_micro, tok_micro, id)| {
                let kind = [EventKind::OrderFilled, EventKind::PositionSplit, EventKind::PositionsMerge][kind as usize];
                let fill = kind == EventKind::OrderFilled;
                TradeEvent {
                    block,
                    tx_index: tx,
                    kind,
                    account: format!("0x{id}"),
                    counterparty: crate::ingest::EXCHANGE.into(),
                    token: if fill { id.clone() } else { String::new() },
                    condition_id: if fill { String::new() } else { id },
                    usdc: usdc_micro as f64 / 1e6,
                    tokens: tok_micro as f64 / 1e6,
                    side: if fill { Side::Sell } else { Side::NA },
                }
            },
        )
    }

    proptest! {
        #[test]
        fn csv_round_trip(mut events in proptest::collection::vec(arb_event(), 0..40)) {
            events.sort_by_key(|e| (e.block, e.tx_index));
            events.dedup_by_key(|e| (e.block, e.tx_index));
            let mut buf = Vec::new();
            write_events_csv(&events, &mut buf).unwrap();
            let back: Vec<TradeEvent> = parse_event_log(buf.as_slice(), EventFormat::Csv, ParseMode::Strict)
                .collect::<Result<_, _>>()
                .unwrap();
            prop_assert_eq!(back, events);
        }
    }
}
