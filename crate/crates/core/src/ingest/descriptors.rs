use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_model::{Condition, Market, ModelError};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("descriptor line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("no descriptors to derive an end date from")]
    EmptyGroup,
    #[error("condition {0}: {1}")]
    Invalid(String, String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDescriptor {
    pub token_id: String,
    /// "Yes" or "No".
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<bool>,
}

/// One condition as exported by the market API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDescriptor {
    pub condition_id: String,
    pub question: String,
    pub end_date_iso: String,
    #[serde(default)]
    pub neg_risk_market_id: Option<String>,
    pub tokens: Vec<TokenDescriptor>,
}

impl MarketDescriptor {
    fn token(&self, outcome: &str) -> Option<&str> {
        self.tokens
            .iter()
            .find(|t| t.outcome.eq_ignore_ascii_case(outcome))
            .map(|t| t.token_id.as_str())
    }

    pub fn yes_token(&self) -> Option<&str> {
        self.token("yes")
    }

    pub fn no_token(&self) -> Option<&str> {
        self.token("no")
    }

    pub fn end_date(&self) -> Option<NaiveDate> {
        parse_end_date(&self.end_date_iso)
    }

    /// Which side won, if the market has resolved.
    pub fn winner(&self) -> Option<&str> {
        self.tokens
            .iter()
            .find(|t| t.winner == Some(true))
            .map(|t| t.outcome.as_str())
    }

    pub fn validate(&self) -> Result<(), String> {
        let yes = self.yes_token().ok_or("missing Yes token")?;
        let no = self.no_token().ok_or("missing No token")?;
        if yes.is_empty() || no.is_empty() || yes == no {
            return Err("Yes and No token ids must be distinct and nonempty".into());
        }
        if self.end_date().is_none() {
            return Err(format!("unparseable end_date_iso {:?}", self.end_date_iso));
        }
        Ok(())
    }
}

/// Accepts `YYYY-MM-DD` optionally followed by a time part (` ` or `T`).
pub fn parse_end_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    let date = s.get(..10)?;
    match s.as_bytes().get(10) {
        None | Some(b' ') | Some(b'T') => NaiveDate::parse_from_str(date, "%Y-%m-%d").ok(),
        _ => None,
    }
}

pub fn parse_descriptors<R: BufRead>(source: R) -> Result<Vec<MarketDescriptor>, DescriptorError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: MarketDescriptor = serde_json::from_str(&line).map_err(|e| DescriptorError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        d.validate()
            .map_err(|message| DescriptorError::Malformed { line: line_no, message })?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_descriptors<W: Write>(descriptors: &[MarketDescriptor], mut out: W) -> std::io::Result<()> {
    for d in descriptors {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Modal end date; ties go to the latest of the tied dates.
pub fn canonical_end_date_of(dates: &[NaiveDate]) -> Result<NaiveDate, DescriptorError> {
    let mut counts: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for d in dates {
        *counts.entry(*d).or_default() += 1;
    }
    // BTreeMap iterates ascending, so `max_by_key` keeps the latest on ties.
    counts
        .into_iter()
        .max_by_key(|&(_, c)| c)
        .map(|(d, _)| d)
        .ok_or(DescriptorError::EmptyGroup)
}

/// Canonical end date for descriptors sharing one market id.
pub fn canonical_end_date(descriptors: &[MarketDescriptor]) -> Result<NaiveDate, DescriptorError> {
    let dates = descriptors
        .iter()
        .map(|d| {
            d.end_date()
                .ok_or_else(|| DescriptorError::Invalid(d.condition_id.clone(), "bad end date".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    canonical_end_date_of(&dates)
}

/// Groups descriptors into markets by `neg_risk_market_id`, canonicalizes end
/// dates and attaches per-condition volumes. Output is sorted by market key;
/// conditions keep file order.
pub fn assemble_markets(
    descriptors: &[MarketDescriptor],
    volumes: &HashMap<String, f64>,
) -> Result<Vec<Market>, DescriptorError> {
    let mut groups: BTreeMap<Option<&str>, Vec<&MarketDescriptor>> = BTreeMap::new();
    let mut singles = Vec::new();
    for d in descriptors {
        match d.neg_risk_market_id.as_deref().filter(|s| !s.is_empty()) {
            Some(id) => groups.entry(Some(id)).or_default().push(d),
            None => singles.push(vec![d]),
        }
    }
    let to_condition = |d: &MarketDescriptor| -> Result<Condition, DescriptorError> {
        d.validate()
            .map_err(|m| DescriptorError::Invalid(d.condition_id.clone(), m))?;
        Ok(Condition {
            condition_id: d.condition_id.clone(),
            question: d.question.clone(),
            yes_token: d.yes_token().unwrap_or_default().to_string(),
            no_token: d.no_token().unwrap_or_default().to_string(),
            end_date: d.end_date().expect("validated"),
            total_volume: volumes.get(&d.condition_id).copied().unwrap_or(0.0),
        })
    };
    let mut markets = Vec::new();
    for (id, group) in groups.into_iter().map(|(k, v)| (k.map(str::to_string), v)).chain(
        singles.into_iter().map(|g| (None, g)),
    ) {
        let owned: Vec<MarketDescriptor> = group.iter().map(|d| (*d).clone()).collect();
        let date = canonical_end_date(&owned)?;
        let conditions = owned.iter().map(to_condition).collect::<Result<Vec<_>, _>>()?;
        markets.push(Market::new(id, conditions, date)?);
    }
    markets.sort_by(|a, b| a.key().cmp(b.key()));
    Ok(markets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn desc(id: &str, market: Option<&str>, date: &str) -> MarketDescriptor {
        MarketDescriptor {
            condition_id: id.into(),
            question: format!("Q {id}?"),
            end_date_iso: date.into(),
            neg_risk_market_id: market.map(str::to_string),
            tokens: vec![
                TokenDescriptor {
                    token_id: format!("{id}y"),
                    outcome: "Yes".into(),
                    price: None,
                    winner: None,
                },
                TokenDescriptor {
                    token_id: format!("{id}n"),
                    outcome: "No".into(),
                    price: None,
                    winner: None,
                },
            ],
        }
    }

    #[test]
    fn mode_wins() {
        let (d1, d2) = (d(2024, 6, 6), d(2024, 6, 7));
        assert_eq!(canonical_end_date_of(&[d1, d1, d2]).unwrap(), d1);
    }

    #[test]
    fn tie_goes_to_latest() {
        let (d1, d2) = (d(2024, 6, 6), d(2024, 6, 7));
        assert_eq!(canonical_end_date_of(&[d1, d2]).unwrap(), d2);
        assert_eq!(canonical_end_date_of(&[d2, d1]).unwrap(), d2);
    }

    #[test]
    fn singleton_and_empty() {
        assert_eq!(canonical_end_date_of(&[d(2024, 1, 1)]).unwrap(), d(2024, 1, 1));
        assert!(matches!(canonical_end_date_of(&[]), Err(DescriptorError::EmptyGroup)));
    }

    #[test]
    fn end_date_formats() {
        assert_eq!(parse_end_date("2024-06-06 00:00:00+00:00"), Some(d(2024, 6, 6)));
        assert_eq!(parse_end_date("2024-06-06T12:00:00Z"), Some(d(2024, 6, 6)));
        assert_eq!(parse_end_date("2024-06-06"), Some(d(2024, 6, 6)));
        assert_eq!(parse_end_date("2024-06-0612"), None);
        assert_eq!(parse_end_date("June 6"), None);
    }

    #[test]
    fn assemble_groups_by_market_id() {
        let descs = vec![
            desc("c1", Some("m1"), "2024-11-05"),
            desc("c2", Some("m1"), "2024-11-05"),
            desc("c3", Some("m1"), "2024-11-06"),
            desc("s1", None, "2024-11-05T00:00:00Z"),
        ];
        let vols = HashMap::from([("c2".to_string(), 12.5)]);
        let markets = assemble_markets(&descs, &vols).unwrap();
        assert_eq!(markets.len(), 2);
        let m1 = markets.iter().find(|m| m.key() == "m1").unwrap();
        assert_eq!(m1.n(), 3);
        assert_eq!(m1.canonical_end_date, d(2024, 11, 5));
        assert_eq!(m1.conditions[1].total_volume, 12.5);
        assert_eq!(markets.iter().find(|m| m.key() == "s1").unwrap().n(), 1);
    }

    #[test]
    fn descriptor_lines_validated() {
        let mut bad = desc("c1", None, "2024-11-05");
        bad.tokens[1].token_id = "c1y".into();
        let text = format!(
            "{}\n{}\n",
            serde_json::to_string(&desc("c0", None, "2024-11-05")).unwrap(),
            serde_json::to_string(&bad).unwrap()
        );
        match parse_descriptors(text.as_bytes()) {
            Err(DescriptorError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
