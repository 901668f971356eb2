//! Dependent-pair discovery: topic assignment, candidate pruning, oracle
//! prompting and strict validation of whatever the oracle sends back.
//!
//! The embedder and the oracle are ports. Production adapters speak the
//! OpenAI-compatible HTTP API; the stubs here are deterministic so a whole
//! discovery run is reproducible byte for byte.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Duration;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::market_model::{
    classify_pair, find_dependent_subsets, pair_id, reduce_market, Arity, Dependence, DependentSubsets, Market,
    OutcomeSpace, ResolutionVector, Outcome, Topic, DEFAULT_REDUCE_K,
};

/// Most questions a single prompt may carry: two reduced markets of five.
pub const MAX_PROMPT_QUESTIONS: usize = 10;

#[derive(Debug, Error)]
pub enum DependencyError {
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("expected {expected} topic embeddings, got {got}")]
    TopicCount { expected: usize, got: usize },
    #[error("prompt needs 2..={MAX_PROMPT_QUESTIONS} questions, got {0}")]
    PromptSize(usize),
    #[error("oracle call failed after {attempts} attempt(s): {message}")]
    Oracle { attempts: u32, message: String },
    #[error("embedder call failed: {0}")]
    Embedder(String),
    #[error("invalid oracle settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub market_id: String,
    pub topic: Topic,
    pub score: f64,
}

pub trait Embedder: Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, DependencyError>;
}

const KEYWORDS: [&[&str]; 7] = [
    &[
        "politics", "election", "elections", "governor", "president", "presidential", "senate", "vote", "votes",
        "candidate", "democrat", "republican", "congress", "primary",
    ],
    &["economy", "inflation", "rate", "rates", "gdp", "fed", "recession", "unemployment", "cpi"],
    &["technology", "ai", "chip", "release", "software", "launch", "product", "iphone", "openai"],
    &["crypto", "bitcoin", "btc", "ethereum", "eth", "token", "solana", "exchange", "coin"],
    &["twitter", "tweet", "tweets", "post", "posts", "elon", "x.com"],
    &["culture", "award", "awards", "film", "festival", "movie", "oscar", "album", "music", "grammy"],
    &["sports", "league", "match", "championship", "nba", "nfl", "game", "final", "cup", "season"],
];

/// Keyword-count embedder: one axis per topic plus a fallback axis that is
/// set only when no keyword matches, so unclassifiable text is orthogonal to
/// every topic. Topic names embed to their own axis.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordEmbedder;

impl Embedder for KeywordEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, DependencyError> {
        let mut v = vec![0.0; KEYWORDS.len() + 1];
        for word in text
            .to_lowercase()
            .split(|c: char| !(c.is_alphanumeric() || c == '.'))
            .map(|w| w.trim_matches('.'))
        {
            for (axis, words) in KEYWORDS.iter().enumerate() {
                if words.contains(&word) {
                    v[axis] += 1.0;
                }
            }
        }
        if v.iter().all(|x| *x == 0.0) {
            v[KEYWORDS.len()] = 1.0;
        }
        Ok(v)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, DependencyError> {
    if a.len() != b.len() {
        return Err(DependencyError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(DependencyError::ZeroNorm);
    }
    Ok(dot / (na * nb))
}

/// Argmax-cosine topic; `topic_embeddings` follows `Topic::ALL` order and
/// ties go to the earlier topic.
pub fn assign_topic(question: &[f64], topic_embeddings: &[Vec<f64>]) -> Result<(Topic, f64), DependencyError> {
    if topic_embeddings.len() != Topic::ALL.len() {
        return Err(DependencyError::TopicCount {
            expected: Topic::ALL.len(),
            got: topic_embeddings.len(),
        });
    }
    let mut best = (Topic::ALL[0], f64::NEG_INFINITY);
    for (topic, emb) in Topic::ALL.iter().zip(topic_embeddings) {
        let s = cosine(question, emb)?;
        if s > best.1 {
            best = (*topic, s);
        }
    }
    Ok(best)
}

pub fn topic_embeddings(embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>, DependencyError> {
    Topic::ALL.iter().map(|t| embedder.embed(t.as_str())).collect()
}

/// Text embedded for a market: its condition questions, one per line.
pub fn market_text(market: &Market) -> String {
    market
        .conditions
        .iter()
        .map(|c| c.question.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Assigns and stores a topic on every market.
pub fn assign_topics(markets: &mut [Market], embedder: &dyn Embedder) -> Result<Vec<TopicAssignment>, DependencyError> {
    let topics = topic_embeddings(embedder)?;
    let embedded: Vec<Vec<f64>> = markets
        .par_iter()
        .map(|m| embedder.embed(&market_text(m)))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(markets.len());
    for (m, e) in markets.iter_mut().zip(embedded) {
        let (topic, score) = assign_topic(&e, &topics)?;
        m.topic = Some(topic);
        out.push(TopicAssignment {
            market_id: m.key().to_string(),
            topic,
            score,
        });
    }
    Ok(out)
}

/// Index pairs `(i, j)` of markets sharing topic and canonical end date,
/// grouped by (topic, date) and ordered by market key within a group.
/// Markets without a topic are skipped.
pub fn candidate_pairs(markets: &[Market]) -> Vec<(usize, usize)> {
    let mut groups: BTreeMap<(Topic, NaiveDate), Vec<usize>> = BTreeMap::new();
    for (i, m) in markets.iter().enumerate() {
        if let Some(t) = m.topic {
            groups.entry((t, m.canonical_end_date)).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for members in groups.values_mut() {
        members.sort_by(|&a, &b| markets[a].key().cmp(markets[b].key()));
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                out.push((a, b));
            }
        }
    }
    out
}

/// Renders the pair-detection prompt for the indexed questions.
pub fn build_prompt<S: AsRef<str>>(questions: &[S]) -> Result<String, DependencyError> {
    let n = questions.len();
    if !(2..=MAX_PROMPT_QUESTIONS).contains(&n) {
        return Err(DependencyError::PromptSize(n));
    }
    let mut p = String::from(
        "You are given a set of binary (True/False) questions. Your task is to determine all valid logical \
         combinations of truth values these questions can take.\n\nRules:\n\
         - Each tuple represents a possible valid assignment of truth values.\n",
    );
    p.push_str(&format!(
        "- Each tuple must contain exactly {n} values, corresponding to the listed questions.\n"
    ));
    p.push_str(
        "- The output must be a JSON array where each entry is a list of Boolean values.\n\
         - The output must be valid JSON and contain no additional text.\n\nQuestions:\n",
    );
    for (idx, q) in questions.iter().enumerate() {
        p.push_str(&format!("- ({idx}) {}\n", q.as_ref()));
    }
    p.push_str(concat!(
        "\n\n",
        "    **Expected Output Format:**\n",
        "    ```json\n",
        "    {\n",
        "      \"valid_combinations\": [\n",
        "        [true, false, ...],\n",
        "        [false, true, ...],\n",
        "        ...]\n",
        "    }\n",
        "    ```\n",
        "    Ensure the output is strictly formatted as JSON without any additional explanation or formatting artifacts.\n",
    ));
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    NoParse,
    InvalidShape,
    Independent,
    Dependent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResponse {
    pub raw: String,
    /// Extracted vectors, deduplicated; absent only for `NoParse`.
    pub parsed: Option<Vec<Vec<bool>>>,
    /// The validated space, present for `Independent` and `Dependent`.
    pub space: Option<OutcomeSpace>,
    pub verdict: Verdict,
    /// Why the shape was rejected.
    pub reason: Option<String>,
}

fn as_bool_rows(v: &Value) -> Option<Vec<Vec<bool>>> {
    v.as_array()?
        .iter()
        .map(|row| row.as_array()?.iter().map(Value::as_bool).collect::<Option<Vec<bool>>>())
        .collect()
}

/// First complete JSON value starting at byte `at`, if any.
fn value_at(raw: &str, at: usize) -> Option<Value> {
    serde_json::Deserializer::from_str(&raw[at..])
        .into_iter::<Value>()
        .next()?
        .ok()
}

/// Pulls the boolean rows out of a response that may be fenced or wrapped
/// in prose: the first array under `"valid_combinations"`, else the first
/// bare array of boolean lists.
pub fn extract_vectors(raw: &str) -> Option<Vec<Vec<bool>>> {
    const KEY: &str = "\"valid_combinations\"";
    for (pos, _) in raw.match_indices(KEY) {
        let rest = &raw[pos + KEY.len()..];
        let Some(colon) = rest.find(|c: char| !c.is_whitespace()).filter(|&i| rest[i..].starts_with(':')) else {
            continue;
        };
        let after = pos + KEY.len() + colon + 1;
        let Some(open) = raw[after..].find(|c: char| !c.is_whitespace()) else {
            continue;
        };
        if let Some(rows) = value_at(raw, after + open).as_ref().and_then(as_bool_rows) {
            return Some(rows);
        }
    }
    for (pos, _) in raw.match_indices('[') {
        if let Some(rows) = value_at(raw, pos).as_ref().and_then(as_bool_rows) {
            return Some(rows);
        }
    }
    None
}

/// Checks an oracle reply for a pair with `n` and `m` outcomes: (i) it
/// parses, (ii) every vector has exactly one true per market, and (iii)
/// there are at most `n + m` vectors. Only then is it classified.
pub fn validate_oracle_output(raw: &str, n: usize, m: usize) -> OracleResponse {
    let mut resp = OracleResponse {
        raw: raw.to_string(),
        parsed: None,
        space: None,
        verdict: Verdict::NoParse,
        reason: None,
    };
    let Some(rows) = extract_vectors(raw) else {
        return resp;
    };
    let mut seen = BTreeSet::new();
    let rows: Vec<Vec<bool>> = rows.into_iter().filter(|r| seen.insert(r.clone())).collect();
    resp.parsed = Some(rows.clone());
    resp.verdict = Verdict::InvalidShape;
    let reason = if n == 0 || m == 0 {
        Some("both markets need at least one outcome".to_string())
    } else if rows.is_empty() {
        Some("no vectors".to_string())
    } else if let Some(i) = rows.iter().position(|r| r.len() != n + m) {
        Some(format!("vector {i} has {} values, expected {}", rows[i].len(), n + m))
    } else if let Some(i) = rows.iter().position(|r| {
        r[..n].iter().filter(|b| **b).count() != 1 || r[n..].iter().filter(|b| **b).count() != 1
    }) {
        Some(format!("vector {i} does not have exactly one true per market"))
    } else if rows.len() > n + m {
        Some(format!("{} vectors exceed the n+m bound of {}", rows.len(), n + m))
    } else {
        None
    };
    if let Some(r) = reason {
        resp.reason = Some(r);
        return resp;
    }
    let space = OutcomeSpace::new(rows.into_iter().map(ResolutionVector).collect(), Arity::Pair(n, m));
    match space.and_then(|s| classify_pair(&s, n, m).map(|d| (s, d))) {
        Ok((s, d)) => {
            resp.verdict = match d {
                Dependence::Independent => Verdict::Independent,
                Dependence::Dependent => Verdict::Dependent,
            };
            resp.space = Some(s);
        }
        Err(e) => resp.reason = Some(e.to_string()),
    }
    resp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub pair_id: String,
    pub prompt: String,
    pub n: usize,
    pub m: usize,
}

pub trait Oracle: Sync {
    fn complete(&self, request: &OracleRequest) -> Result<String, DependencyError>;
}

/// Replays canned responses by pair id. Unknown pairs get the full product
/// space, i.e. an "independent" answer.
#[derive(Debug, Clone, Default)]
pub struct ReplayOracle {
    responses: HashMap<String, String>,
}

impl ReplayOracle {
    pub fn new(responses: impl IntoIterator<Item = (String, String)>) -> Self {
        ReplayOracle {
            responses: responses.into_iter().collect(),
        }
    }
}

impl Oracle for ReplayOracle {
    fn complete(&self, request: &OracleRequest) -> Result<String, DependencyError> {
        if let Some(r) = self.responses.get(&request.pair_id) {
            return Ok(r.clone());
        }
        let rows: Vec<Vec<bool>> = OutcomeSpace::full_product(request.n, request.m)
            .vectors()
            .iter()
            .map(|v| v.0.clone())
            .collect();
        Ok(serde_json::json!({ "valid_combinations": rows }).to_string())
    }
}

/// Settings for the HTTP adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSettings {
    /// Chat-completions URL; empty selects the replay stub.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub parallelism: usize,
    /// Embeddings URL; empty selects the keyword stub.
    pub embed_endpoint: String,
    pub embed_model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            endpoint: String::new(),
            model: "gpt-4o-mini".into(),
            timeout_secs: 60,
            max_retries: 3,
            parallelism: 4,
            embed_endpoint: String::new(),
            embed_model: "all-mpnet-base-v2".into(),
            api_key: None,
        }
    }
}

/// Environment variables that override [`OracleSettings`].
pub const ORACLE_ENV_VARS: [&str; 8] = [
    "ARBSCAN_ORACLE_URL",
    "ARBSCAN_ORACLE_MODEL",
    "ARBSCAN_ORACLE_TIMEOUT",
    "ARBSCAN_ORACLE_RETRIES",
    "ARBSCAN_ORACLE_PARALLELISM",
    "ARBSCAN_EMBED_URL",
    "ARBSCAN_EMBED_MODEL",
    "ARBSCAN_ORACLE_API_KEY",
];

impl OracleSettings {
    pub fn with_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, DependencyError> {
        let num = |name: &str, v: String| {
            v.parse::<u64>()
                .map_err(|_| DependencyError::Settings(format!("{name} must be a non-negative integer, got {v:?}")))
        };
        if let Some(v) = lookup("ARBSCAN_ORACLE_URL") {
            self.endpoint = v;
        }
        if let Some(v) = lookup("ARBSCAN_ORACLE_MODEL") {
            self.model = v;
        }
        if let Some(v) = lookup("ARBSCAN_ORACLE_TIMEOUT") {
            self.timeout_secs = num("ARBSCAN_ORACLE_TIMEOUT", v)?;
        }
        if let Some(v) = lookup("ARBSCAN_ORACLE_RETRIES") {
            self.max_retries = num("ARBSCAN_ORACLE_RETRIES", v)? as u32;
        }
        if let Some(v) = lookup("ARBSCAN_ORACLE_PARALLELISM") {
            self.parallelism = num("ARBSCAN_ORACLE_PARALLELISM", v)? as usize;
        }
        if let Some(v) = lookup("ARBSCAN_EMBED_URL") {
            self.embed_endpoint = v;
        }
        if let Some(v) = lookup("ARBSCAN_EMBED_MODEL") {
            self.embed_model = v;
        }
        if let Some(v) = lookup("ARBSCAN_ORACLE_API_KEY") {
            self.api_key = Some(v);
        }
        if self.parallelism == 0 {
            return Err(DependencyError::Settings("parallelism must be at least 1".into()));
        }
        Ok(self)
    }
}

struct HttpClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    max_retries: u32,
}

impl HttpClient {
    fn new(s: &OracleSettings) -> Self {
        HttpClient {
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(s.timeout_secs.max(1)))
                .build(),
            api_key: s.api_key.clone(),
            max_retries: s.max_retries,
        }
    }

    /// POSTs `body`, retrying transport errors, 429 and 5xx with exponential backoff.
    fn post(&self, url: &str, body: &Value) -> Result<Value, (u32, String)> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.agent.post(url).set("Content-Type", "application/json");
            if let Some(k) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {k}"));
            }
            let err = match req.send_json(body.clone()) {
                Ok(resp) => return resp.into_json::<Value>().map_err(|e| (attempt, e.to_string())),
                Err(ureq::Error::Status(code, _)) if code != 429 && code < 500 => {
                    return Err((attempt, format!("HTTP {code}")))
                }
                Err(e) => e.to_string(),
            };
            if attempt > self.max_retries {
                return Err((attempt, err));
            }
            std::thread::sleep(Duration::from_millis(250 << attempt.min(6)));
        }
    }
}

/// OpenAI-compatible chat-completions oracle.
pub struct HttpOracle {
    client: HttpClient,
    endpoint: String,
    model: String,
}

impl HttpOracle {
    pub fn new(settings: &OracleSettings) -> Self {
        HttpOracle {
            client: HttpClient::new(settings),
            endpoint: settings.endpoint.clone(),
            model: settings.model.clone(),
        }
    }
}

impl Oracle for HttpOracle {
    fn complete(&self, request: &OracleRequest) -> Result<String, DependencyError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        let v = self
            .client
            .post(&self.endpoint, &body)
            .map_err(|(attempts, message)| DependencyError::Oracle { attempts, message })?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| DependencyError::Oracle {
                attempts: 1,
                message: "response has no choices[0].message.content".into(),
            })
    }
}

/// OpenAI-compatible embeddings endpoint.
pub struct HttpEmbedder {
    client: HttpClient,
    endpoint: String,
    model: String,
}

impl HttpEmbedder {
    pub fn new(settings: &OracleSettings) -> Self {
        HttpEmbedder {
            client: HttpClient::new(settings),
            endpoint: settings.embed_endpoint.clone(),
            model: settings.embed_model.clone(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, DependencyError> {
        let body = serde_json::json!({ "model": self.model, "input": text });
        let v = self
            .client
            .post(&self.endpoint, &body)
            .map_err(|(_, m)| DependencyError::Embedder(m))?;
        v.pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect())
            .ok_or_else(|| DependencyError::Embedder("response has no data[0].embedding".into()))
    }
}

/// A dependent pair ready for combinatorial detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedPair {
    pub pair_id: String,
    pub left: String,
    pub right: String,
    pub left_outcomes: Vec<Outcome>,
    pub right_outcomes: Vec<Outcome>,
    pub subsets: Vec<DependentSubsets>,
}

/// One line of the discovery report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub pair_id: String,
    pub verdict: Verdict,
    pub n: usize,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<bool>>>,
    pub dependent_subsets: Vec<DependentSubsets>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub pair_id: String,
    pub left_questions: Vec<String>,
    pub right_questions: Vec<String>,
    pub vectors: Vec<Vec<bool>>,
    pub dependent_subsets: Vec<DependentSubsets>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFailure {
    pub pair_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Discovery {
    /// Sorted by pair id.
    pub records: Vec<DiscoveryRecord>,
    pub certified: Vec<CertifiedPair>,
    /// Every dependent pair, for manual checking.
    pub review: Vec<ReviewItem>,
    pub failures: Vec<OracleFailure>,
}

impl Discovery {
    pub fn count(&self, v: Verdict) -> usize {
        self.records.iter().filter(|r| r.verdict == v).count()
    }
}

const NAME_STOPWORDS: [&str; 8] = ["Will", "NOT", "OTHER", "OR", "The", "Yes", "No", "AND"];

fn proper_names(questions: &[String]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for q in questions {
        for w in q.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let capitalized = w.chars().next().is_some_and(char::is_uppercase) && w.chars().skip(1).any(char::is_lowercase);
            if capitalized && !NAME_STOPWORDS.contains(&w) {
                out.insert(w.to_string());
            }
        }
    }
    out
}

/// Known false-positive patterns worth a reviewer's attention.
fn review_flags(left: &[Outcome], right: &[Outcome]) -> Vec<String> {
    let mut flags = Vec::new();
    if left.iter().chain(right).any(|o| o.catch_all) {
        flags.push("catch_all".to_string());
    }
    let q = |os: &[Outcome]| os.iter().map(|o| o.question.clone()).collect::<Vec<_>>();
    let shared: Vec<String> = proper_names(&q(left)).intersection(&proper_names(&q(right))).cloned().collect();
    if !shared.is_empty() {
        flags.push(format!("shared_names:{}", shared.join("|")));
    }
    flags
}

/// Runs the oracle over candidate pairs with at most `parallelism` calls in
/// flight. Markets with more than `k` conditions are reduced first. Output
/// order does not depend on completion order.
pub fn discover(
    markets: &[Market],
    pairs: &[(usize, usize)],
    oracle: &dyn Oracle,
    parallelism: usize,
    k: usize,
) -> Discovery {
    let k = if k == 0 { DEFAULT_REDUCE_K } else { k };
    let job = |&(a, b): &(usize, usize)| {
        let (ma, mb) = (&markets[a], &markets[b]);
        let (l, r) = if ma.key() <= mb.key() { (ma, mb) } else { (mb, ma) };
        let (lo, ro) = (reduce_market(l, k).outcomes(), reduce_market(r, k).outcomes());
        let (n, m) = (lo.len(), ro.len());
        let questions: Vec<&str> = lo.iter().chain(&ro).map(|o| o.question.as_str()).collect();
        let id = pair_id(l.key(), r.key());
        let request = OracleRequest {
            pair_id: id.clone(),
            prompt: build_prompt(&questions).expect("reduced pairs fit the prompt"),
            n,
            m,
        };
        let raw = match oracle.complete(&request) {
            Ok(raw) => raw,
            Err(e) => return Err(OracleFailure { pair_id: id, error: e.to_string() }),
        };
        let resp = validate_oracle_output(&raw, n, m);
        let subsets = match (&resp.space, resp.verdict) {
            (Some(s), Verdict::Dependent) => find_dependent_subsets(s).unwrap_or_default(),
            _ => Vec::new(),
        };
        let flags = if resp.verdict == Verdict::Dependent { review_flags(&lo, &ro) } else { Vec::new() };
        let record = DiscoveryRecord {
            pair_id: id.clone(),
            verdict: resp.verdict,
            n,
            m,
            vectors: resp.parsed.clone(),
            dependent_subsets: subsets.clone(),
            reason: resp.reason.clone(),
            flags: flags.clone(),
        };
        let extra = (resp.verdict == Verdict::Dependent).then(|| {
            let review = ReviewItem {
                pair_id: id.clone(),
                left_questions: lo.iter().map(|o| o.question.clone()).collect(),
                right_questions: ro.iter().map(|o| o.question.clone()).collect(),
                vectors: resp.parsed.clone().unwrap_or_default(),
                dependent_subsets: subsets.clone(),
                flags,
            };
            let certified = (!subsets.is_empty()).then(|| CertifiedPair {
                pair_id: id.clone(),
                left: l.key().to_string(),
                right: r.key().to_string(),
                left_outcomes: lo.clone(),
                right_outcomes: ro.clone(),
                subsets,
            });
            (review, certified)
        });
        Ok((record, extra))
    };

    let results: Vec<_> = match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(|| pairs.par_iter().map(job).collect()),
        Err(_) => pairs.iter().map(job).collect(),
    };
    let mut out = Discovery::default();
    for r in results {
        match r {
            Ok((record, extra)) => {
                out.records.push(record);
                if let Some((review, certified)) = extra {
                    out.review.push(review);
                    out.certified.extend(certified);
                }
            }
            Err(f) => out.failures.push(f),
        }
    }
    out.records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    out.review.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    out.certified.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    out.failures.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_model::Condition;

    fn basis(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; 8];
        v[i] = 1.0;
        v
    }

    fn topics() -> Vec<Vec<f64>> {
        (0..7).map(basis).collect()
    }

    #[test]
    fn identical_embedding_scores_one() {
        let (t, s) = assign_topic(&basis(6), &topics()).unwrap();
        assert_eq!(t, Topic::Sports);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_embedding_falls_back_to_first_topic() {
        let (t, s) = assign_topic(&basis(7), &topics()).unwrap();
        assert_eq!(t, Topic::Politics);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn zero_norm_is_an_error() {
        assert!(matches!(assign_topic(&[0.0; 8], &topics()), Err(DependencyError::ZeroNorm)));
    }

    #[test]
    fn keyword_stub_classifies_election() {
        let e = KeywordEmbedder;
        let t = topic_embeddings(&e).unwrap();
        let q = e.embed("Who wins the 2024 election?").unwrap();
        assert_eq!(assign_topic(&q, &t).unwrap().0, Topic::Politics);
        let q = e.embed("Will the Celtics win the NBA championship?").unwrap();
        assert_eq!(assign_topic(&q, &t).unwrap().0, Topic::Sports);
    }

    #[test]
    fn prompt_indexes_questions() {
        let p = build_prompt(&["A?", "B?", "C?"]).unwrap();
        for l in ["- (0) A?", "- (1) B?", "- (2) C?"] {
            assert!(p.contains(l), "{l}");
        }
        assert!(p.contains("exactly 3 values"));
        assert!(p.contains("\"valid_combinations\""));
        assert!(matches!(build_prompt::<&str>(&[]), Err(DependencyError::PromptSize(0))));
        assert!(matches!(build_prompt(&["q"; 11]), Err(DependencyError::PromptSize(11))));
    }

    fn rows_json(rows: &[&[u8]]) -> String {
        let v: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|b| *b == 1).collect()).collect();
        serde_json::to_string(&v).unwrap()
    }

    #[test]
    fn product_space_is_independent() {
        let raw = rows_json(&[&[1, 0, 1, 0], &[1, 0, 0, 1], &[0, 1, 1, 0], &[0, 1, 0, 1]]);
        assert_eq!(validate_oracle_output(&raw, 2, 2).verdict, Verdict::Independent);
    }

    #[test]
    fn exhaustive_enumeration_is_invalid() {
        let rows: Vec<Vec<bool>> = (0..16u32).map(|x| (0..4).map(|i| x >> i & 1 == 1).collect()).collect();
        let raw = serde_json::to_string(&rows).unwrap();
        let r = validate_oracle_output(&raw, 2, 2);
        assert_eq!(r.verdict, Verdict::InvalidShape);
        assert!(r.parsed.is_some() && r.space.is_none());
    }

    #[test]
    fn fenced_and_prose_wrapped_replies_parse() {
        let body = rows_json(&[&[1, 0, 1, 0], &[0, 1, 0, 1], &[1, 0, 0, 1]]);
        let fenced = format!("```json\n{{\"valid_combinations\": {body}}}\n```");
        let prose = format!("Sure! Here are the combinations [see below]:\n{body}\nHope this helps.");
        for raw in [fenced, prose] {
            let r = validate_oracle_output(&raw, 2, 2);
            assert_eq!(r.verdict, Verdict::Dependent, "{raw}");
            assert_eq!(r.parsed.unwrap().len(), 3);
        }
    }

    #[test]
    fn unparseable_reply() {
        let r = validate_oracle_output("I cannot answer that.", 2, 2);
        assert_eq!(r.verdict, Verdict::NoParse);
        assert!(r.parsed.is_none());
        let r = validate_oracle_output("{\"valid_combinations\": [[true, \"no\"]]}", 2, 2);
        assert_eq!(r.verdict, Verdict::NoParse);
    }

    #[test]
    fn shape_violations() {
        let two_true = rows_json(&[&[1, 1, 1, 0]]);
        assert_eq!(validate_oracle_output(&two_true, 2, 2).verdict, Verdict::InvalidShape);
        let short = rows_json(&[&[1, 0, 1]]);
        assert_eq!(validate_oracle_output(&short, 2, 2).verdict, Verdict::InvalidShape);
        assert_eq!(validate_oracle_output("[]", 2, 2).verdict, Verdict::InvalidShape);
    }

    fn market(id: &str, topic: Topic, date: (i32, u32, u32)) -> Market {
        let c = Condition {
            condition_id: id.into(),
            question: format!("{id}?"),
            yes_token: format!("{id}y"),
            no_token: format!("{id}n"),
            end_date: NaiveDate::from_ymd_opt(date.0, date.1, date.2).unwrap(),
            total_volume: 0.0,
        };
        let mut m = Market::new(None, vec![c], NaiveDate::from_ymd_opt(date.0, date.1, date.2).unwrap()).unwrap();
        m.topic = Some(topic);
        m
    }

    #[test]
    fn pairs_share_topic_and_date() {
        let ms = vec![
            market("a", Topic::Sports, (2024, 1, 1)),
            market("b", Topic::Sports, (2024, 1, 1)),
            market("c", Topic::Sports, (2024, 1, 1)),
            market("d", Topic::Sports, (2024, 1, 2)),
            market("e", Topic::Crypto, (2024, 1, 1)),
        ];
        let pairs = candidate_pairs(&ms);
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn replay_oracle_falls_back_to_product() {
        let o = ReplayOracle::new([("p".to_string(), "[[true]]".to_string())]);
        let req = |id: &str| OracleRequest {
            pair_id: id.into(),
            prompt: String::new(),
            n: 2,
            m: 2,
        };
        assert_eq!(o.complete(&req("p")).unwrap(), "[[true]]");
        let r = validate_oracle_output(&o.complete(&req("q")).unwrap(), 2, 2);
        assert_eq!(r.verdict, Verdict::Independent);
    }

    #[test]
    fn env_overrides() {
        let env = HashMap::from([("ARBSCAN_ORACLE_TIMEOUT", "5"), ("ARBSCAN_ORACLE_URL", "http://x")]);
        let s = OracleSettings::default()
            .with_env(|k| env.get(k).map(|v| v.to_string()))
            .unwrap();
        assert_eq!((s.timeout_secs, s.endpoint.as_str()), (5, "http://x"));
        let bad = HashMap::from([("ARBSCAN_ORACLE_RETRIES", "many")]);
        assert!(OracleSettings::default().with_env(|k| bad.get(k).map(|v| v.to_string())).is_err());
    }
}
