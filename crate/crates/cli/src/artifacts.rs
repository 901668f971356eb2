//! Stage artifacts: atomic hashed writes, hashed reads and sidecar manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use arbscan_core::dependency::ORACLE_ENV_VARS;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::config::RunConfig;

pub const MARKETS: &str = "markets.json";
pub const EVENTS: &str = "events.csv";
pub const TOPICS: &str = "topics.jsonl";
pub const PAIRS: &str = "pairs.csv";
pub const DISCOVERY: &str = "discovery.jsonl";
pub const CERTIFIED: &str = "certified.json";
pub const REVIEW: &str = "review_queue.jsonl";
pub const FAILURES: &str = "oracle_failures.jsonl";
pub const PRICES: &str = "prices.csv";
pub const SUPPLY: &str = "supply.csv";
pub const PRICES_META: &str = "prices_meta.json";
pub const OPPORTUNITIES: &str = "opportunities.csv";
pub const ATTRIBUTION: &str = "attribution.csv";
pub const LEADERBOARD: &str = "leaderboard.csv";
pub const LIQUIDITY: &str = "liquidity.csv";
pub const REPORT: &str = "report.json";
pub const SYNTH_EVENTS: &str = "synth_events.csv";
pub const SYNTH_DESCRIPTORS: &str = "synth_descriptors.jsonl";
pub const SYNTH_PLANTED: &str = "synth_planted.jsonl";
pub const SYNTH_FIXTURES: &str = "synth_oracle_fixtures.jsonl";

/// Which command produces each upstream artifact.
fn producer(name: &str) -> &'static str {
    match name {
        MARKETS | EVENTS => "ingest",
        TOPICS => "topics",
        PAIRS => "pairs",
        DISCOVERY | CERTIFIED | REVIEW | FAILURES => "discover",
        PRICES | SUPPLY | PRICES_META => "prices",
        OPPORTUNITIES => "detect",
        ATTRIBUTION | LEADERBOARD => "attribute",
        _ => "synth",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hashes everything read through it.
pub struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
    bytes: u64,
}

impl<R: Read> HashingReader<R> {
    pub fn new(inner: R) -> Self {
        HashingReader {
            inner,
            hasher: Sha256::new(),
            bytes: 0,
        }
    }

    /// Drains what is left so the digest covers the whole source.
    pub fn finish(mut self, path: &Path) -> io::Result<FileDigest> {
        io::copy(&mut self, &mut io::sink())?;
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex(&self.hasher.finalize()),
            bytes: self.bytes,
        })
    }
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }
}

/// A file written under a temporary name and renamed into place on commit.
pub struct AtomicFile {
    path: PathBuf,
    tmp: BufWriter<NamedTempFile>,
    hasher: Sha256,
    bytes: u64,
}

impl AtomicFile {
    pub fn create(path: PathBuf) -> Result<Self> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
        Ok(AtomicFile {
            path,
            tmp: BufWriter::with_capacity(1 << 20, tmp),
            hasher: Sha256::new(),
            bytes: 0,
        })
    }

    pub fn commit(self) -> Result<FileDigest> {
        let tmp = self.tmp.into_inner().map_err(|e| e.into_error())?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(&self.path)
            .with_context(|| format!("renaming into {}", self.path.display()))?;
        Ok(FileDigest {
            path: file_name(&self.path),
            sha256: hex(&self.hasher.finalize()),
            bytes: self.bytes,
        })
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.tmp.write(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.tmp.flush()
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Everything a stage records about its run. No timestamps, so identical
/// inputs give identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub stage: String,
    pub version: &'static str,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub env: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub counts: BTreeMap<String, serde_json::Value>,
}

/// The output directory plus the manifest being assembled for one stage.
pub struct Stage {
    pub dir: PathBuf,
    manifest: Manifest,
}

impl Stage {
    pub fn begin(name: &str, config: &RunConfig, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let dir = config.paths.out_dir.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating output dir {}", dir.display()))?;
        let value = serde_json::to_value(config)?;
        let config_hash = hex(&Sha256::digest(serde_json::to_vec(&value)?));
        Ok(Stage {
            dir,
            manifest: Manifest {
                stage: name.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                config_hash,
                config: value,
                env: redacted_env(env),
                inputs: Vec::new(),
                outputs: Vec::new(),
                counts: BTreeMap::new(),
            },
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of an upstream artifact, or an error naming the command that makes it.
    pub fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            bail!(
                "missing {}: run `arbscan {}` first (output dir {})",
                name,
                producer(name),
                self.dir.display()
            );
        }
        Ok(p)
    }

    pub fn optional(&self, name: &str) -> Option<PathBuf> {
        let p = self.path(name);
        p.is_file().then_some(p)
    }

    pub fn create(&self, name: &str) -> Result<AtomicFile> {
        AtomicFile::create(self.path(name))
    }

    pub fn count(&mut self, key: &str, v: impl Serialize) {
        self.manifest.counts.insert(key.to_string(), serde_json::to_value(v).expect("plain value"));
    }

    pub fn input(&mut self, d: FileDigest) {
        self.manifest.inputs.push(d);
    }

    pub fn output(&mut self, d: FileDigest) {
        self.manifest.outputs.push(d);
    }

    /// Reads a whole small input, recording its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.input(FileDigest {
            path: path.display().to_string(),
            sha256: hex(&Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(bytes)
    }

    /// Opens a large input for streaming; pass the reader back to [`Stage::close_input`].
    pub fn open_input(&self, path: &Path) -> Result<HashingReader<BufReader<File>>> {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(HashingReader::new(BufReader::with_capacity(1 << 20, f)))
    }

    pub fn close_input<R: Read>(&mut self, r: HashingReader<R>, path: &Path) -> Result<()> {
        let d = r.finish(path)?;
        self.input(d);
        Ok(())
    }

    /// Writes one output in full.
    pub fn write_output(&mut self, name: &str, f: impl FnOnce(&mut AtomicFile) -> Result<()>) -> Result<()> {
        let mut file = self.create(name)?;
        f(&mut file)?;
        let d = file.commit()?;
        self.output(d);
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let name = format!("{}.manifest.json", self.manifest.stage);
        let mut f = AtomicFile::create(self.dir.join(&name))?;
        serde_json::to_writer_pretty(&mut f, &self.manifest)?;
        f.write_all(b"\n")?;
        f.commit()?;
        Ok(self.dir.join(name))
    }
}

/// Oracle-related environment, with secrets hidden and URLs stripped of
/// credentials and query strings.
pub fn redacted_env(env: impl Fn(&str) -> Option<String>) -> BTreeMap<String, String> {
    ORACLE_ENV_VARS
        .iter()
        .filter_map(|&k| env(k).map(|v| (k.to_string(), redact(k, &v))))
        .collect()
}

fn redact(key: &str, value: &str) -> String {
    if key.ends_with("API_KEY") {
        return "<redacted>".into();
    }
    if key.ends_with("_URL") {
        let (scheme, rest) = value.split_once("://").unwrap_or(("", value));
        let rest = rest.split(['?', '#']).next().unwrap_or("");
        let (authority, path) = rest.split_at(rest.find('/').unwrap_or(rest.len()));
        let rest = match authority.rsplit_once('@') {
            Some((_, host)) => format!("<redacted>@{host}{path}"),
            None => rest.to_string(),
        };
        return if scheme.is_empty() { rest } else { format!("{scheme}://{rest}") };
    }
    value.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn redaction() {
        assert_eq!(redact("ARBSCAN_ORACLE_API_KEY", "sk-123"), "<redacted>");
        assert_eq!(
            redact("ARBSCAN_ORACLE_URL", "https://user:pw@host/v1/chat?key=abc"),
            "https://<redacted>@host/v1/chat"
        );
        assert_eq!(redact("ARBSCAN_ORACLE_URL", "http://host/v1"), "http://host/v1");
        assert_eq!(redact("ARBSCAN_ORACLE_MODEL", "m"), "m");
    }

    #[test]
    fn atomic_file_is_invisible_until_commit() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("x.txt");
        let mut f = AtomicFile::create(target.clone()).unwrap();
        f.write_all(b"hello").unwrap();
        assert!(!target.exists());
        let d = f.commit().unwrap();
        assert_eq!(std::fs::read(&target).unwrap(), b"hello");
        assert_eq!(d.bytes, 5);
        assert_eq!(d.sha256, hex(&Sha256::digest(b"hello")));
    }

    #[test]
    fn hashing_reader_covers_unread_tail() {
        let mut r = HashingReader::new(&b"abcdef"[..]);
        let mut buf = [0u8; 2];
        r.read_exact(&mut buf).unwrap();
        let d = r.finish(Path::new("x")).unwrap();
        assert_eq!(d.sha256, hex(&Sha256::digest(b"abcdef")));
    }
}
