//! Run configuration: defaults, then preset, then TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use arbscan_core::attribution::AttributionParams;
use arbscan_core::dependency::OracleSettings;
use arbscan_core::detect::DetectParams;
use arbscan_core::ingest::synth::SynthConfig;
use arbscan_core::ingest::DEFAULT_MIN_BID_USDC;
use arbscan_core::market_model::{Topic, DEFAULT_REDUCE_K};
use arbscan_core::pricing::DEFAULT_CARRY_LIMIT;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 2-cent profit bound used for the opportunity plots.
    Figure5,
}

/// The file layout. Every section and field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub topics: Option<Vec<Topic>>,
    #[serde(default)]
    pub paths: PathsFile,
    #[serde(default)]
    pub detect: DetectFile,
    #[serde(default)]
    pub pricing: PricingFile,
    #[serde(default)]
    pub attribution: AttributionFile,
    #[serde(default)]
    pub ingest: IngestFile,
    #[serde(default)]
    pub discovery: DiscoveryFile,
    pub oracle: Option<OracleSettings>,
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsFile {
    pub events: Option<PathBuf>,
    pub descriptors: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub oracle_fixtures: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectFile {
    pub determined_threshold: Option<f64>,
    pub min_profit_per_dollar: Option<f64>,
    pub min_prob_for_sizing: Option<f64>,
    pub window: Option<u64>,
    pub budget_cap: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingFile {
    pub carry_limit: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionFile {
    pub window: Option<u64>,
    pub epsilon: Option<f64>,
    pub min_bid_usdc: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestFile {
    pub lenient: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryFile {
    pub reduce_k: Option<usize>,
}

/// Flag-level overrides, applied last.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for stage artifacts.
    #[arg(long = "out", global = true)]
    pub out_dir: Option<PathBuf>,
    /// Raw event log (CSV or JSON lines).
    #[arg(long, global = true)]
    pub events: Option<PathBuf>,
    /// Market descriptor file (JSON lines).
    #[arg(long, global = true)]
    pub descriptors: Option<PathBuf>,
    /// Canned oracle responses (JSON lines of {pair_id, response}).
    #[arg(long, global = true)]
    pub oracle_fixtures: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Minimum profit per dollar for an opportunity.
    #[arg(long, global = true)]
    pub min_profit: Option<f64>,
    /// VWAP window in blocks.
    #[arg(long, global = true)]
    pub window: Option<u64>,
    /// Blocks a price carries forward without a trade.
    #[arg(long, global = true)]
    pub carry_limit: Option<u64>,
    /// Maximum gap between bids of one episode, in blocks.
    #[arg(long, global = true)]
    pub episode_window: Option<u64>,
    /// YES price above which a market counts as determined.
    #[arg(long, global = true)]
    pub determined_threshold: Option<f64>,
    /// Probability floor for supply-based sizing and leg estimation.
    #[arg(long, global = true)]
    pub sizing_floor: Option<f64>,
    /// Caps sized profit at this much capital times the deviation.
    #[arg(long, global = true)]
    pub budget_cap: Option<f64>,
    /// Skip malformed event lines instead of failing.
    #[arg(long, global = true)]
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Paths {
    pub events: Option<PathBuf>,
    pub descriptors: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub oracle_fixtures: Option<PathBuf>,
}

/// Effective configuration. Its JSON form is what the manifest hashes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Option<Preset>,
    pub topics: Vec<Topic>,
    pub paths: Paths,
    pub detect: DetectParams,
    pub carry_limit: u64,
    pub attribution: AttributionParams,
    pub min_bid_usdc: f64,
    pub lenient: bool,
    pub reduce_k: usize,
    pub oracle: OracleSettings,
    pub synth: SynthConfig,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunConfig {
    pub fn load(o: &Overrides, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let file = match &o.config {
            Some(p) => read_config_file(p)?,
            None => ConfigFile::default(),
        };
        Self::resolve(file, o, env)
    }

    pub fn resolve(file: ConfigFile, o: &Overrides, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let preset = o.preset.or(file.preset);
        let mut detect = match preset {
            Some(Preset::Figure5) => DetectParams::figure5(),
            None => DetectParams::default(),
        };
        let d = file.detect;
        set(&mut detect.determined_threshold, d.determined_threshold);
        set(&mut detect.min_profit_per_dollar, d.min_profit_per_dollar);
        set(&mut detect.min_prob_for_sizing, d.min_prob_for_sizing);
        set(&mut detect.window, d.window);
        if d.budget_cap.is_some() {
            detect.budget_cap = d.budget_cap;
        }
        set(&mut detect.determined_threshold, o.determined_threshold);
        set(&mut detect.min_profit_per_dollar, o.min_profit);
        set(&mut detect.min_prob_for_sizing, o.sizing_floor);
        set(&mut detect.window, o.window);
        if o.budget_cap.is_some() {
            detect.budget_cap = o.budget_cap;
        }
        detect.validate().context("invalid detection parameters")?;

        let mut attribution = AttributionParams {
            min_prob_for_sizing: detect.min_prob_for_sizing,
            ..AttributionParams::default()
        };
        set(&mut attribution.window, file.attribution.window);
        set(&mut attribution.epsilon, file.attribution.epsilon);
        set(&mut attribution.window, o.episode_window);
        if attribution.window == 0 {
            bail!("episode window must be positive");
        }
        if !(attribution.epsilon >= 0.0) {
            bail!("attribution epsilon must be non-negative");
        }
        let min_bid_usdc = file.attribution.min_bid_usdc.unwrap_or(DEFAULT_MIN_BID_USDC);

        let mut carry_limit = file.pricing.carry_limit.unwrap_or(DEFAULT_CARRY_LIMIT);
        set(&mut carry_limit, o.carry_limit);

        let oracle = file
            .oracle
            .unwrap_or_default()
            .with_env(&env)
            .context("invalid oracle settings")?;

        let paths = Paths {
            events: o.events.clone().or(file.paths.events),
            descriptors: o.descriptors.clone().or(file.paths.descriptors),
            out_dir: o.out_dir.clone().or(file.paths.out_dir).unwrap_or_else(|| PathBuf::from("out")),
            oracle_fixtures: o.oracle_fixtures.clone().or(file.paths.oracle_fixtures),
        };

        let topics = file.topics.unwrap_or_else(|| Topic::ALL.to_vec());
        if topics.is_empty() {
            bail!("topic list is empty");
        }

        Ok(RunConfig {
            seed: o.seed.or(file.seed).unwrap_or(0),
            preset,
            topics,
            paths,
            detect,
            carry_limit,
            attribution,
            min_bid_usdc,
            lenient: o.lenient || file.ingest.lenient.unwrap_or(false),
            reduce_k: file.discovery.reduce_k.unwrap_or(DEFAULT_REDUCE_K),
            oracle,
            synth: file.synth.unwrap_or_default(),
        })
    }
}

fn read_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn layering_order() {
        let file: ConfigFile = toml::from_str(
            "preset = \"figure5\"\n[detect]\nwindow = 3\n[pricing]\ncarry_limit = 10\n",
        )
        .unwrap();
        let o = Overrides {
            carry_limit: Some(20),
            ..Default::default()
        };
        let c = RunConfig::resolve(file, &o, no_env).unwrap();
        assert_eq!(c.detect.min_profit_per_dollar, 0.02);
        assert_eq!(c.detect.window, 3);
        assert_eq!(c.carry_limit, 20);
    }

    #[test]
    fn sizing_floor_reaches_attribution() {
        let o = Overrides {
            sizing_floor: Some(0.03),
            ..Default::default()
        };
        let c = RunConfig::resolve(ConfigFile::default(), &o, no_env).unwrap();
        assert_eq!(c.attribution.min_prob_for_sizing, 0.03);
    }

    #[test]
    fn rejects_bad_params() {
        let o = Overrides {
            determined_threshold: Some(1.5),
            ..Default::default()
        };
        assert!(RunConfig::resolve(ConfigFile::default(), &o, no_env).is_err());
        assert!(toml::from_str::<ConfigFile>("[detect]\nbogus = 1\n").is_err());
    }
}
