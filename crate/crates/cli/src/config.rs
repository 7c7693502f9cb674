//! Run configuration: documented defaults, overridden by a JSON config file,
//! overridden again by command-line flags. Every run writes a manifest
//! echoing the resolved values; feeding that manifest back through
//! `--config` reproduces the run byte for byte.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "HABITFORGE_SEED";

/// Fully resolved configuration; serialized into the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    /// Input directory holding members.csv / visits.csv / interventions.csv.
    pub input: PathBuf,
    /// Output directory; created if absent.
    pub out: PathBuf,
    pub seed: u64,
    /// Cluster count for the factorization.
    pub k: usize,
    /// Observation window in membership weeks.
    pub window: u32,
    /// Later window compared against in the transition matrix.
    pub transition_window: u32,
    /// Refit the later window instead of projecting onto fixed components.
    pub refit: bool,
    pub gap_tolerance: u32,
    /// Inclusive week range, `a..b`.
    pub weeks: String,
    pub treatment: String,
    /// `low` / `moderate` / `high` / `gtN` / `all`.
    pub level: String,
    /// Random-common-cause draws (0 disables refutation).
    pub refute: usize,
    /// Rerun causal cells inside each cluster.
    pub per_cluster: bool,
    /// Members generated by the `generate` subcommand.
    pub n: usize,
    /// Cohort admission: contract type and paid flag.
    pub contract_type: String,
    pub paid_only: bool,
    /// Ridge strength for the propensity model.
    pub lambda: f64,
    pub bootstrap_resamples: usize,
    /// Optional caliper on matched score distance.
    pub caliper: Option<f64>,
    /// NMF iteration cap, tolerance, and restart count.
    pub nmf_max_iters: usize,
    pub nmf_tol: f64,
    pub nmf_restarts: usize,
    /// Scale visit rows to unit sum before factorizing.
    pub normalize_rows: bool,
    /// Inclusive age bands for demographic grouping; None = open-ended.
    pub age_bands: Vec<(u32, Option<u32>)>,
    /// Inclusive streak-length bins for gap-position analysis.
    pub survival_bins: Vec<(u32, u32)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::from("."),
            out: PathBuf::from("out"),
            seed: 0,
            k: 5,
            window: 6,
            transition_window: 17,
            refit: false,
            gap_tolerance: 1,
            weeks: "6..17".into(),
            treatment: "pt_sessions".into(),
            level: "all".into(),
            refute: 0,
            per_cluster: false,
            n: 1000,
            contract_type: "annual".into(),
            paid_only: true,
            lambda: 1e-3,
            bootstrap_resamples: 1000,
            caliper: None,
            nmf_max_iters: 400,
            nmf_tol: 1e-9,
            nmf_restarts: 5,
            normalize_rows: false,
            age_bands: habitforge_core::demographics::DEFAULT_AGE_BANDS.to_vec(),
            survival_bins: habitforge_core::survival::DEFAULT_SURVIVAL_BINS.to_vec(),
        }
    }
}

/// Sparse overlay read from `--config` files and built from flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigOverlay {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub window: Option<u32>,
    pub transition_window: Option<u32>,
    pub refit: Option<bool>,
    pub gap_tolerance: Option<u32>,
    pub weeks: Option<String>,
    pub treatment: Option<String>,
    pub level: Option<String>,
    pub refute: Option<usize>,
    pub per_cluster: Option<bool>,
    pub n: Option<usize>,
    pub contract_type: Option<String>,
    pub paid_only: Option<bool>,
    pub lambda: Option<f64>,
    pub bootstrap_resamples: Option<usize>,
    pub caliper: Option<f64>,
    pub nmf_max_iters: Option<usize>,
    pub nmf_tol: Option<f64>,
    pub nmf_restarts: Option<usize>,
    pub normalize_rows: Option<bool>,
    pub age_bands: Option<Vec<(u32, Option<u32>)>>,
    pub survival_bins: Option<Vec<(u32, u32)>>,
}

impl ConfigOverlay {
    fn apply(self, config: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { config.$field = v; })*
            };
        }
        set!(
            input, out, seed, k, window, transition_window, refit, gap_tolerance, weeks,
            treatment, level, refute, per_cluster, n, contract_type, paid_only, lambda,
            bootstrap_resamples, nmf_max_iters, nmf_tol, nmf_restarts, normalize_rows,
            age_bands, survival_bins
        );
        if self.caliper.is_some() {
            config.caliper = self.caliper;
        }
    }
}

/// A config file is either a bare overlay or a previously written manifest
/// (whose `config` object is taken whole).
fn read_config_file(path: &Path) -> Result<ConfigOverlay> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let overlay_value = match value.get("config") {
        Some(inner) => inner.clone(),
        None => value,
    };
    serde_json::from_value(overlay_value)
        .with_context(|| format!("invalid config fields in {}", path.display()))
}

/// Resolution order: defaults, then config file, then flags, with the
/// `HABITFORGE_SEED` environment variable filling in when neither the file
/// nor a flag pinned the seed.
pub fn resolve(config_path: Option<&Path>, flags: ConfigOverlay) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    let mut seed_pinned = false;
    if let Some(path) = config_path {
        let overlay = read_config_file(path)?;
        seed_pinned |= overlay.seed.is_some();
        overlay.apply(&mut config);
    }
    seed_pinned |= flags.seed.is_some();
    flags.apply(&mut config);
    if !seed_pinned {
        if let Ok(env_seed) = std::env::var(SEED_ENV) {
            config.seed = env_seed
                .parse()
                .map_err(|_| anyhow!("{SEED_ENV} must be an integer, got '{env_seed}'"))?;
        }
    }
    Ok(config)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config: RunConfig,
}

/// Writes `manifest_<subcommand>.json` into the output directory.
pub fn write_manifest(subcommand: &str, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out)?;
    let manifest = Manifest {
        subcommand: subcommand.into(),
        config: config.clone(),
    };
    let path = config.out.join(format!("manifest_{subcommand}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Parses the inclusive `a..b` week-range syntax.
pub fn parse_weeks(s: &str) -> Result<std::ops::RangeInclusive<u32>> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow!("week range must look like 6..17, got '{s}'"))?;
    let lo: u32 = a.trim().parse().context("week range start")?;
    let hi: u32 = b.trim().parse().context("week range end")?;
    if lo < 1 || hi < lo {
        return Err(anyhow!("invalid week range {lo}..{hi}"));
    }
    Ok(lo..=hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cfg.json");
        std::fs::write(&file, r#"{"k": 4, "seed": 9}"#).unwrap();
        let flags = ConfigOverlay {
            k: Some(3),
            ..Default::default()
        };
        let cfg = resolve(Some(&file), flags).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.window, 6);
    }

    #[test]
    fn manifest_round_trips_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.out = dir.path().to_path_buf();
        cfg.seed = 1234;
        cfg.k = 7;
        write_manifest("cluster", &cfg).unwrap();
        let path = dir.path().join("manifest_cluster.json");
        let resolved = resolve(Some(&path), ConfigOverlay::default()).unwrap();
        assert_eq!(resolved, cfg);
    }

    #[test]
    fn week_range_syntax() {
        assert_eq!(parse_weeks("6..17").unwrap(), 6..=17);
        assert_eq!(parse_weeks("6..6").unwrap(), 6..=6);
        assert!(parse_weeks("17..6").is_err());
        assert!(parse_weeks("6-17").is_err());
        assert!(parse_weeks("0..5").is_err());
    }
}
