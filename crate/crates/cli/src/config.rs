//! Per-scan TOML configuration.
//!
//! ```toml
//! scan_dir = "scan/slices"
//! layout = "scan/layout.csv"
//! alignment = "scan/alignment.txt"   # the five-value text file
//!
//! [thresholds]
//! a_divider = 8000
//! b_divider = 22000
//! # a_object defaults to b_divider, b_object to no upper bound
//!
//! [tiers]
//! cuts = [26, 53]                    # optional override
//!
//! [[grid]]                           # optional, per tier
//! tier = 2
//! rotation_deg = 1.5
//!
//! [run]
//! max_memory = "16GiB"
//! workers = 4
//! isolevel = 22000
//! pad = 3
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use ctpack_core::segmentation::ThresholdSet;
use ctpack_core::volume_io::{AlignmentParams, DEFAULT_RESIDENT_SLICES};
use serde::{Deserialize, Serialize};

use crate::decisions::GridDecision;
use crate::SessionError;

/// Default memory budget: 16 GiB.
pub const DEFAULT_MAX_MEMORY: u64 = 16 << 30;
pub const DEFAULT_PAD: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scan_dir: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub thresholds: Option<ThresholdConfig>,
    pub tiers: Option<TierConfig>,
    #[serde(default)]
    pub grid: Vec<GridDecision>,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub a_divider: f64,
    pub b_divider: f64,
    pub a_object: Option<f64>,
    pub b_object: Option<f64>,
}

impl ThresholdConfig {
    pub fn to_set(self) -> Result<ThresholdSet, SessionError> {
        let a_object = self.a_object.unwrap_or(self.b_divider);
        let b_object = self.b_object.unwrap_or(f64::INFINITY);
        Ok(ThresholdSet::new(self.a_divider, self.b_divider, a_object, b_object)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierConfig {
    pub cuts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub max_memory: Option<MemorySize>,
    pub workers: Option<usize>,
    pub resident_slices: Option<usize>,
    pub isolevel: Option<f64>,
    pub pad: Option<usize>,
}

/// Byte count written either as an integer or as text like `"512MiB"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "toml::Value")]
pub struct MemorySize(pub u64);

impl TryFrom<toml::Value> for MemorySize {
    type Error = String;

    fn try_from(v: toml::Value) -> Result<Self, String> {
        match v {
            toml::Value::Integer(n) if n > 0 => Ok(MemorySize(n as u64)),
            toml::Value::String(s) => parse_memory(&s).map(MemorySize),
            other => Err(format!("expected a byte count, found {other}")),
        }
    }
}

/// Parses `"16GiB"`, `"512 MB"`, `"1048576"`; binary and decimal suffixes.
pub fn parse_memory(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num.parse().map_err(|_| format!("bad memory size {text:?}"))?;
    let mult: f64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1.0,
        "k" | "kb" => 1e3,
        "m" | "mb" => 1e6,
        "g" | "gb" => 1e9,
        "kib" => 1024.0,
        "mib" => 1024.0 * 1024.0,
        "gib" => (1u64 << 30) as f64,
        "tib" => (1u64 << 40) as f64,
        other => return Err(format!("unknown memory unit {other:?}")),
    };
    let bytes = value * mult;
    if bytes.is_nan() || bytes < 1.0 {
        return Err(format!("memory size {text:?} must be positive"));
    }
    Ok(bytes as u64)
}

/// A config with paths resolved and decisions loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scan_dir: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub alignment: Option<AlignmentParams>,
    pub thresholds: Option<ThresholdSet>,
    pub tier_cuts: Option<Vec<usize>>,
    pub grid: Vec<GridDecision>,
    pub max_memory: u64,
    pub workers: Option<usize>,
    pub resident_slices: usize,
    pub isolevel: Option<f64>,
    pub pad: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            scan_dir: None,
            layout: None,
            out: None,
            alignment: None,
            thresholds: None,
            tier_cuts: None,
            grid: Vec::new(),
            max_memory: DEFAULT_MAX_MEMORY,
            workers: None,
            resident_slices: DEFAULT_RESIDENT_SLICES,
            isolevel: None,
            pad: DEFAULT_PAD,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = fs::read_to_string(path).map_err(SessionError::io(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            SessionError::Config(msg) => SessionError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, SessionError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        let alignment = match resolve(file.alignment) {
            Some(p) => {
                let text = fs::read_to_string(&p).map_err(SessionError::io(&p))?;
                Some(AlignmentParams::parse(&text)?)
            }
            None => None,
        };
        let thresholds = file.thresholds.map(ThresholdConfig::to_set).transpose()?;
        let defaults = Config::default();
        Ok(Self {
            scan_dir: resolve(file.scan_dir),
            layout: resolve(file.layout),
            out: resolve(file.out),
            alignment,
            thresholds,
            tier_cuts: file.tiers.and_then(|t| t.cuts),
            grid: file.grid,
            max_memory: file.run.max_memory.map_or(defaults.max_memory, |m| m.0),
            workers: file.run.workers,
            resident_slices: file.run.resident_slices.unwrap_or(defaults.resident_slices).max(1),
            isolevel: file.run.isolevel,
            pad: file.run.pad.unwrap_or(defaults.pad),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_sizes() {
        assert_eq!(parse_memory("16GiB").unwrap(), 16 << 30);
        assert_eq!(parse_memory("512 MB").unwrap(), 512_000_000);
        assert_eq!(parse_memory("1048576").unwrap(), 1 << 20);
        assert_eq!(parse_memory("1.5kib").unwrap(), 1536);
        assert!(parse_memory("lots").is_err());
        assert!(parse_memory("0").is_err());
        assert!(parse_memory("3 parsecs").is_err());
    }

    #[test]
    fn full_config_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("align.txt"), "-3.7 40 560 40 560\n").unwrap();
        let text = r#"
            scan_dir = "slices"
            layout = "/abs/layout.csv"
            alignment = "align.txt"
            [thresholds]
            a_divider = 8000
            b_divider = 22000
            [tiers]
            cuts = [26, 53]
            [[grid]]
            tier = 2
            rotation_deg = 1.5
            row_cuts = [10.0, 80.5, 150.0, 214.0]
            [run]
            max_memory = "2GiB"
            workers = 3
            pad = 4
        "#;
        let c = Config::parse(text, dir.path()).unwrap();
        assert_eq!(c.scan_dir, Some(dir.path().join("slices")));
        assert_eq!(c.layout, Some(PathBuf::from("/abs/layout.csv")));
        assert_eq!(c.alignment.unwrap().angle_deg, -3.7);
        let t = c.thresholds.unwrap();
        assert_eq!((t.a_divider, t.b_divider, t.a_object), (8000.0, 22000.0, 22000.0));
        assert!(t.b_object.is_infinite());
        assert_eq!(c.tier_cuts, Some(vec![26, 53]));
        assert_eq!(c.grid.len(), 1);
        assert_eq!(c.grid[0].tier, 2);
        assert_eq!(c.grid[0].rotation_deg, Some(1.5));
        assert_eq!(c.grid[0].col_cuts, None);
        assert_eq!(c.max_memory, 2 << 30);
        assert_eq!(c.workers, Some(3));
        assert_eq!(c.pad, 4);
        assert_eq!(c.resident_slices, DEFAULT_RESIDENT_SLICES);
    }

    #[test]
    fn empty_config_uses_defaults() {
        let c = Config::parse("", Path::new(".")).unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.max_memory, 16 << 30);
    }

    #[test]
    fn bad_values_rejected() {
        let base = Path::new(".");
        assert!(Config::parse("unknown = 1", base).is_err());
        assert!(Config::parse("[thresholds]\na_divider = 5\nb_divider = 2", base).is_err());
        assert!(Config::parse("[run]\nmax_memory = \"much\"", base).is_err());
        assert!(matches!(
            Config::parse("alignment = \"missing.txt\"", base),
            Err(SessionError::Io { .. })
        ));
    }
}
