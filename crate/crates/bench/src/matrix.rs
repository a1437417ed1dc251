use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::case::{run_case, CaseConfig, Transport};
use crate::report::{write_subscriber_csv, write_summary_csv, CaseReport};

/// A cartesian grid of cases. Parsed from `key = value` lines; `#` starts a
/// comment and list values are comma-separated.
///
/// ```text
/// sizes = 4096, 65536, 1048576, 4194304
/// subs = 1, 2, 4, 8
/// transports = tzc, copy
/// count = 1000
/// rate = 30
/// policy = medium:5
/// region_size = 0
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixConfig {
    pub sizes: Vec<u64>,
    pub subscribers: Vec<u32>,
    pub transports: Vec<Transport>,
    /// Template for the per-case settings not varied by the grid.
    pub base: CaseConfig,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            sizes: vec![4 << 10, 64 << 10, 1 << 20, 4 << 20],
            subscribers: vec![1, 2, 4, 8],
            transports: vec![Transport::Tzc, Transport::CopyBaseline],
            base: CaseConfig::default(),
        }
    }
}

fn list<T: std::str::FromStr>(value: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|e| anyhow::anyhow!("`{v}`: {e}")))
        .collect()
}

/// Parses `4096`, `64K`, `1M`, `4MB`.
pub fn parse_size(s: &str) -> anyhow::Result<u64> {
    let s = s.trim();
    let upper = s.to_ascii_uppercase();
    let digits = upper.trim_end_matches('B');
    let (num, mul) = match digits.chars().last() {
        Some('K') => (&digits[..digits.len() - 1], 1u64 << 10),
        Some('M') => (&digits[..digits.len() - 1], 1 << 20),
        Some('G') => (&digits[..digits.len() - 1], 1 << 30),
        _ => (digits, 1),
    };
    let n: u64 = num.trim().parse().with_context(|| format!("bad size `{s}`"))?;
    n.checked_mul(mul).with_context(|| format!("size `{s}` overflows"))
}

impl MatrixConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut m = MatrixConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value", n + 1);
            };
            let value = value.trim();
            let at = || format!("line {}", n + 1);
            match key.trim() {
                "sizes" => m.sizes = value.split(',').filter(|v| !v.trim().is_empty()).map(parse_size).collect::<Result<_, _>>().with_context(at)?,
                "subs" | "subscribers" => m.subscribers = list(value).with_context(at)?,
                "transports" => m.transports = list(value).with_context(at)?,
                "count" | "message_count" => m.base.message_count = value.parse().with_context(at)?,
                "rate" | "publish_rate_hz" => m.base.publish_rate_hz = value.parse().with_context(at)?,
                "policy" => m.base.policy = value.to_owned(),
                "region_size" => m.base.region_size = parse_size(value).with_context(at)?,
                "slow_subscriber_ms" => m.base.slow_subscriber_ms = value.parse().with_context(at)?,
                other => bail!("line {}: unknown key `{other}`", n + 1),
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        MatrixConfig::parse(&text)
    }

    /// Every case of the grid, transports outermost.
    pub fn cases(&self) -> Vec<CaseConfig> {
        let mut out = Vec::new();
        for &transport in &self.transports {
            for &payload_size in &self.sizes {
                for &subscribers in &self.subscribers {
                    out.push(CaseConfig { payload_size, subscribers, transport, ..self.base.clone() });
                }
            }
        }
        out
    }
}

/// Runs every case in order. A case that cannot even start is kept as an
/// invalid report.
pub fn run_matrix(exe: &Path, matrix: &MatrixConfig, mut progress: impl FnMut(&CaseReport)) -> Vec<CaseReport> {
    let mut reports = Vec::new();
    for case in matrix.cases() {
        let report = run_case(exe, &case).unwrap_or_else(|e| CaseReport {
            case_id: case.case_id(),
            config: case.clone(),
            valid: false,
            errors: vec![format!("{e:#}")],
            ..CaseReport::default()
        });
        progress(&report);
        reports.push(report);
    }
    reports
}

/// Writes `results.csv` (one row per subscriber) and `summary.csv` (one row
/// per case) into `dir`.
pub fn write_reports(dir: &Path, reports: &[CaseReport]) -> anyhow::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let results = dir.join("results.csv");
    let summary = dir.join("summary.csv");
    write_subscriber_csv(reports, fs::File::create(&results)?)?;
    write_summary_csv(reports, fs::File::create(&summary)?)?;
    Ok((results, summary))
}
