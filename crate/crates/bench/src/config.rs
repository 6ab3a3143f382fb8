//! Experiment configuration and the small parsers behind the CLI flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use page_leap::PageSize;

use crate::BenchError;

const KIB: usize = 1 << 10;
const MIB: usize = 1 << 20;

/// Initial area sizes swept with small pages.
pub const SMALL_AREAS: [usize; 11] = [
    4 * KIB,
    16 * KIB,
    64 * KIB,
    128 * KIB,
    256 * KIB,
    512 * KIB,
    MIB,
    4 * MIB,
    16 * MIB,
    64 * MIB,
    256 * MIB,
];

/// Initial area sizes swept with huge pages.
pub const HUGE_AREAS: [usize; 8] = [
    2 * MIB,
    4 * MIB,
    8 * MIB,
    16 * MIB,
    32 * MIB,
    64 * MIB,
    128 * MIB,
    256 * MIB,
];

pub const DEFAULT_REGION_BYTES: usize = 256 * MIB;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    Access,
    Baseline,
    QuietSweep,
    Burst,
    Sustained,
    Overhead,
    Tpch,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Access,
        Experiment::Baseline,
        Experiment::QuietSweep,
        Experiment::Burst,
        Experiment::Sustained,
        Experiment::Overhead,
        Experiment::Tpch,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Experiment::Access => "E1-access",
            Experiment::Baseline => "E2-baseline",
            Experiment::QuietSweep => "E3-quiet-sweep",
            Experiment::Burst => "E4-burst",
            Experiment::Sustained => "E5-sustained",
            Experiment::Overhead => "E6-overhead",
            Experiment::Tpch => "E7-tpch",
        }
    }

    /// Whether the experiment takes a list of write rates.
    pub fn uses_rates(self) -> bool {
        matches!(self, Experiment::Burst | Experiment::Sustained | Experiment::Overhead)
    }

    /// Whether the experiment sweeps initial area sizes.
    pub fn uses_areas(self) -> bool {
        matches!(
            self,
            Experiment::QuietSweep
                | Experiment::Burst
                | Experiment::Sustained
                | Experiment::Overhead
                | Experiment::Tpch
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Experiment {
    type Err = BenchError;

    /// Accepts `E4`, `e4`, `E4-burst` or `burst`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Experiment::ALL
            .into_iter()
            .find(|e| {
                let id = e.id().to_ascii_lowercase();
                let (num, name) = id.split_once('-').expect("ids have a dash");
                lower == id || lower == num || lower == name
            })
            .ok_or_else(|| BenchError::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    /// Real nodes when the host has two or more, simulated otherwise.
    #[default]
    Auto,
    RealNuma,
    Simulated,
}

impl FromStr for Mode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Mode::Auto),
            "real-numa" | "real" => Ok(Mode::RealNuma),
            "simulated" | "sim" => Ok(Mode::Simulated),
            _ => Err(BenchError::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(BenchError::Config(format!("unknown format {s:?}"))),
        }
    }
}

/// `fraction` of the writes land in the first `bytes` of the region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Skew {
    pub fraction: f64,
    pub bytes: usize,
}

impl FromStr for Skew {
    type Err = BenchError;

    /// `frac:bytes`, e.g. `0.75:8M`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (f, b) = s
            .split_once(':')
            .ok_or_else(|| BenchError::Config(format!("skew {s:?} is not frac:bytes")))?;
        let fraction = f
            .trim()
            .parse()
            .map_err(|_| BenchError::Config(format!("bad skew fraction {f:?}")))?;
        Ok(Skew {
            fraction,
            bytes: parse_bytes(b)?,
        })
    }
}

/// Parses `4096`, `4K`, `4KiB`, `16M`, `1G` (binary multiples).
pub fn parse_bytes(s: &str) -> Result<usize, BenchError> {
    let t = s.trim();
    let digits = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(digits);
    let n: usize = num
        .parse()
        .map_err(|_| BenchError::Config(format!("bad byte size {s:?}")))?;
    let shift = match unit.to_ascii_lowercase().as_str() {
        "" | "b" => 0,
        "k" | "kb" | "kib" => 10,
        "m" | "mb" | "mib" => 20,
        "g" | "gb" | "gib" => 30,
        _ => return Err(BenchError::Config(format!("bad byte size {s:?}"))),
    };
    n.checked_mul(1 << shift)
        .ok_or_else(|| BenchError::Config(format!("byte size {s:?} overflows")))
}

/// Parses writes per second: `10000`, `10K`, `2.5M`, `inf` (unpaced).
/// Zero means no concurrent writes.
pub fn parse_rate(s: &str) -> Result<f64, BenchError> {
    let t = s.trim();
    let bad = || BenchError::Config(format!("bad rate {s:?}"));
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("unpaced") {
        return Ok(f64::INFINITY);
    }
    let (num, mult) = match t.chars().last().map(|c| c.to_ascii_lowercase()) {
        Some('k') => (&t[..t.len() - 1], 1e3),
        Some('m') => (&t[..t.len() - 1], 1e6),
        Some('g') => (&t[..t.len() - 1], 1e9),
        _ => (t, 1.0),
    };
    let v: f64 = num.parse().map_err(|_| bad())?;
    if v.is_nan() || v < 0.0 {
        return Err(bad());
    }
    Ok(v * mult)
}

pub fn page_size_label(page: PageSize) -> &'static str {
    match page {
        PageSize::Small => "small",
        PageSize::Huge => "huge",
    }
}

pub fn parse_page_size(s: &str) -> Result<PageSize, BenchError> {
    match s {
        "small" | "4k" | "4K" => Ok(PageSize::Small),
        "huge" | "2m" | "2M" => Ok(PageSize::Huge),
        _ => Err(BenchError::Config(format!("unknown page size {s:?}"))),
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub page_size: PageSize,
    pub region_bytes: usize,
    /// Empty means the experiment's default list.
    pub areas: Vec<usize>,
    /// Empty means the experiment's default list.
    pub rates: Vec<f64>,
    pub skew: Option<Skew>,
    pub seed: u64,
    pub reps: u32,
    pub timeout: Duration,
    pub reduction_factor: usize,
    pub mode: Mode,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub hugetlbfs_mount: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            page_size: PageSize::Small,
            region_bytes: DEFAULT_REGION_BYTES,
            areas: Vec::new(),
            rates: Vec::new(),
            skew: None,
            seed: 1,
            reps: 3,
            timeout: Duration::from_secs(10),
            reduction_factor: 2,
            mode: Mode::Auto,
            format: Format::Csv,
            out: None,
            hugetlbfs_mount: None,
        }
    }

    pub fn area_list(&self) -> Vec<usize> {
        if !self.areas.is_empty() {
            return self.areas.clone();
        }
        let huge = self.page_size == PageSize::Huge;
        match self.experiment {
            Experiment::QuietSweep | Experiment::Overhead if huge => HUGE_AREAS.to_vec(),
            Experiment::QuietSweep | Experiment::Overhead => SMALL_AREAS.to_vec(),
            _ if huge => vec![16 * MIB],
            _ => vec![512 * KIB, 16 * MIB],
        }
    }

    pub fn rate_list(&self) -> Vec<f64> {
        if !self.rates.is_empty() {
            return self.rates.clone();
        }
        let extreme = if self.page_size == PageSize::Huge { 100e6 } else { 10e6 };
        match self.experiment {
            Experiment::Burst => vec![10e3, 100e3, extreme],
            Experiment::Sustained => vec![100e3, 1e6, 6e6],
            Experiment::Overhead => vec![100e3],
            _ => Vec::new(),
        }
    }

    /// Concurrent orderkey writes for the lineitem experiment: ten million
    /// per GiB of table.
    pub fn orderkey_writes(&self) -> u64 {
        (10_000_000u128 * self.region_bytes as u128 / (1u128 << 30)) as u64
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |m: String| Err(BenchError::Config(m));
        let page = self.page_size.bytes();
        if self.reps == 0 {
            return err("repetitions must be at least 1".into());
        }
        if self.region_bytes == 0 || !self.region_bytes.is_multiple_of(page) {
            return err(format!(
                "region size {} must be a positive multiple of the {page} byte page",
                self.region_bytes
            ));
        }
        if self.reduction_factor < 2 {
            return err(format!("reduction factor {} must be at least 2", self.reduction_factor));
        }
        if self.timeout.is_zero() {
            return err("timeout must be positive".into());
        }
        if let Some(a) = self.areas.iter().find(|&&a| a == 0 || a % page != 0) {
            return err(format!(
                "area size {a} must be a positive multiple of the {page} byte page"
            ));
        }
        if !self.experiment.uses_areas() && !self.areas.is_empty() {
            return err(format!("{} does not take area sizes", self.experiment));
        }
        if !self.experiment.uses_rates() && !self.rates.is_empty() {
            return err(format!("{} does not take write rates", self.experiment));
        }
        if let Some(r) = self.rates.iter().find(|r| r.is_nan() || **r < 0.0) {
            return err(format!("write rate {r} must be non-negative"));
        }
        if let Some(s) = self.skew {
            if !self.experiment.uses_rates() {
                return err(format!("{} does not take a skew", self.experiment));
            }
            if !(s.fraction > 0.0 && s.fraction < 1.0) {
                return err(format!(
                    "skew fraction {} must lie strictly between 0 and 1",
                    s.fraction
                ));
            }
            if s.bytes < 8 || s.bytes >= self.region_bytes {
                return err(format!(
                    "skew range of {} bytes must be at least one word and smaller than the region",
                    s.bytes
                ));
            }
        }
        if self.experiment == Experiment::Tpch && self.region_bytes < page.max(64 * KIB) {
            return err("the lineitem experiment needs at least 64 KiB".into());
        }
        Ok(())
    }
}
