//! `leap-bench`: run one experiment and emit its records as CSV or JSON.
//!
//! Exit codes: 0 on success (skipped arms included), 1 on configuration
//! errors, 2 on runtime failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use leap_bench::config::{parse_bytes, parse_page_size, parse_rate};
use leap_bench::{
    env_check, failures, run, write_records, BenchError, Experiment, ExperimentConfig, Format, Mode, Skew,
};

#[derive(Debug, Parser)]
#[command(name = "leap-bench", version, about = "Page migration experiments")]
struct Cli {
    /// E1-access, E2-baseline, E3-quiet-sweep, E4-burst, E5-sustained,
    /// E6-overhead or E7-tpch (short forms like E4 work too).
    #[arg(long, required_unless_present = "env_check")]
    experiment: Option<String>,
    /// small or huge.
    #[arg(long, default_value = "small")]
    page_size: String,
    /// Region size, e.g. 256M or 4G.
    #[arg(long, default_value = "256M")]
    region_bytes: String,
    /// Initial area sizes, e.g. 512K,16M. Defaults depend on the experiment.
    #[arg(long, value_delimiter = ',')]
    areas: Vec<String>,
    /// Requested writes per second, e.g. 10K,100K,10M. 0 means no writes.
    #[arg(long, value_delimiter = ',')]
    rates: Vec<String>,
    /// Adds a skewed load: fraction of writes into the first bytes of the
    /// region, e.g. 0.75:8M.
    #[arg(long)]
    skew: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    reps: u32,
    #[arg(long, default_value_t = 10.0)]
    timeout_s: f64,
    #[arg(long, default_value_t = 2)]
    reduction_factor: usize,
    /// auto, real-numa or simulated.
    #[arg(long, default_value = "auto")]
    mode: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Print what the host supports and exit.
    #[arg(long)]
    env_check: bool,
}

impl Cli {
    fn config(&self) -> Result<ExperimentConfig, BenchError> {
        let experiment: Experiment = self.experiment.as_deref().unwrap_or("").parse()?;
        let mut c = ExperimentConfig::new(experiment);
        c.page_size = parse_page_size(&self.page_size)?;
        c.region_bytes = parse_bytes(&self.region_bytes)?;
        c.areas = self.areas.iter().map(|a| parse_bytes(a)).collect::<Result<_, _>>()?;
        c.rates = self.rates.iter().map(|r| parse_rate(r)).collect::<Result<_, _>>()?;
        c.skew = self.skew.as_deref().map(str::parse::<Skew>).transpose()?;
        c.seed = self.seed;
        c.reps = self.reps;
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(BenchError::Config(format!(
                "timeout {} s must be positive",
                self.timeout_s
            )));
        }
        c.timeout = Duration::from_secs_f64(self.timeout_s);
        c.reduction_factor = self.reduction_factor;
        c.mode = self.mode.parse()?;
        c.format = self.format.parse()?;
        c.out = self.out.clone();
        c.hugetlbfs_mount = std::env::var_os(leap_bench::env::HUGETLBFS_ENV).map(PathBuf::from);
        c.validate()?;
        Ok(c)
    }
}

fn print_env(cli: &Cli) -> Result<(), BenchError> {
    let mode: Mode = cli.mode.parse()?;
    let page = parse_page_size(&cli.page_size)?;
    let report = env_check(mode, page, parse_bytes(&cli.region_bytes)?);
    match cli.format.parse::<Format>()? {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Csv => print!("{report}"),
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool, BenchError> {
    if cli.env_check {
        print_env(cli)?;
        return Ok(true);
    }
    let cfg = cli.config()?;
    let records = run(&cfg)?;
    let out: Box<dyn Write> = match &cfg.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    write_records(&records, cfg.format, out)?;
    let mut ok = true;
    for r in failures(&records) {
        log::error!("{} {} rep {}: {}", r.experiment, r.method, r.rep, r.skip_reason);
        ok = false;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("leap-bench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
