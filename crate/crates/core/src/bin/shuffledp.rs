// SPDX-License-Identifier: Apache-2.0

//! Command-line benchmark driver for the shuffle-model summation
//! protocols. Builds an experiment from flags, runs it (or a sweep), and
//! emits a JSON document (stdout or --out-json) plus an optional CSV
//! summary table (--out-csv). Human-readable progress goes to stderr.
//!
//! Exit codes: 0 success, 2 configuration error, 3 dataset error.

use clap::Parser;
use shuffledp::bench::{self, Axis, DataShape, DatasetSpec, ExperimentConfig, GeneratorKind, Protocol};
use shuffledp::{Error, Result};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "shuffledp",
    version,
    about = "One-round shuffle-model differentially private summation benchmarks"
)]
struct Cli {
    /// Estimator: base, sum, highdim, sparse, central_laplace, central_clip, naive_vec.
    #[arg(long)]
    protocol: String,

    /// Privacy parameter epsilon.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,

    /// Privacy parameter delta.
    #[arg(long, default_value_t = 1e-12)]
    delta: f64,

    /// Per-protocol failure probability beta used in error bounds.
    #[arg(long, default_value_t = 0.1)]
    beta: f64,

    /// Number of users for generated data.
    #[arg(long, required_unless_present = "csv")]
    n: Option<u64>,

    /// Scalar domain bound U (scalar and vector protocols), or clamp
    /// override for --csv. Binary protocols take no domain bound.
    #[arg(long = "U", value_name = "U")]
    u: Option<u64>,

    /// Vector dimension, for highdim, sparse, and naive_vec.
    #[arg(long = "d", value_name = "DIM")]
    d: Option<u32>,

    /// L2 norm bound, for highdim.
    #[arg(long = "U-l2", value_name = "BOUND")]
    u_l2: Option<u64>,

    /// Data family: zipf, gauss, binary_sparse, constant.
    #[arg(long, default_value = "gauss")]
    generator: String,

    /// Generator parameters as key=value pairs, comma separated or repeated
    /// (zipf: a,b; gauss: mu,sigma; binary_sparse: max_ones,skew; constant: value).
    #[arg(long = "gen-params", value_name = "K=V", value_delimiter = ',')]
    gen_params: Vec<String>,

    /// Read scalar values from a CSV file instead of generating
    /// (generator flags are ignored).
    #[arg(long, value_name = "PATH")]
    csv: Option<String>,

    /// Header name of the value column; omit for headerless single-column files.
    #[arg(long, value_name = "NAME", requires = "csv")]
    column: Option<String>,

    /// Trials per experiment.
    #[arg(long, default_value_t = 50)]
    trials: u32,

    /// Number of largest and smallest trial errors to discard.
    #[arg(long, default_value_t = 10)]
    trim: u32,

    /// Master seed; the SHUFFLEDP_SEED environment variable overrides it.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Sweep one axis across --values: n, U, sigma, epsilon.
    #[arg(long, value_name = "AXIS", requires = "values")]
    sweep: Option<String>,

    /// Comma-separated axis values for --sweep.
    #[arg(long, value_name = "V1,V2,...", value_delimiter = ',', requires = "sweep")]
    values: Vec<f64>,

    /// Disable noise and randomized rounding (exactness checks).
    #[arg(long)]
    noiseless: bool,

    /// Write the JSON document here instead of stdout.
    #[arg(long = "out-json", value_name = "PATH")]
    out_json: Option<PathBuf>,

    /// Write a flat CSV summary table here.
    #[arg(long = "out-csv", value_name = "PATH")]
    out_csv: Option<PathBuf>,

    /// Flooding-rate constant scaling the dummy-message overhead.
    #[arg(long = "flood-constant", value_name = "C", default_value_t = 1.0)]
    flood_constant: f64,
}

fn parse_gen_params(pairs: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::invalid(format!("--gen-params entries look like key=value, got {pair:?}"))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            Error::invalid(format!("--gen-params {key}: {value:?} is not a number"))
        })?;
        map.insert(key.trim().to_string(), value);
    }
    Ok(map)
}

fn take_integer(map: &mut BTreeMap<String, f64>, key: &str, default: u64) -> Result<u64> {
    match map.remove(key) {
        None => Ok(default),
        Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => Ok(v as u64),
        Some(v) => Err(Error::invalid(format!("--gen-params {key} takes a non-negative integer, got {v}"))),
    }
}

fn build_generator(name: &str, mut params: BTreeMap<String, f64>) -> Result<GeneratorKind> {
    let kind = match name {
        "zipf" => GeneratorKind::Zipf {
            a: params.remove("a").unwrap_or(1.0),
            b: params.remove("b").unwrap_or(3.0),
        },
        "gauss" => GeneratorKind::Gauss {
            mu: params.remove("mu").unwrap_or(50.0),
            sigma: params.remove("sigma").unwrap_or(50.0),
        },
        "binary_sparse" => GeneratorKind::BinarySparse {
            max_ones: take_integer(&mut params, "max_ones", 4)? as u32,
            skew: params.remove("skew").unwrap_or(1.0),
        },
        "constant" => GeneratorKind::Constant { value: take_integer(&mut params, "value", 1)? },
        other => {
            return Err(Error::invalid(format!(
                "unknown generator {other:?}; expected zipf, gauss, binary_sparse, or constant"
            )))
        }
    };
    if let Some(stray) = params.keys().next() {
        return Err(Error::invalid(format!("generator {name} does not take parameter {stray:?}")));
    }
    Ok(kind)
}

fn master_seed(cli_seed: u64) -> Result<u64> {
    match std::env::var("SHUFFLEDP_SEED") {
        Ok(raw) => raw.trim().parse::<u64>().map_err(|_| {
            Error::invalid(format!("SHUFFLEDP_SEED must be an unsigned integer, got {raw:?}"))
        }),
        Err(_) => Ok(cli_seed),
    }
}

fn run(cli: Cli) -> Result<()> {
    let protocol: Protocol = cli.protocol.parse()?;
    let dataset = match &cli.csv {
        Some(path) => DatasetSpec::File {
            path: path.clone(),
            column: cli.column.clone(),
            domain: cli.u,
        },
        None => {
            let domain = match (cli.u, protocol.shape()) {
                (Some(u), _) => u,
                // Binary vectors have per-coordinate domain {0,1}; the
                // scalar bound is meaningless and build_dataset ignores it.
                (None, DataShape::Binary) => 1,
                (None, _) => {
                    return Err(Error::invalid(format!(
                        "--U is required for {protocol} (scalar domain bound)"
                    )))
                }
            };
            DatasetSpec::Generate {
                kind: build_generator(&cli.generator, parse_gen_params(&cli.gen_params)?)?,
                n: cli.n.expect("clap requires --n without --csv"),
                domain,
                dim: cli.d,
                l2_bound: cli.u_l2,
            }
        }
    };

    let mut config = ExperimentConfig::new(protocol, dataset);
    config.epsilon = cli.epsilon;
    config.delta = cli.delta;
    config.beta = cli.beta;
    config.trials = cli.trials;
    config.trim = cli.trim;
    config.master_seed = master_seed(cli.seed)?;
    config.noiseless = cli.noiseless;
    config.flood_constant = cli.flood_constant;

    let (axis, axis_values, reports) = match &cli.sweep {
        Some(name) => {
            let axis: Axis = name.parse()?;
            let reports = bench::sweep(&config, axis, &cli.values)?;
            (Some(axis), cli.values.clone(), reports)
        }
        None => (None, Vec::new(), vec![bench::run_experiment(&config)?]),
    };

    for (i, report) in reports.iter().enumerate() {
        let label = match (axis, axis_values.get(i)) {
            (Some(axis), Some(v)) => format!("{protocol} {axis}={v}"),
            _ => protocol.to_string(),
        };
        let re = report
            .re_percent
            .map(|re| format!(" ({re:.4}% of the true value)"))
            .unwrap_or_default();
        eprintln!(
            "{label}: trimmed mean error {:.6}{re} over {} retained trials, {:.3} messages/user",
            report.trimmed_mean_error, report.retained_trials, report.mean_messages_per_user
        );
    }

    let json = bench::to_json_document(&reports, axis);
    match &cli.out_json {
        Some(path) => std::fs::write(path, &json)?,
        None => print!("{json}"),
    }
    if let Some(path) = &cli.out_csv {
        let file = std::fs::File::create(path)?;
        bench::write_summary_csv(file, &reports, &axis_values)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Dataset(_) | Error::Io(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
