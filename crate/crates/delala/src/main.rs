//! Command-line benchmark runner.
//!
//! Verbs:
//!   run             execute one configured pipeline and print a report
//!   sweep           rerun over a grid of one parameter, emit a CSV table
//!   inspect-forest  dump the leading forest as an edge-list text file
//!   select          selection only: print the labeled-set report as JSON
//!
//! A config file (key=value lines) supplies defaults; flags override it.
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 training error.

use std::path::PathBuf;
use std::process::ExitCode;

use delala::bench::{emit_report, run, sweep, sweep_csv, write_to, ReportFormat};
use delala::config::ExperimentConfig;
use delala::dataset::{load_csv, CsvSchema};
use delala::error::{Error, Result};
use delala::forest::{default_density_bandwidth, lodog_cut, LeadingForest};
use delala::labeling::{objective_value, select_labeled, selection_scores};
use delala::pipeline::{default_n_max, LabelOracle};

const USAGE: &str = "usage: delala <run|sweep|inspect-forest|select> [options]

common options:
  --config <file>        key=value config file applied first
  --<key> <value>        override any config key (e.g. --dataset, --pipeline,
                         --sigma, --sigma_tilde, --w, --k, --l, --p, --c,
                         --lambda, --max_iters, --tol, --c_tilde,
                         --alpha_lodog, --n_max, --seed, --repeats,
                         --normalize, --canonical)
  --format <fmt>         report format: json | csv | human   (default human)
  --out <file>           write the report to a file instead of stdout

sweep options:
  --param <name>         config key to sweep
  --grid <v1,v2,...>     comma-separated values
";

struct Cli {
    config: ExperimentConfig,
    format: ReportFormat,
    out: Option<PathBuf>,
    param: Option<String>,
    grid: Vec<String>,
}

fn parse_cli(args: &[String]) -> Result<Cli> {
    let mut config = ExperimentConfig::default();
    let mut format = ReportFormat::Human;
    let mut out = None;
    let mut param = None;
    let mut grid = Vec::new();

    // config file first, regardless of flag position
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" {
            let path = args
                .get(i + 1)
                .ok_or_else(|| Error::Config("--config needs a file path".into()))?;
            config.apply_file(PathBuf::from(path).as_path())?;
        }
        i += 1;
    }

    let mut i = 0;
    while i < args.len() {
        let flag = &args[i];
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("unexpected argument {flag:?}")))?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| Error::Config(format!("flag {flag} needs a value")))?;
        match key {
            "config" => {}
            "format" => format = ReportFormat::parse(value)?,
            "out" => out = Some(PathBuf::from(value)),
            "param" => param = Some(value.clone()),
            "grid" => grid = value.split(',').map(|s| s.trim().to_string()).collect(),
            other => config.set(other, value)?,
        }
        i += 2;
    }
    Ok(Cli { config, format, out, param, grid })
}

fn cmd_run(cli: &Cli) -> Result<()> {
    let report = run(&cli.config)?;
    write_to(cli.out.as_deref(), &emit_report(&report, cli.format))
}

fn cmd_sweep(cli: &Cli) -> Result<()> {
    let param = cli
        .param
        .as_deref()
        .ok_or_else(|| Error::Config("sweep needs --param <name>".into()))?;
    let report = sweep(&cli.config, param, &cli.grid)?;
    match cli.format {
        ReportFormat::Json => write_to(
            cli.out.as_deref(),
            &serde_json::to_string_pretty(&report).expect("sweep serialization cannot fail"),
        ),
        _ => write_to(cli.out.as_deref(), &sweep_csv(&report)),
    }
}

fn build_forest(cfg: &ExperimentConfig) -> Result<(delala::dataset::Dataset, LeadingForest)> {
    cfg.validate()?;
    let full = load_csv(&cfg.dataset, &CsvSchema::default())?;
    let work = if cfg.normalize {
        delala::dataset::zscore_normalize(&full)
    } else {
        full.clone()
    };
    let dist = delala::dataset::pairwise_distances(&work);
    let sigma = cfg.sigma.unwrap_or_else(|| default_density_bandwidth(&dist));
    let mut forest = LeadingForest::build(&dist, sigma)?;
    let n_max = cfg.n_max.unwrap_or_else(|| default_n_max(full.n()));
    lodog_cut(&mut forest, cfg.alpha_lodog, n_max)?;
    Ok((full, forest))
}

fn cmd_inspect_forest(cli: &Cli) -> Result<()> {
    let (_full, forest) = build_forest(&cli.config)?;
    write_to(cli.out.as_deref(), &forest.edge_list_dump())
}

fn cmd_select(cli: &Cli) -> Result<()> {
    let cfg = &cli.config;
    let (full, forest) = build_forest(cfg)?;
    if full.class_count() == 0 {
        return Err(Error::Data("selection needs ground-truth labels to consult".into()));
    }
    let scores = selection_scores(&forest, cfg.w)?;
    let l = cfg.l.unwrap_or(cfg.k * full.class_count());
    let mut oracle = LabelOracle::new(&full);
    let selection = select_labeled(&scores, full.class_count(), l, cfg.k, &mut |i| oracle.query(i))?;
    let j = objective_value(&selection, &scores, cfg.alpha_select.unwrap_or(cfg.w));

    #[derive(serde::Serialize)]
    struct SelectReport<'a> {
        dataset: String,
        class_names: &'a [String],
        selection: &'a delala::labeling::SelectionResult,
        objective_j: f64,
        config: std::collections::BTreeMap<String, String>,
    }
    let text = serde_json::to_string_pretty(&SelectReport {
        dataset: full.name.clone(),
        class_names: full.class_names(),
        selection: &selection,
        objective_j: j,
        config: cfg.echo(),
    })
    .expect("selection report serialization cannot fail");
    write_to(cli.out.as_deref(), &format!("{text}\n"))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(verb) = args.first() else {
        eprintln!("{USAGE}");
        return ExitCode::from(2);
    };
    let run_verb = |cli: &Cli| match verb.as_str() {
        "run" => cmd_run(cli),
        "sweep" => cmd_sweep(cli),
        "inspect-forest" => cmd_inspect_forest(cli),
        "select" => cmd_select(cli),
        other => Err(Error::Config(format!("unknown verb {other:?}\n{USAGE}"))),
    };
    match parse_cli(&args[1..]).and_then(|cli| run_verb(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("delala: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
