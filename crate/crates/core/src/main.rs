use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hybridflow::config::RunConfig;
use hybridflow::dataset::{format_timestamp, split, Dataset};
use hybridflow::hybrid::{read_records_csv, run_pure_solver, run_series, write_records_csv, HybridRun};
use hybridflow::loadgen::{generate_dataset, LoadSeries};
use hybridflow::netmodel::Network;
use hybridflow::report::{histogram, step_errors, summarize, summarize_errors, write_timeseries_csv, RunSummary};
use hybridflow::surrogate::{train, ClusteredSurrogate};
use hybridflow::tuning::{recommend_row, sweep, write_rows_csv};

#[derive(Parser)]
#[command(name = "hybridflow", version, about = "Hybrid solver/surrogate quasi-steady-state power flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the load and clustering seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `tune`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate loads and solve every step to produce the dataset CSV.
    Generate,
    /// Train the clustered surrogate on the training split.
    Train,
    /// Run the hybrid simulation over the test split.
    Simulate {
        /// Run the solver at every step instead (ground-truth replay).
        #[arg(long)]
        pure_solver: bool,
    },
    /// Sweep check thresholds over the calibration slice.
    Tune,
    /// Summarize a simulate run against ground truth and write histogram data.
    Report,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let path = cli.config.as_ref().context("--config <path> is required")?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = cli.seed {
            cfg.file.override_seed(seed);
        }
        let out = match &cli.out {
            Some(o) => o.clone(),
            None => cfg.output_dir(),
        };
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { cfg, out })
    }

    fn network(&self) -> Result<Network> {
        Ok(Network::load(self.cfg.network_path())?)
    }

    fn dataset_path(&self) -> PathBuf {
        match &self.cfg.file.dataset {
            Some(_) => self.cfg.dataset_path(),
            None => self.out.join("dataset.csv"),
        }
    }

    fn dataset(&self) -> Result<Dataset> {
        let p = self.dataset_path();
        Dataset::read_csv(&p).with_context(|| format!("reading dataset {} (run `generate` first?)", p.display()))
    }

    fn test_split(&self) -> Result<Dataset> {
        let sp = split(&self.dataset()?, &self.cfg.file.split)?;
        if let Some(w) = &sp.warning {
            eprintln!("warning: {w}");
        }
        Ok(sp.test)
    }

    fn surrogate(&self) -> Result<ClusteredSurrogate> {
        let p = self.out.join("surrogate.json");
        ClusteredSurrogate::load(&p).with_context(|| format!("loading {} (run `train` first?)", p.display()))
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.out.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }
}

fn cmd_generate(ctx: &Ctx) -> Result<()> {
    let net = ctx.network()?;
    let spec = ctx.cfg.file.load.profile(net.n_loads());
    let days = spec.duration_days;
    let (ds, labels) = generate_dataset(&spec, &net, &ctx.cfg.file.solver, |d| eprintln!("solved day {d}/{days}"))?;
    let path = ctx.out.join("dataset.csv");
    ds.write_csv(&path)?;
    let mut modes = String::from("timestamp,mode,name\n");
    for (t, &m) in labels.iter().enumerate() {
        modes.push_str(&format!("{},{m},{}\n", format_timestamp(&ds.timestamps()[t]), spec.modes[m].name));
    }
    ctx.write("modes.csv", &modes)?;
    println!("wrote {} rows to {}", ds.len(), path.display());
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let sp = split(&ctx.dataset()?, &ctx.cfg.file.split)?;
    let s = train(&sp.train, &ctx.cfg.file.surrogate)?;
    let path = ctx.out.join("surrogate.json");
    s.save(&path)?;
    let sizes: Vec<String> = s.train_distances.iter().map(|d| d.len().to_string()).collect();
    println!("trained {} clusters on {} samples (sizes {})", s.n_clusters(), sp.train.len(), sizes.join(", "));
    println!("wrote {}", path.display());
    Ok(())
}

fn write_run(dir: &Path, series: &LoadSeries, run: &HybridRun, summary: &RunSummary, errors: &[f64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    run.to_dataset(series).write_csv(dir.join("solutions.csv"))?;
    write_records_csv(&run.records, dir.join("records.csv"))?;
    write_timeseries_csv(&run.records, errors, dir.join("timeseries.csv"))?;
    fs::write(dir.join("summary.json"), summary.to_json())?;
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&summary.timing)? + "\n")?;
    Ok(())
}

fn cmd_simulate(ctx: &Ctx, pure_solver: bool) -> Result<()> {
    let net = ctx.network()?;
    let test = ctx.test_split()?;
    if test.is_empty() {
        bail!("the test split is empty");
    }
    let series = LoadSeries::from_dataset(&test);
    let settings = &ctx.cfg.file.solver;
    let res = test.resolution_minutes().context("test set needs at least two rows")? as u32;
    let hybrid = ctx.cfg.file.hybrid.to_config(res)?;
    let threshold = hybrid.error_check_threshold.unwrap_or(ctx.cfg.file.hybrid.error_check_threshold);
    let (run, dir) = if pure_solver {
        (run_pure_solver(&net, &series, settings)?, ctx.out.join("pure"))
    } else {
        (run_series(&ctx.surrogate()?, &net, &series, &hybrid, settings, Some(&test))?, ctx.out.clone())
    };
    let errors = step_errors(&run.records, &run.to_dataset(&series), &test)?;
    let summary = summarize_errors(&run.records, &errors, threshold)?;
    write_run(&dir, &series, &run, &summary, &errors)?;
    println!("{summary}");
    println!("wrote results to {}", dir.display());
    Ok(())
}

fn cmd_tune(ctx: &Ctx, jobs: usize) -> Result<()> {
    let sweeps = &ctx.cfg.file.tuning.sweeps;
    if sweeps.is_empty() {
        bail!("no [[tuning.sweep]] entries in the config");
    }
    let net = ctx.network()?;
    let test = ctx.test_split()?;
    let s = ctx.surrogate()?;
    let res = test.resolution_minutes().context("test set needs at least two rows")? as u32;
    let base = ctx.cfg.file.hybrid.to_config(res)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let budget = ctx.cfg.file.tuning.budget;
    let mut rec = String::from("parameter,value,value2,model_fraction,max\n");
    for sw in sweeps {
        let rows = pool.install(|| sweep(sw, &base, &s, &net, &test, &ctx.cfg.file.solver))?;
        let path = ctx.out.join(format!("sweep_{}.csv", sw.parameter.name()));
        write_rows_csv(&rows, &path)?;
        match recommend_row(&rows, budget) {
            Ok(r) => {
                let v2 = r.value2.map_or(String::new(), |v| v.to_string());
                println!(
                    "{}: recommend {}{} (model use {:.3}, max eps_inf {:.3e})",
                    sw.parameter.name(),
                    r.value,
                    r.value2.map_or(String::new(), |v| format!(" x {v}")),
                    r.model_fraction,
                    r.max
                );
                rec.push_str(&format!("{},{},{v2},{:.16e},{:.16e}\n", sw.parameter.name(), r.value, r.model_fraction, r.max));
            }
            Err(e) => {
                println!("{}: {e}", sw.parameter.name());
                rec.push_str(&format!("{},,,,\n", sw.parameter.name()));
            }
        }
        println!("wrote {}", path.display());
    }
    ctx.write("recommendations.csv", &rec)
}

fn cmd_report(ctx: &Ctx) -> Result<()> {
    let test = ctx.test_split()?;
    let records = read_records_csv(ctx.out.join("records.csv"))?;
    let solutions = Dataset::read_csv(ctx.out.join("solutions.csv"))?;
    let t = &ctx.cfg.file.tuning;
    let threshold = ctx.cfg.file.hybrid.error_check_threshold;
    let summary = summarize(&records, &solutions, &test, threshold)?;
    let errors = step_errors(&records, &solutions, &test)?;
    let hist = histogram(&errors, t.histogram_bin_width, t.histogram_clip)?;
    hist.write_csv(ctx.out.join("histogram.csv"))?;
    ctx.write("report_summary.json", &summary.to_json())?;
    println!("steps                     {}", summary.n_steps);
    println!("avoided solves            {:.2}%", 100.0 * summary.avoided_solves_fraction);
    println!("median eps_inf            {:.3e}", summary.median_eps_inf);
    println!("max eps_inf               {:.3e}", summary.max_eps_inf);
    println!("clipped at {:<14} {:.3}% of samples", t.histogram_clip, 100.0 * hist.clipped_fraction);
    println!("wrote {}", ctx.out.join("histogram.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::Generate => cmd_generate(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Simulate { pure_solver } => cmd_simulate(&ctx, pure_solver),
        Command::Tune => cmd_tune(&ctx, cli.jobs),
        Command::Report => cmd_report(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
