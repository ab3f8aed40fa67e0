use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use tdvqa::dataset::{package, PackageOptions, PoolItem};
use tdvqa::pipeline::{self, RunConfig};
use tdvqa::textgen::{describe_module, Exchange, FollowUps, HttpTextClient, RecordingClient, ReplayClient, TextClient};
use tdvqa::verilog::{generate_testbench, parse_module_header};
use tdvqa::{emit_wavejson, evaluate_file, parse_vcd, render_svg, sample_to_diagram, Edge, Scenario, Task};

/// Timing-diagram visual QA dataset toolkit.
#[derive(Parser)]
#[command(name = "tdvqa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a VCD dump on a clock and write WaveJSON.
    Vcd2wave {
        input: PathBuf,
        #[arg(long)]
        clock: String,
        #[arg(long, value_enum, default_value = "rising")]
        edge: EdgeArg,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Render WaveJSON to SVG.
    Render {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write a random-stimulus testbench for a Verilog module.
    GenTestbench {
        module: PathBuf,
        #[arg(long, default_value_t = 20)]
        cycles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clock period in simulator ticks.
        #[arg(long, default_value_t = 10)]
        period: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Ask a text service to describe a Verilog module.
    Describe {
        module: PathBuf,
        #[arg(long, required_unless_present = "replay")]
        endpoint: Option<String>,
        /// Answer from a recorded transcript instead of the service.
        #[arg(long, conflicts_with = "endpoint")]
        replay: Option<PathBuf>,
        /// Save the exchanges for later replay.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build the caption pool and package it under `<out>/caption_pool`.
    GenCaption {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Instantiate reasoning questions for one task and scenario.
    GenReasoning {
        #[arg(long)]
        task: String,
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Package with images here; otherwise print pairs as JSONL.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline and write the dataset.
    Package {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score predictions against dataset answers.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EdgeArg {
    Rising,
    Falling,
}

/// Run settings. Flags override the config file, which overrides defaults.
#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_caption: Option<usize>,
    #[arg(long)]
    n_reasoning: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    holdout: Option<f64>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(Failure::domain)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.n_caption {
            cfg.n_caption = v;
        }
        if let Some(v) = self.n_reasoning {
            cfg.n_reasoning = v;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = self.holdout {
            cfg.holdout = v;
        }
        cfg.validate().map_err(Failure::usage)?;
        Ok(cfg)
    }
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn domain(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            kind: "domain",
            message: e.to_string(),
        }
    }

    fn usage(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            kind: "usage",
            message: e.to_string(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            kind: "io",
            message: format!("{}: {e}", path.display()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn package_pool(items: &[PoolItem], dir: &Path, seed: u64) -> Result<serde_json::Value, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    let m = package(items, dir, PackageOptions { seed, holdout: 0.0 }).map_err(Failure::domain)?;
    Ok(json!({"out_dir": dir, "total": m.total, "counts": m.counts}))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Vcd2wave { input, clock, edge, output } => {
            let doc = parse_vcd(&read(&input)?).map_err(Failure::domain)?;
            let edge = match edge {
                EdgeArg::Rising => Edge::Rising,
                EdgeArg::Falling => Edge::Falling,
            };
            let td = sample_to_diagram(&doc, &clock, edge).map_err(Failure::domain)?;
            write(&output, &format!("{}\n", emit_wavejson(&td).to_json_pretty()))
        }
        Command::Render { input, output } => {
            let doc = tdvqa::wavejson::WaveDocument::from_json(&read(&input)?).map_err(Failure::domain)?;
            write(&output, &render_svg(&doc))
        }
        Command::GenTestbench {
            module,
            cycles,
            seed,
            period,
            output,
        } => {
            let m = parse_module_header(&read(&module)?).map_err(Failure::domain)?;
            write(&output, &generate_testbench(&m, seed, cycles, period))
        }
        Command::Describe {
            module,
            endpoint,
            replay,
            record,
            output,
        } => {
            let m = parse_module_header(&read(&module)?).map_err(Failure::domain)?;
            let inner: Box<dyn TextClient> = match (&replay, endpoint) {
                (Some(p), _) => {
                    let ex: Vec<Exchange> = serde_json::from_str(&read(p)?).map_err(|e| Failure::io(p, e))?;
                    Box::new(ReplayClient::new(ex))
                }
                (None, Some(url)) => Box::new(HttpTextClient::new(url)),
                (None, None) => return Err(Failure::usage("--endpoint or --replay is required")),
            };
            let client = RecordingClient::new(inner.as_ref());
            let bundle = describe_module(&m, &client, &FollowUps::default()).map_err(Failure::domain)?;
            if let Some(p) = record {
                write(&p, &serde_json::to_string_pretty(&client.transcript()).expect("serializable"))?;
            }
            let text = serde_json::to_string_pretty(&bundle).expect("serializable");
            match output {
                Some(p) => write(&p, &format!("{text}\n")),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::GenCaption { run } => {
            let cfg = run.config()?;
            let pool = pipeline::build_caption_pool(&cfg).map_err(Failure::domain)?;
            print_json(&package_pool(&pool, &cfg.out_dir.join("caption_pool"), cfg.seed)?);
            Ok(())
        }
        Command::GenReasoning {
            task,
            scenario,
            count,
            seed,
            out,
        } => {
            let task: Task = task.parse().map_err(Failure::usage)?;
            let scenario: Scenario = scenario.parse().map_err(Failure::usage)?;
            let cfg = RunConfig { seed, ..RunConfig::default() };
            let items = pipeline::reasoning_batch(task, scenario, count, &cfg).map_err(Failure::domain)?;
            match out {
                Some(dir) => print_json(&package_pool(&items, &dir, seed)?),
                None => {
                    for item in &items {
                        println!("{}", json!({"id": item.id, "qa": item.qa}));
                    }
                }
            }
            Ok(())
        }
        Command::Package { run } => {
            let cfg = run.config()?;
            let m = pipeline::run(&cfg).map_err(Failure::domain)?;
            print_json(&json!({"out_dir": cfg.out_dir, "total": m.total, "counts": m.counts}));
            Ok(())
        }
        Command::Eval { pred, data, report } => {
            let r = evaluate_file(&pred, &data).map_err(Failure::domain)?;
            let text = serde_json::to_string_pretty(&r).expect("serializable");
            if let Some(p) = report {
                write(&p, &format!("{text}\n"))?;
            }
            eprint!("{}", r.table());
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim()}));
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message}));
            ExitCode::from(f.code)
        }
    }
}
