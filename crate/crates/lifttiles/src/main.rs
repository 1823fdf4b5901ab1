use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lifttiles::formats::{self, FormatError};
use lifttiles::protocol::{Request, SetTarget, Subscribe};
use lifttiles::server::{serve, Client, ClientError, ServiceConfig};
use lifttiles::trace::{self, Verdict};
use lifttiles::{Frame, FrameKind};
use lifttiles_core::control::{run_to_target, TargetAssignment};
use lifttiles_core::model::{build_grid_layout, ActuatorSpec, Layout, LinePolicy, Partition};
use lifttiles_core::plan::{lower_bound_makespan, plan_exact, plan_greedy, TransitionProblem, DEFAULT_RESOLUTION_S};
use lifttiles_core::shapes::{preset, Heightmap, Preset, PRESET_NAMES};
use lifttiles_core::{ControlConfig, SimConfig, Simulator};

#[derive(Parser)]
#[command(name = "lifttiles", version, about = "Simulate, plan and serve inflatable actuator arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the control service.
    Run(RunArgs),
    /// Plan a transition between two heightmaps and print the schedule.
    Plan(PlanArgs),
    /// Send a heightmap to a running service and wait for it to settle.
    Apply(ApplyArgs),
    /// List or emit preset heightmaps.
    #[command(subcommand)]
    Preset(PresetCommand),
    /// Re-run a trace file and check that it reproduces byte for byte.
    Replay {
        trace: PathBuf,
    },
    /// Drive a closed-loop transition offline and report on it.
    Simulate(SimulateArgs),
    /// Layout helpers.
    #[command(subcommand)]
    Layout(LayoutCommand),
}

#[derive(Args)]
struct LayoutArg {
    /// Layout JSON file; defaults to the 5x5 grid with one line per row.
    #[arg(long)]
    layout: Option<PathBuf>,
}

impl LayoutArg {
    fn load(&self) -> Result<Layout> {
        match &self.layout {
            Some(p) => Ok(formats::load_layout(p)?),
            None => Ok(build_grid_layout(5, 5, &ActuatorSpec::default(), 30.0, LinePolicy::default())?),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    layout: LayoutArg,
    /// Wall-clock milliseconds per 50 ms simulation step.
    #[arg(long, default_value_t = 50)]
    tick_ms: u64,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: SocketAddr,
    /// Also serve the frame protocol over WebSocket here.
    #[arg(long)]
    ws_listen: Option<SocketAddr>,
    /// Noise seed; LIFTTILES_SEED takes precedence.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    sensor_sigma: f64,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    layout: LayoutArg,
    #[arg(long)]
    from: PathBuf,
    #[arg(long)]
    to: PathBuf,
    /// Use the exact search instead of the greedy planner.
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION_S)]
    resolution: f64,
}

#[derive(Args)]
struct ApplyArgs {
    #[command(flatten)]
    layout: LayoutArg,
    #[arg(long, default_value = "127.0.0.1:7878")]
    connect: String,
    /// Heightmap file or preset name.
    heightmap: String,
    /// Seconds of wall-clock time to wait for settling.
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
}

#[derive(Subcommand)]
enum PresetCommand {
    /// Print the preset names.
    List,
    /// Print a preset resolved against a layout.
    Emit {
        name: String,
        #[command(flatten)]
        layout: LayoutArg,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    layout: LayoutArg,
    /// Starting heightmap; defaults to fully collapsed.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Target heightmap file or preset name.
    #[arg(long)]
    to: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    sensor_sigma: f64,
    /// Simulated seconds before giving up.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    /// Write the trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Single,
    PerRow,
    PerColumn,
}

#[derive(Subcommand)]
enum LayoutCommand {
    /// Print a regular grid layout.
    Grid {
        #[arg(long, default_value_t = 5)]
        rows: u32,
        #[arg(long, default_value_t = 5)]
        cols: u32,
        #[arg(long, default_value_t = 30.0)]
        pitch: f64,
        #[arg(long, value_enum, default_value = "per-row")]
        partition: PartitionArg,
        #[arg(long, default_value_t = 1)]
        compressors: u32,
    },
    /// Validate a layout file and print it canonically.
    Check { file: PathBuf },
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct TimedOut(String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<TimedOut>().is_some() {
        3
    } else if e.downcast_ref::<Invalid>().is_some()
        || e.downcast_ref::<FormatError>().is_some_and(FormatError::is_validation)
        || e.chain().any(|c| {
            c.is::<lifttiles_core::model::LayoutError>()
                || c.is::<lifttiles_core::shapes::ShapeError>()
                || c.is::<lifttiles_core::plan::PlanError>()
        })
    {
        2
    } else {
        1
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(a) => run(a),
        Command::Plan(a) => plan(a),
        Command::Apply(a) => apply(a),
        Command::Preset(PresetCommand::List) => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Preset(PresetCommand::Emit { name, layout, json }) => {
            let layout = layout.load()?;
            let map = preset(&Preset::from_name(&name)?, &layout)?;
            if json {
                print!("{}", formats::render_heightmap_json(&map));
            } else {
                print!("{}", formats::render_heightmap(&map, &layout));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { trace: path } => {
            let text = formats::read_text(&path)?;
            match trace::verify(&text).map_err(|e| Invalid(e.to_string()))? {
                Verdict::Identical { records } => {
                    println!("identical ({records} records)");
                    Ok(ExitCode::SUCCESS)
                }
                Verdict::Diverged {
                    line,
                    recorded,
                    replayed,
                } => {
                    println!("diverged at record {line}");
                    println!("recorded: {recorded}");
                    println!("replayed: {replayed}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Simulate(a) => simulate(a),
        Command::Layout(LayoutCommand::Grid {
            rows,
            cols,
            pitch,
            partition,
            compressors,
        }) => {
            let partition = match partition {
                PartitionArg::Single => Partition::Single,
                PartitionArg::PerRow => Partition::PerRow,
                PartitionArg::PerColumn => Partition::PerColumn,
            };
            let policy = LinePolicy {
                partition,
                compressors_per_line: compressors,
            };
            let layout = build_grid_layout(rows, cols, &ActuatorSpec::default(), pitch, policy)?;
            print!("{}", formats::render_layout(&layout));
            Ok(ExitCode::SUCCESS)
        }
        Command::Layout(LayoutCommand::Check { file }) => {
            let layout = formats::load_layout(&file)?;
            print!("{}", formats::render_layout(&layout));
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// LIFTTILES_SEED wins over the flag.
fn effective_seed(flag: u64) -> Result<u64> {
    match std::env::var("LIFTTILES_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Invalid(format!("LIFTTILES_SEED `{v}` is not an unsigned integer")).into()),
        Err(_) => Ok(flag),
    }
}

fn sim_config(seed: u64, sigma: f64) -> Result<SimConfig> {
    let config = SimConfig {
        seed: effective_seed(seed)?,
        sensor_noise_sigma_cm: sigma,
        ..SimConfig::default()
    };
    config.validate().map_err(|e| Invalid(e.to_string()))?;
    Ok(config)
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let layout = a.layout.load()?;
    let config = ServiceConfig {
        layout,
        sim: sim_config(a.seed, a.sensor_sigma)?,
        control: ControlConfig::default(),
        tick: Duration::from_millis(a.tick_ms),
        listen: a.listen,
        ws_listen: a.ws_listen,
    };
    let handle = serve(config)?;
    println!("listening on {}", handle.addr());
    if let Some(ws) = handle.ws_addr() {
        println!("websocket on {ws}");
    }
    handle.wait();
    Ok(ExitCode::SUCCESS)
}

/// A heightmap file, or a preset name when no such file exists.
fn load_target(spec: &str, layout: &Layout) -> Result<Heightmap> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(formats::load_heightmap(path, layout)?);
    }
    let which = Preset::from_name(spec).map_err(|_| Invalid(format!("`{spec}` is neither a file nor a preset")))?;
    Ok(preset(&which, layout)?)
}

fn plan(a: PlanArgs) -> Result<ExitCode> {
    let layout = a.layout.load()?;
    let from = formats::load_heightmap(&a.from, &layout)?;
    let to = formats::load_heightmap(&a.to, &layout)?;
    let mut current: BTreeMap<_, _> = layout
        .actuators
        .iter()
        .map(|(id, p)| (id.clone(), p.spec.min_height_cm))
        .collect();
    current.extend(from.entries);
    let problem = TransitionProblem::new(&layout, current, to.entries)?;
    let schedule = if a.exact {
        plan_exact(&problem, a.resolution)?
    } else {
        plan_greedy(&problem)?
    };
    print!("{}", formats::render_schedule(&schedule));
    println!("lower bound {:.1} s", lower_bound_makespan(&problem)?);
    println!("makespan {:.1} s", schedule.predicted_makespan_s);
    Ok(ExitCode::SUCCESS)
}

fn apply(a: ApplyArgs) -> Result<ExitCode> {
    let layout = a.layout.load()?;
    let map = load_target(&a.heightmap, &layout)?;
    let timeout = Duration::from_secs_f64(a.timeout.max(0.0));
    let deadline = Instant::now() + timeout;
    let mut client = Client::connect(&a.connect).with_context(|| format!("connecting to {}", a.connect))?;

    let sub_id = client.fresh_id();
    let sub = Frame::request(sub_id, &Request::Subscribe(Subscribe { enabled: true }));
    expect_ack(client.request(&sub, timeout).map_err(client_error)?)?;
    let set = Frame::request(
        client.fresh_id(),
        &Request::SetTarget(SetTarget {
            targets: map.entries.clone(),
        }),
    );
    let ack = expect_ack(client.request(&set, timeout).map_err(client_error)?)?;
    let start_t = ack.payload["t_s"].as_f64().unwrap_or(0.0);

    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        let frame = client.recv(left).map_err(client_error)?;
        let Some(snap) = frame.snapshot_body() else {
            continue;
        };
        // snapshots queued behind the ack still describe the old targets
        let ours = snap
            .actuators
            .iter()
            .all(|a| map.entries.get(&a.id).is_none_or(|&t| a.target_cm == Some(t)));
        if snap.t_s <= start_t || !snap.settled || !ours {
            continue;
        }
        let mut actuators = serde_json::Map::new();
        for a in &snap.actuators {
            if let Some(&target) = map.entries.get(&a.id) {
                actuators.insert(
                    a.id.to_string(),
                    serde_json::json!({
                        "target_cm": target,
                        "final_cm": a.height_cm,
                        "residual_cm": a.height_cm - target,
                    }),
                );
            }
        }
        let report = serde_json::json!({
            "settled": true,
            "elapsed_s": snap.t_s - start_t,
            "actuators": actuators,
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(ExitCode::SUCCESS);
    }
}

fn expect_ack(f: Frame) -> Result<Frame> {
    match f.kind {
        FrameKind::Ack => Ok(f),
        _ => {
            let body = f.error_body();
            let msg = body
                .map(|b| format!("{:?}: {}", b.code, b.message))
                .unwrap_or_else(|| f.to_line());
            Err(Invalid(format!("service rejected request: {msg}")).into())
        }
    }
}

fn client_error(e: ClientError) -> anyhow::Error {
    match e {
        ClientError::Timeout => TimedOut("timed out waiting for the service".into()).into(),
        other => anyhow!(other),
    }
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let layout = a.layout.load()?;
    let target = load_target(&a.to, &layout)?;
    let start = match &a.from {
        Some(p) => formats::load_heightmap(p, &layout)?.entries,
        None => BTreeMap::new(),
    };
    let mut sim = Simulator::with_heights(layout, sim_config(a.seed, a.sensor_sigma)?, &start)
        .map_err(|e| Invalid(e.to_string()))?;
    if a.trace.is_some() {
        sim.enable_trace();
    }
    let report = run_to_target(
        &mut sim,
        &TargetAssignment::new(target.entries),
        &ControlConfig::default(),
        a.timeout,
    )
    .map_err(|e| Invalid(e.to_string()))?;
    if let (Some(path), Some(records)) = (&a.trace, sim.trace()) {
        formats::write_text(path, &trace::write_jsonl(records))?;
    }
    let summary = serde_json::json!({
        "settled": report.settled,
        "elapsed_s": report.elapsed_s,
        "settled_after_s": report.settled_after_s,
        "max_overshoot_cm": report.max_overshoot_cm,
        "actuators": report.actuators,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if report.settled {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(TimedOut(format!("not settled after {} s", a.timeout)).into())
    }
}
