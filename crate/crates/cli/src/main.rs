//! `sls`: run the controller, replay scenarios, build and score datasets,
//! check calibration files and serve the operator console.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
//! 3 bind failure, 4 scenario assertion failure, 5 missing dataset.

mod commands;
mod config;
mod console;
mod error;
mod live;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sls_core::detection::dataset::Split;
use sls_sim::DetectorKind;

use crate::output::Output;

#[derive(Debug, Parser)]
#[command(
    name = "sls",
    version,
    about = "Vision-guided surgical light controller and simulator"
)]
struct Cli {
    /// TOML settings file; flags and environment variables take precedence.
    #[arg(long, global = true, env = "SLS_CONFIG")]
    config: Option<PathBuf>,
    /// Print one JSON object per line instead of prose.
    #[arg(long, global = true, env = "SLS_JSON")]
    json: bool,
    /// More log output on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct LiveArgs {
    /// Calibration profile (TOML). Defaults to the built-in 640x480 profile.
    #[arg(long, env = "SLS_CALIBRATION")]
    calibration: Option<PathBuf>,
    /// External MQTT broker HOST:PORT. Without it an embedded broker is started.
    #[arg(long, env = "SLS_BROKER")]
    broker: Option<String>,
    /// Listen endpoint for the embedded broker [default: 127.0.0.1:1883].
    #[arg(long, env = "SLS_LISTEN")]
    listen: Option<String>,
    /// Trigger topic [default: sls/trigger].
    #[arg(long, env = "SLS_TOPIC")]
    topic: Option<String>,
    /// Seed for sensor noise and detector dropout [default: 0].
    #[arg(long, env = "SLS_SEED")]
    seed: Option<u64>,
    /// Detector used on simulated frames: reference or oracle [default: reference].
    #[arg(long, env = "SLS_DETECTOR")]
    detector: Option<DetectorKind>,
    /// Place a marker in the simulated field at X,Y[,R] (crop pixels).
    #[arg(long)]
    marker: Option<String>,
    /// Initialization time in seconds [default: 20].
    #[arg(long)]
    init_s: Option<f64>,
    /// Capture window in seconds [default: 5].
    #[arg(long)]
    capture_s: Option<f64>,
    /// Detection budget in seconds [default: 3].
    #[arg(long)]
    detect_s: Option<f64>,
    /// Prefix for MQTT client ids [default: sls].
    #[arg(long, env = "SLS_CLIENT_ID_PREFIX")]
    client_id_prefix: Option<String>,
    /// MQTT keep-alive in seconds; 0 disables pings [default: 30].
    #[arg(long, env = "SLS_KEEP_ALIVE_S")]
    keep_alive_s: Option<u16>,
    /// Append every cycle report to this file, one JSON object per line.
    #[arg(long, env = "SLS_CYCLE_LOG")]
    cycle_log: Option<PathBuf>,
    /// Stop after this many completed cycles.
    #[arg(long)]
    max_cycles: Option<usize>,
    /// Stop after this many seconds.
    #[arg(long)]
    exit_after: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the controller on the wall clock with simulated hardware.
    Run(LiveArgs),
    /// Replay a scenario script on the virtual clock.
    Scenario {
        /// Scenario file (TOML).
        #[arg(long, env = "SLS_SCENARIO", conflicts_with = "bundled")]
        scenario: Option<PathBuf>,
        /// Name of a scenario shipped with the simulator.
        #[arg(long)]
        bundled: Option<String>,
        /// List the bundled scenarios and exit.
        #[arg(long)]
        list: bool,
        /// Override the script's seed.
        #[arg(long, env = "SLS_SEED")]
        seed: Option<u64>,
        /// Override the script's detector.
        #[arg(long)]
        detector: Option<DetectorKind>,
        /// Override the beam aim noise (pixels, per axis).
        #[arg(long)]
        aim_noise: Option<f64>,
        /// Write the full report (JSON) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic marker dataset.
    Dataset {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "SLS_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 132)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[arg(long, default_value_t = 30)]
        validation: usize,
        /// Extra marker-absent images for false-positive checks.
        #[arg(long, default_value_t = 0)]
        negatives: usize,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
    },
    /// Score a detector on a generated dataset.
    Eval {
        /// Dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Split to score; all splits present when omitted.
        #[arg(long)]
        split: Option<Split>,
        /// External detector HOST:PORT instead of the reference blob detector.
        #[arg(long)]
        endpoint: Option<String>,
        /// Timeout for the external detector, in milliseconds.
        #[arg(long, default_value_t = 2_000)]
        timeout_ms: u64,
        /// Fixed match radius in pixels instead of each marker's own radius.
        #[arg(long)]
        match_radius: Option<f64>,
    },
    /// Validate a calibration profile and print its angle envelope.
    CalibrateCheck {
        #[arg(long, env = "SLS_CALIBRATION")]
        calibration: Option<PathBuf>,
    },
    /// Serve the operator console websocket on top of a live simulated rig.
    ServeConsole {
        #[command(flatten)]
        live: LiveArgs,
        /// Websocket listen endpoint [default: 127.0.0.1:8765].
        #[arg(long, env = "SLS_CONSOLE_LISTEN")]
        console_listen: Option<String>,
        /// Cycles kept in the console history.
        #[arg(long, default_value_t = 10)]
        history: usize,
    },
    /// Publish a trigger state once, like pressing the foot switch.
    Trigger {
        /// Broker HOST:PORT [default: 127.0.0.1:1883].
        #[arg(long, env = "SLS_BROKER")]
        broker: Option<String>,
        #[arg(long, env = "SLS_TOPIC")]
        topic: Option<String>,
        /// ON or OFF.
        #[arg(long, default_value = "ON")]
        state: sls_mqtt::TriggerState,
        #[arg(long, env = "SLS_CLIENT_ID_PREFIX")]
        client_id_prefix: Option<String>,
        #[arg(long, env = "SLS_KEEP_ALIVE_S")]
        keep_alive_s: Option<u16>,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let out = Output { json: cli.json };
    let result =
        config::FileConfig::load(cli.config.as_deref()).and_then(|file| match cli.command {
            Command::Run(args) => commands::run(out, &file, &args),
            Command::Scenario {
                scenario,
                bundled,
                list,
                seed,
                detector,
                aim_noise,
                out: report_path,
            } => commands::scenario(
                out,
                commands::ScenarioArgs {
                    path: scenario,
                    bundled,
                    list,
                    seed,
                    detector,
                    aim_noise,
                    report_path,
                },
            ),
            Command::Dataset {
                out: dir,
                seed,
                train,
                test,
                validation,
                negatives,
                width,
                height,
            } => {
                let request = sls_core::detection::dataset::DatasetRequest {
                    train,
                    test,
                    validation,
                    negatives,
                    width,
                    height,
                };
                commands::dataset(out, &dir, seed, &request)
            }
            Command::Eval {
                dataset,
                split,
                endpoint,
                timeout_ms,
                match_radius,
            } => commands::eval(out, &dataset, split, endpoint, timeout_ms, match_radius),
            Command::CalibrateCheck { calibration } => {
                commands::calibrate_check(out, calibration.or(file.calibration))
            }
            Command::ServeConsole {
                live,
                console_listen,
                history,
            } => {
                let listen = console_listen
                    .or(file.console_listen.clone())
                    .unwrap_or_else(|| "127.0.0.1:8765".into());
                commands::serve_console(out, &file, &live, &listen, history)
            }
            Command::Trigger {
                broker,
                topic,
                state,
                client_id_prefix,
                keep_alive_s,
            } => commands::trigger(
                out,
                &broker
                    .or(file.broker.clone())
                    .unwrap_or_else(|| live::DEFAULT_LISTEN.into()),
                &topic
                    .or(file.topic.clone())
                    .unwrap_or_else(|| sls_mqtt::DEFAULT_TOPIC.into()),
                state,
                &commands::mqtt_identity(&file, client_id_prefix, keep_alive_s),
            ),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sls: {e}");
            e.exit_code()
        }
    }
}
