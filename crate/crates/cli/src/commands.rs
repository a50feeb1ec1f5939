use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::json;
use sls_core::controller::{run_live, Controller, EventKind, LiveInput, Notice, SignalLights};
use sls_core::detection::dataset::{
    generate_dataset, load_manifest, DatasetError, DatasetRequest, Split,
};
use sls_core::detection::eval::{evaluate_detector, EvalError, EvalOptions};
use sls_core::detection::DetectorSpec;
use sls_core::geometry::{compute_pan_tilt, correct_marker_coords, PixelPoint};
use sls_mqtt::{trigger_client, Backoff, ScheduleEntry, TriggerState};
use sls_sim::{bundled, run_scenario, DetectorKind, ScenarioError, ScenarioScript, BUNDLED};

use crate::config::{self, FileConfig, TimingOverrides};
use crate::console::{Commands, ConsoleServer, ConsoleState, Hub, Projector};
use crate::error::CliError;
use crate::live::{parse_marker, LiveSettings, LiveSystem, MqttIdentity, DEFAULT_LISTEN};
use crate::output::Output;
use crate::LiveArgs;

fn live_settings(file: &FileConfig, args: &LiveArgs) -> Result<LiveSettings, CliError> {
    let calibration =
        config::calibration(args.calibration.as_deref().or(file.calibration.as_deref()))?;
    let overrides = TimingOverrides {
        init_s: args.init_s,
        capture_s: args.capture_s,
        detect_s: args.detect_s,
    };
    let timing = overrides.apply(file.timing.unwrap_or_default())?;
    let marker = args
        .marker
        .as_deref()
        .map(parse_marker)
        .transpose()
        .map_err(CliError::Config)?;
    Ok(LiveSettings {
        calibration,
        timing,
        detector: args.detector.or(file.detector).unwrap_or_default(),
        seed: args.seed.or(file.seed).unwrap_or(0),
        broker: args.broker.clone().or_else(|| file.broker.clone()),
        listen: args
            .listen
            .clone()
            .or_else(|| file.listen.clone())
            .unwrap_or_else(|| DEFAULT_LISTEN.into()),
        topic: args
            .topic
            .clone()
            .or_else(|| file.topic.clone())
            .unwrap_or_else(|| sls_mqtt::DEFAULT_TOPIC.into()),
        mqtt: mqtt_identity(file, args.client_id_prefix.clone(), args.keep_alive_s),
        marker,
    })
}

pub fn mqtt_identity(
    file: &FileConfig,
    prefix: Option<String>,
    keep_alive_s: Option<u16>,
) -> MqttIdentity {
    let default = MqttIdentity::default();
    MqttIdentity {
        client_id_prefix: prefix
            .or_else(|| file.client_id_prefix.clone())
            .unwrap_or(default.client_id_prefix),
        keep_alive_s: keep_alive_s
            .or(file.keep_alive_s)
            .unwrap_or(default.keep_alive_s),
    }
}

fn describe(notice: &Notice) -> Option<String> {
    let secs = |ms: u64| format!("[{:>8.3} s]", ms as f64 / 1000.0);
    Some(match notice {
        Notice::Phase {
            at_ms,
            from,
            to,
            lights,
        } => {
            format!(
                "{} phase {from:?} -> {to:?}, lights {}",
                secs(*at_ms),
                lights.name()
            )
        }
        Notice::Servo { .. } => return None,
        Notice::Log(r) => format!("{} {:?}: {}", secs(r.at_ms), r.kind, r.detail),
        Notice::Cycle(r) => format!(
            "{} cycle {} {:?}: {}/{} detections, angles {}, {} ms",
            secs(r.trigger_ms + r.total_ms),
            r.cycle,
            r.outcome,
            r.detections,
            r.frames_captured,
            r.angles.map_or("unchanged".to_owned(), |a| format!(
                "({:.3}, {:.3})",
                a.theta_x, a.theta_y
            )),
            r.total_ms
        ),
    })
}

/// Hosts the controller on the wall clock until interrupted or a limit hits.
fn live_loop(
    out: Output,
    sys: &mut LiveSystem,
    args: &LiveArgs,
    mut extra: impl FnMut(&Controller, &[Notice]),
) -> Result<(), CliError> {
    let reason = Arc::new(Mutex::new(None::<&'static str>));
    {
        let (tx, reason) = (sys.inputs.clone(), reason.clone());
        let installed = ctrlc::set_handler(move || {
            reason
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .get_or_insert("interrupt");
            let _ = tx.send(LiveInput::Stop);
        });
        if let Err(e) = installed {
            log::warn!("cannot install interrupt handler: {e}");
        }
    }
    let mut cycle_log = match &args.cycle_log {
        Some(path) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| {
                    CliError::Config(format!("cannot open cycle log {}: {e}", path.display()))
                })?,
        ),
        None => None,
    };
    let start = Instant::now();
    let exit_after = args.exit_after.map(Duration::from_secs_f64);
    let stopping = AtomicBool::new(false);
    let inputs = sys.inputs.clone();
    sys.rig.controller.post(0, EventKind::PowerOn);
    run_live(&mut sys.rig.controller, &sys.receiver, start, |c| {
        let notices = c.drain_notices();
        for n in &notices {
            if let Some(text) = describe(n) {
                out.emit(n, || text);
            } else if out.json {
                out.emit(n, String::new);
            }
        }
        if let Some(file) = cycle_log.as_mut() {
            for n in &notices {
                if let Notice::Cycle(report) = n {
                    if let Err(e) = report.write_jsonl(file) {
                        log::error!("cycle log write failed: {e}");
                    }
                }
            }
        }
        extra(c, &notices);
        let limit =
            if args.max_cycles.is_some_and(|m| c.reports().len() >= m) && !c.servo_settling() {
                Some("max_cycles")
            } else if exit_after.is_some_and(|d| start.elapsed() >= d) {
                Some("exit_after")
            } else {
                None
            };
        if let Some(why) = limit {
            if !stopping.swap(true, Ordering::SeqCst) {
                reason
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .get_or_insert(why);
                let _ = inputs.send(LiveInput::Stop);
            }
        }
    });
    let c = &sys.rig.controller;
    let why = reason
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .unwrap_or("stopped");
    out.emit(
        &json!({
            "event": "stopped",
            "reason": why,
            "at_ms": c.now_ms(),
            "phase": c.phase(),
            "lights": c.state().lights(),
            "cycles": c.reports().len(),
        }),
        || {
            format!(
                "stopped ({why}) in {:?} after {} cycles",
                c.phase(),
                c.reports().len()
            )
        },
    );
    Ok(())
}

pub fn run(out: Output, file: &FileConfig, args: &LiveArgs) -> Result<(), CliError> {
    let settings = live_settings(file, args)?;
    let detector = settings.detector;
    let mut sys = LiveSystem::start(settings)?;
    out.emit(
        &json!({
            "event": "started",
            "broker": sys.endpoint,
            "embedded_broker": sys.embedded_broker(),
            "topic": sys.topic,
            "detector": detector,
        }),
        || {
            format!(
                "controller up; triggers on {} at {}",
                sys.topic, sys.endpoint
            )
        },
    );
    live_loop(out, &mut sys, args, |_, _| {})
}

pub fn serve_console(
    out: Output,
    file: &FileConfig,
    args: &LiveArgs,
    listen: &str,
    history: usize,
) -> Result<(), CliError> {
    let settings = live_settings(file, args)?;
    let mut sys = LiveSystem::start(settings)?;
    let cal = *sys.rig.controller.calibration();
    let beam = sys.rig.beam();
    let state = ConsoleState {
        phase: sys.rig.controller.phase(),
        lights: SignalLights::OFF,
        marker: sys.rig.with_world(|w| w.scene.marker),
        servo: beam.angles,
        beam: crate::console::BeamView {
            x: beam.aim_point.x,
            y: beam.aim_point.y,
            spot_radius: beam.spot_radius,
        },
        crop_width: cal.crop.width,
        crop_height: cal.crop.height,
        cycles: Default::default(),
    };
    let hub = Arc::new(Hub::new(state, history));
    let world = sys.rig.world().clone();
    let commands = Arc::new(Commands::new(
        hub.clone(),
        world.clone(),
        sys.endpoint.clone(),
        sys.topic.clone(),
        sys.mqtt.options("console"),
    ));
    let mut server = ConsoleServer::bind(listen, commands)
        .map_err(|e| CliError::Bind(format!("cannot bind console on {listen}: {e}")))?;
    let addr = server.local_addr();
    out.emit(
        &json!({
            "event": "listening",
            "console": format!("ws://{addr}"),
            "broker": sys.endpoint,
            "topic": sys.topic,
        }),
        || {
            format!(
                "console on ws://{addr}; triggers on {} at {}",
                sys.topic, sys.endpoint
            )
        },
    );
    let mut projector = Projector::new(hub, world, cal, beam.spot_radius);
    let result = live_loop(out, &mut sys, args, |c, n| projector.on_tick(c, n));
    server.shutdown();
    result
}

pub struct ScenarioArgs {
    pub path: Option<PathBuf>,
    pub bundled: Option<String>,
    pub list: bool,
    pub seed: Option<u64>,
    pub detector: Option<DetectorKind>,
    pub aim_noise: Option<f64>,
    pub report_path: Option<PathBuf>,
}

pub fn scenario(out: Output, args: ScenarioArgs) -> Result<(), CliError> {
    if args.list {
        for (name, _) in BUNDLED {
            let script = bundled(name).expect("bundled scenario");
            out.emit(
                &json!({ "name": name, "description": script.description }),
                || format!("{name:<20} {}", script.description),
            );
        }
        return Ok(());
    }
    let mut script = match (&args.path, &args.bundled) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read scenario {}: {e}", path.display()))
            })?;
            ScenarioScript::parse(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => bundled(name).ok_or_else(|| {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!(
                "no bundled scenario {name:?}; available: {}",
                names.join(", ")
            ))
        })?,
        (None, None) => {
            return Err(CliError::Config(
                "pass --scenario PATH or --bundled NAME".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        script.seed = seed;
    }
    if let Some(d) = args.detector {
        script.rig.detector = Some(d);
    }
    if let Some(noise) = args.aim_noise {
        script.rig.aim_noise_px = Some(noise);
    }

    let report = match run_scenario(&script) {
        Ok(r) => r,
        Err(e @ ScenarioError::Deadline { .. }) => return Err(CliError::Assertion(e.to_string())),
        Err(
            e @ (ScenarioError::Parse(_) | ScenarioError::Invalid(_) | ScenarioError::Scene(_)),
        ) => return Err(CliError::Config(e.to_string())),
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    };
    if let Some(path) = &args.report_path {
        std::fs::write(path, report.to_json())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    out.emit(&report, || {
        let mut lines = vec![format!(
            "scenario {}: {} cycle(s), final beam error {}",
            report.name,
            report.cycles.len(),
            report
                .final_beam_error_px
                .map_or("n/a".into(), |e| format!("{e:.3} px"))
        )];
        for c in &report.cycles {
            lines.push(format!(
                "  cycle {} {:?}: {} detections, beam error {}",
                c.report.cycle,
                c.report.outcome,
                c.report.detections,
                c.beam_error_px
                    .map_or("n/a".into(), |e| format!("{e:.3} px"))
            ));
        }
        for check in &report.checks {
            lines.push(format!(
                "  {} {}: {}",
                if check.passed { "ok  " } else { "FAIL" },
                check.name,
                check.detail
            ));
        }
        lines.join("\n")
    });
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.clone())
            .collect();
        Err(CliError::Assertion(format!(
            "scenario {} failed: {}",
            report.name,
            failed.join(", ")
        )))
    }
}

pub fn dataset(
    out: Output,
    dir: &Path,
    seed: u64,
    request: &DatasetRequest,
) -> Result<(), CliError> {
    let manifest = generate_dataset(dir, seed, request).map_err(|e| match e {
        DatasetError::BadCounts(m) => CliError::Config(m),
        other => CliError::Runtime(other.to_string()),
    })?;
    let counts: serde_json::Map<String, serde_json::Value> = Split::ALL
        .iter()
        .map(|s| (s.to_string(), manifest.count(*s).into()))
        .collect();
    out.emit(
        &json!({
            "event": "dataset",
            "dir": dir,
            "seed": seed,
            "total": manifest.entries.len(),
            "splits": counts,
            "manifest": dir.join(sls_core::detection::dataset::MANIFEST_FILE),
        }),
        || {
            format!(
                "wrote {} images to {} (train {}, test {}, validation {}, negative {})",
                manifest.entries.len(),
                dir.display(),
                manifest.count(Split::Train),
                manifest.count(Split::Test),
                manifest.count(Split::Validation),
                manifest.count(Split::Negative)
            )
        },
    );
    Ok(())
}

pub fn eval(
    out: Output,
    dir: &Path,
    split: Option<Split>,
    endpoint: Option<String>,
    timeout_ms: u64,
    match_radius: Option<f64>,
) -> Result<(), CliError> {
    let manifest = load_manifest(dir).map_err(|e| match e {
        DatasetError::Malformed { .. } => CliError::Config(e.to_string()),
        other => CliError::MissingDataset(other.to_string()),
    })?;
    if manifest.entries.is_empty() {
        return Err(CliError::MissingDataset(format!(
            "no images listed in {}",
            dir.display()
        )));
    }
    let spec = match endpoint {
        Some(endpoint) => DetectorSpec::External {
            endpoint,
            timeout_ms,
        },
        None => DetectorSpec::default(),
    };
    let splits: Vec<Split> = match split {
        Some(s) => vec![s],
        None => Split::ALL
            .into_iter()
            .filter(|s| manifest.count(*s) > 0)
            .collect(),
    };
    for s in splits {
        let m = evaluate_detector(&spec, dir, &manifest, s, EvalOptions { match_radius }).map_err(
            |e| match e {
                EvalError::MissingDataset(m) => CliError::MissingDataset(m),
                EvalError::Dataset(DatasetError::Io { .. }) => {
                    CliError::MissingDataset(e.to_string())
                }
                other => CliError::Runtime(other.to_string()),
            },
        )?;
        out.emit(&m, || {
            format!(
                "{:<10} images {:>4}  recall {:.4}  centroid error mean {:.3} px max {:.3} px  false positives {}",
                m.split.as_str(),
                m.images,
                m.recall,
                m.mean_centroid_error_px,
                m.max_centroid_error_px,
                m.false_positives
            )
        });
    }
    Ok(())
}

pub fn calibrate_check(out: Output, path: Option<PathBuf>) -> Result<(), CliError> {
    let path = path
        .ok_or_else(|| CliError::Config("pass --calibration PATH (or SLS_CALIBRATION)".into()))?;
    let cal = config::calibration(Some(&path))?;
    let (w, h) = (f64::from(cal.crop.width), f64::from(cal.crop.height));
    let points = [
        ("center", w / 2.0, h / 2.0),
        ("top_left", 0.0, 0.0),
        ("top_right", w, 0.0),
        ("bottom_left", 0.0, h),
        ("bottom_right", w, h),
    ];
    let envelope: Vec<serde_json::Value> = points
        .iter()
        .map(|(name, x, y)| {
            let c = correct_marker_coords(PixelPoint::new(*x, *y), &cal.crop)
                .expect("corner inside crop");
            let a = compute_pan_tilt(c, &cal).angles;
            json!({ "point": name, "x": x, "y": y, "theta_x": a.theta_x, "theta_y": a.theta_y })
        })
        .collect();
    out.emit(
        &json!({ "event": "calibration_ok", "path": path, "profile": cal, "envelope": envelope }),
        || {
            let mut lines = vec![format!("{}: valid", path.display())];
            for e in &envelope {
                lines.push(format!(
                    "  {:<13} ({:>5.0}, {:>5.0}) -> pan {:>8.3}  tilt {:>8.3}",
                    e["point"].as_str().unwrap_or(""),
                    e["x"].as_f64().unwrap_or(f64::NAN),
                    e["y"].as_f64().unwrap_or(f64::NAN),
                    e["theta_x"].as_f64().unwrap_or(f64::NAN),
                    e["theta_y"].as_f64().unwrap_or(f64::NAN)
                ));
            }
            lines.join("\n")
        },
    );
    Ok(())
}

pub fn trigger(
    out: Output,
    broker: &str,
    topic: &str,
    state: TriggerState,
    mqtt: &MqttIdentity,
) -> Result<(), CliError> {
    let options = mqtt.options("trigger");
    let schedule = [ScheduleEntry {
        at: Duration::ZERO,
        state,
    }];
    let run = trigger_client(broker, topic, &schedule, &options, &Backoff::default())
        .map_err(|e| CliError::Runtime(format!("cannot publish to {broker}: {e}")))?;
    out.emit(
        &json!({ "event": "published", "broker": broker, "topic": topic, "state": state.to_string(), "retries": run.retries }),
        || format!("published {state} on {topic} at {broker}"),
    );
    Ok(())
}
