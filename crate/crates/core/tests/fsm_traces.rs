use proptest::prelude::*;
use sls_core::controller::{
    lights_for, step, AimSolution, Command, ControllerState, Event, EventKind, LogKind, Phase,
    SignalLights, TimingConfig,
};
use sls_core::geometry::{compute_pan_tilt, CalibrationProfile, CenteredPoint, PixelPoint};

fn aim(x: f64, y: f64) -> AimSolution {
    let cal = CalibrationProfile::default_profile();
    AimSolution {
        detections: 3,
        center: PixelPoint::new(x + 320.0, y + 240.0),
        solution: compute_pan_tilt(CenteredPoint::new(x, y), &cal),
    }
}

/// Feeds events in order and collects the trace.
fn drive(events: &[Event], cfg: &TimingConfig) -> (ControllerState, Vec<(Phase, Vec<Command>)>) {
    let mut state = ControllerState::default();
    let mut trace = Vec::new();
    for e in events {
        let (next, cmds) = step(&state, e, cfg);
        trace.push((next.phase, cmds));
        state = next;
    }
    (state, trace)
}

fn light_changes(trace: &[(Phase, Vec<Command>)]) -> Vec<&'static str> {
    trace
        .iter()
        .flat_map(|(_, cmds)| cmds.iter())
        .filter_map(|c| match c {
            Command::SetLights(l) => Some(l.name()),
            _ => None,
        })
        .collect()
}

#[test]
fn golden_cycle_trace() {
    let cfg = TimingConfig::default();
    let events = vec![
        Event::new(0, EventKind::PowerOn),
        Event::new(20_000, EventKind::InitDone),
        Event::new(21_000, EventKind::TriggerOn),
        Event::new(22_666, EventKind::FrameCaptured { index: 0 }),
        Event::new(24_333, EventKind::FrameCaptured { index: 1 }),
        Event::new(26_000, EventKind::FrameCaptured { index: 2 }),
        Event::new(26_000, EventKind::CaptureWindowElapsed { cycle: 1 }),
        Event::new(29_000, EventKind::DetectionDone(aim(64.0, -48.0))),
        Event::new(29_400, EventKind::AimReached),
    ];
    let (state, trace) = drive(&events, &cfg);
    assert_eq!(state.phase, Phase::Aimed);
    let phases: Vec<Phase> = trace.iter().map(|(p, _)| *p).collect();
    assert_eq!(
        phases,
        [
            Phase::Initializing,
            Phase::Ready,
            Phase::Capturing,
            Phase::Capturing,
            Phase::Capturing,
            Phase::Detecting,
            Phase::Detecting,
            Phase::Aiming,
            Phase::Aimed
        ]
    );
    assert_eq!(
        light_changes(&trace),
        ["red", "off", "yellow", "blue", "green"]
    );

    let captures: Vec<&Command> = trace
        .iter()
        .flat_map(|(_, c)| c)
        .filter(|c| matches!(c, Command::CaptureFrame { .. }))
        .collect();
    assert_eq!(captures.len(), 3);
    assert_eq!(
        trace[5].1[1],
        Command::RunDetection {
            frames: 3,
            deadline_ms: 29_000
        }
    );
    // 64 px right of center in a 320 px half-width with a 30° half-span.
    let moved = trace[7].1.iter().find_map(|c| match c {
        Command::MoveServos(a) => Some(*a),
        _ => None,
    });
    let a = moved.expect("servos commanded");
    assert!((a.theta_x - 84.0).abs() < 1e-12);
    assert!((a.theta_y - 94.0).abs() < 1e-12);
}

#[test]
fn retrigger_during_cycle_is_idempotent() {
    let cfg = TimingConfig::default();
    let base = vec![
        Event::new(0, EventKind::PowerOn),
        Event::new(20_000, EventKind::InitDone),
        Event::new(21_000, EventKind::TriggerOn),
    ];
    let (s, _) = drive(&base, &cfg);
    for phase_events in [
        vec![],
        vec![Event::new(
            26_000,
            EventKind::CaptureWindowElapsed { cycle: 1 },
        )],
        vec![
            Event::new(26_000, EventKind::CaptureWindowElapsed { cycle: 1 }),
            Event::new(27_000, EventKind::DetectionDone(aim(0.0, 0.0))),
        ],
    ] {
        let mut state = s.clone();
        for e in &phase_events {
            state = step(&state, e, &cfg).0;
        }
        let (again, cmds) = step(&state, &Event::new(28_000, EventKind::TriggerOn), &cfg);
        assert_eq!(again, state);
        assert!(matches!(cmds.as_slice(), [Command::LogEvent(r)] if r.kind == LogKind::Ignored));
    }
}

#[test]
fn zero_detections_never_move_servos() {
    let cfg = TimingConfig::default();
    let events = vec![
        Event::new(0, EventKind::PowerOn),
        Event::new(20_000, EventKind::InitDone),
        Event::new(21_000, EventKind::TriggerOn),
        Event::new(26_000, EventKind::CaptureWindowElapsed { cycle: 1 }),
        Event::new(29_000, EventKind::DetectionFailed { detections: 0 }),
        Event::new(29_001, EventKind::AimReached),
    ];
    let (state, trace) = drive(&events, &cfg);
    assert_eq!(state.phase, Phase::Ready);
    assert!(!trace
        .iter()
        .flat_map(|(_, c)| c)
        .any(|c| matches!(c, Command::MoveServos(_))));
    assert_eq!(
        light_changes(&trace),
        ["red", "off", "yellow", "blue", "off"]
    );
}

#[test]
fn window_elapsed_with_partial_frames_still_detects() {
    let cfg = TimingConfig::default();
    let events = vec![
        Event::new(0, EventKind::PowerOn),
        Event::new(20_000, EventKind::InitDone),
        Event::new(21_000, EventKind::TriggerOn),
        Event::new(22_666, EventKind::FrameCaptured { index: 0 }),
        Event::new(26_000, EventKind::CaptureWindowElapsed { cycle: 1 }),
    ];
    let (state, trace) = drive(&events, &cfg);
    assert_eq!(state.phase, Phase::Detecting);
    assert_eq!(
        trace.last().unwrap().1[1],
        Command::RunDetection {
            frames: 1,
            deadline_ms: 29_000
        }
    );
}

#[test]
fn stale_window_timer_from_previous_cycle_is_silent() {
    let cfg = TimingConfig::default();
    let s = ControllerState {
        phase: Phase::Capturing,
        cycle: 2,
        entered_at_ms: 100,
        ..Default::default()
    };
    let (next, cmds) = step(
        &s,
        &Event::new(200, EventKind::CaptureWindowElapsed { cycle: 1 }),
        &cfg,
    );
    assert_eq!(next, s);
    assert!(cmds.is_empty());
}

#[test]
fn fault_then_power_on_reinitializes() {
    let cfg = TimingConfig::default();
    let events = vec![
        Event::new(0, EventKind::PowerOn),
        Event::new(20_000, EventKind::InitDone),
        Event::new(21_000, EventKind::TriggerOn),
        Event::new(
            21_500,
            EventKind::HardwareFault {
                reason: "camera unplugged".into(),
            },
        ),
        Event::new(22_000, EventKind::TriggerOn),
        Event::new(23_000, EventKind::PowerOn),
    ];
    let (state, trace) = drive(&events, &cfg);
    assert_eq!(state.phase, Phase::Initializing);
    assert_eq!(trace[3].0, Phase::Fault);
    assert_eq!(trace[4].0, Phase::Fault);
    assert_eq!(
        light_changes(&trace),
        ["red", "off", "yellow", "red", "red"]
    );
}

#[test]
fn events_before_phase_entry_are_stale() {
    let cfg = TimingConfig::default();
    let s = ControllerState {
        phase: Phase::Ready,
        entered_at_ms: 5_000,
        ..Default::default()
    };
    let (next, cmds) = step(&s, &Event::new(4_000, EventKind::TriggerOn), &cfg);
    assert_eq!(next, s);
    assert!(matches!(cmds.as_slice(), [Command::LogEvent(r)] if r.kind == LogKind::Stale));
}

fn arb_event_kind() -> impl Strategy<Value = EventKind> {
    prop_oneof![
        Just(EventKind::PowerOn),
        Just(EventKind::InitDone),
        Just(EventKind::TriggerOn),
        Just(EventKind::TriggerOff),
        (0u8..5).prop_map(|index| EventKind::FrameCaptured { index }),
        (0u32..4).prop_map(|cycle| EventKind::CaptureWindowElapsed { cycle }),
        (-320.0..320.0f64, -240.0..240.0f64).prop_map(|(x, y)| EventKind::DetectionDone(aim(x, y))),
        (0u8..4).prop_map(|detections| EventKind::DetectionFailed { detections }),
        Just(EventKind::AimReached),
        Just(EventKind::HardwareFault { reason: "x".into() }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn random_sequences_keep_invariants(
        kinds in proptest::collection::vec(arb_event_kind(), 1..40),
        gaps in proptest::collection::vec(0u64..3_000, 40),
    ) {
        let cfg = TimingConfig::default();
        let mut t = 0;
        let mut state = ControllerState::default();
        for (kind, gap) in kinds.into_iter().zip(gaps) {
            t += gap;
            let before = state.clone();
            let (next, cmds) = step(&state, &Event::new(t, kind.clone()), &cfg);
            // Same input, same output.
            prop_assert_eq!(step(&before, &Event::new(t, kind.clone()), &cfg), (next.clone(), cmds.clone()));
            prop_assert!(lights_for(next.phase).lit_count() <= 1);
            let captures = cmds.iter().filter(|c| matches!(c, Command::CaptureFrame { .. })).count();
            let started = before.phase != Phase::Capturing && next.phase == Phase::Capturing;
            prop_assert_eq!(captures, if started { 3 } else { 0 });
            for c in &cmds {
                if let Command::SetLights(l) = c {
                    prop_assert!(l.lit_count() <= 1);
                    prop_assert_eq!(*l, lights_for(next.phase));
                }
                if let Command::MoveServos(_) = c {
                    prop_assert_eq!(before.phase, Phase::Detecting);
                    prop_assert!(matches!(kind, EventKind::DetectionDone(_)));
                }
            }
            if next.phase != before.phase && next.phase != Phase::Aiming {
                let last = cmds.iter().find_map(|c| match c { Command::SetLights(l) => Some(*l), _ => None });
                prop_assert_eq!(last, Some(lights_for(next.phase)));
            }
            state = next;
        }
        prop_assert!(state.lights() == SignalLights::OFF || state.lights().lit_count() == 1 || state.phase == Phase::Off);
    }
}
