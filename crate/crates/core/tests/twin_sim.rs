use std::collections::BTreeMap;

use proptest::prelude::*;

use tuftwin_core::activity::{ConsequenceAction, ConsequenceCommand, Phase, Severity};
use tuftwin_core::twin::*;

fn config() -> MachineConfig {
    MachineConfig {
        air_min_ticks: 10,
        required_yarn: BTreeMap::from([(1, "nylon".to_owned()), (2, "nylon".to_owned())]),
        ..MachineConfig::default()
    }
}

fn initial() -> InitialState {
    InitialState {
        status: MachineStatus::Off,
        slots: BTreeMap::new(),
        substrate: SubstrateSpec {
            material: "jute".into(),
            length_m: 2.0,
            seam_positions_m: vec![0.02],
        },
    }
}

fn cell() -> WorkCell {
    WorkCell::new(config(), &initial()).unwrap()
}

fn command(action: ConsequenceAction) -> ConsequenceCommand {
    ConsequenceCommand {
        tick: 0,
        activity_id: "splice".into(),
        error_id: "yarn_break".into(),
        severity: Severity::Critical,
        action,
    }
}

fn faults(events: &[TwinEvent]) -> Vec<TwinError> {
    events
        .iter()
        .filter_map(|e| match e {
            TwinEvent::Fault { error, .. } => Some(error.clone()),
            _ => None,
        })
        .collect()
}

fn signals(events: &[TwinEvent]) -> Vec<(Operation, Phase)> {
    events
        .iter()
        .filter_map(|e| match e {
            TwinEvent::Signal { operation, phase, .. } => Some((*operation, *phase)),
            _ => None,
        })
        .collect()
}

fn mount(c: &mut WorkCell, slot: usize, yarn: &str) {
    c.apply_action(&OperatorAction::MountSpool {
        slot,
        yarn_type: yarn.into(),
    })
    .unwrap();
}

/// Required slots mounted with the right yarn and connected.
fn ready() -> WorkCell {
    let mut c = cell();
    for slot in [1, 2] {
        mount(&mut c, slot, "nylon");
        c.apply_action(&OperatorAction::ConnectYarn { slot }).unwrap();
    }
    c
}

#[test]
fn mount_spool_on_empty_slot() {
    let mut c = cell();
    let ev = c
        .apply_action(&OperatorAction::MountSpool {
            slot: 2,
            yarn_type: "wool".into(),
        })
        .unwrap();
    let s = &c.state().creel.slots[2];
    assert!(s.occupied);
    assert_eq!(s.yarn_type.as_deref(), Some("wool"));
    assert_eq!(
        signals(&ev),
        [(Operation::MountSpool, Phase::Start), (Operation::MountSpool, Phase::End)]
    );
    assert_eq!(c.state().machine.status, MachineStatus::Setup);
}

#[test]
fn wrong_yarn_is_detected_at_connect() {
    let mut c = cell();
    mount(&mut c, 2, "wool");
    let ev = c.apply_action(&OperatorAction::ConnectYarn { slot: 2 }).unwrap();
    assert_eq!(faults(&ev), [TwinError::WrongYarnType(2)]);
}

#[test]
fn connecting_an_empty_slot_is_an_error() {
    let mut c = cell();
    let ev = c.apply_action(&OperatorAction::ConnectYarn { slot: 4 }).unwrap();
    assert_eq!(faults(&ev), [TwinError::EmptySlotConnected(4)]);
    assert!(!c.state().creel.slots[4].connected);
}

#[test]
fn short_air_burst_reports_both_durations() {
    let mut c = cell();
    let ev = c
        .apply_action(&OperatorAction::ApplyCompressedAir { duration_ticks: 3 })
        .unwrap();
    assert_eq!(
        faults(&ev),
        [TwinError::AirDurationTooShort {
            measured: 3,
            required: 10
        }]
    );
}

#[test]
fn air_rule_sweep_around_threshold() {
    let t = 10;
    for d in [t - 2, t - 1, t, t + 1] {
        let mut c = cell();
        let ev = c
            .apply_action(&OperatorAction::ApplyCompressedAir { duration_ticks: d })
            .unwrap();
        let short = faults(&ev)
            .iter()
            .any(|f| matches!(f, TwinError::AirDurationTooShort { .. }));
        assert_eq!(short, d < t, "d = {d}");
    }
}

#[test]
fn idle_machine_only_advances_the_clock() {
    let mut c = cell();
    let before = c.state().clone();
    let ev = c.tick(10).unwrap();
    assert!(ev.is_empty());
    let mut after = c.state().clone();
    assert_eq!(after.tick, 10);
    after.tick = 0;
    assert_eq!(after, before);
    assert!(c.tick(0).is_err());
}

#[test]
fn nominal_production_appends_one_regular_row_per_period() {
    let mut c = ready();
    c.apply_action(&OperatorAction::StartMachine).unwrap();
    assert_eq!(c.state().machine.status, MachineStatus::Run);
    c.tick(c.config().row_period_ticks).unwrap();
    let rows = &c.state().product.rows;
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].quality, RowQuality::Regular);
}

#[test]
fn tension_block_interrupts_the_pattern_once() {
    let mut c = ready();
    c.inject_fault(TwinError::TensionBlocked(1)).unwrap();
    c.apply_action(&OperatorAction::StartMachine).unwrap();
    let ev = c.tick(c.config().row_period_ticks * 2).unwrap();
    assert_eq!(faults(&ev), [TwinError::TensionBlocked(1)]);
    for row in &c.state().product.rows {
        assert_eq!(row.quality, RowQuality::Interrupted("TensionBlocked".into()));
    }
}

#[test]
fn injected_yarn_break_manifests_on_next_running_tick() {
    let mut c = ready();
    c.apply_action(&OperatorAction::StartMachine).unwrap();
    c.inject_fault(TwinError::YarnBreak(1)).unwrap();
    let ev = c.tick(1).unwrap();
    assert_eq!(faults(&ev), [TwinError::YarnBreak(1)]);
    assert!(faults(&c.tick(30).unwrap()).iter().all(|f| *f != TwinError::YarnBreak(1)));
}

#[test]
fn injection_needs_an_existing_target() {
    let mut c = cell();
    let e = c.inject_fault(TwinError::TensionBlocked(3)).unwrap_err();
    assert_eq!(e.kind, RefusalKind::InvalidTarget);
    assert!(c.inject_fault(TwinError::YarnBreak(99)).is_err());
}

#[test]
fn stopping_before_the_next_tick_spares_the_product() {
    let mut c = ready();
    c.apply_action(&OperatorAction::StartMachine).unwrap();
    c.tick(5).unwrap();
    c.inject_fault(TwinError::YarnBreak(2)).unwrap();
    c.apply_action(&OperatorAction::StopMachine).unwrap();
    c.tick(50).unwrap();
    assert!(c.state().product.rows.is_empty());
}

#[test]
fn incomplete_setup_faults_on_start() {
    let mut c = cell();
    mount(&mut c, 1, "nylon");
    let ev = c.apply_action(&OperatorAction::StartMachine).unwrap();
    assert_eq!(signals(&ev), [(Operation::Production, Phase::Start)]);
    assert_eq!(faults(&ev), [TwinError::StartWhileSetupIncomplete]);
}

#[test]
fn splice_completes_after_its_duration() {
    let mut c = ready();
    c.inject_fault(TwinError::YarnBreak(1)).unwrap();
    let ev = c
        .apply_action(&OperatorAction::SpliceYarn {
            slot: 1,
            duration_ticks: 4,
        })
        .unwrap();
    assert_eq!(
        signals(&ev),
        [(Operation::SpliceYarn, Phase::Start), (Operation::SpliceYarn, Phase::Execute)]
    );
    assert!(signals(&c.tick(3).unwrap()).is_empty());
    let ev = c.tick(1).unwrap();
    assert_eq!(signals(&ev), [(Operation::SpliceYarn, Phase::End)]);
    assert_eq!(ev[0].tick(), 4);
    assert!(!c.state().creel.slots[1].yarn_broken);
    assert!(c.state().latched.is_empty());
}

#[test]
fn seam_crossing_is_reported() {
    let mut c = ready();
    c.apply_action(&OperatorAction::StartMachine).unwrap();
    // 0.005 m per row, seam at 0.02 m: crossed by the fourth row.
    let ev = c.tick(c.config().row_period_ticks * 4).unwrap();
    assert_eq!(faults(&ev), [TwinError::SeamUnderNeedles]);
}

#[test]
fn stop_command_interlocks() {
    let mut c = ready();
    c.apply_action(&OperatorAction::StartMachine).unwrap();
    c.execute_command(&command(ConsequenceAction::StopMachine));
    let m = &c.state().machine;
    assert_eq!(m.status, MachineStatus::EmergencyStop);
    assert_eq!(m.main_shaft_rpm, 0.0);
    assert!(m.interlocked);

    let mut off = cell();
    off.execute_command(&command(ConsequenceAction::StopMachine));
    assert_eq!(off.state().machine.status, MachineStatus::Off);
    assert!(off.state().machine.interlocked);
    let once = off.snapshot();
    off.execute_command(&command(ConsequenceAction::StopMachine));
    assert_eq!(off.snapshot(), once);

    off.execute_command(&command(ConsequenceAction::ShowConsequence {
        text: "yarn break at slot 1".into(),
        anchor: "creel.slot.1".into(),
    }));
    assert_eq!(off.state().feed.len(), 1);
}

#[test]
fn interlock_refuses_everything_but_focus() {
    let mut c = ready();
    c.execute_command(&command(ConsequenceAction::LockControls));
    let e = c.apply_action(&OperatorAction::StartMachine).unwrap_err();
    assert_eq!(e.kind, RefusalKind::InterlockActive);
    c.apply_action(&OperatorAction::Focus {
        element: "machine.panel".into(),
    })
    .unwrap();
    assert!(c.reset_interlock());
    c.apply_action(&OperatorAction::StartMachine).unwrap();
}

#[test]
fn out_of_bounds_parameters_are_rejected() {
    let mut c = cell();
    let before = c.snapshot();
    let e = c
        .apply_action(&OperatorAction::SetParameter {
            name: "main_shaft_rpm".into(),
            value: 5000.0,
        })
        .unwrap_err();
    assert_eq!(e.kind, RefusalKind::ParameterOutOfBounds);
    assert_eq!(c.snapshot(), before);
    let e = c
        .apply_action(&OperatorAction::SetParameter {
            name: "colour".into(),
            value: 1.0,
        })
        .unwrap_err();
    assert_eq!(e.kind, RefusalKind::UnknownParameter);
}

#[test]
fn snapshot_round_trips_and_is_canonical() {
    let mut c = ready();
    c.apply_action(&OperatorAction::StartMachine).unwrap();
    c.tick(37).unwrap();
    let text = c.snapshot();
    let back = WorkCell::from_snapshot(c.config().clone(), &text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.snapshot(), text);
    assert_eq!(ready().snapshot(), ready().snapshot());
    let fresh = cell();
    assert_eq!(WorkCell::from_snapshot(config(), &fresh.snapshot()).unwrap(), fresh);
}

#[test]
fn bad_initial_state_is_rejected() {
    let mut init = initial();
    init.slots.insert(
        9,
        SpoolSlot {
            occupied: true,
            ..SpoolSlot::default()
        },
    );
    assert!(matches!(
        WorkCell::new(config(), &init),
        Err(ConfigError::SlotOutOfRange { slot: 9, count: 8 })
    ));
    let mut init = initial();
    init.substrate.seam_positions_m = vec![3.0];
    assert!(WorkCell::new(config(), &init).is_err());
}

#[derive(Debug, Clone)]
enum Step {
    Act(OperatorAction),
    Tick(u64),
    Inject(TwinError),
    Command(ConsequenceAction),
}

fn arb_action() -> impl Strategy<Value = OperatorAction> {
    let slot = 0usize..9;
    prop_oneof![
        (slot.clone(), prop::sample::select(vec!["nylon", "wool"]))
            .prop_map(|(slot, y)| OperatorAction::MountSpool { slot, yarn_type: y.into() }),
        slot.clone().prop_map(|slot| OperatorAction::RemoveSpool { slot }),
        slot.clone().prop_map(|slot| OperatorAction::ConnectYarn { slot }),
        (slot, 0u64..6).prop_map(|(slot, d)| OperatorAction::SpliceYarn { slot, duration_ticks: d }),
        (0u64..15).prop_map(|d| OperatorAction::ApplyCompressedAir { duration_ticks: d }),
        (prop::sample::select(vec!["main_shaft_rpm", "pile_height", "x"]), -10.0f64..2000.0)
            .prop_map(|(n, value)| OperatorAction::SetParameter { name: n.into(), value }),
        Just(OperatorAction::StartMachine),
        Just(OperatorAction::StopMachine),
        prop::sample::select(vec!["creel.slot.1", "product", "nowhere"])
            .prop_map(|e| OperatorAction::Focus { element: e.into() }),
    ]
}

fn arb_step() -> impl Strategy<Value = Step> {
    prop_oneof![
        6 => arb_action().prop_map(Step::Act),
        3 => (1u64..25).prop_map(Step::Tick),
        1 => prop_oneof![
            (0usize..8).prop_map(TwinError::YarnBreak),
            (0usize..8).prop_map(TwinError::TensionBlocked),
            Just(TwinError::SeamUnderNeedles),
        ].prop_map(Step::Inject),
        1 => prop_oneof![
            Just(ConsequenceAction::StopMachine),
            Just(ConsequenceAction::LockControls),
        ].prop_map(Step::Command),
    ]
}

fn check_invariants(c: &WorkCell) -> Result<(), TestCaseError> {
    let s = c.state();
    let m = &s.machine;
    if m.status == MachineStatus::Run {
        prop_assert!(m.main_shaft_rpm > 0.0);
    }
    if m.interlocked {
        prop_assert!(matches!(m.status, MachineStatus::Off | MachineStatus::EmergencyStop));
    }
    prop_assert!(m.parameter_bounds["main_shaft_rpm"].contains(m.rpm_setpoint));
    prop_assert!(m.parameter_bounds["pile_height"].contains(m.pile_height));
    prop_assert!(m.pile_height > 0.0);
    for slot in &s.creel.slots {
        prop_assert!(!slot.connected || slot.occupied);
        prop_assert!(!slot.tension_blocked || slot.occupied);
    }
    for (i, row) in s.product.rows.iter().enumerate() {
        prop_assert_eq!(row.index, i as u64);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn invariants_hold_under_random_use(steps in prop::collection::vec(arb_step(), 0..60)) {
        let mut c = ready();
        for step in steps {
            let rows_before = c.state().product.rows.clone();
            let advanced_before = c.state().substrate.advanced_m;
            let events = match step {
                Step::Act(a) => c.apply_action(&a).unwrap_or_default(),
                Step::Tick(dt) => c.tick(dt).unwrap(),
                Step::Inject(f) => {
                    let _ = c.inject_fault(f);
                    Vec::new()
                }
                Step::Command(a) => {
                    c.execute_command(&command(a));
                    Vec::new()
                }
            };
            prop_assert!(events.windows(2).all(|w| w[0].tick() <= w[1].tick()));
            prop_assert!(events.iter().all(|e| e.tick() <= c.now()));
            check_invariants(&c)?;
            prop_assert!(c.state().product.rows.starts_with(&rows_before));
            prop_assert!(c.state().substrate.advanced_m >= advanced_before);
        }
    }

    #[test]
    fn interlock_freezes_the_machine(actions in prop::collection::vec(arb_action(), 1..40), run in any::<bool>()) {
        let mut c = ready();
        if run {
            c.apply_action(&OperatorAction::StartMachine).unwrap();
        }
        c.execute_command(&command(ConsequenceAction::StopMachine));
        let machine = c.state().machine.clone();
        let creel = c.state().creel.clone();
        for a in actions {
            let focus = matches!(a, OperatorAction::Focus { .. });
            match c.apply_action(&a) {
                Ok(_) => prop_assert!(focus),
                Err(r) => prop_assert!(r.kind == RefusalKind::InterlockActive || focus),
            }
            prop_assert_eq!(&c.state().machine, &machine);
            prop_assert_eq!(&c.state().creel, &creel);
        }
    }

    #[test]
    fn each_latched_fault_has_one_onset(slot in 1usize..3, kind in any::<bool>(), ticks in 1u64..80) {
        let mut c = ready();
        let fault = if kind { TwinError::YarnBreak(slot) } else { TwinError::TensionBlocked(slot) };
        c.inject_fault(fault.clone()).unwrap();
        c.apply_action(&OperatorAction::StartMachine).unwrap();
        let mut events = c.tick(ticks).unwrap();
        events.extend(c.tick(ticks).unwrap());
        prop_assert_eq!(faults(&events).iter().filter(|f| **f == fault).count(), 1);
    }
}
