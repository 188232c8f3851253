use chromactl_core::pumpcode::{check_program, generate_program, parse_program, ProgramError, ViolationCode};
use chromactl_core::{DeviceLimits, DeviceState, MixPlan, PumpModel, PumpProgram, Statement};
use proptest::prelude::*;

/// Setpoints and volumes as the generator emits them: one fraction digit.
fn tenths(max: u32) -> impl Strategy<Value = f64> {
    (0..=max * 10).prop_map(|t| t as f64 / 10.0)
}

fn statement() -> impl Strategy<Value = Statement> {
    prop_oneof![
        (1usize..=9, tenths(400)).prop_map(|(pump, setpoint)| Statement::Write { pump, setpoint }),
        tenths(200).prop_map(|volume_ml| Statement::SetVolume { volume_ml }),
    ]
}

/// Any statement list with at most one `setVolume`.
fn program() -> impl Strategy<Value = PumpProgram> {
    (prop::collection::vec(statement(), 1..12), prop::option::of(tenths(200))).prop_map(|(stmts, vol)| {
        let mut statements: Vec<Statement> = stmts
            .into_iter()
            .filter(|s| matches!(s, Statement::Write { .. }))
            .collect();
        if let Some(volume_ml) = vol {
            statements.push(Statement::SetVolume { volume_ml });
        }
        if statements.is_empty() {
            statements.push(Statement::SetVolume { volume_ml: 1.0 });
        }
        PumpProgram { statements }
    })
}

fn plan() -> impl Strategy<Value = MixPlan> {
    (prop::collection::vec(0.0..300.0f64, 3..=4), 0.1..100.0f64).prop_map(|(setpoints, total_volume_ml)| {
        let n = setpoints.len();
        MixPlan {
            target: chromactl_core::Color::WHITE,
            total_volume_ml,
            fractions: vec![1.0 / n as f64; n],
            volumes_ml: vec![total_volume_ml / n as f64; n],
            setpoints,
            flows: vec![0.0; n],
            duration_s: 0.0,
            predicted: chromactl_core::Color::WHITE,
            residual: 0.0,
            in_gamut: true,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn generated_programs_round_trip(plan in plan()) {
        let prog = generate_program(&plan);
        prop_assert_eq!(parse_program(&prog.to_text()).unwrap(), prog);
    }

    #[test]
    fn ast_round_trip(prog in program()) {
        let text = prog.to_text();
        let parsed = parse_program(&text).unwrap();
        prop_assert_eq!(&parsed, &prog);
        prop_assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn parser_tolerates_whitespace(prog in program()) {
        let spaced: String = prog
            .statements
            .iter()
            .map(|s| format!("  {s}   \n\n\t"))
            .collect();
        prop_assert_eq!(parse_program(&spaced).unwrap(), prog);
    }

    #[test]
    fn parser_never_panics(text in "[ -~\n]{0,120}") {
        let _ = parse_program(&text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn checker_is_pure(prog in program()) {
        let limits = DeviceLimits::default();
        let state = DeviceState::new(3, &[100.0; 3], 0);
        let models = vec![PumpModel::default(); 3];
        let before = state.clone();
        let a = check_program(&prog, &limits, &state, &models);
        let b = check_program(&prog, &limits, &state, &models);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(state, before);
        prop_assert_eq!(a.ok, a.violations.is_empty());
    }
}

#[test]
fn duplicate_set_volume_is_a_parse_error() {
    let err = parse_program("setVolume(1);\nsetVolume(2);").unwrap_err();
    assert_eq!(err, ProgramError::DuplicateSetVolume { line: 2, column: 1 });
}

#[test]
fn every_violation_class_is_reported() {
    let limits = DeviceLimits::default();
    let models = vec![PumpModel::default(); 3];
    let fresh = DeviceState::new(3, &[100.0; 3], 0);
    let cases = [
        ("Pump1.write(999);\nsetVolume(5);", ViolationCode::SetpointOverLimit),
        ("Pump7.write(150);\nsetVolume(5);", ViolationCode::NoSuchPump),
        ("Pump1.write(0);\nsetVolume(5);", ViolationCode::NoFlow),
        ("Pump1.write(150);", ViolationCode::MissingSetVolume),
        ("Pump1.write(150);\nsetVolume(500);", ViolationCode::VolumeOutOfRange),
    ];
    for (text, code) in cases {
        let report = check_program(&parse_program(text).unwrap(), &limits, &fresh, &models);
        assert!(report.has(code), "{text}: {report}");
    }
    let low = DeviceState::new(3, &[1.0, 100.0, 100.0], 0);
    let prog = parse_program("Pump1.write(150);\nsetVolume(5);").unwrap();
    assert!(check_program(&prog, &limits, &low, &models).has(ViolationCode::ReservoirLow));
}
