use nnpso_core::config::ScenarioConfig;
use nnpso_core::controller::{ControllerParams, GainSource};
use nnpso_core::mission::*;
use nnpso_core::sim::{MotionPattern, Vec2};
use nnpso_core::training::{track_spec, TrainingConfig};
use proptest::prelude::*;

fn gains(kp: f64, ki: f64, kd: f64, beta: f64) -> GainSource {
    GainSource::Constant(ControllerParams::new(kp, ki, kd, 2.5, beta))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn vehicle_limits_hold_every_tick(
        kp in 0.0..2.0f64, ki in 0.0..1.0f64, kd in 0.0..1.0f64, beta in 0.0..3.0f64,
        h in 1.3..5.0f64, v in 0.0..2.9f64, noise in proptest::option::of(0u64..100),
    ) {
        let s = EpisodeSettings::default();
        let spec = track_spec(&s, &TrainingConfig::default(), h, v, gains(kp, ki, kd, beta), noise).unwrap();
        let r = run_episode(&spec);
        for row in &r.log.rows {
            prop_assert!(row.drone_velocity.norm() <= s.sim.max_speed + 1e-9);
            prop_assert!(row.roll.abs() <= s.sim.max_tilt + 1e-12);
            prop_assert!(row.pitch.abs() <= s.sim.max_tilt + 1e-12);
        }
        prop_assert!(r.cost.total.is_finite() && r.cost.total >= 0.0);
        prop_assert!((r.cost.total - r.cost.sum_terms()).abs() <= 1e-9 * r.cost.total.max(1.0));
        prop_assert_eq!(r.landed(), r.cost.penalty == 0.0);
    }

    #[test]
    fn stages_only_move_along_legal_edges(
        kp in 0.0..2.0f64, kd in 0.0..1.0f64, h in 1.3..5.0f64, v in 0.0..2.9f64, seed in 0u64..50,
    ) {
        let spec = track_spec(&EpisodeSettings::default(), &TrainingConfig::default(), h, v, gains(kp, 0.0, kd, 1.0), Some(seed)).unwrap();
        let r = run_episode(&spec);
        for w in r.log.rows.windows(2) {
            let (a, b) = (w[0].stage, w[1].stage);
            prop_assert!(a == b || MissionStage::is_legal_transition(a, b), "{:?} -> {:?}", a, b);
        }
    }
}

#[test]
fn noisy_episodes_are_byte_identical() {
    let spec = track_spec(
        &EpisodeSettings::default(),
        &TrainingConfig::default(),
        4.0,
        2.0,
        gains(1.0, 0.1, 0.2, 1.0),
        Some(17),
    )
    .unwrap();
    let csv = || {
        let mut buf = Vec::new();
        write_trajectory_csv(&run_episode(&spec).log, &mut buf).unwrap();
        buf
    };
    let a = csv();
    assert_eq!(a, csv());
    let rows = read_trajectory_csv(a.as_slice(), "mem").unwrap();
    assert!(!rows.is_empty());
}

#[test]
fn different_noise_seeds_differ() {
    let mk = |seed| {
        let spec = track_spec(&EpisodeSettings::default(), &TrainingConfig::default(), 3.0, 1.0, gains(1.0, 0.1, 0.1, 1.0), Some(seed)).unwrap();
        run_episode(&spec).log.rows.last().unwrap().drone_position
    };
    assert_ne!(mk(1), mk(2));
}

#[test]
fn default_scenario_lands_on_the_centre() {
    let sc = ScenarioConfig::default();
    let spec = sc.episode(&EpisodeSettings::default(), GainSource::Constant(sc.constant_params(3.0))).unwrap();
    let r = run_episode(&spec);
    assert!(r.landed(), "{:?}", r.outcome);
    assert!(r.cost.d < 0.05, "{}", r.cost.d);
}

#[test]
fn slow_linear_boat_is_caught_from_the_side() {
    let sc = ScenarioConfig::from_toml_str(
        "boat.motion = \"linear\"\nboat.speed = 1.0\ndrone.offset = [-0.6, 0.4]\ndrone.altitude = 3.0\n",
        "side",
    )
    .unwrap();
    let spec = sc
        .episode(&EpisodeSettings::default(), GainSource::Constant(ControllerParams::new(1.2, 0.05, 0.05, 3.0, 0.5)))
        .unwrap();
    let r = run_episode(&spec);
    assert!(r.landed(), "{:?} {:?}", r.outcome, r.fault);
    assert!(r.cost.d < 0.25, "{}", r.cost.d);
}

#[test]
fn scenario_rejects_bad_motion() {
    let sc = ScenarioConfig::from_toml_str("boat.motion = \"circular\"\nboat.angular_speed = 0.0\n", "s").unwrap();
    let err = sc.episode(&EpisodeSettings::default(), gains(1.0, 0.0, 0.0, 1.0)).unwrap_err();
    assert!(err.to_string().contains("angular_speed"), "{err}");
    assert!(ScenarioConfig::from_toml_str("boat.motion = \"zigzag\"", "s").is_err());
    assert!(MotionPattern::stationary(Vec2::zeros(), 0.0).is_err());
}
