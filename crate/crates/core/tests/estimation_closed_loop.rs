//! Closed-loop estimation checks against simulator ground truth: the
//! simulator knows exactly what wrench it applied, so the estimator's
//! output can be scored directly.

use quadc_core::harness::{preset, run_scenario, MetricSpec, Scenario};
use quadc_core::simulator::DisturbanceProfile;

fn standing_scenario(duration_s: f64, disturbance: DisturbanceProfile) -> Scenario {
    let mut scenario = preset("constant_load").expect("preset exists");
    scenario.name = "standing_test".into();
    scenario.controller.gait.stance_fraction = 1.0; // stand, no stepping
    // A standing robot cannot step along with the compliance, so pin the
    // reference by making the admittance force gain negligible.
    scenario.controller.f_max = Some(1e9);
    scenario.duration_s = duration_s;
    scenario.disturbance = disturbance;
    scenario.metrics = vec![MetricSpec::NoFall];
    scenario
}

#[test]
fn static_equilibrium_horizontal_estimate_near_zero() {
    let scenario = standing_scenario(4.0, DisturbanceProfile::None);
    let out = run_scenario(&scenario).unwrap();
    assert!(!out.report.fall);
    // After filter settling, the horizontal base-force estimate stays small.
    let rows: Vec<_> = out.log.iter().skip(1000).collect();
    let mean_x = rows.iter().map(|r| r.f_b_hat[0]).sum::<f64>() / rows.len() as f64;
    let mean_y = rows.iter().map(|r| r.f_b_hat[1]).sum::<f64>() / rows.len() as f64;
    let norm = (mean_x * mean_x + mean_y * mean_y).sqrt();
    assert!(norm < 2.0, "static horizontal estimate {norm} N");
}

#[test]
fn constant_base_force_recovered_during_stance() {
    let scenario = standing_scenario(
        6.0,
        DisturbanceProfile::ConstantLoad {
            force: [20.0, 0.0, 0.0],
            moment: [0.0, 0.0, 0.0],
        },
    );
    let out = run_scenario(&scenario).unwrap();
    assert!(!out.report.fall);
    // Average over the final second.
    let n = out.log.len();
    let window = &out.log[n - 500..];
    let mean_x = window.iter().map(|r| r.f_b_hat[0]).sum::<f64>() / window.len() as f64;
    assert!(
        (17.0..=23.0).contains(&mean_x),
        "estimated F_x mean {mean_x} outside [17, 23]"
    );
}

#[test]
fn constant_base_force_recovered_while_trotting() {
    let mut scenario = preset("constant_load").expect("preset exists");
    scenario.duration_s = 8.0;
    scenario.disturbance = DisturbanceProfile::ConstantLoad {
        force: [20.0, 0.0, 0.0],
        moment: [0.0, 0.0, 0.0],
    };
    scenario.metrics = vec![MetricSpec::NoFall];
    let out = run_scenario(&scenario).unwrap();
    assert!(!out.report.fall);
    let n = out.log.len();
    let window = &out.log[n - 500..];
    let mean_x = window.iter().map(|r| r.f_b_hat[0]).sum::<f64>() / window.len() as f64;
    assert!(
        (17.0..=23.0).contains(&mean_x),
        "estimated F_x mean {mean_x} outside [17, 23] while trotting"
    );
}

#[test]
fn vertical_load_mean_error_within_ten_percent() {
    let scenario = preset("constant_load").expect("preset exists");
    let out = run_scenario(&scenario).unwrap();
    assert!(out.report.all_pass(), "{:#?}", out.report.results);
    let result = out
        .report
        .results
        .iter()
        .find(|r| r.name == "vertical_load_mean_error")
        .unwrap();
    assert!(result.value < 5.0, "mean error {} N", result.value);
}

/// Quasi-static round trip: a constant injected base wrench is recovered
/// within 15% averaged over 1 s windows.
#[test]
fn quasi_static_round_trip_within_fifteen_percent() {
    let applied = [24.0, -18.0, -35.0];
    let scenario = standing_scenario(
        6.0,
        DisturbanceProfile::ConstantLoad {
            force: applied,
            moment: [0.0, 0.0, 0.0],
        },
    );
    let out = run_scenario(&scenario).unwrap();
    assert!(!out.report.fall);
    let f_norm = (applied[0].powi(2) + applied[1].powi(2) + applied[2].powi(2)).sqrt();
    // 1 s windows over the settled half of the run.
    let n = out.log.len();
    for window in out.log[n / 2..].chunks(500) {
        if window.len() < 500 {
            continue;
        }
        let mut mean = [0.0; 3];
        for r in window {
            for k in 0..3 {
                mean[k] += r.f_b_hat[k] / window.len() as f64;
            }
        }
        let err = ((mean[0] - applied[0]).powi(2)
            + (mean[1] - applied[1]).powi(2)
            + (mean[2] - applied[2]).powi(2))
        .sqrt();
        assert!(
            err / f_norm <= 0.15,
            "round-trip error {:.3} of {:.3} N ({:.1}%)",
            err,
            f_norm,
            100.0 * err / f_norm
        );
    }
}

/// Quasi-static force realization: the ground reactions measured by the
/// simulator track the commanded total support (weight plus load) within 2%.
#[test]
fn commanded_support_realized_in_simulator() {
    let scenario = standing_scenario(
        5.0,
        DisturbanceProfile::ConstantLoad {
            force: [0.0, 0.0, -30.0],
            moment: [0.0, 0.0, 0.0],
        },
    );
    let out = run_scenario(&scenario).unwrap();
    assert!(!out.report.fall);
    let model = scenario.load_model().unwrap();
    let expected = model.total_mass * 9.81 + 30.0;
    let n = out.log.len();
    let window = &out.log[n - 1000..];
    let mean: f64 =
        window.iter().map(|r| r.total_normal_force).sum::<f64>() / window.len() as f64;
    assert!(
        (mean - expected).abs() / expected < 0.02,
        "support {mean:.1} vs expected {expected:.1}"
    );
}
