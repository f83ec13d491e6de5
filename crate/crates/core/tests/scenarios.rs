use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use child_core::follower_sim::scenario::run_scenario;

const SHIPPED: [&str; 3] = ["loco_manipulation", "full_body", "crawling"];

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn scenario(name: &str) -> PathBuf {
    root().join("../../scenarios").join(format!("{name}.toml"))
}

fn golden(name: &str) -> PathBuf {
    root().join("tests/golden").join(format!("{name}.events"))
}

// Set CHILD_BLESS=1 to rewrite the goldens after an intended behavior change.
#[test]
fn event_logs_match_goldens() {
    let bless = std::env::var_os("CHILD_BLESS").is_some();
    for name in SHIPPED {
        let start = Instant::now();
        let report = run_scenario(scenario(name)).unwrap();
        assert!(start.elapsed().as_secs_f64() < 5.0, "{name} too slow");
        assert!(report.passed(), "{report}");
        if bless {
            fs::write(golden(name), &report.event_log).unwrap();
            continue;
        }
        let expected = fs::read_to_string(golden(name)).unwrap();
        assert_eq!(report.event_log, expected, "{name} event log drifted");
    }
}

#[test]
fn reruns_are_byte_identical() {
    for name in SHIPPED {
        let a = run_scenario(scenario(name)).unwrap();
        let b = run_scenario(scenario(name)).unwrap();
        assert_eq!(a.event_log, b.event_log);
        assert_eq!(a.trajectory_log, b.trajectory_log);
    }
}

#[test]
fn loco_manipulation_walks_about_a_metre() {
    let report = run_scenario(scenario("loco_manipulation")).unwrap();
    let pose = report.final_state.base_pose;
    assert!((pose.x - 1.0).abs() < 0.1, "{pose:?}");
    assert!(pose.y.abs() < 1e-9 && pose.heading.abs() < 1e-9);
    assert_eq!(report.limit_violations, 0);
    assert_eq!(report.idle_commands, 0);
}

#[test]
fn written_logs_match_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(scenario("full_body")).unwrap();
    let (events, trajectory) = report.write_logs(dir.path()).unwrap();
    assert_eq!(fs::read_to_string(events).unwrap(), report.event_log);
    assert_eq!(fs::read_to_string(trajectory).unwrap(), report.trajectory_log);
}
