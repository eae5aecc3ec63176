use dashbell_core::device_sim::Scenario;
use dashbell_core::sim::{run, RunOutcome, SimConfig, Transport};

fn go(text: &str) -> RunOutcome {
    let scenario = Scenario::parse(text).expect("scenario parses");
    run(&scenario, &SimConfig::default()).expect("run succeeds")
}

fn go_sockets(text: &str) -> RunOutcome {
    let scenario = Scenario::parse(text).expect("scenario parses");
    let config = SimConfig {
        transport: Transport::Sockets,
        ..SimConfig::default()
    };
    run(&scenario, &config).expect("run succeeds")
}

#[test]
fn grant() {
    let out = go("seed 1\n0 press aa:bb:cc:dd:ee:01\n1000 decide 1 grant\n");
    println!("{}", out.report);
    let r = &out.report;
    assert_eq!(r.count("entries"), 1);
    assert_eq!(r.count("granted"), 1);
    assert_eq!(r.count("servo.open"), 1);
    assert_eq!(r.count("servo.close"), 1);
    assert_eq!(r.count("pushes"), 1);
    assert_eq!(r.get("diagnosis"), Some("none"));
}

#[test]
fn deny() {
    let out = go("0 press aa:bb:cc:dd:ee:01\n1000 decide 1 deny\n");
    let r = &out.report;
    assert_eq!(r.count("denied"), 1);
    assert_eq!(r.count("servo.open"), 0);
    assert_eq!(r.count("servo.close"), 0);
}

#[test]
fn empty() {
    let out = go("");
    assert_eq!(out.report.count("entries"), 0);
    assert_eq!(out.report.get("diagnosis"), Some("none"));
}

#[test]
fn transports_agree() {
    let text = "seed 4\n0 press aa:bb:cc:dd:ee:01\n1000 decide 1 grant\n3000 kill edge_channel\n\
                4000 press aa:bb:cc:dd:ee:02\n9000 revive edge_channel\n12000 decide 2 deny\n";
    assert_eq!(
        go(text).report.to_string(),
        go_sockets(text).report.to_string()
    );
}

#[test]
fn camera_kill_reported_within_one_interval() {
    let out = go("2000 kill camera\n8000 end\n");
    let t = out
        .transitions
        .iter()
        .find(|t| t.component.as_str() == "camera" && t.to.to_string() == "failed")
        .expect("camera failed");
    assert!(t.at <= 3000, "{}", out.report);
    assert_eq!(out.report.get("diagnosis"), Some("camera"));
}

#[test]
fn edge_hang_detected_within_four_intervals() {
    let out = go("2000 kill edge\n12000 end\n");
    let t = out
        .transitions
        .iter()
        .find(|t| t.component.as_str() == "edge" && t.to.to_string() == "failed")
        .expect("edge failed");
    assert!(t.at <= 2000 + 4 * 1000 + 1, "{}", out.report);
}

#[test]
fn edge_channel_outage_collapses() {
    let out = go("2000 kill edge_channel\n12000 end\n");
    println!("{}", out.report);
    assert_eq!(out.report.get("diagnosis"), Some("edge_channel"));
    assert_eq!(out.report.get("health.camera"), Some("unreachable"));
    assert!(out
        .transitions
        .iter()
        .all(|t| !(t.component.is_peripheral() && t.to.to_string() == "failed")));
}

#[test]
fn decision_during_outage_actuates_once() {
    let out = go(
        "0 press aa:bb:cc:dd:ee:01\n1000 kill edge_channel\n2000 decide 1 grant\n\
                  5000 revive edge_channel\n20000 end\n",
    );
    assert_eq!(out.report.count("servo.open"), 1, "{}", out.report);
}

#[test]
fn server_restart_delivers_queued_press_once() {
    let out = go("1000 kill server\n2000 press aa:bb:cc:dd:ee:01\n5000 revive server\n20000 end\n");
    assert_eq!(out.report.count("entries"), 1, "{}", out.report);
}

#[test]
fn random_scenarios_keep_invariants() {
    use dashbell_core::sim::gen::{random_scenario, GenOptions};
    let (mut granted, mut entries) = (0, 0);
    for seed in 0..200 {
        let scenario = random_scenario(seed, &GenOptions::default());
        let out = match run(&scenario, &SimConfig::default()) {
            Ok(out) => out,
            Err(e) => panic!("seed {seed}: {e}\n{}", scenario.to_text()),
        };
        assert_eq!(
            out.report.count("servo.open"),
            out.report.count("granted"),
            "seed {seed}\n{}\n{}",
            scenario.to_text(),
            out.report
        );
        granted += out.report.count("granted");
        entries += out.report.count("entries");
    }
    println!("entries={entries} granted={granted}");
    assert!(granted > 50 && entries > granted);
}

#[test]
fn golden_report() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let out = dashbell_core::sim::run_file(&dir.join("press_grant.scn"), &SimConfig::default())
        .expect("run succeeds");
    let got = out.report.to_string();
    let path = dir.join("press_grant.report");
    if std::env::var_os("DASHBELL_BLESS").is_some() {
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).expect("golden report present");
    assert_eq!(got, want);
}
