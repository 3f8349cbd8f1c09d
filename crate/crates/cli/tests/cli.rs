use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn hybrid_aim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-aim"))
        .args(args)
        .output()
        .unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hybrid-aim-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_prints_a_summary_row() {
    let (i, sg, d) = (
        fixture("excerpt_intersection.xml"),
        fixture("excerpt_signals.xml"),
        fixture("excerpt_demand.csv"),
    );
    let out = hybrid_aim(&[
        "run",
        "--intersection",
        s(&i),
        "--signals",
        s(&sg),
        "--demand",
        s(&d),
        "--cav-ratio",
        "0.5",
        "--seed",
        "3",
        "--actuated",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("seed,cav_ratio,"));
    assert!(lines[1].starts_with("3,0.5,C,C,actuated,"));
}

#[test]
fn run_writes_logs_and_is_repeatable() {
    let dir = scratch("run");
    let (i, sg, d) = (
        fixture("synthetic_intersection.xml"),
        fixture("synthetic_signals.xml"),
        fixture("synthetic_demand.csv"),
    );
    let go = |name: &str| {
        let out = dir.join(name);
        let veh = dir.join("vehicles.csv");
        let res = dir.join("reservations.csv");
        let o = hybrid_aim(&[
            "run",
            "--intersection",
            s(&i),
            "--signals",
            s(&sg),
            "--demand",
            s(&d),
            "--cav-ratio",
            "0.75",
            "--cav-policy",
            "p",
            "--out",
            s(&out),
            "--vehicle-log",
            s(&veh),
            "--reservation-log",
            s(&res),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
        assert!(std::fs::read_to_string(&res).unwrap().contains("granted"));
        std::fs::read(out).unwrap()
    };
    assert_eq!(go("a.csv"), go("b.csv"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn validate_accepts_fixtures_and_rejects_bad_counts() {
    let ok = hybrid_aim(&[
        "validate",
        s(&fixture("excerpt_intersection.xml")),
        s(&fixture("excerpt_signals.xml")),
        s(&fixture("excerpt_demand.csv")),
    ]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );

    let dir = scratch("validate");
    let bad = dir.join("bad.csv");
    std::fs::write(
        &bad,
        "EAST\nL,T,R,Total,Vehicle Total\n7:00 AM,1,x,0,1\n7:05 AM,0,0,0,0\n",
    )
    .unwrap();
    let out = hybrid_aim(&["validate", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("bad.csv"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sweep_writes_runs_and_cells() {
    let dir = scratch("sweep");
    let spec = dir.join("sweep.toml");
    std::fs::write(
        &spec,
        format!(
            "intersection = {:?}\nsignals = {:?}\ndemand = {:?}\ncav_ratios = [0.0, 1.0]\npolicies = [\"C,C\"]\nmodes = [\"fixed\", \"AA\"]\nseeds = [1, 2]\n",
            fixture("excerpt_intersection.xml"),
            fixture("excerpt_signals.xml"),
            fixture("excerpt_demand.csv"),
        ),
    )
    .unwrap();
    let out = dir.join("out");
    let o = hybrid_aim(&["sweep", "--spec", s(&spec), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    let cells = std::fs::read_to_string(out.join("cells.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 8);
    assert_eq!(cells.lines().count(), 1 + 4);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_input_is_an_error() {
    let o = hybrid_aim(&[
        "run",
        "--intersection",
        "/nonexistent/i.xml",
        "--signals",
        "/nonexistent/s.xml",
        "--demand",
        "/nonexistent/d.csv",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
