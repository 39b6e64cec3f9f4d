use std::path::Path;
use std::process::Command;

fn madwalk(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_madwalk")).args(args).output().expect("spawn");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = madwalk(&["verify", "--out", dir.path().to_str().unwrap(), "--set", "samples=5000"]);
    assert_eq!(code, 0, "{out}{err}");
    let csv = read(dir.path(), "verify.csv");
    assert!(csv.starts_with("check,value,limit,pass\n"));
    assert!(!csv.contains(",false"));
}

#[test]
fn coupling_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let (code, out, err) = madwalk(&[
            "coupling", "--seed", "17", "--out", d.path().to_str().unwrap(), "--steps", "100000", "--runs", "2",
        ]);
        assert_eq!(code, 0, "{out}{err}");
        assert!(out.contains("violations lockstep = 0"));
    }
    let csv = read(a.path(), "blocks.csv");
    assert!(csv.starts_with("run,blockIndex,duration,dlevelBeta,dlevelBetaEps,backsteps,decoupledAt,discrepancy\n"));
    assert_eq!(csv, read(b.path(), "blocks.csv"));
}

#[test]
fn sequential_thread_count_gives_same_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (d, t) in [(&a, "1"), (&b, "3")] {
        let (code, _, err) = madwalk(&[
            "speed-curve", "--threads", t, "--out", d.path().to_str().unwrap(),
            "--set", "steps=50000", "--set", "runs=3", "--set", "beta=0,0.1",
        ]);
        assert_eq!(code, 0, "{err}");
    }
    let s = read(a.path(), "speed.csv");
    assert!(s.starts_with("mode,alpha,beta,u0,u1,d,v,se,blocks\n"));
    assert_eq!(s.lines().count(), 3);
    assert_eq!(s, read(b.path(), "speed.csv"));
}

#[test]
fn phase_diagram_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("phase.conf");
    std::fs::write(&cfg, "seed = 5\n\n[phase-diagram]\nu0 = 0.3,1.5\nu1 = 0.3,1.5\nmax_runs = 20000\n").unwrap();
    let (code, out, err) = madwalk(&["phase-diagram", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("4/4"), "{out}");
    let csv = read(dir.path(), "phase.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("u0,u1,d,margin,escape_freq,ci_lo,ci_hi,verdict,theory"));
    for row in lines {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[7], f[8], "{row}");
    }
}

#[test]
fn green_and_simulate_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let (code, _, err) = madwalk(&["green", "--out", o, "--set", "runs=20", "--set", "generations=5"]);
    assert_eq!(code, 0, "{err}");
    assert!(read(dir.path(), "green.csv").starts_with("run,generation,population,capped\n"));
    let (code, _, err) = madwalk(&["simulate", "--out", o, "--set", "steps=50", "--set", "walk=multiplicative", "--set", "alpha=2"]);
    assert_eq!(code, 0, "{err}");
    let t = read(dir.path(), "trajectory.csv");
    assert!(t.starts_with("step,level,vertex_path\n0,-1,r-1\n1,0,r\n"));
    assert_eq!(t.lines().count(), 52);
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text, _) = madwalk(&["green", "--print-config", "--seed", "3", "--set", "walk=additive", "--set", "beta=0.5"]);
    assert_eq!(code, 0);
    let path = dir.path().join("g.conf");
    std::fs::write(&path, &text).unwrap();
    let (code, again, _) = madwalk(&["green", "--print-config", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(text, again);
}

#[test]
fn exit_codes() {
    let (code, _, err) = madwalk(&["coupling", "--alpha", "-1"]);
    assert_eq!(code, 1, "{err}");
    let (code, _, _) = madwalk(&["simulate", "--set", "nonsense=1"]);
    assert_eq!(code, 1);
    let (code, _, _) = madwalk(&["no-such-command"]);
    assert_eq!(code, 1);
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = madwalk(&["coupling", "--out", dir.path().to_str().unwrap(), "--steps", "500", "--runs", "1"]);
    assert_eq!(code, 3, "{err}");
    let (code, _, err) = madwalk(&["speed-curve", "--out", dir.path().to_str().unwrap(), "--set", "steps=100", "--set", "runs=1"]);
    assert_eq!(code, 3, "{err}");
}
