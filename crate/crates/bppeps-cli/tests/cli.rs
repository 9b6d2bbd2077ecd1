use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bppeps"))
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bppeps-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn generate(dir: &Path, file: &str, spec: &str, eps: &str, seed: &str) -> PathBuf {
    let out = dir.join(file);
    let o = run(bin().args(["generate", "--graph", spec, "--epsilon", eps, "--seed", seed, "-o"]).arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_identical_reports() {
    let dir = scratch_dir("det");
    let a = generate(&dir, "a.json", "grid:2x3:periodic", "0.03", "7");
    let b = generate(&dir, "b.json", "grid:2x3:periodic", "0.03", "7");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = generate(&dir, "c.json", "grid:2x3:periodic", "0.03", "8");
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

    let ra = dir.join("ra.json");
    let rb = dir.join("rb.json");
    for (out, threads) in [(&ra, "1"), (&rb, "3")] {
        let o = run(bin().args(["contract", "--order", "6", "--threads", threads, "-n"]).arg(&a).arg("-O").arg(out));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&ra).unwrap(), std::fs::read(&rb).unwrap());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn reports_carry_the_envelope() {
    let dir = scratch_dir("env");
    let net = generate(&dir, "n.json", "complete:4", "0.02", "1");
    let out = dir.join("r.json");
    let o = run(bin().args(["contract", "--oracle", "-n"]).arg(&net).arg("-O").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    for key in ["schema", "command", "generator", "config", "input_hash", "result"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["command"], "contract");
    assert_eq!(r["input_hash"].as_str().unwrap().len(), 64);
    assert!(r["config"].get("output").is_none());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = scratch_dir("codes");
    let net = generate(&dir, "n.json", "grid:2x3:periodic", "0.15", "3");
    let o = run(bin().args(["perturb", "--region", "0", "--strength", "0.5", "--site-b", "3", "-n"]).arg(&net));
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(bin().args(["contract", "--max-iter", "2", "--tol", "1e-15", "-n"]).arg(&net));
    assert_eq!(o.status.code(), Some(3));

    let o = run(bin().args(["contract", "-n"]).arg(dir.join("missing.json")));
    assert_eq!(o.status.code(), Some(2));

    let o = run(bin().args(["generate", "--graph", "grid:0x3", "--epsilon", "0.1"]));
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn perturb_writes_csv_and_agreement() {
    let dir = scratch_dir("perturb");
    let net = generate(&dir, "n.json", "cycle:8", "0.04", "2");
    let out = dir.join("p.json");
    let csv = dir.join("p.csv");
    let o = run(bin()
        .args(["perturb", "--region", "0", "--strength", "0.01", "--site-b", "4", "--order", "4", "-n"])
        .arg(&net)
        .arg("--csv")
        .arg(&csv)
        .arg("-O")
        .arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["result"]["agreement"]["within_certificate"], true);
    assert_eq!(
        r["result"]["trace"]["lightcone_violations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .sum::<u64>(),
        0
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("r,max_delta,bound"));
    std::fs::remove_dir_all(dir).ok();
}
