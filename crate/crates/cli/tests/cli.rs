use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use laminar::volume::read_vgrid;
use tempfile::TempDir;

fn laminar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laminar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = laminar(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    laminar(args).status.code().unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn phantom(dir: &Path, prefix: &str, threads: &str) -> PathBuf {
    let out = p(dir, prefix);
    ok(&[
        "--threads", threads, "phantom", "--kind", "sulcus", "--dims", "24,24,16", "--bridge", "--seed", "4",
        "--out", &out,
    ]);
    PathBuf::from(out)
}

fn bytes(prefix: &Path, suffix: &str) -> Vec<u8> {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!("_{suffix}.vgrid"));
    std::fs::read(name).unwrap()
}

#[test]
fn phantom_is_bitwise_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = phantom(dir.path(), "a", "1");
    let b = phantom(dir.path(), "b", "1");
    let c = phantom(dir.path(), "c", "4");
    for suffix in ["labels", "phi", "probs", "train"] {
        assert_eq!(bytes(&a, suffix), bytes(&b, suffix), "{suffix}");
        assert_eq!(bytes(&a, suffix), bytes(&c, suffix), "{suffix}");
    }
}

#[test]
fn every_command_runs_on_a_phantom() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    phantom(d, "ph", "2");
    let (labels, phi, probs, train) = (p(d, "ph_labels.vgrid"), p(d, "ph_phi.vgrid"), p(d, "ph_probs.vgrid"), p(d, "ph_train.vgrid"));

    let report = ok(&["solve", "--labels", &labels, "--out", &p(d, "solved.vgrid")]);
    assert!(report.contains("iterations_run"));
    ok(&["solve", "--labels", &labels, "--scheme", "reference", "--out", &p(d, "ref.vgrid")]);
    ok(&["soft-solve", "--probs", &probs, "--iters", "10", "--out", &p(d, "soft.vgrid")]);
    ok(&["labelize", "--phi", &phi, "--labeled", &labels, "--out", &p(d, "lam.vgrid")]);
    let loss = ok(&["loss", "--probs", &probs, "--labels", &train, "--phi-gt", &phi, "--iters", "10"]);
    assert!(loss.contains("dice_laplace"));
    let metrics = ok(&["metrics", "--pred", &labels, "--gt", &labels, "--laplace", "--out", &p(d, "m.json")]);
    assert!(metrics.contains("\"laplace_dsc_layer1\":1.0"), "{metrics}");
    std::fs::write(d.join("lm.json"), "[[12, 2, 3]]").unwrap();
    let t = ok(&["thickness", "--labels", &labels, "--landmarks", &p(d, "lm.json")]);
    assert!(t.contains("thickness_mm"));
    ok(&[
        "optimize", "--probs", &probs, "--labels", &train, "--phi-gt", &phi, "--steps", "2", "--iters", "5",
        "--out", &p(d, "opt.vgrid"), "--trace", &p(d, "trace.csv"),
    ]);
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    assert!(trace.starts_with("step,dice_tissue,ce_tissue,dice_laplace,ce_laplace,total"));
    let g = ok(&["gradcheck", "--dims", "4,4,3", "--iters", "2"]);
    assert!(g.contains("max_rel_error"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    phantom(d, "ph", "1");
    let (phi, probs, train) = (p(d, "ph_phi.vgrid"), p(d, "ph_probs.vgrid"), p(d, "ph_train.vgrid"));
    let run = |threads: &str| {
        let out = p(d, &format!("opt{threads}.vgrid"));
        ok(&[
            "--threads", threads, "optimize", "--probs", &probs, "--labels", &train, "--phi-gt", &phi,
            "--steps", "3", "--iters", "8", "--out", &out,
        ]);
        read_vgrid(&out).unwrap().into_soft().unwrap()
    };
    let one = run("1");
    let four = run("4");
    let diff = one
        .as_stack()
        .data()
        .iter()
        .zip(four.as_stack().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["solve", "--bogus"]), 1);
    assert_eq!(code(&["--threads", "0", "gradcheck"]), 1);
    assert_eq!(code(&["phantom", "--kind", "shell", "--dims", "16,16,16", "--out", &p(d, "x")]), 1);
    assert_eq!(code(&["gradcheck", "--iters", "0"]), 1);
    assert_eq!(code(&["solve", "--labels", &p(d, "missing.vgrid"), "--out", &p(d, "o.vgrid")]), 2);
    std::fs::write(d.join("junk.vgrid"), b"not a grid").unwrap();
    assert_eq!(code(&["metrics", "--pred", &p(d, "junk.vgrid"), "--gt", &p(d, "junk.vgrid")]), 2);
}
