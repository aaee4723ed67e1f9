use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use halfnet_core::netdef::{LayerSpec, WeightFile};
use halfnet_core::tools::read_records;
use halfnet_core::{Dtype, LayerKind, NetDef};

fn halfnet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_halfnet")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Input followed by a ReLU, which is the identity on `random:` inputs.
fn identity_net(dir: &Path) {
    let net = NetDef::new(
        "identity",
        vec![
            LayerSpec::new("data", LayerKind::Input)
                .output("data")
                .param("channels", 2usize)
                .param("height", 3usize)
                .param("width", 3usize),
            LayerSpec::new("out", LayerKind::ReLU).input("data").output("out"),
        ],
    );
    net.save(dir.join("identity.json")).unwrap();
    WeightFile::new(Dtype::F32, BTreeMap::new()).unwrap().save(dir.join("identity.hgwt")).unwrap();
}

#[test]
fn run_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    identity_net(dir.path());
    let args = ["run", "identity.json", "identity.hgwt", "--input", "random:7", "--batch", "2"];
    let a = halfnet(&args, dir.path());
    let b = halfnet(&args, dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("shape:       (2, 2, 3, 3)"), "{}", stdout(&a));
    let c = halfnet(&["run", "identity.json", "identity.hgwt", "--input", "random:8", "--batch", "2"], dir.path());
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn mismatched_weights_fail_with_the_blob_name() {
    let dir = tempfile::tempdir().unwrap();
    identity_net(dir.path());
    assert!(halfnet(&["gen", "lenet", "lenet"], dir.path()).status.success());
    let o = halfnet(&["run", "lenet.json", "identity.hgwt"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("conv1.w"), "{}", stderr(&o));
}

#[test]
fn half_run_with_single_weights_reports_conversions() {
    let dir = tempfile::tempdir().unwrap();
    assert!(halfnet(&["gen", "lenet", "lenet", "--seed", "3"], dir.path()).status.success());
    let o = halfnet(&["run", "lenet.json", "lenet.hgwt", "--dtype", "f16", "--batch", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("conversions:")).unwrap().to_string();
    let count: u64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(count > 0);

    let conv = halfnet(&["convert", "lenet.hgwt", "lenet16.hgwt"], dir.path());
    assert!(conv.status.success(), "{}", stderr(&conv));
    assert!(stdout(&conv).contains("saturated:       0"), "{}", stdout(&conv));
    let o = halfnet(&["run", "lenet.json", "lenet16.hgwt", "--dtype", "f16", "--batch", "2"], dir.path());
    assert!(stdout(&o).contains("conversions: 0"), "{}", stdout(&o));

    let again = halfnet(&["convert", "lenet16.hgwt", "x.hgwt"], dir.path());
    assert!(!again.status.success());
    assert!(stderr(&again).contains("already F16"), "{}", stderr(&again));
}

#[test]
fn bench_writes_records_and_a_table() {
    let dir = tempfile::tempdir().unwrap();
    assert!(halfnet(&["gen", "lenet", "lenet"], dir.path()).status.success());
    let o = halfnet(
        &[
            "bench",
            "lenet.json",
            "missing.json",
            "--out",
            "r.jsonl",
            "--batches",
            "1,4",
            "--iters",
            "1",
            "--warmup",
            "0",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let records = read_records(&std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap()).unwrap();
    assert_eq!(records.len(), 8);
    assert_eq!(records.iter().filter(|r| r.is_ok()).count(), 4);
    assert!(stderr(&o).contains("4 of 8 cells failed"));
    let table = stdout(&o);
    assert!(table.contains("lenet") && table.contains('/'), "{table}");
}

#[test]
fn bad_arguments_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!halfnet(&["gen", "vgg", "x"], dir.path()).status.success());
    assert!(!halfnet(&["run", "nope.json", "nope.hgwt"], dir.path()).status.success());
    assert!(!halfnet(&["bench", "x.json", "--out", "r", "--batches", "4,1"], dir.path()).status.success());
}
