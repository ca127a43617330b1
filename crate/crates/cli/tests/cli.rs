use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spikeseq(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikeseq"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("SPIKESEQ_OUT_DIR")
        .output()
        .unwrap()
}

fn body(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[test]
fn isomorphism_reports_perfect_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikeseq(dir.path(), &["isomorphism", "--L", "128", "--d", "128", "--T", "1"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("pearson_r=1.000000"));
    let gram = fs::read_to_string(dir.path().join("isomorphism.csv")).unwrap();
    assert!(gram.starts_with("# tool: spikeseq"));
    assert!(gram.lines().any(|l| l == "p,q,pe_dot,stpe_dot"));
    assert_eq!(body(&dir.path().join("isomorphism.csv")).lines().count(), 1 + 128 * 128);
    let profile = body(&dir.path().join("profile.csv"));
    assert!(profile.starts_with("encoding,delta,mean_dot\n"));
}

#[test]
fn copytask_smoke_logs_first_and_final_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikeseq(
        dir.path(),
        &[
            "copytask",
            "--encoding",
            "freq_compressed",
            "--steps",
            "10",
            "--seed",
            "42",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("copytask_freq_compressed_seed42.csv");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# cfg: ")));
    let rows: Vec<String> = body(&path).lines().map(String::from).collect();
    assert_eq!(rows[0], "step,encoding,seed,bpc");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,freq_compressed,42,"));
    assert!(rows[2].starts_with("10,freq_compressed,42,"));
}

#[test]
fn non_bracketing_threshold_search_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikeseq(
        dir.path(),
        &[
            "burst",
            "--find-threshold",
            "--lo",
            "1",
            "--hi",
            "1000",
            "--tol",
            "0.001",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim().lines().count(), 1);
    assert!(stderr.contains("bracket"));
}

#[test]
fn unknown_flags_and_bad_ranges_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!spikeseq(dir.path(), &["burst", "--bogus"]).status.success());
    let out = spikeseq(dir.path(), &["burst", "--connectivity", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("--connectivity"));
    assert!(!spikeseq(dir.path(), &["copytask", "--encoding", "rope"])
        .status
        .success());
}

#[test]
fn reruns_give_identical_bodies() {
    let cases: [(&[&str], &str); 4] = [
        (
            &["attncompare", "--trials", "200", "--key-norm", "varied"],
            "attncompare.csv",
        ),
        (&["burst", "--inhibition", "--layers", "40"], "burst.csv"),
        (&["capacity", "--sequences", "5", "--trials", "2"], "capacity.csv"),
        (&["infobits", "--max-m", "8"], "infobits.csv"),
    ];
    for (args, file) in cases {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert!(spikeseq(a.path(), args).status.success());
        assert!(spikeseq(b.path(), args).status.success());
        assert_eq!(body(&a.path().join(file)), body(&b.path().join(file)), "{file}");
    }
}

#[test]
fn seqdemo_recalls_file_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("seqs.txt");
    fs::write(&input, "the cat sat on a mat\nthe dog ran to a log\n").unwrap();
    let out = spikeseq(
        dir.path(),
        &["seqdemo", "--input", input.to_str().unwrap(), "--prefix", "2"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("sat on a mat"));
    assert!(stdout.contains("ran to a log"));
    let csv = body(&dir.path().join("seqdemo.csv"));
    assert!(csv.starts_with("sequence,step,predicted_symbol,margin,confidence\n"));
}

#[test]
fn out_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spikeseq"))
        .args(["infobits", "--max-m", "4"])
        .env("SPIKESEQ_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("infobits.csv").exists());
}
