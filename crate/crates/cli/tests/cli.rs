use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use collabres::data::{build_vocab_and_binarize, save_splits, stratified_split, EpisodeRecord, Medication};
use collabres::metrics::MODEL_TABLE_COLUMNS;
use collabres::nn::{LayerSpec, ModelSpec, Parameters};
use collabres::tensor::DenseMatrix;
use collabres::train::{save_checkpoint, Checkpoint, TrainConfig};

fn collabres(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collabres"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Raw episode CSV: five diagnosis categories driven by medications, a
/// cancelled prescription, 4-character codes and optional DEMO rows.
fn raw_csv(episodes: usize, demographics: bool) -> String {
    let codes = ["E119", "I10", "J459", "N18", "K21"];
    let meds = ["METFORMIN", "AMLODIPINE", "SALBUTAMOL", "EPOETIN", "OMEPRAZOLE"];
    let mut s = String::from("record_type,episode_id,field1,field2,field3\n");
    for e in 0..episodes {
        let id = format!("ep{e:03}");
        let a = e % 5;
        let b = (e / 5 + a + 1) % 5;
        s.push_str(&format!("MED,{id},{},500mg,active\n", meds[a]));
        s.push_str(&format!("DX,{id},1,{}\n", codes[a]));
        if e % 3 == 0 {
            s.push_str(&format!("MED,{id},{},10mg,active\n", meds[b]));
            s.push_str(&format!("DX,{id},2,{}\n", codes[b]));
        }
        if e % 7 == 0 {
            s.push_str(&format!("MED,{id},WARFARIN,5mg,Cancelled\n"));
        }
        if demographics {
            s.push_str(&format!("DEMO,{id},{},{}\n", if e % 2 == 0 { "F" } else { "M" }, 20 + e % 60));
        }
    }
    s
}

#[test]
fn prepare_is_deterministic_and_cleans() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("raw.csv"), raw_csv(60, true)).unwrap();
    ok(&collabres(&["prepare", "raw.csv", "--out", "a", "--seed", "5"], dir.path()));
    ok(&collabres(&["prepare", "raw.csv", "--out", "b", "--seed", "5"], dir.path()));
    let (a, b) = (snapshot(&dir.path().join("a")), snapshot(&dir.path().join("b")));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        if k != Path::new("run_config.txt") {
            assert_eq!(v, &b[k], "{}", k.display());
        }
    }
    let labels = String::from_utf8(a[Path::new("labels.vocab")].clone()).unwrap();
    assert_eq!(labels, "E11\nI10\nJ45\nK21\nN18\n");
    let report = String::from_utf8(a[Path::new("clean_report.tsv")].clone()).unwrap();
    assert!(report.contains("cancelled_medications\t9"), "{report}");
    let echo = String::from_utf8(a[Path::new("run_config.txt")].clone()).unwrap();
    assert!(echo.contains("min-instances=3\n") && echo.contains("seed=5\n"), "{echo}");
}

#[test]
fn toy_five_episode_fixture_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "record_type,episode_id,field1,field2,field3\n\
        MED,e1,ASPIRIN,75mg,active\nDX,e1,1,I209\n\
        MED,e2,ASPIRIN,75mg,active\nDX,e2,1,I10\n\
        MED,e3,ASPIRIN,75mg,cancelled\nMED,e3,RAMIPRIL,5mg,active\nDX,e3,1,I10\n\
        MED,e4,RAMIPRIL,5mg,active\nDX,e4,1,I10\nDX,e4,2,I209\n\
        MED,e5,RAMIPRIL,5mg,active\nDX,e5,1,I208\n";
    fs::write(dir.path().join("toy.csv"), csv).unwrap();
    ok(&collabres(&["prepare", "toy.csv", "--out", "a", "--seed", "1"], dir.path()));
    ok(&collabres(&["prepare", "toy.csv", "--out", "b", "--seed", "1"], dir.path()));
    assert_eq!(snapshot(&dir.path().join("a")), snapshot(&dir.path().join("b")).into_iter().map(|(k, v)| {
        if k == Path::new("run_config.txt") {
            (k, fs::read(dir.path().join("a/run_config.txt")).unwrap())
        } else {
            (k, v)
        }
    }).collect());
    let labels = fs::read_to_string(dir.path().join("a/labels.vocab")).unwrap();
    assert_eq!(labels, "I10\nI20\n");
}

#[test]
fn missing_input_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = collabres(&["prepare", "absent.csv", "--out", "p"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("absent.csv") && err.lines().count() == 1, "{err}");
    assert!(!dir.path().join("p").exists());
}

#[test]
fn malformed_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "record_type,episode_id,a,b,c\nDX,e1,zero,I10\n").unwrap();
    let out = collabres(&["prepare", "bad.csv", "--out", "p"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("bad.csv:2"));
}

#[test]
fn synth_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = |o| vec!["synth", "--samples", "400", "--tokens", "30", "--labels", "6", "--meds-per-sample", "4", "--support-size", "3", "--seed", "9", "--out", o];
    ok(&collabres(&args("a"), dir.path()));
    ok(&collabres(&args("b"), dir.path()));
    let (mut a, mut b) = (snapshot(&dir.path().join("a")), snapshot(&dir.path().join("b")));
    let (ea, eb) = (a.remove(Path::new("run_config.txt")).unwrap(), b.remove(Path::new("run_config.txt")).unwrap());
    assert_eq!(a, b);
    assert_ne!(ea, eb, "echo records the output path");
    assert!(a.contains_key(Path::new("oracle.json")));
}

fn synth_data(dir: &Path) {
    ok(&collabres(
        &["synth", "--samples", "600", "--tokens", "40", "--labels", "6", "--meds-per-sample", "4", "--support-size", "4", "--out", "data"],
        dir,
    ));
}

#[test]
fn train_m1_is_reproducible_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    synth_data(dir.path());
    let args = |o| vec!["train", "data", "--model", "M1", "--width-divisor", "10", "--batch-size", "64", "--max-epochs", "6", "--out", o];
    ok(&collabres(&args("r1"), dir.path()));
    ok(&collabres(&args("r2"), dir.path()));
    let a = fs::read(dir.path().join("r1/model.ckpt")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("r2/model.ckpt")).unwrap());
    assert_eq!(&a[..5], b"CLRS\x01");
    let history = fs::read_to_string(dir.path().join("r1/history.tsv")).unwrap();
    let epochs = history.lines().filter(|l| !l.starts_with('#') && !l.starts_with("epoch")).count();
    assert!((1..=6).contains(&epochs), "{history}");
    assert_eq!(history, fs::read_to_string(dir.path().join("r2/history.tsv")).unwrap());
}

#[test]
fn collabres_spec_echoes_branch_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth_data(dir.path());
    ok(&collabres(
        &[
            "train", "data", "--model", "collabres", "--branches", "4", "--dropouts", "0.1,0.2,0.3,0.4", "--branch-hidden", "12",
            "--branch-out", "8", "--fusion-width", "10", "--max-epochs", "1", "--out", "m",
        ],
        dir.path(),
    ));
    let spec: ModelSpec = serde_json::from_str(&fs::read_to_string(dir.path().join("m/model.json")).unwrap()).unwrap();
    let LayerSpec::Concat { branches } = &spec.layers[0] else {
        panic!("first layer is not the branch concatenation")
    };
    let rates: Vec<f32> = branches
        .iter()
        .map(|b| match &b[0] {
            LayerSpec::ResidualBlock(r) => r.dropout_rate,
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(rates, vec![0.1, 0.2, 0.3, 0.4]);
    let echo = fs::read_to_string(dir.path().join("m/run_config.txt")).unwrap();
    assert!(echo.contains("dropouts=0.1,0.2,0.3,0.4\n") && echo.contains("branches=4\n"), "{echo}");
}

#[test]
fn model_flag_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = collabres(&["train", "nowhere", "--model", "M9", "--out", "m"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("M1..M8, collabres"), "{}", stderr(&out));
    let out = collabres(&["train", "nowhere", "--branches", "3", "--dropouts", "0.1,0.2", "--out", "m"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = collabres(&["train", "nowhere", "--batch-size", "0", "--out", "m"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("m").exists());
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    synth_data(dir.path());
    fs::write(
        dir.path().join("run.cfg"),
        "# small run\nmodel = M2\nwidth-divisor=20\nmax-epochs=2\nbatch-size=100\nno-shuffle=true\n",
    )
    .unwrap();
    ok(&collabres(&["train", "data", "--config", "run.cfg", "--max-epochs", "3", "--out", "m"], dir.path()));
    let history = fs::read_to_string(dir.path().join("m/history.tsv")).unwrap();
    assert!(history.lines().any(|l| l.starts_with("3\t")), "{history}");
    let echo = fs::read_to_string(dir.path().join("m/run_config.txt")).unwrap();
    for line in ["model=M2\n", "max-epochs=3\n", "batch-size=100\n", "no-shuffle=true\n"] {
        assert!(echo.contains(line), "{line} missing from\n{echo}");
    }
    // The echo is itself a valid config file.
    fs::copy(dir.path().join("m/run_config.txt"), dir.path().join("again.cfg")).unwrap();
    ok(&collabres(&["train", "data", "--config", "again.cfg", "--out", "m2"], dir.path()));
    assert_eq!(
        fs::read(dir.path().join("m/model.ckpt")).unwrap(),
        fs::read(dir.path().join("m2/model.ckpt")).unwrap()
    );

    fs::write(dir.path().join("bad.cfg"), "learning-rate=0.1\n").unwrap();
    let out = collabres(&["train", "data", "--config", "bad.cfg", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning-rate"));
}

/// Prepared data where each episode holds one medication `Xnn` and the
/// label `Xnn`, plus a checkpoint whose logits copy the inputs.
fn identity_fixture(dir: &Path) {
    let codes = ["A00", "B00", "C00", "D00"];
    let records: Vec<EpisodeRecord> = (0..40)
        .map(|e| {
            let code = codes[e % codes.len()];
            let mut r = EpisodeRecord::new(format!("ep{e:02}"));
            r.medications.push(Medication::new(code, "1", ""));
            r.icd10_codes.push(code.to_string());
            r
        })
        .collect();
    let ds = build_vocab_and_binarize(&records).unwrap();
    save_splits(&dir.join("data"), &stratified_split(&ds, &[0.7, 0.1, 0.2], 0).unwrap()).unwrap();
    let n = codes.len();
    let spec = ModelSpec {
        name: "identity".into(),
        input_dim: n,
        output_dim: n,
        layers: vec![LayerSpec::SigmoidHead { in_dim: n, out_dim: n }],
    };
    let mut params = Parameters::new();
    params.insert("l0.main", DenseMatrix::identity(n).map(|v| v * 20.0));
    params.insert("l0.bias", DenseMatrix::filled(1, n, -10.0));
    let ckpt = Checkpoint {
        spec,
        params,
        features: ds.features.clone(),
        labels: ds.labels.clone(),
        train_config: TrainConfig::default(),
        threshold: 0.5,
    };
    save_checkpoint(&ckpt, &dir.join("identity.ckpt")).unwrap();
}

#[test]
fn perfect_checkpoint_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    identity_fixture(dir.path());
    ok(&collabres(&["evaluate", "identity.ckpt", "data", "--out", "ev"], dir.path()));
    let table = fs::read_to_string(dir.path().join("ev/metrics.tsv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), MODEL_TABLE_COLUMNS.join("\t"));
    assert_eq!(
        lines.next().unwrap(),
        "identity\t1.0000\t0.0000\t1.0000\t1.0000\t1.0000\t1.0000"
    );
    let header = "Model\tAverage Precision\tRanking Loss\tCoverage Error\tJaccard Similarity\tF1\tAccuracy (Primary Diagnosis)";
    assert!(table.starts_with(header));
    let chapters = fs::read_to_string(dir.path().join("ev/chapters.tsv")).unwrap();
    assert!(chapters.starts_with("Group\tSamples\tAccuracy\tAverage Precision\tF1\tJaccard Similarity\n"));
}

#[test]
fn group_by_without_demographics() {
    let dir = tempfile::tempdir().unwrap();
    identity_fixture(dir.path());
    let out = collabres(&["evaluate", "identity.ckpt", "data", "--group-by", "gender,age", "--out", "ev"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("demographic"), "{}", stderr(&out));
    assert!(!dir.path().join("ev").exists());

    let out = collabres(
        &["evaluate", "identity.ckpt", "data", "--group-by", "gender", "--keep-going", "--out", "ev"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("ev/metrics.tsv").exists() && dir.path().join("ev/chapters.tsv").exists());
    assert!(!dir.path().join("ev/groups_gender.tsv").exists());

    let out = collabres(&["evaluate", "identity.ckpt", "data", "--group-by", "income", "--out", "ev2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn damaged_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    identity_fixture(dir.path());
    let mut bytes = fs::read(dir.path().join("identity.ckpt")).unwrap();
    bytes.truncate(bytes.len() - 2);
    fs::write(dir.path().join("cut.ckpt"), bytes).unwrap();
    let out = collabres(&["evaluate", "cut.ckpt", "data", "--out", "ev"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("truncated"), "{}", stderr(&out));
}

#[test]
fn predict_lists_principal_first() {
    let dir = tempfile::tempdir().unwrap();
    identity_fixture(dir.path());
    fs::write(
        dir.path().join("new.csv"),
        "record_type,episode_id,field1,field2,field3\nMED,x1,C00,1,active\nMED,x1,B00,1,cancelled\nMED,x1,ZZZ,1,\n",
    )
    .unwrap();
    let text = ok(&collabres(&["predict", "identity.ckpt", "new.csv", "--top-k", "2"], dir.path()));
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "episode_id\tprincipal\tprincipal_score\tpredicted_codes\tranked");
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(&row[..2], ["x1", "C00"]);
    assert_eq!(row[3], "C00");
    assert!(row[4].starts_with("C00:1.0000,A00:"), "{}", row[4]);

    ok(&collabres(&["predict", "identity.ckpt", "new.csv", "--out", "pred.tsv"], dir.path()));
    assert!(fs::read_to_string(dir.path().join("pred.tsv")).unwrap().contains("x1\tC00"));
    assert!(dir.path().join("pred.tsv.config.txt").exists());
}

#[test]
fn report_top_k_sorted_descending() {
    let dir = tempfile::tempdir().unwrap();
    ok(&collabres(
        &["synth", "--samples", "500", "--tokens", "80", "--labels", "40", "--support-size", "3", "--meds-per-sample", "5", "--out", "data"],
        dir.path(),
    ));
    let text = ok(&collabres(&["report", "data", "--top-k", "30"], dir.path()));
    let counts: Vec<usize> = text.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap().parse().unwrap()).collect();
    assert!(!counts.is_empty() && counts.len() <= 30);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    let tail = ok(&collabres(&["report", "data", "--long-tail"], dir.path()));
    assert!(tail.starts_with("Count below\tLabels\n"));
}

#[test]
fn help_and_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ok(&collabres(&["--help"], dir.path())).contains("prepare"));
    let out = collabres(&["train", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = collabres(&["synth", "--threads", "0", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
