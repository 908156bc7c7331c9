use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_CONFIG: &str = r#"{
  "codec": { "codebook_size": 16 },
  "codec_train": { "kmeans_iters": 5, "ema_epochs": 1 },
  "semantic": { "steps": 20, "context_size": 16 },
  "acoustic": { "steps": 20, "context_size": 16 },
  "sampling": { "semantic_steps": 4, "acoustic_steps": [2, 1, 1, 1, 1] }
}"#;

fn sise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sise")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sise(args);
    assert!(
        out.status.success(),
        "sise {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn synth_train_enhance_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (corpus, bundle, config) = (root.join("corpus"), root.join("bundle"), root.join("small.json"));
    fs::write(&config, SMALL_CONFIG).unwrap();
    ok(&["synth-corpus", "--out", p(&corpus), "--n", "6", "--seed", "3"]);
    assert!(corpus.join("manifest.json").exists());
    ok(&["train", "--corpus", p(&corpus), "--out", p(&bundle), "--config", p(&config), "--take", "4"]);
    assert!(bundle.join("bundle.json").exists() && bundle.join("train_report.json").exists());

    let enhance = |dir: &Path, jobs: &str| {
        ok(&[
            "enhance", "--bundle", p(&bundle), "--corpus", p(&corpus), "--out-dir", p(dir), "--skip", "4", "--jobs", jobs,
        ]);
        dir_bytes(dir)
    };
    let serial = enhance(&root.join("e1"), "1");
    assert_eq!(serial.len(), 4, "{:?}", serial.keys());
    assert_eq!(serial, enhance(&root.join("e4"), "4"));

    let report = ok(&[
        "eval", "--bundle", p(&bundle), "--corpus", p(&corpus), "--enhanced", p(&root.join("e1")), "--skip", "4",
        "--json", p(&root.join("report.json")),
    ]);
    assert!(report.contains("mel distance improved on"), "{report}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["utterances"].as_array().unwrap().len(), 2);

    // single-file mode, and encode/decode through token files
    let noisy = fs::read_dir(corpus.join("noisy")).unwrap().next().unwrap().unwrap().path();
    let (one, tok) = (root.join("one.wav"), root.join("one.tok"));
    ok(&["enhance", "--bundle", p(&bundle), "--in", p(&noisy), "--out", p(&one), "--tokens-out", p(&tok), "--no-gumbel"]);
    let decoded = root.join("decoded.wav");
    ok(&["decode", "--bundle", p(&bundle), "--in", p(&tok), "--out", p(&decoded)]);
    let reencoded = root.join("re.tok");
    ok(&["encode", "--bundle", p(&bundle), "--in", p(&decoded), "--out", p(&reencoded)]);
    assert!(fs::metadata(&reencoded).unwrap().len() > 0);
    let same = ok(&["eval", "--bundle", p(&bundle), "--reference", p(&one), "--estimate", p(&one)]);
    assert!(same.contains("35"), "{same}");
}

#[test]
fn failures_name_their_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = sise(&["encode", "--bundle", p(&missing), "--in", "x.wav", "--out", "x.tok"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("sise: loading bundle failed:"), "{err}");

    let out = sise(&["train", "--corpus", p(&missing), "--out", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading corpus failed"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(sise(&["enhance", "--bundle", "b"]).status.code(), Some(2));
    assert_eq!(sise(&["synth-corpus", "--out", "x", "--n", "many"]).status.code(), Some(2));
    assert_eq!(sise(&["bogus"]).status.code(), Some(2));
}
