use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wop::{extract_dataset, fit_table, pbm, AnyModel, ApplyMode, Window};

fn wop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = wop(args);
    assert!(
        out.status.success(),
        "wop {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_corpus(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let c = dir.join("corpus");
    ok(&[
        "gen", "--out", s(&c), "--images", &n.to_string(), "--seed", &seed.to_string(),
        "--width", "96", "--height", "96", "--staves", "1",
    ]);
    c
}

fn dir_bytes(dir: &Path, skip_manifest: bool) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .filter(|(n, _)| !(skip_manifest && n.ends_with(".manifest.json")))
        .collect();
    v.sort();
    v
}

#[test]
fn gen_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    ok(&["gen", "--images", "5", "--seed", "7", "--out", s(&a), "--width", "96", "--height", "96", "--staves", "1"]);
    ok(&["gen", "--images", "5", "--seed", "7", "--out", s(&b), "--width", "96", "--height", "96", "--staves", "1"]);
    let (x, y) = (dir_bytes(&a, true), dir_bytes(&b, true));
    assert_eq!(x.len(), 16);
    assert_eq!(x, y);
}

#[test]
fn training_twice_single_threaded_is_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let c = small_corpus(t.path(), 4, 3);
    let ds = t.path().join("train.wopd");
    ok(&["extract", "--corpus", s(&c), "--window", "7", "--subsample", "400", "--out", s(&ds)]);
    let mut models = Vec::new();
    for i in 0..2 {
        let m = t.path().join(format!("m{i}.wopm"));
        ok(&[
            "--threads", "1", "train", "--data", s(&ds), "--out", s(&m), "--epochs", "2",
            "--lr", "1e-3", "--masks", "4,4", "--block-mask-sizes", "3,3", "--fc-hidden", "8",
            "--dropout", "0.25",
        ]);
        models.push(fs::read(&m).unwrap());
        assert!(t.path().join(format!("m{i}.wopm.manifest.json")).exists());
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn identity_table_reproduces_inputs() {
    let t = tempfile::tempdir().unwrap();
    let c = small_corpus(t.path(), 3, 5);
    let inputs: Vec<PathBuf> = (0..3).map(|i| c.join(format!("img{i:04}_input.pbm"))).collect();
    let imgs: Vec<_> = inputs.iter().map(|p| pbm::read_image(p).unwrap()).collect();
    let pairs: Vec<_> = imgs.iter().map(|i| (i.clone(), i.clone())).collect();
    let window = Window::square(3).unwrap();
    let table = fit_table(&extract_dataset(&pairs, &window, ApplyMode::ForegroundOnly).unwrap()).unwrap();
    let model = t.path().join("identity.wopm");
    AnyModel::from(table).save(&model).unwrap();

    let out = t.path().join("out");
    let mut args = vec!["apply", "--model", s(&model), "--out", s(&out)];
    args.extend(inputs.iter().map(|p| s(p)));
    ok(&args);
    for p in &inputs {
        let got = fs::read(out.join(p.file_name().unwrap())).unwrap();
        assert_eq!(got, fs::read(p).unwrap());
    }
}

fn majority_accuracy(corpus: &Path) -> f64 {
    let c = wop::synth::Corpus::load(corpus).unwrap();
    let (mut keep, mut total) = (0usize, 0usize);
    for (input, output) in c.pairs(wop::synth::Split::Test) {
        total += input.count_foreground();
        keep += output.count_foreground();
    }
    let p = keep as f64 / total as f64;
    p.max(1.0 - p)
}

fn pooled_accuracy(csv: &str) -> f64 {
    let all = csv.lines().find(|l| l.starts_with("ALL,")).unwrap();
    all.split(',').nth(6).unwrap().parse().unwrap()
}

#[test]
fn full_table_pipeline_beats_majority() {
    let t = tempfile::tempdir().unwrap();
    let c = small_corpus(t.path(), 10, 11);
    let ds = t.path().join("train.wopd");
    let model = t.path().join("table.wopm");
    let pred = t.path().join("pred");
    let csv = t.path().join("metrics.csv");
    ok(&["extract", "--corpus", s(&c), "--split", "train", "--window", "9", "--out", s(&ds)]);
    ok(&["train", "--data", s(&ds), "--table", "--out", s(&model)]);
    ok(&["apply", "--model", s(&model), "--corpus", s(&c), "--split", "test", "--out", s(&pred)]);
    ok(&["eval", "--corpus", s(&c), "--split", "test", "--predicted-dir", s(&pred), "--out", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("image_id,pixels,TP,TN,FP,FN,accuracy,specificity,recall,mae,flags\n"));
    let acc = pooled_accuracy(&text);
    let base = majority_accuracy(&c);
    assert!(acc >= base, "accuracy {acc} below majority baseline {base}");
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let t = tempfile::tempdir().unwrap();
    let c = small_corpus(t.path(), 3, 2);
    let i = c.join("img0000_input.pbm");
    let e = c.join("img0000_output.pbm");
    let out = Command::new(env!("CARGO_BIN_EXE_wop"))
        .current_dir(t.path())
        .args(["eval", "--input", s(&i), "--predicted", s(&e), "--expected", s(&e)])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(pooled_accuracy(&text), 1.0);
    assert!(t.path().join("eval.manifest.json").exists());
}

#[test]
fn config_file_values_yield_to_flags() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("gen.json");
    let a = t.path().join("a");
    fs::write(
        &cfg,
        format!(
            r#"{{"out": "{}", "images": 4, "seed": 1, "width": 96, "height": 96, "staves": 1}}"#,
            s(&a)
        ),
    )
    .unwrap();
    ok(&["gen", "--config", s(&cfg), "--seed", "9"]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("gen.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(m["config"]["images"], 4);
    assert_eq!(m["seeds"]["corpus"], 9);

    // Replaying the manifest regenerates the same corpus elsewhere.
    let b = t.path().join("b");
    ok(&["gen", "--config", s(&a.join("gen.manifest.json")), "--out", s(&b)]);
    assert_eq!(dir_bytes(&a, true), dir_bytes(&b, true));
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| {
        let out = wop(args);
        let err = String::from_utf8_lossy(&out.stderr).into_owned();
        (out.status.code().unwrap(), err)
    };

    let (c, _) = code(&["train", "--no-such-flag"]);
    assert_eq!(c, 2);
    let (c, err) = code(&["gen", "--out", s(&t.path().join("x")), "--images", "2"]);
    assert_eq!(c, 2);
    assert!(err.starts_with("error[usage]:"), "{err}");

    let (c, err) = code(&["train", "--data", s(&t.path().join("missing.wopd")), "--out", "m"]);
    assert_eq!(c, 3);
    assert!(err.starts_with("error[data]:"), "{err}");
    let junk = t.path().join("junk.wopm");
    fs::write(&junk, b"not a model").unwrap();
    let (c, err) = code(&["apply", "--model", s(&junk), "--out", s(&t.path().join("o")), "x.pbm"]);
    assert_eq!(c, 3);
    assert!(err.starts_with("error[data]:"), "{err}");

    let corpus = small_corpus(t.path(), 3, 1);
    let ds = t.path().join("d.wopd");
    ok(&["extract", "--corpus", s(&corpus), "--window", "5", "--subsample", "200", "--out", s(&ds)]);
    let (c, err) = code(&[
        "train", "--data", s(&ds), "--out", s(&t.path().join("m.wopm")), "--lr", "1e300",
        "--precision", "f64", "--masks", "2,2", "--block-mask-sizes", "3,3", "--fc-hidden", "4",
        "--epochs", "3",
    ]);
    assert_eq!(c, 4, "{err}");
    assert!(err.starts_with("error[divergence]:"), "{err}");
}

#[test]
fn select_runs_a_tiny_mask_sweep() {
    let t = tempfile::tempdir().unwrap();
    let c = small_corpus(t.path(), 5, 4);
    let grid = t.path().join("grid");
    ok(&[
        "--threads", "1", "select", "--corpus", s(&c), "--out", s(&grid), "--windows", "5",
        "--lrs", "1e-2", "--dropouts", "0", "--mask-sizes", "1,3", "--epochs", "2",
        "--masks", "2,2", "--block-mask-sizes", "3,3", "--fc-hidden", "4", "--precision", "f64",
        "--train-subsample", "300", "--val-subsample", "200",
    ]);
    let report = wop::selection::SelectionReport::load(grid.join("report.json")).unwrap();
    assert_eq!(report.records.len(), 4);
    let masks: Vec<usize> = report.windows[0].best_per_mask.iter().map(|b| b.cell.mask_size).collect();
    assert_eq!(masks, vec![1, 3]);
    assert!(report.windows[0].best_per_mask.iter().all(|b| b.val_mae.is_finite()));
    assert!(grid.join("final.wopm").exists());
    assert!(grid.join("checkpoints/w5_lr1e-2_do0_m3/epoch002.wopm").exists());
}
