use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ladderseg::build_default_space;
use ladderseg::dataset_io::{read_labels, write_labels};
use ladderseg::grid::LabelMap;

const CONFIG: &str = r#"
[output]
dir = "out"

[model]
encoder_stage_widths = [8, 8, 8, 8, 8]
dense_layers = 1
growth_rate = 4
decoder_width = 8
spp_grid = [1]
spp_branch_width = 4

[train]
iterations = 0
batch_size = 2

[augment]
crop = 64

[[datasets]]
id = "cityscapes"
root = "data"
split = "train"

[[datasets]]
id = "scannet"
root = "data"
split = "train"

[[datasets]]
id = "wilddash"
root = "data"
split = "val"

[[generate]]
root = "data"
dataset_id = "cityscapes"
classes = ["road", "sky", "car"]
count = 3
height = 64
width = 64

[[generate]]
root = "data"
dataset_id = "scannet"
classes = ["indoor/wall", "floor"]
count = 2
height = 64
width = 64

[[generate]]
root = "data"
dataset_id = "wilddash"
classes = ["road", "car"]
count = 3
height = 64
width = 80
negative_fraction = 0.5
"#;

fn ladderseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ladderseg"))
        .current_dir(dir)
        .env_remove("LADDERSEG_OUTPUT")
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let o = ladderseg(dir.path(), &["generate", "-c", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn trained(dir: &Path) -> PathBuf {
    let o = ladderseg(dir, &["train", "-c", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("out/checkpoint-00000000.ckpt")
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_deterministic() {
    let a = workspace();
    let b = workspace();
    let ta = tree_bytes(&a.path().join("data"));
    assert!(ta.iter().any(|(p, _)| p.ends_with("manifest.tsv")));
    assert_eq!(ta, tree_bytes(&b.path().join("data")));
}

#[test]
fn zero_iteration_training_writes_initial_checkpoint() {
    let dir = workspace();
    let ckpt = trained(dir.path());
    assert!(ckpt.is_file());
    assert!(dir.path().join("out/config.toml").is_file());
    assert!(dir.path().join("out/final.ckpt").is_file());
}

#[test]
fn invalid_field_exits_one_and_names_it() {
    let dir = workspace();
    let o = ladderseg(dir.path(), &["train", "-c", "run.toml", "--set", "train.base_lr=-1.0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.base_lr"), "{}", stderr(&o));

    let o = ladderseg(dir.path(), &["train", "-c", "run.toml", "--set", "train.bogus=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let o = ladderseg(dir.path(), &["train", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_flag_beats_environment() {
    let dir = workspace();
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ladderseg"));
        cmd.current_dir(dir.path()).args(["train", "-c", "run.toml"]);
        match env {
            Some(e) => cmd.env("LADDERSEG_OUTPUT", e),
            None => cmd.env_remove("LADDERSEG_OUTPUT"),
        };
        if let Some(f) = flag {
            cmd.args(["--output", f]);
        }
        assert!(cmd.output().unwrap().status.success());
    };
    run(Some("from_env"), None);
    assert!(dir.path().join("from_env/final.ckpt").is_file());
    run(Some("from_env2"), Some("from_flag"));
    assert!(dir.path().join("from_flag/final.ckpt").is_file());
    assert!(!dir.path().join("from_env2").exists());
}

#[test]
fn eval_writes_reports() {
    let dir = workspace();
    let ckpt = trained(dir.path());
    let o = ladderseg(dir.path(), &["eval", "-c", "run.toml", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(dir.path().join("out/eval/wilddash.tsv")).unwrap();
    assert!(tsv.starts_with("class\tIoU\tiIoU\tcategory\tcategory IoU"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/eval/wilddash.json")).unwrap()).unwrap();
    assert_eq!(json["images"], 3);
    assert!(json["negative"].is_object());
}

#[test]
fn eval_of_empty_dataset_fails() {
    let dir = workspace();
    let ckpt = trained(dir.path());
    fs::create_dir_all(dir.path().join("empty/kitti/images")).unwrap();
    let o = ladderseg(
        dir.path(),
        &["eval", "-c", "run.toml", "--checkpoint", ckpt.to_str().unwrap(), "--root", "empty", "--dataset", "kitti"],
    );
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("no samples"), "{}", stderr(&o));
}

#[test]
fn export_strategies() {
    let dir = workspace();
    let ckpt = trained(dir.path());
    let ckpt = ckpt.to_str().unwrap();
    let export = |extra: &[&str], out: &str| {
        let mut args = vec!["export", "-c", "run.toml", "--checkpoint", ckpt, "--root", "data", "--dataset", "scannet", "--out", out];
        args.extend_from_slice(extra);
        let o = ladderseg(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files: Vec<PathBuf> = fs::read_dir(dir.path().join(out)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|p| read_labels(p).unwrap()).collect::<Vec<_>>()
    };
    let space = build_default_space();
    let wilddash = space.dataset("wilddash").unwrap();
    let unified = export(&["--unified"], "unified");
    let auto = export(&["--dest", "wilddash", "--strategy", "auto_void"], "auto");
    let identity = export(&["--dest", "wilddash", "--strategy", "identity"], "identity");
    assert_eq!(unified.len(), 2);
    let (mut home, mut foreign) = (0, 0);
    for ((u, a), i) in unified.iter().zip(&auto).zip(&identity) {
        for ((&u, &a), &i) in u.data().iter().zip(a.data()).zip(i.data()) {
            match wilddash.native(u) {
                Some(native) => {
                    home += 1;
                    assert_eq!(a, native);
                    assert_eq!(i, native);
                }
                None => {
                    foreign += 1;
                    assert_eq!(a, 0, "foreign prediction {u} must become Void");
                    assert_eq!(i, u, "identity keeps foreign id {u}");
                }
            }
        }
    }
    assert!(home > 0 && foreign > 0, "home {home}, foreign {foreign}");

    let o = ladderseg(
        dir.path(),
        &["export", "-c", "run.toml", "--checkpoint", ckpt, "--root", "data", "--dataset", "scannet", "--dest", "wilddash", "--strategy", "to_class", "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn analyze_counts_foreign_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds");
    // 100 driving pixels with 3 indoor ones
    let city = LabelMap::from_fn(10, 10, |y, x| if y == 0 && x < 3 { 25 } else { 0 });
    // 50 indoor pixels with 1 driving one
    let scan = LabelMap::from_fn(5, 10, |y, x| if (y, x) == (4, 9) { 13 } else { 20 });
    fs::create_dir_all(preds.join("cityscapes")).unwrap();
    fs::create_dir_all(preds.join("scannet")).unwrap();
    write_labels(&preds.join("cityscapes/a.png"), &city).unwrap();
    write_labels(&preds.join("scannet/a.png"), &scan).unwrap();
    let o = ladderseg(dir.path(), &["analyze", "--predictions", "preds", "--out", "table.tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("table.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "dataset\tdriving classes (%)\tindoor classes (%)");
    assert_eq!(lines[1], "cityscapes\t97.000\t3.000");
    assert_eq!(lines[2], "scannet\t2.000\t98.000");
    assert_eq!(lines.len(), 3);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);
}

#[test]
fn unwritable_generate_root_fails_without_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocker"), b"not a directory").unwrap();
    let config = CONFIG.replace("root = \"data\"", "root = \"blocker/data\"");
    fs::write(dir.path().join("run.toml"), config).unwrap();
    let o = ladderseg(dir.path(), &["generate", "-c", "run.toml"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!dir.path().join("blocker/data/cityscapes/manifest.tsv").exists());
}
