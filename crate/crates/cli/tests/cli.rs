use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pf")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pf(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--profile", "desk", "--set", "gen_train=6", "--set", "gen_val=3", "--set", "gen_test=3", "--set", "points_per_building=768"];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut m = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                m.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    m
}

#[test]
fn gen_data_twice_gives_identical_trees() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &with(&["gen-data"], &with(SMALL, &["--data", "a", "--seed", "5"])));
    ok(t.path(), &with(&["gen-data"], &with(SMALL, &["--data", "b", "--seed", "5"])));
    let (a, b) = (tree(&t.path().join("a")), tree(&t.path().join("b")));
    assert!(a.len() > 12);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{k} differs");
    }
}

#[test]
fn stats_voxel_counts_shrink_with_size() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &with(&["gen-data"], &with(SMALL, &["--data", "d"])));
    ok(t.path(), &["stats", "--data", "d", "--out", "st", "--voxel-sizes", "0.01,0.04,0.16"]);
    let csv = fs::read_to_string(t.path().join("st/voxel_counts.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "split,name,points,voxels_0.01,voxels_0.04,voxels_0.16");
    let mut rows = 0;
    for l in lines {
        let f: Vec<usize> = l.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert!(f[0] >= f[1] && f[1] >= f[2] && f[2] >= 1, "{l}");
        assert!(f[1] <= f[0] && f[0] <= 768);
        rows += 1;
    }
    assert_eq!(rows, 12);
    for s in ["0.01", "0.04", "0.16"] {
        let h = fs::read_to_string(t.path().join(format!("st/voxel_hist_{s}.csv"))).unwrap();
        let total: usize = h.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 12);
    }
    ok(t.path(), &["plot", "st/voxel_hist_0.04.csv"]);
    let svg = fs::read_to_string(t.path().join("st/voxel_hist_0.04.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("bin_lo,bin_hi,count"));
}

#[test]
fn multitask_training_smoke_then_eval_and_predict() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &with(&["gen-data"], &with(SMALL, &["--data", "d"])));
    let run = ["--profile", "desk", "--data", "d", "--out", "run", "--task", "multitask", "--beta", "0.01", "--epochs", "2"];
    ok(t.path(), &with(&["train"], &run));
    let hist = fs::read_to_string(t.path().join("run/history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 3);
    assert!(hist.starts_with("epoch,lr,train_loss,val_acc,val_piou,harmonic\n"));
    for f in ["best.pfckpt", "best.pfckpt.info", "last.pfckpt", "config.txt"] {
        assert!(t.path().join("run").join(f).is_file(), "{f}");
    }
    let cfg = fs::read_to_string(t.path().join("run/config.txt")).unwrap();
    assert!(cfg.contains("beta = 0.01\n") && cfg.contains("task = multitask\n"));

    let printed = ok(t.path(), &with(&["eval"], &run));
    let written = fs::read_to_string(t.path().join("run/eval_val.txt")).unwrap();
    assert_eq!(printed, written);
    assert!(written.contains("harmonic_mean="));

    ok(t.path(), &with(&["predict", "--split", "test"], &run));
    let preds = t.path().join("run/predictions");
    assert_eq!(fs::read_dir(&preds).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "txt").count(), 3);
    assert_eq!(fs::read_to_string(preds.join("types.csv")).unwrap().lines().count(), 4);

    ok(t.path(), &["plot", "run/history.csv"]);
    assert!(t.path().join("run/history.svg").is_file());
}

#[test]
fn config_errors_exit_with_usage_code() {
    let t = tempfile::tempdir().unwrap();
    let out = pf(t.path(), &["emit-config", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    fs::write(t.path().join("bad.txt"), "epochs = 3\nmystery = 4\n").unwrap();
    let out = pf(t.path(), &["emit-config", "--config", "bad.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = pf(t.path(), &["train", "--epochs", "many"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));

    let out = pf(t.path(), &["train", "--data", "missing"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn emitted_config_reparses_byte_stable_with_cli_precedence() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.txt"), "epochs = 7\nlr = 0.5\n").unwrap();
    let first = ok(t.path(), &["emit-config", "--profile", "desk", "--config", "c.txt", "--lr", "0.25", "--set", "beta=0.3"]);
    assert!(first.contains("epochs = 7\n"));
    assert!(first.contains("lr = 0.25\n"));
    assert!(first.contains("voxel_size = 0.05\n"));
    fs::write(t.path().join("e.txt"), &first).unwrap();
    let second = ok(t.path(), &["emit-config", "--config", "e.txt"]);
    assert_eq!(first, second);
}
