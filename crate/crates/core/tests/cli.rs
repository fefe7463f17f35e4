use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvc")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path) -> PathBuf {
    let dir = root.join("data");
    let o = nvc(&[
        "gen-synth", "--clusters", "3", "--per-cluster", "40", "--dim", "4", "--spread", "0.1", "--seed", "2",
        "--out", p(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn small_config(root: &Path, extra: &str) -> PathBuf {
    let path = root.join("cfg.txt");
    let text = format!(
        "latent_dim = 2\nhidden_dims = 8\nepochs = 2\nbatch_size = 16\nanchors = 3\nlog_every = 1\n{extra}"
    );
    fs::write(&path, text).unwrap();
    path
}

fn train(root: &Path, data: &Path, out: &str, extra: &str, mode: &str) -> (Output, PathBuf) {
    let cfg = small_config(root, extra);
    let out = root.join(out);
    let o = nvc(&["train", "--config", p(&cfg), "--data-dir", p(data), "--out", p(&out), "--mode", mode]);
    (o, out)
}

#[test]
fn gen_synth_is_byte_identical_per_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (da, db) = (synth(a.path()), synth(b.path()));
    for f in ["train.nvcd", "test.nvcd"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn training_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let (o1, r1) = train(tmp.path(), &data, "r1", "", "nvc_ml");
    let (o2, r2) = train(tmp.path(), &data, "r2", "", "nvc_ml");
    assert!(o1.status.success() && o2.status.success(), "{}", stderr(&o1));
    for f in ["metrics.csv", "final.ckpt", "config.txt"] {
        assert_eq!(fs::read(r1.join(f)).unwrap(), fs::read(r2.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(r1.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,epoch,loss_total"));
    assert!(metrics.lines().count() > 2);
}

#[test]
fn eval_reports_anchor_accuracy_only_with_anchors() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let (o, vae) = train(tmp.path(), &data, "vae", "", "vae");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("ignores anchors"));
    let (o, neb) = train(tmp.path(), &data, "nvc", "", "nvc");
    assert!(o.status.success(), "{}", stderr(&o));

    let ev = nvc(&["eval", "--checkpoint", p(&vae.join("final.ckpt")), "--data-dir", p(&data)]);
    assert!(ev.status.success(), "{}", stderr(&ev));
    let text = String::from_utf8(ev.stdout).unwrap();
    assert!(text.contains("rel=") && text.contains("delta3="));
    assert!(!text.contains("anchor_accuracy"));

    let csv = tmp.path().join("eval.csv");
    let ev = nvc(&["eval", "--checkpoint", p(&neb.join("final.ckpt")), "--data-dir", p(&data), "--csv", p(&csv)]);
    assert!(ev.status.success(), "{}", stderr(&ev));
    assert!(String::from_utf8(ev.stdout).unwrap().contains("anchor_accuracy="));
    assert!(fs::read_to_string(csv).unwrap().contains("anchor_accuracy"));
}

#[test]
fn export_latents_writes_samples_then_anchors() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let (o, run) = train(tmp.path(), &data, "run", "", "nvc");
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("latents.csv");
    let o = nvc(&["export-latents", "--checkpoint", p(&run.join("final.ckpt")), "--data-dir", p(&data), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample_index,true_label,assigned_anchor,anchor_index,z_0,z_1");
    assert_eq!(lines.len(), 1 + 30 + 3);
    assert!(lines[31].starts_with("-1,-1,0,0,"));
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn sweep_writes_one_row_per_cell_and_drops_duplicates() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let cfg = small_config(tmp.path(), "epochs = 1\n");
    let out = tmp.path().join("sweep");
    let o = nvc(&["sweep", "--config", p(&cfg), "--data-dir", p(&data), "--anchors", "2,2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate anchor count 2"));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mode,anchors,rel,delta1,delta2,delta3,accuracy");
    assert_eq!(lines.len(), 4);
    for (line, mode) in lines[1..].iter().zip(["nvc_no_mass", "nvc", "nvc_ml"]) {
        assert!(line.starts_with(&format!("{mode},2,")), "{line}");
    }
}

#[test]
fn bad_config_exits_1() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let (o, _) = train(tmp.path(), &data, "x", "colour = red\n", "nvc");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn missing_data_exits_2() {
    let tmp = TempDir::new().unwrap();
    let (o, _) = train(tmp.path(), &tmp.path().join("nowhere"), "x", "", "nvc");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let (o, _) = train(tmp.path(), &data, "x", "optimizer = sgd\nlr = 1e30\n", "nvc");
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("step"));
}

#[test]
fn truncated_checkpoint_exits_1() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let (o, run) = train(tmp.path(), &data, "run", "", "nvc");
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(run.join("final.ckpt")).unwrap();
    let cut = tmp.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let o = nvc(&["eval", "--checkpoint", p(&cut), "--data-dir", p(&data)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unexpected end of section"), "{}", stderr(&o));
}

#[test]
fn idx_with_bad_magic_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("mnist");
    fs::create_dir_all(&dir).unwrap();
    let mut images = vec![0u8, 0, 8, 4];
    images.extend_from_slice(&[0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4]);
    fs::write(dir.join("train-images-idx3-ubyte"), images).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), [0u8, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap();
    let (o, _) = train(tmp.path(), &dir, "x", "", "vae");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("magic"), "{}", stderr(&o));
}
