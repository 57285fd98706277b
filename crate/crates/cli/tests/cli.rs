use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hnext_core::config::{count_parameters, RunConfig};
use hnext_core::manifest::Manifest;

fn hnext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hnext")).args(args).env_remove("HNEXT_DATA_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist").canonicalize().unwrap()
}

const SMALL_NETWORK: &str = r#"
[network]
upscale = 1
mask = true
max_order = 1
filter_size = 5
rings = 2
blocks = [{channels = 2, pool = 2}, {channels = 3}]

[train]
epochs = 1
batch = 32
train_subset = 96
valid_subset = 48
bn_calibration_batches = 2

[verify]
inputs = 2
samples = 40
"#;

/// Writes a config whose data root is `root` and whose MNIST source is the
/// bundled copy.
fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "{body}\n[data]\nvariant = \"mnist-rot-test\"\nsource = {:?}\n\n[paths]\ndata_root = {:?}\n",
        mnist_dir(),
        dir
    );
    fs::write(&path, text).unwrap();
    path
}

fn generated(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, SMALL_NETWORK);
    let o = hnext(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    cfg
}

#[test]
fn generate_writes_a_manifest_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = generated(tmp.path());
    let dataset = tmp.path().join("generated");
    let first = Manifest::read(&dataset).unwrap();
    assert_eq!(first.meta["variant"], "mnist-rot-test");
    assert_eq!(first.meta["train_samples"], "50000");
    assert_eq!(first.meta["valid_samples"], "10000");
    assert_eq!(first.meta["test_samples"], "10000");
    first.verify(&dataset).unwrap();

    let again = hnext(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));

    let forced = hnext(&["generate", "--config", cfg.to_str().unwrap(), "--force"]);
    assert_eq!(forced.status.code(), Some(0));
    assert_eq!(Manifest::read(&dataset).unwrap(), first);

    let other = hnext(&["generate", "--config", cfg.to_str().unwrap(), "--force", "--seed", "3"]);
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(Manifest::read(&dataset).unwrap().artifacts, first.artifacts);
}

#[test]
fn missing_label_file_is_reported_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("mnist");
    fs::create_dir_all(&src).unwrap();
    let images = hnext_core::data::encode_idx(&[2, 28, 28], &[0u8; 2 * 784]).unwrap();
    fs::write(src.join("train-images-idx3-ubyte"), images).unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, format!("[data]\nsource = {src:?}\n")).unwrap();
    let o = hnext(&["generate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train-labels-idx1-ubyte"), "{}", stderr(&o));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[network]\nupscael = 2\n").unwrap();
    let o = hnext(&["verify", "--random-weights", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("upscael"), "{}", stderr(&o));
}

#[test]
fn verify_without_a_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_NETWORK);
    let out = tmp.path().join("run");
    let o = hnext(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn train_eval_verify_round_trip_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = generated(tmp.path());
    let cfg_s = cfg.to_str().unwrap();
    let expected = count_parameters(&RunConfig::load(&cfg).unwrap().network).unwrap();

    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = hnext(&["train", "--config", cfg_s, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains(&format!("parameters: {expected}")), "{}", stdout(&o));
        let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("epoch,loss,acc_0,acc_45,seconds,seed\n"));
        assert_eq!(metrics.lines().count(), 2);
        manifests.push(Manifest::read(&out).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);

    let out = tmp.path().join("a");
    let again = hnext(&["train", "--config", cfg_s, "--out", out.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(2));

    let o = hnext(&["eval", "--config", cfg_s, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    for key in ["test_accuracy,", "invariance_gap,", "oa,"] {
        assert!(summary.contains(key), "{summary}");
    }
    let table = fs::read_to_string(out.join("invariance.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 12 + 1);

    let o = hnext(&["verify", "--config", cfg_s, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS quarter-turn residual"));
    let eq = fs::read_to_string(out.join("equivariance.csv")).unwrap();
    assert!(eq.starts_with("layer,order,theta_deg,abs_residual,mag_residual\n"));
}
