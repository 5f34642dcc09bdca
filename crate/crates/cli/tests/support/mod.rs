#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use unitary_core::data::{write_idx, RawDataset};

pub const BIN: &str = env!("CARGO_BIN_EXE_unitary");

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

fn wrap(o: Output) -> Run {
    Run {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

/// Runs the binary in `cwd` with `UNITARY_SEED` cleared.
pub fn run(cwd: &Path, args: &[&str]) -> Run {
    wrap(Command::new(BIN).args(args).current_dir(cwd).env_remove("UNITARY_SEED").output().unwrap())
}

pub fn run_env(cwd: &Path, args: &[&str], seed: &str) -> Run {
    wrap(Command::new(BIN).args(args).current_dir(cwd).env("UNITARY_SEED", seed).output().unwrap())
}

/// Runs and insists on exit 0.
pub fn ok(cwd: &Path, args: &[&str]) -> Run {
    let r = run(cwd, args);
    assert_eq!(r.code, 0, "unitary {args:?}\nstdout:\n{}\nstderr:\n{}", r.stdout, r.stderr);
    r
}

/// The bundled MNIST subset.
pub fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-desk")
}

/// Small synthetic IDX split: one bright square per image whose position
/// encodes the label.
pub fn fixture_dir(dir: &Path, train: usize, val: usize) -> PathBuf {
    let data = dir.join("fixture");
    std::fs::create_dir_all(&data).unwrap();
    let make = |count: usize, offset: usize| {
        let mut pixels = vec![0u8; count * 784];
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let label = (i + offset) % 10;
            labels.push(label as u8);
            let (r0, c0) = (4 + 2 * (label / 5) * 5, 4 + 3 * (label % 5));
            for r in r0..r0 + 6 {
                for c in c0..c0 + 4 {
                    pixels[i * 784 + r * 28 + c] = (200 + (i * 7 % 55)) as u8;
                }
            }
        }
        RawDataset {
            rows: 28,
            cols: 28,
            pixels,
            labels,
        }
    };
    write_idx(&data.join("train-images-idx3-ubyte"), &data.join("train-labels-idx1-ubyte"), &make(train, 0)).unwrap();
    write_idx(&data.join("t10k-images-idx3-ubyte"), &data.join("t10k-labels-idx1-ubyte"), &make(val, 3)).unwrap();
    data
}

/// A tiny pipeline config (2 layers on 8×8 maps) for fast runs.
pub const SMALL_CONFIG: &str = r#"
[network]
depth = 2
dim = 8

[data]
train_samples = 0
val_samples = 0

[baseline]
learning_rate = 0.01
batch_size = 16
epochs = 2

[capture]
samples = 48

[projection]
learning_rate = 0.01
batch_size = 16
epochs = 3

[unitary]
learning_rate = 0.01
batch_size = 16
epochs = 2
"#;

pub fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL_CONFIG).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
