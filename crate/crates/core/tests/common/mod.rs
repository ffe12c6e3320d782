#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssimnet::config::{builtin, ExperimentConfig};
use ssimnet::data::{CLASSES, PIXELS, RECORDS_PER_BATCH, RECORD_BYTES, TEST_FILE, TRAIN_FILES};

/// Full-size batch files of uniform noise with cyclic labels, so every class
/// holds 1000 records per file. Generated once per target directory.
pub fn synthetic_cifar_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("synthetic-cifar-v1");
        let marker = dir.join("complete");
        if !marker.exists() {
            fs::create_dir_all(&dir).unwrap();
            for (i, name) in TRAIN_FILES.iter().chain([&TEST_FILE]).enumerate() {
                fs::write(dir.join(name), synthetic_batch(i as u64)).unwrap();
            }
            fs::write(&marker, b"").unwrap();
        }
        dir
    })
}

pub fn synthetic_batch(seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1FA_0000 + seed);
    let mut out = vec![0u8; RECORDS_PER_BATCH * RECORD_BYTES];
    for (i, rec) in out.chunks_mut(RECORD_BYTES).enumerate() {
        rec[0] = (i % CLASSES) as u8;
        rng.fill(&mut rec[1..=PIXELS]);
    }
    out
}

/// A built-in config pointed at the synthetic data with a small subset.
pub fn small_config(name: &str, out: &Path, train_per_class: usize, val_per_class: usize, epochs: usize) -> ExperimentConfig {
    let mut cfg = builtin(name).unwrap();
    cfg.data.dir = synthetic_cifar_dir().to_path_buf();
    cfg.data.train_per_class = Some(train_per_class);
    cfg.data.val_per_class = Some(val_per_class);
    cfg.train.max_epochs = epochs;
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Real CIFAR-10 binaries, from `CIFAR10_DIR` or `data/cifar-10-batches-bin`
/// at the workspace root.
pub fn cifar_dir() -> Result<PathBuf, String> {
    let candidates: Vec<PathBuf> = match std::env::var_os("CIFAR10_DIR") {
        Some(d) => vec![PathBuf::from(d)],
        None => vec![
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cifar-10-batches-bin"),
            PathBuf::from("data/cifar-10-batches-bin"),
        ],
    };
    candidates
        .iter()
        .find(|d| TRAIN_FILES.iter().chain([&TEST_FILE]).all(|f| d.join(f).is_file()))
        .cloned()
        .ok_or_else(|| {
            format!(
                "CIFAR-10 binary batches not found (looked in {}); set CIFAR10_DIR",
                candidates.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", ")
            )
        })
}
