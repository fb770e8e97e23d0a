#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loopforge::synth::song_midi;
use ndiff::rng::rng_for;
use rand::Rng;
use serde_json::{json, Value};

/// Writes `count` synthetic songs of 8..=24 bars as `song_XXX.mid`.
pub fn write_toy_corpus(dir: &Path, count: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = rng_for(seed, "toy-corpus");
    for i in 0..count {
        let bars = rng.random_range(8..=24);
        let bpm = rng.random_range(90.0..140.0);
        let bytes = song_midi(bars, bpm, &mut rng).unwrap();
        std::fs::write(dir.join(format!("song_{i:03}.mid")), bytes).unwrap();
    }
}

/// Config small enough to run the whole pipeline in a few minutes on one core.
pub fn small_config(root: &Path, seed: u64) -> Value {
    json!({
        "seed": seed,
        "paths": { "midi_dir": root.join("midi"), "work_dir": root.join("work") },
        "detector": { "synthetic_count": 200, "epochs": 60, "pretrain_epochs": 10 },
        "codec": { "hidden": 64, "codebook_size": 128, "epochs": 80, "max_steps": 1200, "eval_every": 200 },
        "prior": { "embed": 32, "hidden": 96, "layers": 2, "epochs": 20 },
        "generate": { "n": 64, "rate": 0.5 },
        "eval": { "seeds": 3, "n": 256, "k": 5 }
    })
}

pub fn write_config(root: &Path, cfg: &Value) -> PathBuf {
    let path = root.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn loopforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn loopforge")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = loopforge(args);
    assert!(
        out.status.success(),
        "loopforge {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const STAGES: [&str; 8] = [
    "extract",
    "train-detector",
    "score",
    "train-vqvae",
    "tokenize",
    "train-prior",
    "generate",
    "evaluate",
];
