mod common;

use std::time::Instant;

use common::*;

#[test]
#[ignore]
fn timing_probe() {
    let dir = std::path::PathBuf::from("/tmp/lf_probe");
    let _ = std::fs::remove_dir_all(&dir);
    write_toy_corpus(&dir.join("midi"), 200, 1111);
    let cfg = write_config(&dir, &small_config(&dir, 1111));
    for stage in STAGES {
        let t = Instant::now();
        let out = run_ok(&[stage, "--config", cfg.to_str().unwrap()]);
        eprintln!("{stage}: {:.1}s {}", t.elapsed().as_secs_f64(), String::from_utf8_lossy(&out.stdout));
    }
}
