mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use loopforge::codec::{train_vqvae, TokenSequence, VqConfig, VqVaeModel};
use loopforge::correlation::midi_correlation;
use loopforge::detector::{random_matrix, rejection_filter, synthetic_loop_matrix, train_svdd, SvddConfig};
use loopforge::metrics::{density_coverage, f1, precision_recall, FeatureSet, MetricReport};
use loopforge::midi::{parse_midi, write_midi, LoopWriteSpec};
use loopforge::pianoroll::{quantize, window_phrases, Corpus, PianorollPhrase, Provenance, BASS_ROWS, PHRASE_STEPS, PITCHES};
use loopforge::prior::{train_prior, PriorConfig, PriorModel};
use loopforge::sampling::{argmax, draw, nucleus_distribution, sample_topk, temperature_distribution, topk_distribution};
use loopforge::synth::{loop_phrase, random_phrase};
use ndiff::rng::{rng_from, Rng};
use ndiff::{grad_check, Graph, Tensor, Var};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. Gradient checks

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries with magnitude in [0.05, 1), clear of activation kinks.
fn off_kink(shape: &[usize], rng: &mut Rng) -> Tensor {
    uniform(shape, rng).map(|v| if v < 0.0 { v * 0.95 - 0.05 } else { v * 0.95 + 0.05 })
}

fn project(g: &mut Graph, y: Var, seed: u64) -> ndiff::Result<Var> {
    let mut rng = rng_from(seed);
    let r = g.constant(uniform(g.shape(y), &mut rng));
    let p = g.mul(y, r)?;
    g.sum(p)
}

/// Checks `f` with respect to each of `inputs` in turn, holding the others constant.
fn check_all(
    name: &str,
    inputs: &[Tensor],
    f: impl Fn(&mut Graph, &[Var]) -> ndiff::Result<Var>,
    worst: &mut Vec<(String, f64)>,
) -> Result<(), String> {
    for slot in 0..inputs.len() {
        let e = grad_check(
            |g, v| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| if i == slot { v } else { g.constant(t.clone()) })
                    .collect();
                f(g, &vars)
            },
            &inputs[slot],
            1e-6,
        )
        .map_err(err)?;
        worst.push((format!("{name}/{slot}"), e));
    }
    Ok(())
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(101);
    let mut worst = Vec::new();

    let x = uniform(&[3, 5], &mut rng);
    let w = uniform(&[5, 4], &mut rng);
    let b = uniform(&[4], &mut rng);
    check_all("dense", &[x, w, b], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        let y = g.add_row(y, v[2])?;
        project(g, y, 1)
    }, &mut worst)?;

    let x = uniform(&[2, 3, 10], &mut rng);
    let w = uniform(&[4, 3, 4], &mut rng);
    let b = uniform(&[4], &mut rng);
    check_all("conv1d", &[x, w, b], |g, v| {
        let y = g.conv1d(v[0], v[1], Some(v[2]), 2, 1)?;
        project(g, y, 2)
    }, &mut worst)?;

    let x = uniform(&[2, 3, 5], &mut rng);
    let w = uniform(&[3, 4, 4], &mut rng);
    let b = uniform(&[4], &mut rng);
    check_all("conv_transpose1d", &[x, w, b], |g, v| {
        let y = g.conv_transpose1d(v[0], v[1], Some(v[2]), 2, 1)?;
        project(g, y, 3)
    }, &mut worst)?;

    let (n, i, h) = (2, 3, 4);
    let lstm_inputs = [
        uniform(&[n, i], &mut rng),
        uniform(&[n, h], &mut rng),
        uniform(&[n, h], &mut rng),
        uniform(&[i, 4 * h], &mut rng),
        uniform(&[h, 4 * h], &mut rng),
        uniform(&[4 * h], &mut rng),
    ];
    check_all("lstm_cell", &lstm_inputs, |g, v| {
        let (h2, c2) = ndiff::nn::lstm_cell(g, v[0], v[1], v[2], v[3], v[4], v[5])?;
        let a = project(g, h2, 4)?;
        let c = project(g, c2, 5)?;
        g.add(a, c)
    }, &mut worst)?;

    let table = uniform(&[6, 3], &mut rng);
    check_all("embedding", &[table], |g, v| {
        let y = g.embedding(v[0], &[0, 5, 2, 5])?;
        project(g, y, 6)
    }, &mut worst)?;

    let x = off_kink(&[4, 6], &mut rng);
    for (name, act) in [
        ("leaky_relu", 0usize),
        ("sigmoid", 1),
        ("tanh", 2),
        ("softmax", 3),
    ] {
        check_all(name, std::slice::from_ref(&x), |g, v| {
            let y = match act {
                0 => g.leaky_relu(v[0], 0.1)?,
                1 => g.sigmoid(v[0])?,
                2 => g.tanh(v[0])?,
                _ => g.softmax(v[0])?,
            };
            project(g, y, 7)
        }, &mut worst)?;
    }

    let logits = uniform(&[3, 5], &mut rng);
    let targets = Tensor::new(&[3, 5], (0..15).map(|i| f64::from(i % 3 == 0)).collect()).unwrap();
    check_all("bce", std::slice::from_ref(&logits), |g, v| g.bce_with_logits(v[0], &targets), &mut worst)?;
    check_all("cross_entropy", &[logits], |g, v| g.cross_entropy(v[0], &[4, 0, 2]), &mut worst)?;

    let elapsed = start.elapsed();
    let (name, max) = worst.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    ensure(max < 1e-4, format!("{name}: relative error {max:.3e}"))?;
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("{} checks, max rel err {max:.2e} ({name}), {:.2}s", worst.len(), elapsed.as_secs_f64()))
}

// 2 and 3. KNN metrics

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s.sqrt()
}

/// Brute-force precision, recall, density and coverage with a full distance matrix.
fn oracle(real: &[Vec<f64>], fake: &[Vec<f64>], k: usize) -> (f64, f64, f64, f64) {
    let radii = |set: &[Vec<f64>]| -> Vec<f64> {
        set.iter()
            .enumerate()
            .map(|(i, a)| {
                let mut d: Vec<f64> = set.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| dist(a, b)).collect();
                d.sort_by(f64::total_cmp);
                d[k - 1]
            })
            .collect()
    };
    let (rr, fr) = (radii(real), radii(fake));
    let cross: Vec<Vec<f64>> = fake.iter().map(|f| real.iter().map(|r| dist(f, r)).collect()).collect();
    let precision = cross.iter().filter(|row| row.iter().zip(&rr).any(|(d, r)| d <= r)).count() as f64 / fake.len() as f64;
    let recall = (0..real.len()).filter(|&i| (0..fake.len()).any(|j| cross[j][i] <= fr[j])).count() as f64 / real.len() as f64;
    let inside: usize = cross.iter().map(|row| row.iter().zip(&rr).filter(|(d, r)| d <= r).count()).sum();
    let density = inside as f64 / (k * fake.len()) as f64;
    let coverage = (0..real.len()).filter(|&i| (0..fake.len()).any(|j| cross[j][i] <= rr[i])).count() as f64 / real.len() as f64;
    (precision, recall, density, coverage)
}

fn points(n: usize, dim: usize, shift: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| { let v: f64 = StandardNormal.sample(rng); v + shift }).collect())
        .collect()
}

fn features(rows: &[Vec<f64>]) -> FeatureSet {
    FeatureSet::new(rows[0].len(), rows.concat(), 0).unwrap()
}

fn knn_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(202);
    let k = 5;
    for pair in 0..50 {
        let n = rng.random_range(k + 1..=300);
        let m = rng.random_range(k + 1..=300);
        let dim = rng.random_range(2..=32);
        let shift = rng.random_range(0.0..1.5);
        let (real, fake) = (points(n, dim, 0.0, &mut rng), points(m, dim, shift, &mut rng));
        let (rf, ff) = (features(&real), features(&fake));
        let (p, r) = precision_recall(&rf, &ff, k).map_err(err)?;
        let (d, c) = density_coverage(&rf, &ff, k).map_err(err)?;
        let want = oracle(&real, &fake, k);
        ensure(
            (p, r, d, c) == want,
            format!("pair {pair} (N={n}, M={m}): got {:?}, oracle {want:?}", (p, r, d, c)),
        )?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("50 pairs bit-exact, {:.2}s", elapsed.as_secs_f64()))
}

fn identity_law() -> Outcome {
    let mut rng = rng_from(303);
    let k = 5;
    let mut lines = Vec::new();
    for n in [50, 200] {
        let set = features(&points(n, 16, 0.0, &mut rng));
        let (p, r) = precision_recall(&set, &set, k).map_err(err)?;
        let (d, c) = density_coverage(&set, &set, k).map_err(err)?;
        ensure(p == 1.0 && r == 1.0 && c == 1.0, format!("N={n}: P={p} R={r} C={c}"))?;
        ensure((d - 1.2).abs() <= 1e-12, format!("N={n}: D={d}"))?;
        lines.push(format!("N={n} D={d}"));
    }
    Ok(format!("P=R=C=1, {}", lines.join(", ")))
}

// 4. Table arithmetic

fn table_arithmetic() -> Outcome {
    // (P, R, D, C) rows and the published F1 pairs.
    let rows = [
        ("CNN-VAE", [0.642, 0.625, 0.617, 0.746], [0.633, 0.675]),
        ("Music Transformer", [0.546, 0.359, 0.687, 0.408], [0.433, 0.512]),
        ("MuseGAN", [0.641, 0.689, 0.673, 0.842], [0.664, 0.748]),
        ("temperature", [0.768, 0.655, 1.263, 0.949], [0.707, 1.084]),
        ("top-k", [0.779, 0.636, 1.328, 0.952], [0.700, 1.109]),
        ("top-p", [0.783, 0.638, 1.337, 0.950], [0.703, 1.111]),
    ];
    ensure((f1(0.768, 0.655) - 0.707).abs() <= 5e-4, "f1(0.768, 0.655)")?;
    ensure((f1(1.263, 0.949) - 1.084).abs() <= 5e-4, "f1(1.263, 0.949)")?;
    let mut worst: f64 = 0.0;
    for (name, [p, r, d, c], [fpr, fdc]) in rows {
        let (a, b) = (f1(p, r), f1(d, c));
        let e = (a - fpr).abs().max((b - fdc).abs());
        ensure(e <= 1e-3, format!("{name}: ({a:.4}, {b:.4}) vs ({fpr}, {fdc})"))?;
        worst = worst.max(e);
    }
    Ok(format!("6 rows, max deviation {worst:.1e}"))
}

// 5. Detector separation

fn welch(a: &[f64], b: &[f64]) -> (f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let ((na, ma, va), (nb, mb, vb)) = (stats(a), stats(b));
    let (sa, sb) = (va / na, vb / nb);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs());
    (t, p)
}

fn detector_separation() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(505);
    let train: Vec<_> = (0..500).map(|_| synthetic_loop_matrix(&mut rng)).collect::<Result<_, _>>().map_err(err)?;
    let held_loops: Vec<_> = (0..100).map(|_| synthetic_loop_matrix(&mut rng)).collect::<Result<_, _>>().map_err(err)?;
    let held_random: Vec<_> = (0..100).map(|_| random_matrix(&mut rng)).collect();
    let (model, _) = train_svdd(&train, &SvddConfig::default(), &mut rng).map_err(err)?;
    let a = model.scores(&held_loops).map_err(err)?;
    let b = model.scores(&held_random).map_err(err)?;
    let (t, p) = welch(&a, &b);
    let (ma, mb) = (a.iter().sum::<f64>() / 100.0, b.iter().sum::<f64>() / 100.0);
    let elapsed = start.elapsed();
    ensure(ma < mb, format!("loop mean {ma:.4e} >= random mean {mb:.4e}"))?;
    ensure(p < 1e-3, format!("Welch p = {p:.3e}"))?;
    ensure(elapsed <= Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "loop {ma:.3e} vs random {mb:.3e}, t={t:.2}, p={p:.1e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// 6. VQ-VAE overfit

fn vq_overfit() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(6);
    let phrases: Vec<PianorollPhrase> = (0..32).map(|_| loop_phrase(&mut rng)).collect();
    let cfg = VqConfig {
        overfit_target: Some(5e-3),
        max_steps: Some(2000),
        epochs: 2000,
        ..VqConfig::default()
    };
    let mut model = VqVaeModel::new(cfg, &mut rng).map_err(err)?;
    let report = train_vqvae(&mut model, &phrases, &mut rng).map_err(err)?;
    let refs: Vec<&PianorollPhrase> = phrases.iter().collect();
    let recon = model.mean_reconstruction_error(&refs).map_err(err)?;
    let elapsed = start.elapsed();
    ensure(report.steps <= 2000, format!("{} steps", report.steps))?;
    ensure(recon < 5e-3, format!("reconstruction error {recon:.3e} after {} steps", report.steps))?;
    ensure(elapsed <= Duration::from_secs(300), format!("took {elapsed:?}"))?;
    Ok(format!("error {recon:.3e} after {} steps, {:.1}s", report.steps, elapsed.as_secs_f64()))
}

// 7. Prior overfit and chance level

fn prior_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(707);
    let seq = TokenSequence::from_usize(&(0..32).map(|_| rng.random_range(0..512)).collect::<Vec<_>>()).map_err(err)?;
    let cfg = PriorConfig {
        epochs: 2000,
        stop_at_accuracy: Some(1.0),
        ..PriorConfig::default()
    };
    let mut model = PriorModel::new(cfg.clone(), &mut rng).map_err(err)?;
    let report = train_prior(&mut model, std::slice::from_ref(&seq), &mut rng).map_err(err)?;
    ensure(report.accuracy == 1.0, format!("single-sequence accuracy {} after {} epochs", report.accuracy, report.epochs_run))?;

    let untrained = PriorModel::new(PriorConfig::default(), &mut rng).map_err(err)?;
    let random: Vec<TokenSequence> = (0..1000)
        .map(|_| TokenSequence::from_usize(&(0..32).map(|_| rng.random_range(0..512)).collect::<Vec<_>>()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let acc = untrained.teacher_forcing_accuracy(&random).map_err(err)?;
    let n = 1000.0 * 31.0;
    let p0: f64 = 1.0 / 512.0;
    let sigma = (p0 * (1.0 - p0) / n).sqrt();
    ensure((acc - p0).abs() <= 3.0 * sigma, format!("untrained accuracy {acc:.5} vs {p0:.5} ± {:.5}", 3.0 * sigma))?;
    Ok(format!(
        "overfit in {} epochs; untrained {acc:.5} within {p0:.5} ± {:.5}, {:.1}s",
        report.epochs_run,
        3.0 * sigma,
        start.elapsed().as_secs_f64()
    ))
}

// 8. Samplers

fn sampler_checks() -> Outcome {
    let mut rng = rng_from(808);
    for trial in 0..100 {
        let logits: Vec<f64> = (0..512).map(|_| 3.0 * { let v: f64 = StandardNormal.sample(&mut rng); v }).collect();
        let t = rng.random_range(0.3..2.0);
        let reference = temperature_distribution(&logits, t);
        ensure(topk_distribution(&logits, 512, t) == reference, format!("trial {trial}: top-k(512) differs"))?;
        ensure(nucleus_distribution(&logits, 1.0, t) == reference, format!("trial {trial}: nucleus(1.0) differs"))?;
        let best = argmax(&logits);
        let one = topk_distribution(&logits, 1, t);
        ensure(one[best] == 1.0 && one.iter().sum::<f64>() == 1.0, format!("trial {trial}: top-k(1) not one-hot"))?;
        for _ in 0..10 {
            ensure(sample_topk(&logits, 1, t, &mut rng) == best, format!("trial {trial}: top-k(1) draw"))?;
        }
    }

    let logits: Vec<f64> = (0..512).map(|_| 0.5 * { let v: f64 = StandardNormal.sample(&mut rng); v }).collect();
    let probs = temperature_distribution(&logits, 1.0);
    let draws = 100_000;
    let mut counts = vec![0usize; 512];
    for _ in 0..draws {
        counts[draw(&probs, &mut rng)] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| {
            let e = p * draws as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new(511.0).unwrap().cdf(chi2);
    ensure(p > 0.01, format!("chi-square {chi2:.1}, p = {p:.4}"))?;
    Ok(format!("exact equalities on 100 logit vectors; chi2={chi2:.1} (df 511), p={p:.3}"))
}

// 9. Rejection

fn rejection_monotonicity() -> Outcome {
    let mut rng = rng_from(909);
    let train: Vec<_> = (0..300).map(|_| midi_correlation(&loop_phrase(&mut rng))).collect();
    let cfg = SvddConfig {
        epochs: 200,
        ..SvddConfig::default()
    };
    let (model, _) = train_svdd(&train, &cfg, &mut rng).map_err(err)?;
    let mut samples = Corpus::new();
    for i in 0..2000 {
        let p = if i % 2 == 0 { loop_phrase(&mut rng) } else { random_phrase(&mut rng) };
        samples.push(p, Provenance { source: i, start_bar: 0 });
    }
    let all_scores = model.phrase_scores(&samples).map_err(err)?;
    let mut prev: Option<(Vec<u32>, f64)> = None;
    let mut summary = Vec::new();
    for rate in [None, Some(1.0), Some(0.1), Some(0.01), Some(0.001)] {
        let kept = rejection_filter(&samples, &model, rate).map_err(err)?;
        let ids: Vec<u32> = kept.provenance().iter().map(|p| p.source).collect();
        let mean = if ids.is_empty() {
            f64::NEG_INFINITY
        } else {
            ids.iter().map(|&i| all_scores[i as usize]).sum::<f64>() / ids.len() as f64
        };
        if let Some((prev_ids, prev_mean)) = &prev {
            ensure(ids.iter().all(|i| prev_ids.contains(i)), format!("rate {rate:?}: not a subset"))?;
            ensure(mean <= *prev_mean, format!("rate {rate:?}: mean {mean} > {prev_mean}"))?;
        }
        summary.push(format!("{}:{}", rate.map_or("none".into(), |r| r.to_string()), ids.len()));
        prev = Some((ids, mean));
    }
    Ok(format!("nested, means non-increasing; kept {}", summary.join(" ")))
}

// 10. MIDI round trip and fuzz

fn dense_random_phrase(rng: &mut Rng) -> PianorollPhrase {
    let mut p = PianorollPhrase::empty();
    let density = rng.random_range(0.02..0.5);
    for step in 0..PHRASE_STEPS {
        if rng.random_bool(density) {
            p.set(step, rng.random_range(0..BASS_ROWS), true);
        }
        for row in BASS_ROWS..PITCHES {
            if rng.random_bool(density) {
                p.set(step, row, true);
            }
        }
    }
    p
}

fn midi_round_trip() -> Outcome {
    let mut rng = rng_from(1010);
    let mut valid = Vec::new();
    for i in 0..1000 {
        let phrase = match i % 3 {
            0 => loop_phrase(&mut rng),
            1 => random_phrase(&mut rng),
            _ => dense_random_phrase(&mut rng),
        };
        let spec = LoopWriteSpec {
            bpm: rng.random_range(60.0..200.0),
            ..LoopWriteSpec::new(phrase.clone())
        };
        let bytes = write_midi(&spec).map_err(err)?;
        let stream = quantize(&parse_midi(&bytes).map_err(err)?).map_err(err)?;
        let back = window_phrases(&stream, 8, 8);
        ensure(back.len() == 1 && back[0].1 == phrase, format!("phrase {i} changed"))?;
        valid.push(bytes);
    }

    let mut errors = 0;
    for i in 0..10_000 {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let len = rng.random_range(0..512);
            let mut b: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            if i % 4 == 0 && b.len() >= 14 {
                b[..14].copy_from_slice(b"MThd\0\0\0\x06\0\x01\0\x02\x01\xe0");
            }
            b
        } else {
            let mut b = valid[rng.random_range(0..valid.len())].clone();
            for _ in 0..rng.random_range(1..8) {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random();
            }
            if rng.random_bool(0.3) {
                b.truncate(rng.random_range(0..b.len()));
            }
            b
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| parse_midi(&bytes).and_then(|s| quantize(&s))));
        match outcome {
            Ok(Ok(_)) => {}
            Ok(Err(_)) => errors += 1,
            Err(_) => return Err(format!("parser panicked on input {i} ({} bytes)", bytes.len())),
        }
    }
    Ok(format!("1000 phrases bit-exact; 10000 fuzz inputs, {errors} rejected, no panics"))
}

// 11. End to end through the binary

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let root = dir.path();
    write_toy_corpus(&root.join("midi"), 200, 1111);
    let cfg = write_config(root, &small_config(root, 1111));
    let cfg = cfg.to_str().unwrap();
    for stage in STAGES {
        let mut args = vec![stage, "--config", cfg];
        if stage == "generate" {
            args.extend(["--n", "64"]);
        }
        let out = loopforge(&args);
        ensure(
            out.status.success(),
            format!("{stage} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)),
        )?;
    }
    let work = root.join("work");
    let report: MetricReport = serde_json::from_slice(&std::fs::read(work.join("report.json")).map_err(err)?).map_err(err)?;
    let values = [report.ls, report.up, report.nd, report.precision.mean, report.recall.mean, report.density.mean, report.coverage.mean];
    ensure(values.iter().all(|v| v.is_finite()), "non-finite metric")?;
    ensure(report.per_seed.len() == report.config.seeds, "per-seed rows missing")?;
    let mut mids: Vec<_> = std::fs::read_dir(work.join("generated_midi"))
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    mids.sort();
    ensure(mids.len() == 64, format!("{} generated files", mids.len()))?;
    for m in &mids {
        let song = parse_midi(&std::fs::read(m).map_err(err)?).map_err(err)?;
        ensure(song.is_four_four(), format!("{}: not 4/4", m.display()))?;
        quantize(&song).map_err(|e| format!("{}: {e}", m.display()))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(15 * 60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "8 stages, 64 playable files, LS {:.3e} P {:.3} R {:.3}, {:.0}s",
        report.ls,
        report.precision.mean,
        report.recall.mean,
        elapsed.as_secs_f64()
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient checks", gradient_checks),
        ("knn oracle equivalence", knn_oracle),
        ("identity metrics", identity_law),
        ("f1 table arithmetic", table_arithmetic),
        ("detector separation", detector_separation),
        ("vq-vae overfit", vq_overfit),
        ("prior overfit and chance level", prior_checks),
        ("sampler correctness", sampler_checks),
        ("rejection monotonicity", rejection_monotonicity),
        ("midi round trip and fuzz", midi_round_trip),
        ("end-to-end smoke", end_to_end),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(run).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
