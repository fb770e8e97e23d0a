use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use loopforge::codec::{train_vqvae, VqVaeModel};
use loopforge::correlation::{audio_correlation, midi_correlation, read_wav, CorrMatrix};
use loopforge::detector::{extract_loops, synthetic_loop_matrix, train_svdd, SvddModel};
use loopforge::formats::{cor_from_bytes, lpr_from_bytes, lpr_to_bytes, tok_from_bytes, tok_to_bytes};
use loopforge::metrics::evaluate_suite;
use loopforge::midi::{parse_midi, write_midi, LoopWriteSpec};
use loopforge::pianoroll::{quantize, window_phrases, Corpus, PianorollPhrase, Provenance, BARS_PER_PHRASE};
use loopforge::prior::{generate_range, train_prior, PriorModel};
use loopforge::sampling::SamplerKind;
use loopforge::synth::loop_phrase;
use ndiff::rng::rng_for;
use ndiff::Checkpoint;
use rayon::prelude::*;
use serde_json::json;

use crate::artifacts::{FileDigest, RunManifest};
use crate::config::PipelineConfig;

/// Bad invocation: maps to exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// `--rate` value: a quantile in (0, 1] or `none`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate(pub Option<f64>);

impl std::str::FromStr for Rate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(Rate(None));
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v <= 1.0 => Ok(Rate(Some(v))),
            _ => Err(format!("expected a rate in (0, 1] or \"none\", got {s:?}")),
        }
    }
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub sampler: Option<SamplerKind>,
    pub param: Option<f64>,
    pub rate: Option<Rate>,
    pub out: Option<PathBuf>,
    pub overfit: bool,
    pub inputs: Vec<PathBuf>,
}

impl Overrides {
    fn input(&self, i: usize, default: PathBuf) -> PathBuf {
        self.inputs.get(i).cloned().unwrap_or(default)
    }

    fn output(&self, default: PathBuf) -> PathBuf {
        self.out.clone().unwrap_or(default)
    }
}

/// Applies the overrides that affect the echoed config.
pub fn effective_config(mut cfg: PipelineConfig, ov: &Overrides) -> Result<PipelineConfig> {
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    cfg.sampler.seed = cfg.seed;
    if let Some(kind) = ov.sampler {
        cfg.sampler.kind = kind;
    }
    if let Some(v) = ov.param {
        cfg.sampler = cfg.sampler.clone().with_param(v).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(Rate(r)) = ov.rate {
        cfg.generate.rate = r;
    }
    cfg.prior.vocab = cfg.codec.codebook_size;
    if ov.overfit && cfg.codec.overfit_target.is_none() {
        cfg.codec.overfit_target = Some(5e-3);
    }
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn read_corpus(m: &mut RunManifest, path: &Path) -> Result<Corpus> {
    lpr_from_bytes(&m.read_input(path)?).with_context(|| format!("loading {}", path.display()))
}

fn read_checkpoint(m: &mut RunManifest, path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&m.read_input(path)?).with_context(|| format!("loading {}", path.display()))
}

fn load_detector(cfg: &PipelineConfig, m: &mut RunManifest) -> Result<SvddModel> {
    Ok(SvddModel::from_checkpoint(&read_checkpoint(m, &cfg.work("detector.lckp"))?)?)
}

fn load_codec(cfg: &PipelineConfig, m: &mut RunManifest) -> Result<VqVaeModel> {
    Ok(VqVaeModel::from_checkpoint(&read_checkpoint(m, &cfg.work("vqvae.lckp"))?, cfg.codec.clone())?)
}

fn is_midi(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        .unwrap_or(false)
}

pub fn extract(cfg: &PipelineConfig, ov: &Overrides) -> Result<()> {
    let mut manifest = RunManifest::start("extract", cfg);
    let dir = &cfg.paths.midi_dir;
    if !dir.is_dir() {
        bail!("MIDI directory {} does not exist", dir.display());
    }
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && is_midi(e.path()))
        .map(|e| e.into_path())
        .collect();
    files.sort();

    let parsed: Vec<(Option<FileDigest>, Result<loopforge::pianoroll::BarStream>)> = files
        .par_iter()
        .map(|path| match std::fs::read(path) {
            Ok(bytes) => {
                let digest = FileDigest::of(path, &bytes);
                let stream = parse_midi(&bytes).and_then(|song| quantize(&song)).map_err(anyhow::Error::from);
                (Some(digest), stream)
            }
            Err(e) => (None, Err(anyhow!(e))),
        })
        .collect();

    let mut corpus = Corpus::new();
    let mut sources = String::from("index,source,start_bar\n");
    let mut skipped = 0;
    let mut meter = 0;
    let mut short = 0;
    for (i, (path, (digest, stream))) in files.iter().zip(parsed).enumerate() {
        manifest.inputs.extend(digest);
        let stream = match stream {
            Ok(s) => s,
            Err(e) if matches!(e.downcast_ref(), Some(loopforge::Error::NotFourFour)) => {
                info!("skipping {}: not in 4/4", path.display());
                meter += 1;
                continue;
            }
            Err(e) => {
                warn!("skipping {}: {e:#}", path.display());
                skipped += 1;
                continue;
            }
        };
        let windows = window_phrases(&stream, BARS_PER_PHRASE, 1);
        if windows.is_empty() {
            short += 1;
        }
        let rel = path.strip_prefix(dir).unwrap_or(path).display().to_string();
        for (start, phrase) in windows {
            sources.push_str(&format!("{},{},{}\n", corpus.len(), csv_field(&rel), start));
            corpus.push(
                phrase,
                Provenance {
                    source: i as u32,
                    start_bar: start as u32,
                },
            );
        }
    }
    info!(
        "{} files: {} unreadable, {} not in 4/4, {} shorter than {BARS_PER_PHRASE} bars, {} phrases",
        files.len(),
        skipped,
        meter,
        short,
        corpus.len()
    );
    if corpus.is_empty() {
        bail!("no phrases extracted from {}", dir.display());
    }
    let out = ov.output(cfg.work("phrases.lpr"));
    manifest.write_output(&out, &lpr_to_bytes(&corpus)?)?;
    manifest.write_output(&with_suffix(&out, ".sources.csv"), sources.as_bytes())?;
    manifest.finish(json!({
        "files": files.len(),
        "skipped": skipped,
        "not_four_four": meter,
        "too_short": short,
        "phrases": corpus.len(),
    }))?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Tempo from a file name such as `groove_96bpm.wav`.
fn bpm_from_name(path: &Path) -> Option<f64> {
    let name = path.file_stem()?.to_string_lossy().to_ascii_lowercase();
    let at = name.find("bpm")?;
    let digits: String = name[..at]
        .trim_end_matches(['_', '-', ' '])
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok().filter(|b: &f64| *b > 0.0)
}

fn detector_data(cfg: &PipelineConfig, manifest: &mut RunManifest) -> Result<Vec<CorrMatrix>> {
    let data = cfg.detector.data.as_str();
    if data == "synthetic-midi" {
        let mut rng = rng_for(cfg.seed, "detector-data");
        return Ok((0..cfg.detector.synthetic_count)
            .map(|_| midi_correlation(&loop_phrase(&mut rng)))
            .collect());
    }
    if data == "synthetic" {
        let mut rng = rng_for(cfg.seed, "detector-data");
        return (0..cfg.detector.synthetic_count)
            .map(|_| synthetic_loop_matrix(&mut rng).map_err(Into::into))
            .collect();
    }
    let path = Path::new(data);
    if path.is_dir() {
        let mut wavs: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        wavs.sort();
        let mut mats = Vec::new();
        for wav in wavs {
            let Some(bpm) = bpm_from_name(&wav) else {
                warn!("skipping {}: no tempo in file name", wav.display());
                continue;
            };
            let bytes = manifest.read_input(&wav)?;
            match read_wav(&bytes[..]).and_then(|(s, sr)| audio_correlation(&s, sr, bpm, &cfg.audio)) {
                Ok(m) => mats.push(m),
                Err(e) => warn!("skipping {}: {e}", wav.display()),
            }
        }
        return Ok(mats);
    }
    Ok(cor_from_bytes(&manifest.read_input(path)?)?)
}

pub fn train_detector(cfg: &PipelineConfig, ov: &Overrides) -> Result<()> {
    let mut manifest = RunManifest::start("train-detector", cfg);
    let data = detector_data(cfg, &mut manifest)?;
    info!("training detector on {} correlation matrices", data.len());
    let mut rng = rng_for(cfg.seed, "train-detector");
    let (model, report) = train_svdd(&data, &cfg.detector.svdd, &mut rng)?;
    let (log_mean, log_std) = model.train_stats();
    info!("threshold {:.6e}", model.threshold());
    let out = ov.output(cfg.work("detector.lckp"));
    manifest.write_output(&out, &model.to_checkpoint().to_bytes())?;
    manifest.finish(json!({
        "matrices": data.len(),
        "threshold": model.threshold(),
        "log_score_mean": log_mean,
        "log_score_std": log_std,
        "initial_mean_score": report.initial_mean_score,
        "final_mean_score": report.epoch_mean_scores.last(),
        "degenerate_input": report.degenerate_input,
    }))?;
    Ok(())
}

fn read_sources(path: &Path) -> Option<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).ok()?;
    reader
        .records()
        .map(|r| r.ok().and_then(|r| r.get(1).map(str::to_string)))
        .collect()
}

pub fn score(cfg: &PipelineConfig, ov: &Overrides) -> Result<()> {
    let mut manifest = RunManifest::start("score", cfg);
    let input = ov.input(0, cfg.work("phrases.lpr"));
    let corpus = read_corpus(&mut manifest, &input)?;
    let model = load_detector(cfg, &mut manifest)?;
    let (loops, scores) = extract_loops(&corpus, &model)?;
    let sources = read_sources(&with_suffix(&input, ".sources.csv")).filter(|s| s.len() == corpus.len());

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "source", "score"])?;
    for (i, s) in scores.iter().enumerate() {
        let source = sources.as_ref().map_or_else(|| i.to_string(), |v| v[i].clone());
        w.write_record([i.to_string(), source, s.to_string()])?;
    }
    let table = w.into_inner().map_err(|e| anyhow!("{e}"))?;

    let out = ov.output(cfg.work("loops.lpr"));
    manifest.write_output(&out, &lpr_to_bytes(&loops)?)?;
    manifest.write_output(&with_suffix(&out, ".scores.csv"), &table)?;
    info!("kept {} of {} phrases (threshold {:.6e})", loops.len(), corpus.len(), model.threshold());
    manifest.finish(json!({
        "phrases": corpus.len(),
        "kept": loops.len(),
        "threshold": model.threshold(),
    }))?;
    Ok(())
}

pub fn train_vq(cfg: &PipelineConfig, ov: &Overrides) -> Result<()> {
    let mut manifest = RunManifest::start("train-vqvae", cfg);
    let corpus = read_corpus(&mut manifest, &ov.input(0, cfg.work("loops.lpr")))?;
    if corpus.is_empty() {
        bail!("loop corpus is empty");
    }
    let mut rng = rng_for(cfg.seed, "train-vqvae");
    let mut model = VqVaeModel::new(cfg.codec.clone(), &mut rng)?;
    let report = train_vqvae(&mut model, corpus.phrases(), &mut rng)?;
    let refs: Vec<&PianorollPhrase> = corpus.phrases().iter().collect();
    let recon = model.mean_reconstruction_error(&refs)?;
    info!("{} steps, reconstruction error {recon:.4e}", report.steps);
    let out = ov.output(cfg.work("vqvae.lckp"));
    manifest.write_output(&out, &model.to_checkpoint().to_bytes())?;
    manifest.finish(json!({
        "phrases": corpus.len(),
        "steps": report.steps,
        "final_loss": report.losses.last(),
        "reconstruction_error": recon,
        "restarts": report.restarts,
    }))?;
    Ok(())
}

pub fn tokenize(cfg: &PipelineConfig, ov: &Overrides) -> Result<()> {
    let mut manifest = RunManifest::start("tokenize", cfg);
    let corpus = read_corpus(&mut manifest, &ov.input(0, cfg.work("loops.lpr")))?;
    let codec = load_codec(cfg, &mut manifest)?;
    let tokens = codec.tokenize(&corpus)?;
    let out = ov.output(cfg.work("tokens.tok"));
    manifest.write_output(&out, &tok_to_bytes(&tokens)?)?;
    manifest.finish(json!({ "sequences": tokens.len() }))?;
    Ok(())
}

pub fn train_prior_cmd(cfg: &PipelineConfig, ov: &Overrides) -> Result<()> {
    let mut manifest = RunManifest::start("train-prior", cfg);
    let tokens = tok_from_bytes(&manifest.read_input(&ov.input(0, cfg.work("tokens.tok")))?)?;
    if tokens.is_empty() {
        bail!("token corpus is empty");
    }
    let mut rng = rng_for(cfg.seed, "train-prior");
    let mut model = PriorModel::new(cfg.prior.clone(), &mut rng)?;
    let report = train_prior(&mut model, &tokens, &mut rng)?;
    info!("teacher-forcing accuracy {:.4}", report.accuracy);
    let out = ov.output(cfg.work("prior.lckp"));
    manifest.write_output(&out, &model.to_checkpoint().to_bytes())?;
    manifest.finish(json!({
        "sequences": tokens.len(),
        "epochs": report.epochs_run,
        "final_loss": report.epoch_losses.last(),
        "accuracy": report.accuracy,
    }))?;
    Ok(())
}

pub fn generate(cfg: &PipelineConfig, ov: &Overrides) -> Result<()> {
    let mut manifest = RunManifest::start("generate", cfg);
    let n = ov.n.unwrap_or(cfg.generate.n);
    let prior = PriorModel::from_checkpoint(&read_checkpoint(&mut manifest, &cfg.work("prior.lckp"))?, cfg.prior.clone())?;
    let codec = load_codec(cfg, &mut manifest)?;
    let detector = match cfg.generate.rate {
        Some(_) => Some(load_detector(cfg, &mut manifest)?),
        None => None,
    };
    let limit = match (&detector, cfg.generate.rate) {
        (Some(d), Some(rate)) => Some(d.rejection_threshold(rate)),
        _ => None,
    };
    let cap = n.saturating_mul(cfg.generate.attempt_factor.max(1));
    let mut accepted: Vec<(u64, PianorollPhrase)> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while accepted.len() < n && attempts < cap {
        let batch = (n - accepted.len()).min(cap - attempts);
        let phrases = generate_range(&prior, &codec, &cfg.sampler, attempts as u64, batch)?;
        let scores = match &detector {
            Some(d) => d.phrase_scores(&Corpus::from_phrases(phrases.clone()))?,
            None => vec![0.0; phrases.len()],
        };
        for (j, (p, s)) in phrases.into_iter().zip(scores).enumerate() {
            if limit.is_none_or(|l| s <= l) && accepted.len() < n {
                accepted.push(((attempts + j) as u64, p));
            }
        }
        attempts += batch;
    }
    if accepted.len() < n {
        warn!("only {} of {n} samples accepted after {attempts} attempts", accepted.len());
    }

    let mut corpus = Corpus::new();
    for (index, p) in &accepted {
        corpus.push(
            p.clone(),
            Provenance {
                source: *index as u32,
                start_bar: 0,
            },
        );
    }
    let out = ov.output(cfg.work("generated.lpr"));
    manifest.write_output(&out, &lpr_to_bytes(&corpus)?)?;
    let midi_dir = with_suffix(&out, "_midi");
    for (k, (_, p)) in accepted.iter().enumerate() {
        let spec = LoopWriteSpec {
            bpm: cfg.generate.bpm,
            bass_program: cfg.generate.bass_program,
            ..LoopWriteSpec::new(p.clone())
        };
        manifest.write_output(&midi_dir.join(format!("sample_{k:04}.mid")), &write_midi(&spec)?)?;
    }
    info!("wrote {} samples ({attempts} attempts)", accepted.len());
    manifest.finish(json!({
        "requested": n,
        "accepted": accepted.len(),
        "attempts": attempts,
        "rate": cfg.generate.rate,
        "score_limit": limit,
        "sample_indices": accepted.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
    }))?;
    Ok(())
}

pub fn evaluate(cfg: &PipelineConfig, ov: &Overrides) -> Result<()> {
    let mut manifest = RunManifest::start("evaluate", cfg);
    let real = read_corpus(&mut manifest, &ov.input(0, cfg.work("loops.lpr")))?;
    let fake = read_corpus(&mut manifest, &ov.input(1, cfg.work("generated.lpr")))?;
    let detector = load_detector(cfg, &mut manifest)?;
    let mut eval = cfg.eval.clone();
    if let Some(n) = ov.n {
        eval.n = n;
    }
    let report = evaluate_suite(&real, &fake, &detector, &eval, cfg.seed)?;
    let table = report.table();
    print!("{table}");
    let out = ov.output(cfg.work("report.json"));
    manifest.write_output(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    manifest.write_output(&out.with_extension("txt"), table.as_bytes())?;
    manifest.finish(serde_json::to_value(&report)?)?;
    Ok(())
}
