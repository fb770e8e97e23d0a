//! Musical-style metrics (loop score, unique pitch, note density) and
//! k-NN manifold metrics (precision, recall, density, coverage) computed in
//! the feature spaces of randomly initialized conv nets.

use ndiff::nn::Conv1d;
use ndiff::rng::rng_for;
use ndiff::tensor::conv1d;
use ndiff::{ParamStore, Tensor};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::SvddModel;
use crate::error::{Error, Result};
use crate::pianoroll::{
    Corpus, PianorollPhrase, BARS_PER_PHRASE, BASS_ROWS, PHRASE_CELLS, PHRASE_STEPS, PITCHES, STEPS_PER_BAR,
};

pub const EMBED_DIM: usize = 128;
const EMBED_CHANNELS: [usize; 4] = [PITCHES, 64, 64, EMBED_DIM];
const EMBED_SLOPE: f64 = 0.1;
const EMBED_BATCH: usize = 64;

/// Feature vectors, row-major `len × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub dim: usize,
    pub data: Vec<f64>,
    pub seed: u64,
}

impl FeatureSet {
    pub fn new(dim: usize, data: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::invalid(format!("{} values do not form rows of {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(FeatureSet { dim, data, seed })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Embeds phrases with a never-trained conv net drawn from `seed`:
/// three stride-2 convolutions with LeakyReLU, then an average over time.
pub fn random_embed(phrases: &[&PianorollPhrase], seed: u64) -> Result<FeatureSet> {
    let mut rng = rng_for(seed, "random-embed");
    let mut store = ParamStore::new();
    let layers: Vec<Conv1d> = EMBED_CHANNELS
        .windows(2)
        .enumerate()
        .map(|(i, c)| Conv1d::new(&mut store, &format!("embed{i}"), c[0], c[1], 4, 2, 1, &mut rng))
        .collect();
    let mut data = Vec::with_capacity(phrases.len() * EMBED_DIM);
    let chunks: Vec<Vec<f64>> = phrases
        .par_chunks(EMBED_BATCH)
        .map(|chunk| -> Result<Vec<f64>> {
            let mut x = Vec::with_capacity(chunk.len() * PHRASE_CELLS);
            for p in chunk {
                x.extend(p.to_channels());
            }
            let mut h = Tensor::new(&[chunk.len(), PITCHES, PHRASE_STEPS], x)?;
            for l in &layers {
                h = conv1d(&h, store.value(l.weight), Some(store.value(l.bias)), l.stride, l.padding)?;
                h = h.map(|v| if v > 0.0 { v } else { EMBED_SLOPE * v });
            }
            let len = h.shape()[2];
            Ok(h.data().chunks_exact(len).map(|t| t.iter().sum::<f64>() / len as f64).collect())
        })
        .collect::<Result<_>>()?;
    for c in chunks {
        data.extend(c);
    }
    FeatureSet::new(EMBED_DIM, data, seed)
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_k(set: &FeatureSet, k: usize) -> Result<()> {
    if k == 0 || set.len() <= k {
        return Err(Error::invalid(format!("k-NN radius needs more than k={k} points, got {}", set.len())));
    }
    Ok(())
}

/// Distance from each point to its k-th nearest other point.
pub fn knn_radius(set: &FeatureSet, k: usize) -> Result<Vec<f64>> {
    check_k(set, k)?;
    Ok((0..set.len())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..set.len())
                .filter(|&j| j != i)
                .map(|j| distance(set.row(i), set.row(j)))
                .collect();
            *d.select_nth_unstable_by(k - 1, f64::total_cmp).1
        })
        .collect())
}

/// `counts[j]` = number of balls `B(centers_i, radii_i)` containing `points_j` (closed balls).
fn ball_counts(centers: &FeatureSet, radii: &[f64], points: &FeatureSet) -> Vec<usize> {
    (0..points.len())
        .into_par_iter()
        .map(|j| {
            (0..centers.len())
                .filter(|&i| distance(points.row(j), centers.row(i)) <= radii[i])
                .count()
        })
        .collect()
}

fn check_pair(real: &FeatureSet, fake: &FeatureSet, k: usize) -> Result<()> {
    check_k(real, k)?;
    check_k(fake, k)?;
    if real.dim != fake.dim {
        return Err(Error::invalid(format!("feature dims differ: {} vs {}", real.dim, fake.dim)));
    }
    Ok(())
}

/// Precision: share of fake points inside some real ball; recall: share of real points inside some fake ball.
pub fn precision_recall(real: &FeatureSet, fake: &FeatureSet, k: usize) -> Result<(f64, f64)> {
    check_pair(real, fake, k)?;
    let real_r = knn_radius(real, k)?;
    let fake_r = knn_radius(fake, k)?;
    let p = ball_counts(real, &real_r, fake).iter().filter(|&&c| c > 0).count() as f64 / fake.len() as f64;
    let r = ball_counts(fake, &fake_r, real).iter().filter(|&&c| c > 0).count() as f64 / real.len() as f64;
    Ok((p, r))
}

/// Density: mean number of real balls containing each fake point, over `k`;
/// coverage: share of real balls containing at least one fake point.
pub fn density_coverage(real: &FeatureSet, fake: &FeatureSet, k: usize) -> Result<(f64, f64)> {
    check_pair(real, fake, k)?;
    let radii = knn_radius(real, k)?;
    let inside: usize = ball_counts(real, &radii, fake).iter().sum();
    let density = inside as f64 / (k * fake.len()) as f64;
    let covered = (0..real.len())
        .into_par_iter()
        .filter(|&i| (0..fake.len()).any(|j| distance(fake.row(j), real.row(i)) <= radii[i]))
        .count();
    Ok((density, covered as f64 / real.len() as f64))
}

/// Mean number of distinct bass rows sounding per bar.
pub fn unique_pitch(phrases: &[&PianorollPhrase]) -> f64 {
    if phrases.is_empty() {
        return 0.0;
    }
    let mut total = 0usize;
    for p in phrases {
        for bar in 0..BARS_PER_PHRASE {
            total += (0..BASS_ROWS)
                .filter(|&r| (0..STEPS_PER_BAR).any(|s| p.get(bar * STEPS_PER_BAR + s, r)))
                .count();
        }
    }
    total as f64 / (phrases.len() * BARS_PER_PHRASE) as f64
}

/// Mean onsets per bar: bass cells whose previous step is silent in that row, plus every drum cell.
pub fn note_density(phrases: &[&PianorollPhrase]) -> f64 {
    if phrases.is_empty() {
        return 0.0;
    }
    let mut total = 0usize;
    for p in phrases {
        for t in 0..PHRASE_STEPS {
            for r in 0..PITCHES {
                if p.get(t, r) && (r >= BASS_ROWS || t == 0 || !p.get(t - 1, r)) {
                    total += 1;
                }
            }
        }
    }
    total as f64 / (phrases.len() * BARS_PER_PHRASE) as f64
}

pub fn f1(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seeds: usize,
    pub n: usize,
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: 10,
            n: 10_000,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ls: f64,
    pub up: f64,
    pub nd: f64,
    pub precision: Stat,
    pub recall: Stat,
    pub density: Stat,
    pub coverage: Stat,
    pub f1_pr: f64,
    pub f1_dc: f64,
    pub per_seed: Vec<SeedMetrics>,
    pub config: EvalConfig,
}

impl MetricReport {
    /// Aligned text: the metric row followed by the two F1 scores.
    pub fn table(&self) -> String {
        let pm = |s: &Stat| format!("{:.3}±{:.3}", s.mean, s.std);
        let head = ["LS", "UP", "ND", "P", "R", "D", "C"];
        let vals = [
            format!("{:.3e}", self.ls),
            format!("{:.3}", self.up),
            format!("{:.3}", self.nd),
            pm(&self.precision),
            pm(&self.recall),
            pm(&self.density),
            pm(&self.coverage),
        ];
        let widths: Vec<usize> = head.iter().zip(&vals).map(|(h, v)| h.chars().count().max(v.chars().count())).collect();
        let line = |cells: Vec<String>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!(
            "{}\n{}\n\nF1 (P & R)  {:.3}\nF1 (D & C)  {:.3}\n",
            line(head.iter().map(|s| s.to_string()).collect()),
            line(vals.to_vec()),
            self.f1_pr,
            self.f1_dc
        )
    }
}

fn subsample(corpus: &Corpus, n: usize, seed: u64, stream: &str) -> Vec<usize> {
    let len = corpus.len();
    if n >= len {
        return (0..len).collect();
    }
    let mut rng = rng_for(seed, stream);
    let mut idx = sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    idx
}

fn pick<'a>(corpus: &'a Corpus, n: usize, seed: u64, stream: &str) -> Vec<&'a PianorollPhrase> {
    subsample(corpus, n, seed, stream)
        .into_iter()
        .map(|i| &corpus.phrases()[i])
        .collect()
}

/// Full report comparing `fake` against `real`, averaging the k-NN metrics over embedding seeds.
pub fn evaluate_suite(real: &Corpus, fake: &Corpus, model: &SvddModel, cfg: &EvalConfig, seed: u64) -> Result<MetricReport> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("evaluation needs non-empty real and fake corpora"));
    }
    if cfg.seeds == 0 {
        return Err(Error::invalid("evaluation needs at least one seed"));
    }
    let mut per_seed = Vec::with_capacity(cfg.seeds);
    for s in 0..cfg.seeds as u64 {
        let stream = format!("subsample-{s}");
        let embed_seed = ndiff::rng::derive_seed(seed, &format!("embed-{s}"));
        let r = random_embed(&pick(real, cfg.n, seed, &stream), embed_seed)?;
        let f = random_embed(&pick(fake, cfg.n, seed, &stream), embed_seed)?;
        let (precision, recall) = precision_recall(&r, &f, cfg.k)?;
        let (density, coverage) = density_coverage(&r, &f, cfg.k)?;
        per_seed.push(SeedMetrics {
            seed: embed_seed,
            precision,
            recall,
            density,
            coverage,
        });
    }
    let stat = |get: fn(&SeedMetrics) -> f64| Stat::of(&per_seed.iter().map(get).collect::<Vec<_>>());
    let (precision, recall) = (stat(|m| m.precision), stat(|m| m.recall));
    let (density, coverage) = (stat(|m| m.density), stat(|m| m.coverage));
    let fake_refs: Vec<&PianorollPhrase> = fake.phrases().iter().collect();
    let scores = model.phrase_scores(fake)?;
    Ok(MetricReport {
        ls: scores.iter().sum::<f64>() / scores.len() as f64,
        up: unique_pitch(&fake_refs),
        nd: note_density(&fake_refs),
        f1_pr: f1(precision.mean, recall.mean),
        f1_dc: f1(density.mean, coverage.mean),
        precision,
        recall,
        density,
        coverage,
        per_seed,
        config: cfg.clone(),
    })
}
