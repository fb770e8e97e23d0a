//! One-class Deep SVDD loop detector over bar-correlation vectors.
//!
//! Training runs in three phases: a bias-free autoencoder pretrains the
//! encoder, the center is fixed at the mean embedding, and the encoder is then
//! pulled towards that center. A phrase's loop score is its squared distance
//! to the center; low scores look like loops.

use log::{info, warn};
use ndiff::checkpoint::round_to_f32;
use ndiff::nn::Linear;
use ndiff::{AdamW, Checkpoint, CosineSchedule, Graph, ParamStore, Rng, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::correlation::{midi_correlation, CorrMatrix, CORR_VEC_LEN};
use crate::error::{Error, Result};
use crate::pianoroll::{Corpus, BARS_PER_PHRASE};

pub const LEAKY_SLOPE: f64 = 0.1;
/// Center components closer to zero than this are pushed out to ±this.
pub const CENTER_GUARD: f64 = 0.1;
/// Scores are floored here before taking logs.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvddConfig {
    /// Layer widths from input to embedding.
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
}

impl Default for SvddConfig {
    fn default() -> Self {
        SvddConfig {
            widths: vec![CORR_VEC_LEN, 64, 32, 16],
            epochs: 1000,
            pretrain_epochs: 100,
            batch_size: 64,
            lr_max: 1e-3,
            lr_min: 5e-6,
            weight_decay: 1e-4,
        }
    }
}

impl SvddConfig {
    fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.widths[0] != CORR_VEC_LEN || self.widths.contains(&0) {
            return Err(Error::invalid(format!(
                "detector needs 3 layers starting at {CORR_VEC_LEN} inputs, got widths {:?}",
                self.widths
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("detector epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// Trained detector: bias-free encoder, fixed center and calibrated threshold.
#[derive(Debug, Clone)]
pub struct SvddModel {
    store: ParamStore,
    layers: Vec<Linear>,
    center: Vec<f64>,
    /// Training-set scores, ascending.
    train_scores: Vec<f64>,
    log_mean: f64,
    log_std: f64,
    threshold: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SvddTrainReport {
    pub pretrain_losses: Vec<f64>,
    /// Mean training score after each epoch of the center-pulling phase.
    pub epoch_mean_scores: Vec<f64>,
    /// Mean training score under the pretrained weights, before any SVDD step.
    pub initial_mean_score: f64,
    pub degenerate_input: bool,
}

fn build_layers(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut Rng) -> Vec<Linear> {
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Linear::new(store, &format!("{prefix}.l{i}"), w[0], w[1], false, rng))
        .collect()
}

fn forward_layers(g: &mut Graph, store: &ParamStore, layers: &[Linear], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(g, store, h)?;
        if i + 1 < layers.len() {
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
    }
    Ok(h)
}

fn stack(rows: &[&[f64]]) -> Result<Tensor> {
    let cols = rows[0].len();
    Ok(Tensor::new(&[rows.len(), cols], rows.concat())?)
}

/// Raw mean of the embeddings, before the near-zero guard.
pub fn mean_embedding(embeddings: &[Vec<f64>]) -> Vec<f64> {
    let dim = embeddings[0].len();
    let mut c = vec![0.0; dim];
    for e in embeddings {
        c.iter_mut().zip(e).for_each(|(c, v)| *c += v);
    }
    c.iter_mut().for_each(|v| *v /= embeddings.len() as f64);
    c
}

/// Pushes components with `|c_k| < CENTER_GUARD` to `±CENTER_GUARD`, keeping the sign (zero goes positive).
pub fn guard_center(c: &mut [f64]) -> usize {
    let mut moved = 0;
    for v in c.iter_mut() {
        if v.abs() < CENTER_GUARD {
            *v = if *v < 0.0 { -CENTER_GUARD } else { CENTER_GUARD };
            moved += 1;
        }
    }
    moved
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `τ = exp(mean(log s) + std(log s))` with the sample standard deviation.
pub fn calibrate_threshold(scores: &[f64]) -> Result<f64> {
    let (mean, std) = log_stats(scores)?;
    Ok((mean + std).exp())
}

/// Mean and sample standard deviation of `log(max(s, SCORE_FLOOR))`.
pub fn log_stats(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.len() < 2 {
        return Err(Error::invalid(format!(
            "threshold calibration needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    let logs: Vec<f64> = scores.iter().map(|s| s.max(SCORE_FLOOR).ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Linear-interpolation quantile of ascending `sorted` values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn train_svdd(train: &[CorrMatrix], cfg: &SvddConfig, rng: &mut Rng) -> Result<(SvddModel, SvddTrainReport)> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::invalid(format!(
            "detector training needs at least 2 matrices, got {}",
            train.len()
        )));
    }
    if let Some(m) = train.iter().find(|m| m.bars() != BARS_PER_PHRASE) {
        return Err(Error::invalid(format!("expected {BARS_PER_PHRASE}-bar matrices, got {}", m.bars())));
    }
    let inputs: Vec<Vec<f64>> = train.iter().map(CorrMatrix::upper).collect();
    let mut report = SvddTrainReport {
        degenerate_input: inputs.windows(2).all(|w| w[0] == w[1]),
        ..Default::default()
    };
    if report.degenerate_input {
        warn!("all detector training inputs are identical; the hypersphere may collapse");
    }

    let mut store = ParamStore::new();
    let layers = build_layers(&mut store, "svdd", &cfg.widths, rng);
    let mut rev = cfg.widths.clone();
    rev.reverse();
    let decoder = build_layers(&mut store, "svdd_decoder", &rev, rng);

    let batches_per_epoch = inputs.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..inputs.len()).collect();

    // Phase 1: reconstruct the input through encoder + mirrored decoder.
    if cfg.pretrain_epochs > 0 {
        let sched = CosineSchedule::new(cfg.lr_max, cfg.lr_min, (cfg.pretrain_epochs * batches_per_epoch) as u64)?;
        let mut opt = AdamW::new(cfg.weight_decay);
        for _ in 0..cfg.pretrain_epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let rows: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
                let x_t = stack(&rows)?;
                let mut g = Graph::new();
                let x = g.constant(x_t);
                let z = forward_layers(&mut g, &store, &layers, x)?;
                let z = g.leaky_relu(z, LEAKY_SLOPE)?;
                let y = forward_layers(&mut g, &store, &decoder, z)?;
                let d = g.sub(y, x)?;
                let loss = g.sum_squares(d)?;
                let loss = g.scale(loss, 1.0 / chunk.len() as f64)?;
                total += g.value(loss).item() * chunk.len() as f64;
                store.zero_grad();
                let grads = g.backward(loss)?;
                store.accumulate(&g, &grads);
                opt.step(&mut store, sched.lr(opt.steps()))?;
            }
            report.pretrain_losses.push(total / inputs.len() as f64);
        }
    }

    // Phase 2: fix the center from the pretrained encoder.
    let encoder_only = {
        let mut s = ParamStore::new();
        let mut enc_layers = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            let p = store.get(l.weight);
            let id = s.add(format!("svdd.l{i}.weight"), p.value.clone());
            enc_layers.push(Linear { weight: id, bias: None });
        }
        (s, enc_layers)
    };
    let (mut store, layers) = encoder_only;
    let embeddings = embed_all(&store, &layers, &inputs)?;
    let mut center = mean_embedding(&embeddings);
    report.initial_mean_score =
        embeddings.iter().map(|e| squared_distance(e, &center)).sum::<f64>() / embeddings.len() as f64;
    let moved = guard_center(&mut center);
    if moved > 0 {
        info!("{moved} center components pushed to ±{CENTER_GUARD}");
    }

    // Phase 3: contract the embeddings around the fixed center.
    let sched = CosineSchedule::new(cfg.lr_max, cfg.lr_min, (cfg.epochs * batches_per_epoch) as u64)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let mut g = Graph::new();
            let x = g.constant(stack(&rows)?);
            let z = forward_layers(&mut g, &store, &layers, x)?;
            let c = g.constant(Tensor::new(&[chunk.len(), center.len()], center.repeat(chunk.len()))?);
            let d = g.sub(z, c)?;
            let loss = g.sum_squares(d)?;
            let loss = g.scale(loss, 1.0 / chunk.len() as f64)?;
            store.zero_grad();
            let grads = g.backward(loss)?;
            store.accumulate(&g, &grads);
            opt.step(&mut store, sched.lr(opt.steps()))?;
        }
        let emb = embed_all(&store, &layers, &inputs)?;
        let mean = emb.iter().map(|e| squared_distance(e, &center)).sum::<f64>() / emb.len() as f64;
        report.epoch_mean_scores.push(mean);
    }

    // Weights are kept at checkpoint precision so a reloaded model scores identically.
    for p in store.iter_mut() {
        round_to_f32(&mut p.value);
    }
    center.iter_mut().for_each(|v| *v = f64::from(*v as f32));
    let scores: Vec<f64> = embed_all(&store, &layers, &inputs)?
        .iter()
        .map(|e| stored_score(e, &center))
        .collect();
    let model = SvddModel::assemble(store, layers, center, scores)?;
    Ok((model, report))
}

fn stored_score(e: &[f64], center: &[f64]) -> f64 {
    f64::from(squared_distance(e, center) as f32)
}

fn embed_all(store: &ParamStore, layers: &[Linear], inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let mut h = stack(&rows)?;
    for (i, l) in layers.iter().enumerate() {
        h = h.matmul(store.value(l.weight))?;
        if i + 1 < layers.len() {
            h = h.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
        }
    }
    let dim = h.shape()[1];
    Ok(h.data().chunks(dim).map(<[f64]>::to_vec).collect())
}

impl SvddModel {
    fn assemble(store: ParamStore, layers: Vec<Linear>, center: Vec<f64>, mut train_scores: Vec<f64>) -> Result<Self> {
        train_scores.sort_by(f64::total_cmp);
        let (log_mean, log_std) = log_stats(&train_scores)?;
        let threshold = calibrate_threshold(&train_scores)?;
        Ok(SvddModel {
            store,
            layers,
            center,
            train_scores,
            log_mean,
            log_std,
            threshold,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `(mean, std)` of the log training scores.
    pub fn train_stats(&self) -> (f64, f64) {
        (self.log_mean, self.log_std)
    }

    pub fn train_scores(&self) -> &[f64] {
        &self.train_scores
    }

    pub fn embed(&self, x: &CorrMatrix) -> Result<Vec<f64>> {
        Ok(embed_all(&self.store, &self.layers, &[x.upper()])?.remove(0))
    }

    /// Squared distance of the embedding to the center, at the fp32 precision
    /// of the stored training scores.
    pub fn loop_score(&self, x: &CorrMatrix) -> Result<f64> {
        Ok(stored_score(&self.embed(x)?, &self.center))
    }

    pub fn scores(&self, xs: &[CorrMatrix]) -> Result<Vec<f64>> {
        let inputs: Vec<Vec<f64>> = xs.iter().map(CorrMatrix::upper).collect();
        Ok(embed_all(&self.store, &self.layers, &inputs)?
            .iter()
            .map(|e| stored_score(e, &self.center))
            .collect())
    }

    pub fn phrase_scores(&self, corpus: &Corpus) -> Result<Vec<f64>> {
        let mats: Vec<CorrMatrix> = corpus.phrases().iter().map(midi_correlation).collect();
        self.scores(&mats)
    }

    /// Score below which a sample passes rejection at `rate` (a training-score quantile).
    pub fn rejection_threshold(&self, rate: f64) -> f64 {
        quantile(&self.train_scores, rate)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for p in self.store.iter() {
            ck.insert(p.name.clone(), p.value.clone());
        }
        let t = |v: Vec<f64>| Tensor::new(&[v.len()], v).expect("non-empty");
        ck.insert("svdd.center", t(self.center.clone()));
        ck.insert("svdd.threshold", t(vec![self.threshold]));
        ck.insert("svdd.train_stats", t(vec![self.log_mean, self.log_std]));
        ck.insert("svdd.train_scores", t(self.train_scores.clone()));
        ck
    }

    /// Restores a detector; the threshold is recomputed from the stored training scores.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        for i in 0..3 {
            let name = format!("svdd.l{i}.weight");
            let w = ck.get(&name)?.clone();
            if w.rank() != 2 {
                return Err(Error::Checkpoint(format!("{name} must be a matrix")));
            }
            layers.push(Linear {
                weight: store.add(name, w),
                bias: None,
            });
        }
        let dims: Vec<usize> = layers.iter().map(|l| store.value(l.weight).shape()[1]).collect();
        if store.value(layers[0].weight).shape()[0] != CORR_VEC_LEN
            || (1..3).any(|i| store.value(layers[i].weight).shape()[0] != dims[i - 1])
        {
            return Err(Error::Checkpoint("detector layer shapes do not chain".into()));
        }
        let center = ck.get("svdd.center")?.data().to_vec();
        if center.len() != dims[2] {
            return Err(Error::Checkpoint("center does not match embedding size".into()));
        }
        let scores = ck.get("svdd.train_scores")?.data().to_vec();
        Self::assemble(store, layers, center, scores)
    }
}

/// Keeps the phrases whose loop score is at most the model threshold.
/// Returns the filtered corpus and every phrase's score.
pub fn extract_loops(corpus: &Corpus, model: &SvddModel) -> Result<(Corpus, Vec<f64>)> {
    let scores = model.phrase_scores(corpus)?;
    let tau = model.threshold();
    Ok((corpus.filter_indices(|i| scores[i] <= tau), scores))
}

/// Rejection by loop score. `None` passes everything; otherwise a sample is
/// kept when its score is at most the `rate`-quantile of the training scores.
pub fn rejection_filter(samples: &Corpus, model: &SvddModel, rate: Option<f64>) -> Result<Corpus> {
    let Some(rate) = rate else {
        return Ok(samples.clone());
    };
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("rejection rate must be in (0, 1], got {rate}")));
    }
    let limit = model.rejection_threshold(rate);
    let scores = model.phrase_scores(samples)?;
    Ok(samples.filter_indices(|i| scores[i] <= limit))
}

/// Parameters of a synthetic loop-structured correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticLoopSpec {
    /// Repetition period in bars; must divide 8.
    pub period: usize,
    /// Correlation between bars at the same position within the period.
    pub level: f64,
    /// Spread of the correlation between bars at different positions.
    pub noise: f64,
}

impl SyntheticLoopSpec {
    pub fn random(rng: &mut Rng) -> Self {
        SyntheticLoopSpec {
            period: if rng.random_bool(0.5) { 2 } else { 4 },
            level: rng.random_range(0.7..=1.0),
            noise: rng.random_range(0.05..0.2),
        }
    }

    pub fn matrix(&self, rng: &mut Rng) -> Result<CorrMatrix> {
        if self.period == 0 || BARS_PER_PHRASE % self.period != 0 {
            return Err(Error::invalid(format!("period {} does not divide 8", self.period)));
        }
        let jitter = Normal::new(0.0, self.noise.max(1e-9)).expect("finite");
        let cross = rng.random_range(0.0..0.5);
        let mut upper = Vec::with_capacity(CORR_VEC_LEN);
        for i in 0..BARS_PER_PHRASE {
            for j in i + 1..BARS_PER_PHRASE {
                let v = if (j - i) % self.period == 0 {
                    self.level - 0.25 * jitter.sample(rng).abs()
                } else {
                    cross + jitter.sample(rng)
                };
                upper.push(v.clamp(-1.0, 1.0));
            }
        }
        CorrMatrix::from_upper(BARS_PER_PHRASE, &upper)
    }
}

/// Loop-structured matrix with randomly drawn spec.
pub fn synthetic_loop_matrix(rng: &mut Rng) -> Result<CorrMatrix> {
    SyntheticLoopSpec::random(rng).matrix(rng)
}

/// Matrix with independent uniform off-diagonal entries in [-1, 1].
pub fn random_matrix(rng: &mut Rng) -> CorrMatrix {
    let upper: Vec<f64> = (0..CORR_VEC_LEN).map(|_| rng.random_range(-1.0..=1.0)).collect();
    CorrMatrix::from_upper(BARS_PER_PHRASE, &upper).expect("valid range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndiff::rng::rng_from;

    fn small_cfg(epochs: usize) -> SvddConfig {
        SvddConfig {
            epochs,
            pretrain_epochs: 10,
            ..SvddConfig::default()
        }
    }

    #[test]
    fn threshold_examples() {
        let from_logs = |logs: &[f64]| logs.iter().map(|l: &f64| l.exp()).collect::<Vec<_>>();
        let tau = calibrate_threshold(&from_logs(&[-2.0, -1.0, 0.0])).unwrap();
        assert!((tau - 1.0).abs() < 1e-12);
        assert!((calibrate_threshold(&[0.3; 5]).unwrap() - 0.3).abs() < 1e-15);
        let tau = calibrate_threshold(&from_logs(&[1.0, 3.0])).unwrap();
        assert!((tau - (2.0 + 2f64.sqrt()).exp()).abs() < 1e-9);
        assert!(calibrate_threshold(&[1.0]).is_err());
        assert!(calibrate_threshold(&[0.0, 0.0]).unwrap() > 0.0);
    }

    #[test]
    fn interpolated_quantile() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile(&s, 0.1) - 10.9).abs() < 1e-12);
        assert_eq!(quantile(&s, 1.0), 100.0);
    }

    #[test]
    fn center_guard_preserves_sign() {
        let mut c = vec![0.05, -0.05, 0.0, 0.5, -0.2];
        assert_eq!(guard_center(&mut c), 3);
        assert_eq!(c, vec![0.1, -0.1, 0.1, 0.5, -0.2]);
    }

    #[test]
    fn mean_center_gives_trace_of_covariance() {
        let mut rng = rng_from(4);
        let emb: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let c = mean_embedding(&emb);
        let mean_score = emb.iter().map(|e| squared_distance(e, &c)).sum::<f64>() / 50.0;
        let trace: f64 = (0..4)
            .map(|k| emb.iter().map(|e| (e[k] - c[k]).powi(2)).sum::<f64>() / 50.0)
            .sum();
        assert!((mean_score - trace).abs() < 1e-12);
    }

    #[test]
    fn synthetic_matrices_are_valid() {
        let mut rng = rng_from(1);
        for _ in 0..100 {
            let m = synthetic_loop_matrix(&mut rng).unwrap();
            assert!(m.upper().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let bad = SyntheticLoopSpec {
            period: 3,
            level: 0.9,
            noise: 0.1,
        };
        assert!(bad.matrix(&mut rng).is_err());
    }

    #[test]
    fn training_reduces_mean_score_and_round_trips() {
        let mut rng = rng_from(2);
        let train: Vec<CorrMatrix> = (0..64).map(|_| synthetic_loop_matrix(&mut rng).unwrap()).collect();
        let (model, report) = train_svdd(&train, &small_cfg(40), &mut rng).unwrap();
        assert!(report.epoch_mean_scores.last().unwrap() < report.epoch_mean_scores.first().unwrap());
        assert!(report.pretrain_losses.last().unwrap() < report.pretrain_losses.first().unwrap());
        assert!(model.threshold() > 0.0);
        assert_eq!(model.train_scores().len(), 64);

        let s1 = model.loop_score(&train[0]).unwrap();
        assert_eq!(s1, model.loop_score(&train[0]).unwrap());
        assert!(s1 >= 0.0);

        let back = SvddModel::from_checkpoint(&Checkpoint::from_bytes(&model.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.threshold(), model.threshold());
        assert_eq!(back.loop_score(&train[3]).unwrap(), model.loop_score(&train[3]).unwrap());
        assert_eq!(back.train_scores(), model.train_scores());
    }

    #[test]
    fn rejects_tiny_training_sets() {
        let mut rng = rng_from(3);
        let one = vec![random_matrix(&mut rng)];
        assert!(train_svdd(&one, &small_cfg(1), &mut rng).is_err());
    }

    #[test]
    fn identical_inputs_are_flagged() {
        let mut rng = rng_from(5);
        let m = random_matrix(&mut rng);
        let (model, report) = train_svdd(&vec![m.clone(); 8], &small_cfg(2), &mut rng).unwrap();
        assert!(report.degenerate_input);
        assert!(model.center().iter().all(|c| c.abs() >= CENTER_GUARD * (1.0 - 1e-6)));
    }

    #[test]
    fn training_inputs_rescore_to_their_stored_scores() {
        let mut rng = rng_from(8);
        let train: Vec<CorrMatrix> = (0..40).map(|_| synthetic_loop_matrix(&mut rng).unwrap()).collect();
        let (model, _) = train_svdd(&train, &small_cfg(5), &mut rng).unwrap();
        let mut again = model.scores(&train).unwrap();
        again.sort_by(f64::total_cmp);
        assert_eq!(again, model.train_scores());
        let max = *model.train_scores().last().unwrap();
        assert_eq!(model.rejection_threshold(1.0), max);
    }
}
