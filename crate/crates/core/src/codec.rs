//! VQ-VAE over phrases: a 1-D conv encoder compresses 128 steps to 32 latent
//! vectors, each snapped to an EMA-learned codebook entry, and a transposed
//! conv decoder emits multi-label logits over the 128 × 57 grid.

use log::debug;
use ndiff::checkpoint::round_to_f32;
use ndiff::nn::{Conv1d, ConvTranspose1d};
use ndiff::{AdamW, Checkpoint, CosineSchedule, Graph, ParamStore, Rng, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pianoroll::{Corpus, PianorollPhrase, BASS_ROWS, PHRASE_CELLS, PHRASE_STEPS, PITCHES};

pub const CODEBOOK_SIZE: usize = 512;
pub const LATENT_DIM: usize = 16;
pub const LATENT_STEPS: usize = 32;
pub const LEAKY_SLOPE: f64 = 0.1;
pub const EMA_EPSILON: f64 = 1e-5;

/// Codebook indices for one phrase.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    indices: Vec<u16>,
}

impl TokenSequence {
    pub const LEN: usize = LATENT_STEPS;

    pub fn new(indices: Vec<u16>) -> Result<Self> {
        if indices.len() != Self::LEN {
            return Err(Error::invalid(format!(
                "token sequence needs {} indices, got {}",
                Self::LEN,
                indices.len()
            )));
        }
        if let Some(&k) = indices.iter().find(|&&k| usize::from(k) >= CODEBOOK_SIZE) {
            return Err(Error::invalid(format!("token {k} outside codebook of {CODEBOOK_SIZE}")));
        }
        Ok(TokenSequence { indices })
    }

    pub fn from_usize(indices: &[usize]) -> Result<Self> {
        let idx = indices
            .iter()
            .map(|&k| u16::try_from(k).map_err(|_| Error::invalid(format!("token {k} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(idx)
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn to_usize(&self) -> Vec<usize> {
        self.indices.iter().map(|&k| usize::from(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqConfig {
    pub codebook_size: usize,
    pub hidden: usize,
    pub beta: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Steps per dead-code window.
    pub restart_window: usize,
    pub codebook_init_std: f64,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    /// Stop once the training-set reconstruction error drops below this.
    pub overfit_target: Option<f64>,
    /// Steps between reconstruction checks when `overfit_target` is set.
    pub eval_every: usize,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig {
            codebook_size: CODEBOOK_SIZE,
            hidden: 128,
            beta: 0.25,
            gamma: 0.99,
            batch_size: 64,
            epochs: 100,
            lr_max: 1e-3,
            lr_min: 5e-6,
            weight_decay: 1e-4,
            restart_window: 25,
            codebook_init_std: 0.1,
            max_steps: None,
            overfit_target: None,
            eval_every: 25,
        }
    }
}

impl VqConfig {
    fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 || self.codebook_size > CODEBOOK_SIZE {
            return Err(Error::invalid(format!(
                "codebook size must be in 1..={CODEBOOK_SIZE}, got {}",
                self.codebook_size
            )));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.restart_window == 0 || self.eval_every == 0 {
            return Err(Error::invalid("codec widths, batch size and windows must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("EMA decay must be in [0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Decoder output for one phrase.
#[derive(Debug, Clone)]
pub struct Decoded {
    /// Logits, time-major `PHRASE_STEPS × PITCHES`.
    pub logits: Vec<f64>,
    /// `σ(logit) ≥ 0.5`, i.e. `logit ≥ 0`.
    pub labels: Vec<u8>,
}

impl Decoded {
    /// Labels as a valid phrase: where several bass rows fire at one step only the lowest is kept.
    pub fn phrase(&self) -> PianorollPhrase {
        let mut cells = self.labels.clone();
        for t in 0..PHRASE_STEPS {
            let row = &mut cells[t * PITCHES..t * PITCHES + BASS_ROWS];
            if let Some(first) = row.iter().position(|&c| c == 1) {
                row[first + 1..].fill(0);
            }
        }
        PianorollPhrase::from_cells(cells).expect("binary labels with one bass row")
    }
}

#[derive(Debug, Clone)]
pub struct VqVaeModel {
    cfg: VqConfig,
    store: ParamStore,
    encoder: Vec<Conv1d>,
    projection: Conv1d,
    decoder: Vec<ConvTranspose1d>,
    /// `[K, D]`.
    codebook: Vec<f64>,
    ema_count: Vec<f64>,
    ema_sum: Vec<f64>,
    usage: Vec<u64>,
    window_steps: usize,
}

#[derive(Debug, Clone, Default)]
pub struct VqTrainReport {
    pub losses: Vec<f64>,
    /// `(step, reconstruction error)` checks.
    pub recon_errors: Vec<(usize, f64)>,
    pub restarts: usize,
    pub steps: usize,
}

/// Index of the codebook row nearest to `z` (squared Euclidean, lowest index on ties).
pub fn nearest_code(codebook: &[f64], dim: usize, z: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in codebook.chunks_exact(dim).enumerate() {
        let d: f64 = e.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Nearest code for every row of `z` (`[n, dim]`) and the quantized rows.
pub fn quantize_rows(codebook: &[f64], dim: usize, z: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let idx: Vec<usize> = z.chunks_exact(dim).map(|row| nearest_code(codebook, dim, row)).collect();
    let q = idx.iter().flat_map(|&k| codebook[k * dim..(k + 1) * dim].iter().copied()).collect();
    (idx, q)
}

/// Fraction of differing cells.
pub fn reconstruction_error(x: &[u8], x_hat: &[u8]) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::invalid(format!(
            "reconstruction_error needs equal non-empty grids, got {} and {}",
            x.len(),
            x_hat.len()
        )));
    }
    Ok(x.iter().zip(x_hat).filter(|(a, b)| a != b).count() as f64 / x.len() as f64)
}

/// Mean BCE of the logits against `y` plus `β` times the mean squared
/// distance between latent vectors and their codes.
pub fn vq_loss(g: &mut Graph, logits: Var, targets: &Tensor, z: Var, quantized: &Tensor, beta: f64) -> Result<Var> {
    let recon = g.bce_with_logits(logits, targets)?;
    let rows = g.shape(z)[0];
    let q = g.constant(quantized.clone());
    let d = g.sub(z, q)?;
    let commit = g.sum_squares(d)?;
    let commit = g.scale(commit, beta / rows as f64)?;
    Ok(g.add(recon, commit)?)
}

fn leaky(g: &mut Graph, x: Var) -> Result<Var> {
    Ok(g.leaky_relu(x, LEAKY_SLOPE)?)
}

impl VqVaeModel {
    pub fn new(cfg: VqConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let mut store = ParamStore::new();
        let encoder = vec![
            Conv1d::new(&mut store, "vq.enc0", PITCHES, h, 3, 1, 1, rng),
            Conv1d::new(&mut store, "vq.enc1", h, h, 4, 2, 1, rng),
            Conv1d::new(&mut store, "vq.enc2", h, h, 4, 2, 1, rng),
        ];
        let projection = Conv1d::new(&mut store, "vq.proj", h, LATENT_DIM, 1, 1, 0, rng);
        let decoder = vec![
            ConvTranspose1d::new(&mut store, "vq.dec0", LATENT_DIM, h, 3, 1, 1, rng),
            ConvTranspose1d::new(&mut store, "vq.dec1", h, h, 4, 2, 1, rng),
            ConvTranspose1d::new(&mut store, "vq.dec2", h, PITCHES, 4, 2, 1, rng),
        ];
        let k = cfg.codebook_size;
        let codebook: Vec<f64> = (0..k * LATENT_DIM)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v * cfg.codebook_init_std
            })
            .collect();
        Ok(VqVaeModel {
            store,
            encoder,
            projection,
            decoder,
            ema_count: vec![1.0; k],
            ema_sum: codebook.clone(),
            codebook,
            usage: vec![0; k],
            window_steps: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &VqConfig {
        &self.cfg
    }

    pub fn codebook(&self) -> &[f64] {
        &self.codebook
    }

    pub fn codebook_size(&self) -> usize {
        self.cfg.codebook_size
    }

    pub fn ema_counts(&self) -> &[f64] {
        &self.ema_count
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_values()
    }

    fn batch_input(phrases: &[&PianorollPhrase]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(phrases.len() * PHRASE_CELLS);
        for p in phrases {
            data.extend(p.to_channels());
        }
        Ok(Tensor::new(&[phrases.len(), PITCHES, PHRASE_STEPS], data)?)
    }

    /// Latent rows `[N·S, D]`, sample-major then time.
    fn encoder_forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let mut h = x;
        for layer in &self.encoder {
            h = layer.forward(g, &self.store, h)?;
            h = leaky(g, h)?;
        }
        let z = self.projection.forward(g, &self.store, h)?;
        let z = g.swap_last(z)?;
        Ok(g.reshape(z, &[n * LATENT_STEPS, LATENT_DIM])?)
    }

    /// Logits `[N, PITCHES, PHRASE_STEPS]` from latent rows.
    fn decoder_forward(&self, g: &mut Graph, rows: Var) -> Result<Var> {
        let n = g.shape(rows)[0] / LATENT_STEPS;
        let q = g.reshape(rows, &[n, LATENT_STEPS, LATENT_DIM])?;
        let mut h = g.swap_last(q)?;
        for (i, layer) in self.decoder.iter().enumerate() {
            h = layer.forward(g, &self.store, h)?;
            if i + 1 < self.decoder.len() {
                h = leaky(g, h)?;
            }
        }
        Ok(h)
    }

    /// Latent rows `[N·32, 16]` for a batch of phrases.
    pub fn encode_batch(&self, phrases: &[&PianorollPhrase]) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(Self::batch_input(phrases)?);
        let z = self.encoder_forward(&mut g, x)?;
        Ok(g.value(z).clone())
    }

    /// `32 × 16` latent for one phrase.
    pub fn encode(&self, phrase: &PianorollPhrase) -> Result<Tensor> {
        self.encode_batch(&[phrase])
    }

    pub fn quantize(&self, z: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        if z.rank() != 2 || z.shape()[1] != LATENT_DIM {
            return Err(Error::invalid(format!("latent rows must be [n, {LATENT_DIM}], got {:?}", z.shape())));
        }
        let (idx, q) = quantize_rows(&self.codebook, LATENT_DIM, z.data());
        Ok((idx, Tensor::new(z.shape(), q)?))
    }

    fn decode_rows(&self, rows: Tensor) -> Result<Vec<Decoded>> {
        let mut g = Graph::new();
        let r = g.constant(rows);
        let o = self.decoder_forward(&mut g, r)?;
        let o = g.value(o);
        Ok(o.data()
            .chunks_exact(PHRASE_CELLS)
            .map(|chan| {
                let mut logits = vec![0.0; PHRASE_CELLS];
                for p in 0..PITCHES {
                    for t in 0..PHRASE_STEPS {
                        logits[t * PITCHES + p] = chan[p * PHRASE_STEPS + t];
                    }
                }
                let labels = logits.iter().map(|&v| u8::from(v >= 0.0)).collect();
                Decoded { logits, labels }
            })
            .collect())
    }

    pub fn decode_batch(&self, tokens: &[TokenSequence]) -> Result<Vec<Decoded>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let mut rows = Vec::with_capacity(tokens.len() * LATENT_STEPS * LATENT_DIM);
        for seq in tokens {
            for k in seq.to_usize() {
                if k >= self.cfg.codebook_size {
                    return Err(Error::invalid(format!("token {k} outside codebook of {}", self.cfg.codebook_size)));
                }
                rows.extend_from_slice(&self.codebook[k * LATENT_DIM..(k + 1) * LATENT_DIM]);
            }
        }
        self.decode_rows(Tensor::new(&[tokens.len() * LATENT_STEPS, LATENT_DIM], rows)?)
    }

    pub fn decode(&self, tokens: &TokenSequence) -> Result<Decoded> {
        Ok(self.decode_batch(std::slice::from_ref(tokens))?.remove(0))
    }

    pub fn tokenize_batch(&self, phrases: &[&PianorollPhrase]) -> Result<Vec<TokenSequence>> {
        if phrases.is_empty() {
            return Ok(Vec::new());
        }
        let (idx, _) = self.quantize(&self.encode_batch(phrases)?)?;
        idx.chunks(LATENT_STEPS).map(TokenSequence::from_usize).collect()
    }

    pub fn tokenize(&self, corpus: &Corpus) -> Result<Vec<TokenSequence>> {
        let mut out = Vec::with_capacity(corpus.len());
        let phrases: Vec<&PianorollPhrase> = corpus.phrases().iter().collect();
        for chunk in phrases.chunks(self.cfg.batch_size) {
            out.extend(self.tokenize_batch(chunk)?);
        }
        Ok(out)
    }

    /// Encode, quantize, decode and binarize.
    pub fn reconstruct(&self, phrases: &[&PianorollPhrase]) -> Result<Vec<Decoded>> {
        let mut out = Vec::with_capacity(phrases.len());
        for chunk in phrases.chunks(self.cfg.batch_size) {
            let (_, q) = self.quantize(&self.encode_batch(chunk)?)?;
            out.extend(self.decode_rows(q)?);
        }
        Ok(out)
    }

    /// Mean reconstruction error over `phrases`.
    pub fn mean_reconstruction_error(&self, phrases: &[&PianorollPhrase]) -> Result<f64> {
        if phrases.is_empty() {
            return Err(Error::invalid("no phrases to reconstruct"));
        }
        let mut total = 0.0;
        for (p, d) in phrases.iter().zip(self.reconstruct(phrases)?) {
            total += reconstruction_error(p.cells(), &d.labels)?;
        }
        Ok(total / phrases.len() as f64)
    }

    /// EMA step towards the centroid of the rows assigned to each code.
    pub fn ema_codebook_update(&mut self, z: &[f64], assignments: &[usize]) {
        let k = self.cfg.codebook_size;
        let gamma = self.cfg.gamma;
        let mut counts = vec![0.0; k];
        let mut sums = vec![0.0; k * LATENT_DIM];
        for (row, &a) in z.chunks_exact(LATENT_DIM).zip(assignments) {
            counts[a] += 1.0;
            sums[a * LATENT_DIM..(a + 1) * LATENT_DIM]
                .iter_mut()
                .zip(row)
                .for_each(|(s, v)| *s += v);
            self.usage[a] += 1;
        }
        for j in 0..k {
            self.ema_count[j] = gamma * self.ema_count[j] + (1.0 - gamma) * counts[j];
            let n = self.ema_count[j].max(EMA_EPSILON);
            for d in 0..LATENT_DIM {
                let i = j * LATENT_DIM + d;
                self.ema_sum[i] = gamma * self.ema_sum[i] + (1.0 - gamma) * sums[i];
                self.codebook[i] = self.ema_sum[i] / n;
            }
        }
    }

    /// Replaces codes unused over the current window with random rows of `z`.
    /// Returns how many were restarted and resets the window.
    pub fn restart_dead_codes(&mut self, z: &[f64], rng: &mut Rng) -> usize {
        let rows = z.len() / LATENT_DIM;
        let mut restarted = 0;
        for j in 0..self.cfg.codebook_size {
            if self.usage[j] >= 1 || rows == 0 {
                continue;
            }
            let r = rng.random_range(0..rows);
            let src = &z[r * LATENT_DIM..(r + 1) * LATENT_DIM];
            self.codebook[j * LATENT_DIM..(j + 1) * LATENT_DIM].copy_from_slice(src);
            self.ema_sum[j * LATENT_DIM..(j + 1) * LATENT_DIM].copy_from_slice(src);
            self.ema_count[j] = 1.0;
            restarted += 1;
        }
        self.usage.fill(0);
        self.window_steps = 0;
        restarted
    }

    /// Records one batch of assignments in the usage window and restarts dead codes when the window closes.
    fn track_usage(&mut self, z: &[f64], rng: &mut Rng) -> usize {
        self.window_steps += 1;
        if self.window_steps >= self.cfg.restart_window {
            self.restart_dead_codes(z, rng)
        } else {
            0
        }
    }

    fn train_step(&mut self, batch: &[&PianorollPhrase], opt: &mut AdamW, lr: f64, rng: &mut Rng) -> Result<(f64, usize)> {
        let input = Self::batch_input(batch)?;
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let z = self.encoder_forward(&mut g, x)?;
        let z_val = g.value(z).clone();
        let (idx, q) = self.quantize(&z_val)?;
        let st = g.straight_through(z, q.clone())?;
        let logits = self.decoder_forward(&mut g, st)?;
        let loss = vq_loss(&mut g, logits, &input, z, &q, self.cfg.beta)?;
        let loss_val = g.value(loss).item();
        self.store.zero_grad();
        let grads = g.backward(loss)?;
        self.store.accumulate(&g, &grads);
        opt.step(&mut self.store, lr)?;
        self.ema_codebook_update(z_val.data(), &idx);
        let restarted = self.track_usage(z_val.data(), rng);
        Ok((loss_val, restarted))
    }

    /// Rounds weights and codebook state to checkpoint precision.
    pub fn round_to_checkpoint_precision(&mut self) {
        for p in self.store.iter_mut() {
            round_to_f32(&mut p.value);
        }
        for v in self.codebook.iter_mut().chain(&mut self.ema_sum).chain(&mut self.ema_count) {
            *v = f64::from(*v as f32);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for p in self.store.iter() {
            ck.insert(p.name.clone(), p.value.clone());
        }
        let k = self.cfg.codebook_size;
        let t = |shape: &[usize], v: &[f64]| Tensor::new(shape, v.to_vec()).expect("consistent shape");
        ck.insert("vq.codebook", t(&[k, LATENT_DIM], &self.codebook));
        ck.insert("vq.ema_sum", t(&[k, LATENT_DIM], &self.ema_sum));
        ck.insert("vq.ema_count", t(&[k], &self.ema_count));
        ck
    }

    /// Restores a model; `cfg` supplies the hyperparameters and must match the stored shapes.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: VqConfig) -> Result<Self> {
        let mut rng = ndiff::rng::rng_from(0);
        let mut model = VqVaeModel::new(cfg, &mut rng)?;
        let ids: Vec<_> = model.store.iter().map(|p| p.name.clone()).collect();
        for name in ids {
            let stored = ck.get(&name)?;
            let id = model.store.find(&name).expect("listed above");
            let p = model.store.get_mut(id);
            if stored.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, config expects {:?}",
                    stored.shape(),
                    p.value.shape()
                )));
            }
            p.value = stored.clone();
        }
        let k = model.cfg.codebook_size;
        let load = |name: &str, len: usize| -> Result<Vec<f64>> {
            let t = ck.get(name)?;
            if t.len() != len {
                return Err(Error::Checkpoint(format!("{name} has {} values, expected {len}", t.len())));
            }
            Ok(t.data().to_vec())
        };
        model.codebook = load("vq.codebook", k * LATENT_DIM)?;
        model.ema_sum = load("vq.ema_sum", k * LATENT_DIM)?;
        model.ema_count = load("vq.ema_count", k)?;
        Ok(model)
    }
}

/// Trains on `phrases` for the configured epochs, stopping early at `max_steps`
/// or once the reconstruction error falls below `overfit_target`.
pub fn train_vqvae(model: &mut VqVaeModel, phrases: &[PianorollPhrase], rng: &mut Rng) -> Result<VqTrainReport> {
    if phrases.is_empty() {
        return Err(Error::invalid("codec training needs at least one phrase"));
    }
    let cfg = model.cfg.clone();
    let per_epoch = phrases.len().div_ceil(cfg.batch_size);
    let mut total = cfg.epochs * per_epoch;
    if let Some(m) = cfg.max_steps {
        total = total.min(m);
    }
    let sched = CosineSchedule::new(cfg.lr_max, cfg.lr_min, total.max(1) as u64)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut report = VqTrainReport::default();
    let all: Vec<&PianorollPhrase> = phrases.iter().collect();
    let mut order: Vec<usize> = (0..phrases.len()).collect();

    'outer: while report.steps < total {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PianorollPhrase> = chunk.iter().map(|&i| &phrases[i]).collect();
            let (loss, restarted) = model.train_step(&batch, &mut opt, sched.lr(report.steps as u64), rng)?;
            report.losses.push(loss);
            report.restarts += restarted;
            report.steps += 1;
            if let Some(target) = cfg.overfit_target {
                if report.steps % cfg.eval_every == 0 || report.steps == total {
                    let err = model.mean_reconstruction_error(&all)?;
                    debug!("step {} loss {loss:.5} recon {err:.5}", report.steps);
                    report.recon_errors.push((report.steps, err));
                    if err < target {
                        break 'outer;
                    }
                }
            }
            if report.steps >= total {
                break 'outer;
            }
        }
    }
    model.round_to_checkpoint_precision();
    Ok(report)
}
