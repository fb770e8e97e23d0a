//! Autoregressive LSTM prior over token sequences and loop generation.
//!
//! The first token of every sequence is drawn from the empirical start
//! distribution `p(z0)`; the LSTM predicts positions 1..32 from their prefix.

use log::debug;
use ndiff::graph::softmax_in_place;
use ndiff::nn::{Embedding, Linear, LstmLayer};
use ndiff::rng::rng_for;
use ndiff::{AdamW, Checkpoint, CosineSchedule, Graph, ParamStore, Rng, Tensor, Var};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{TokenSequence, VqVaeModel, CODEBOOK_SIZE, LATENT_STEPS};
use crate::error::{Error, Result};
use crate::pianoroll::{Corpus, PianorollPhrase, Provenance};
use crate::sampling::{argmax, draw, SamplerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Token vocabulary; equals the codec's codebook size.
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Stop once teacher-forcing accuracy on the training set reaches this.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            vocab: CODEBOOK_SIZE,
            embed: 64,
            hidden: 256,
            layers: 4,
            epochs: 200,
            batch_size: 64,
            lr_max: 1e-3,
            lr_min: 5e-6,
            weight_decay: 1e-4,
            stop_at_accuracy: None,
        }
    }
}

impl PriorConfig {
    fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.hidden == 0 || self.layers == 0 || self.batch_size == 0 {
            return Err(Error::invalid("prior sizes and batch size must be positive"));
        }
        if self.vocab == 0 || self.vocab > CODEBOOK_SIZE {
            return Err(Error::invalid(format!("vocabulary must be in 1..={CODEBOOK_SIZE}, got {}", self.vocab)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PriorModel {
    cfg: PriorConfig,
    store: ParamStore,
    embedding: Embedding,
    lstm: Vec<LstmLayer>,
    projection: Linear,
    z0: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct PriorTrainReport {
    pub epoch_losses: Vec<f64>,
    pub accuracy: f64,
    pub epochs_run: usize,
}

/// Hidden and cell state of every layer for a batch.
#[derive(Debug, Clone)]
pub struct LstmState {
    h: Vec<Tensor>,
    c: Vec<Tensor>,
}

impl PriorModel {
    pub fn new(cfg: PriorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let embedding = Embedding::new(&mut store, "prior.embedding", cfg.vocab, cfg.embed, rng);
        let lstm = (0..cfg.layers)
            .map(|i| {
                let inputs = if i == 0 { cfg.embed } else { cfg.hidden };
                LstmLayer::new(&mut store, &format!("prior.lstm{i}"), inputs, cfg.hidden, rng)
            })
            .collect();
        let projection = Linear::new(&mut store, "prior.proj", cfg.hidden, cfg.vocab, true, rng);
        let z0 = vec![1.0 / cfg.vocab as f64; cfg.vocab];
        Ok(PriorModel {
            cfg,
            store,
            embedding,
            lstm,
            projection,
            z0,
        })
    }

    pub fn config(&self) -> &PriorConfig {
        &self.cfg
    }

    pub fn z0_distribution(&self) -> &[f64] {
        &self.z0
    }

    /// Sets `p(z0)` from the first tokens of `corpus`.
    pub fn fit_z0(&mut self, corpus: &[TokenSequence]) -> Result<()> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot build p(z0) from an empty token corpus"));
        }
        let mut counts = vec![0.0; self.cfg.vocab];
        for seq in corpus {
            let k = usize::from(seq.indices()[0]);
            *counts
                .get_mut(k)
                .ok_or_else(|| Error::invalid(format!("token {k} outside vocabulary of {}", self.cfg.vocab)))? += 1.0;
        }
        let n = corpus.len() as f64;
        self.z0 = counts.into_iter().map(|c| c / n).collect();
        Ok(())
    }

    pub fn sample_z0(&self, rng: &mut Rng) -> usize {
        draw(&self.z0, rng)
    }

    pub fn zero_state(&self, batch: usize) -> LstmState {
        let z = Tensor::zeros(&[batch, self.cfg.hidden]);
        LstmState {
            h: vec![z.clone(); self.cfg.layers],
            c: vec![z; self.cfg.layers],
        }
    }

    /// Runs the whole network over token columns, returning logits `[batch, V]` per step.
    fn unroll(&self, g: &mut Graph, columns: &[Vec<usize>]) -> Result<Vec<Var>> {
        let batch = columns[0].len();
        let table = g.param(&self.store, self.embedding.table);
        let bound: Vec<_> = self.lstm.iter().map(|l| l.bind(g, &self.store)).collect();
        let zero = Tensor::zeros(&[batch, self.cfg.hidden]);
        let mut h: Vec<Var> = (0..self.cfg.layers).map(|_| g.constant(zero.clone())).collect();
        let mut c = h.clone();
        let mut out = Vec::with_capacity(columns.len());
        for col in columns {
            let mut x = g.embedding(table, col)?;
            for (l, layer) in bound.iter().enumerate() {
                let (h2, c2) = layer.step(g, x, h[l], c[l])?;
                h[l] = h2;
                c[l] = c2;
                x = h2;
            }
            out.push(self.projection.forward(g, &self.store, x)?);
        }
        Ok(out)
    }

    /// Advances `state` by one token per batch row and returns the next-token logits.
    pub fn step(&self, state: &mut LstmState, tokens: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let table = g.param(&self.store, self.embedding.table);
        let mut x = g.embedding(table, tokens)?;
        for (l, layer) in self.lstm.iter().enumerate() {
            let bound = layer.bind(&mut g, &self.store);
            let h = g.constant(state.h[l].clone());
            let c = g.constant(state.c[l].clone());
            let (h2, c2) = bound.step(&mut g, x, h, c)?;
            state.h[l] = g.value(h2).clone();
            state.c[l] = g.value(c2).clone();
            x = h2;
        }
        let logits = self.projection.forward(&mut g, &self.store, x)?;
        Ok(g.value(logits).clone())
    }

    /// Logits for the token following `prefix`.
    pub fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.is_empty() || prefix.len() >= LATENT_STEPS {
            return Err(Error::invalid(format!(
                "prefix length must be in 1..{LATENT_STEPS}, got {}",
                prefix.len()
            )));
        }
        if let Some(&k) = prefix.iter().find(|&&k| k >= self.cfg.vocab) {
            return Err(Error::invalid(format!("token {k} outside codebook")));
        }
        let mut state = self.zero_state(1);
        let mut logits = None;
        for &k in prefix {
            logits = Some(self.step(&mut state, &[k])?);
        }
        Ok(logits.expect("non-empty prefix").into_data())
    }

    fn columns(batch: &[&TokenSequence]) -> Vec<Vec<usize>> {
        (0..LATENT_STEPS)
            .map(|t| batch.iter().map(|s| usize::from(s.indices()[t])).collect())
            .collect()
    }

    /// Fraction of positions 1..32 where the argmax of the teacher-forced prediction equals the target.
    pub fn teacher_forcing_accuracy(&self, corpus: &[TokenSequence]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::invalid("accuracy needs a non-empty token corpus"));
        }
        let all: Vec<&TokenSequence> = corpus.iter().collect();
        let mut hits = 0usize;
        for chunk in all.chunks(self.cfg.batch_size) {
            let cols = Self::columns(chunk);
            let mut g = Graph::new();
            let logits = self.unroll(&mut g, &cols[..LATENT_STEPS - 1])?;
            for (t, &l) in logits.iter().enumerate() {
                let v = g.value(l);
                for (row, &target) in cols[t + 1].iter().enumerate() {
                    if argmax(v.row(row)) == target {
                        hits += 1;
                    }
                }
            }
        }
        Ok(hits as f64 / (corpus.len() * (LATENT_STEPS - 1)) as f64)
    }

    /// Next-token distribution after `prefix` under the model's softmax.
    pub fn next_distribution(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut p = self.next_logits(prefix)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for p in self.store.iter() {
            ck.insert(p.name.clone(), p.value.clone());
        }
        ck.insert("prior.z0", Tensor::new(&[self.cfg.vocab], self.z0.clone()).expect("fixed size"));
        ck
    }

    /// Restores a prior; `cfg` must match the stored shapes.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: PriorConfig) -> Result<Self> {
        let mut model = PriorModel::new(cfg, &mut ndiff::rng::rng_from(0))?;
        let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();
        for name in names {
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
        let z0 = ck.get("prior.z0")?;
        if z0.len() != model.cfg.vocab {
            return Err(Error::Checkpoint("prior.z0 has the wrong length".into()));
        }
        model.z0 = z0.data().to_vec();
        Ok(model)
    }

    fn round_to_checkpoint_precision(&mut self) {
        for p in self.store.iter_mut() {
            ndiff::checkpoint::round_to_f32(&mut p.value);
        }
        self.z0.iter_mut().for_each(|v| *v = f64::from(*v as f32));
    }
}

/// Teacher-forced cross-entropy training on positions 1..32; also fits `p(z0)`.
pub fn train_prior(model: &mut PriorModel, corpus: &[TokenSequence], rng: &mut Rng) -> Result<PriorTrainReport> {
    let vocab = model.cfg.vocab;
    if let Some(k) = corpus.iter().flat_map(|s| s.indices()).find(|&&k| usize::from(k) >= vocab) {
        return Err(Error::invalid(format!("token {k} outside vocabulary of {vocab}")));
    }
    model.fit_z0(corpus)?;
    let cfg = model.cfg.clone();
    let per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let sched = CosineSchedule::new(cfg.lr_max, cfg.lr_min, (cfg.epochs * per_epoch).max(1) as u64)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = PriorTrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TokenSequence> = chunk.iter().map(|&i| &corpus[i]).collect();
            let cols = PriorModel::columns(&batch);
            let mut g = Graph::new();
            let logits = model.unroll(&mut g, &cols[..LATENT_STEPS - 1])?;
            let mut loss: Option<Var> = None;
            for (t, &l) in logits.iter().enumerate() {
                let ce = g.cross_entropy(l, &cols[t + 1])?;
                loss = Some(match loss {
                    Some(acc) => g.add(acc, ce)?,
                    None => ce,
                });
            }
            let loss = g.scale(loss.expect("31 positions"), 1.0 / (LATENT_STEPS - 1) as f64)?;
            total += g.value(loss).item() * chunk.len() as f64;
            model.store.zero_grad();
            let grads = g.backward(loss)?;
            model.store.accumulate(&g, &grads);
            opt.step(&mut model.store, sched.lr(opt.steps()))?;
        }
        report.epoch_losses.push(total / corpus.len() as f64);
        report.epochs_run = epoch + 1;
        if let Some(target) = cfg.stop_at_accuracy {
            let acc = model.teacher_forcing_accuracy(corpus)?;
            debug!("epoch {epoch} loss {:.4} accuracy {acc:.4}", report.epoch_losses[epoch]);
            if acc >= target {
                break;
            }
        }
    }
    model.round_to_checkpoint_precision();
    report.accuracy = model.teacher_forcing_accuracy(corpus)?;
    Ok(report)
}

/// Token sequence for sample `index`, drawn with its own derived generator.
pub fn sample_tokens(model: &PriorModel, sampler: &SamplerSpec, index: u64) -> Result<TokenSequence> {
    sampler.validate(model.cfg.vocab)?;
    let mut rng = rng_for(sampler.seed, &format!("sample-{index}"));
    let mut tokens = Vec::with_capacity(LATENT_STEPS);
    tokens.push(model.sample_z0(&mut rng));
    let mut state = model.zero_state(1);
    while tokens.len() < LATENT_STEPS {
        let logits = model.step(&mut state, &[*tokens.last().expect("z0 drawn")])?;
        tokens.push(sampler.sample(logits.data(), &mut rng));
    }
    TokenSequence::from_usize(&tokens)
}

/// Generates samples `first..first + n` and decodes them to phrases.
pub fn generate_range(
    model: &PriorModel,
    codec: &VqVaeModel,
    sampler: &SamplerSpec,
    first: u64,
    n: usize,
) -> Result<Vec<PianorollPhrase>> {
    let tokens: Vec<TokenSequence> = (first..first + n as u64)
        .into_par_iter()
        .map(|i| sample_tokens(model, sampler, i))
        .collect::<Result<_>>()?;
    tokens
        .par_iter()
        .map(|t| Ok(codec.decode(t)?.phrase()))
        .collect()
}

/// `n` generated phrases; provenance records the sample index.
pub fn generate(model: &PriorModel, codec: &VqVaeModel, sampler: &SamplerSpec, n: usize) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (i, p) in generate_range(model, codec, sampler, 0, n)?.into_iter().enumerate() {
        corpus.push(
            p,
            Provenance {
                source: i as u32,
                start_bar: 0,
            },
        );
    }
    Ok(corpus)
}
