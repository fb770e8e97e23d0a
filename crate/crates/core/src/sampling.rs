//! Next-token samplers. Each strategy is expressed as an exact induced
//! distribution over the vocabulary, then drawn from.

use ndiff::graph::softmax_in_place;
use ndiff::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperatures at or below this select the argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Temperature,
    Topk,
    Nucleus,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" => Ok(SamplerKind::Temperature),
            "topk" => Ok(SamplerKind::Topk),
            "nucleus" => Ok(SamplerKind::Nucleus),
            other => Err(Error::invalid(format!(
                "unknown sampler {other:?} (expected temperature, topk or nucleus)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// Used by the temperature sampler.
    pub temperature: f64,
    pub k: usize,
    pub p: f64,
    /// Softmax temperature applied by the top-k and nucleus samplers.
    pub truncation_temperature: f64,
    pub seed: u64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            kind: SamplerKind::Temperature,
            temperature: 0.7,
            k: 30,
            p: 0.08,
            truncation_temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplerSpec {
    /// Sets the active kind's main parameter (temperature, k or p).
    pub fn with_param(mut self, value: f64) -> Result<Self> {
        match self.kind {
            SamplerKind::Temperature => self.temperature = value,
            SamplerKind::Topk => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::invalid(format!("top-k needs a positive integer, got {value}")));
                }
                self.k = value as usize;
            }
            SamplerKind::Nucleus => self.p = value,
        }
        self.validate(usize::MAX)?;
        Ok(self)
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        let bad = match self.kind {
            SamplerKind::Temperature => !(self.temperature > 0.0),
            SamplerKind::Topk => self.k == 0 || self.k > vocab || !(self.truncation_temperature > 0.0),
            SamplerKind::Nucleus => !(self.p > 0.0 && self.p <= 1.0) || !(self.truncation_temperature > 0.0),
        };
        if bad {
            return Err(Error::invalid(format!("sampler parameters out of range: {self:?}")));
        }
        Ok(())
    }

    /// Exact distribution this sampler draws from.
    pub fn distribution(&self, logits: &[f64]) -> Vec<f64> {
        match self.kind {
            SamplerKind::Temperature => temperature_distribution(logits, self.temperature),
            SamplerKind::Topk => topk_distribution(logits, self.k, self.truncation_temperature),
            SamplerKind::Nucleus => nucleus_distribution(logits, self.p, self.truncation_temperature),
        }
    }

    pub fn sample(&self, logits: &[f64], rng: &mut Rng) -> usize {
        draw(&self.distribution(logits), rng)
    }
}

/// Lowest index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn one_hot(len: usize, i: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    out[i] = 1.0;
    out
}

/// Indices ordered by descending value, lower index first on ties.
fn ranked(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

pub fn temperature_distribution(logits: &[f64], t: f64) -> Vec<f64> {
    if t <= GREEDY_TEMPERATURE {
        return one_hot(logits.len(), argmax(logits));
    }
    let mut p: Vec<f64> = logits.iter().map(|l| l / t).collect();
    softmax_in_place(&mut p);
    p
}

pub fn topk_distribution(logits: &[f64], k: usize, t: f64) -> Vec<f64> {
    let k = k.clamp(1, logits.len());
    if k == logits.len() {
        return temperature_distribution(logits, t);
    }
    let keep = &ranked(logits)[..k];
    let kept: Vec<f64> = keep.iter().map(|&i| logits[i]).collect();
    let probs = temperature_distribution(&kept, t);
    let mut out = vec![0.0; logits.len()];
    for (&i, p) in keep.iter().zip(probs) {
        out[i] = p;
    }
    out
}

pub fn nucleus_distribution(logits: &[f64], p: f64, t: f64) -> Vec<f64> {
    let probs = temperature_distribution(logits, t);
    if p >= 1.0 {
        return probs;
    }
    let order = ranked(&probs);
    let mut cum = 0.0;
    let mut size = order.len();
    for (n, &i) in order.iter().enumerate() {
        cum += probs[i];
        if cum >= p {
            size = n + 1;
            break;
        }
    }
    let mass: f64 = order[..size].iter().map(|&i| probs[i]).sum();
    let mut out = vec![0.0; logits.len()];
    for &i in &order[..size] {
        out[i] = probs[i] / mass;
    }
    out
}

/// Draws an index from a normalized distribution; zero-probability entries are never returned.
pub fn draw(probs: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

pub fn sample_temperature(logits: &[f64], t: f64, rng: &mut Rng) -> usize {
    draw(&temperature_distribution(logits, t), rng)
}

pub fn sample_topk(logits: &[f64], k: usize, t: f64, rng: &mut Rng) -> usize {
    draw(&topk_distribution(logits, k, t), rng)
}

pub fn sample_nucleus(logits: &[f64], p: f64, t: f64, rng: &mut Rng) -> usize {
    draw(&nucleus_distribution(logits, p, t), rng)
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndiff::rng::rng_from;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn greedy_limit_and_ties() {
        let l = [1.0, 3.0, 3.0, 0.0];
        assert_eq!(temperature_distribution(&l, 1e-7), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(topk_distribution(&l, 1, 1.0), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_logits_stay_uniform() {
        for t in [0.1, 1.0, 5.0] {
            assert!(close(&temperature_distribution(&[2.0; 4], t), &[0.25; 4], 1e-15));
        }
    }

    #[test]
    fn topk_truncated_arithmetic() {
        let l = [0.0, 0.0, 2f64.ln(), 2f64.ln()];
        assert!(close(&topk_distribution(&l, 2, 1.0), &[0.0, 0.0, 0.5, 0.5], 1e-15));
    }

    #[test]
    fn topk_boundary_tie_keeps_lower_index() {
        let d = topk_distribution(&[1.0, 1.0, 1.0], 2, 1.0);
        assert_eq!(d, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn nucleus_prefix_arithmetic() {
        let l = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
        let d = nucleus_distribution(&l, 0.6, 1.0);
        assert!(close(&d, &[0.625, 0.375, 0.0], 1e-12));
        assert_eq!(nucleus_distribution(&l, 0.08, 1.0), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn full_truncation_matches_temperature() {
        let mut rng = rng_from(1);
        let l: Vec<f64> = (0..512).map(|_| rng.random_range(-4.0..4.0)).collect();
        let base = temperature_distribution(&l, 0.8);
        assert_eq!(topk_distribution(&l, 512, 0.8), base);
        assert_eq!(nucleus_distribution(&l, 1.0, 0.8), base);
    }

    #[test]
    fn draw_never_returns_zero_mass() {
        let mut rng = rng_from(2);
        let d = [0.0, 0.5, 0.0, 0.5, 0.0];
        for _ in 0..1000 {
            let i = draw(&d, &mut rng);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn spec_param_override() {
        let s = SamplerSpec {
            kind: SamplerKind::Topk,
            ..SamplerSpec::default()
        };
        assert_eq!(s.clone().with_param(5.0).unwrap().k, 5);
        assert!(s.with_param(2.5).is_err());
        assert_eq!("nucleus".parse::<SamplerKind>().unwrap(), SamplerKind::Nucleus);
        assert!("beam".parse::<SamplerKind>().is_err());
    }
}
