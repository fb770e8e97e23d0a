use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use loopforge::codec::VqConfig;
use loopforge::correlation::AudioFeatureConfig;
use loopforge::detector::SvddConfig;
use loopforge::metrics::EvalConfig;
use loopforge::prior::PriorConfig;
use loopforge::sampling::SamplerSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub midi_dir: PathBuf,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            midi_dir: PathBuf::from("midi"),
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSection {
    /// `"synthetic-midi"` (correlations of generated MIDI loops), `"synthetic"`
    /// (structured random matrices), a directory of `<tempo>bpm` WAV loops, or a `.cor` file.
    pub data: String,
    pub synthetic_count: usize,
    #[serde(flatten)]
    pub svdd: SvddConfig,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            data: "synthetic-midi".into(),
            synthetic_count: 500,
            svdd: SvddConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSection {
    pub n: usize,
    /// Rejection rate; `None` disables rejection.
    pub rate: Option<f64>,
    pub bpm: f64,
    pub bass_program: u8,
    /// Attempts allowed per requested sample.
    pub attempt_factor: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            n: 64,
            rate: None,
            bpm: 120.0,
            bass_program: 33,
            attempt_factor: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub audio: AudioFeatureConfig,
    pub detector: DetectorSection,
    pub codec: VqConfig,
    pub prior: PriorConfig,
    pub sampler: SamplerSpec,
    pub generate: GenerateSection,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn work(&self, name: &str) -> PathBuf {
        self.paths.work_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.codec.beta, 0.25);
        assert_eq!(c.codec.codebook_size, 512);
        assert_eq!(c.eval.k, 5);
        assert_eq!(c.eval.seeds, 10);
        assert_eq!(c.eval.n, 10_000);
        assert_eq!(c.sampler.temperature, 0.7);
        assert_eq!(c.sampler.k, 30);
        assert_eq!(c.sampler.p, 0.08);
        assert_eq!(c.detector.svdd.epochs, 1000);
        assert_eq!((c.detector.svdd.lr_max, c.detector.svdd.lr_min), (1e-3, 5e-6));
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 4, "detector": {"epochs": 3}, "sampler": {"kind": "topk"}}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.detector.svdd.epochs, 3);
        assert_eq!(c.detector.data, "synthetic-midi");
        assert_eq!(c.prior.layers, 4);
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
