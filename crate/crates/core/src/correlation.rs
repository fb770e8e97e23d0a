//! Bar-to-bar correlation matrices from pianorolls and from audio.

use std::io::Read;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pianoroll::{PianorollPhrase, BARS_PER_PHRASE};

/// Number of strictly-upper-triangle entries for 8 bars.
pub const CORR_VEC_LEN: usize = BARS_PER_PHRASE * (BARS_PER_PHRASE - 1) / 2;

/// Symmetric `B × B` bar correlation with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    bars: usize,
    values: Vec<f64>,
}

impl CorrMatrix {
    /// Builds the matrix from its row-major strict upper triangle
    /// `(0,1), (0,2), …, (B-2,B-1)`.
    pub fn from_upper(bars: usize, upper: &[f64]) -> Result<Self> {
        if bars < 2 || upper.len() != bars * (bars - 1) / 2 {
            return Err(Error::invalid(format!(
                "{} upper-triangle values do not fit a {bars}x{bars} matrix",
                upper.len()
            )));
        }
        if let Some(v) = upper.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("correlation {v} outside [-1, 1]")));
        }
        let mut values = vec![0.0; bars * bars];
        let mut it = upper.iter();
        for i in 0..bars {
            values[i * bars + i] = 1.0;
            for j in i + 1..bars {
                let v = *it.next().unwrap();
                values[i * bars + j] = v;
                values[j * bars + i] = v;
            }
        }
        Ok(CorrMatrix { bars, values })
    }

    pub fn bars(&self) -> usize {
        self.bars
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.bars + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Strict upper triangle in row-major order.
    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.bars * (self.bars - 1) / 2);
        for i in 0..self.bars {
            for j in i + 1..self.bars {
                out.push(self.values[i * self.bars + j]);
            }
        }
        out
    }

    fn from_fn(bars: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; bars * bars];
        for i in 0..bars {
            values[i * bars + i] = 1.0;
            for j in i + 1..bars {
                let v = f(i, j).clamp(-1.0, 1.0);
                values[i * bars + j] = v;
                values[j * bars + i] = v;
            }
        }
        CorrMatrix { bars, values }
    }
}

/// `1 - 2d` for the normalized Hamming distance `d` between two equal-length cell slices.
pub fn hamming_correlation(a: &[u8], b: &[u8]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let differing = a.iter().zip(b).filter(|(x, y)| x != y).count();
    1.0 - 2.0 * differing as f64 / a.len() as f64
}

/// Bar-to-bar [`hamming_correlation`] of a phrase.
pub fn midi_correlation(phrase: &PianorollPhrase) -> CorrMatrix {
    CorrMatrix::from_fn(BARS_PER_PHRASE, |i, j| hamming_correlation(phrase.bar(i), phrase.bar(j)))
}

/// STFT/mel settings for audio bar features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioFeatureConfig {
    pub window: usize,
    pub hop: usize,
    pub mel_bands: usize,
}

impl Default for AudioFeatureConfig {
    fn default() -> Self {
        AudioFeatureConfig {
            window: 2048,
            hop: 512,
            mel_bands: 64,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over `window/2 + 1` FFT bins, spanning 0 Hz to Nyquist.
pub fn mel_filterbank(sample_rate: u32, window: usize, bands: usize) -> Vec<Vec<f64>> {
    let bins = window / 2 + 1;
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * f64::from(sample_rate) / window as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Flattened `log1p` mel spectrogram of one bar.
fn bar_features(
    samples: &[f64],
    cfg: &AudioFeatureConfig,
    filters: &[Vec<f64>],
    fft: &dyn rustfft::Fft<f64>,
) -> Vec<f64> {
    let win = cfg.window;
    let hann: Vec<f64> = (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
        .collect();
    let frames = if samples.len() <= win {
        1
    } else {
        1 + (samples.len() - win) / cfg.hop
    };
    let mut out = Vec::with_capacity(frames * filters.len());
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            let s = samples.get(start + n).copied().unwrap_or(0.0);
            *slot = Complex::new(s * hann[n], 0.0);
        }
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..win / 2 + 1].iter().map(|c| c.norm()).collect();
        for filt in filters {
            let energy: f64 = filt.iter().zip(&mags).map(|(w, m)| w * m).sum();
            out.push(energy.ln_1p());
        }
    }
    out
}

/// Pearson correlation; zero when either vector has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Correlation of per-bar mel features for the first 8 bars of a mono clip.
pub fn audio_correlation(samples: &[f64], sample_rate: u32, bpm: f64, cfg: &AudioFeatureConfig) -> Result<CorrMatrix> {
    if !(bpm > 0.0 && bpm.is_finite()) {
        return Err(Error::invalid(format!("bpm must be positive, got {bpm}")));
    }
    if sample_rate == 0 || cfg.window < 2 || cfg.hop == 0 || cfg.mel_bands == 0 {
        return Err(Error::invalid("invalid audio feature configuration"));
    }
    let bar_len = (240.0 / bpm * f64::from(sample_rate)).round() as usize;
    let needed = bar_len * BARS_PER_PHRASE;
    if bar_len == 0 || samples.len() < needed {
        return Err(Error::Audio(format!(
            "clip has {} samples, 8 bars at {bpm} bpm need {needed}",
            samples.len()
        )));
    }
    let filters = mel_filterbank(sample_rate, cfg.window, cfg.mel_bands);
    let fft = FftPlanner::new().plan_fft_forward(cfg.window);
    let feats: Vec<Vec<f64>> = (0..BARS_PER_PHRASE)
        .map(|b| bar_features(&samples[b * bar_len..(b + 1) * bar_len], cfg, &filters, fft.as_ref()))
        .collect();
    Ok(CorrMatrix::from_fn(BARS_PER_PHRASE, |i, j| pearson(&feats[i], &feats[j])))
}

/// Reads a RIFF/WAVE file (16-bit PCM or 32-bit float) as mono samples.
pub fn read_wav(reader: impl Read) -> Result<(Vec<f64>, u32)> {
    let mut wav = hound::WavReader::new(reader).map_err(|e| Error::Audio(e.to_string()))?;
    let spec = wav.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 || channels > 2 {
        return Err(Error::Audio(format!("{channels} channels; only mono and stereo are supported")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => wav
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => wav
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => return Err(Error::Audio(format!("unsupported sample format {fmt:?} {bits}-bit"))),
    }
    .map_err(|e| Error::Audio(e.to_string()))?;
    let mono = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, spec.sample_rate))
}
