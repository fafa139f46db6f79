use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FeatureSequence, Utterance};
use crate::error::{EmsError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Analysis window in samples.
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// FFT size; defaults to the next power of two at or above `window`.
    pub n_fft: Option<usize>,
    pub f_min: f64,
    /// Upper mel edge; defaults to Nyquist.
    pub f_max: Option<f64>,
    /// Mel energies are clamped to this value before the log.
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { window: 400, hop: 160, n_mels: 40, n_fft: None, f_min: 0.0, f_max: None, log_floor: 1e-10 }
    }
}

impl FeatureConfig {
    fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window < self.hop {
            return Err(EmsError::invalid(format!(
                "need window >= hop > 0, got window={} hop={}",
                self.window, self.hop
            )));
        }
        if self.n_mels == 0 {
            return Err(EmsError::invalid("n_mels must be at least 1"));
        }
        if let Some(n_fft) = self.n_fft {
            if n_fft < self.window {
                return Err(EmsError::invalid("n_fft must be at least the window length"));
            }
        }
        if !(self.log_floor > 0.0) {
            return Err(EmsError::invalid("log_floor must be positive"));
        }
        Ok(())
    }

    pub fn fft_size(&self) -> usize {
        self.n_fft.unwrap_or_else(|| self.window.next_power_of_two())
    }

    /// Number of frames for a waveform of `n` samples.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        (n >= self.window).then(|| (n - self.window) / self.hop + 1)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK-style triangular filterbank, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64)).collect();
    let mut bank = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * sample_rate / n_fft as f64;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            bank[[m, b]] = w;
        }
    }
    bank
}

/// Log-mel front end. Frames are `floor((n - window)/hop) + 1` Hann-windowed
/// slices without padding; outputs are rounded to `f32` precision so the
/// on-disk format round-trips exactly.
pub fn extract_features(utt: &Utterance, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    let n = utt.samples.len();
    let t_len = cfg.frame_count(n).ok_or_else(|| {
        EmsError::invalid(format!("utterance of {n} samples is shorter than one window ({})", cfg.window))
    })?;
    if utt.truth_intensity.len() != n || utt.units.len() != n {
        return Err(EmsError::dims("utterance tracks must match the waveform length"));
    }
    let n_fft = cfg.fft_size();
    let sr = utt.sample_rate as f64;
    let bank = mel_filterbank(cfg.n_mels, n_fft, sr, cfg.f_min, cfg.f_max.unwrap_or(sr / 2.0));
    let hann: Vec<f64> = (0..cfg.window).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.window as f64).cos()).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];

    let mut frames = Array2::zeros((t_len, cfg.n_mels));
    let mut intensity = Vec::with_capacity(t_len);
    let mut units = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let start = t * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, w) in hann.iter().enumerate() {
            buf[i] = Complex::new(utt.samples[start + i] * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let energy: f64 = bank.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            frames[[t, m]] = energy.max(cfg.log_floor).ln() as f32 as f64;
        }
        let window = &utt.truth_intensity[start..start + cfg.window];
        let mean = window.iter().sum::<f64>() / cfg.window as f64;
        intensity.push((mean.clamp(0.0, 1.0) as f32 as f64).clamp(0.0, 1.0));
        units.push(utt.units[start + cfg.window / 2]);
    }

    let seq = FeatureSequence {
        frames,
        frame_rate: sr / cfg.hop as f64,
        truth_frame_intensity: intensity,
        frame_units: units,
        emotion: utt.emotion,
        utterance_id: format!("seed-{}", utt.seed),
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Emotion;

    fn utt(samples: Vec<f64>, intensity: f64) -> Utterance {
        let n = samples.len();
        Utterance {
            samples,
            sample_rate: 16_000,
            emotion: Emotion::Neutral,
            truth_intensity: vec![intensity; n],
            units: vec![0; n],
            seed: 0,
        }
    }

    #[test]
    fn frame_count_formula() {
        let seq = extract_features(&utt(vec![0.1; 1600], 0.0), &FeatureConfig::default()).unwrap();
        assert_eq!(seq.len(), 8);
        assert_eq!(seq.dim(), 40);
        assert_eq!(seq.frame_rate, 100.0);
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let cfg = FeatureConfig::default();
        let seq = extract_features(&utt(vec![0.0; 4000], 0.0), &cfg).unwrap();
        let floor = cfg.log_floor.ln() as f32 as f64;
        assert!(seq.frames.iter().all(|&v| v == floor));
    }

    #[test]
    fn constant_intensity_is_preserved_per_frame() {
        let seq = extract_features(&utt(vec![0.3; 3200], 1.0), &FeatureConfig::default()).unwrap();
        assert!(seq.truth_frame_intensity.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn short_utterance_is_rejected() {
        assert!(extract_features(&utt(vec![0.0; 399], 0.0), &FeatureConfig::default()).is_err());
        let bad = FeatureConfig { hop: 500, ..FeatureConfig::default() };
        assert!(extract_features(&utt(vec![0.0; 4000], 0.0), &bad).is_err());
    }

    #[test]
    fn filterbank_rows_are_triangles_with_unit_peak() {
        let bank = mel_filterbank(10, 512, 16_000.0, 0.0, 8_000.0);
        for row in bank.rows() {
            let max = row.iter().copied().fold(0.0, f64::max);
            assert!(max > 0.5 && max <= 1.0);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn tone_energy_lands_in_matching_band() {
        let samples: Vec<f64> = (0..4000).map(|i| (2.0 * PI * 1000.0 * i as f64 / 16_000.0).sin()).collect();
        let seq = extract_features(&utt(samples, 0.0), &FeatureConfig::default()).unwrap();
        let row = seq.frames.row(3);
        let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let bank = mel_filterbank(40, 512, 16_000.0, 0.0, 8_000.0);
        let bin = (1000.0_f64 * 512.0 / 16_000.0).round() as usize;
        assert!(bank[[argmax, bin]] > 0.0);
    }
}
