//! Harmonic-source speech stand-in with emotion-dependent prosody and
//! "emotional bursts" whose envelope is the ground-truth intensity.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{extract_features, Emotion, FeatureConfig, FeatureSequence, Utterance};
use crate::error::{EmsError, Result};
use crate::rng::{derive_seed, seeded};

/// Prosodic and spectral signature of one emotion class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmotionProfile {
    pub pitch_hz: f64,
    /// Relative pitch change from the start to the end of the utterance.
    pub pitch_slope: f64,
    pub vibrato_hz: f64,
    pub vibrato_depth: f64,
    pub amplitude: f64,
    /// Harmonic roll-off exponent; larger is darker.
    pub spectral_tilt: f64,
    /// Relative pitch excursion at full burst intensity.
    pub burst_pitch_shift: f64,
    /// Reduction of the roll-off exponent at full burst intensity.
    pub burst_brightness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub sample_rate: u32,
    /// Fraction of the utterance covered by bursts.
    pub burst_fraction: f64,
    /// Amplitude multiplier at full burst intensity.
    pub burst_gain: f64,
    pub max_bursts: usize,
    /// Fraction of each burst spent in its raised-cosine on/off ramps.
    pub burst_ramp: f64,
    /// Lowest burst peak before the envelope is normalized to max 1.
    pub min_burst_peak: f64,
    pub unit_count: usize,
    pub unit_min_seconds: f64,
    pub unit_max_seconds: f64,
    /// Per-utterance multiplicative jitter on pitch and amplitude.
    pub speaker_jitter: f64,
    /// Per-utterance additive jitter on the spectral roll-off exponent.
    pub tilt_jitter: f64,
    /// Depth of the slow syllabic amplitude modulation.
    pub syllabic_depth: f64,
    pub noise_level: f64,
    pub max_harmonic_hz: f64,
    pub neutral: EmotionProfile,
    pub happy: EmotionProfile,
    pub sad: EmotionProfile,
    pub angry: EmotionProfile,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            burst_fraction: 0.3,
            burst_gain: 3.0,
            max_bursts: 3,
            burst_ramp: 0.3,
            min_burst_peak: 0.6,
            unit_count: 8,
            unit_min_seconds: 0.06,
            unit_max_seconds: 0.16,
            speaker_jitter: 0.3,
            tilt_jitter: 0.3,
            syllabic_depth: 0.25,
            noise_level: 0.02,
            max_harmonic_hz: 4_000.0,
            neutral: EmotionProfile {
                pitch_hz: 130.0,
                pitch_slope: 0.0,
                vibrato_hz: 0.0,
                vibrato_depth: 0.0,
                amplitude: 0.08,
                spectral_tilt: 1.0,
                burst_pitch_shift: 0.0,
                burst_brightness: 0.0,
            },
            happy: EmotionProfile {
                pitch_hz: 151.0,
                pitch_slope: 0.045,
                vibrato_hz: 6.0,
                vibrato_depth: 0.009,
                amplitude: 0.086,
                spectral_tilt: 0.97,
                burst_pitch_shift: 0.35,
                burst_brightness: 0.2,
            },
            sad: EmotionProfile {
                pitch_hz: 125.5,
                pitch_slope: -0.045,
                vibrato_hz: 0.0,
                vibrato_depth: 0.0,
                amplitude: 0.074,
                spectral_tilt: 1.09,
                burst_pitch_shift: -0.15,
                burst_brightness: -0.3,
            },
            angry: EmotionProfile {
                pitch_hz: 140.5,
                pitch_slope: 0.0,
                vibrato_hz: 0.0,
                vibrato_depth: 0.0,
                amplitude: 0.089,
                spectral_tilt: 0.94,
                burst_pitch_shift: 0.12,
                burst_brightness: 0.5,
            },
        }
    }
}

impl GeneratorConfig {
    pub fn profile(&self, emotion: Emotion) -> &EmotionProfile {
        match emotion {
            Emotion::Neutral => &self.neutral,
            Emotion::Happy => &self.happy,
            Emotion::Sad => &self.sad,
            Emotion::Angry => &self.angry,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EmsError::Config(format!("generator: {m}")));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.burst_fraction) {
            return bad("burst_fraction must lie in [0, 1)");
        }
        if self.burst_gain < 1.0 {
            return bad("burst_gain must be at least 1");
        }
        if self.burst_fraction > 0.0 && self.max_bursts == 0 {
            return bad("max_bursts must be positive when bursts are enabled");
        }
        if !(0.0..=1.0).contains(&self.burst_ramp)
            || !(0.0..=1.0).contains(&self.min_burst_peak)
            || self.min_burst_peak <= 0.0
        {
            return bad("burst_ramp and min_burst_peak must lie in (0, 1]");
        }
        if self.unit_count == 0 || self.unit_min_seconds <= 0.0 || self.unit_max_seconds < self.unit_min_seconds {
            return bad("unit settings invalid");
        }
        Ok(())
    }
}

/// Formant pairs (Hz) of the phone-like units.
const UNIT_FORMANTS: [(f64, f64); 12] = [
    (300.0, 2300.0),
    (400.0, 2000.0),
    (500.0, 1500.0),
    (650.0, 1050.0),
    (750.0, 1250.0),
    (350.0, 850.0),
    (450.0, 1800.0),
    (800.0, 1400.0),
    (280.0, 1600.0),
    (550.0, 2500.0),
    (700.0, 1800.0),
    (380.0, 1200.0),
];
const FORMANT_BANDWIDTH: f64 = 130.0;
/// Harmonic weights are refreshed every this many samples.
const CONTROL_BLOCK: usize = 32;

struct Burst {
    start: usize,
    len: usize,
    peak: f64,
}

fn place_bursts(n_samples: usize, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<Burst> {
    let total = (cfg.burst_fraction * n_samples as f64).round() as usize;
    if total == 0 {
        return Vec::new();
    }
    let count = rng.random_range(1..=cfg.max_bursts).min(total);
    let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut lens: Vec<usize> = weights.iter().map(|w| ((w / wsum) * total as f64).floor().max(1.0) as usize).collect();
    let assigned: usize = lens.iter().sum();
    if assigned < total {
        lens[0] += total - assigned;
    }
    let free = n_samples.saturating_sub(lens.iter().sum());
    let gaps: Vec<f64> = (0..=count).map(|_| rng.random_range(0.0..1.0)).collect();
    let gsum: f64 = gaps.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mut bursts = Vec::with_capacity(count);
    let mut cursor = 0usize;
    for (i, len) in lens.into_iter().enumerate() {
        cursor += ((gaps[i] / gsum) * free as f64).floor() as usize;
        let start = cursor.min(n_samples.saturating_sub(len));
        let peak = rng.random_range(cfg.min_burst_peak..=1.0);
        bursts.push(Burst { start, len, peak });
        cursor = start + len;
    }
    bursts
}

fn burst_envelope(n_samples: usize, bursts: &[Burst], ramp: f64) -> Vec<f64> {
    let mut env = vec![0.0; n_samples];
    for b in bursts {
        let ramp_len = ((ramp * 0.5) * b.len as f64).round() as usize;
        for k in 0..b.len {
            let pos = b.start + k;
            if pos >= n_samples {
                break;
            }
            let edge = k.min(b.len - 1 - k);
            let shape = if ramp_len == 0 || edge >= ramp_len {
                1.0
            } else {
                0.5 - 0.5 * (PI * (edge as f64 + 0.5) / ramp_len as f64).cos()
            };
            env[pos] = f64::max(env[pos], b.peak * shape);
        }
    }
    let max = env.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        env.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    }
    env
}

fn unit_sequence(n_samples: usize, sample_rate: f64, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let unit_count = cfg.unit_count.min(UNIT_FORMANTS.len());
    let mut units = Vec::with_capacity(n_samples);
    let mut prev = u32::MAX;
    while units.len() < n_samples {
        let dur = rng.random_range(cfg.unit_min_seconds..=cfg.unit_max_seconds);
        let len = ((dur * sample_rate).round() as usize).max(1);
        let mut u = rng.random_range(0..unit_count) as u32;
        if u == prev && unit_count > 1 {
            u = (u + 1) % unit_count as u32;
        }
        prev = u;
        units.extend(std::iter::repeat_n(u, len.min(n_samples - units.len())));
    }
    units
}

/// Synthesizes one utterance. Deterministic in `(emotion, duration, seed, config)`.
pub fn synth_utterance(emotion: Emotion, duration: f64, seed: u64, cfg: &GeneratorConfig) -> Result<Utterance> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(EmsError::invalid(format!("duration must be positive, got {duration}")));
    }
    cfg.validate()?;
    let sr = cfg.sample_rate as f64;
    let n = ((duration * sr).round() as usize).max(1);
    let mut rng = seeded(derive_seed(seed, &[emotion.index() as u64]));
    let profile = cfg.profile(emotion);

    let pitch_scale = 1.0 + rng.random_range(-cfg.speaker_jitter..=cfg.speaker_jitter);
    let amp_scale = 1.0 + rng.random_range(-cfg.speaker_jitter..=cfg.speaker_jitter);
    let syllabic_hz = rng.random_range(3.0..5.0);
    let syllabic_phase = rng.random_range(0.0..2.0 * PI);
    let vibrato_phase = rng.random_range(0.0..2.0 * PI);
    let tilt_offset = if cfg.tilt_jitter > 0.0 { rng.random_range(-cfg.tilt_jitter..=cfg.tilt_jitter) } else { 0.0 };

    let bursts = place_bursts(n, cfg, &mut rng);
    let envelope = burst_envelope(n, &bursts, cfg.burst_ramp);
    let units = unit_sequence(n, sr, cfg, &mut rng);

    let mut samples = Vec::with_capacity(n);
    let mut phase = 0.0_f64;
    let mut weights: Vec<f64> = Vec::new();
    for i in 0..n {
        let t = i as f64 / sr;
        let env = envelope[i];
        let progress = i as f64 / n as f64 - 0.5;
        let mut f0 = profile.pitch_hz * pitch_scale * (1.0 + profile.pitch_slope * progress);
        f0 *= 1.0 + profile.vibrato_depth * (2.0 * PI * profile.vibrato_hz * t + vibrato_phase).sin();
        f0 *= 1.0 + profile.burst_pitch_shift * env;
        if i % CONTROL_BLOCK == 0 {
            let (f1, f2) = UNIT_FORMANTS[units[i] as usize];
            let tilt = (profile.spectral_tilt + tilt_offset - profile.burst_brightness * env).max(0.0);
            let harmonics = ((cfg.max_harmonic_hz / f0).floor() as usize).max(1);
            weights.clear();
            for h in 1..=harmonics {
                let f = h as f64 * f0;
                let resonance = (-0.5 * ((f - f1) / FORMANT_BANDWIDTH).powi(2)).exp()
                    + 0.7 * (-0.5 * ((f - f2) / FORMANT_BANDWIDTH).powi(2)).exp()
                    + 0.05;
                weights.push(resonance * (h as f64).powf(-tilt));
            }
            let norm = (weights.iter().map(|w| w * w).sum::<f64>() * 0.5).sqrt();
            weights.iter_mut().for_each(|w| *w /= norm);
        }
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        // sin(hφ) by the Chebyshev recurrence
        let (s1, c1) = phase.sin_cos();
        let (mut prev, mut cur) = (0.0, s1);
        let mut voiced = 0.0;
        for &w in &weights {
            voiced += w * cur;
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
        }
        let syllabic = 1.0 + cfg.syllabic_depth * (2.0 * PI * syllabic_hz * t + syllabic_phase).sin();
        let amp = profile.amplitude * amp_scale * syllabic * (1.0 + (cfg.burst_gain - 1.0) * env);
        let noise = cfg.noise_level * profile.amplitude * rng.random_range(-1.0..1.0);
        samples.push(amp * voiced + noise);
    }

    let utt = Utterance { samples, sample_rate: cfg.sample_rate, emotion, truth_intensity: envelope, units, seed };
    utt.validate()?;
    Ok(utt)
}

/// Top-level corpus recipe: class-balanced utterances with random durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub utterances_per_emotion: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub generator: GeneratorConfig,
    pub features: FeatureConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            utterances_per_emotion: 150,
            min_duration: 1.0,
            max_duration: 1.4,
            generator: GeneratorConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

/// Generates and featurizes a class-balanced corpus; records are interleaved
/// by emotion and named `utt-00000`, `utt-00001`, ….
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<FeatureSequence>> {
    if cfg.utterances_per_emotion == 0 {
        return Err(EmsError::Config("utterances_per_emotion must be positive".into()));
    }
    if !(cfg.min_duration > 0.0) || cfg.max_duration < cfg.min_duration {
        return Err(EmsError::Config("duration range invalid".into()));
    }
    let total = cfg.utterances_per_emotion * Emotion::COUNT;
    let mut records = Vec::with_capacity(total);
    for i in 0..total {
        let emotion = Emotion::ALL[i % Emotion::COUNT];
        let utt_seed = derive_seed(cfg.seed, &[i as u64]);
        let mut rng = seeded(derive_seed(utt_seed, &[u64::MAX]));
        let duration = if cfg.max_duration > cfg.min_duration {
            rng.random_range(cfg.min_duration..=cfg.max_duration)
        } else {
            cfg.min_duration
        };
        let utt = synth_utterance(emotion, duration, utt_seed, &cfg.generator)?;
        let mut seq = extract_features(&utt, &cfg.features)?;
        seq.utterance_id = format!("utt-{i:05}");
        records.push(seq);
    }
    Ok(records)
}
