//! Synthetic emotional-speech corpus: generation, log-mel features,
//! on-disk storage, and stratified splits.

mod features;
mod generator;
mod split;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{EmsError, Result};

pub use features::{extract_features, mel_filterbank, FeatureConfig};
pub use generator::{generate_corpus, synth_utterance, CorpusConfig, EmotionProfile, GeneratorConfig};
pub use split::{split_corpus, split_indices, SplitCorpus, SplitIndices};
pub use store::{read_corpus, write_corpus, Manifest, ManifestRecord, FEAT_MAGIC, FEAT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happy,
    Sad,
    Angry,
}

impl Emotion {
    pub const ALL: [Emotion; 4] = [Emotion::Neutral, Emotion::Happy, Emotion::Sad, Emotion::Angry];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = EmsError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| EmsError::invalid(format!("unknown emotion label {s:?}")))
    }
}

/// A generated waveform with its ground-truth intensity envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub emotion: Emotion,
    /// One value per sample, in [0, 1].
    pub truth_intensity: Vec<f64>,
    /// Phone-like unit active at each sample.
    pub units: Vec<u32>,
    pub seed: u64,
}

impl Utterance {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(EmsError::invalid("utterance has no samples"));
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Err(EmsError::NonFinite("utterance samples".into()));
        }
        if self.truth_intensity.len() != self.samples.len() || self.units.len() != self.samples.len() {
            return Err(EmsError::dims("per-sample tracks must match the waveform length"));
        }
        if self.truth_intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EmsError::invalid("truth intensity outside [0, 1]"));
        }
        Ok(())
    }
}

/// Log-mel frames (`T×d`, one frame per row) with aligned labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: Mat,
    pub frame_rate: f64,
    pub truth_frame_intensity: Vec<f64>,
    pub frame_units: Vec<u32>,
    pub emotion: Emotion,
    pub utterance_id: String,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t == 0 || self.dim() == 0 {
            return Err(EmsError::invalid(format!("{}: empty feature matrix", self.utterance_id)));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(EmsError::NonFinite(format!("{}: frames", self.utterance_id)));
        }
        if self.truth_frame_intensity.len() != t || self.frame_units.len() != t {
            return Err(EmsError::dims(format!("{}: frame tracks must have length T={t}", self.utterance_id)));
        }
        if self.truth_frame_intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EmsError::invalid(format!("{}: truth intensity outside [0, 1]", self.utterance_id)));
        }
        Ok(())
    }
}
