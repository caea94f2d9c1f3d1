//! Run configuration: one JSON document describing an edit, validated before
//! any compute starts.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::denoiser::TokenSequence;
use crate::irjs::IrjsConfig;
use crate::metrics::{self, ObjectSpec, Relation, RelationSpec};
use crate::pipeline::EditConfig;
use crate::rad::RadConfig;
use crate::regions::BoxTrack;
use crate::scheduler::{self, NoiseSchedule};
use crate::{Error, Result};

/// A spatial-relation check phrased with palette color words.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationCheck {
    pub subject_color: String,
    pub relation: Relation,
    pub reference_color: String,
}

fn default_tolerance() -> f64 {
    0.15
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MetricsConfig {
    /// Relation to score; omitted means no relation scoring.
    pub relation: Option<RelationCheck>,
    #[serde(default = "default_tolerance")]
    pub color_tolerance: f64,
}

fn default_sample_steps() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Schedule document path; the built-in training schedule when omitted.
    pub schedule: Option<PathBuf>,
    /// Checkpoint stem (`<stem>.bin` + `<stem>.json`).
    pub checkpoint: PathBuf,
    /// Directory of source `frame_%04d.png` files.
    pub source_frames: PathBuf,
    /// Box-track document path; optional for plain reconstruction.
    pub tracks: Option<PathBuf>,
    pub source_prompt: Vec<String>,
    pub edited_prompt: Vec<String>,
    #[serde(default)]
    pub rad: Option<RadConfig>,
    #[serde(default)]
    pub irjs: IrjsConfig,
    #[serde(default = "default_sample_steps")]
    pub sample_steps: usize,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks that need no file access or compute.
    pub fn validate(&self) -> Result<()> {
        let refs: Vec<&str> = self.source_prompt.iter().map(|s| s.as_str()).collect();
        TokenSequence::from_words(&refs)?;
        let refs: Vec<&str> = self.edited_prompt.iter().map(|s| s.as_str()).collect();
        let edited = TokenSequence::from_words(&refs)?;
        if let Some(rc) = &self.rad {
            rc.validate(edited.len())?;
            if self.tracks.is_none() {
                return Err(Error::Config("guidance requires a tracks document".into()));
            }
        }
        if self.sample_steps == 0 {
            return Err(Error::Config("sample_steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config("eta must lie in [0,1]".into()));
        }
        if let Some(check) = &self.metrics.relation {
            for word in [&check.subject_color, &check.reference_color] {
                if metrics::color_of_word(word).is_none() {
                    return Err(Error::Config(format!("unknown palette color {word:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn load_schedule(&self) -> Result<NoiseSchedule> {
        match &self.schedule {
            Some(p) => NoiseSchedule::from_json(&fs::read_to_string(p)?),
            None => Ok(scheduler::default_train_schedule()),
        }
    }

    pub fn load_tracks(&self) -> Result<Vec<BoxTrack>> {
        match &self.tracks {
            None => Ok(Vec::new()),
            Some(p) => {
                let tracks: Vec<BoxTrack> = serde_json::from_str(&fs::read_to_string(p)?)?;
                for t in &tracks {
                    t.validate()?;
                }
                Ok(tracks)
            }
        }
    }

    /// Assemble the pipeline config, applying CLI overrides.
    pub fn edit_config(&self, overrides: &Overrides) -> Result<EditConfig> {
        Ok(EditConfig {
            source_prompt: self.source_prompt.clone(),
            edited_prompt: self.edited_prompt.clone(),
            tracks: self.load_tracks()?,
            rad: if overrides.no_rad { None } else { self.rad.clone() },
            irjs: if overrides.no_irjs {
                IrjsConfig {
                    enabled: false,
                    ..self.irjs.clone()
                }
            } else {
                self.irjs.clone()
            },
            sample_steps: self.sample_steps,
            eta: self.eta,
            seed: overrides.seed.unwrap_or(self.seed),
            window: overrides.window.or(self.window),
            stride: overrides.stride.or(self.stride),
            attention_dir: overrides.attention_dir.clone(),
        })
    }

    pub fn relation_spec(&self) -> Option<RelationSpec> {
        self.metrics.relation.as_ref().map(|c| RelationSpec {
            subject: ObjectSpec {
                rgb: metrics::color_of_word(&c.subject_color).expect("validated"),
                tolerance: self.metrics.color_tolerance,
            },
            relation: c.relation,
            reference: ObjectSpec {
                rgb: metrics::color_of_word(&c.reference_color).expect("validated"),
                tolerance: self.metrics.color_tolerance,
            },
        })
    }
}

/// Command-line overrides layered on top of the config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub no_rad: bool,
    pub no_irjs: bool,
    pub attention_dir: Option<PathBuf>,
}
