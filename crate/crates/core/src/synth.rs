//! Synthetic token-based policy with known ground truth.
//!
//! Each episode draws a latent success level `s` and from it one clean
//! confidence per action dimension. The true success probability is the
//! configured link applied to the clean confidences, and the outcome is a
//! Bernoulli draw from it:
//!
//! - `identity`: `p = mean_d c_d`, so the baseline confidence is calibrated;
//! - `platt(a, b)`: `p = sigmoid(a * mean_d c_d + b)`;
//! - `per_dim([(a_d, b_d)])`: `p = mean_d sigmoid(a_d * c_d + b_d)`. Clean
//!   confidences are placed at `(logit(s) - b_d) / a_d`, so every dimension
//!   is a differently distorted view of the same latent.
//!
//! Per-step confidences follow the temporal profile: a mix of the clean
//! value and an uninformative prior, weighted by how well the policy tracks
//! the truth at that point in the episode. Every instruction variant
//! (including the original) adds independent zero-mean noise. Logits, when
//! requested, are built backwards from the target top probability: the
//! chosen token gets that probability and the remaining mass is spread by a
//! Dirichlet(1) draw, then the log-probabilities are multiplied by
//! `logit_temperature`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recalibrate::sigmoid;
use crate::types::{max_softmax, DimensionStep, EpisodeRecord, TimestepRecord, VariantTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SuccessLink {
    Identity,
    Platt { a: f64, b: f64 },
    PerDim { params: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalProfile {
    /// Every step tracks the clean confidence.
    Flat,
    /// Tracking improves until 50% completion, then degrades somewhat.
    Sharpening,
    /// Tracks well for the first half, then drifts toward the prior.
    LateDegrading,
}

impl TemporalProfile {
    /// Weight on the clean confidence at completion fraction `frac` in [0, 1).
    pub fn tracking_weight(self, frac: f64) -> f64 {
        match self {
            TemporalProfile::Flat => 1.0,
            TemporalProfile::Sharpening if frac < 0.5 => 0.15 + 0.85 * frac / 0.5,
            TemporalProfile::Sharpening => 1.0 - 0.5 * (frac - 0.5) / 0.5,
            TemporalProfile::LateDegrading if frac < 0.5 => 1.0,
            TemporalProfile::LateDegrading => 1.0 - 0.6 * (frac - 0.5) / 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_episodes: usize,
    /// Action dimensions `D`.
    pub dims: usize,
    /// Token vocabulary size `K`.
    pub vocab_size: usize,
    /// Inclusive range of episode lengths.
    pub t_range: (usize, usize),
    pub link: SuccessLink,
    /// Range of the uniform latent success level.
    pub latent_range: (f64, f64),
    /// Per-dimension spread of clean confidences around the latent (one
    /// value, or one per dimension).
    pub dim_jitter_sd: Vec<f64>,
    pub prompt_noise_sd: f64,
    pub n_variants: usize,
    pub temporal_profile: TemporalProfile,
    /// Uninformative confidence that poorly-tracking steps drift toward.
    pub prior_confidence: f64,
    pub step_noise_sd: f64,
    /// Probability that a step is flagged as near an object.
    pub proximity_rate: f64,
    pub emit_logits: bool,
    pub logit_temperature: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_episodes: 1000,
            dims: 7,
            vocab_size: 16,
            t_range: (1, 1),
            link: SuccessLink::Identity,
            latent_range: (0.05, 0.95),
            dim_jitter_sd: vec![0.05],
            prompt_noise_sd: 0.0,
            n_variants: 1,
            temporal_profile: TemporalProfile::Flat,
            prior_confidence: 0.9,
            step_noise_sd: 0.0,
            proximity_rate: 0.0,
            emit_logits: false,
            logit_temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Perfect,
    Overconfident,
    Hetero7,
    Discriminative,
    Sharpening,
}

impl Preset {
    pub const ALL: [Preset; 5] =
        [Preset::Perfect, Preset::Overconfident, Preset::Hetero7, Preset::Discriminative, Preset::Sharpening];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Perfect => "perfect",
            Preset::Overconfident => "overconfident",
            Preset::Hetero7 => "hetero7",
            Preset::Discriminative => "discriminative",
            Preset::Sharpening => "sharpening",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Per-dimension links of the hetero7 preset. Dimension 0 is close to
/// calibrated; dimension 1 is nearly saturated at the clip bounds; the rest
/// are overconfident to different degrees.
pub const HETERO7_LINK: [(f64, f64); 7] =
    [(4.4, -2.2), (0.4, 0.0), (7.6, -5.5), (20.5, -2.8), (26.0, -9.9), (8.1, -8.1), (16.0, -8.9)];

/// Per-dimension spread of clean confidences in the hetero7 preset.
pub const HETERO7_JITTER: [f64; 7] = [0.02, 0.1, 0.03, 0.1, 0.09, 0.04, 0.03];

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<SynthConfig> {
    Ok(preset_config(name.parse()?))
}

pub fn preset_config(p: Preset) -> SynthConfig {
    let base = SynthConfig::default();
    match p {
        // calibrated by construction, single pre-action step
        Preset::Perfect => base,
        // confidence sits well above the success probability
        Preset::Overconfident => SynthConfig {
            link: SuccessLink::Platt { a: 4.0, b: -3.0 },
            latent_range: (0.5, 0.99),
            ..base
        },
        Preset::Hetero7 => SynthConfig {
            n_episodes: 10_000,
            link: SuccessLink::PerDim { params: HETERO7_LINK.to_vec() },
            latent_range: (0.03, 0.82),
            dim_jitter_sd: HETERO7_JITTER.to_vec(),
            emit_logits: true,
            ..base
        },
        Preset::Discriminative => SynthConfig {
            n_episodes: 500,
            t_range: (20, 60),
            step_noise_sd: 0.08,
            proximity_rate: 0.3,
            ..base
        },
        Preset::Sharpening => SynthConfig {
            n_episodes: 500,
            t_range: (40, 120),
            temporal_profile: TemporalProfile::Sharpening,
            step_noise_sd: 0.03,
            proximity_rate: 0.3,
            ..base
        },
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.n_episodes == 0 {
            return bad("n_episodes must be positive");
        }
        if self.dims == 0 {
            return bad("dims must be positive");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if self.t_range.0 == 0 || self.t_range.0 > self.t_range.1 {
            return bad("t_range must satisfy 1 <= min <= max");
        }
        let (lo, hi) = self.latent_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad("latent_range must lie inside (0, 1)");
        }
        if self.dim_jitter_sd.is_empty()
            || (self.dim_jitter_sd.len() != 1 && self.dim_jitter_sd.len() != self.dims)
            || self.dim_jitter_sd.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return bad("dim_jitter_sd needs 1 or D non-negative values");
        }
        if let SuccessLink::PerDim { params } = &self.link {
            if params.len() != self.dims {
                return bad("per_dim link needs one (a, b) pair per dimension");
            }
            if params.iter().any(|(a, b)| !(a.is_finite() && b.is_finite()) || *a == 0.0) {
                return bad("per_dim link parameters must be finite with a != 0");
            }
        }
        if let SuccessLink::Platt { a, b } = self.link {
            if !(a.is_finite() && b.is_finite()) {
                return bad("platt link parameters must be finite");
            }
        }
        for (name, v) in [("prompt_noise_sd", self.prompt_noise_sd), ("step_noise_sd", self.step_noise_sd)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::BadConfig(format!("{name} must be non-negative")));
            }
        }
        if self.n_variants == 0 {
            return bad("n_variants must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.prior_confidence) {
            return bad("prior_confidence must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.proximity_rate) {
            return bad("proximity_rate must be in [0, 1]");
        }
        if !(self.logit_temperature > 0.0 && self.logit_temperature.is_finite()) {
            return bad("logit_temperature must be positive");
        }
        Ok(())
    }

    /// Confidences are kept inside `[1/K + 1e-3, 1 - 1e-6]` so that a
    /// consistent logit vector with the chosen token on top always exists.
    pub fn confidence_bounds(&self) -> (f64, f64) {
        (1.0 / self.vocab_size as f64 + 1e-3, 1.0 - 1e-6)
    }

    fn jitter(&self, d: usize) -> f64 {
        if self.dim_jitter_sd.len() == 1 {
            self.dim_jitter_sd[0]
        } else {
            self.dim_jitter_sd[d]
        }
    }
}

/// Latent quantities behind one generated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTruth {
    pub episode_id: String,
    pub latent: f64,
    pub success_probability: f64,
    /// Clean per-dimension confidences before temporal and prompt effects.
    pub clean_dims: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub episodes: Vec<EpisodeTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub episodes: Vec<EpisodeRecord>,
    pub truth: GroundTruth,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logits whose softmax puts `top` on `chosen` and is strictly smaller
/// elsewhere. Requires `top > 1/K`.
fn logits_for<R: Rng>(top: f64, chosen: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let rest = 1.0 - top;
    let weights: Vec<f64> = (0..k - 1).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = weights.iter().sum();
    let uniform = 1.0 / (k - 1) as f64;
    let w_max = weights.iter().copied().fold(0.0, f64::max) / total;
    // Mix toward uniform just enough to keep every other token below `top`.
    let cap = top * (1.0 - 1e-9);
    let lambda = if rest * w_max < cap { 1.0 } else { ((cap / rest - uniform) / (w_max - uniform)).clamp(0.0, 1.0) };
    let mut others = weights.iter().map(|w| rest * (lambda * w / total + (1.0 - lambda) * uniform));
    (0..k).map(|i| if i == chosen { top.ln() } else { others.next().unwrap().ln() }).collect()
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    lo: f64,
    hi: f64,
}

impl Generator<'_> {
    fn clip(&self, c: f64) -> f64 {
        c.clamp(self.lo, self.hi)
    }

    fn normal(&mut self, sd: f64) -> f64 {
        if sd == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sd).unwrap().sample(&mut self.rng)
        }
    }

    fn clean_dims(&mut self, latent: f64) -> Vec<f64> {
        (0..self.cfg.dims)
            .map(|d| {
                let center = match &self.cfg.link {
                    SuccessLink::PerDim { params } => {
                        let (a, b) = params[d];
                        (logit(latent) - b) / a
                    }
                    _ => latent,
                };
                let jitter = self.normal(self.cfg.jitter(d));
                self.clip(center + jitter)
            })
            .collect()
    }

    fn success_probability(&self, clean: &[f64]) -> f64 {
        let mean = clean.iter().sum::<f64>() / clean.len() as f64;
        match &self.cfg.link {
            SuccessLink::Identity => mean,
            SuccessLink::Platt { a, b } => sigmoid(a * mean + b),
            SuccessLink::PerDim { params } => {
                clean.iter().zip(params).map(|(c, (a, b))| sigmoid(a * c + b)).sum::<f64>() / clean.len() as f64
            }
        }
    }

    fn dimension(&mut self, target: f64) -> DimensionStep {
        if !self.cfg.emit_logits {
            return DimensionStep { top_prob: target, logits: None, chosen_token: None };
        }
        let k = self.cfg.vocab_size;
        let chosen = self.rng.random_range(0..k);
        let mut logits = logits_for(target, chosen, k, &mut self.rng);
        if self.cfg.logit_temperature != 1.0 {
            logits.iter_mut().for_each(|z| *z *= self.cfg.logit_temperature);
        }
        let top_prob = max_softmax(&logits, 1.0);
        DimensionStep { top_prob, logits: Some(logits), chosen_token: Some(chosen) }
    }

    fn episode(&mut self, index: usize) -> Result<(EpisodeRecord, EpisodeTruth)> {
        let cfg = self.cfg;
        let horizon = self.rng.random_range(cfg.t_range.0..=cfg.t_range.1);
        let latent = self.rng.random_range(cfg.latent_range.0..=cfg.latent_range.1);
        let clean = self.clean_dims(latent);
        let p = self.success_probability(&clean);
        let outcome = self.rng.random::<f64>() < p;

        // per-step confidences shared by every variant before prompt noise
        let mut tracked: Vec<Vec<f64>> = Vec::with_capacity(horizon);
        let mut proximity = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let w = cfg.temporal_profile.tracking_weight(t as f64 / horizon as f64);
            let row = clean
                .iter()
                .map(|&c| {
                    let noise = self.normal(cfg.step_noise_sd);
                    self.clip(w * c + (1.0 - w) * cfg.prior_confidence + noise)
                })
                .collect();
            tracked.push(row);
            proximity.push(self.rng.random::<f64>() < cfg.proximity_rate);
        }

        let mut variants = Vec::with_capacity(cfg.n_variants);
        for v in 0..cfg.n_variants {
            let steps = tracked
                .iter()
                .zip(&proximity)
                .enumerate()
                .map(|(t, (row, &near))| {
                    let dims = row
                        .iter()
                        .map(|&c| {
                            let noise = self.normal(cfg.prompt_noise_sd);
                            let target = self.clip(c + noise);
                            self.dimension(target)
                        })
                        .collect();
                    TimestepRecord { t: t + 1, dims, proximity: near }
                })
                .collect();
            let instruction_text =
                if v == 0 { "original instruction".to_string() } else { format!("paraphrase {v}") };
            variants.push(VariantTrajectory { variant_id: v as u32, instruction_text, steps });
        }
        let episode_id = format!("ep{index:06}");
        let record = EpisodeRecord {
            episode_id: episode_id.clone(),
            task_id: format!("task{}", index % 10),
            outcome,
            variants,
        };
        let truth = EpisodeTruth { episode_id, latent, success_probability: p, clean_dims: clean, horizon };
        Ok((record, truth))
    }
}

/// Generates `config.n_episodes` episodes from one seeded stream.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let (lo, hi) = config.confidence_bounds();
    let mut gen = Generator { cfg: config, rng: ChaCha8Rng::seed_from_u64(config.seed), lo, hi };
    let mut episodes = Vec::with_capacity(config.n_episodes);
    let mut truths = Vec::with_capacity(config.n_episodes);
    for i in 0..config.n_episodes {
        let (ep, truth) = gen.episode(i)?;
        episodes.push(ep);
        truths.push(truth);
    }
    Ok(SynthOutput { episodes, truth: GroundTruth { config: config.clone(), episodes: truths } })
}
