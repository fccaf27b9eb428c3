//! Flat `key = value` run configuration with dotted sections.
//!
//! Resolution order: built-in defaults, then the config file, then flags.
//! The resolved config is written into every output directory and parses
//! back to the same values.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use cooccur_core::discovery::RowLayout;
use cooccur_core::eval::{AblationAxis, CoverMode};
use cooccur_core::scenario::{Orthogonalize, ScenarioConfig};
use cooccur_core::training::TrainConfig;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub samples: usize,
    pub n: usize,
    pub d: usize,
    pub concepts: usize,
    pub group_size: usize,
    pub hidden: usize,
    pub groups: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            samples: 64,
            n: 4,
            d: 6,
            concepts: 4,
            group_size: 3,
            hidden: 8,
            groups: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; split into scenario, train and eval streams.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub eval_mode: CoverMode,
    /// Defaults to the trained head's group size.
    pub eval_group_size: Option<usize>,
    pub min_freq: usize,
    pub gradcheck: GradCheckConfig,
    pub ablate_axis: AblationAxis,
    pub ablate_values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            eval_mode: CoverMode::Index,
            eval_group_size: None,
            min_freq: 1,
            gradcheck: GradCheckConfig::default(),
            ablate_axis: AblationAxis::TextGuidance,
            ablate_values: vec!["true".into(), "false".into()],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, UsageError> {
    value
        .parse()
        .map_err(|_| UsageError(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, UsageError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(UsageError(format!(
            "bad value `{value}` for `{key}`, expected true or false"
        ))),
    }
}

fn layout_name(l: RowLayout) -> &'static str {
    match l {
        RowLayout::Raw => "raw",
        RowLayout::SortedBlocks => "sorted_blocks",
    }
}

fn ortho_name(o: Orthogonalize) -> &'static str {
    match o {
        Orthogonalize::Auto => "auto",
        Orthogonalize::Always => "always",
        Orthogonalize::Never => "never",
    }
}

fn axis_name(a: AblationAxis) -> &'static str {
    match a {
        AblationAxis::TextGuidance => "text_guidance",
        AblationAxis::GroupSize => "group_size",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let v = value.trim();
        let s = &mut self.scenario;
        let t = &mut self.train;
        let g = &mut self.gradcheck;
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "scenario.num_concepts" => s.num_concepts = parse(key, v)?,
            "scenario.d" => s.d = parse(key, v)?,
            "scenario.n" => s.n = parse(key, v)?,
            "scenario.images_per_concept" => s.images_per_concept = parse(key, v)?,
            "scenario.distractor_count" => s.distractor_count = parse(key, v)?,
            "scenario.noise_sigma" => s.noise_sigma = parse(key, v)?,
            "scenario.multi_concept_rate" => s.multi_concept_rate = parse(key, v)?,
            "scenario.companion_affinity" => s.companion_affinity = parse(key, v)?,
            "scenario.instances_min" => s.instances_per_image.0 = parse(key, v)?,
            "scenario.instances_max" => s.instances_per_image.1 = parse(key, v)?,
            "scenario.orthogonalize" => {
                s.orthogonalize = match v {
                    "auto" => Orthogonalize::Auto,
                    "always" => Orthogonalize::Always,
                    "never" => Orthogonalize::Never,
                    _ => {
                        return Err(UsageError(format!(
                            "bad value `{v}` for `{key}`, expected auto, always or never"
                        )))
                    }
                }
            }
            "scenario.misaligned_text_deg" => s.misaligned_text_deg = parse(key, v)?,
            "scenario.max_size_bias" => s.max_size_bias = parse(key, v)?,
            "scenario.boxes" => s.boxes = parse_bool(key, v)?,
            "train.group_size" => t.group_size = parse(key, v)?,
            "train.mini_groups_per_batch" => t.mini_groups_per_batch = parse(key, v)?,
            "train.steps" => t.steps = parse(key, v)?,
            "train.learning_rate" => t.learning_rate = parse(key, v)?,
            "train.momentum" => t.momentum = parse(key, v)?,
            "train.lambda_region_word" => t.lambda_region_word = parse(key, v)?,
            "train.lambda_image_text" => t.lambda_image_text = parse(key, v)?,
            "train.hidden" => t.hidden = parse(key, v)?,
            "train.layout" => {
                t.layout = match v {
                    "raw" => RowLayout::Raw,
                    "sorted_blocks" => RowLayout::SortedBlocks,
                    _ => {
                        return Err(UsageError(format!(
                            "bad value `{v}` for `{key}`, expected raw or sorted_blocks"
                        )))
                    }
                }
            }
            "train.text_guidance" => t.text_guidance = parse_bool(key, v)?,
            "train.temperature" => t.temperature = parse(key, v)?,
            "train.train_head" => t.train_head = parse_bool(key, v)?,
            "train.train_features" => t.train_features = parse_bool(key, v)?,
            "train.eval_interval" => t.eval_interval = parse(key, v)?,
            "eval.mode" => {
                self.eval_mode = match v {
                    "index" => CoverMode::Index,
                    "box" => CoverMode::Box,
                    _ => {
                        return Err(UsageError(format!(
                            "bad value `{v}` for `{key}`, expected index or box"
                        )))
                    }
                }
            }
            "eval.group_size" => {
                self.eval_group_size = if v == "auto" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "index.min_freq" => self.min_freq = parse(key, v)?,
            "gradcheck.eps" => g.eps = parse(key, v)?,
            "gradcheck.samples" => g.samples = parse(key, v)?,
            "gradcheck.n" => g.n = parse(key, v)?,
            "gradcheck.d" => g.d = parse(key, v)?,
            "gradcheck.concepts" => g.concepts = parse(key, v)?,
            "gradcheck.group_size" => g.group_size = parse(key, v)?,
            "gradcheck.hidden" => g.hidden = parse(key, v)?,
            "gradcheck.groups" => g.groups = parse(key, v)?,
            "ablate.axis" => {
                self.ablate_axis = match v {
                    "text_guidance" => AblationAxis::TextGuidance,
                    "group_size" => AblationAxis::GroupSize,
                    _ => {
                        return Err(UsageError(format!(
                            "bad value `{v}` for `{key}`, expected text_guidance or group_size"
                        )))
                    }
                }
            }
            "ablate.values" => {
                self.ablate_values = v
                    .split(',')
                    .map(|x| x.trim().to_string())
                    .filter(|x| !x.is_empty())
                    .collect()
            }
            other => return Err(UsageError(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), UsageError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                UsageError(format!(
                    "{}:{}: expected `key = value`",
                    origin.display(),
                    i + 1
                ))
            })?;
            self.set(key, value)
                .map_err(|e| UsageError(format!("{}:{}: {}", origin.display(), i + 1, e.0)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), UsageError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| UsageError(format!("override `{assignment}` is not key=value")))?;
        self.set(key, value)
    }

    /// Pushes the master seed into every stream and validates.
    pub fn resolve(mut self) -> Result<Self, UsageError> {
        self.scenario.seed = self.seed;
        self.train.seed = self.seed;
        self.train.eval_seed = self.seed;
        self.scenario
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        if self.min_freq == 0 {
            return Err(UsageError("index.min_freq must be at least 1".into()));
        }
        if self.eval_group_size.is_some_and(|g| g < 2) {
            return Err(UsageError("eval.group_size must be at least 2".into()));
        }
        if self.eval_mode == CoverMode::Box && !self.scenario.boxes {
            return Err(UsageError(
                "eval.mode = box needs scenario.boxes = true".into(),
            ));
        }
        let g = &self.gradcheck;
        if g.eps.is_nan()
            || g.eps <= 0.0
            || g.samples == 0
            || g.groups == 0
            || g.group_size < 2
            || g.hidden == 0
            || g.n < 2
        {
            return Err(UsageError("gradcheck settings need eps > 0, samples, groups, hidden >= 1, group_size >= 2, n >= 2".into()));
        }
        if g.concepts < 2 || g.d == 0 {
            return Err(UsageError(
                "gradcheck.concepts must be at least 2 and gradcheck.d at least 1".into(),
            ));
        }
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let t = &self.train;
        let g = &self.gradcheck;
        let mode = match self.eval_mode {
            CoverMode::Index => "index",
            CoverMode::Box => "box",
        };
        let eval_group = self
            .eval_group_size
            .map_or("auto".to_string(), |v| v.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("scenario.num_concepts", s.num_concepts.to_string()),
            ("scenario.d", s.d.to_string()),
            ("scenario.n", s.n.to_string()),
            (
                "scenario.images_per_concept",
                s.images_per_concept.to_string(),
            ),
            ("scenario.distractor_count", s.distractor_count.to_string()),
            ("scenario.noise_sigma", s.noise_sigma.to_string()),
            (
                "scenario.multi_concept_rate",
                s.multi_concept_rate.to_string(),
            ),
            (
                "scenario.companion_affinity",
                s.companion_affinity.to_string(),
            ),
            (
                "scenario.instances_min",
                s.instances_per_image.0.to_string(),
            ),
            (
                "scenario.instances_max",
                s.instances_per_image.1.to_string(),
            ),
            (
                "scenario.orthogonalize",
                ortho_name(s.orthogonalize).to_string(),
            ),
            (
                "scenario.misaligned_text_deg",
                s.misaligned_text_deg.to_string(),
            ),
            ("scenario.max_size_bias", s.max_size_bias.to_string()),
            ("scenario.boxes", s.boxes.to_string()),
            ("train.group_size", t.group_size.to_string()),
            (
                "train.mini_groups_per_batch",
                t.mini_groups_per_batch.to_string(),
            ),
            ("train.steps", t.steps.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.momentum", t.momentum.to_string()),
            ("train.lambda_region_word", t.lambda_region_word.to_string()),
            ("train.lambda_image_text", t.lambda_image_text.to_string()),
            ("train.hidden", t.hidden.to_string()),
            ("train.layout", layout_name(t.layout).to_string()),
            ("train.text_guidance", t.text_guidance.to_string()),
            ("train.temperature", t.temperature.to_string()),
            ("train.train_head", t.train_head.to_string()),
            ("train.train_features", t.train_features.to_string()),
            ("train.eval_interval", t.eval_interval.to_string()),
            ("eval.mode", mode.to_string()),
            ("eval.group_size", eval_group),
            ("index.min_freq", self.min_freq.to_string()),
            ("gradcheck.eps", g.eps.to_string()),
            ("gradcheck.samples", g.samples.to_string()),
            ("gradcheck.n", g.n.to_string()),
            ("gradcheck.d", g.d.to_string()),
            ("gradcheck.concepts", g.concepts.to_string()),
            ("gradcheck.group_size", g.group_size.to_string()),
            ("gradcheck.hidden", g.hidden.to_string()),
            ("gradcheck.groups", g.groups.to_string()),
            ("ablate.axis", axis_name(self.ablate_axis).to_string()),
            ("ablate.values", self.ablate_values.join(",")),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "9").unwrap();
        cfg.set("train.learning_rate", "0.003").unwrap();
        cfg.set("scenario.noise_sigma", "0.1").unwrap();
        cfg.set("train.layout", "sorted_blocks").unwrap();
        cfg.set("ablate.values", "2, 4,8").unwrap();
        let cfg = cfg.resolve().unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("resolved"))
            .unwrap();
        assert_eq!(back.resolve().unwrap(), cfg);
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = RunConfig::default()
            .apply_text("# c\n\ntrain.nope = 3\n", Path::new("run.conf"))
            .unwrap_err();
        assert!(err.0.contains("run.conf:3"), "{}", err.0);
    }

    #[test]
    fn seed_reaches_every_stream() {
        let cfg = RunConfig {
            seed: 42,
            ..RunConfig::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(
            (cfg.scenario.seed, cfg.train.seed, cfg.train.eval_seed),
            (42, 42, 42)
        );
    }

    #[test]
    fn invalid_settings_rejected() {
        let mut cfg = RunConfig::default();
        cfg.set("train.group_size", "1").unwrap();
        assert!(cfg.resolve().is_err());
        assert!(RunConfig::default()
            .set("train.text_guidance", "maybe")
            .is_err());
    }
}
