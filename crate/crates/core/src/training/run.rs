use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::{caption_batch_loss, LossWeights};
use super::optim::Sgd;
use super::state::{caption_embeddings, ModelState, TrainConfig};
use crate::corpus::{sample_mini_group, ConceptGroupIndex};
use crate::eval::{evaluate, CoverMode, EvalOptions, Strategy};
use crate::scenario::Scenario;
use crate::seeds::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based.
    pub step: usize,
    pub total_loss: f64,
    pub region_word_loss: f64,
    pub image_text_loss: f64,
    pub cover_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub metrics: Vec<StepMetrics>,
}

pub fn run_training(
    scenario: &Scenario,
    index: &ConceptGroupIndex,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    run_training_with(scenario, index, config, |_| {})
}

/// Trains from a fresh state. Each step draws `mini_groups_per_batch`
/// concepts uniformly from the index (with replacement) and one mini-group
/// per concept. Cover rate is measured every `eval_interval` steps and after
/// the last step.
pub fn run_training_with<F: FnMut(&StepMetrics)>(
    scenario: &Scenario,
    index: &ConceptGroupIndex,
    config: &TrainConfig,
    mut on_step: F,
) -> Result<TrainOutcome> {
    config.validate()?;
    let concepts: Vec<_> = index.concepts().collect();
    if concepts.is_empty() {
        return Err(Error::Empty("concept index has no groups".into()));
    }
    let mut rng = seeds::rng_for(config.seed, Stream::Train);
    let mut state = ModelState::init(scenario, index, config, &mut rng)?;
    let captions = caption_embeddings(&scenario.records, &scenario.text)?;
    let weights = LossWeights {
        region_word: config.lambda_region_word,
        image_text: config.lambda_image_text,
    };
    let eval = EvalOptions {
        group_size: config.group_size,
        seed: config.eval_seed,
        mode: CoverMode::Index,
    };
    let mut sgd = Sgd::new(config.learning_rate, config.momentum);
    let mut metrics = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let groups = (0..config.mini_groups_per_batch)
            .map(|_| {
                let c = concepts[rng.random_range(0..concepts.len())];
                sample_mini_group(index, c, config.group_size, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = caption_batch_loss(&state, &groups, &captions, weights)?;
        sgd.step(&mut state, &batch.grads)?;
        let due =
            config.eval_interval > 0 && (step % config.eval_interval == 0 || step == config.steps);
        let cover_rate = if due {
            Some(evaluate(
                &state,
                scenario,
                index,
                &eval,
                Strategy::RegionRegion,
            )?)
        } else {
            None
        };
        let m = StepMetrics {
            step,
            total_loss: batch.total,
            region_word_loss: batch.region_word,
            image_text_loss: batch.image_text,
            cover_rate,
        };
        on_step(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome { state, metrics })
}

pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = String::from("step,total_loss,region_word_loss,image_text_loss,cover_rate\n");
    for m in metrics {
        let cover = m.cover_rate.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{cover}",
            m.step, m.total_loss, m.region_word_loss, m.image_text_loss
        );
    }
    out
}
