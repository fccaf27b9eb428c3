use serde::{Deserialize, Serialize};

use super::{evaluate, CoverMode, EvalOptions, Strategy};
use crate::corpus::ConceptGroupIndex;
use crate::scenario::Scenario;
use crate::training::{run_training, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    TextGuidance,
    GroupSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub text_guidance: bool,
    pub group_size: usize,
    pub cover_rate: f64,
}

fn axes_differing(a: &TrainConfig, b: &TrainConfig) -> Vec<AblationAxis> {
    let mut out = Vec::new();
    if a.text_guidance != b.text_guidance {
        out.push(AblationAxis::TextGuidance);
    }
    if a.group_size != b.group_size {
        out.push(AblationAxis::GroupSize);
    }
    out
}

/// Trains every config from the same seed and reports region-region cover
/// rates. All configs must match the first except along one shared axis,
/// so the comparison isolates that axis.
pub fn ablate(
    scenario: &Scenario,
    index: &ConceptGroupIndex,
    configs: &[TrainConfig],
    mode: CoverMode,
) -> Result<(AblationAxis, Vec<AblationRow>)> {
    let base = configs
        .first()
        .ok_or_else(|| Error::Config("ablation needs at least two configs".into()))?;
    if configs.len() < 2 {
        return Err(Error::Config("ablation needs at least two configs".into()));
    }
    let mut axis = None;
    for c in &configs[1..] {
        let mut aligned = c.clone();
        aligned.text_guidance = base.text_guidance;
        aligned.group_size = base.group_size;
        aligned.eval_interval = base.eval_interval;
        if aligned != *base {
            return Err(Error::Config(
                "ablation configs differ outside the ablated axis".into(),
            ));
        }
        match axes_differing(base, c).as_slice() {
            [] => {}
            [a] if axis.is_none_or(|x| x == *a) => axis = Some(*a),
            _ => {
                return Err(Error::Config(
                    "ablation configs must differ in exactly one axis".into(),
                ))
            }
        }
    }
    let axis = axis.ok_or_else(|| Error::Config("ablation configs are identical".into()))?;

    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let mut quiet = c.clone();
        quiet.eval_interval = 0;
        let outcome = run_training(scenario, index, &quiet)?;
        let options = EvalOptions {
            group_size: c.group_size,
            seed: c.eval_seed,
            mode,
        };
        rows.push(AblationRow {
            text_guidance: c.text_guidance,
            group_size: c.group_size,
            cover_rate: evaluate(
                &outcome.state,
                scenario,
                index,
                &options,
                Strategy::RegionRegion,
            )?,
        });
    }
    Ok((axis, rows))
}
