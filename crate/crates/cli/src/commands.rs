use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

use cooccur_core::corpus::{
    build_concept_index, parse_corpus, sample_mini_group, ConceptGroupIndex, CorpusFormat, Lexicon,
};
use cooccur_core::eval::{self, AblationAxis, EvalOptions};
use cooccur_core::scenario::codec::{encode_features, encode_text_embeddings};
use cooccur_core::scenario::{Scenario, ScenarioConfig};
use cooccur_core::seeds::{self, Stream};
use cooccur_core::training::checkpoint::{encode_checkpoint, load_checkpoint};
use cooccur_core::training::{
    caption_embeddings, finite_diff_check, metrics_csv, run_training_with, LossWeights, ModelState,
    ParamGroup, TrainConfig,
};

use crate::config::RunConfig;
use crate::UsageError;

const GRAD_TOLERANCE: f64 = 1e-4;

fn unreadable(path: &Path, e: std::io::Error) -> anyhow::Error {
    UsageError(format!("cannot read {}: {e}", path.display())).into()
}

pub fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| unreadable(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| unreadable(path, e))
}

/// Outputs are written under temporary names and renamed together once
/// everything has been produced.
struct Staged {
    dir: PathBuf,
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn add(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        self.files.push((tmp, self.dir.join(name)));
        Ok(())
    }

    fn commit(self, cfg: &RunConfig) -> Result<()> {
        let mut this = self;
        this.add("config.txt", cfg.to_text())?;
        for (tmp, dest) in &this.files {
            fs::rename(tmp, dest)
                .with_context(|| format!("renaming {} to {}", tmp.display(), dest.display()))?;
        }
        this.files.clear();
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        for (tmp, _) in &self.files {
            let _ = fs::remove_file(tmp);
        }
    }
}

fn world(cfg: &RunConfig) -> Result<(Scenario, ConceptGroupIndex)> {
    let scenario = Scenario::generate(&cfg.scenario)?;
    let mut records = scenario.records.clone();
    let index = build_concept_index(&mut records, &scenario.lexicon, cfg.min_freq)?;
    Ok((scenario, index))
}

fn init_state(
    cfg: &RunConfig,
    scenario: &Scenario,
    index: &ConceptGroupIndex,
    train: &TrainConfig,
) -> Result<ModelState> {
    Ok(ModelState::init(
        scenario,
        index,
        train,
        &mut seeds::rng_for(cfg.seed, Stream::Train),
    )?)
}

pub fn build_index(cfg: &RunConfig, corpus: &Path, lexicon: &Path, out: &Path) -> Result<()> {
    let corpus_text = read_input(corpus)?;
    let lexicon_text = read_input(lexicon)?;
    let mut records = parse_corpus(corpus_text.as_bytes(), CorpusFormat::Tsv)
        .with_context(|| format!("parsing {}", corpus.display()))?;
    let lexicon = Lexicon::parse(lexicon_text.as_bytes())
        .with_context(|| format!("parsing {}", lexicon.display()))?;
    let index = build_concept_index(&mut records, &lexicon, cfg.min_freq)?;
    let mut staged = Staged::new(out)?;
    staged.add("index.tsv", index.to_text())?;
    staged.commit(cfg)?;
    println!(
        "retained {} concepts from {} captions (min_freq {})",
        index.len(),
        records.len(),
        cfg.min_freq
    );
    Ok(())
}

pub fn gen_synthetic(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (scenario, index) = world(cfg)?;
    let mut truth = String::from("image_id\tregion\tconcept\n");
    for image in scenario.truth.images() {
        for (region, concept) in scenario.truth.pairs(image) {
            let _ = writeln!(truth, "{image}\t{region}\t{}", concept.0);
        }
    }
    let mut staged = Staged::new(out)?;
    staged.add("corpus.tsv", scenario.corpus_text())?;
    staged.add("lexicon.txt", scenario.lexicon.to_text())?;
    staged.add("features.codf", encode_features(&scenario.features)?)?;
    staged.add("text.codt", encode_text_embeddings(&scenario.text))?;
    staged.add("truth.tsv", truth)?;
    staged.add("index.tsv", index.to_text())?;
    staged.commit(cfg)?;
    println!(
        "wrote {} images ({} regions of dim {}) over {} concepts",
        scenario.features.len(),
        scenario.n(),
        scenario.d(),
        index.len()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (scenario, index) = world(cfg)?;
    let outcome = run_training_with(&scenario, &index, &cfg.train, |m| {
        if let Some(c) = m.cover_rate {
            eprintln!(
                "step {:>6}  loss {:.5}  cover {:.4}",
                m.step, m.total_loss, c
            );
        }
    })?;
    let mut staged = Staged::new(out)?;
    staged.add("metrics.csv", metrics_csv(&outcome.metrics))?;
    staged.add("checkpoint.codc", encode_checkpoint(&outcome.state))?;
    staged.commit(cfg)?;
    match outcome.metrics.iter().rev().find_map(|m| m.cover_rate) {
        Some(c) => println!("trained {} steps, final cover rate {c:.4}", cfg.train.steps),
        None => println!("trained {} steps", cfg.train.steps),
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<()> {
    let (scenario, index) = world(cfg)?;
    let state = match checkpoint {
        Some(path) => load_checkpoint(read_bytes(path)?.as_slice())
            .with_context(|| format!("loading {}", path.display()))?,
        None => init_state(cfg, &scenario, &index, &cfg.train)?,
    };
    if state.store.n() != scenario.n() || state.store.d() != scenario.d() {
        return Err(UsageError(format!(
            "checkpoint features are {}x{}, scenario is {}x{}",
            state.store.n(),
            state.store.d(),
            scenario.n(),
            scenario.d()
        ))
        .into());
    }
    let head_group = state.head.m() + 1;
    let group_size = cfg.eval_group_size.unwrap_or(head_group);
    if group_size != head_group {
        return Err(UsageError(format!(
            "eval.group_size {group_size} does not match the head's group size {head_group}"
        ))
        .into());
    }
    let options = EvalOptions {
        group_size,
        seed: cfg.seed,
        mode: cfg.eval_mode,
    };
    let report = eval::compare_strategies(&state, &scenario, &index, &options)?;
    let mut staged = Staged::new(out)?;
    staged.add("eval.json", report.to_json()?)?;
    staged.add("eval.csv", report.to_csv())?;
    staged.commit(cfg)?;
    for s in &report.strategies {
        println!(
            "{:<14} {:.4}  ({} queries)",
            s.strategy.name(),
            s.cover_rate,
            s.samples
        );
    }
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.ablate_values.len() < 2 {
        return Err(UsageError("ablate.values needs at least two values".into()).into());
    }
    let mut configs = Vec::with_capacity(cfg.ablate_values.len());
    for v in &cfg.ablate_values {
        let mut c = cfg.train.clone();
        match cfg.ablate_axis {
            AblationAxis::TextGuidance => {
                c.text_guidance = match v.as_str() {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(UsageError(format!(
                            "text_guidance value `{v}` is not true or false"
                        ))
                        .into())
                    }
                }
            }
            AblationAxis::GroupSize => {
                c.group_size = v
                    .parse()
                    .map_err(|_| UsageError(format!("group_size value `{v}` is not an integer")))?;
            }
        }
        c.validate().map_err(|e| UsageError(e.to_string()))?;
        configs.push(c);
    }
    let (scenario, index) = world(cfg)?;
    let (_, rows) = eval::ablate(&scenario, &index, &configs, cfg.eval_mode)?;
    let mut csv = String::from("text_guidance,group_size,cover_rate\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.text_guidance, r.group_size, r.cover_rate);
        println!(
            "text_guidance={:<5} group_size={:<3} cover {:.4}",
            r.text_guidance, r.group_size, r.cover_rate
        );
    }
    let mut staged = Staged::new(out)?;
    staged.add("ablation.csv", csv)?;
    staged.commit(cfg)
}

pub fn grad_check(cfg: &RunConfig, out: &Path) -> Result<()> {
    let g = &cfg.gradcheck;
    let probe = RunConfig {
        scenario: ScenarioConfig {
            num_concepts: g.concepts,
            d: g.d,
            n: g.n,
            images_per_concept: 3,
            distractor_count: 1,
            noise_sigma: 0.3,
            multi_concept_rate: 0.0,
            instances_per_image: (1, 1),
            seed: cfg.seed,
            ..ScenarioConfig::default()
        },
        min_freq: 1,
        ..cfg.clone()
    };
    probe
        .scenario
        .validate()
        .map_err(|e| UsageError(e.to_string()))?;
    let train = TrainConfig {
        group_size: g.group_size,
        hidden: g.hidden,
        ..cfg.train.clone()
    };
    let (scenario, index) = world(&probe)?;
    let mut rng = seeds::rng_for(cfg.seed, Stream::Train);
    let state = ModelState::init(&scenario, &index, &train, &mut rng)?;
    let captions = caption_embeddings(&scenario.records, &scenario.text)?;
    let concepts: Vec<_> = index.concepts().collect();
    let groups = (0..g.groups)
        .map(|i| sample_mini_group(&index, concepts[i % concepts.len()], g.group_size, &mut rng))
        .collect::<cooccur_core::Result<Vec<_>>>()?;
    // Unit weights keep every term's gradient well above round-off.
    let weights = LossWeights {
        region_word: 1.0,
        image_text: 1.0,
    };

    let mut table = String::from("group\tchecked\tskipped\tmax_rel_error\n");
    let mut worst: f64 = 0.0;
    for group in ParamGroup::ALL {
        let r = finite_diff_check(
            &state, &groups, &captions, weights, group, g.eps, g.samples, &mut rng,
        )?;
        println!(
            "{group:?}: max relative error {:.3e} over {} coordinates ({} skipped at kinks)",
            r.max_rel_error, r.checked, r.skipped
        );
        let _ = writeln!(
            table,
            "{group:?}\t{}\t{}\t{}",
            r.checked, r.skipped, r.max_rel_error
        );
        worst = worst.max(r.max_rel_error);
    }
    let mut staged = Staged::new(out)?;
    staged.add("gradcheck.tsv", table)?;
    staged.commit(cfg)?;
    if worst >= GRAD_TOLERANCE {
        return Err(anyhow!(
            "max relative error {worst:.3e} exceeds {GRAD_TOLERANCE:e}"
        ));
    }
    Ok(())
}
