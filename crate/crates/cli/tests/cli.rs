use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cooccur_core::corpus::build_concept_index;
use cooccur_core::corpus::synth::generate_caption_corpus;
use cooccur_core::scenario::{Scenario, ScenarioConfig};
use cooccur_core::seeds::{self, Stream};
use cooccur_core::training::checkpoint::encode_checkpoint;
use cooccur_core::training::{ModelState, TrainConfig};

fn cooccur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cooccur"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

const SMALL: [&str; 10] = [
    "--set",
    "scenario.num_concepts=6",
    "--set",
    "scenario.d=8",
    "--set",
    "scenario.n=6",
    "--set",
    "scenario.images_per_concept=5",
    "--set",
    "train.hidden=16",
];

fn with_small<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter()
        .chain(SMALL.iter())
        .chain(tail)
        .copied()
        .collect()
}

#[test]
fn toy_corpus_index() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    let lexicon = dir.path().join("lexicon.txt");
    fs::write(
        &corpus,
        "i1\tA dog on a sofa.\ni2\tthe DOG and a cat\ni3\ta cat\ni4\tred car near a dog\ni5\ta sofa\ni6\tnothing here\n",
    )
    .unwrap();
    fs::write(&lexicon, "dog\ncat\nsofa\ncar\nred car\n").unwrap();
    let out = dir.path().join("run");
    let o = cooccur(&[
        "--out",
        out.to_str().unwrap(),
        "build-index",
        "--corpus",
        corpus.to_str().unwrap(),
        "--lexicon",
        lexicon.to_str().unwrap(),
        "--min-freq",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("retained 3 concepts"));
    let groups: BTreeMap<String, String> = text(&out.join("index.tsv"))
        .lines()
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            (cols[1].to_string(), cols[3].to_string())
        })
        .collect();
    let expected: BTreeMap<String, String> =
        [("dog", "i1,i2,i4"), ("cat", "i2,i3"), ("sofa", "i1,i5")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
    assert_eq!(groups, expected);
    assert!(out.join("config.txt").exists());
}

#[test]
fn missing_file_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.tsv");
    let o = cooccur(&[
        "build-index",
        "--corpus",
        missing.to_str().unwrap(),
        "--lexicon",
        "also-absent.txt",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.tsv"));
}

#[test]
fn large_corpus_count_matches_recount() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_caption_corpus(5000, 80, 1.0, &mut seeds::rng(17)).unwrap();
    let tsv: String = corpus
        .records
        .iter()
        .map(|r| format!("{}\t{}\n", r.image_id, r.caption))
        .collect();
    fs::write(dir.path().join("c.tsv"), tsv).unwrap();
    fs::write(dir.path().join("l.txt"), corpus.lexicon.to_text()).unwrap();
    let mut freq = BTreeMap::new();
    for m in &corpus.mentions {
        for c in m {
            *freq.entry(c.0).or_insert(0usize) += 1;
        }
    }
    let expected = freq.values().filter(|&&f| f >= 20).count();
    let out = dir.path().join("run");
    let o = cooccur(&[
        "--out",
        out.to_str().unwrap(),
        "build-index",
        "--corpus",
        dir.path().join("c.tsv").to_str().unwrap(),
        "--lexicon",
        dir.path().join("l.txt").to_str().unwrap(),
        "--min-freq",
        "20",
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(&format!("retained {expected} concepts")));
    assert_eq!(text(&out.join("index.tsv")).lines().count(), expected);
}

#[test]
fn grad_check_passes_with_seed_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = cooccur(&[
        "--out",
        dir.path().to_str().unwrap(),
        "grad-check",
        "--seed",
        "3",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert_eq!(text(&dir.path().join("gradcheck.tsv")).lines().count(), 6);
}

#[test]
fn zero_steps_checkpoint_is_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_small(
        &["--out", dir.path().to_str().unwrap(), "--seed", "5"],
        &["train", "--steps", "0"],
    );
    let o = cooccur(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let scenario = Scenario::generate(&ScenarioConfig {
        num_concepts: 6,
        d: 8,
        n: 6,
        images_per_concept: 5,
        seed: 5,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let mut records = scenario.records.clone();
    let index = build_concept_index(&mut records, &scenario.lexicon, 1).unwrap();
    let cfg = TrainConfig {
        hidden: 16,
        seed: 5,
        eval_seed: 5,
        ..TrainConfig::default()
    };
    let init = ModelState::init(
        &scenario,
        &index,
        &cfg,
        &mut seeds::rng_for(5, Stream::Train),
    )
    .unwrap();
    assert_eq!(
        fs::read(dir.path().join("checkpoint.codc")).unwrap(),
        encode_checkpoint(&init)
    );
    assert_eq!(text(&dir.path().join("metrics.csv")).lines().count(), 1);
}

#[test]
fn untrained_eval_is_near_chance_on_noisy_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = cooccur(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "scenario.noise_sigma=3.0",
        "--set",
        "scenario.multi_concept_rate=0",
        "--set",
        "scenario.instances_max=1",
        "--set",
        "scenario.num_concepts=20",
        "eval",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = text(&dir.path().join("eval.csv"));
    let rate: f64 = csv
        .lines()
        .find(|l| l.starts_with("region_region,all,"))
        .and_then(|l| l.split(',').nth(2))
        .unwrap()
        .parse()
        .unwrap();
    // One true region out of 16; 500 queries.
    assert!((rate - 1.0 / 16.0).abs() < 0.04, "rate {rate}");
    assert!(text(&dir.path().join("eval.json")).contains("\"region_region\""));
}

#[test]
fn resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let args = with_small(
        &["--out", first.to_str().unwrap(), "--seed", "11"],
        &["--set", "train.eval_interval=5", "train", "--steps", "12"],
    );
    assert!(cooccur(&args).status.success());
    let second = dir.path().join("b");
    let config = first.join("config.txt");
    let o = cooccur(&[
        "--out",
        second.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "train",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["metrics.csv", "checkpoint.codc", "config.txt"] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = cooccur(&[
        "--out",
        out.to_str().unwrap(),
        "--set",
        "scenario.noise_sigma=-1",
        "train",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "train.steps = many\n").unwrap();
    let o = cooccur(&[
        "--out",
        out.to_str().unwrap(),
        "--config",
        conf.to_str().unwrap(),
        "train",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.conf:1"));
    assert!(!out.exists());
}

#[test]
fn ablate_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_small(
        &["--out", dir.path().to_str().unwrap()],
        &[
            "--set",
            "train.steps=5",
            "ablate",
            "--axis",
            "group_size",
            "--values",
            "2,3",
        ],
    );
    let o = cooccur(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = text(&dir.path().join("ablation.csv"));
    let sizes: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(sizes, ["2", "3"]);
}
