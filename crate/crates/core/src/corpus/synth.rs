//! Synthetic caption corpora with known concept mentions.
//!
//! Concept popularity follows a Zipf law so that a frequency threshold
//! splits the vocabulary. The generator records which concepts it wrote into
//! each caption, which gives tests an extraction-independent ground truth.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{CaptionRecord, ConceptId, Lexicon};
use crate::{Error, Result};

const ADJECTIVES: [&str; 6] = ["red", "small", "wooden", "striped", "old", "shiny"];
const OPENERS: [&str; 4] = ["a photo of", "there is", "close up of", "we saw"];
const JOINERS: [&str; 4] = ["and", "next to", "with", "near"];

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<CaptionRecord>,
    pub lexicon: Lexicon,
    /// Concepts written into each caption, parallel to `records`.
    pub mentions: Vec<Vec<ConceptId>>,
}

/// Term used for concept `i`: every fifth concept is an adjective phrase
/// over the preceding single-word term.
pub fn term_for(i: usize) -> String {
    if i % 5 == 4 {
        format!("{} obj{}", ADJECTIVES[i % ADJECTIVES.len()], i - 1)
    } else {
        format!("obj{i}")
    }
}

pub fn generate_caption_corpus<R: Rng + ?Sized>(
    num_captions: usize,
    num_concepts: usize,
    zipf_exponent: f64,
    rng: &mut R,
) -> Result<SyntheticCorpus> {
    if num_concepts < 3 {
        return Err(Error::Config("need at least 3 concepts".into()));
    }
    let lexicon = Lexicon::new((0..num_concepts).map(term_for))?;
    let weights: Vec<f64> = (0..num_concepts)
        .map(|r| 1.0 / ((r + 1) as f64).powf(zipf_exponent))
        .collect();
    let popularity = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;

    let mut records = Vec::with_capacity(num_captions);
    let mut mentions = Vec::with_capacity(num_captions);
    for i in 0..num_captions {
        let k = rng.random_range(1..=3);
        let mut chosen: Vec<ConceptId> = Vec::new();
        while chosen.len() < k {
            let c = ConceptId(popularity.sample(rng));
            if !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        let mut words: Vec<String> = vec![OPENERS[rng.random_range(0..OPENERS.len())].to_string()];
        for (j, c) in chosen.iter().enumerate() {
            if j > 0 {
                words.push(JOINERS[rng.random_range(0..JOINERS.len())].to_string());
            }
            let mut t = lexicon.term(*c).expect("generated id").to_string();
            if rng.random_bool(0.2) {
                t = t.to_uppercase();
            }
            words.push(t);
        }
        let mut caption = words.join(" ");
        if rng.random_bool(0.5) {
            caption.push('.');
        }
        records.push(CaptionRecord::new(format!("cap{i:06}"), caption));
        mentions.push(chosen);
    }
    Ok(SyntheticCorpus {
        records,
        lexicon,
        mentions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::extract_concepts;
    use crate::seeds;

    #[test]
    fn extraction_recovers_written_mentions() {
        let corpus = generate_caption_corpus(300, 40, 1.0, &mut seeds::rng(1)).unwrap();
        for (r, m) in corpus.records.iter().zip(&corpus.mentions) {
            let mut got = extract_concepts(&r.caption, &corpus.lexicon);
            let mut want = m.clone();
            got.sort();
            want.sort();
            assert_eq!(got, want, "{}", r.caption);
        }
    }
}
