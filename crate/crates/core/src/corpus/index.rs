use std::collections::BTreeMap;
use std::io::BufRead;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::{extract_concepts, CaptionRecord, ConceptId, Lexicon};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupEntry {
    pub term: String,
    /// Member images in corpus order.
    pub images: Vec<String>,
}

/// Concept → images whose captions mention it, restricted to concepts seen
/// at least `min_freq` times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptGroupIndex {
    groups: BTreeMap<ConceptId, GroupEntry>,
    min_freq: usize,
}

/// Extracts concepts for every record (in place) and builds the index.
pub fn build_concept_index(
    records: &mut [CaptionRecord],
    lexicon: &Lexicon,
    min_freq: usize,
) -> Result<ConceptGroupIndex> {
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    records
        .par_iter_mut()
        .for_each(|r| r.concepts = extract_concepts(&r.caption, lexicon));

    let mut all: BTreeMap<ConceptId, Vec<String>> = BTreeMap::new();
    for r in records.iter() {
        for &c in &r.concepts {
            all.entry(c).or_default().push(r.image_id.clone());
        }
    }
    let groups = all
        .into_iter()
        .filter(|(_, images)| images.len() >= min_freq)
        .map(|(c, images)| {
            let term = lexicon
                .term(c)
                .expect("extracted ids are lexicon ids")
                .to_string();
            (c, GroupEntry { term, images })
        })
        .collect();
    Ok(ConceptGroupIndex { groups, min_freq })
}

impl ConceptGroupIndex {
    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn contains(&self, concept: ConceptId) -> bool {
        self.groups.contains_key(&concept)
    }

    /// Retained concept ids in ascending order.
    pub fn concepts(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.groups.keys().copied()
    }

    pub fn group(&self, concept: ConceptId) -> Option<&[String]> {
        self.groups.get(&concept).map(|g| g.images.as_slice())
    }

    pub fn entry(&self, concept: ConceptId) -> Option<&GroupEntry> {
        self.groups.get(&concept)
    }

    pub fn frequency(&self, concept: ConceptId) -> usize {
        self.groups.get(&concept).map_or(0, |g| g.images.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConceptId, &GroupEntry)> {
        self.groups.iter().map(|(&c, g)| (c, g))
    }

    /// `concept_id<TAB>term<TAB>freq<TAB>id,id,...`, sorted by concept id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (c, g) in &self.groups {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                c.0,
                g.term,
                g.images.len(),
                g.images.join(",")
            ));
        }
        out
    }

    /// Reads the format written by [`Self::to_text`]. `min_freq` is not
    /// stored in the file and is reconstructed as the smallest group size.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut groups = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| bad(format!("bad concept id `{}`", fields[0])))?;
            let freq: usize = fields[2]
                .parse()
                .map_err(|_| bad(format!("bad frequency `{}`", fields[2])))?;
            let images: Vec<String> = if fields[3].is_empty() {
                Vec::new()
            } else {
                fields[3].split(',').map(str::to_string).collect()
            };
            if images.len() != freq {
                return Err(bad(format!(
                    "frequency {freq} but {} image ids",
                    images.len()
                )));
            }
            let entry = GroupEntry {
                term: fields[1].to_string(),
                images,
            };
            if groups.insert(ConceptId(id), entry).is_some() {
                return Err(bad(format!("duplicate concept id {id}")));
            }
        }
        let min_freq = groups
            .values()
            .map(|g: &GroupEntry| g.images.len())
            .min()
            .unwrap_or(1)
            .max(1);
        Ok(Self { groups, min_freq })
    }
}

/// A query plus supports drawn from one concept group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniGroup {
    pub concept: ConceptId,
    pub images: Vec<String>,
    pub query_cursor: usize,
}

impl MiniGroup {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn query(&self) -> &str {
        &self.images[self.query_cursor]
    }

    /// Positions of the supports for the current query, in group order.
    pub fn support_positions(&self) -> Vec<usize> {
        support_positions(self.images.len(), self.query_cursor)
    }

    /// Moves the query role to the next image, wrapping around.
    pub fn advance(&mut self) {
        self.query_cursor = (self.query_cursor + 1) % self.images.len();
    }
}

/// Support positions when position `query` of a group of `len` is the query.
pub fn support_positions(len: usize, query: usize) -> Vec<usize> {
    (0..len).filter(|&p| p != query).collect()
}

/// Draws `group_size` images of `concept`.
///
/// Uniform without replacement when the group is large enough; otherwise
/// uniform with replacement so small groups still yield full mini-groups.
pub fn sample_mini_group<R: Rng + ?Sized>(
    index: &ConceptGroupIndex,
    concept: ConceptId,
    group_size: usize,
    rng: &mut R,
) -> Result<MiniGroup> {
    if group_size < 2 {
        return Err(Error::Config(format!(
            "group_size must be at least 2, got {group_size}"
        )));
    }
    let members = index
        .group(concept)
        .ok_or(Error::UnknownConcept(concept.0))?;
    let images = if members.len() >= group_size {
        index::sample(rng, members.len(), group_size)
            .into_iter()
            .map(|i| members[i].clone())
            .collect()
    } else {
        (0..group_size)
            .map(|_| members[rng.random_range(0..members.len())].clone())
            .collect()
    };
    Ok(MiniGroup {
        concept,
        images,
        query_cursor: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn corpus() -> (Vec<CaptionRecord>, Lexicon) {
        let recs = vec![
            CaptionRecord::new("a", "a dog on grass"),
            CaptionRecord::new("b", "two dogs? no, one dog"),
            CaptionRecord::new("c", "a cat and a dog"),
            CaptionRecord::new("d", "an empty street"),
        ];
        (recs, Lexicon::new(["dog", "cat"]).unwrap())
    }

    #[test]
    fn threshold_drops_rare_concepts() {
        let (mut recs, lex) = corpus();
        let idx = build_concept_index(&mut recs, &lex, 2).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.group(ConceptId(0)).unwrap(), ["a", "b", "c"]);
        assert_eq!(recs[2].concepts, vec![ConceptId(1), ConceptId(0)]);
    }

    #[test]
    fn min_freq_one_keeps_everything() {
        let (mut recs, lex) = corpus();
        let idx = build_concept_index(&mut recs, &lex, 1).unwrap();
        assert_eq!(idx.frequency(ConceptId(0)), 3);
        assert_eq!(idx.frequency(ConceptId(1)), 1);
        assert!(build_concept_index(&mut recs, &lex, 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let (mut recs, lex) = corpus();
        let idx = build_concept_index(&mut recs, &lex, 1).unwrap();
        let text = idx.to_text();
        assert_eq!(text, "0\tdog\t3\ta,b,c\n1\tcat\t1\tc\n");
        assert_eq!(ConceptGroupIndex::parse(text.as_bytes()).unwrap(), idx);
    }

    #[test]
    fn mini_group_from_large_group_is_distinct() {
        let recs: Vec<CaptionRecord> = (0..10)
            .map(|i| CaptionRecord::new(format!("i{i}"), "a dog"))
            .collect();
        let mut recs = recs;
        let lex = Lexicon::new(["dog"]).unwrap();
        let idx = build_concept_index(&mut recs, &lex, 1).unwrap();
        let g1 = sample_mini_group(&idx, ConceptId(0), 2, &mut seeds::rng(5)).unwrap();
        let g2 = sample_mini_group(&idx, ConceptId(0), 2, &mut seeds::rng(5)).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.len(), 2);
        assert_ne!(g1.images[0], g1.images[1]);
        assert_eq!(g1.query_cursor, 0);
        for id in &g1.images {
            assert!(idx.group(ConceptId(0)).unwrap().contains(id));
        }
    }

    #[test]
    fn tiny_group_samples_with_replacement() {
        let mut recs = vec![CaptionRecord::new("only", "a dog")];
        let lex = Lexicon::new(["dog"]).unwrap();
        let idx = build_concept_index(&mut recs, &lex, 1).unwrap();
        let g = sample_mini_group(&idx, ConceptId(0), 2, &mut seeds::rng(0)).unwrap();
        assert_eq!(g.images, ["only", "only"]);
    }

    #[test]
    fn sampling_errors() {
        let (mut recs, lex) = corpus();
        let idx = build_concept_index(&mut recs, &lex, 2).unwrap();
        let mut rng = seeds::rng(0);
        assert!(matches!(
            sample_mini_group(&idx, ConceptId(1), 2, &mut rng),
            Err(Error::UnknownConcept(1))
        ));
        assert!(sample_mini_group(&idx, ConceptId(0), 1, &mut rng).is_err());
    }

    #[test]
    fn query_cursor_cycles() {
        let mut g = MiniGroup {
            concept: ConceptId(0),
            images: vec!["a".into(), "b".into(), "c".into()],
            query_cursor: 0,
        };
        assert_eq!(g.support_positions(), [1, 2]);
        g.advance();
        assert_eq!(g.query(), "b");
        assert_eq!(g.support_positions(), [0, 2]);
        g.advance();
        g.advance();
        assert_eq!(g.query_cursor, 0);
    }
}
