//! `CODC` checkpoint container, little-endian:
//!
//! ```text
//! magic[4] version:u32 flags:u32 m:u32 n:u32 hidden:u32 classes:u32 d:u32
//! images:u64 temperature:f64
//! w1[hidden*m*n] b1[hidden] w2[hidden] b2            (f64)
//! concepts[classes]:u64 rows[classes*d]:f64
//! per image: id_len:u32 id features[n*d]:f64
//! ```

use std::io::{Read, Write};

use super::state::{FeatureStore, ModelState, Trainable};
use crate::corpus::ConceptId;
use crate::discovery::{DiscoveryHead, OpenVocabClassifier, RowLayout};
use crate::scenario::codec::{put_f64s, put_string, put_u32, put_u64, Reader};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CODC";
pub const VERSION: u32 = 1;

const TRAIN_HEAD: u32 = 1;
const TRAIN_FEATURES: u32 = 2;
const TEXT_GUIDANCE: u32 = 4;
const SORTED_BLOCKS: u32 = 8;

pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let head = &state.head;
    let clf = &state.classifier;
    let store = &state.store;
    let mut flags = 0;
    if state.trainable.head {
        flags |= TRAIN_HEAD;
    }
    if state.trainable.features {
        flags |= TRAIN_FEATURES;
    }
    if state.text_guidance {
        flags |= TEXT_GUIDANCE;
    }
    if head.layout() == RowLayout::SortedBlocks {
        flags |= SORTED_BLOCKS;
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        flags,
        head.m() as u32,
        head.n() as u32,
        head.hidden() as u32,
        clf.len() as u32,
        clf.d() as u32,
    ] {
        put_u32(&mut out, v);
    }
    put_u64(&mut out, store.len() as u64);
    put_f64s(&mut out, &[state.temperature]);
    put_f64s(&mut out, head.w1());
    put_f64s(&mut out, head.b1());
    put_f64s(&mut out, head.w2());
    put_f64s(&mut out, &[head.b2()]);
    for c in clf.concepts() {
        put_u64(&mut out, c.0 as u64);
    }
    put_f64s(&mut out, clf.rows());
    for (slot, id) in store.ids().iter().enumerate() {
        put_string(&mut out, id);
        put_f64s(&mut out, store.values(slot));
    }
    out
}

pub fn write_checkpoint<W: Write>(mut w: W, state: &ModelState) -> Result<()> {
    w.write_all(&encode_checkpoint(state))?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(r: R) -> Result<ModelState> {
    let mut r = Reader::new(r);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let flags = r.u32()?;
    let [m, n, hidden, classes, d] =
        [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
    let images = r.u64()? as usize;
    let temperature = r.f64()?;
    let layout = if flags & SORTED_BLOCKS != 0 {
        RowLayout::SortedBlocks
    } else {
        RowLayout::Raw
    };
    let w1 = r.f64s(hidden * m * n)?;
    let b1 = r.f64s(hidden)?;
    let w2 = r.f64s(hidden)?;
    let b2 = r.f64()?;
    let head = DiscoveryHead::from_parts(m, n, layout, w1, b1, w2, b2)?;
    let concepts = (0..classes)
        .map(|_| r.u64().map(|c| ConceptId(c as usize)))
        .collect::<Result<Vec<_>>>()?;
    let classifier = OpenVocabClassifier::from_unit_rows(d, concepts, r.f64s(classes * d)?)?;
    let mut entries = Vec::with_capacity(images);
    for _ in 0..images {
        let id = r.string()?;
        let values = r.f64s(n * d)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "checkpoint features of image {id}"
            )));
        }
        entries.push((id, values));
    }
    r.expect_eof()?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Format(format!("bad temperature {temperature}")));
    }
    Ok(ModelState {
        head,
        classifier,
        store: FeatureStore::from_parts(n, d, entries)?,
        trainable: Trainable {
            head: flags & TRAIN_HEAD != 0,
            features: flags & TRAIN_FEATURES != 0,
        },
        text_guidance: flags & TEXT_GUIDANCE != 0,
        temperature,
    })
}
