//! Feature (`CODF`) and text-embedding (`CODT`) containers.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! CODF: magic[4] version:u32 images:u64 n:u32 d:u32 flags:u32
//!       per image: id_len:u32 id[id_len] features[n*d]:f64
//!                  [areas[n]:f64 if flags&AREAS] [boxes[n*4]:f64 if flags&BOXES]
//! CODT: magic[4] version:u32 rows:u64 d:u32 rule:u32
//!       per row: concept:u64 values[d]:f64
//! ```
//!
//! The debug TSV mirrors CODF with one region per line.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use super::{BBox, CaptionRule, RegionFeatureSet, TextEmbeddingTable};
use crate::corpus::ConceptId;
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"CODF";
pub const TEXT_MAGIC: &[u8; 4] = b"CODT";
pub const VERSION: u32 = 1;

const FLAG_BOXES: u32 = 1;
const FLAG_AREAS: u32 = 2;

pub(crate) struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated container: {e}")))?;
        Ok(buf)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.bytes::<4>()?;
        if &got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count).map(|_| self.f64()).collect()
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated string: {e}")))?;
        String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after container".into())),
        }
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn shape(sets: &[RegionFeatureSet]) -> Result<(usize, usize, u32)> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Empty("no feature sets to write".into()))?;
    let (n, d) = (first.n(), first.d());
    let mut flags = 0;
    if first.boxes().is_some() {
        flags |= FLAG_BOXES;
    }
    if first.areas().is_some() {
        flags |= FLAG_AREAS;
    }
    for s in sets {
        if s.n() != n || s.d() != d {
            return Err(Error::Shape(format!(
                "image {} has shape {}x{}, expected {n}x{d}",
                s.image_id,
                s.n(),
                s.d()
            )));
        }
        if s.boxes().is_some() != (flags & FLAG_BOXES != 0)
            || s.areas().is_some() != (flags & FLAG_AREAS != 0)
        {
            return Err(Error::Shape(format!(
                "image {} differs in box/area presence",
                s.image_id
            )));
        }
    }
    Ok((n, d, flags))
}

pub fn encode_features(sets: &[RegionFeatureSet]) -> Result<Vec<u8>> {
    let (n, d, flags) = shape(sets)?;
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, sets.len() as u64);
    put_u32(&mut out, n as u32);
    put_u32(&mut out, d as u32);
    put_u32(&mut out, flags);
    for s in sets {
        put_string(&mut out, &s.image_id);
        put_f64s(&mut out, s.features());
        if let Some(a) = s.areas() {
            put_f64s(&mut out, a);
        }
        if let Some(b) = s.boxes() {
            for bx in b {
                put_f64s(&mut out, &[bx.x1, bx.y1, bx.x2, bx.y2]);
            }
        }
    }
    Ok(out)
}

pub fn write_features<W: Write>(mut w: W, sets: &[RegionFeatureSet]) -> Result<()> {
    w.write_all(&encode_features(sets)?)?;
    Ok(())
}

/// Reads a `CODF` container and validates every set.
pub fn load_features<R: Read>(r: R) -> Result<Vec<RegionFeatureSet>> {
    let mut r = Reader::new(r);
    r.magic(FEATURE_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u64()? as usize;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let flags = r.u32()?;
    let mut sets = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let id = r.string()?;
        let features = r.f64s(n * d)?;
        let areas = if flags & FLAG_AREAS != 0 {
            Some(r.f64s(n)?)
        } else {
            None
        };
        let boxes = if flags & FLAG_BOXES != 0 {
            let raw = r.f64s(n * 4)?;
            Some(
                raw.chunks(4)
                    .map(|c| BBox {
                        x1: c[0],
                        y1: c[1],
                        x2: c[2],
                        y2: c[3],
                    })
                    .collect(),
            )
        } else {
            None
        };
        sets.push(RegionFeatureSet::new(id, n, d, features, areas, boxes)?);
    }
    r.expect_eof()?;
    Ok(sets)
}

fn join(vs: &[f64]) -> String {
    vs.iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Debug TSV: a header line, then `image<TAB>region<TAB>f,f,..<TAB>area<TAB>x1,y1,x2,y2`.
pub fn features_to_tsv(sets: &[RegionFeatureSet]) -> Result<String> {
    let (n, d, flags) = shape(sets)?;
    let mut out = format!(
        "#CODF-TSV\tversion={VERSION}\tn={n}\td={d}\tboxes={}\tareas={}\n",
        u8::from(flags & FLAG_BOXES != 0),
        u8::from(flags & FLAG_AREAS != 0)
    );
    for s in sets {
        for i in 0..n {
            let area = s.areas().map(|a| format!("{:?}", a[i])).unwrap_or_default();
            let bx = s
                .boxes()
                .map(|b| join(&[b[i].x1, b[i].y1, b[i].x2, b[i].y2]))
                .unwrap_or_default();
            out.push_str(&format!(
                "{}\t{i}\t{}\t{area}\t{bx}\n",
                s.image_id,
                join(s.row(i))
            ));
        }
    }
    Ok(out)
}

pub fn features_from_tsv<R: BufRead>(r: R) -> Result<Vec<RegionFeatureSet>> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Empty("empty feature TSV".into()))?;
    let header = header?;
    let mut fields = header.split('\t');
    if fields.next() != Some("#CODF-TSV") {
        return Err(Error::Format("missing #CODF-TSV header".into()));
    }
    let mut kv = BTreeMap::new();
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header field `{f}`")))?;
        let v: usize = v
            .parse()
            .map_err(|_| Error::Format(format!("bad header value `{f}`")))?;
        kv.insert(k.to_string(), v);
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("header lacks `{k}`")))
    };
    let (n, d) = (get("n")?, get("d")?);
    let has_boxes = get("boxes")? == 1;
    let has_areas = get("areas")? == 1;

    struct Pending {
        id: String,
        feats: Vec<f64>,
        areas: Vec<f64>,
        boxes: Vec<BBox>,
    }
    let finish = |p: Pending| -> Result<RegionFeatureSet> {
        if p.feats.len() != n * d {
            return Err(Error::Shape(format!(
                "image {}: expected {n} regions of {d} values",
                p.id
            )));
        }
        RegionFeatureSet::new(
            p.id,
            n,
            d,
            p.feats,
            has_areas.then_some(p.areas),
            has_boxes.then_some(p.boxes),
        )
    };

    let mut sets = Vec::new();
    let mut cur: Option<Pending> = None;
    for (i, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse {
            line: i + 1,
            message: m,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", cols.len())));
        }
        let id = cols[0];
        if cur.as_ref().is_none_or(|p| p.id != id) {
            if let Some(p) = cur.take() {
                sets.push(finish(p)?);
            }
            cur = Some(Pending {
                id: id.to_string(),
                feats: Vec::new(),
                areas: Vec::new(),
                boxes: Vec::new(),
            });
        }
        let p = cur.as_mut().expect("set above");
        let parse = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| bad(format!("image {id}: bad number `{v}`")))
                })
                .collect()
        };
        let row = parse(cols[2])?;
        if row.len() != d {
            return Err(Error::Shape(format!(
                "image {id}: region row has {} values, expected {d}",
                row.len()
            )));
        }
        p.feats.extend(row);
        if has_areas {
            p.areas.push(
                cols[3]
                    .parse()
                    .map_err(|_| bad(format!("image {id}: bad area")))?,
            );
        }
        if has_boxes {
            let b = parse(cols[4])?;
            if b.len() != 4 {
                return Err(bad(format!("image {id}: box needs 4 values")));
            }
            p.boxes.push(BBox {
                x1: b[0],
                y1: b[1],
                x2: b[2],
                y2: b[3],
            });
        }
    }
    if let Some(p) = cur {
        sets.push(finish(p)?);
    }
    Ok(sets)
}

pub fn encode_text_embeddings(table: &TextEmbeddingTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TEXT_MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, table.len() as u64);
    put_u32(&mut out, table.d() as u32);
    put_u32(&mut out, table.rule() as u32);
    for (c, w) in table.iter() {
        put_u64(&mut out, c.0 as u64);
        put_f64s(&mut out, w);
    }
    out
}

pub fn write_text_embeddings<W: Write>(mut w: W, table: &TextEmbeddingTable) -> Result<()> {
    w.write_all(&encode_text_embeddings(table))?;
    Ok(())
}

pub fn load_text_embeddings<R: Read>(r: R) -> Result<TextEmbeddingTable> {
    let mut r = Reader::new(r);
    r.magic(TEXT_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u64()? as usize;
    let d = r.u32()? as usize;
    let rule = match r.u32()? {
        0 => CaptionRule::MeanOfConcepts,
        other => return Err(Error::Format(format!("unknown caption rule {other}"))),
    };
    let mut rows = BTreeMap::new();
    for _ in 0..count {
        let c = ConceptId(r.u64()? as usize);
        let values = r.f64s(d)?;
        if rows.insert(c, values).is_some() {
            return Err(Error::Format(format!("duplicate concept {c}")));
        }
    }
    r.expect_eof()?;
    TextEmbeddingTable::new(d, rule, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Scenario, ScenarioConfig};

    fn sets() -> Vec<RegionFeatureSet> {
        vec![
            RegionFeatureSet::new(
                "a",
                2,
                3,
                vec![1.0, 2.0, 3.0, -1.0, 0.5, 1e-300],
                None,
                None,
            )
            .unwrap(),
            RegionFeatureSet::new("b", 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], None, None)
                .unwrap(),
        ]
    }

    #[test]
    fn loads_declared_shape() {
        let loaded = load_features(encode_features(&sets()).unwrap().as_slice()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!((loaded[0].n(), loaded[0].d()), (2, 3));
        assert_eq!(loaded, sets());
    }

    #[test]
    fn nan_names_the_image() {
        let mut bytes = encode_features(&sets()).unwrap();
        // first value of image "b": header 28 bytes, image a = 4+1+48, then 4+1
        let off = 28 + 4 + 1 + 48 + 4 + 1;
        bytes[off..off + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        let err = load_features(bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(m) if m.contains("image b")));
    }

    #[test]
    fn zero_row_and_truncation_rejected() {
        let mut bytes = encode_features(&sets()).unwrap();
        let off = 28 + 4 + 1;
        for k in 0..3 {
            bytes[off + 8 * k..off + 8 * k + 8].copy_from_slice(&0.0f64.to_le_bytes());
        }
        assert!(
            matches!(load_features(bytes.as_slice()), Err(Error::ZeroVector(m)) if m.contains("image a"))
        );
        let bytes = encode_features(&sets()).unwrap();
        assert!(load_features(&bytes[..bytes.len() - 3]).is_err());
        assert!(load_features(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn scenario_round_trips_bitwise() {
        let cfg = ScenarioConfig {
            num_concepts: 4,
            d: 6,
            n: 5,
            images_per_concept: 3,
            boxes: true,
            ..Default::default()
        };
        let s = Scenario::generate(&cfg).unwrap();
        let bytes = encode_features(&s.features).unwrap();
        let back = load_features(bytes.as_slice()).unwrap();
        assert_eq!(encode_features(&back).unwrap(), bytes);

        let tsv = features_to_tsv(&s.features).unwrap();
        let back = features_from_tsv(tsv.as_bytes()).unwrap();
        assert_eq!(encode_features(&back).unwrap(), bytes);

        let t = encode_text_embeddings(&s.text);
        let table = load_text_embeddings(t.as_slice()).unwrap();
        assert_eq!(table, s.text);
        assert_eq!(encode_text_embeddings(&table), t);
    }

    #[test]
    fn tsv_dimension_mismatch_names_image() {
        let tsv = "#CODF-TSV\tversion=1\tn=1\td=3\tboxes=0\tareas=0\nimgX\t0\t1,2\t\t\n";
        let err = features_from_tsv(tsv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("imgX"), "{err}");
    }
}
