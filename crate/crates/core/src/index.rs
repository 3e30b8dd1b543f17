//! Per-model embedding database, nearest-neighbour matching and 2D-3D
//! correspondence generation.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::PointGrid;
use crate::kdtree::KdTree;
use crate::lse::{fit_normalization, lse_with_frame, LseError, LseParams, LseVector, NormalizationStats};
use crate::lsemap::LseMap;
use crate::mesh::{PointSample, SampleCloud};
use crate::raster::PixelMask;

const MAGIC: &[u8; 4] = b"LSEI";
pub const LSEI_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Lse(#[from] LseError),
    #[error("no samples given")]
    NoSamples,
    #[error("every local frame was degenerate")]
    AllDegenerate,
    #[error("query must be normalised with this index's statistics")]
    WrongNormalization,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad index file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub sample: PointSample,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub stable: bool,
}

/// Matching parameters. Distances in centimetres are converted with the
/// index's unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    pub k: usize,
    pub suppression_radius_cm: f64,
    /// Minimum of `max_c |normalised value|` for a pixel to be matched.
    pub threshold: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            k: 100,
            suppression_radius_cm: 3.0,
            threshold: 0.5,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if !(self.suppression_radius_cm >= 0.0 && self.suppression_radius_cm.is_finite()) {
            return Err("suppression radius must be non-negative".into());
        }
        if !(self.threshold >= 0.0) {
            return Err("threshold must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub entry: usize,
    pub point: Point3<f64>,
    /// Euclidean distance in normalised embedding space.
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct LseIndex {
    model_id: String,
    params: LseParams,
    stats: NormalizationStats,
    entries: Vec<IndexEntry>,
    tree: KdTree,
    positions: PointGrid,
}

impl PartialEq for LseIndex {
    fn eq(&self, other: &Self) -> bool {
        self.model_id == other.model_id
            && self.params == other.params
            && self.stats == other.stats
            && self.entries == other.entries
    }
}

/// Ranks unstable entries after stable ones at equal distance.
fn tie_key(id: usize, stable: bool) -> u64 {
    ((!stable as u64) << 32) | id as u64
}

/// Embeds every sample over its radius neighbourhood, skipping degenerate
/// frames, and normalises over the model.
pub fn build_index(model_id: &str, samples: &[PointSample], params: &LseParams) -> Result<LseIndex, IndexError> {
    params.validate()?;
    if samples.is_empty() {
        return Err(IndexError::NoSamples);
    }
    let cloud = SampleCloud::new(samples);
    let radius = params.radius_model();
    let embedded: Vec<Option<(LseVector, bool)>> = samples
        .par_iter()
        .map(|s| {
            let neighbours: Vec<PointSample> =
                cloud.within(&s.position, radius).into_iter().map(|i| samples[i]).collect();
            lse_with_frame(&neighbours, &s.position, &s.normal, params)
                .ok()
                .map(|(v, frame)| (v, frame.stable))
        })
        .collect();
    let mut kept = Vec::new();
    let mut raws = Vec::new();
    for (s, e) in samples.iter().zip(embedded) {
        if let Some((v, stable)) = e {
            kept.push((*s, stable));
            raws.push(v);
        }
    }
    if raws.is_empty() {
        return Err(IndexError::AllDegenerate);
    }
    let stats = fit_normalization(&raws, model_id)?;
    let entries = kept
        .into_iter()
        .zip(raws)
        .map(|((sample, stable), raw)| {
            let mut normalized = vec![0.0; raw.len()];
            stats.apply(&raw.values, &mut normalized);
            IndexEntry {
                sample,
                raw: raw.values,
                normalized,
                stable,
            }
        })
        .collect();
    LseIndex::from_parts(model_id.to_string(), params.clone(), stats, entries)
}

impl LseIndex {
    pub fn from_parts(
        model_id: String,
        params: LseParams,
        stats: NormalizationStats,
        entries: Vec<IndexEntry>,
    ) -> Result<Self, IndexError> {
        let dim = params.dim();
        if entries.is_empty() {
            return Err(IndexError::NoSamples);
        }
        if stats.dim() != dim || entries.iter().any(|e| e.raw.len() != dim || e.normalized.len() != dim) {
            return Err(IndexError::DimensionMismatch(format!("entries must have {dim} values")));
        }
        let flat: Vec<f64> = entries.iter().flat_map(|e| e.normalized.iter().copied()).collect();
        let keys = entries.iter().enumerate().map(|(i, e)| tie_key(i, e.stable)).collect();
        let tree = KdTree::with_keys(dim, flat, keys);
        let points: Vec<Point3<f64>> = entries.iter().map(|e| e.sample.position).collect();
        Ok(Self {
            model_id,
            params,
            stats,
            entries,
            tree,
            positions: PointGrid::new(&points),
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn params(&self) -> &LseParams {
        &self.params
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Fraction of entries whose frame was flagged unstable.
    pub fn unstable_fraction(&self) -> f64 {
        self.entries.iter().filter(|e| !e.stable).count() as f64 / self.entries.len() as f64
    }

    fn check_query(&self, query: &LseVector) -> Result<(), IndexError> {
        if query.len() != self.dim() {
            return Err(IndexError::DimensionMismatch(format!(
                "query has {} values, index has {}",
                query.len(),
                self.dim()
            )));
        }
        if query.normalized_with != Some(self.stats.id()) {
            return Err(IndexError::WrongNormalization);
        }
        Ok(())
    }

    /// The `k` nearest entries to a query normalised with [`LseIndex::stats`].
    pub fn knn_query(&self, query: &LseVector, k: usize) -> Result<Vec<Candidate>, IndexError> {
        self.check_query(query)?;
        Ok(self.knn_values(&query.values, k))
    }

    /// Linear-scan reference for [`LseIndex::knn_query`].
    pub fn knn_query_brute(&self, query: &LseVector, k: usize) -> Result<Vec<Candidate>, IndexError> {
        self.check_query(query)?;
        Ok(self.to_candidates(self.tree.knn_brute(&query.values, k)))
    }

    pub fn knn_values(&self, query: &[f64], k: usize) -> Vec<Candidate> {
        self.to_candidates(self.tree.knn(query, k))
    }

    fn to_candidates(&self, hits: Vec<crate::kdtree::Hit>) -> Vec<Candidate> {
        hits.into_iter()
            .map(|h| Candidate {
                entry: h.index,
                point: self.entries[h.index].sample.position,
                distance: h.dist2.sqrt(),
            })
            .collect()
    }

    /// Entry whose sample position is closest to `p`, with its squared distance.
    pub fn nearest_entry(&self, p: &Point3<f64>) -> (usize, f64) {
        self.positions.nearest(p).expect("index is never empty")
    }

    /// Normalises a raw pixel embedding into `out`.
    pub fn normalize_into(&self, raw: &[f32], out: &mut [f64]) {
        for c in 0..out.len() {
            out[c] = (raw[c] as f64 - self.stats.mean[c]) / self.stats.sd[c];
        }
    }

    /// Layout (little-endian): `LSEI`, u32 version, u32 id length + UTF-8 id,
    /// f64 radius_cm, sigma_cm, degeneracy_gap, unit_scale_to_cm, u32 exponent
    /// count + 3 u8 each, u32 dim, dim f64 means, dim f64 sds, dim u8
    /// zero-variance flags, u32 entry count, then per entry: 3 f64 position,
    /// 3 f64 normal, u32 triangle, u8 stable, dim f64 raw, dim f64 normalised.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), IndexError> {
        let dim = self.dim();
        let mut b = Vec::with_capacity(64 + self.entries.len() * (57 + 16 * dim));
        b.extend_from_slice(MAGIC);
        put_u32(&mut b, LSEI_VERSION);
        put_u32(&mut b, self.model_id.len() as u32);
        b.extend_from_slice(self.model_id.as_bytes());
        for v in [
            self.params.radius_cm,
            self.params.sigma_cm,
            self.params.degeneracy_gap,
            self.params.unit_scale_to_cm,
        ] {
            put_f64(&mut b, v);
        }
        put_u32(&mut b, self.params.exponents.len() as u32);
        for e in &self.params.exponents {
            b.extend_from_slice(e);
        }
        put_u32(&mut b, dim as u32);
        self.stats.mean.iter().for_each(|&v| put_f64(&mut b, v));
        self.stats.sd.iter().for_each(|&v| put_f64(&mut b, v));
        self.stats.zero_variance.iter().for_each(|&z| b.push(z as u8));
        put_u32(&mut b, self.entries.len() as u32);
        for e in &self.entries {
            let s = &e.sample;
            for v in [s.position.x, s.position.y, s.position.z, s.normal.x, s.normal.y, s.normal.z] {
                put_f64(&mut b, v);
            }
            put_u32(&mut b, s.triangle);
            b.push(e.stable as u8);
            e.raw.iter().for_each(|&v| put_f64(&mut b, v));
            e.normalized.iter().for_each(|&v| put_f64(&mut b, v));
        }
        w.write_all(&b)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, IndexError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut c = ByteCursor { bytes: &bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = c.u32()?;
        if version != LSEI_VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let id_len = c.u32()? as usize;
        let model_id = String::from_utf8(c.take(id_len)?.to_vec())
            .map_err(|_| IndexError::Format("model id is not utf-8".into()))?;
        let mut params = LseParams {
            radius_cm: c.f64()?,
            sigma_cm: c.f64()?,
            degeneracy_gap: c.f64()?,
            unit_scale_to_cm: c.f64()?,
            exponents: Vec::new(),
        };
        let n_exp = c.u32()? as usize;
        for _ in 0..n_exp {
            let e = c.take(3)?;
            params.exponents.push([e[0], e[1], e[2]]);
        }
        params.validate()?;
        let dim = c.u32()? as usize;
        if dim != params.dim() {
            return Err(IndexError::DimensionMismatch(format!(
                "stats have {dim} dimensions, exponents {}",
                params.dim()
            )));
        }
        let mean = c.f64s(dim)?;
        let sd = c.f64s(dim)?;
        let zero_variance = c.take(dim)?.iter().map(|&z| z != 0).collect();
        let stats = NormalizationStats {
            mean,
            sd,
            zero_variance,
            model_id: model_id.clone(),
        };
        let n = c.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(bytes.len() / 57 + 1));
        for _ in 0..n {
            let v = c.f64s(6)?;
            let triangle = c.u32()?;
            let stable = c.take(1)?[0] != 0;
            entries.push(IndexEntry {
                sample: PointSample {
                    position: Point3::new(v[0], v[1], v[2]),
                    normal: Vector3::new(v[3], v[4], v[5]),
                    triangle,
                },
                raw: c.f64s(dim)?,
                normalized: c.f64s(dim)?,
                stable,
            });
        }
        if c.pos != bytes.len() {
            return Err(IndexError::Format("trailing bytes".into()));
        }
        Self::from_parts(model_id, params, stats, entries)
    }

    pub fn write(&self, path: &Path) -> Result<(), IndexError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self, IndexError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        if self.pos + n > self.bytes.len() {
            return Err(IndexError::Format("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, IndexError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IndexError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Greedy spatial suppression over a distance-sorted list: a candidate is
/// kept only if it is farther than `radius` from every candidate kept before.
pub fn suppress_clusters(candidates: &[Candidate], radius: f64) -> Vec<Candidate> {
    let r2 = radius * radius;
    let mut kept: Vec<Candidate> = Vec::new();
    for c in candidates {
        if kept.iter().all(|k| (k.point - c.point).norm_squared() > r2) {
            kept.push(*c);
        }
    }
    kept
}

/// Pixels with a value whose largest normalised magnitude reaches `threshold`.
pub fn discriminative_mask(map: &LseMap, stats: &NormalizationStats, threshold: f64) -> PixelMask {
    let mut mask = PixelMask::empty(map.width, map.height);
    let mut buf = vec![0.0; map.channels as usize];
    for i in 0..map.pixel_count() {
        mask.data[i] = pixel_is_discriminative(map.pixel(i), stats, threshold, &mut buf);
    }
    mask
}

fn pixel_is_discriminative(raw: &[f32], stats: &NormalizationStats, threshold: f64, buf: &mut [f64]) -> bool {
    if !raw.iter().all(|v| v.is_finite()) || raw.len() != stats.dim() {
        return false;
    }
    let wide: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
    stats.apply(&wide, buf);
    buf.iter().fold(0.0f64, |m, v| m.max(v.abs())) >= threshold
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatch {
    /// `(x, y)`.
    pub pixel: [u32; 2],
    /// Ascending embedding distance, pairwise farther apart than the
    /// suppression radius.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub model_id: String,
    /// Row-major pixel order.
    pub matches: Vec<PixelMatch>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn restrict(&self, mask: &PixelMask) -> CorrespondenceSet {
        CorrespondenceSet {
            model_id: self.model_id.clone(),
            matches: self
                .matches
                .iter()
                .filter(|m| {
                    m.pixel[0] < mask.width && m.pixel[1] < mask.height && mask.get(m.pixel[0], m.pixel[1])
                })
                .cloned()
                .collect(),
        }
    }
}

/// Matches every discriminative pixel inside any of `masks` against `index`.
pub fn build_correspondences(
    map: &LseMap,
    masks: &[PixelMask],
    index: &LseIndex,
    params: &MatchParams,
) -> Result<CorrespondenceSet, IndexError> {
    if map.channels as usize != index.dim() {
        return Err(IndexError::DimensionMismatch(format!(
            "map has {} channels, index has {}",
            map.channels,
            index.dim()
        )));
    }
    for m in masks {
        if m.width != map.width || m.height != map.height {
            return Err(IndexError::DimensionMismatch(format!(
                "mask is {}x{}, map is {}x{}",
                m.width, m.height, map.width, map.height
            )));
        }
    }
    let radius = params.suppression_radius_cm / index.params().unit_scale_to_cm;
    let stats = index.stats();
    // identical pixel values share one query
    let mut groups: HashMap<&[u32], usize> = HashMap::new();
    let mut unique: Vec<usize> = Vec::new();
    let mut group_of: Vec<(usize, usize)> = Vec::new();
    let bits: Vec<u32> = map.data.iter().map(|v| v.to_bits()).collect();
    let c = map.channels as usize;
    for i in 0..map.pixel_count() {
        if masks.iter().any(|m| m.data[i]) {
            let key = &bits[i * c..(i + 1) * c];
            let g = *groups.entry(key).or_insert_with(|| {
                unique.push(i);
                unique.len() - 1
            });
            group_of.push((i, g));
        }
    }
    let results: Vec<Option<Vec<Candidate>>> = unique
        .par_iter()
        .map(|&i| {
            let mut q = vec![0.0; index.dim()];
            if !pixel_is_discriminative(map.pixel(i), stats, params.threshold, &mut q) {
                return None;
            }
            let candidates = suppress_clusters(&index.knn_values(&q, params.k), radius);
            (!candidates.is_empty()).then_some(candidates)
        })
        .collect();
    let matches: Vec<PixelMatch> = group_of
        .into_iter()
        .filter_map(|(i, g)| {
            results[g].as_ref().map(|candidates| PixelMatch {
                pixel: [(i % map.width as usize) as u32, (i / map.width as usize) as u32],
                candidates: candidates.clone(),
            })
        })
        .collect();
    Ok(CorrespondenceSet {
        model_id: index.model_id().to_string(),
        matches,
    })
}
