//! Local surface embeddings.
//!
//! A neighbourhood of surface points around `P` is expressed in a local
//! frame obtained from the SVD of its centred scatter matrix, with the third
//! axis oriented along the surface normal. The embedding is a set of
//! Gaussian-weighted moments `sum_n w_n x_n^i y_n^j z_n^k` of the rotated
//! offsets. Because every configured `i` and `j` is even, the remaining sign
//! ambiguity of the first two axes does not change the result.

use nalgebra::{Matrix3, Point3, Vector3, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::PointSample;

#[derive(Debug, Error, PartialEq)]
pub enum LseError {
    #[error("degenerate neighbourhood: all points coincide with the centre")]
    DegenerateFrame,
    #[error("invalid embedding parameters: {0}")]
    InvalidParams(String),
    #[error("need at least 2 vectors to fit normalisation, got {0}")]
    TooFewVectors(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector is already normalised")]
    AlreadyNormalized,
}

/// Exponent triple `(i, j, k)` of one moment.
pub type Exponent = [u8; 3];

/// The eleven triples with `i, j` in {0, 2}, `k` in {0, 1, 2}, minus (0, 0, 0).
pub fn default_exponents() -> Vec<Exponent> {
    let mut out = Vec::with_capacity(11);
    for i in [0u8, 2] {
        for j in [0u8, 2] {
            for k in [0u8, 1, 2] {
                if (i, j, k) != (0, 0, 0) {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LseParams {
    /// Neighbourhood radius, centimetres.
    pub radius_cm: f64,
    /// Weight falloff, centimetres.
    pub sigma_cm: f64,
    pub exponents: Vec<Exponent>,
    /// Relative singular-value gap below which a frame is flagged unstable.
    pub degeneracy_gap: f64,
    /// Centimetres per model unit; set from the pipeline configuration.
    #[serde(skip)]
    pub unit_scale_to_cm: f64,
}

impl Default for LseParams {
    fn default() -> Self {
        Self {
            radius_cm: 3.0,
            sigma_cm: 5.0,
            exponents: default_exponents(),
            degeneracy_gap: 1e-6,
            unit_scale_to_cm: 0.1,
        }
    }
}

impl LseParams {
    pub fn validate(&self) -> Result<(), LseError> {
        let bad = |m: &str| Err(LseError::InvalidParams(m.to_string()));
        if !(self.radius_cm > 0.0 && self.radius_cm.is_finite()) {
            return bad("radius must be positive");
        }
        if !(self.sigma_cm > 0.0 && self.sigma_cm.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.unit_scale_to_cm > 0.0 && self.unit_scale_to_cm.is_finite()) {
            return bad("unit_scale_to_cm must be positive");
        }
        if !(self.degeneracy_gap >= 0.0) {
            return bad("degeneracy gap must be non-negative");
        }
        if self.exponents.is_empty() {
            return bad("exponent list is empty");
        }
        for e in &self.exponents {
            if *e == [0, 0, 0] {
                return bad("exponent (0,0,0) is constant");
            }
            if e[0] % 2 != 0 || e[1] % 2 != 0 {
                return bad("exponents i and j must be even");
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Neighbourhood radius in model units.
    pub fn radius_model(&self) -> f64 {
        self.radius_cm / self.unit_scale_to_cm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    /// Rows are the local x, y, z axes expressed in the object frame.
    pub rotation: Matrix3<f64>,
    pub stable: bool,
    /// Descending.
    pub singular_values: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LseVector {
    pub values: Vec<f64>,
    /// Id of the statistics this vector was normalised with, if any.
    pub normalized_with: Option<u64>,
}

impl LseVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized_with: None,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized_with.is_some()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Dimensions whose variance was zero (their `sd` is forced to 1).
    pub zero_variance: Vec<bool>,
    pub model_id: String,
}

impl NormalizationStats {
    /// Content hash identifying these statistics.
    pub fn id(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write(self.model_id.as_bytes());
        for v in self.mean.iter().chain(&self.sd) {
            h.write(&v.to_le_bytes());
        }
        h.finish()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalises raw values without tagging (hot path for image queries).
    pub fn apply(&self, raw: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = (raw[c] - self.mean[c]) / self.sd[c];
        }
    }
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

fn scatter_matrix(neighbors: &[PointSample], center: &Point3<f64>) -> Matrix3<f64> {
    let mut c = Matrix3::zeros();
    for s in neighbors {
        let v = s.position - center;
        c += v * v.transpose();
    }
    c
}

/// Builds the sign-normalised local rotation for a neighbourhood.
pub fn local_frame(
    neighbors: &[PointSample],
    center: &Point3<f64>,
    normal: &Vector3<f64>,
    degeneracy_gap: f64,
) -> Result<LocalFrame, LseError> {
    let scatter = scatter_matrix(neighbors, center);
    if !(scatter.trace() > 0.0) || !scatter.iter().all(|v| v.is_finite()) {
        return Err(LseError::DegenerateFrame);
    }
    let svd = SVD::new(scatter, false, true);
    let v_t = svd.v_t.ok_or(LseError::DegenerateFrame)?;
    let s = svd.singular_values;

    let mut r1: Vector3<f64> = v_t.row(0).transpose();
    let mut r3: Vector3<f64> = v_t.row(2).transpose();
    if r3.dot(normal) < 0.0 {
        r3 = -r3;
    }
    // fix the free sign of the first axis: largest-magnitude component positive
    let imax = r1.iamax();
    if r1[imax] < 0.0 {
        r1 = -r1;
    }
    let r2 = r3.cross(&r1);
    let rotation = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);

    let singular_values = [s[0], s[1], s[2]];
    let stable = (s[0] - s[1]) >= degeneracy_gap * s[0] && (s[1] - s[2]) >= degeneracy_gap * s[0];
    Ok(LocalFrame {
        rotation,
        stable,
        singular_values,
    })
}

/// Weighted moments of the neighbourhood expressed through `rotation`.
pub fn moments_in_frame(
    rotation: &Matrix3<f64>,
    neighbors: &[PointSample],
    center: &Point3<f64>,
    params: &LseParams,
) -> Vec<f64> {
    let scale = params.unit_scale_to_cm;
    let inv_sigma2 = 1.0 / (params.sigma_cm * params.sigma_cm);
    let mut out = vec![0.0; params.exponents.len()];
    for s in neighbors {
        let v = (s.position - center) * scale;
        let w = (-v.norm_squared() * inv_sigma2).exp();
        let local = rotation * v;
        // powers 0..=2 per axis cover every permitted exponent cheaply
        let px = [1.0, local.x, local.x * local.x];
        let py = [1.0, local.y, local.y * local.y];
        let pz = [1.0, local.z, local.z * local.z];
        for (o, e) in out.iter_mut().zip(&params.exponents) {
            let term = if e.iter().all(|&p| p <= 2) {
                px[e[0] as usize] * py[e[1] as usize] * pz[e[2] as usize]
            } else {
                local.x.powi(e[0] as i32) * local.y.powi(e[1] as i32) * local.z.powi(e[2] as i32)
            };
            *o += w * term;
        }
    }
    out
}

/// Raw embedding together with the frame it was computed in.
pub fn lse_with_frame(
    neighbors: &[PointSample],
    center: &Point3<f64>,
    normal: &Vector3<f64>,
    params: &LseParams,
) -> Result<(LseVector, LocalFrame), LseError> {
    let frame = local_frame(neighbors, center, normal, params.degeneracy_gap)?;
    let values = moments_in_frame(&frame.rotation, neighbors, center, params);
    Ok((LseVector::raw(values), frame))
}

pub fn lse_raw(
    neighbors: &[PointSample],
    center: &Point3<f64>,
    normal: &Vector3<f64>,
    params: &LseParams,
) -> Result<LseVector, LseError> {
    lse_with_frame(neighbors, center, normal, params).map(|(v, _)| v)
}

/// Per-dimension mean and population standard deviation.
pub fn fit_normalization(raw: &[LseVector], model_id: &str) -> Result<NormalizationStats, LseError> {
    if raw.len() < 2 {
        return Err(LseError::TooFewVectors(raw.len()));
    }
    let dim = raw[0].len();
    let n = raw.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in raw {
        if v.len() != dim {
            return Err(LseError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for v in raw {
        for c in 0..dim {
            let d = v.values[c] - mean[c];
            var[c] += d * d;
        }
    }
    let mut zero_variance = vec![false; dim];
    let sd = var
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let sd = (v / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                zero_variance[c] = true;
                1.0
            }
        })
        .collect();
    Ok(NormalizationStats {
        mean,
        sd,
        zero_variance,
        model_id: model_id.to_string(),
    })
}

pub fn normalize(v: &LseVector, stats: &NormalizationStats) -> Result<LseVector, LseError> {
    if v.is_normalized() {
        return Err(LseError::AlreadyNormalized);
    }
    if v.len() != stats.dim() {
        return Err(LseError::DimensionMismatch {
            expected: stats.dim(),
            got: v.len(),
        });
    }
    let mut values = vec![0.0; v.len()];
    stats.apply(&v.values, &mut values);
    Ok(LseVector {
        values,
        normalized_with: Some(stats.id()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(p: Point3<f64>) -> PointSample {
        PointSample {
            position: p,
            normal: Vector3::z(),
            triangle: 0,
        }
    }

    fn random_patch(rng: &mut ChaCha8Rng, n: usize) -> Vec<PointSample> {
        (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                let y: f64 = rng.random_range(-1.5..1.5);
                let z = 0.3 * x * x - 0.1 * y * y + 0.05 * x * y + rng.random_range(-0.2..0.2);
                sample(Point3::new(x, y, z))
            })
            .collect()
    }

    #[test]
    fn default_exponents_are_the_eleven_triples() {
        let e = default_exponents();
        assert_eq!(e.len(), 11);
        assert!(!e.contains(&[0, 0, 0]));
        assert!(e.iter().all(|t| t[0] % 2 == 0 && t[1] % 2 == 0 && t[2] <= 2));
        LseParams::default().validate().unwrap();
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = LseParams::default();
        p.exponents.push([1, 0, 0]);
        assert!(p.validate().is_err());
        let p = LseParams {
            sigma_cm: 0.0,
            ..LseParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn frame_is_a_proper_rotation_with_normal_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let pts = random_patch(&mut rng, 40);
            let normal = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), -1.0).normalize();
            let f = local_frame(&pts, &Point3::origin(), &normal, 1e-6).unwrap();
            let r = f.rotation;
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            assert!((r * normal).z >= 0.0);
            assert!(f.singular_values[0] >= f.singular_values[1]);
            assert!(f.singular_values[1] >= f.singular_values[2]);
        }
    }

    #[test]
    fn single_point_neighbourhood_is_degenerate() {
        let pts = [sample(Point3::new(1.0, 2.0, 3.0))];
        let err = lse_raw(&pts, &Point3::new(1.0, 2.0, 3.0), &Vector3::z(), &LseParams::default());
        assert_eq!(err.unwrap_err(), LseError::DegenerateFrame);
    }

    #[test]
    fn isotropic_patch_is_flagged_unstable() {
        // square grid: equal spread in x and y
        let mut pts = Vec::new();
        for i in -3..=3 {
            for j in -3..=3 {
                pts.push(sample(Point3::new(i as f64, j as f64, 0.0)));
            }
        }
        let f = local_frame(&pts, &Point3::origin(), &Vector3::z(), 1e-6).unwrap();
        assert!(!f.stable);
    }

    #[test]
    fn mirror_symmetric_patch_has_zero_odd_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pts = Vec::new();
        for _ in 0..30 {
            let p = Point3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.1..0.5),
            );
            pts.push(sample(p));
            pts.push(sample(Point3::new(p.x, p.y, -p.z)));
        }
        let params = LseParams {
            unit_scale_to_cm: 1.0,
            ..LseParams::default()
        };
        let v = lse_raw(&pts, &Point3::origin(), &Vector3::z(), &params).unwrap();
        for (e, val) in params.exponents.iter().zip(&v.values) {
            if e[2] == 1 {
                assert!(val.abs() < 1e-9, "{e:?} -> {val}");
            }
        }
    }

    #[test]
    fn weights_decrease_with_distance() {
        let params = LseParams {
            unit_scale_to_cm: 1.0,
            ..LseParams::default()
        };
        let dir = Vector3::new(0.3, -0.5, 0.8).normalize();
        let rot = Matrix3::identity();
        let mut prev = f64::INFINITY;
        // magnitude of the (0,0,2) moment divided by its polynomial part is the weight
        for step in 1..40 {
            let d = step as f64 * 0.25;
            let p = sample(Point3::from(dir * d));
            let m = moments_in_frame(&rot, &[p], &Point3::origin(), &params);
            let k = params.exponents.iter().position(|e| *e == [0, 0, 2]).unwrap();
            let w = m[k] / (dir.z * d).powi(2);
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn translation_leaves_embedding_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = LseParams {
            unit_scale_to_cm: 1.0,
            ..LseParams::default()
        };
        for _ in 0..20 {
            let pts = random_patch(&mut rng, 50);
            let offset = Vector3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            );
            let moved: Vec<_> = pts.iter().map(|s| sample(s.position + offset)).collect();
            let a = lse_raw(&pts, &Point3::origin(), &Vector3::z(), &params).unwrap();
            let b = lse_raw(&moved, &Point3::from(offset), &Vector3::z(), &params).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn rotating_the_input_rotates_the_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_patch(&mut rng, 60);
        let base = local_frame(&pts, &Point3::origin(), &Vector3::z(), 1e-6).unwrap();
        for _ in 0..100 {
            let r0 = Rotation3::from_scaled_axis(Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ));
            let moved: Vec<_> = pts.iter().map(|s| sample(r0 * s.position)).collect();
            let f = local_frame(&moved, &Point3::origin(), &(r0 * Vector3::z()), 1e-6).unwrap();
            let composed = f.rotation * r0.matrix();
            let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
            let d_same = (composed - base.rotation).abs().max();
            let d_flip = (composed - flip * base.rotation).abs().max();
            assert!(d_same.min(d_flip) < 1e-9, "{d_same} {d_flip}");
        }
    }

    #[test]
    fn normalisation_hand_example() {
        let mut a = vec![0.0; 11];
        let zero = LseVector::raw(a.clone());
        a[0] = 2.0;
        let two = LseVector::raw(a);
        let stats = fit_normalization(&[zero, two.clone()], "m").unwrap();
        assert_eq!(stats.mean[0], 1.0);
        assert_eq!(stats.sd[0], 1.0);
        assert!(!stats.zero_variance[0]);
        assert!(stats.zero_variance[1..].iter().all(|&z| z));
        assert!(stats.sd[1..].iter().all(|&s| s == 1.0));

        let n = normalize(&two, &stats).unwrap();
        assert_eq!(n.values[0], 1.0);
        assert_eq!(n.normalized_with, Some(stats.id()));
        assert_eq!(normalize(&n, &stats).unwrap_err(), LseError::AlreadyNormalized);
        assert!(matches!(
            normalize(&LseVector::raw(vec![0.0; 3]), &stats),
            Err(LseError::DimensionMismatch { .. })
        ));
        assert!(matches!(fit_normalization(&[two], "m"), Err(LseError::TooFewVectors(1))));
    }

    #[test]
    fn normalising_the_mean_gives_zero_and_identity_stats_are_identity() {
        let stats = NormalizationStats {
            mean: vec![1.0, -2.0, 3.0],
            sd: vec![2.0, 0.5, 1.0],
            zero_variance: vec![false; 3],
            model_id: "x".into(),
        };
        let z = normalize(&LseVector::raw(stats.mean.clone()), &stats).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));

        let id = NormalizationStats {
            mean: vec![0.0; 3],
            sd: vec![1.0; 3],
            zero_variance: vec![false; 3],
            model_id: "x".into(),
        };
        let v = LseVector::raw(vec![0.25, -7.0, 3.5]);
        assert_eq!(normalize(&v, &id).unwrap().values, v.values);
    }

    #[test]
    fn normalise_then_refit_is_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let raw: Vec<LseVector> = (0..1000)
            .map(|_| LseVector::raw((0..11).map(|c| rng.random_range(-5.0..5.0) * (c as f64 + 1.0) + c as f64).collect()))
            .collect();
        let stats = fit_normalization(&raw, "m").unwrap();
        let normed: Vec<LseVector> = raw
            .iter()
            .map(|v| LseVector::raw(normalize(v, &stats).unwrap().values))
            .collect();
        let refit = fit_normalization(&normed, "m").unwrap();
        for c in 0..11 {
            assert!(refit.mean[c].abs() < 1e-9);
            assert!((refit.sd[c] - 1.0).abs() < 1e-9);
        }
        // denormalise round trip
        for v in raw.iter().take(50) {
            let n = normalize(v, &stats).unwrap();
            for c in 0..11 {
                let back = n.values[c] * stats.sd[c] + stats.mean[c];
                assert!((back - v.values[c]).abs() <= 1e-12 * v.values[c].abs().max(1.0));
            }
        }
    }
}
