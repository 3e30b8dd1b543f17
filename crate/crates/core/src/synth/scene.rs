//! Oracle scene rendering: depth, instance masks and per-pixel embeddings
//! produced from geometry, with optional noise.

use nalgebra::{Point2, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::camera::{CameraIntrinsics, Pose};
use crate::index::LseIndex;
use crate::lse::lse_raw;
use crate::lsemap::LseMap;
use crate::mesh::{PointSample, SampleCloud, SurfaceMesh};
use crate::raster::{mask_of, render, PixelMask, SceneMaps};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Additive Gaussian noise in normalised embedding units.
    pub lse_sd: f64,
    /// Square-kernel radius in pixels: positive dilates, negative erodes.
    pub mask_morph: i32,
    /// Fraction of foreground pixels whose embedding is dropped.
    pub dropout: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            lse_sd: 0.0,
            mask_morph: 0,
            dropout: 0.0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.lse_sd >= 0.0 && self.lse_sd.is_finite()) {
            return Err(SynthError::InvalidSpec("noise sd must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(SynthError::InvalidSpec("dropout must lie in [0, 1]".into()));
        }
        if self.mask_morph.unsigned_abs() > 64 {
            return Err(SynthError::InvalidSpec("mask morphology radius above 64 px".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacedObject {
    pub model_id: String,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
}

impl PlacedObject {
    pub fn new(model_id: &str, pose: &Pose) -> Self {
        Self {
            model_id: model_id.to_string(),
            rotation: pose.rotation_row_major(),
            t: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }

    pub fn pose(&self) -> Result<Pose, SynthError> {
        Pose::from_row_major(&self.rotation, &self.t).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }
}

/// Object `k` of the list is rendered as instance `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub objects: Vec<PlacedObject>,
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.camera
            .validate()
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        self.noise.validate()?;
        if self.objects.len() > 255 {
            return Err(SynthError::InvalidSpec("at most 255 objects per scene".into()));
        }
        for o in &self.objects {
            if !(o.pose()?.translation.z > 0.0) {
                return Err(SynthError::InvalidSpec(format!("object {} is not in front of the camera", o.model_id)));
            }
        }
        Ok(())
    }
}

/// Geometry and index of one model, with the sample cloud needed for exact
/// embedding recomputation.
pub struct OracleModel<'a> {
    pub mesh: &'a SurfaceMesh,
    pub index: &'a LseIndex,
    samples: Vec<PointSample>,
    cloud: SampleCloud,
}

impl<'a> OracleModel<'a> {
    pub fn new(mesh: &'a SurfaceMesh, index: &'a LseIndex) -> Self {
        let samples: Vec<PointSample> = index.entries().iter().map(|e| e.sample).collect();
        let cloud = SampleCloud::new(&samples);
        Self {
            mesh,
            index,
            samples,
            cloud,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    /// Pixels whose rendered point is farther than this from every index
    /// sample get no embedding.
    pub lookup_radius_cm: f64,
    /// Recompute the embedding at the rendered point instead of copying the
    /// nearest index entry.
    pub exact_lse: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            lookup_radius_cm: 3.0,
            exact_lse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScene {
    pub camera: CameraIntrinsics,
    pub maps: SceneMaps,
    /// `(instance id, mask)` for every object, in object order.
    pub masks: Vec<(u32, PixelMask)>,
    pub lse: LseMap,
    pub gt: Vec<PlacedObject>,
}

fn lookup<'m, 'a>(models: &'m [OracleModel<'a>], id: &str) -> Result<&'m OracleModel<'a>, SynthError> {
    models
        .iter()
        .find(|m| m.index.model_id() == id)
        .ok_or_else(|| SynthError::MissingIndex(id.to_string()))
}

pub fn render_scene(
    spec: &SceneSpec,
    models: &[OracleModel],
    options: &OracleOptions,
) -> Result<OracleScene, SynthError> {
    spec.validate()?;
    let Some(first) = models.first() else {
        return Err(SynthError::MissingIndex("no models supplied".into()));
    };
    let params = first.index.params();
    if models.iter().any(|m| m.index.params() != params) {
        return Err(SynthError::ParamsMismatch);
    }
    let cam = spec.camera;
    let mut maps = SceneMaps::for_camera(&cam);
    let mut placed = Vec::with_capacity(spec.objects.len());
    for (k, o) in spec.objects.iter().enumerate() {
        let model = lookup(models, &o.model_id)?;
        render(model.mesh, &o.pose()?, &cam, k as u32 + 1, &mut maps).map_err(|e| SynthError::Render(e.to_string()))?;
        placed.push(model);
    }

    let dim = first.index.dim();
    let mut lse = LseMap::empty(cam.width, cam.height, dim as u32);
    let radius = options.lookup_radius_cm / params.unit_scale_to_cm;
    for i in 0..maps.instance.len() {
        let inst = maps.instance[i];
        if inst == 0 {
            continue;
        }
        let model = placed[inst as usize - 1];
        let p = maps.object_points[i];
        let (entry, d2) = model.index.nearest_entry(&p);
        if d2.sqrt() > radius {
            continue;
        }
        if options.exact_lse {
            let normal = model.mesh.face_normal(maps.triangle[i] as usize);
            let neighbours: Vec<PointSample> = model
                .cloud
                .within(&p, params.radius_model())
                .into_iter()
                .map(|j| model.samples[j])
                .collect();
            if let Ok(v) = lse_raw(&neighbours, &p, &normal, params) {
                for (o, x) in lse.pixel_mut(i).iter_mut().zip(&v.values) {
                    *o = *x as f32;
                }
            }
        } else {
            for (o, x) in lse.pixel_mut(i).iter_mut().zip(&model.index.entries()[entry].raw) {
                *o = *x as f32;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = &spec.noise;
    if noise.lse_sd > 0.0 || noise.dropout > 0.0 {
        for i in 0..maps.instance.len() {
            let inst = maps.instance[i];
            if inst == 0 || !lse.is_valid(i) {
                continue;
            }
            if noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout {
                lse.clear_pixel(i);
                continue;
            }
            if noise.lse_sd > 0.0 {
                let sd = &placed[inst as usize - 1].index.stats().sd;
                for (c, v) in lse.pixel_mut(i).iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (*v as f64 + noise.lse_sd * sd[c] * z) as f32;
                }
            }
        }
    }

    let masks = (1..=spec.objects.len() as u32)
        .map(|k| (k, morph(&mask_of(&maps, k), noise.mask_morph)))
        .collect();
    Ok(OracleScene {
        camera: cam,
        maps,
        masks,
        lse,
        gt: spec.objects.clone(),
    })
}

/// Square-kernel dilation (`r > 0`) or erosion (`r < 0`); pixels outside
/// the image count as unset.
pub fn morph(mask: &PixelMask, r: i32) -> PixelMask {
    if r == 0 {
        return mask.clone();
    }
    let dilate = r > 0;
    let r = r.unsigned_abs() as i64;
    let (w, h) = (mask.width as i64, mask.height as i64);
    // separable: rows then columns
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = !dilate;
                for d in -r..=r {
                    let (sx, sy) = if horizontal { (x + d, y) } else { (x, y + d) };
                    let v = sx >= 0 && sy >= 0 && sx < w && sy < h && src[(sy * w + sx) as usize];
                    if dilate {
                        acc |= v;
                    } else {
                        acc &= v;
                    }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let rows = pass(&mask.data, true);
    PixelMask {
        width: mask.width,
        height: mask.height,
        data: pass(&rows, false),
    }
}

/// 640x480 camera with a 580 px focal length.
pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(580.0, 580.0, 319.5, 239.5, 640, 480).expect("valid intrinsics")
}

pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q)
}

/// Random placement of `count` objects drawn from `models` (`(id, diameter)`)
/// at depths 450-650 mm-equivalent, kept inside the image and apart enough
/// that no object hides most of another.
pub fn random_scene(
    models: &[(String, f64)],
    count: usize,
    camera: CameraIntrinsics,
    noise: NoiseParams,
    unit_scale_to_cm: f64,
    seed: u64,
) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_model = 0.1 / unit_scale_to_cm;
    let mut placed: Vec<(Point2<f64>, f64)> = Vec::new();
    let mut objects = Vec::with_capacity(count);
    for k in 0..count {
        let (id, diameter) = &models[if k < models.len() { k } else { rng.random_range(0..models.len()) }];
        let mut attempt = 0;
        loop {
            attempt += 1;
            let z = rng.random_range(450.0..650.0) * to_model;
            let r_px = 0.5 * diameter * camera.fx / z;
            let margin = r_px + 4.0;
            let u = rng.random_range(margin..(camera.width as f64 - margin).max(margin + 1.0));
            let v = rng.random_range(margin..(camera.height as f64 - margin).max(margin + 1.0));
            let c = Point2::new(u, v);
            let clear = placed.iter().all(|(o, ro)| (o - c).norm() >= 0.75 * (ro + r_px));
            if clear || attempt > 200 {
                let t = Vector3::new((u - camera.cx) / camera.fx * z, (v - camera.cy) / camera.fy * z, z);
                let pose = Pose::from_rotation(random_rotation(&mut rng).to_rotation_matrix(), t);
                objects.push(PlacedObject::new(id, &pose));
                placed.push((c, r_px));
                break;
            }
        }
    }
    SceneSpec {
        objects,
        camera,
        noise,
        seed: seed ^ 0x9e37_79b9_7f4a_7c15,
    }
}
