//! Scene directory layout: `camera.json`, `depth.dpth`, `mask_<k>.png`
//! (8-bit, value `k` on the mask), `lse.lsem` and `gt_poses.json`.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::scene::{OracleScene, PlacedObject};
use super::SynthError;
use crate::camera::CameraIntrinsics;
use crate::lsemap::{LseMap, LseMapError};
use crate::raster::{DepthMap, PixelMask, RasterError};

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Everything a scene directory holds.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub camera: CameraIntrinsics,
    pub depth: DepthMap,
    /// Sorted by instance id.
    pub masks: Vec<(u32, PixelMask)>,
    pub lse: LseMap,
    pub gt: Vec<PlacedObject>,
}

impl OracleScene {
    pub fn to_data(&self) -> SceneData {
        let mut masks = self.masks.clone();
        masks.sort_by_key(|(k, _)| *k);
        SceneData {
            camera: self.camera,
            depth: self.maps.depth_map(),
            masks,
            lse: self.lse.clone(),
            gt: self.gt.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format_version: Option<u32>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    format_version: u32,
    poses: Vec<PlacedObject>,
}

fn check_version(found: Option<u32>, what: &str) -> Result<(), SynthError> {
    match found {
        Some(v) if v != SCENE_FORMAT_VERSION => Err(SynthError::Version(format!("{what} version {v}"))),
        _ => Ok(()),
    }
}

fn json_error(what: &str, e: serde_json::Error) -> SynthError {
    match e.classify() {
        serde_json::error::Category::Io => SynthError::Io(e.into()),
        serde_json::error::Category::Eof => SynthError::Truncated(format!("{what}: {e}")),
        _ => SynthError::Schema(format!("{what}: {e}")),
    }
}

fn depth_error(e: RasterError) -> SynthError {
    match e {
        RasterError::Io(e) => SynthError::Io(e),
        RasterError::Format(m) if m.contains("magic") => SynthError::Version(format!("depth.dpth: {m}")),
        other => SynthError::Truncated(format!("depth.dpth: {other}")),
    }
}

fn lsem_error(e: LseMapError) -> SynthError {
    match e {
        LseMapError::Io(e) => SynthError::Io(e),
        LseMapError::Version(m) => SynthError::Version(format!("lse.lsem: {m}")),
        t @ LseMapError::Truncated { .. } => SynthError::Truncated(format!("lse.lsem: {t}")),
    }
}

pub fn write_camera(path: &Path, cam: &CameraIntrinsics) -> Result<(), SynthError> {
    let file = CameraFile {
        format_version: Some(SCENE_FORMAT_VERSION),
        fx: cam.fx,
        fy: cam.fy,
        cx: cam.cx,
        cy: cam.cy,
        width: cam.width,
        height: cam.height,
    };
    fs::write(path, serde_json::to_string_pretty(&file).expect("serialisable"))?;
    Ok(())
}

pub fn read_camera(path: &Path) -> Result<CameraIntrinsics, SynthError> {
    let file: CameraFile = serde_json::from_slice(&fs::read(path)?).map_err(|e| json_error("camera.json", e))?;
    check_version(file.format_version, "camera.json")?;
    CameraIntrinsics::new(file.fx, file.fy, file.cx, file.cy, file.width, file.height)
        .map_err(|e| SynthError::Schema(format!("camera.json: {e}")))
}

pub fn write_poses(path: &Path, poses: &[PlacedObject]) -> Result<(), SynthError> {
    let file = PoseFile {
        format_version: SCENE_FORMAT_VERSION,
        poses: poses.to_vec(),
    };
    fs::write(path, serde_json::to_string_pretty(&file).expect("serialisable"))?;
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<PlacedObject>, SynthError> {
    let file: PoseFile = serde_json::from_slice(&fs::read(path)?).map_err(|e| json_error("gt_poses.json", e))?;
    check_version(Some(file.format_version), "gt_poses.json")?;
    for p in &file.poses {
        p.pose().map_err(|e| SynthError::Schema(format!("gt_poses.json: {e}")))?;
    }
    Ok(file.poses)
}

fn write_mask(path: &Path, id: u32, mask: &PixelMask) -> Result<(), SynthError> {
    let value = u8::try_from(id).map_err(|_| SynthError::InvalidSpec(format!("instance id {id} above 255")))?;
    let img = GrayImage::from_fn(mask.width, mask.height, |x, y| Luma([if mask.get(x, y) { value } else { 0 }]));
    img.save(path).map_err(|e| SynthError::Png(e.to_string()))
}

fn read_mask(path: &Path) -> Result<PixelMask, SynthError> {
    let img = image::open(path).map_err(|e| SynthError::Png(format!("{}: {e}", path.display())))?;
    let img = img.to_luma8();
    Ok(PixelMask {
        width: img.width(),
        height: img.height(),
        data: img.pixels().map(|p| p.0[0] != 0).collect(),
    })
}

/// Instance masks in `dir`, sorted by id.
pub fn read_masks(dir: &Path) -> Result<Vec<(u32, PixelMask)>, SynthError> {
    let mut masks = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(id) = name.strip_prefix("mask_").and_then(|s| s.strip_suffix(".png")) else {
            continue;
        };
        let Ok(id) = id.parse::<u32>() else { continue };
        masks.push((id, read_mask(&dir.join(name))?));
    }
    masks.sort_by_key(|(k, _)| *k);
    Ok(masks)
}

pub fn write_scene(dir: &Path, scene: &SceneData) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    write_camera(&dir.join("camera.json"), &scene.camera)?;
    scene.depth.write(&dir.join("depth.dpth")).map_err(depth_error)?;
    for (id, mask) in &scene.masks {
        write_mask(&dir.join(format!("mask_{id}.png")), *id, mask)?;
    }
    scene.lse.write(&dir.join("lse.lsem")).map_err(lsem_error)?;
    write_poses(&dir.join("gt_poses.json"), &scene.gt)
}

pub fn read_scene(dir: &Path) -> Result<SceneData, SynthError> {
    let camera = read_camera(&dir.join("camera.json"))?;
    let depth = DepthMap::read(&dir.join("depth.dpth")).map_err(depth_error)?;
    let masks = read_masks(dir)?;
    let lse = LseMap::read(&dir.join("lse.lsem")).map_err(lsem_error)?;
    let gt = read_poses(&dir.join("gt_poses.json"))?;
    let (w, h) = (camera.width, camera.height);
    let sizes_ok = depth.width == w
        && depth.height == h
        && lse.width == w
        && lse.height == h
        && masks.iter().all(|(_, m)| m.width == w && m.height == h);
    if !sizes_ok {
        return Err(SynthError::Schema("scene buffers disagree with the camera size".into()));
    }
    Ok(SceneData {
        camera,
        depth,
        masks,
        lse,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use nalgebra::{Rotation3, Vector3};

    fn sample_scene() -> SceneData {
        let camera = CameraIntrinsics::new(500.0, 510.0, 15.5, 11.5, 32, 24).unwrap();
        let mut depth = DepthMap {
            width: 32,
            height: 24,
            data: vec![f32::INFINITY; 32 * 24],
        };
        let mut lse = LseMap::empty(32, 24, 11);
        let mut m1 = PixelMask::empty(32, 24);
        let mut m2 = PixelMask::empty(32, 24);
        for i in 0..32 * 24 {
            let (x, y) = ((i % 32) as u32, (i / 32) as u32);
            if (x as i32 - 10).pow(2) + (y as i32 - 10).pow(2) < 30 {
                depth.data[i] = 500.0 + 0.37 * x as f32;
                m1.set(x, y, true);
                for (c, v) in lse.pixel_mut(i).iter_mut().enumerate() {
                    *v = (c as f32 + 0.1) * 1.0e-3 * (x + 3 * y) as f32;
                }
            } else if x > 22 && y > 15 {
                depth.data[i] = 612.25;
                m2.set(x, y, true);
            }
        }
        let p = Pose::from_rotation(Rotation3::from_euler_angles(0.3, -1.2, 2.0), Vector3::new(0.1, -3.3, 555.5));
        SceneData {
            camera,
            depth,
            masks: vec![(1, m1), (2, m2)],
            lse,
            gt: vec![PlacedObject::new("a", &p), PlacedObject::new("b", &Pose::identity())],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let scene = sample_scene();
        write_scene(dir.path(), &scene).unwrap();
        assert_eq!(read_scene(dir.path()).unwrap(), scene);
    }

    #[test]
    fn corrupted_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &sample_scene()).unwrap();
        let path = dir.path().join("lse.lsem");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_scene(dir.path()), Err(SynthError::Version(_))));
    }

    #[test]
    fn truncated_map_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &sample_scene()).unwrap();
        let path = dir.path().join("lse.lsem");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(read_scene(dir.path()), Err(SynthError::Truncated(_))));
    }

    #[test]
    fn camera_without_fy_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &sample_scene()).unwrap();
        fs::write(
            dir.path().join("camera.json"),
            r#"{"fx": 500.0, "cx": 15.5, "cy": 11.5, "width": 32, "height": 24}"#,
        )
        .unwrap();
        assert!(matches!(read_scene(dir.path()), Err(SynthError::Schema(_))));
    }

    #[test]
    fn camera_version_is_optional_but_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.json");
        fs::write(&path, r#"{"fx": 1.0, "fy": 1.0, "cx": 0.0, "cy": 0.0, "width": 2, "height": 2}"#).unwrap();
        assert!(read_camera(&path).is_ok());
        fs::write(
            &path,
            r#"{"format_version": 9, "fx": 1.0, "fy": 1.0, "cx": 0.0, "cy": 0.0, "width": 2, "height": 2}"#,
        )
        .unwrap();
        assert!(matches!(read_camera(&path), Err(SynthError::Version(_))));
    }
}
