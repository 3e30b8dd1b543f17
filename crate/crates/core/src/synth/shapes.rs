//! Procedural star-shaped test models.
//!
//! Every model is a latitude/longitude grid whose vertex at polar angle
//! `theta` and azimuth `phi` sits at distance `r(theta, phi)` from the origin
//! along the unit direction. Triangles are wound counter-clockwise seen from
//! outside, so computed normals point outward.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::SurfaceMesh;

fn direction(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Lat-long mesh with `stacks` bands and `slices` meridians.
pub fn star_mesh(stacks: usize, slices: usize, radius: impl Fn(f64, f64) -> f64) -> SurfaceMesh {
    assert!(stacks >= 2 && slices >= 3, "grid too coarse");
    let mut vertices = Vec::with_capacity(2 + (stacks - 1) * slices);
    vertices.push(Point3::from(direction(0.0, 0.0) * radius(0.0, 0.0)));
    for i in 1..stacks {
        let theta = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(Point3::from(direction(theta, phi) * radius(theta, phi)));
        }
    }
    vertices.push(Point3::from(direction(PI, 0.0) * radius(PI, 0.0)));

    let north = 0u32;
    let south = (vertices.len() - 1) as u32;
    let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
    let mut triangles = Vec::with_capacity(2 * stacks * slices);
    for j in 0..slices {
        triangles.push([north, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a0, a1, b0, b1) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            triangles.push([a0, b0, a1]);
            triangles.push([a1, b0, b1]);
        }
    }
    for j in 0..slices {
        triangles.push([ring(stacks - 1, j), south, ring(stacks - 1, j + 1)]);
    }
    SurfaceMesh::new(vertices, triangles, None).expect("procedural mesh is valid")
}

pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> SurfaceMesh {
    star_mesh(stacks, slices, |_, _| radius)
}

/// Smooth asymmetric blob: a sphere of radius `base` with random Gaussian
/// bumps and dents.
pub fn blob(base: f64, seed: u64, stacks: usize, slices: usize) -> SurfaceMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(Vector3<f64>, f64, f64)> = (0..7)
        .map(|m| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            let centre = Vector3::new(s * phi.cos(), s * phi.sin(), z);
            let amp = if m % 3 == 2 {
                -rng.random_range(0.08..0.15)
            } else {
                rng.random_range(0.15..0.35)
            };
            (centre, amp, rng.random_range(3.0..8.0))
        })
        .collect();
    star_mesh(stacks, slices, |theta, phi| {
        let d = direction(theta, phi);
        let shape: f64 = bumps.iter().map(|(c, a, k)| a * (k * (d.dot(c) - 1.0)).exp()).sum();
        base * (1.0 + shape)
    })
}

/// Model invariant under a quarter turn about +z (requires `slices % 4 == 0`
/// so the vertex grid maps onto itself).
pub fn four_fold(base: f64, stacks: usize, slices: usize) -> SurfaceMesh {
    assert_eq!(slices % 4, 0, "slices must be a multiple of 4");
    star_mesh(stacks, slices, |theta, phi| {
        let lobes = 0.22 * (4.0 * phi).cos() * theta.sin().powi(2);
        let cap = 0.3 * (5.0 * (theta.cos() - 1.0)).exp();
        base * (1.0 + lobes + cap - 0.12 * theta.cos())
    })
}

/// A named model used by the synthetic benchmark.
#[derive(Debug, Clone)]
pub struct BenchModel {
    pub id: String,
    pub mesh: SurfaceMesh,
    pub symmetric: bool,
}

/// Three millimetre-scale models: two asymmetric blobs and one with 4-fold
/// rotational symmetry.
pub fn benchmark_models() -> Vec<BenchModel> {
    vec![
        BenchModel {
            id: "blob_a".into(),
            mesh: blob(42.0, 11, 24, 48),
            symmetric: false,
        },
        BenchModel {
            id: "blob_b".into(),
            mesh: blob(50.0, 23, 24, 48),
            symmetric: false,
        },
        BenchModel {
            id: "quad".into(),
            mesh: four_fold(45.0, 24, 48),
            symmetric: true,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn sphere_normals_point_outward() {
        let m = uv_sphere(2.0, 8, 12);
        assert_eq!(m.triangles().len(), 2 * 12 + 2 * 12 * 6);
        for t in 0..m.triangles().len() {
            let c = m.triangle_points(t).iter().fold(Vector3::zeros(), |a, p| a + p.coords) / 3.0;
            assert!(m.face_normal(t).dot(&c) > 0.0);
        }
        for (v, n) in m.vertices().iter().zip(m.normals()) {
            assert!(n.dot(&v.coords) > 0.0);
        }
    }

    #[test]
    fn four_fold_model_maps_onto_itself() {
        let m = four_fold(10.0, 12, 16);
        let quarter = Rotation3::from_axis_angle(&Vector3::z_axis(), PI / 2.0);
        for v in m.vertices() {
            let r = quarter * v;
            let closest = m.vertices().iter().map(|w| (w - r).norm()).fold(f64::INFINITY, f64::min);
            assert!(closest < 1e-9);
        }
    }

    #[test]
    fn blobs_are_deterministic_and_star_shaped() {
        let a = blob(40.0, 5, 12, 24);
        let b = blob(40.0, 5, 12, 24);
        assert_eq!(a.vertices(), b.vertices());
        assert!(a.vertices().iter().all(|v| v.coords.norm() > 20.0));
    }
}
