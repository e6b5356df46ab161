use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::{Splat, SplatKind};

fn random_ellipsoid(rng: &mut ChaCha8Rng) -> Ellipsoid {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Ellipsoid::new(
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        Rotation3::new(axis * rng.random_range(0.0..3.0)),
        Vector3::new(rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.02..1.0)),
    )
}

fn random_point(rng: &mut ChaCha8Rng, e: &Ellipsoid) -> Vector3<f64> {
    e.center + Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
}

/// Minimum distance from `p` to a latitude-longitude sampling of the surface.
fn sampled_distance(e: &Ellipsoid, p: &Vector3<f64>, per_axis: usize) -> f64 {
    let local = e.rotation.inverse() * (p - e.center);
    let a = e.semi_axes;
    let mut best = f64::INFINITY;
    for i in 0..per_axis {
        let theta = std::f64::consts::PI * (i as f64 + 0.5) / per_axis as f64;
        let (st, ct) = theta.sin_cos();
        for j in 0..per_axis {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / per_axis as f64;
            let (sp, cp) = phi.sin_cos();
            let s = Vector3::new(a.x * st * cp, a.y * st * sp, a.z * ct);
            best = best.min((s - local).norm_squared());
        }
    }
    best.sqrt()
}

#[test]
fn exterior_point_on_major_axis() {
    let e = Ellipsoid::new(Vector3::zeros(), Rotation3::identity(), Vector3::new(2.0, 1.0, 1.0));
    let q = closest_point_on_ellipsoid(&e, &Vector3::new(5.0, 0.0, 0.0));
    assert!((q - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
}

#[test]
fn sphere_case() {
    let e = Ellipsoid::new(Vector3::zeros(), Rotation3::identity(), Vector3::new(1.0, 1.0, 1.0));
    let p = Vector3::new(0.0, 0.0, 3.0);
    let q = closest_point_on_ellipsoid(&e, &p);
    assert!((q - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    assert!(((p - q).norm() - 2.0).abs() < 1e-12);
}

#[test]
fn interior_tie_is_broken_deterministically() {
    let e = Ellipsoid::new(Vector3::zeros(), Rotation3::identity(), Vector3::new(3.0, 2.0, 1.0));
    let q = closest_point_on_ellipsoid(&e, &Vector3::zeros());
    assert!((q - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    let q = closest_point_on_ellipsoid(&e, &Vector3::new(0.5, 0.0, 0.0));
    assert!(q.z < 0.0 && (e.level(&q) - 1.0).abs() < 1e-9);
    // Ridge solution: x = a^2 y / (a^2 - b^2) along the major axis.
    assert!((q.x - 9.0 * 0.5 / 8.0).abs() < 1e-12);
}

#[test]
fn results_lie_on_the_surface() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let e = random_ellipsoid(&mut rng);
        let p = if rng.random_bool(0.3) {
            e.center + e.rotation * e.semi_axes.component_mul(&Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ))
        } else {
            random_point(&mut rng, &e)
        };
        let q = closest_point_on_ellipsoid(&e, &p);
        assert!((e.level(&q) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn matches_dense_surface_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut coarse_err, mut fine_err) = (0.0, 0.0);
    for _ in 0..100 {
        let e = random_ellipsoid(&mut rng);
        let p = random_point(&mut rng, &e);
        if e.level(&p) < 1.0 {
            continue;
        }
        let d = (closest_point_on_ellipsoid(&e, &p) - p).norm();
        let coarse = sampled_distance(&e, &p, 100);
        let fine = sampled_distance(&e, &p, 500);
        assert!(fine - d > -1e-9, "oracle below the solver: {fine} < {d}");
        assert!(fine - d < 2e-3);
        coarse_err += coarse - d;
        fine_err += fine - d;
    }
    assert!(fine_err < coarse_err);
}

fn isotropic_splat(mean: Vector3<f64>, sigma: f64, opacity: f64) -> Splat {
    Splat::new(mean, Vector3::repeat(sigma), [1.0, 0.0, 0.0, 0.0], opacity, SplatKind::Volumetric).unwrap()
}

fn sphere(id: usize, center: Vector3<f64>, radius: f64) -> WorldSphere {
    WorldSphere { id, link: 0, center, radius }
}

#[test]
fn single_splat_distance_and_direction() {
    // k_sigma = 2 turns sigma 0.5 into a unit sphere.
    let scene = SplatScene::new(vec![isotropic_splat(Vector3::zeros(), 0.5, 1.0)]).unwrap();
    let res = query_scene_geometric(&scene, &[sphere(0, Vector3::new(3.0, 0.0, 0.0), 0.1)], 5.0, 0.0);
    assert_eq!(res.len(), 1);
    assert!((res[0].distance - 1.9).abs() < 1e-12);
    assert!((res[0].direction - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    assert_eq!(res[0].backend, BackendKind::Geometric);
    assert!(query_scene_geometric(&scene, &[sphere(0, Vector3::new(3.0, 0.0, 0.0), 0.1)], 1.0, 0.0).is_empty());
}

#[test]
fn opacity_filter() {
    let scene = SplatScene::new(vec![isotropic_splat(Vector3::zeros(), 0.5, 0.1)]).unwrap();
    let s = [sphere(0, Vector3::new(3.0, 0.0, 0.0), 0.1)];
    assert!(query_scene_geometric(&scene, &s, 5.0, 0.5).is_empty());
    assert_eq!(query_scene_geometric(&scene, &s, 5.0, 0.0).len(), 1);
}

#[test]
fn interior_centre_reports_penetration() {
    let scene = SplatScene::new(vec![isotropic_splat(Vector3::zeros(), 0.5, 1.0)]).unwrap();
    let res = query_scene_geometric(&scene, &[sphere(0, Vector3::new(0.6, 0.0, 0.0), 0.1)], 1.0, 0.0);
    assert!((res[0].distance - (-0.4 - 0.1)).abs() < 1e-12);
    // Moving against `direction` leads out of the splat.
    assert!((res[0].direction - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> SplatScene {
    let splats = (0..n)
        .map(|_| {
            let kind = if rng.random_bool(0.5) { SplatKind::Flat } else { SplatKind::Volumetric };
            Splat::new(
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                Vector3::new(rng.random_range(0.005..0.1), rng.random_range(0.005..0.1), rng.random_range(0.005..0.1)),
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5],
                rng.random_range(0.0..1.0),
                kind,
            )
            .unwrap()
        })
        .collect();
    SplatScene::new(splats).unwrap()
}

fn random_spheres(rng: &mut ChaCha8Rng, n: usize) -> Vec<WorldSphere> {
    (0..n)
        .map(|id| {
            sphere(
                id,
                Vector3::new(rng.random_range(-1.3..1.3), rng.random_range(-1.3..1.3), rng.random_range(-1.3..1.3)),
                rng.random_range(0.02..0.15),
            )
        })
        .collect()
}

fn brute_force(scene: &SplatScene, spheres: &[WorldSphere], influence: f64, opacity_min: f64) -> Vec<DistanceResult> {
    let mut out = Vec::new();
    for s in spheres {
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for i in 0..scene.len() {
            if scene.splats()[i].opacity < opacity_min {
                continue;
            }
            let (d, dir) = point_splat_distance(scene, i, &s.center);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, dir));
            }
        }
        if let Some((d, dir)) = best {
            if d - s.radius <= influence {
                out.push(DistanceResult {
                    distance: d - s.radius,
                    direction: dir,
                    sphere_id: s.id,
                    backend: BackendKind::Geometric,
                    camera_id: None,
                });
            }
        }
    }
    out
}

#[test]
fn culling_is_transparent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let n = rng.random_range(1..60);
        let scene = random_scene(&mut rng, n);
        let spheres = random_spheres(&mut rng, 8);
        let influence = rng.random_range(0.05..0.6);
        let opacity_min = if rng.random_bool(0.5) { 0.0 } else { 0.4 };
        assert_eq!(
            query_scene_geometric(&scene, &spheres, influence, opacity_min),
            brute_force(&scene, &spheres, influence, opacity_min)
        );
    }
}

#[test]
fn direction_matches_finite_difference_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let mut checked = 0;
    while checked < 300 {
        let scene = random_scene(&mut rng, 20);
        let s = random_spheres(&mut rng, 1)[0];
        let Some(r) = query_scene_geometric(&scene, &[s], 10.0, 0.0).first().copied() else {
            continue;
        };
        let eval = |p: Vector3<f64>| query_scene_geometric(&scene, &[sphere(0, p, s.radius)], 10.0, 0.0)[0].distance;
        let grad = Vector3::from_fn(|k, _| {
            let mut e = Vector3::zeros();
            e[k] = h;
            (eval(s.center + e) - eval(s.center - e)) / (2.0 * h)
        });
        // Skip ties between splats, where the minimum is not differentiable.
        if (grad.norm() - 1.0).abs() > 1e-3 {
            continue;
        }
        let cosine = -r.direction.dot(&grad) / grad.norm();
        assert!(cosine > 0.999, "cosine {cosine}");
        assert!((r.direction.norm() - 1.0).abs() < 1e-9);
        checked += 1;
    }
}

#[test]
fn enlarging_splats_never_increases_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let scene = random_scene(&mut rng, 15);
        let spheres = random_spheres(&mut rng, 6);
        let grown: Vec<Splat> = scene
            .splats()
            .iter()
            .map(|s| Splat { scales: s.scales * rng.random_range(1.0..1.5), ..s.clone() })
            .collect();
        let grown = SplatScene::new(grown).unwrap();
        let before = query_scene_geometric(&scene, &spheres, 10.0, 0.0);
        let after = query_scene_geometric(&grown, &spheres, 10.0, 0.0);
        for (b, a) in before.iter().zip(&after) {
            assert!(a.distance <= b.distance + 1e-9);
        }
    }
}

#[test]
fn opacity_is_ignored_without_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scene = random_scene(&mut rng, 40);
    let spheres = random_spheres(&mut rng, 10);
    let relit: Vec<Splat> = scene
        .splats()
        .iter()
        .map(|s| Splat { opacity: rng.random_range(0.0..1.0), ..s.clone() })
        .collect();
    let relit = SplatScene::new(relit).unwrap();
    assert_eq!(query_scene_geometric(&scene, &spheres, 1.0, 0.0), query_scene_geometric(&relit, &spheres, 1.0, 0.0));
}
