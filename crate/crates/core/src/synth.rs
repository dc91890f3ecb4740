//! Deterministic synthetic world: boxes on a ground plane, ray-cast LiDAR
//! scans and grayscale camera images.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::projection::{CameraView, GrayImage, Intrinsics, PointCloud, RigidTransform};

/// Range attenuation of the intensity model, per m².
pub const INTENSITY_ATTENUATION: f64 = 0.01;
pub const SKY_VALUE: f64 = 0.8;
/// Boxes keep at least this horizontal clearance from keep-out points.
pub const SPAWN_CLEARANCE: f64 = 1.5;

const GOLDEN: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub reflectivity: f64,
    pub albedo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub surface: Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub extent: f64,
    pub ground: Surface,
    pub boxes: Vec<WorldBox>,
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    normal: Vector3<f64>,
    surface: Surface,
}

impl WorldBox {
    fn horizontal_distance(&self, p: &Vector3<f64>) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        let dz = (self.min.z - p.z).max(0.0).max(p.z - self.max.z);
        self.horizontal_distance(p).hypot(dz)
    }

    /// Slab test; entry hits only (origins inside a box see nothing of it).
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            if ta > t0 {
                t0 = ta;
                axis = a;
            }
            t1 = t1.min(tb);
        }
        if t0 > t1 || t0 <= 0.0 {
            return None;
        }
        let mut n = Vector3::zeros();
        n[axis] = -d[axis].signum();
        Some((t0, n))
    }
}

/// Seeded world; no box comes within [`SPAWN_CLEARANCE`] of the origin.
pub fn generate_world(seed: u64, n_boxes: usize, extent: f64) -> Result<World> {
    generate_world_avoiding(seed, n_boxes, extent, &[Vector3::zeros()])
}

/// Like [`generate_world`], keeping every box clear of each point in
/// `keep_out` (horizontal distance). Boxes that cannot be placed after a
/// bounded number of draws are skipped.
pub fn generate_world_avoiding(seed: u64, n_boxes: usize, extent: f64, keep_out: &[Vector3<f64>]) -> Result<World> {
    if !(extent > 0.0) {
        return Err(Error::invalid(format!("world extent {extent} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = |rng: &mut ChaCha8Rng| Surface {
        reflectivity: rng.gen_range(0.1..1.0),
        albedo: rng.gen_range(0.1..1.0),
    };
    let ground = Surface {
        reflectivity: 0.3,
        albedo: 0.5,
    };
    let mut boxes = Vec::with_capacity(n_boxes);
    for _ in 0..n_boxes {
        for _attempt in 0..64 {
            let c = Vector3::new(rng.gen_range(-extent..extent), rng.gen_range(-extent..extent), 0.0);
            let half = Vector3::new(rng.gen_range(0.25..1.5), rng.gen_range(0.25..1.5), 0.0);
            let height = rng.gen_range(0.5..4.0);
            let b = WorldBox {
                min: Vector3::new(c.x - half.x, c.y - half.y, 0.0),
                max: Vector3::new(c.x + half.x, c.y + half.y, height),
                surface: surface(&mut rng),
            };
            if keep_out.iter().all(|p| b.horizontal_distance(p) >= SPAWN_CLEARANCE) {
                boxes.push(b);
                break;
            }
        }
    }
    Ok(World {
        seed,
        extent,
        ground,
        boxes,
    })
}

struct Nearby {
    boxes: Vec<(f64, WorldBox)>,
    top: f64,
}

impl World {
    /// Boxes that a ray from `origin` can reach within `max_range`, with
    /// their distance to `origin`, nearest first.
    fn nearby(&self, origin: &Vector3<f64>, max_range: f64) -> Nearby {
        let mut boxes: Vec<(f64, WorldBox)> = self
            .boxes
            .iter()
            .map(|b| (b.distance(origin), *b))
            .filter(|(d, _)| *d <= max_range)
            .collect();
        boxes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let top = boxes.iter().map(|(_, b)| b.max.z).fold(f64::NEG_INFINITY, f64::max);
        Nearby { boxes, top }
    }

    fn cast(&self, near: &Nearby, o: &Vector3<f64>, d: &Vector3<f64>, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if d.z < 0.0 && o.z > 0.0 {
            let t = -o.z / d.z;
            if t <= max_range {
                best = Some(Hit {
                    t,
                    normal: Vector3::z(),
                    surface: self.ground,
                });
            }
        }
        // A hit on a box is never closer than the box itself, and a rising
        // ray is above every box top beyond `reach`.
        let reach = if d.z > 0.0 { (near.top - o.z) / d.z } else { f64::INFINITY };
        for (dist, b) in &near.boxes {
            if *dist > reach || best.is_some_and(|h| *dist >= h.t) {
                break;
            }
            if let Some((t, normal)) = b.intersect(o, d) {
                if t <= max_range && best.is_none_or(|h| t < h.t) {
                    best = Some(Hit {
                        t,
                        normal,
                        surface: b.surface,
                    });
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarModel {
    pub beams: usize,
    pub points_per_ring: usize,
    /// Half of the vertical field of view, radians.
    pub half_fov: f64,
    pub max_range: f64,
    /// Standard deviation of optional Gaussian range noise (0 = off).
    pub range_noise: f64,
    /// Per-beam azimuth offset as a fraction of the azimuth step; beam `b`
    /// fires at `stagger · frac((b + 1)·φ)` steps, φ the golden ratio, so no
    /// beam shares the azimuth lattice of the grid.
    pub azimuth_stagger: f64,
}

impl LidarModel {
    /// 128 beams, ±45°.
    pub fn high_fidelity() -> Self {
        Self {
            beams: 128,
            points_per_ring: 1024,
            half_fov: PI / 4.0,
            max_range: 50.0,
            range_noise: 0.0,
            azimuth_stagger: 1.0,
        }
    }

    /// 64 beams, ±22.5°.
    pub fn low_fidelity() -> Self {
        Self {
            beams: 64,
            half_fov: PI / 8.0,
            ..Self::high_fidelity()
        }
    }
}

/// Ray-cast scan in the sensor frame (x forward, z up). Misses are omitted.
pub fn render_scan(world: &World, pose: &Pose, lidar: &LidarModel, noise_seed: u64) -> PointCloud {
    let iso = pose.isometry();
    let origin = iso.translation.vector;
    let boxes = world.nearby(&origin, lidar.max_range);
    let rays: Vec<(usize, Vector3<f64>)> = (0..lidar.beams)
        .flat_map(|b| {
            let elev = if lidar.beams == 1 {
                0.0
            } else {
                -lidar.half_fov + 2.0 * lidar.half_fov * b as f64 / (lidar.beams - 1) as f64
            };
            let offset = lidar.azimuth_stagger * ((b + 1) as f64 * GOLDEN).fract();
            (0..lidar.points_per_ring).map(move |k| {
                let az = 2.0 * PI * (k as f64 + offset) / lidar.points_per_ring as f64;
                (
                    b * lidar.points_per_ring + k,
                    Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()),
                )
            })
        })
        .collect();
    let hits: Vec<(usize, Vector3<f64>, f64)> = rays
        .par_iter()
        .filter_map(|(i, d_local)| {
            let d = iso.rotation * d_local;
            world
                .cast(&boxes, &origin, &d, lidar.max_range)
                .map(|h| (*i, *d_local, h.t, h.surface.reflectivity))
        })
        .map(|(i, d, t, refl)| (i, d * t, refl / (1.0 + INTENSITY_ATTENUATION * t * t)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut points = Vec::with_capacity(hits.len());
    let mut intensities = Vec::with_capacity(hits.len());
    for (_, p, intensity) in hits {
        let p = if lidar.range_noise > 0.0 {
            let r = p.norm();
            let noisy = (r + lidar.range_noise * standard_normal(&mut rng)).max(1e-3);
            p * (noisy / r)
        } else {
            p
        };
        points.push(Point3::from(p));
        intensities.push(intensity);
    }
    PointCloud::new(points, intensities).expect("finite ray-cast points")
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Camera body frame: z forward, x right, y down.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSpec {
    pub name: String,
    pub intrinsics: Intrinsics,
    /// Camera-to-sensor transform.
    pub extrinsic: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub cameras: Vec<CameraSpec>,
    /// Unit vector towards the light, world frame.
    pub light_direction: Vector3<f64>,
}

/// Rotation from the camera body frame to a sensor frame looking along
/// azimuth `yaw` (x forward, z up).
pub fn camera_mount(yaw: f64, offset: Vector3<f64>) -> RigidTransform {
    // camera z → sensor x, camera x → sensor −y, camera y → sensor −z
    let base = UnitQuaternion::from_basis_unchecked(&[-Vector3::y(), -Vector3::z(), Vector3::x()]);
    let turn = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    Isometry3::from_parts(Translation3::from(offset), turn * base)
}

impl Rig {
    fn pinhole(width: usize, height: usize) -> Intrinsics {
        // 90° horizontal field of view
        let f = width as f64 / 2.0;
        Intrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    fn light() -> Vector3<f64> {
        Vector3::new(0.3, 0.2, 1.0).normalize()
    }

    /// Two forward cameras (small stereo baseline) and one to each side.
    pub fn high_fidelity(width: usize, height: usize) -> Self {
        let k = Self::pinhole(width, height);
        let cam = |name: &str, yaw: f64, y: f64| CameraSpec {
            name: name.to_string(),
            intrinsics: k,
            extrinsic: camera_mount(yaw, Vector3::new(0.1, y, 0.0)),
        };
        Self {
            cameras: vec![
                cam("front_left", 0.0, 0.1),
                cam("front_right", 0.0, -0.1),
                cam("left", PI / 2.0, 0.0),
                cam("right", -PI / 2.0, 0.0),
            ],
            light_direction: Self::light(),
        }
    }

    pub fn low_fidelity(width: usize, height: usize) -> Self {
        Self {
            cameras: vec![CameraSpec {
                name: "front".to_string(),
                intrinsics: Self::pinhole(width, height),
                extrinsic: camera_mount(0.0, Vector3::new(0.1, 0.0, 0.0)),
            }],
            light_direction: Self::light(),
        }
    }
}

/// One grayscale image per rig camera. Pixel centres sit at integer
/// coordinates.
pub fn render_images(world: &World, pose: &Pose, rig: &Rig, max_range: f64) -> Result<Vec<CameraView>> {
    let sensor = pose.isometry();
    let light = rig.light_direction.normalize();
    rig.cameras
        .iter()
        .map(|cam| {
            cam.intrinsics.validate()?;
            let to_world = sensor * cam.extrinsic;
            let origin = to_world.translation.vector;
            let boxes = world.nearby(&origin, max_range);
            let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
            let data: Vec<f64> = (0..w * h)
                .into_par_iter()
                .map(|i| {
                    let ray = cam.intrinsics.unproject((i % w) as f64, (i / w) as f64);
                    let d = (to_world.rotation * ray).normalize();
                    match world.cast(&boxes, &origin, &d, max_range) {
                        Some(hit) => hit.surface.albedo * hit.normal.dot(&light).max(0.0),
                        None => SKY_VALUE,
                    }
                })
                .collect();
            CameraView::new(GrayImage::new(w, h, data)?, cam.intrinsics, cam.extrinsic)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world() -> World {
        generate_world(1, 0, 20.0).unwrap()
    }

    fn small_lidar(beams: usize, half_fov: f64) -> LidarModel {
        LidarModel {
            beams,
            points_per_ring: 90,
            half_fov,
            max_range: 30.0,
            range_noise: 0.0,
            azimuth_stagger: 0.0,
        }
    }

    #[test]
    fn pruned_cast_matches_exhaustive_cast() {
        let world = generate_world(11, 300, 40.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let o = Vector3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(0.2..3.0));
            let near = world.nearby(&o, 50.0);
            let all = Nearby {
                boxes: world.boxes.iter().map(|b| (0.0, *b)).collect(),
                top: f64::INFINITY,
            };
            for _ in 0..500 {
                let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
                let a = world.cast(&near, &o, &d, 50.0).map(|h| h.t);
                let b = world.cast(&all, &o, &d, 50.0).map(|h| h.t);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn worlds_are_seeded() {
        assert!(open_world().boxes.is_empty());
        let a = generate_world(7, 30, 25.0).unwrap();
        assert_eq!(a, generate_world(7, 30, 25.0).unwrap());
        assert!(a.boxes.iter().all(|b| b.horizontal_distance(&Vector3::zeros()) >= SPAWN_CLEARANCE));
        let differing = (0..100u64)
            .filter(|s| generate_world(*s, 5, 25.0).unwrap().boxes != generate_world(s + 100, 5, 25.0).unwrap().boxes)
            .count();
        assert_eq!(differing, 100);
        assert!(generate_world(1, 1, 0.0).is_err());
    }

    #[test]
    fn ground_only_scan_lies_on_plane() {
        let pose = Pose::from_position_yaw(Vector3::new(0.0, 0.0, 1.0), 0.4);
        let scan = render_scan(&open_world(), &pose, &small_lidar(32, PI / 4.0), 0);
        assert!(!scan.is_empty());
        let iso = pose.isometry();
        for p in &scan.points {
            assert!((iso * p).z.abs() < 1e-9);
        }
    }

    #[test]
    fn beam_count_and_range_cutoff() {
        // open ground: 62 of 128 HF beams and 30 of 64 LF beams reach the
        // plane within range; boxes favour LF's near-horizontal beams
        let pose = Pose::from_position_yaw(Vector3::new(0.0, 0.0, 1.2), 0.0);
        let hf = render_scan(&open_world(), &pose, &small_lidar(128, PI / 4.0), 0).len();
        let lf = render_scan(&open_world(), &pose, &small_lidar(64, PI / 8.0), 0).len();
        assert!(hf as f64 >= 1.9 * lf as f64, "{hf} vs {lf}");
        let mut short = small_lidar(64, PI / 8.0);
        short.max_range = 0.1;
        assert!(render_scan(&open_world(), &pose, &short, 0).is_empty());
    }

    #[test]
    fn sky_camera_is_uniform() {
        let mut rig = Rig::low_fidelity(32, 24);
        // optical axis straight up
        rig.cameras[0].extrinsic = Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_basis_unchecked(&[-Vector3::y(), Vector3::x(), Vector3::z()]),
        );
        let pose = Pose::from_position_yaw(Vector3::new(0.0, 0.0, 1.0), 0.0);
        let views = render_images(&open_world(), &pose, &rig, 50.0).unwrap();
        assert!(views[0].image.data.iter().all(|v| *v == SKY_VALUE));
    }

    #[test]
    fn box_projection_matches_analytic_bounds() {
        let world = World {
            seed: 0,
            extent: 20.0,
            ground: Surface {
                reflectivity: 0.3,
                albedo: 0.5,
            },
            boxes: vec![WorldBox {
                min: Vector3::new(8.0, -1.0, 0.5),
                max: Vector3::new(9.0, 1.0, 2.5),
                surface: Surface {
                    reflectivity: 0.5,
                    albedo: 0.4,
                },
            }],
        };
        let rig = Rig::low_fidelity(200, 150);
        let pose = Pose::from_position_yaw(Vector3::new(-0.1, 0.0, 1.5), 0.0);
        let views = render_images(&world, &pose, &rig, 50.0).unwrap();
        let img = &views[0].image;
        let k = &rig.cameras[0].intrinsics;
        // the front face at x = 8 spans y ∈ [−1, 1], z ∈ [0.5, 2.5]
        let cam = pose.isometry() * rig.cameras[0].extrinsic;
        let corners = [(-1.0, 0.5), (1.0, 0.5), (-1.0, 2.5), (1.0, 2.5)].map(|(y, z)| {
            let pc = cam.inverse_transform_point(&Point3::new(8.0, y, z));
            k.project(&pc.coords).unwrap()
        });
        let (u0, u1) = corners.iter().fold((f64::MAX, f64::MIN), |a, c| (a.0.min(c.0), a.1.max(c.0)));
        let (v0, v1) = corners.iter().fold((f64::MAX, f64::MIN), |a, c| (a.0.min(c.1), a.1.max(c.1)));
        // the front face points away from the light and renders black;
        // ground and sky never do
        let mut bb = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..img.height {
            for x in 0..img.width {
                if img.get(x, y) == 0.0 {
                    bb = (bb.0.min(x), bb.1.max(x), bb.2.min(y), bb.3.max(y));
                }
            }
        }
        assert!((bb.0 as f64 - u0).abs() <= 2.0 && (bb.1 as f64 - u1).abs() <= 2.0, "{bb:?} {u0} {u1}");
        assert!((bb.2 as f64 - v0).abs() <= 2.0 && (bb.3 as f64 - v1).abs() <= 2.0, "{bb:?} {v0} {v1}");
        assert_eq!(render_images(&world, &pose, &rig, 50.0).unwrap()[0].image, *img);
    }
}
