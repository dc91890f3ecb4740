//! Sampling LiDAR scans and camera images onto a DH grid.
//!
//! All sensors are expressed in a common base frame. The grid is defined at
//! the base origin; each grid direction is looked up in every sensor and the
//! measurements that fall on it are averaged. Cells without a measurement are
//! exactly zero.

use nalgebra::{Isometry3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::grid::{Channel, SphericalGrid};
use crate::kdtree::KdTree;

pub type RigidTransform = Isometry3<f64>;

/// Order of the channels inside a [`FeatureSphere`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Photometry = 0,
    Range = 1,
    Intensity = 2,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Photometry, Modality::Range, Modality::Intensity];
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub intensities: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, intensities: Vec<f64>) -> Result<Self> {
        if points.len() != intensities.len() {
            return Err(Error::shape(format!(
                "{} points but {} intensities",
                points.len(),
                intensities.len()
            )));
        }
        if points.iter().any(|p| p.coords.iter().any(|c| c.is_nan())) {
            return Err(Error::invalid("point cloud contains NaN coordinates"));
        }
        Ok(Self { points, intensities })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `transform` to every point.
    pub fn transformed(&self, transform: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| transform * p).collect(),
            intensities: self.intensities.clone(),
        }
    }
}

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at pixel coordinates (pixel centres at integers).
    /// `None` outside `[0, w−1] × [0, h−1]`.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        let (wmax, hmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(0.0..=wmax).contains(&u) || !(0.0..=hmax).contains(&v) {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

/// Pinhole intrinsics. Camera frame: `z` forward, `x` right, `y` down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame direction with positive depth.
    pub fn project(&self, d: &Vector3<f64>) -> Option<(f64, f64)> {
        if d.z <= 0.0 {
            return None;
        }
        Some((self.fx * d.x / d.z + self.cx, self.fy * d.y / d.z + self.cy))
    }

    /// Camera-frame ray through pixel `(u, v)`, not normalized.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub image: GrayImage,
    pub intrinsics: Intrinsics,
    /// Sensor → base.
    pub extrinsic: RigidTransform,
}

impl CameraView {
    pub fn new(image: GrayImage, intrinsics: Intrinsics, extrinsic: RigidTransform) -> Result<Self> {
        intrinsics.validate()?;
        if image.width != intrinsics.width || image.height != intrinsics.height {
            return Err(Error::shape(format!(
                "image is {}x{} but intrinsics expect {}x{}",
                image.width, image.height, intrinsics.width, intrinsics.height
            )));
        }
        Ok(Self {
            image,
            intrinsics,
            extrinsic,
        })
    }
}

/// Angular k-NN parameters for LiDAR sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarSampling {
    pub k: usize,
    /// Radians.
    pub max_angle: f64,
}

impl LidarSampling {
    /// `k = 1` within two azimuthal grid steps.
    pub fn for_grid(grid: &SphericalGrid) -> Self {
        Self {
            k: 1,
            max_angle: 2.0 * (std::f64::consts::PI / (2 * grid.bandwidth()) as f64),
        }
    }
}

/// Samples range and intensity onto the grid. Every grid direction averages
/// its `k` angularly nearest returns within `max_angle`; ranges are measured
/// from the base origin after applying `extrinsic`.
pub fn project_lidar(
    scan: &PointCloud,
    extrinsic: &RigidTransform,
    grid: &SphericalGrid,
    sampling: LidarSampling,
) -> Result<(Channel, Channel)> {
    if sampling.k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if !(sampling.max_angle > 0.0) {
        return Err(Error::invalid("max_angle must be positive"));
    }
    let mut dirs = Vec::with_capacity(scan.len() * 3);
    let mut ranges = Vec::with_capacity(scan.len());
    let mut intensities = Vec::with_capacity(scan.len());
    for (p, &i) in scan.points.iter().zip(&scan.intensities) {
        let q = extrinsic * p;
        let r = q.coords.norm();
        if r <= 0.0 || !r.is_finite() {
            continue;
        }
        dirs.extend_from_slice(&[q.x / r, q.y / r, q.z / r]);
        ranges.push(r);
        intensities.push(i);
    }
    let mut range = grid.zeros();
    let mut intensity = grid.zeros();
    if ranges.is_empty() {
        return Ok((range, intensity));
    }
    let tree = KdTree::new(dirs, 3)?;
    let chord = 2.0 * (0.5 * sampling.max_angle.min(std::f64::consts::PI)).sin();
    let max_sq = chord * chord;
    let side = grid.side();
    for j in 0..side {
        for k in 0..side {
            let d = grid.direction(j, k);
            let hits = tree.knn_within(&[d.x, d.y, d.z], sampling.k, max_sq);
            if hits.is_empty() {
                continue;
            }
            let n = hits.len() as f64;
            let r: f64 = hits.iter().map(|h| ranges[h.index]).sum::<f64>() / n;
            let i: f64 = hits.iter().map(|h| intensities[h.index]).sum::<f64>() / n;
            range.set(j, k, r);
            intensity.set(j, k, i);
        }
    }
    Ok((range, intensity))
}

/// Samples the photometry channel. Grid directions are treated as points at
/// infinity, so only the camera orientation matters; overlapping cameras
/// are averaged.
pub fn project_cameras(views: &[CameraView], grid: &SphericalGrid) -> Channel {
    let mut out = grid.zeros();
    if views.is_empty() {
        return out;
    }
    let inverse_rotations: Vec<_> = views.iter().map(|v| v.extrinsic.rotation.inverse()).collect();
    let side = grid.side();
    for j in 0..side {
        for k in 0..side {
            let d = grid.direction(j, k);
            let mut sum = 0.0;
            let mut count = 0usize;
            for (view, rot) in views.iter().zip(&inverse_rotations) {
                let dc = rot * d;
                if let Some((u, v)) = view.intrinsics.project(&dc) {
                    if let Some(value) = view.image.sample(u, v) {
                        sum += value;
                        count += 1;
                    }
                }
            }
            if count > 0 {
                out.set(j, k, sum / count as f64);
            }
        }
    }
    out
}

/// The fused input: photometry, range and intensity on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSphere {
    channels: [Channel; 3],
}

impl FeatureSphere {
    pub fn zeros(bandwidth: usize) -> Self {
        Self {
            channels: [
                Channel::zeros(bandwidth),
                Channel::zeros(bandwidth),
                Channel::zeros(bandwidth),
            ],
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.channels[0].bandwidth()
    }

    /// `(3, 2B, 2B)`
    pub fn shape(&self) -> (usize, usize, usize) {
        let (r, c) = self.channels[0].shape();
        (3, r, c)
    }

    pub fn channel(&self, modality: Modality) -> &Channel {
        &self.channels[modality as usize]
    }

    pub fn channel_mut(&mut self, modality: Modality) -> &mut Channel {
        &mut self.channels[modality as usize]
    }

    pub fn channels(&self) -> &[Channel; 3] {
        &self.channels
    }

    /// Mutable channels; shapes must be kept.
    pub fn channels_mut(&mut self) -> &mut [Channel; 3] {
        &mut self.channels
    }

    /// Copy with the photometry channel cleared (LiDAR-only operation).
    pub fn lidar_only(&self) -> Self {
        let mut out = self.clone();
        out.channels[0] = Channel::zeros(self.bandwidth());
        out
    }

    /// Every channel cyclically shifted by `steps` azimuth columns.
    pub fn roll_columns(&self, steps: isize) -> Self {
        Self {
            channels: [
                self.channels[0].roll_columns(steps),
                self.channels[1].roll_columns(steps),
                self.channels[2].roll_columns(steps),
            ],
        }
    }

    /// True when every sample is already representable as `f32`.
    pub fn is_quantized(&self) -> bool {
        self.channels
            .iter()
            .all(|c| c.as_slice().iter().all(|v| f64::from(*v as f32) == *v))
    }

    /// Rounds all samples to `f32` precision, the precision used on disk.
    pub fn quantized(&self) -> Self {
        let q = |c: &Channel| {
            let data = c.as_slice().iter().map(|v| *v as f32 as f64).collect();
            Channel::from_vec(c.bandwidth(), data).expect("same shape")
        };
        Self {
            channels: [q(&self.channels[0]), q(&self.channels[1]), q(&self.channels[2])],
        }
    }
}

/// Bundles the three channels after checking they share `grid`.
pub fn assemble_feature(
    photometry: Channel,
    range: Channel,
    intensity: Channel,
    grid: &SphericalGrid,
) -> Result<FeatureSphere> {
    photometry.check_grid(grid)?;
    range.check_grid(grid)?;
    intensity.check_grid(grid)?;
    Ok(FeatureSphere {
        channels: [photometry, range, intensity],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cloud(points: Vec<[f64; 3]>, intensity: f64) -> PointCloud {
        let n = points.len();
        PointCloud::new(
            points.into_iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
            vec![intensity; n],
        )
        .unwrap()
    }

    #[test]
    fn single_point_lands_on_nearest_cell() {
        let grid = SphericalGrid::new(16).unwrap();
        let scan = cloud(vec![[10.0, 0.0, 0.0]], 0.3);
        let (r, i) = project_lidar(&scan, &RigidTransform::identity(), &grid, LidarSampling::for_grid(&grid)).unwrap();
        // direction (1,0,0): θ = π/2 → ring B, φ = 0 → column 0
        assert_eq!(r.get(16, 0), 10.0);
        assert_eq!(i.get(16, 0), 0.3);
        // antipode (θ = π/2, φ = π)
        assert_eq!(r.get(16, 16), 0.0);
        assert!(r.count_nonzero() < 20);
    }

    #[test]
    fn empty_scan_gives_zero_channels() {
        let grid = SphericalGrid::new(8).unwrap();
        let (r, i) = project_lidar(&PointCloud::default(), &RigidTransform::identity(), &grid, LidarSampling::for_grid(&grid)).unwrap();
        assert_eq!(r.count_nonzero() + i.count_nonzero(), 0);
    }

    #[test]
    fn matches_exhaustive_angular_nearest_neighbour() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let grid = SphericalGrid::new(12).unwrap();
        let pts: Vec<[f64; 3]> = (0..10_000)
            .map(|_| {
                let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let s = rng.gen_range(1.0..30.0);
                [v[0] * s, v[1] * s, v[2] * s]
            })
            .collect();
        let intens: Vec<f64> = (0..pts.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let scan = PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(), intens.clone()).unwrap();
        let sampling = LidarSampling::for_grid(&grid);
        let (r, i) = project_lidar(&scan, &RigidTransform::identity(), &grid, sampling).unwrap();
        for j in 0..grid.side() {
            for k in 0..grid.side() {
                let d = grid.direction(j, k);
                let mut best: Option<(f64, usize)> = None;
                for (idx, p) in pts.iter().enumerate() {
                    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                    let cosang = ((p[0] * d.x + p[1] * d.y + p[2] * d.z) / n).clamp(-1.0, 1.0);
                    let ang = cosang.acos();
                    if ang <= sampling.max_angle && best.is_none_or(|b| ang < b.0) {
                        best = Some((ang, idx));
                    }
                }
                match best {
                    Some((_, idx)) => {
                        let n = (pts[idx][0].powi(2) + pts[idx][1].powi(2) + pts[idx][2].powi(2)).sqrt();
                        assert!((r.get(j, k) - n).abs() < 1e-9, "cell {j},{k}");
                        assert_eq!(i.get(j, k), intens[idx]);
                    }
                    None => assert_eq!(r.get(j, k), 0.0),
                }
            }
        }
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = SphericalGrid::new(10).unwrap();
        let pts: Vec<Point3<f64>> = (0..3000)
            .map(|_| Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0)))
            .collect();
        let inten: Vec<f64> = (0..pts.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let scan = PointCloud::new(pts.clone(), inten.clone()).unwrap();
        let s = LidarSampling::for_grid(&grid);
        let base = project_lidar(&scan, &RigidTransform::identity(), &grid, s).unwrap();

        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.reverse();
        perm.swap(3, 900);
        let shuffled = PointCloud::new(perm.iter().map(|&i| pts[i]).collect(), perm.iter().map(|&i| inten[i]).collect()).unwrap();
        assert_eq!(project_lidar(&shuffled, &RigidTransform::identity(), &grid, s).unwrap(), base);

        let doubled = PointCloud::new(
            pts.iter().chain(&pts).copied().collect(),
            inten.iter().chain(&inten).copied().collect(),
        )
        .unwrap();
        assert_eq!(project_lidar(&doubled, &RigidTransform::identity(), &grid, s).unwrap(), base);
    }

    #[test]
    fn yaw_rotated_scan_is_column_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grid = SphericalGrid::new(16).unwrap();
        let pts: Vec<Point3<f64>> = (0..20_000)
            .map(|_| Point3::new(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-3.0..3.0)))
            .collect();
        let scan = PointCloud::new(pts, vec![1.0; 20_000]).unwrap();
        let s = LidarSampling::for_grid(&grid);
        let (r0, _) = project_lidar(&scan, &RigidTransform::identity(), &grid, s).unwrap();
        let steps = 5;
        let yaw = RigidTransform::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_euler_angles(0.0, 0.0, steps as f64 * grid.azimuth_step()),
        );
        let (r1, _) = project_lidar(&scan.transformed(&yaw), &RigidTransform::identity(), &grid, s).unwrap();
        let shifted = r0.roll_columns(steps);
        let mismatched = r1
            .as_slice()
            .iter()
            .zip(shifted.as_slice())
            .filter(|(a, b)| (*a - *b).abs() > 1e-9)
            .count();
        assert_eq!(mismatched, 0);
    }

    fn forward_camera(value: f64, yaw: f64) -> CameraView {
        let intr = Intrinsics { fx: 100.0, fy: 100.0, cx: 63.5, cy: 47.5, width: 128, height: 96 };
        // camera z → base x, camera x → base −y, camera y → base −z
        let look = UnitQuaternion::from_matrix(&nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0));
        let rot = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw) * look;
        CameraView::new(
            GrayImage::filled(128, 96, value),
            intr,
            RigidTransform::from_parts(Translation3::new(0.1, 0.0, 0.0), rot),
        )
        .unwrap()
    }

    #[test]
    fn uniform_camera_and_averaging_idempotence() {
        let grid = SphericalGrid::new(16).unwrap();
        let one = project_cameras(&[forward_camera(0.5, 0.0)], &grid);
        assert!(one.as_slice().iter().all(|v| *v == 0.0 || (*v - 0.5).abs() < 1e-15));
        assert!(one.count_nonzero() > 0);
        // forward direction covered, backward not
        assert!(one.get(16, 0) > 0.0);
        assert_eq!(one.get(16, 16), 0.0);
        let two = project_cameras(&[forward_camera(0.5, 0.0), forward_camera(0.5, 0.0)], &grid);
        assert_eq!(one, two);
        assert_eq!(project_cameras(&[], &grid).count_nonzero(), 0);
    }

    #[test]
    fn rig_of_four_covers_more_than_one() {
        let grid = SphericalGrid::new(16).unwrap();
        let one = project_cameras(&[forward_camera(0.5, 0.0)], &grid).count_nonzero();
        let rig = [
            forward_camera(0.5, 0.2),
            forward_camera(0.5, -0.2),
            forward_camera(0.5, PI / 2.0),
            forward_camera(0.5, -PI / 2.0),
        ];
        assert!(project_cameras(&rig, &grid).count_nonzero() > one);
    }

    #[test]
    fn assemble_checks_shapes() {
        let grid = SphericalGrid::new(100).unwrap();
        let fs = assemble_feature(grid.zeros(), grid.zeros(), grid.zeros(), &grid).unwrap();
        assert_eq!(fs.shape(), (3, 200, 200));
        let err = assemble_feature(grid.zeros(), Channel::zeros(64), grid.zeros(), &grid);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn bilinear_sampling() {
        let img = GrayImage::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(img.sample(0.5, 0.5), Some(1.5));
        assert_eq!(img.sample(1.0, 1.0), Some(3.0));
        assert_eq!(img.sample(1.01, 0.0), None);
        assert_eq!(img.sample(-0.1, 0.0), None);
    }
}
