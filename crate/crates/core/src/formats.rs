//! Sensor and dataset file formats: XYZI point clouds, binary PGM images,
//! TUM trajectories, rig TOML and `FSPH` feature-sphere collections.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::binio::{checked_u16, checked_u32, PutLe, Reader};
use crate::error::{Error, Result};
use crate::grid::Channel;
use crate::pose::Pose;
use crate::projection::{FeatureSphere, GrayImage, Intrinsics, PointCloud, RigidTransform};
use crate::synth::{CameraSpec, Rig};

pub const XYZI_MAGIC: &[u8; 4] = b"XYZI";
pub const FSPH_MAGIC: &[u8; 4] = b"FSPH";
pub const FSPH_VERSION: u16 = 1;

/// `XYZI`: magic, u32 count, then `count × (x, y, z, intensity)` f32.
pub fn xyzi_to_bytes(cloud: &PointCloud) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 16 * cloud.len());
    out.extend_from_slice(XYZI_MAGIC);
    out.put_u32(checked_u32(cloud.len(), "point count")?);
    for (p, i) in cloud.points.iter().zip(&cloud.intensities) {
        for v in [p.x, p.y, p.z, *i] {
            out.put_f32(v as f32);
        }
    }
    Ok(out)
}

pub fn xyzi_from_bytes(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader::new(bytes);
    r.expect_magic(XYZI_MAGIC)?;
    let n = r.u32("point count")? as usize;
    let at = r.offset();
    let raw = r.f32_vec(n.checked_mul(4).ok_or_else(|| Error::format(at, "count overflow"))?, "points")?;
    r.finish()?;
    let mut points = Vec::with_capacity(n);
    let mut intensities = Vec::with_capacity(n);
    for rec in raw.chunks_exact(4) {
        points.push(Point3::new(rec[0].into(), rec[1].into(), rec[2].into()));
        intensities.push(rec[3].into());
    }
    PointCloud::new(points, intensities).map_err(|e| Error::format(at, e.to_string()))
}

pub fn write_xyzi(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, xyzi_to_bytes(cloud)?)?;
    Ok(())
}

pub fn read_xyzi(path: impl AsRef<Path>) -> Result<PointCloud> {
    xyzi_from_bytes(&std::fs::read(path)?)
}

/// Binary PGM (`P5`). `maxval` 255 writes 8-bit samples, larger values
/// write 16-bit big-endian samples; inputs are clamped to `[0, 1]`.
pub fn pgm_to_bytes(image: &GrayImage, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::invalid("PGM maxval must be positive"));
    }
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, maxval).into_bytes();
    let scale = f64::from(maxval);
    for v in &image.data {
        let q = (v.clamp(0.0, 1.0) * scale).round() as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

/// Parses a `P5` image, normalizing samples by the header's max value.
pub fn pgm_from_bytes(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated PGM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(Error::format(0, format!("not a binary PGM (magic {:?})", fields[0].1)));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse::<usize>()
            .map_err(|_| Error::format(fields[i].0 as u64, format!("bad PGM header field {:?}", fields[i].1)))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(fields[1].0 as u64, format!("invalid PGM header {w}x{h} max {maxval}")));
    }
    // exactly one whitespace byte ends the header
    pos += 1;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = w * h * width;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() < need {
        return Err(Error::format(
            (pos + body.len()) as u64,
            format!("truncated PGM data: need {need} bytes, {} left", body.len()),
        ));
    }
    let scale = 1.0 / maxval as f64;
    let data = if width == 1 {
        body[..need].iter().map(|b| f64::from(*b) * scale).collect()
    } else {
        body[..need]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) * scale)
            .collect()
    };
    GrayImage::new(w, h, data)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage, maxval: u16) -> Result<()> {
    std::fs::write(path, pgm_to_bytes(image, maxval)?)?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    pgm_from_bytes(&std::fs::read(path)?)
}

/// One TUM line per pose: `timestamp tx ty tz qx qy qz qw`.
pub fn tum_to_string(poses: &[(f64, Pose)]) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in poses {
        let a = p.to_array();
        let _ = writeln!(
            s,
            "{t:.6} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            a[0], a[1], a[2], a[3], a[4], a[5], a[6]
        );
    }
    s
}

pub fn tum_from_str(text: &str) -> Result<Vec<(f64, Pose)>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let here = offset;
        offset += line.len() as u64 + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(here, format!("bad TUM value: {e}")))?;
        if v.len() != 8 {
            return Err(Error::format(here, format!("TUM line has {} fields, expected 8", v.len())));
        }
        let pose = Pose::from_array([v[1], v[2], v[3], v[4], v[5], v[6], v[7]])
            .map_err(|e| Error::format(here, e.to_string()))?;
        out.push((v[0], pose));
    }
    Ok(out)
}

pub fn write_tum(path: impl AsRef<Path>, poses: &[(f64, Pose)]) -> Result<()> {
    std::fs::write(path, tum_to_string(poses))?;
    Ok(())
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Vec<(f64, Pose)>> {
    tum_from_str(&std::fs::read_to_string(path)?)
}

/// Extrinsic as written in rig files: translation in metres and a unit
/// quaternion `[qx, qy, qz, qw]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mount {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl Mount {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: [0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        let v = t.translation.vector;
        Self {
            translation: [v.x, v.y, v.z],
            rotation: [q.i, q.j, q.k, q.w],
        }
    }

    pub fn to_transform(&self) -> Result<RigidTransform> {
        let [x, y, z, w] = self.rotation;
        let n = (x * x + y * y + z * z + w * w).sqrt();
        if !(n > 0.0 && n.is_finite()) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("invalid extrinsic {self:?}")));
        }
        Ok(RigidTransform::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl CameraEntry {
    pub fn mount(&self) -> Mount {
        Mount {
            translation: self.translation,
            rotation: self.rotation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub lidar: Mount,
    #[serde(default, rename = "camera")]
    pub cameras: Vec<CameraEntry>,
}

impl RigFile {
    pub fn from_rig(rig: &Rig) -> Self {
        Self {
            lidar: Mount::identity(),
            cameras: rig
                .cameras
                .iter()
                .map(|c| CameraEntry {
                    name: c.name.clone(),
                    fx: c.intrinsics.fx,
                    fy: c.intrinsics.fy,
                    cx: c.intrinsics.cx,
                    cy: c.intrinsics.cy,
                    width: c.intrinsics.width,
                    height: c.intrinsics.height,
                    translation: Mount::from_transform(&c.extrinsic).translation,
                    rotation: Mount::from_transform(&c.extrinsic).rotation,
                })
                .collect(),
        }
    }

    pub fn camera_specs(&self) -> Result<Vec<CameraSpec>> {
        self.cameras
            .iter()
            .map(|c| {
                let intrinsics = Intrinsics {
                    fx: c.fx,
                    fy: c.fy,
                    cx: c.cx,
                    cy: c.cy,
                    width: c.width,
                    height: c.height,
                };
                intrinsics.validate()?;
                Ok(CameraSpec {
                    name: c.name.clone(),
                    intrinsics,
                    extrinsic: c.mount().to_transform()?,
                })
            })
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// `FSPH`: magic, u16 version, u16 bandwidth, u32 count, then per sphere
/// three `4B²` f32 channels (photometry, range, intensity), ring-major.
pub fn spheres_to_bytes(spheres: &[FeatureSphere]) -> Result<Vec<u8>> {
    let bandwidth = spheres.first().map_or(1, FeatureSphere::bandwidth);
    let mut out = Vec::new();
    out.extend_from_slice(FSPH_MAGIC);
    out.put_u16(FSPH_VERSION);
    out.put_u16(checked_u16(bandwidth, "bandwidth")?);
    out.put_u32(checked_u32(spheres.len(), "sphere count")?);
    for (i, s) in spheres.iter().enumerate() {
        if s.bandwidth() != bandwidth {
            return Err(Error::shape(format!("sphere {i} has bandwidth {}", s.bandwidth())));
        }
        for c in s.channels() {
            c.as_slice().iter().for_each(|v| out.put_f32(*v as f32));
        }
    }
    Ok(out)
}

pub fn spheres_from_bytes(bytes: &[u8]) -> Result<Vec<FeatureSphere>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(FSPH_MAGIC)?;
    let version = r.u16("version")?;
    if version != FSPH_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "feature sphere file",
            found: version.into(),
            expected: FSPH_VERSION.into(),
        });
    }
    let at = r.offset();
    let bandwidth = r.u16("bandwidth")? as usize;
    if bandwidth == 0 {
        return Err(Error::format(at, "zero bandwidth"));
    }
    let count = r.u32("sphere count")? as usize;
    let cells = 4 * bandwidth * bandwidth;
    let mut out = Vec::with_capacity(count.min(1 << 12));
    for i in 0..count {
        let mut s = FeatureSphere::zeros(bandwidth);
        for ch in s.channels_mut() {
            let data = r.f32_vec(cells, &format!("sphere {i}"))?;
            *ch = Channel::from_vec(bandwidth, data.into_iter().map(f64::from).collect())?;
        }
        out.push(s);
    }
    r.finish()?;
    Ok(out)
}

pub fn write_spheres(path: impl AsRef<Path>, spheres: &[FeatureSphere]) -> Result<()> {
    std::fs::write(path, spheres_to_bytes(spheres)?)?;
    Ok(())
}

pub fn read_spheres(path: impl AsRef<Path>) -> Result<Vec<FeatureSphere>> {
    spheres_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyzi_round_trip_and_errors() {
        let cloud = PointCloud::new(
            vec![Point3::new(1.0, -2.5, 0.25), Point3::new(0.0, 0.0, 3.0)],
            vec![0.5, 0.125],
        )
        .unwrap();
        let bytes = xyzi_to_bytes(&cloud).unwrap();
        assert_eq!(bytes.len(), 8 + 32);
        assert_eq!(xyzi_from_bytes(&bytes).unwrap(), cloud);
        assert!(matches!(xyzi_from_bytes(&bytes[..20]), Err(Error::Format { offset: 8, .. })));
        assert!(matches!(xyzi_from_bytes(b"XYZW\0\0\0\0"), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn pgm_8_and_16_bit() {
        let img = GrayImage::new(3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        let b8 = pgm_from_bytes(&pgm_to_bytes(&img, 255).unwrap()).unwrap();
        assert!(b8.data.iter().zip(&img.data).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0));
        let b16 = pgm_from_bytes(&pgm_to_bytes(&img, 65535).unwrap()).unwrap();
        assert!(b16.data.iter().zip(&img.data).all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0));
        let with_comment = b"P5\n# made by hand\n2 1\n# max\n4\n\x02\x04";
        assert_eq!(pgm_from_bytes(with_comment).unwrap().data, vec![0.5, 1.0]);
        assert!(pgm_from_bytes(b"P2\n1 1\n255\n0").is_err());
        assert!(matches!(pgm_from_bytes(b"P5\n2 2\n255\n\x00"), Err(Error::Format { .. })));
    }

    #[test]
    fn tum_round_trip() {
        let poses = vec![
            (0.0, Pose::from_position_yaw(Vector3::new(1.0, 2.0, 1.5), 0.3)),
            (0.1, Pose::from_position_yaw(Vector3::new(-1.0 / 3.0, 0.0, 1.5), -2.0)),
        ];
        let back = tum_from_str(&tum_to_string(&poses)).unwrap();
        assert_eq!(back, poses);
        assert!(matches!(tum_from_str("# c\n1 2 3\n"), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn rig_toml_round_trip() {
        let rig = Rig::high_fidelity(64, 48);
        let file = RigFile::from_rig(&rig);
        let text = file.to_toml().unwrap();
        let back = RigFile::from_toml(&text).unwrap();
        assert_eq!(back, file);
        let specs = back.camera_specs().unwrap();
        for (a, b) in specs.iter().zip(&rig.cameras) {
            assert_eq!(a.intrinsics, b.intrinsics);
            assert!((a.extrinsic.rotation.angle_to(&b.extrinsic.rotation)).abs() < 1e-12);
        }
        let bad = text.replace("fx =", "focal =");
        assert!(matches!(RigFile::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn sphere_file_round_trip() {
        let mut s = FeatureSphere::zeros(3);
        s.channels_mut()[1].as_mut_slice()[7] = 12.5;
        s.channels_mut()[2].as_mut_slice()[0] = 0.1;
        let bytes = spheres_to_bytes(&[s.clone(), FeatureSphere::zeros(3)]).unwrap();
        let back = spheres_from_bytes(&bytes).unwrap();
        assert_eq!(back[0], s.quantized());
        assert_eq!(back.len(), 2);
        let mut v = bytes.clone();
        v[4] = 7;
        assert!(matches!(spheres_from_bytes(&v), Err(Error::UnsupportedVersion { .. })));
        assert!(spheres_to_bytes(&[s, FeatureSphere::zeros(4)]).is_err());
    }
}
