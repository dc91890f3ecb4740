//! Dataset directories as written by `sphereloc synth`:
//!
//! ```text
//! poses.txt            TUM trajectory, timestamp = frame index
//! rig.toml             LiDAR and camera mounts
//! scans/000042.xyzi
//! images/000042_front.pgm
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Benchmark;
use crate::formats::{read_pgm, read_tum, read_xyzi, write_pgm, write_tum, write_xyzi, RigFile};
use crate::pipeline::Frame;
use crate::pose::Pose;
use crate::projection::CameraView;
use crate::synth::CameraSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Map,
    Query,
}

pub fn scan_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("scans").join(format!("{i:06}.xyzi"))
}

pub fn image_path(dir: &Path, i: usize, camera: &str) -> PathBuf {
    dir.join("images").join(format!("{i:06}_{camera}.pgm"))
}

/// Renders one split of a benchmark into `dir`. Images are 16-bit.
pub fn write_dataset(dir: &Path, bench: &Benchmark, split: Split) -> Result<usize> {
    let (poses, fidelity) = match split {
        Split::Map => (&bench.map_poses, bench.params.map_setup),
        Split::Query => (&bench.query_poses, bench.params.query_setup),
    };
    let rig = bench.params.rig(fidelity);
    std::fs::create_dir_all(dir.join("scans"))?;
    std::fs::create_dir_all(dir.join("images"))?;
    RigFile::from_rig(&rig).save(dir.join("rig.toml"))?;
    let stamped: Vec<(f64, Pose)> = poses.iter().enumerate().map(|(i, p)| (i as f64, *p)).collect();
    write_tum(dir.join("poses.txt"), &stamped)?;
    (0..poses.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        let frame = match split {
            Split::Map => bench.map_frame(i)?,
            Split::Query => bench.query_frame(i)?,
        };
        write_xyzi(scan_path(dir, i), &frame.scan)?;
        for (view, cam) in frame.views.iter().zip(&rig.cameras) {
            write_pgm(image_path(dir, i, &cam.name), &view.image, u16::MAX)?;
        }
        Ok(())
    })?;
    Ok(poses.len())
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub poses: Vec<Pose>,
    pub rig: RigFile,
    cameras: Vec<CameraSpec>,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let poses: Vec<Pose> = read_tum(dir.join("poses.txt"))?.into_iter().map(|(_, p)| p).collect();
        if poses.is_empty() {
            return Err(Error::invalid(format!("{} has no poses", dir.display())));
        }
        let rig = RigFile::load(dir.join("rig.toml"))?;
        let cameras = rig.camera_specs()?;
        Ok(Self { dir, poses, rig, cameras })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<nalgebra::Vector3<f64>> {
        self.poses.iter().map(|p| p.position).collect()
    }

    /// Loads frame `i`; cameras without an image file are skipped.
    pub fn frame(&self, i: usize) -> Result<Frame> {
        if i >= self.len() {
            return Err(Error::invalid(format!("frame {i} out of range for {} poses", self.len())));
        }
        let scan = read_xyzi(scan_path(&self.dir, i))?;
        let mut views = Vec::with_capacity(self.cameras.len());
        for cam in &self.cameras {
            let path = image_path(&self.dir, i, &cam.name);
            if path.exists() {
                views.push(CameraView::new(read_pgm(&path)?, cam.intrinsics, cam.extrinsic)?);
            }
        }
        Ok(Frame {
            scan,
            lidar_extrinsic: self.rig.lidar.to_transform()?,
            views,
        })
    }
}

/// Loads a single frame: a scan plus images listed in rig camera order.
pub fn load_frame(scan: &Path, rig: Option<&RigFile>, images: &[PathBuf]) -> Result<Frame> {
    let scan = read_xyzi(scan)?;
    let Some(rig) = rig else {
        if !images.is_empty() {
            return Err(Error::invalid("images need a rig file"));
        }
        return Ok(Frame::lidar_only(scan));
    };
    let cameras = rig.camera_specs()?;
    if images.len() > cameras.len() {
        return Err(Error::invalid(format!("{} images for {} rig cameras", images.len(), cameras.len())));
    }
    let views = images
        .iter()
        .zip(&cameras)
        .map(|(p, cam)| CameraView::new(read_pgm(p)?, cam.intrinsics, cam.extrinsic))
        .collect::<Result<Vec<_>>>()?;
    Ok(Frame {
        scan,
        lidar_extrinsic: rig.lidar.to_transform()?,
        views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::BenchmarkParams;

    #[test]
    fn written_dataset_reloads_the_rendered_frames() {
        let bench = Benchmark::generate(BenchmarkParams {
            places: 4,
            queries: 2,
            points_per_ring: 32,
            image_width: 24,
            image_height: 16,
            region: 20.0,
            ..BenchmarkParams::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(write_dataset(dir.path(), &bench, Split::Map).unwrap(), 4);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.len(), 4);
        let original = bench.map_frame(2).unwrap();
        let loaded = ds.frame(2).unwrap();
        assert_eq!(loaded.scan.len(), original.scan.len());
        assert_eq!(loaded.views.len(), original.views.len());
        let err = original.views[0]
            .image
            .data
            .iter()
            .zip(&loaded.views[0].image.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.5 / 65535.0 + 1e-12, "{err}");
        assert!((ds.poses[2].position - bench.map_poses[2].position).norm() < 1e-9);
        assert!(ds.frame(4).is_err());
    }

    #[test]
    fn single_frame_without_rig_is_lidar_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.xyzi");
        let cloud = crate::projection::PointCloud::new(vec![nalgebra::Point3::new(1.0, 0.0, 0.0)], vec![0.5]).unwrap();
        write_xyzi(&p, &cloud).unwrap();
        let f = load_frame(&p, None, &[]).unwrap();
        assert!(f.views.is_empty());
        assert!(load_frame(&p, None, std::slice::from_ref(&p)).is_err());
    }
}
