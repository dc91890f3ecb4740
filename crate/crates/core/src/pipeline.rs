//! End-to-end frame processing: projection, spectral features, descriptor,
//! retrieval and voting, all driven by one [`PipelineConfig`].

use crate::config::PipelineConfig;
use crate::descriptor::{spectral_features, EmbeddingModel};
use crate::error::{Error, Result};
use crate::grid::SphericalGrid;
use crate::kdtree::Neighbor;
use crate::map_store::PlaceMap;
use crate::projection::{
    assemble_feature, project_cameras, project_lidar, CameraView, FeatureSphere, LidarSampling, PointCloud, RigidTransform,
};
use crate::sht::ShtPlan;
use crate::taper::{MultitaperAnalyzer, TaperBank, TaperedSpectra};
use crate::voting::{vote_prepared, VoteResult};

/// One sensor frame: a scan plus the camera images taken with it.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    pub scan: PointCloud,
    /// Scan-to-base transform; identity when the base is the LiDAR frame.
    pub lidar_extrinsic: RigidTransform,
    pub views: Vec<CameraView>,
}

impl Frame {
    pub fn lidar_only(scan: PointCloud) -> Self {
        Self {
            scan,
            lidar_extrinsic: RigidTransform::identity(),
            views: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub descriptor: Vec<f64>,
    /// Retrieved map entries, nearest first.
    pub candidates: Vec<Neighbor>,
    pub vote: VoteResult,
    /// Map id of the voted candidate.
    pub selected_id: usize,
}

#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    grid: SphericalGrid,
    plan: ShtPlan,
    sampling: LidarSampling,
    analyzer: MultitaperAnalyzer,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let grid = SphericalGrid::new(config.grid.bandwidth)?;
        let bank = TaperBank::from_params(&config.taper, &grid)?;
        Self::with_bank(config, bank)
    }

    /// Uses a precomputed taper bank (for example one loaded from disk).
    pub fn with_bank(config: PipelineConfig, bank: TaperBank) -> Result<Self> {
        config.validate()?;
        let grid = SphericalGrid::new(config.grid.bandwidth)?;
        let mut sampling = LidarSampling::for_grid(&grid);
        sampling.k = config.projection.k;
        if config.projection.max_angle > 0.0 {
            sampling.max_angle = config.projection.max_angle;
        }
        let analyzer = MultitaperAnalyzer::new(&grid, bank, config.voting.l_eval, config.fusion.standardize)?;
        Ok(Self {
            plan: ShtPlan::new(&grid),
            grid,
            sampling,
            analyzer,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn grid(&self) -> &SphericalGrid {
        &self.grid
    }

    pub fn plan(&self) -> &ShtPlan {
        &self.plan
    }

    pub fn sampling(&self) -> LidarSampling {
        self.sampling
    }

    pub fn analyzer(&self) -> &MultitaperAnalyzer {
        &self.analyzer
    }

    pub fn project(&self, frame: &Frame) -> Result<FeatureSphere> {
        let (range, intensity) = project_lidar(&frame.scan, &frame.lidar_extrinsic, &self.grid, self.sampling)?;
        let photometry = project_cameras(&frame.views, &self.grid);
        assemble_feature(photometry, range, intensity, &self.grid)
    }

    pub fn features(&self, sphere: &FeatureSphere) -> Result<Vec<f64>> {
        spectral_features(sphere, &self.plan, self.config.features.degrees)
    }

    pub fn describe(&self, model: &EmbeddingModel, sphere: &FeatureSphere) -> Result<Vec<f64>> {
        model.embed(&self.features(sphere)?)
    }

    pub fn prepare(&self, sphere: &FeatureSphere) -> Result<TaperedSpectra> {
        self.analyzer.prepare(sphere)
    }

    /// Retrieves the `k` nearest map entries and votes among them.
    /// `prepared` optionally caches the tapered spectra of every map entry.
    pub fn query(
        &self,
        map: &PlaceMap,
        model: &EmbeddingModel,
        sphere: &FeatureSphere,
        k: usize,
        prepared: Option<&[TaperedSpectra]>,
    ) -> Result<QueryOutcome> {
        let descriptor = self.describe(model, sphere)?;
        self.query_descriptor(map, descriptor, sphere, k, prepared)
    }

    pub fn query_descriptor(
        &self,
        map: &PlaceMap,
        descriptor: Vec<f64>,
        sphere: &FeatureSphere,
        k: usize,
        prepared: Option<&[TaperedSpectra]>,
    ) -> Result<QueryOutcome> {
        if map.bandwidth() != self.grid.bandwidth() {
            return Err(Error::shape(format!(
                "map bandwidth {} differs from pipeline bandwidth {}",
                map.bandwidth(),
                self.grid.bandwidth()
            )));
        }
        if let Some(p) = prepared {
            if p.len() != map.len() {
                return Err(Error::shape("prepared spectra do not cover the map"));
            }
        }
        let candidates = map.knn_query(&descriptor, k)?;
        let query = self.prepare(sphere)?;
        let spectra = candidates
            .iter()
            .map(|c| match prepared {
                Some(p) => Ok(p[c.index].clone()),
                None => self.prepare(&map.entry(c.index).sphere),
            })
            .collect::<Result<Vec<_>>>()?;
        let vote = vote_prepared(&query, &spectra, &self.analyzer, self.config.voting.vote_config())?;
        let selected_id = candidates[vote.selected].index;
        Ok(QueryOutcome {
            descriptor,
            candidates,
            vote,
            selected_id,
        })
    }
}
