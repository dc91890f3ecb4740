//! Experiment harness on seeded synthetic worlds: recall@n, rotated-map
//! lookup, place selection among retrieved candidates, and per-stage timing.
//!
//! A benchmark is a smooth random trajectory through a box world. Map
//! frames are rendered at the trajectory poses; query frames are re-renders
//! displaced by at most `query_offset` metres with a small heading jitter.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::descriptor::{mine_triplets, train_embedding, EmbeddingModel, TrainOutcome};
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::map_store::{PlaceEntry, PlaceMap};
use crate::pipeline::{Frame, Pipeline};
use crate::pose::Pose;
use crate::projection::{assemble_feature, project_cameras, project_lidar, FeatureSphere, Modality, PointCloud};
use crate::spectra::{fuse_spectra_by, power_spectrum};
use crate::synth::{generate_world_avoiding, render_images, render_scan, LidarModel, Rig, World};
use crate::taper::TaperedSpectra;
use crate::voting::{vote_on_correlations, vote_prepared};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// 128 beams and four cameras.
    High,
    /// 64 beams and one camera.
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkParams {
    pub seed: u64,
    pub places: usize,
    pub queries: usize,
    /// Trajectory step, metres.
    pub spacing: f64,
    /// Half-width of the square the trajectory stays in, metres.
    pub region: f64,
    /// Boxes per square metre.
    pub box_density: f64,
    pub sensor_height: f64,
    /// Maximum horizontal query displacement, metres.
    pub query_offset: f64,
    /// Maximum absolute query heading jitter, radians.
    pub query_yaw_jitter: f64,
    pub points_per_ring: usize,
    pub max_range: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub map_setup: Fidelity,
    pub query_setup: Fidelity,
    /// Drop the cameras (photometry channel stays zero).
    pub lidar_only: bool,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            seed: 0,
            places: 1000,
            queries: 500,
            spacing: 1.0,
            region: 60.0,
            box_density: 0.03,
            sensor_height: 1.8,
            query_offset: 0.5,
            query_yaw_jitter: 3f64.to_radians(),
            points_per_ring: 256,
            max_range: 50.0,
            image_width: 128,
            image_height: 96,
            map_setup: Fidelity::High,
            query_setup: Fidelity::High,
            lidar_only: false,
        }
    }
}

impl BenchmarkParams {
    pub fn validate(&self) -> Result<()> {
        if self.places < 3 {
            return Err(Error::invalid("a benchmark needs at least 3 places"));
        }
        if self.queries == 0 {
            return Err(Error::invalid("a benchmark needs at least one query"));
        }
        for (name, v) in [
            ("spacing", self.spacing),
            ("region", self.region),
            ("sensor_height", self.sensor_height),
            ("max_range", self.max_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.box_density >= 0.0 && self.query_offset >= 0.0 && self.query_yaw_jitter >= 0.0) {
            return Err(Error::invalid("density, offset and jitter must be non-negative"));
        }
        if self.points_per_ring == 0 || self.image_width == 0 || self.image_height == 0 {
            return Err(Error::invalid("sensor resolutions must be positive"));
        }
        Ok(())
    }

    pub fn lidar(&self, fidelity: Fidelity) -> LidarModel {
        let mut l = match fidelity {
            Fidelity::High => LidarModel::high_fidelity(),
            Fidelity::Low => LidarModel::low_fidelity(),
        };
        l.points_per_ring = self.points_per_ring;
        l.max_range = self.max_range;
        l
    }

    pub fn rig(&self, fidelity: Fidelity) -> Rig {
        let mut rig = match fidelity {
            Fidelity::High => Rig::high_fidelity(self.image_width, self.image_height),
            Fidelity::Low => Rig::low_fidelity(self.image_width, self.image_height),
        };
        if self.lidar_only {
            rig.cameras.clear();
        }
        rig
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub params: BenchmarkParams,
    pub world: World,
    pub map_poses: Vec<Pose>,
    pub query_poses: Vec<Pose>,
}

impl Benchmark {
    pub fn generate(params: BenchmarkParams) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let map_poses = trajectory(&params, &mut rng);
        let keep_out: Vec<Vector3<f64>> = map_poses.iter().map(|p| p.position).collect();
        let extent = params.region + params.max_range.min(30.0);
        let n_boxes = (params.box_density * (2.0 * extent) * (2.0 * extent)).round() as usize;
        let world = generate_world_avoiding(rng.gen(), n_boxes, extent, &keep_out)?;
        let query_poses = (0..params.queries)
            .map(|_| {
                let base = map_poses[rng.gen_range(0..map_poses.len())];
                let r = params.query_offset * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                let jitter = if params.query_yaw_jitter > 0.0 {
                    rng.gen_range(-params.query_yaw_jitter..=params.query_yaw_jitter)
                } else {
                    0.0
                };
                let yaw = heading(&base) + jitter;
                Pose::from_position_yaw(base.position + Vector3::new(r * a.cos(), r * a.sin(), 0.0), yaw)
            })
            .collect();
        Ok(Self {
            params,
            world,
            map_poses,
            query_poses,
        })
    }

    pub fn render(&self, pose: &Pose, fidelity: Fidelity, noise_seed: u64) -> Result<Frame> {
        let lidar = self.params.lidar(fidelity);
        let rig = self.params.rig(fidelity);
        Ok(Frame {
            scan: render_scan(&self.world, pose, &lidar, noise_seed),
            lidar_extrinsic: Isometry3::identity(),
            views: render_images(&self.world, pose, &rig, lidar.max_range)?,
        })
    }

    pub fn map_frame(&self, i: usize) -> Result<Frame> {
        self.render(&self.map_poses[i], self.params.map_setup, self.params.seed ^ (i as u64))
    }

    pub fn query_frame(&self, i: usize) -> Result<Frame> {
        self.render(&self.query_poses[i], self.params.query_setup, !self.params.seed ^ (i as u64))
    }

    pub fn map_positions(&self) -> Vec<Vector3<f64>> {
        self.map_poses.iter().map(|p| p.position).collect()
    }
}

fn heading(pose: &Pose) -> f64 {
    let (_, _, yaw) = pose.orientation().euler_angles();
    yaw
}

/// Smooth random walk that turns back towards the centre near the border.
fn trajectory(params: &BenchmarkParams, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let mut pos = Vector3::new(0.0, 0.0, params.sensor_height);
    let mut yaw: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let margin = params.region - 5.0 * params.spacing;
    let mut out = Vec::with_capacity(params.places);
    for _ in 0..params.places {
        out.push(Pose::from_position_yaw(pos, yaw));
        if pos.x.abs() > margin || pos.y.abs() > margin {
            let home = (-pos.y).atan2(-pos.x);
            let turn = (home - yaw + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
            yaw += turn.clamp(-0.25, 0.25);
        } else {
            yaw += rng.gen_range(-0.12..0.12);
        }
        pos += params.spacing * Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    }
    out
}

/// Feature spheres and spectral features of a set of frames.
#[derive(Debug, Clone, Default)]
pub struct EncodedFrames {
    pub spheres: Vec<FeatureSphere>,
    pub features: Vec<Vec<f64>>,
}

/// Renders and encodes `n` frames in parallel; frames are dropped after use.
pub fn encode_frames<F>(pipeline: &Pipeline, n: usize, frame: F) -> Result<EncodedFrames>
where
    F: Fn(usize) -> Result<Frame> + Sync,
{
    let pairs = (0..n)
        .into_par_iter()
        .map(|i| {
            let sphere = pipeline.project(&frame(i)?)?.quantized();
            let features = pipeline.features(&sphere)?;
            Ok((sphere, features))
        })
        .collect::<Result<Vec<_>>>()?;
    let (spheres, features) = pairs.into_iter().unzip();
    Ok(EncodedFrames { spheres, features })
}

/// Mines triplets from `positions` and trains from a seeded random model.
pub fn train_model(config: &PipelineConfig, features: &[Vec<f64>], positions: &[Vector3<f64>]) -> Result<TrainOutcome> {
    let dim = features.first().map(Vec::len).ok_or_else(|| Error::invalid("no training samples"))?;
    let triplets = mine_triplets(positions, &config.mining, config.seed)?;
    if triplets.is_empty() {
        return Err(Error::invalid("the trajectory yields no triplets"));
    }
    tracing::info!(triplets = triplets.len(), dim, "training embedding");
    let initial = EmbeddingModel::random(dim, config.training.seed)?;
    train_embedding(initial, features, &triplets, &config.training)
}

pub fn build_map(model: &EmbeddingModel, encoded: &EncodedFrames, poses: &[Pose]) -> Result<PlaceMap> {
    if poses.len() != encoded.spheres.len() {
        return Err(Error::shape("one pose per encoded frame required"));
    }
    let entries = poses
        .iter()
        .zip(&encoded.spheres)
        .zip(&encoded.features)
        .enumerate()
        .map(|(i, ((pose, sphere), x))| {
            Ok(PlaceEntry {
                id: i as u32,
                pose: *pose,
                descriptor: model.embed(x)?.iter().map(|v| *v as f32).collect(),
                sphere: std::sync::Arc::new(sphere.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PlaceMap::build(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: usize,
    pub position: Vector3<f64>,
    pub descriptor: Vec<f64>,
}

/// Recall curve: entry `n − 1` is recall@n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub angle_deg: Option<f64>,
    pub recall: Vec<f64>,
}

/// For each `n ≤ n_max`, the fraction of queries whose top-`n` map entries
/// include one within `radius` of the query position.
pub fn recall_at_n(map: &PlaceMap, queries: &[QueryRecord], n_max: usize, radius: f64) -> Result<Vec<f64>> {
    let positions: Vec<Vector3<f64>> = map.entries().iter().map(|e| e.pose.position).collect();
    recall_curve(|d, n| Ok(map.knn_query(d, n)?.iter().map(|h| h.index).collect()), &positions, queries, n_max, radius)
}

fn recall_curve<F>(retrieve: F, positions: &[Vector3<f64>], queries: &[QueryRecord], n_max: usize, radius: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], usize) -> Result<Vec<usize>> + Sync,
{
    if queries.is_empty() {
        return Err(Error::invalid("recall needs at least one query"));
    }
    if n_max == 0 || n_max > positions.len() {
        return Err(Error::invalid(format!("n_max = {n_max} outside [1, {}]", positions.len())));
    }
    let first_hits = queries
        .par_iter()
        .map(|q| {
            let ids = retrieve(&q.descriptor, n_max)?;
            Ok(ids.iter().position(|&i| (positions[i] - q.position).norm() <= radius))
        })
        .collect::<Result<Vec<Option<usize>>>>()?;
    let mut counts = vec![0usize; n_max];
    for rank in first_hits.into_iter().flatten() {
        counts[rank] += 1;
    }
    let mut found = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            found += c;
            found as f64 / queries.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationOutcome {
    pub curves: Vec<RecallCurve>,
    /// Largest per-entry feature difference between a rotated and the
    /// unrotated map frame.
    pub max_feature_diff: f64,
}

/// Rebuilds the descriptor index from map scans rotated by each yaw angle
/// (degrees) about the sensor z axis and measures recall with unchanged
/// queries. Photometry is not used.
#[allow(clippy::too_many_arguments)]
pub fn rotation_experiment<F>(
    pipeline: &Pipeline,
    model: &EmbeddingModel,
    map_scans: F,
    map_positions: &[Vector3<f64>],
    angles_deg: &[f64],
    queries: &[QueryRecord],
    n_max: usize,
    radius: f64,
) -> Result<RotationOutcome>
where
    F: Fn(usize) -> Result<PointCloud> + Sync,
{
    let n = map_positions.len();
    let rotations: Vec<Isometry3<f64>> = angles_deg
        .iter()
        .map(|a| Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a.to_radians())))
        .collect();
    let per_frame = (0..n)
        .into_par_iter()
        .map(|i| {
            let scan = map_scans(i)?;
            let encode = |s: PointCloud| -> Result<Vec<f64>> {
                let sphere = pipeline.project(&Frame::lidar_only(s))?.quantized();
                pipeline.features(&sphere)
            };
            let base = encode(scan.clone())?;
            let mut diff = 0.0f64;
            let rotated = rotations
                .iter()
                .map(|r| {
                    let f = encode(scan.transformed(r))?;
                    diff = f.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(diff, f64::max);
                    Ok(f)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((rotated, diff))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_feature_diff = per_frame.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    let mut curves = Vec::with_capacity(angles_deg.len());
    for (a, angle) in angles_deg.iter().enumerate() {
        let mut points = Vec::with_capacity(n * model_dim());
        for (features, _) in &per_frame {
            points.extend(model.embed(&features[a])?.iter().map(|v| f64::from(*v as f32)));
        }
        let index = KdTree::new(points, model_dim())?;
        let recall = recall_curve(
            |d, k| Ok(index.knn(d, k).iter().map(|h| h.index).collect()),
            map_positions,
            queries,
            n_max,
            radius,
        )?;
        curves.push(RecallCurve {
            angle_deg: Some(*angle),
            recall,
        });
    }
    Ok(RotationOutcome { curves, max_feature_diff })
}

fn model_dim() -> usize {
    crate::descriptor::DESCRIPTOR_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub query_id: usize,
    pub k: usize,
    pub retrieved: Vec<usize>,
    pub selected: usize,
    /// Ground-truth distance of the selected place, metres.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub k: usize,
    /// Queries passing the correct-candidate filter.
    pub evaluated: usize,
    pub wrong: usize,
    pub wrong_rate: f64,
    pub max_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub rows: Vec<SelectionRow>,
    pub trials: Vec<Trial>,
}

/// Votes among the top-`k` retrieved entries for every `k` in `ks`, only
/// over queries whose top `k` contains an entry within `radius`. A
/// selection further than `radius` from the query counts as wrong.
pub fn selection_experiment(
    pipeline: &Pipeline,
    map: &PlaceMap,
    prepared: &[TaperedSpectra],
    queries: &[QueryRecord],
    query_spheres: &[FeatureSphere],
    ks: &[usize],
    radius: f64,
) -> Result<SelectionOutcome> {
    let k_max = ks.iter().copied().max().ok_or_else(|| Error::invalid("empty k range"))?;
    if ks.contains(&0) || k_max > map.len() {
        return Err(Error::invalid(format!("k range must lie in [1, {}]", map.len())));
    }
    if prepared.len() != map.len() || query_spheres.len() != queries.len() {
        return Err(Error::shape("prepared spectra or query spheres do not match"));
    }
    let per_query = queries
        .par_iter()
        .zip(query_spheres)
        .map(|(q, sphere)| {
            let ids: Vec<usize> = map.knn_query(&q.descriptor, k_max)?.iter().map(|h| h.index).collect();
            let dist = |i: usize| (map.entry(i).pose.position - q.position).norm();
            let spectra = pipeline.prepare(sphere)?;
            let mut trials = Vec::new();
            for &k in ks {
                let top = &ids[..k];
                if !top.iter().any(|&i| dist(i) <= radius) {
                    continue;
                }
                let cands: Vec<TaperedSpectra> = top.iter().map(|&i| prepared[i].clone()).collect();
                let vote = vote_prepared(&spectra, &cands, pipeline.analyzer(), pipeline.config().voting.vote_config())?;
                let selected = top[vote.selected];
                trials.push(Trial {
                    query_id: q.id,
                    k,
                    retrieved: top.to_vec(),
                    selected,
                    distance: dist(selected),
                });
            }
            Ok(trials)
        })
        .collect::<Result<Vec<_>>>()?;
    let trials: Vec<Trial> = per_query.into_iter().flatten().collect();
    let rows = ks
        .iter()
        .map(|&k| {
            let at_k: Vec<&Trial> = trials.iter().filter(|t| t.k == k).collect();
            let wrong = at_k.iter().filter(|t| t.distance > radius).count();
            SelectionRow {
                k,
                evaluated: at_k.len(),
                wrong,
                wrong_rate: if at_k.is_empty() { 0.0 } else { wrong as f64 / at_k.len() as f64 },
                max_distance: at_k.iter().map(|t| t.distance).fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(SelectionOutcome { rows, trials })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub component: String,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingOutcome {
    pub components: Vec<TimingRow>,
    pub total: TimingRow,
    pub samples: usize,
}

impl TimingOutcome {
    pub fn component_sum_ms(&self) -> f64 {
        self.components.iter().map(|r| r.mean_ms).sum()
    }
}

pub const TIMING_COMPONENTS: [&str; 8] = [
    "projection",
    "sht",
    "windowing",
    "fusion",
    "embedding",
    "knn",
    "multitaper",
    "voting",
];

/// Runs `n_samples` end-to-end queries on one thread and reports mean and
/// standard deviation per stage and in total. Candidate spectra are
/// computed at query time.
pub fn timing_breakdown(
    pipeline: &Pipeline,
    model: &EmbeddingModel,
    map: &PlaceMap,
    frames: &[Frame],
    k: usize,
    n_samples: usize,
) -> Result<TimingOutcome> {
    if frames.is_empty() || n_samples == 0 {
        return Err(Error::invalid("timing needs frames and at least one sample"));
    }
    if k == 0 || k > map.len() {
        return Err(Error::invalid(format!("k = {k} outside [1, {}]", map.len())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let samples = pool.install(|| {
        (0..n_samples)
            .map(|s| timed_query(pipeline, model, map, &frames[s % frames.len()], k))
            .collect::<Result<Vec<_>>>()
    })?;
    let stats = |values: Vec<f64>| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let components = TIMING_COMPONENTS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (mean_ms, std_ms) = stats(samples.iter().map(|s| s.0[c]).collect());
            TimingRow {
                component: name.to_string(),
                mean_ms,
                std_ms,
            }
        })
        .collect();
    let (mean_ms, std_ms) = stats(samples.iter().map(|s| s.1).collect());
    Ok(TimingOutcome {
        components,
        total: TimingRow {
            component: "total".into(),
            mean_ms,
            std_ms,
        },
        samples: n_samples,
    })
}

struct Stopwatch {
    last: Instant,
    ms: [f64; TIMING_COMPONENTS.len()],
}

impl Stopwatch {
    fn lap(&mut self, component: usize) {
        let now = Instant::now();
        self.ms[component] += (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
    }
}

/// The query path of [`Pipeline::query`], split into timed stages.
fn timed_query(
    pipeline: &Pipeline,
    model: &EmbeddingModel,
    map: &PlaceMap,
    frame: &Frame,
    k: usize,
) -> Result<([f64; TIMING_COMPONENTS.len()], f64)> {
    const PROJECTION: usize = 0;
    const SHT: usize = 1;
    const WINDOWING: usize = 2;
    const FUSION: usize = 3;
    const EMBEDDING: usize = 4;
    const KNN: usize = 5;
    const MULTITAPER: usize = 6;
    const VOTING: usize = 7;

    let start = Instant::now();
    let mut sw = Stopwatch {
        last: start,
        ms: [0.0; TIMING_COMPONENTS.len()],
    };
    let grid = pipeline.grid();
    let plan = pipeline.plan();
    let (range, intensity) = project_lidar(&frame.scan, &frame.lidar_extrinsic, grid, pipeline.sampling())?;
    let photometry = project_cameras(&frame.views, grid);
    let sphere = assemble_feature(photometry, range, intensity, grid)?;
    sw.lap(PROJECTION);

    let l_feat = pipeline.config().features.degrees;
    let mut features = Vec::with_capacity(3 * l_feat);
    for m in Modality::ALL {
        let standardized = sphere.channel(m).standardized();
        sw.lap(WINDOWING);
        let spec = plan.forward(&standardized, l_feat)?;
        sw.lap(SHT);
        features.extend(power_spectrum(&spec, l_feat).into_iter().map(f64::ln_1p));
        sw.lap(EMBEDDING);
    }
    let descriptor = model.embed(&features)?;
    sw.lap(EMBEDDING);

    let candidates = map.knn_query(&descriptor, k)?;
    sw.lap(KNN);

    let prepare = |s: &FeatureSphere, sw: &mut Stopwatch| -> Result<TaperedSpectra> {
        let analyzer = pipeline.analyzer();
        let bank = analyzer.bank();
        let lmax = analyzer.lmax();
        let standardize = pipeline.config().fusion.standardize;
        let raw: Vec<_> = Modality::ALL.iter().map(|m| s.channel(*m)).collect();
        let std: Vec<_> = if standardize { raw.iter().map(|c| c.standardized()).collect() } else { Vec::new() };
        sw.lap(WINDOWING);
        let mut fused = Vec::with_capacity(bank.len());
        for i in 0..bank.len() {
            let mut spectra = Vec::with_capacity(3);
            let mut selectors = Vec::with_capacity(3);
            for (c, channel) in raw.iter().enumerate() {
                let w = bank.apply(channel, i)?;
                sw.lap(WINDOWING);
                spectra.push(plan.forward(&w, lmax)?);
                sw.lap(SHT);
                if standardize {
                    let w = bank.apply(&std[c], i)?;
                    sw.lap(WINDOWING);
                    selectors.push(plan.forward(&w, lmax)?);
                    sw.lap(SHT);
                }
            }
            let sel = if standardize { &selectors } else { &spectra };
            fused.push(fuse_spectra_by(&spectra, sel, lmax)?);
            sw.lap(FUSION);
        }
        let out = TaperedSpectra::from_fused(fused, lmax);
        sw.lap(FUSION);
        Ok(out)
    };
    let query = prepare(&sphere, &mut sw)?;
    let mut correlations = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let spectra = prepare(&map.entry(c.index).sphere, &mut sw)?;
        correlations.push(pipeline.analyzer().correlate(&query, &spectra));
        sw.lap(MULTITAPER);
    }
    let vote = vote_on_correlations(&correlations, pipeline.config().voting.vote_config())?;
    std::hint::black_box(candidates[vote.selected].index);
    sw.lap(VOTING);
    Ok((sw.ms, start.elapsed().as_secs_f64() * 1e3))
}

/// Everything needed to run retrieval and selection on one benchmark.
#[derive(Debug)]
pub struct PreparedRun {
    pub model: EmbeddingModel,
    pub loss_trace: Vec<f64>,
    pub map: PlaceMap,
    /// Tapered spectra of every map entry, by id.
    pub prepared: Vec<TaperedSpectra>,
    pub queries: Vec<QueryRecord>,
    pub query_spheres: Vec<FeatureSphere>,
    pub stage_ms: BTreeMap<String, f64>,
}

/// Encodes map and query frames, trains the embedding on the map
/// trajectory and builds the map.
pub fn prepare_run(pipeline: &Pipeline, bench: &Benchmark) -> Result<PreparedRun> {
    let mut stage_ms = BTreeMap::new();
    let mut t = Instant::now();
    let mut lap = |name: &str, stage_ms: &mut BTreeMap<String, f64>| {
        stage_ms.insert(name.to_string(), t.elapsed().as_secs_f64() * 1e3);
        t = Instant::now();
    };
    let map_frames = encode_frames(pipeline, bench.map_poses.len(), |i| bench.map_frame(i))?;
    lap("encode_map", &mut stage_ms);
    let query_frames = encode_frames(pipeline, bench.query_poses.len(), |i| bench.query_frame(i))?;
    lap("encode_queries", &mut stage_ms);
    let positions = bench.map_positions();
    let outcome = train_model(pipeline.config(), &map_frames.features, &positions)?;
    lap("train", &mut stage_ms);
    let map = build_map(&outcome.model, &map_frames, &bench.map_poses)?;
    let prepared = map
        .entries()
        .par_iter()
        .map(|e| pipeline.prepare(&e.sphere))
        .collect::<Result<Vec<_>>>()?;
    let queries = query_frames
        .features
        .iter()
        .zip(&bench.query_poses)
        .enumerate()
        .map(|(id, (x, pose))| {
            Ok(QueryRecord {
                id,
                position: pose.position,
                descriptor: outcome.model.embed(x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    lap("build_map", &mut stage_ms);
    Ok(PreparedRun {
        model: outcome.model,
        loss_trace: outcome.loss_trace,
        map,
        prepared,
        queries,
        query_spheres: query_frames.spheres,
        stage_ms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub parameters: serde_json::Value,
    pub config: PipelineConfig,
    pub input_hash: String,
    pub recall: Vec<RecallCurve>,
    pub selection: Vec<SelectionRow>,
    pub trials: Vec<Trial>,
    pub timing: Vec<TimingRow>,
    pub stage_ms: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn new(name: &str, parameters: serde_json::Value, config: &PipelineConfig) -> Result<Self> {
        let mut input = serde_json::to_vec(&parameters).map_err(|e| Error::invalid(e.to_string()))?;
        input.extend(config.to_toml()?.into_bytes());
        Ok(Self {
            name: name.to_string(),
            parameters,
            config: config.clone(),
            input_hash: content_hash(&input),
            recall: Vec::new(),
            selection: Vec::new(),
            trials: Vec::new(),
            timing: Vec::new(),
            stage_ms: BTreeMap::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }
}

/// Git-style object id: SHA-256 of `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn recall_csv(curves: &[RecallCurve]) -> String {
    let angled = curves.iter().any(|c| c.angle_deg.is_some());
    let mut out = String::from(if angled { "angle,n,recall\n" } else { "n,recall\n" });
    for c in curves {
        for (i, r) in c.recall.iter().enumerate() {
            if angled {
                out.push_str(&format!("{},{},{}\n", c.angle_deg.unwrap_or(0.0), i + 1, r));
            } else {
                out.push_str(&format!("{},{}\n", i + 1, r));
            }
        }
    }
    out
}

pub fn selection_csv(rows: &[SelectionRow]) -> String {
    let mut out = String::from("k,wrong_rate\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.k, r.wrong_rate));
    }
    out
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("component,mean_ms,std_ms\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.component, r.mean_ms, r.std_ms));
    }
    out
}
