//! The end-to-end run: track, integrate, fuse labels, attribute gaze, group
//! instances and write the exports.

use std::path::Path;
use std::sync::Arc;

use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::gaze::{accumulate_dwell, locate_gaze_with, map_gaze_pixel, GazeHit, GazeSample, FALLBACK_WINDOW};
use crate::frame::Frame;
use crate::geometry::{apply_homography, CameraIntrinsics, Homography, Pose};
use crate::instances::{extract_instances_with, InstanceRegistry, ObjectInstance, DORMANT_CAPACITY, LINK_DISTANCE, MIN_INSTANCE_SIZE};
use crate::io::exports::{self, GazeEvent};
use crate::io::{key_values, load_sequence, ply, Palette};
use crate::semantic::{default_class_names, fuse_frame};
use crate::synth::SyntheticSequence;
use crate::surfel_map::{integrate, render_index_map, InstanceId, MapConfig, SurfelMap};
use crate::tracking::{estimate_pose, head_trajectory, TrackingConfig, TrackingResult, TrackingStatus};

pub const MAP_RGB: &str = "map_rgb.ply";
pub const MAP_CLASS: &str = "map_class.ply";
pub const TRAJECTORY: &str = "trajectory.txt";
pub const GAZE_EVENTS: &str = "gaze_events.jsonl";
pub const INSTANCES: &str = "instances.csv";
pub const SUMMARY: &str = "summary.txt";

/// Largest gap between a frame and its ground-truth pose, seconds.
const GROUNDTRUTH_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSource {
    Tracked,
    GroundTruth,
}

impl PoseSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tracked" => Ok(PoseSource::Tracked),
            "ground-truth" | "groundtruth" => Ok(PoseSource::GroundTruth),
            other => Err(Error::Config(format!("unknown pose source `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoseSource::Tracked => "tracked",
            PoseSource::GroundTruth => "ground-truth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExportToggles {
    pub ply: bool,
    pub trajectory: bool,
    pub gaze: bool,
    pub instances: bool,
}

impl Default for ExportToggles {
    fn default() -> Self {
        ExportToggles {
            ply: true,
            trajectory: true,
            gaze: true,
            instances: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub pose_source: PoseSource,
    /// Recorded in the summary; the pipeline itself draws no random numbers.
    pub seed: u64,
    pub tracking: TrackingConfig,
    pub map: MapConfig,
    pub gaze_window: usize,
    pub instance_min_size: usize,
    pub instance_link: f64,
    pub dormant_capacity: usize,
    /// Frames between pruning and instance extraction.
    pub interval: usize,
    /// Lost-frame fraction above which the run fails.
    pub max_lost_fraction: f64,
    pub exports: ExportToggles,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pose_source: PoseSource::Tracked,
            seed: 0,
            tracking: TrackingConfig::default(),
            map: MapConfig::default(),
            gaze_window: FALLBACK_WINDOW,
            instance_min_size: MIN_INSTANCE_SIZE,
            instance_link: LINK_DISTANCE,
            dormant_capacity: DORMANT_CAPACITY,
            interval: 10,
            max_lost_fraction: 0.1,
            exports: ExportToggles::default(),
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key}: {e}")))
}

impl PipelineConfig {
    /// Parses `key=value` text on top of the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = PipelineConfig::default();
        let pairs = key_values(text, "config").map_err(|e| Error::Config(e.to_string()))?;
        for (key, v) in pairs {
            let k = key.as_str();
            let v = v.as_str();
            match k {
                "pose_source" => c.pose_source = PoseSource::parse(v)?,
                "seed" => c.seed = value(k, v)?,
                "max_lost_fraction" => c.max_lost_fraction = value(k, v)?,
                "tracking.levels" => c.tracking.levels = value(k, v)?,
                "tracking.max_iterations" => c.tracking.max_iterations = value(k, v)?,
                "tracking.geometric_weight" => c.tracking.geometric_weight = value(k, v)?,
                "tracking.geometric_scale" => c.tracking.geometric_scale = value(k, v)?,
                "tracking.convergence" => c.tracking.convergence = value(k, v)?,
                "tracking.min_inliers" => c.tracking.min_inliers = value(k, v)?,
                "tracking.huber" => c.tracking.huber = value(k, v)?,
                "tracking.max_condition" => c.tracking.max_condition = value(k, v)?,
                "tracking.max_halvings" => c.tracking.max_halvings = value(k, v)?,
                "map.max_ray_distance" => c.map.max_ray_distance = value(k, v)?,
                "map.max_normal_angle" => c.map.max_normal_angle = value(k, v)?,
                "map.weight_sigma" => c.map.weight_sigma = value(k, v)?,
                "map.min_radius" => c.map.min_radius = value(k, v)?,
                "map.max_radius" => c.map.max_radius = value(k, v)?,
                "map.cell_size" => c.map.cell_size = value(k, v)?,
                "map.stable_confidence" => c.map.stable_confidence = value(k, v)?,
                "map.probation_frames" => c.map.probation_frames = value(k, v)?,
                "gaze.window" => c.gaze_window = value(k, v)?,
                "instances.min_size" => c.instance_min_size = value(k, v)?,
                "instances.link_distance" => c.instance_link = value(k, v)?,
                "instances.dormant_capacity" => c.dormant_capacity = value(k, v)?,
                "instances.interval" => c.interval = value(k, v)?,
                "export.ply" => c.exports.ply = value(k, v)?,
                "export.trajectory" => c.exports.trajectory = value(k, v)?,
                "export.gaze" => c.exports.gaze = value(k, v)?,
                "export.instances" => c.exports.instances = value(k, v)?,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.tracking.validate()?;
        self.map.validate()?;
        if self.interval == 0 || self.instance_link <= 0.0 || !(0.0..=1.0).contains(&self.max_lost_fraction) {
            return Err(Error::Config("interval, link distance or lost fraction out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub surfels: usize,
    pub lost_frames: usize,
    pub gaze_samples: usize,
    pub gaze_hits: usize,
    pub instances: usize,
    pub pose_source: PoseSource,
    pub seed: u64,
}

impl RunSummary {
    pub fn hit_rate(&self) -> f64 {
        if self.gaze_samples == 0 {
            0.0
        } else {
            self.gaze_hits as f64 / self.gaze_samples as f64
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "frames={}\nsurfels={}\nlost_frames={}\ngaze_samples={}\ngaze_hits={}\ngaze_hit_rate={:.6}\ninstances={}\npose_source={}\nseed={}\n",
            self.frames,
            self.surfels,
            self.lost_frames,
            self.gaze_samples,
            self.gaze_hits,
            self.hit_rate(),
            self.instances,
            self.pose_source.as_str(),
            self.seed
        )
    }
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub map: SurfelMap,
    pub trajectory: Vec<crate::tracking::TrajectoryEntry>,
    pub hits: Vec<GazeHit>,
    pub instances: Vec<ObjectInstance>,
    pub summary: RunSummary,
}

fn nearest_pose(gt: &[(f64, Pose)], t: f64) -> Result<Pose> {
    let i = gt.partition_point(|(s, _)| *s < t);
    let best = [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|j| gt.get(j))
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()));
    match best {
        Some((s, p)) if (s - t).abs() <= GROUNDTRUTH_TOLERANCE => Ok(*p),
        _ => Err(Error::parse("groundtruth", format!("no pose within {GROUNDTRUTH_TOLERANCE} s of {t}"))),
    }
}

fn refresh_instances(map: &mut SurfelMap, registry: &mut InstanceRegistry, cfg: &PipelineConfig, frame: usize) {
    let mut current = extract_instances_with(map, cfg.instance_min_size, cfg.instance_link);
    registry.update(&mut current, frame);
    registry.label_map(map);
}

/// Everything a run needs besides the frames themselves.
#[derive(Debug, Clone)]
pub struct SequenceInput {
    pub intrinsics: CameraIntrinsics,
    pub homography: Homography,
    /// Time-ordered eye-tracker samples.
    pub gaze: Vec<GazeSample>,
    pub groundtruth: Option<Vec<(f64, Pose)>>,
    pub class_names: Arc<[String]>,
    /// Frame timestamps, strictly increasing.
    pub timestamps: Vec<f64>,
}

impl SequenceInput {
    /// The inputs of an in-memory synthetic sequence, with its true poses as
    /// ground truth.
    pub fn synthetic(seq: &SyntheticSequence, class_names: &[String]) -> Self {
        SequenceInput {
            intrinsics: seq.intrinsics,
            homography: seq.homography,
            gaze: seq.gaze.iter().map(|g| g.sample).collect(),
            groundtruth: Some(seq.frames.iter().map(|f| f.frame.timestamp).zip(seq.poses.iter().copied()).collect()),
            class_names: class_names.iter().cloned().collect(),
            timestamps: seq.frames.iter().map(|f| f.frame.timestamp).collect(),
        }
    }
}

/// Processes the sequence under `root` without writing anything.
pub fn process(root: &Path, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let seq = load_sequence(root)?;
    let first = seq.load_frame(0)?;
    let class_names: Arc<[String]> = match (seq.load_class_names()?, &first.probabilities) {
        (Some(n), _) => n,
        (None, Some(p)) => default_class_names(p.classes),
        (None, None) => default_class_names(2),
    };
    drop(first);
    let input = SequenceInput {
        intrinsics: seq.intrinsics,
        homography: seq.load_homography()?,
        gaze: seq.load_gaze()?,
        groundtruth: seq.load_groundtruth()?,
        class_names,
        timestamps: seq.associations.iter().map(|a| a.timestamp).collect(),
    };
    process_frames(&input, seq.prefetch()?, cfg)
}

/// Runs the pipeline over `frames`, which must match `input.timestamps`.
pub fn process_frames<I>(input: &SequenceInput, frames: I, cfg: &PipelineConfig) -> Result<RunOutput>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    cfg.validate()?;
    let k = input.intrinsics;
    let homography = input.homography;
    let gaze = &input.gaze;
    let groundtruth = &input.groundtruth;
    let names = input.class_names.clone();
    let Some(&start) = input.timestamps.first() else {
        return Err(Error::MalformedManifest("no frames".into()));
    };
    if cfg.pose_source == PoseSource::GroundTruth && groundtruth.is_none() {
        return Err(Error::Config("ground-truth poses requested but the sequence has none".into()));
    }

    let mut map = SurfelMap::new(names.len(), cfg.map);
    map.set_class_names(names.clone())?;
    let mut registry = InstanceRegistry::new(cfg.dormant_capacity);
    let mut results: Vec<(f64, TrackingResult)> = Vec::with_capacity(input.timestamps.len());
    let mut hits: Vec<GazeHit> = Vec::with_capacity(gaze.len());
    let mut pose = match &groundtruth {
        Some(gt) => nearest_pose(gt, start)?,
        None => Pose::identity(),
    };
    let mut next_sample = gaze.partition_point(|g| g.timestamp < start);
    if next_sample > 0 {
        warn!("{next_sample} gaze samples precede the first frame and are ignored");
    }
    let mut lost_frames = 0;

    for (i, frame) in frames.into_iter().enumerate() {
        let frame = frame?;
        let result = if cfg.pose_source == PoseSource::GroundTruth {
            let gt = groundtruth.as_deref().expect("checked above");
            TrackingResult {
                pose: nearest_pose(gt, frame.timestamp)?,
                inliers: 0,
                residual: 0.0,
                status: TrackingStatus::Converged,
                iterations: 0,
            }
        } else if i == 0 || map.is_empty() {
            TrackingResult {
                pose,
                inliers: 0,
                residual: 0.0,
                status: TrackingStatus::Converged,
                iterations: 0,
            }
        } else {
            estimate_pose(&frame, &map, &pose, &k, &cfg.tracking)?
        };
        if result.status == TrackingStatus::Lost {
            lost_frames += 1;
            warn!("frame {i}: tracking lost ({} inliers)", result.inliers);
        }
        pose = result.pose;
        results.push((frame.timestamp, result));

        let report = integrate(&mut map, &frame, &pose, &k)?;
        let index = render_index_map(&map, &pose, &k);
        let fused = match &frame.probabilities {
            Some(p) => fuse_frame(&mut map, &index, p)?,
            None => 0,
        };
        debug!(
            "frame {i}: {} created, {} updated, {} fused, {} surfels",
            report.created,
            report.updated,
            fused,
            map.len()
        );

        let end = input.timestamps.get(i + 1).copied().unwrap_or(f64::INFINITY);
        while next_sample < gaze.len() && gaze[next_sample].timestamp < end {
            hits.push(attribute(&gaze[next_sample], &homography, &k, &index, &map, cfg.gaze_window));
            next_sample += 1;
        }

        if (i + 1) % cfg.interval == 0 {
            let pruned = map.prune(i);
            refresh_instances(&mut map, &mut registry, cfg, i);
            debug!("frame {i}: pruned {pruned}, {} active instances", registry.active().count());
        }
    }
    let frames = results.len();
    if frames % cfg.interval != 0 {
        refresh_instances(&mut map, &mut registry, cfg, frames - 1);
    }
    // Instances are attributed from the final grouping so early samples,
    // taken before their surfels became stable, are credited too.
    for h in &mut hits {
        if let Some(id) = final_instance(&map, h) {
            h.instance = Some(id);
        }
    }

    let instances: Vec<ObjectInstance> = registry.all().cloned().collect();
    let summary = RunSummary {
        frames,
        surfels: map.len(),
        lost_frames,
        gaze_samples: hits.len(),
        gaze_hits: hits.iter().filter(|h| h.surfel.is_some()).count(),
        instances: instances.len(),
        pose_source: cfg.pose_source,
        seed: cfg.seed,
    };
    info!(
        "{} frames, {} surfels, {} lost, gaze hit rate {:.3}",
        summary.frames,
        summary.surfels,
        summary.lost_frames,
        summary.hit_rate()
    );
    Ok(RunOutput {
        map,
        trajectory: head_trajectory(&results),
        hits,
        instances,
        summary,
    })
}

/// Instance of the hit surfel in the final map or, when it was pruned or
/// left unlabelled, of the nearest labelled surfel within the association
/// distance of the hit point.
fn final_instance(map: &SurfelMap, hit: &GazeHit) -> Option<InstanceId> {
    if let Some(id) = hit.surfel.and_then(|id| map.get(id)).and_then(|s| s.instance) {
        return Some(id);
    }
    let p = hit.point?;
    map.query_radius(&p, map.config().max_ray_distance)
        .into_iter()
        .filter_map(|id| map.get(id))
        .filter_map(|s| Some(((s.position - p).norm(), s.instance?)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, id)| id)
}

fn attribute(
    sample: &GazeSample,
    h: &crate::geometry::Homography,
    k: &crate::geometry::CameraIntrinsics,
    index: &crate::surfel_map::IndexMap,
    map: &SurfelMap,
    window: usize,
) -> GazeHit {
    match map_gaze_pixel(sample, h, k) {
        Ok(px) => locate_gaze_with(sample.timestamp, &px, index, map, window),
        Err(_) => {
            let px = sample.valid.then(|| apply_homography(&sample.pixel, h).ok()).flatten();
            GazeHit::miss(sample.timestamp, px)
        }
    }
}

/// Writes the enabled exports and the summary into `out`.
pub fn write_exports(output: &RunOutput, cfg: &PipelineConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::write(out, e))?;
    let names = output.map.class_names().clone();
    if cfg.exports.ply {
        ply::export_ply(&output.map, Palette::Rgb, &out.join(MAP_RGB))?;
        ply::export_ply(&output.map, Palette::Class, &out.join(MAP_CLASS))?;
    }
    if cfg.exports.trajectory {
        exports::export_trajectory(&output.trajectory, &out.join(TRAJECTORY))?;
    }
    if cfg.exports.gaze {
        let events: Vec<GazeEvent> = output.hits.iter().map(|h| GazeEvent::from_hit(h, &names)).collect();
        exports::export_gaze_events(&events, &out.join(GAZE_EVENTS))?;
    }
    if cfg.exports.instances {
        exports::export_instances(&output.instances, &names, &out.join(INSTANCES))?;
    }
    let p = out.join(SUMMARY);
    std::fs::write(&p, output.summary.to_text()).map_err(|e| Error::write(p, e))
}

/// Runs the pipeline on `root` and writes everything into `out`.
///
/// Fails with [`Error::TrackingLost`] after writing the exports when more
/// than the configured fraction of frames lost tracking.
pub fn run(root: &Path, cfg: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    let output = process(root, cfg)?;
    write_exports(&output, cfg, out)?;
    let s = output.summary;
    if s.lost_frames as f64 > cfg.max_lost_fraction * s.frames as f64 {
        return Err(Error::TrackingLost {
            lost: s.lost_frames,
            total: s.frames,
        });
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub instance: InstanceId,
    pub class_name: String,
    pub seconds: f64,
    pub revisits: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub rows: Vec<StatsRow>,
    /// Class names by total dwell, longest first.
    pub classes: Vec<(String, f64)>,
}

impl StatsReport {
    pub fn to_text(&self, top: usize) -> String {
        let mut s = String::new();
        if self.rows.is_empty() {
            return s;
        }
        s += "instance  class                 dwell_s  revisits  samples\n";
        for r in &self.rows {
            s += &format!(
                "{:>8}  {:<20} {:>8.3}  {:>8}  {:>7}\n",
                r.instance.0, r.class_name, r.seconds, r.revisits, r.samples
            );
        }
        s += "\ntop classes by dwell:\n";
        for (name, secs) in self.classes.iter().take(top) {
            s += &format!("  {name:<20} {secs:.3} s\n");
        }
        s
    }
}

/// Dwell and revisit statistics from a directory of exports.
pub fn stats(dir: &Path) -> Result<StatsReport> {
    let events = exports::read_gaze_events(&dir.join(GAZE_EVENTS))?;
    let table = exports::read_instances(&dir.join(INSTANCES))?;
    let hits: Vec<GazeHit> = events
        .iter()
        .map(|e| GazeHit {
            instance: e.instance.map(InstanceId),
            ..GazeHit::miss(e.ts, None)
        })
        .collect();
    let dwell = accumulate_dwell(&hits)?;
    let name_of = |id: InstanceId| {
        table
            .iter()
            .find(|r| r.instance == id.0)
            .map(|r| r.class_name.clone())
            .or_else(|| events.iter().find(|e| e.instance == Some(id.0)).and_then(|e| e.class_name.clone()))
            .unwrap_or_default()
    };
    let rows: Vec<StatsRow> = dwell
        .iter()
        .map(|(&id, d)| StatsRow {
            instance: id,
            class_name: name_of(id),
            seconds: d.seconds,
            revisits: d.revisits,
            samples: d.samples,
        })
        .collect();
    let mut classes: Vec<(String, f64)> = Vec::new();
    for r in &rows {
        match classes.iter_mut().find(|(n, _)| *n == r.class_name) {
            Some(c) => c.1 += r.seconds,
            None => classes.push((r.class_name.clone(), r.seconds)),
        }
    }
    classes.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(StatsReport { rows, classes })
}
