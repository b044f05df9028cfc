//! Text exports: TUM trajectories, gaze CSV and JSONL, instance tables.

use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{GazeHit, GazeSample};
use crate::geometry::Pose;
use crate::instances::ObjectInstance;
use crate::tracking::TrajectoryEntry;

fn write_all(path: &Path, text: &str) -> Result<()> {
    let mut w = crate::io::create_file(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::write(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))
}

/// One TUM line, `timestamp tx ty tz qx qy qz qw`, with `qw >= 0`.
pub fn tum_line(timestamp: f64, pose: &Pose) -> String {
    let mut q = *pose.quaternion().quaternion();
    if q.w < 0.0 {
        q = -q;
    }
    let t = &pose.translation;
    format!(
        "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
    )
}

pub fn format_trajectory(entries: &[TrajectoryEntry]) -> String {
    entries.iter().map(|e| tum_line(e.timestamp, &e.pose) + "\n").collect()
}

pub fn export_trajectory(entries: &[TrajectoryEntry], path: &Path) -> Result<()> {
    write_all(path, &format_trajectory(entries))
}

pub fn parse_trajectory(text: &str) -> Result<Vec<(f64, Pose)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse("trajectory", format!("line {}: {e}", n + 1)))?;
        if v.len() != 8 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse("trajectory", format!("line {}: expected 8 finite numbers", n + 1)));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if q.norm() < 1e-9 {
            return Err(Error::parse("trajectory", format!("line {}: zero quaternion", n + 1)));
        }
        let pose = Pose::from_quaternion(&UnitQuaternion::from_quaternion(q), Vector3::new(v[1], v[2], v[3]));
        out.push((v[0], pose));
    }
    Ok(out)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>> {
    parse_trajectory(&read(path)?)
}

pub fn parse_gaze_csv(text: &str) -> Result<Vec<GazeSample>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == "timestamp,x,y,valid" => {}
        _ => return Err(Error::parse("gaze csv", "expected header `timestamp,x,y,valid`")),
    }
    let mut out: Vec<GazeSample> = Vec::new();
    for (n, line) in lines {
        let bad = |m: &str| Error::parse("gaze csv", format!("line {}: {m}", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(&e.to_string()));
        let valid = match f[3] {
            "1" => true,
            "0" => false,
            other => return Err(bad(&format!("valid must be 0 or 1, got `{other}`"))),
        };
        let mut s = GazeSample::new(num(f[0])?, num(f[1])?, num(f[2])?);
        s.valid = valid;
        if out.last().is_some_and(|p| p.timestamp > s.timestamp) {
            return Err(Error::NonMonotonicTimestamps(out.len()));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn read_gaze_csv(path: &Path) -> Result<Vec<GazeSample>> {
    parse_gaze_csv(&read(path)?)
}

pub fn format_gaze_csv(samples: &[GazeSample]) -> String {
    let mut s = String::from("timestamp,x,y,valid\n");
    for g in samples {
        s += &format!("{:.6},{:.6},{:.6},{}\n", g.timestamp, g.pixel.x, g.pixel.y, g.valid as u8);
    }
    s
}

pub fn write_gaze_csv(samples: &[GazeSample], path: &Path) -> Result<()> {
    write_all(path, &format_gaze_csv(samples))
}

/// One line of the gaze event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeEvent {
    pub ts: f64,
    pub source: String,
    pub px: Option<[f64; 2]>,
    pub point: Option<[f64; 3]>,
    pub surfel: Option<u64>,
    pub class: Option<usize>,
    pub class_name: Option<String>,
    pub instance: Option<u32>,
}

impl GazeEvent {
    pub fn from_hit(hit: &GazeHit, class_names: &[String]) -> Self {
        GazeEvent {
            ts: hit.timestamp,
            source: hit.source.as_str().to_string(),
            px: hit.pixel.map(|p| [p.x, p.y]),
            point: hit.point.map(|p| [p.x, p.y, p.z]),
            surfel: hit.surfel.map(|s| s.0),
            class: hit.class,
            class_name: hit.class.and_then(|c| class_names.get(c).cloned()),
            instance: hit.instance.map(|i| i.0),
        }
    }
}

pub fn format_gaze_events(events: &[GazeEvent]) -> String {
    let mut s = String::new();
    for e in events {
        s += &serde_json::to_string(e).expect("gaze events always serialize");
        s.push('\n');
    }
    s
}

pub fn export_gaze_events(events: &[GazeEvent], path: &Path) -> Result<()> {
    write_all(path, &format_gaze_events(events))
}

pub fn parse_gaze_events(text: &str) -> Result<Vec<GazeEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse("gaze events", format!("line {}: {e}", n + 1))))
        .collect()
}

pub fn read_gaze_events(path: &Path) -> Result<Vec<GazeEvent>> {
    parse_gaze_events(&read(path)?)
}

pub const INSTANCE_HEADER: &str = "instance,class,class_name,size,cx,cy,cz,first_seen,last_seen";

pub fn format_instances(instances: &[ObjectInstance], class_names: &[String]) -> String {
    let mut s = format!("{INSTANCE_HEADER}\n");
    for i in instances {
        let name = class_names.get(i.class).map_or("", String::as_str);
        s += &format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{},{}\n",
            i.id.map_or(0, |id| id.0),
            i.class,
            name,
            i.size(),
            i.centroid.x,
            i.centroid.y,
            i.centroid.z,
            i.first_seen,
            i.last_seen
        );
    }
    s
}

pub fn export_instances(instances: &[ObjectInstance], class_names: &[String], path: &Path) -> Result<()> {
    write_all(path, &format_instances(instances, class_names))
}

/// A parsed instance table row.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRow {
    pub instance: u32,
    pub class: usize,
    pub class_name: String,
    pub size: usize,
    pub centroid: Vector3<f64>,
    pub first_seen: usize,
    pub last_seen: usize,
}

pub fn parse_instances(text: &str) -> Result<Vec<InstanceRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    if lines.next().map(|(_, l)| l.trim()) != Some(INSTANCE_HEADER) {
        return Err(Error::parse("instance table", "missing header"));
    }
    lines
        .map(|(n, line)| {
            let bad = || Error::parse("instance table", format!("line {}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad());
            }
            let u = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let x = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(InstanceRow {
                instance: f[0].parse().map_err(|_| bad())?,
                class: u(f[1])?,
                class_name: f[2].to_string(),
                size: u(f[3])?,
                centroid: Vector3::new(x(f[4])?, x(f[5])?, x(f[6])?),
                first_seen: u(f[7])?,
                last_seen: u(f[8])?,
            })
        })
        .collect()
}

pub fn read_instances(path: &Path) -> Result<Vec<InstanceRow>> {
    parse_instances(&read(path)?)
}

/// Class names, one per line.
pub fn parse_class_names(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}
