//! Sequence directories: `manifest.txt`, `associations.txt` and the
//! per-frame image and probability files they reference.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::frame::{DepthImage, Frame, RgbImage};
use crate::gaze::GazeSample;
use crate::geometry::{CameraIntrinsics, Homography, Pose};
use crate::io::exports::{self, parse_class_names};
use crate::io::{key_values, pfrm, resolve_within};
use crate::synth::SyntheticSequence;

pub const MANIFEST: &str = "manifest.txt";
pub const PREFETCH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub timestamp: f64,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub probabilities: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub root: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub associations: Vec<Association>,
    pub gaze: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
    pub homography: Option<PathBuf>,
    pub class_names: Option<PathBuf>,
}

const INTRINSIC_KEYS: [&str; 7] = ["fx", "fy", "cx", "cy", "width", "height", "depth_scale"];

fn existing(root: &Path, rel: &str) -> Result<PathBuf> {
    let p = resolve_within(root, rel)?;
    if !p.is_file() {
        return Err(Error::MissingFile(p));
    }
    Ok(p)
}

fn parse_associations(root: &Path, text: &str) -> Result<Vec<Association>> {
    let mut out: Vec<Association> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&f.len()) {
            return Err(Error::MalformedManifest(format!("associations line {}: expected 3 or 4 fields", n + 1)));
        }
        let timestamp: f64 = f[0]
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| Error::MalformedManifest(format!("associations line {}: bad timestamp", n + 1)))?;
        if out.last().is_some_and(|a| a.timestamp >= timestamp) {
            return Err(Error::NonMonotonicTimestamps(out.len()));
        }
        out.push(Association {
            timestamp,
            rgb: existing(root, f[1])?,
            depth: existing(root, f[2])?,
            probabilities: f.get(3).map(|p| existing(root, p)).transpose()?,
        });
    }
    if out.is_empty() {
        return Err(Error::MalformedManifest("no associations".into()));
    }
    Ok(out)
}

/// Parses and validates the manifest under `root`. Every referenced file
/// must exist and lie inside `root`.
pub fn load_sequence(root: &Path) -> Result<SequenceManifest> {
    let manifest_path = root.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|_| Error::MalformedManifest(format!("cannot read {}", manifest_path.display())))?;
    let pairs = key_values(&text, "manifest").map_err(|e| Error::MalformedManifest(e.to_string()))?;
    let mut intrinsic_text = String::new();
    let mut associations = "associations.txt".to_string();
    let (mut gaze, mut groundtruth, mut homography, mut class_names) = (None, None, None, None);
    for (key, value) in pairs {
        match key.as_str() {
            k if INTRINSIC_KEYS.contains(&k) => intrinsic_text += &format!("{key}={value}\n"),
            "associations" => associations = value,
            "gaze" => gaze = Some(existing(root, &value)?),
            "groundtruth" => groundtruth = Some(existing(root, &value)?),
            "homography" => homography = Some(existing(root, &value)?),
            "classes" => class_names = Some(existing(root, &value)?),
            _ => return Err(Error::MalformedManifest(format!("unknown key `{key}`"))),
        }
    }
    let intrinsics =
        CameraIntrinsics::parse(&intrinsic_text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    let assoc_path = existing(root, &associations)?;
    let assoc_text = std::fs::read_to_string(&assoc_path)?;
    Ok(SequenceManifest {
        root: root.to_path_buf(),
        intrinsics,
        associations: parse_associations(root, &assoc_text)?,
        gaze,
        groundtruth,
        homography,
        class_names,
    })
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(_) => Error::MissingFile(path.to_path_buf()),
        other => Error::Image(other),
    })
}

fn check_dims(path: &Path, w: usize, h: usize, k: &CameraIntrinsics) -> Result<()> {
    if (w, h) != (k.width, k.height) {
        return Err(Error::parse(
            path.display().to_string(),
            format!("image is {w}x{h}, intrinsics say {}x{}", k.width, k.height),
        ));
    }
    Ok(())
}

pub fn read_rgb(path: &Path, k: &CameraIntrinsics) -> Result<RgbImage> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    check_dims(path, w, h, k)?;
    Ok(RgbImage {
        width: w,
        height: h,
        data: img.pixels().map(|p| p.0).collect(),
    })
}

pub fn read_depth(path: &Path, k: &CameraIntrinsics) -> Result<DepthImage> {
    let img = match open_image(path)? {
        image::DynamicImage::ImageLuma16(img) => img,
        _ => return Err(Error::parse(path.display().to_string(), "depth must be 16-bit single channel")),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    check_dims(path, w, h, k)?;
    Ok(DepthImage::from_raw(w, h, img.as_raw(), k.depth_scale))
}

pub fn write_rgb(path: &Path, rgb: &RgbImage) -> Result<()> {
    let raw: Vec<u8> = rgb.data.iter().flatten().copied().collect();
    let img = ImageBuffer::<Rgb<u8>, _>::from_raw(rgb.width as u32, rgb.height as u32, raw).expect("buffer size");
    img.save(path).map_err(Error::Image)
}

pub fn write_depth(path: &Path, depth: &DepthImage, depth_scale: f64) -> Result<()> {
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(depth.width as u32, depth.height as u32, depth.to_raw(depth_scale))
        .expect("buffer size");
    img.save(path).map_err(Error::Image)
}

impl SequenceManifest {
    pub fn len(&self) -> usize {
        self.associations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.associations.is_empty()
    }

    pub fn load_class_names(&self) -> Result<Option<Arc<[String]>>> {
        let Some(p) = &self.class_names else { return Ok(None) };
        let text = std::fs::read_to_string(p).map_err(|_| Error::MissingFile(p.clone()))?;
        Ok(Some(parse_class_names(&text).into()))
    }

    /// Loads one frame without gaze samples.
    pub fn load_frame(&self, index: usize) -> Result<Frame> {
        load_frame(&self.associations[index], index, &self.intrinsics, None)
    }

    pub fn load_gaze(&self) -> Result<Vec<GazeSample>> {
        self.gaze.as_deref().map_or(Ok(Vec::new()), exports::read_gaze_csv)
    }

    pub fn load_groundtruth(&self) -> Result<Option<Vec<(f64, Pose)>>> {
        self.groundtruth.as_deref().map(exports::load_trajectory).transpose()
    }

    pub fn load_homography(&self) -> Result<Homography> {
        match &self.homography {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|_| Error::MissingFile(p.clone()))?;
                Homography::parse(&text)
            }
            None => Ok(Homography::identity()),
        }
    }

    /// Streams frames from a loader thread through a queue of
    /// [`PREFETCH`] frames.
    pub fn prefetch(&self) -> Result<FrameStream> {
        let names = self.load_class_names()?;
        let (tx, rx) = sync_channel(PREFETCH);
        let associations = self.associations.clone();
        let k = self.intrinsics;
        let handle = std::thread::spawn(move || {
            for (i, a) in associations.iter().enumerate() {
                let frame = load_frame(a, i, &k, names.clone());
                let failed = frame.is_err();
                if tx.send(frame).is_err() || failed {
                    break;
                }
            }
        });
        Ok(FrameStream {
            rx,
            handle: Some(handle),
        })
    }
}

fn load_frame(a: &Association, index: usize, k: &CameraIntrinsics, names: Option<Arc<[String]>>) -> Result<Frame> {
    let rgb = read_rgb(&a.rgb, k)?;
    let depth = read_depth(&a.depth, k)?;
    let mut frame = Frame::new(index, a.timestamp, rgb, depth);
    if let Some(p) = &a.probabilities {
        let mut probs = pfrm::load(p)?;
        if (probs.width, probs.height) != (k.width, k.height) {
            return Err(Error::parse(p.display().to_string(), "probability map size differs from the images"));
        }
        if let Some(names) = names {
            probs = probs.with_class_names(names)?;
        }
        frame.probabilities = Some(probs);
    }
    Ok(frame)
}

/// Frames in order; the loader stops after the first error.
pub struct FrameStream {
    rx: Receiver<Result<Frame>>,
    handle: Option<JoinHandle<()>>,
}

impl Iterator for FrameStream {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.recv().ok()
    }
}

impl Drop for FrameStream {
    fn drop(&mut self) {
        // Unblocks a sender waiting on a full queue before joining.
        let (_, dummy) = sync_channel(0);
        drop(std::mem::replace(&mut self.rx, dummy));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Writes a synthetic sequence in the on-disk layout, plus `scene.txt` and
/// `targets.csv` with the fixated primitive of every gaze sample.
pub fn write_sequence(seq: &SyntheticSequence, class_names: &[String], root: &Path) -> Result<()> {
    for d in ["rgb", "depth", "prob"] {
        std::fs::create_dir_all(root.join(d)).map_err(|e| Error::write(root.join(d), e))?;
    }
    let k = &seq.intrinsics;
    let mut assoc = String::new();
    for r in &seq.frames {
        let f = &r.frame;
        let name = format!("{:06}", f.index);
        write_rgb(&root.join(format!("rgb/{name}.png")), &f.rgb)?;
        write_depth(&root.join(format!("depth/{name}.png")), &f.depth, k.depth_scale)?;
        assoc += &format!("{:.6} rgb/{name}.png depth/{name}.png", f.timestamp);
        if let Some(p) = &f.probabilities {
            pfrm::save(&root.join(format!("prob/{name}.pfrm")), p)?;
            assoc += &format!(" prob/{name}.pfrm");
        }
        assoc.push('\n');
    }
    let put = |name: &str, text: &str| {
        let p = root.join(name);
        std::fs::write(&p, text).map_err(|e| Error::write(p, e))
    };
    put("associations.txt", &assoc)?;
    let samples: Vec<GazeSample> = seq.gaze.iter().map(|g| g.sample).collect();
    put("gaze.csv", &exports::format_gaze_csv(&samples))?;
    let mut targets = String::from("timestamp,frame,target\n");
    for g in &seq.gaze {
        targets += &format!("{:.6},{},{}\n", g.sample.timestamp, g.frame, g.target);
    }
    put("targets.csv", &targets)?;
    let mut gt = String::new();
    for (r, pose) in seq.frames.iter().zip(&seq.poses) {
        gt += &exports::tum_line(r.frame.timestamp, pose);
        gt.push('\n');
    }
    put("groundtruth.txt", &gt)?;
    put("homography.txt", &seq.homography.to_text())?;
    put("classes.txt", &(class_names.join("\n") + "\n"))?;
    put("scene.txt", &seq.scene.to_text())?;
    put(
        MANIFEST,
        &format!(
            "{}associations=associations.txt\ngaze=gaze.csv\ngroundtruth=groundtruth.txt\nhomography=homography.txt\nclasses=classes.txt\n",
            k.to_key_values()
        ),
    )
}
