//! Datasets of posed views and point clouds on disk.
//!
//! A dataset is a TOML manifest with one `[[view]]` table per view:
//!
//! ```toml
//! [[view]]
//! id = "view_0"
//! width = 512
//! height = 288
//! fx = 400.0
//! fy = 400.0
//! cx = 256.0
//! cy = 144.0
//! rotation = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]  # row-major, world-to-camera
//! translation = [0.0, 0.0, 0.0]
//! image = "images/view_0.png"           # 8-bit RGB
//! depth = "depth/view_0.pfm"            # f32, 0.0 = invalid
//! confidence = "confidence/view_0.pfm"  # f32, nonnegative
//! ```
//!
//! Paths are relative to the manifest's directory. Camera lists (targets) use the
//! same layout under `[[camera]]` without the three path keys.

pub mod pfm;
pub mod ply;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageEncoder, Luma, Rgb};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, GeometryError, Intrinsics, Pose};
use crate::raster::{from_u8, is_valid_depth, to_u8, DepthMap, Image, Mask, Raster};

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("view '{view}': missing file {}", path.display())]
    MissingFile { view: String, path: PathBuf },
    #[error("view '{view}': dimension mismatch: {detail}")]
    DimensionMismatch { view: String, detail: String },
    #[error("view '{view}': invalid camera: {source}")]
    InvalidCamera {
        view: String,
        #[source]
        source: GeometryError,
    },
    #[error("view '{view}': invalid raster: {detail}")]
    InvalidRaster { view: String, detail: String },
    #[error("duplicate view id '{0}'")]
    DuplicateId(String),
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SceneIoError {
    /// True for errors caused by malformed or missing inputs rather than I/O failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, SceneIoError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneIoError + '_ {
    move |source| SceneIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One posed input view: image, depth, per-pixel depth confidence and camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub id: String,
    pub image: Image,
    pub depth: DepthMap,
    pub confidence: Raster<f32>,
    pub camera: Camera,
}

impl ViewRecord {
    /// Checks raster sizes against the camera and value ranges.
    pub fn validate(&self) -> Result<(), SceneIoError> {
        let (w, h) = (self.camera.width(), self.camera.height());
        for (name, dims) in [
            ("image", self.image.dims()),
            ("depth", self.depth.dims()),
            ("confidence", self.confidence.dims()),
        ] {
            if dims != (w, h) {
                return Err(SceneIoError::DimensionMismatch {
                    view: self.id.clone(),
                    detail: format!("{name} is {}x{}, camera declares {w}x{h}", dims.0, dims.1),
                });
            }
        }
        let bad = |detail: String| SceneIoError::InvalidRaster {
            view: self.id.clone(),
            detail,
        };
        if let Some(d) = self
            .depth
            .as_slice()
            .iter()
            .find(|&&d| d != 0.0 && !is_valid_depth(d))
        {
            return Err(bad(format!("depth value {d} is neither 0 (invalid) nor positive")));
        }
        if let Some(c) = self
            .confidence
            .as_slice()
            .iter()
            .find(|&&c| !(c.is_finite() && c >= 0.0))
        {
            return Err(bad(format!("confidence value {c} is not a finite nonnegative real")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }
}

/// Colored points with optional per-point support counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub colors: Vec<[f32; 3]>,
    pub counts: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraEntry {
    pub fn from_camera(id: impl Into<String>, camera: &Camera) -> Self {
        let k = &camera.intrinsics;
        let r = camera.pose.rotation();
        let t = camera.pose.translation();
        Self {
            id: id.into(),
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn camera(&self) -> Result<Camera, SceneIoError> {
        let wrap = |source| SceneIoError::InvalidCamera {
            view: self.id.clone(),
            source,
        };
        let k = Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(wrap)?;
        let pose = Pose::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
        )
        .map_err(wrap)?;
        Camera::new(k, pose).map_err(wrap)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ViewEntry {
    #[serde(flatten)]
    pub camera: CameraEntry,
    pub image: PathBuf,
    pub depth: PathBuf,
    pub confidence: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    #[serde(default, rename = "view")]
    pub views: Vec<ViewEntry>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct CameraList {
    #[serde(default, rename = "camera")]
    pub cameras: Vec<CameraEntry>,
}

impl CameraList {
    pub fn from_cameras<'a>(items: impl IntoIterator<Item = (&'a str, &'a Camera)>) -> Self {
        Self {
            cameras: items
                .into_iter()
                .map(|(id, c)| CameraEntry::from_camera(id, c))
                .collect(),
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SceneIoError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SceneIoError::Parse {
                path: path.to_path_buf(),
                msg: "file not found".into(),
            }
        } else {
            io_err(path)(e)
        }
    })?;
    toml::from_str(&text).map_err(|e| SceneIoError::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest, SceneIoError> {
    read_toml(path)
}

/// Reads a camera list; ids must be unique and every camera valid.
pub fn read_cameras(path: &Path) -> Result<Vec<(String, Camera)>, SceneIoError> {
    let list: CameraList = read_toml(path)?;
    let mut seen = std::collections::HashSet::new();
    list.cameras
        .iter()
        .map(|e| {
            if !seen.insert(e.id.clone()) {
                return Err(SceneIoError::DuplicateId(e.id.clone()));
            }
            Ok((e.id.clone(), e.camera()?))
        })
        .collect()
}

pub fn write_cameras(path: &Path, list: &CameraList) -> Result<(), SceneIoError> {
    let text = toml::to_string(list).expect("camera list serializes");
    write_atomic(path, text.as_bytes())
}

/// Loads every view of a manifest, in manifest order, validating all invariants.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<ViewRecord>, SceneIoError> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut seen = std::collections::HashSet::new();
    for v in &manifest.views {
        if !seen.insert(v.camera.id.as_str()) {
            return Err(SceneIoError::DuplicateId(v.camera.id.clone()));
        }
    }
    let loaded: Vec<Result<ViewRecord, SceneIoError>> = manifest
        .views
        .par_iter()
        .map(|entry| load_view(&root, entry))
        .collect();
    loaded.into_iter().collect()
}

fn load_view(root: &Path, entry: &ViewEntry) -> Result<ViewRecord, SceneIoError> {
    let id = entry.camera.id.clone();
    let camera = entry.camera.camera()?;
    let read = |rel: &Path| -> Result<Vec<u8>, SceneIoError> {
        let path = root.join(rel);
        fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                SceneIoError::MissingFile {
                    view: id.clone(),
                    path: path.clone(),
                }
            } else {
                io_err(&path)(e)
            }
        })
    };
    let raster_err = |what: &str, msg: String| SceneIoError::InvalidRaster {
        view: id.clone(),
        detail: format!("{what}: {msg}"),
    };
    let image = decode_png_rgb(&read(&entry.image)?).map_err(|m| raster_err("image", m))?;
    let depth = pfm::decode(&read(&entry.depth)?).map_err(|m| raster_err("depth", m))?;
    let confidence =
        pfm::decode(&read(&entry.confidence)?).map_err(|m| raster_err("confidence", m))?;
    let view = ViewRecord {
        id,
        image,
        depth,
        confidence,
        camera,
    };
    view.validate()?;
    Ok(view)
}

/// Writes images, depth/confidence rasters and `manifest.toml` under `dir`.
pub fn write_dataset(dir: &Path, views: &[ViewRecord]) -> Result<PathBuf, SceneIoError> {
    let results: Vec<Result<ViewEntry, SceneIoError>> = views
        .par_iter()
        .map(|v| {
            let image = PathBuf::from("images").join(format!("{}.png", v.id));
            let depth = PathBuf::from("depth").join(format!("{}.pfm", v.id));
            let confidence = PathBuf::from("confidence").join(format!("{}.pfm", v.id));
            write_atomic(&dir.join(&image), &encode_png_rgb(&v.image))?;
            write_atomic(&dir.join(&depth), &pfm::encode(&v.depth))?;
            write_atomic(&dir.join(&confidence), &pfm::encode(&v.confidence))?;
            Ok(ViewEntry {
                camera: CameraEntry::from_camera(v.id.clone(), &v.camera),
                image,
                depth,
                confidence,
            })
        })
        .collect();
    let manifest = Manifest {
        views: results.into_iter().collect::<Result<_, _>>()?,
    };
    let path = dir.join("manifest.toml");
    write_atomic(&path, toml::to_string(&manifest).expect("manifest serializes").as_bytes())?;
    Ok(path)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SceneIoError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io_err(parent))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Raster<f32>, SceneIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    pfm::decode(&bytes).map_err(|msg| SceneIoError::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_pfm(path: &Path, raster: &Raster<f32>) -> Result<(), SceneIoError> {
    write_atomic(path, &pfm::encode(raster))
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), SceneIoError> {
    write_atomic(path, &ply::encode(cloud))
}

pub fn read_ply(path: &Path) -> Result<PointCloud, SceneIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    ply::decode(&bytes).map_err(|msg| SceneIoError::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

/// Writes `cloud` to `path` and reads it back.
pub fn pointcloud_ply_roundtrip(cloud: &PointCloud, path: &Path) -> Result<PointCloud, SceneIoError> {
    write_ply(path, cloud)?;
    read_ply(path)
}

fn png_bytes<P: image::PixelWithColorType>(
    width: usize,
    height: usize,
    raw: &[u8],
) -> Vec<u8> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width as u32, height as u32, P::COLOR_TYPE)
        .expect("in-memory PNG encoding");
    out
}

pub fn encode_png_rgb(img: &Image) -> Vec<u8> {
    let raw: Vec<u8> = img.as_slice().iter().flat_map(|p| p.map(to_u8)).collect();
    png_bytes::<Rgb<u8>>(img.width(), img.height(), &raw)
}

pub fn decode_png_rgb(bytes: &[u8]) -> Result<Image, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| [from_u8(p[0]), from_u8(p[1]), from_u8(p[2])])
        .collect();
    Ok(Raster::from_vec(w, h, data).expect("decoded size"))
}

/// 8-bit grayscale mask: 255 where true, 0 where false.
pub fn encode_png_mask(mask: &Mask) -> Vec<u8> {
    let raw: Vec<u8> = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    png_bytes::<Luma<u8>>(mask.width(), mask.height(), &raw)
}

pub fn decode_png_mask(bytes: &[u8]) -> Result<Mask, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Raster::from_vec(w, h, img.pixels().map(|p| p[0] >= 128).collect()).unwrap())
}

pub fn encode_png_u16(raster: &Raster<u16>) -> Vec<u8> {
    // the encoder takes native-endian bytes for 16-bit samples
    let raw: Vec<u8> = raster.as_slice().iter().flat_map(|s| s.to_ne_bytes()).collect();
    png_bytes::<Luma<u16>>(raster.width(), raster.height(), &raw)
}

pub fn decode_png_u16(bytes: &[u8]) -> Result<Raster<u16>, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Raster::from_vec(w, h, img.into_raw()).unwrap())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, SceneIoError> {
    fs::read(path).map_err(io_err(path))
}
