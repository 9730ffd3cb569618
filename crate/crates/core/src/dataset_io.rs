//! On-disk datasets, synthetic scene generation and training augmentation.
//!
//! Layout of one dataset:
//!
//! ```text
//! <root>/<dataset_id>/manifest.tsv              name<TAB>is_negative (0/1)
//! <root>/<dataset_id>/images/<name>.png         8-bit RGB
//! <root>/<dataset_id>/labels/<name>.png         8-bit gray, native ids, 255 = ignore
//! <root>/<dataset_id>/instances/<name>.png      16-bit gray, 0 = no instance (optional)
//! ```
//!
//! Without a manifest every `images/*.png` is listed as a regular image.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{InstanceMap, LabelMap};
use crate::labelspace::{Group, LabelSpace};
use crate::ops::resize_bilinear;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.tsv";

/// A materialized training or evaluation example.
///
/// `image` is stored planar as a `[1, 3, H, W]` tensor with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Tensor,
    pub labels: LabelMap,
    pub instances: Option<InstanceMap>,
    pub dataset_id: String,
    pub is_negative: bool,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }
}

/// One row of `manifest.tsv`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub is_negative: bool,
}

/// Parses a manifest. The first non-empty line must be the header
/// `name<TAB>is_negative`; `#` starts a comment line.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: &str| Error::Manifest {
            line: line_no,
            message: message.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if !header_seen {
            if cols != ["name", "is_negative"] {
                return Err(err("expected header `name<TAB>is_negative`"));
            }
            header_seen = true;
            continue;
        }
        let [name, flag] = cols[..] else {
            return Err(err("expected two tab-separated columns"));
        };
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(err("invalid sample name"));
        }
        let is_negative = match flag {
            "0" => false,
            "1" => true,
            _ => return Err(err("is_negative must be 0 or 1")),
        };
        entries.push(ManifestEntry {
            name: name.to_string(),
            is_negative,
        });
    }
    if !header_seen && !entries.is_empty() {
        return Err(Error::Manifest {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("name\tis_negative\n");
    for e in entries {
        out.push_str(&format!("{}\t{}\n", e.name, u8::from(e.is_negative)));
    }
    out
}

/// Lazily materialized sample files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleDescriptor {
    pub dataset_id: String,
    pub name: String,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    pub instance_path: Option<PathBuf>,
    pub is_negative: bool,
    pub height: usize,
    pub width: usize,
}

impl SampleDescriptor {
    /// Reads the files and encodes labels to unified ids.
    pub fn load(&self, space: &LabelSpace) -> Result<Sample> {
        self.load_with(space, false)
    }

    /// Like [`load`](Self::load), but a negative image keeps its negative-class
    /// pixels as the unified negative id so they can be scored.
    pub fn load_for_eval(&self, space: &LabelSpace) -> Result<Sample> {
        self.load_with(space, self.is_negative)
    }

    fn load_with(&self, space: &LabelSpace, keep_negative: bool) -> Result<Sample> {
        let image = read_image(&self.image_path)?;
        let native = read_labels(&self.label_path)?;
        let instances = self.instance_path.as_deref().map(read_instances).transpose()?;
        for (what, (h, w)) in [
            ("image", (image.height(), image.width())),
            ("labels", native.dims()),
        ]
        .into_iter()
        .chain(instances.as_ref().map(|i| ("instances", i.dims())))
        {
            if (h, w) != (self.height, self.width) {
                return Err(Error::ShapeMismatchFile {
                    path: self.image_path.clone(),
                    detail: format!("{what} is {h}x{w}, expected {}x{}", self.height, self.width),
                });
            }
        }
        Ok(Sample {
            name: self.name.clone(),
            image,
            labels: if keep_negative {
                space.encode_keep_negative(&self.dataset_id, &native)?
            } else {
                space.encode(&self.dataset_id, &native)?
            },
            instances,
            dataset_id: self.dataset_id.clone(),
            is_negative: self.is_negative,
        })
    }
}

/// An enumerated dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub group: Group,
    pub root: PathBuf,
    pub samples: Vec<SampleDescriptor>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn load(&self, index: usize, space: &LabelSpace) -> Result<Sample> {
        self.samples[index].load(space)
    }

    pub fn load_all(&self, space: &LabelSpace) -> Result<Vec<Sample>> {
        self.samples.iter().map(|d| d.load(space)).collect()
    }

    pub fn load_all_for_eval(&self, space: &LabelSpace) -> Result<Vec<Sample>> {
        self.samples.iter().map(|d| d.load_for_eval(space)).collect()
    }
}

fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path)?;
    Ok((h as usize, w as usize))
}

/// Enumerates `<root>/<dataset_id>` and checks that every image has a label
/// file of the same size. Pixel data is read only by [`SampleDescriptor::load`].
pub fn load_dataset(root: &Path, dataset_id: &str, space: &LabelSpace) -> Result<Dataset> {
    let group = space.dataset(dataset_id)?.group();
    let dir = root.join(dataset_id);
    let images_dir = dir.join("images");
    let manifest_path = dir.join(MANIFEST);
    let entries = if manifest_path.exists() {
        parse_manifest(&fs::read_to_string(&manifest_path)?)?
    } else if images_dir.is_dir() {
        let mut names: Vec<String> = fs::read_dir(&images_dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                (p.extension().is_some_and(|x| x == "png"))
                    .then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                    .flatten()
            })
            .collect();
        names.sort();
        names
            .into_iter()
            .map(|name| ManifestEntry {
                name,
                is_negative: false,
            })
            .collect()
    } else if dir.is_dir() {
        Vec::new()
    } else {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset directory {} does not exist", dir.display()),
        )));
    };

    let mut samples = Vec::with_capacity(entries.len());
    for e in entries {
        let file = format!("{}.png", e.name);
        let image_path = images_dir.join(&file);
        let label_path = dir.join("labels").join(&file);
        let instance_path = dir.join("instances").join(&file);
        if !label_path.exists() {
            return Err(Error::MissingLabel(label_path));
        }
        let (height, width) = dimensions(&image_path)?;
        let check = |path: &Path, what: &str| -> Result<()> {
            let dims = dimensions(path)?;
            if dims != (height, width) {
                return Err(Error::ShapeMismatchFile {
                    path: path.to_path_buf(),
                    detail: format!("{what} is {}x{}, image is {height}x{width}", dims.0, dims.1),
                });
            }
            Ok(())
        };
        check(&label_path, "label")?;
        let instance_path = if instance_path.exists() {
            check(&instance_path, "instance map")?;
            Some(instance_path)
        } else {
            None
        };
        samples.push(SampleDescriptor {
            dataset_id: dataset_id.to_string(),
            name: e.name,
            image_path,
            label_path,
            instance_path,
            is_negative: e.is_negative,
            height,
            width,
        });
    }
    Ok(Dataset {
        id: dataset_id.to_string(),
        group,
        root: root.to_path_buf(),
        samples,
    })
}

fn decode_error(path: &Path, detail: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Decodes an 8-bit single-channel label PNG.
pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    match image::load_from_memory_with_format(bytes, image::ImageFormat::Png)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            LabelMap::new(h as usize, w as usize, img.into_raw())
        }
        other => Err(decode_error(
            path,
            format!("labels must be 8-bit grayscale, found {:?}", other.color()),
        )),
    }
}

/// Decodes a 16-bit (or 8-bit) single-channel instance PNG.
pub fn decode_instances(bytes: &[u8], path: &Path) -> Result<InstanceMap> {
    match image::load_from_memory_with_format(bytes, image::ImageFormat::Png)? {
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            InstanceMap::new(h as usize, w as usize, img.into_raw())
        }
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            InstanceMap::new(h as usize, w as usize, img.into_raw().into_iter().map(u16::from).collect())
        }
        other => Err(decode_error(
            path,
            format!("instances must be grayscale, found {:?}", other.color()),
        )),
    }
}

/// Decodes any PNG into a `[1, 3, H, W]` tensor in `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let rgb = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::zeros([1, 3, h, w]);
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            t.data_mut()[c * h * w + i] = f64::from(px[c]) / 255.0;
        }
    }
    Ok(t)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    decode_image(&fs::read(path)?)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?, path)
}

pub fn read_instances(path: &Path) -> Result<InstanceMap> {
    decode_instances(&fs::read(path)?, path)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let img = GrayImage::from_raw(labels.width() as u32, labels.height() as u32, labels.data().to_vec())
        .expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn write_instances(path: &Path, instances: &InstanceMap) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(instances.width() as u32, instances.height() as u32, instances.data().to_vec())
            .expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes a `[1, 3, H, W]` tensor as 8-bit RGB, clamping to `[0, 1]`.
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let [_, _, h, w] = image.shape();
    let mut buf = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for c in 0..3 {
            let v = image.data()[c * h * w + i].clamp(0.0, 1.0);
            buf.push((v * 255.0).round() as u8);
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parameters of a synthetic shapes dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dataset_id: String,
    /// Unified class ids drawn in the scenes; all must be native to the dataset.
    pub classes: Vec<u8>,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_max_shapes")]
    pub max_shapes: usize,
    /// Share of images flagged negative. Those contain foreign-group shapes
    /// labelled with the dataset's negative class.
    #[serde(default)]
    pub negative_fraction: f64,
}

fn default_max_shapes() -> usize {
    4
}

impl SyntheticSpec {
    pub fn validate(&self, space: &LabelSpace) -> Result<()> {
        let map = space.dataset(&self.dataset_id)?;
        if self.classes.is_empty() {
            return Err(Error::config("classes", "at least one class is required"));
        }
        for &c in &self.classes {
            if map.native(c).is_none() || !space.is_object(c) {
                return Err(Error::config(
                    "classes",
                    format!("class {c} is not a class of dataset `{}`", self.dataset_id),
                ));
            }
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("height/width", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(Error::config("negative_fraction", "must lie in [0, 1]"));
        }
        if self.negative_fraction > 0.0 && map.negative().is_none() {
            return Err(Error::config(
                "negative_fraction",
                format!("dataset `{}` has no negative class", self.dataset_id),
            ));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fixed base color of a unified class.
pub fn class_color(class: u8) -> [f64; 3] {
    let h = splitmix(u64::from(class) + 1);
    std::array::from_fn(|c| 0.1 + 0.8 * ((h >> (c * 16)) & 0xffff) as f64 / 65535.0)
}

/// Indoor classes carry a stripe texture so the two domains differ in more
/// than color statistics.
fn texture(group: Group, y: usize, x: usize) -> f64 {
    match group {
        Group::Driving => 0.0,
        Group::Indoor => {
            if ((x + y) / 3).is_multiple_of(2) {
                0.08
            } else {
                -0.08
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let sh = rng.random_range((h / 6).max(1)..=(h / 2).max(1));
        let sw = rng.random_range((w / 6).max(1)..=(w / 2).max(1));
        let y0 = rng.random_range(0..=h - sh);
        let x0 = rng.random_range(0..=w - sw);
        if rng.random_bool(0.5) {
            Shape::Rect {
                y0,
                x0,
                y1: y0 + sh,
                x1: x0 + sw,
            }
        } else {
            Shape::Ellipse {
                cy: y0 as f64 + sh as f64 / 2.0,
                cx: x0 as f64 + sw as f64 / 2.0,
                ry: sh as f64 / 2.0,
                rx: sw as f64 / 2.0,
            }
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => (y0..y1).contains(&y) && (x0..x1).contains(&x),
            Shape::Ellipse { cy, cx, ry, rx } => {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

/// A rendered scene before it is written to disk.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub image: Tensor,
    /// Native ids of the target dataset.
    pub native_labels: LabelMap,
    pub instances: InstanceMap,
    pub is_negative: bool,
}

/// Renders scene `index` of `spec`; independent of every other index.
pub fn render_scene(spec: &SyntheticSpec, space: &LabelSpace, seed: u64, index: usize) -> Result<SyntheticScene> {
    let map = space.dataset(&spec.dataset_id)?;
    let group = map.group();
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index as u64)));
    let is_negative = spec.negative_fraction > 0.0 && rng.random_bool(spec.negative_fraction);
    let pick = |rng: &mut ChaCha8Rng| spec.classes[rng.random_range(0..spec.classes.len())];

    // Per-pixel (unified class, supervised, instance id, texture group).
    let top = pick(&mut rng);
    let bottom = pick(&mut rng);
    let horizon = rng.random_range(h / 4..=(3 * h / 4).max(h / 4));
    let mut class = vec![0u8; h * w];
    let mut supervised = vec![true; h * w];
    let mut inst = vec![0u16; h * w];
    let mut tex = vec![group; h * w];
    for y in 0..h {
        for x in 0..w {
            class[y * w + x] = if y < horizon { top } else { bottom };
        }
    }
    let foreign: Vec<u8> = match group {
        Group::Driving => space.group_classes(Group::Indoor),
        Group::Indoor => space.group_classes(Group::Driving),
    };
    let n_shapes = rng.random_range(1..=spec.max_shapes.max(1));
    let mut next_instance = 1u16;
    for s in 0..n_shapes {
        let shape = Shape::random(&mut rng, h, w);
        let is_foreign = is_negative && (s == 0 || rng.random_bool(0.5)) && !foreign.is_empty();
        let c = if is_foreign {
            foreign[rng.random_range(0..foreign.len())]
        } else {
            pick(&mut rng)
        };
        let info = space.class(c).expect("object class");
        let id = if info.has_instances && !is_foreign {
            next_instance += 1;
            next_instance - 1
        } else {
            0
        };
        for y in 0..h {
            for x in 0..w {
                if shape.contains(y, x) {
                    let i = y * w + x;
                    class[i] = c;
                    supervised[i] = !is_foreign;
                    inst[i] = id;
                    tex[i] = info.group;
                }
            }
        }
    }
    // Instance classes in the background bands get one instance each.
    for band in [top, bottom] {
        if space.class(band).is_some_and(|c| c.has_instances) {
            let id = next_instance;
            next_instance += 1;
            for i in 0..h * w {
                if class[i] == band && supervised[i] && inst[i] == 0 {
                    inst[i] = id;
                }
            }
        }
    }

    let negative_native = map.negative().map(|(_, n)| n);
    let mut image = Tensor::zeros([1, 3, h, w]);
    let mut native = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let color = class_color(class[i]);
            let t = texture(tex[i], y, x);
            for (c, base) in color.iter().enumerate() {
                let noise = rng.random_range(-0.04..0.04);
                image.data_mut()[c * h * w + i] = (base + t + noise).clamp(0.0, 1.0);
            }
            native[i] = if supervised[i] {
                map.native(class[i]).expect("validated class")
            } else {
                negative_native.expect("validated negative class")
            };
        }
    }
    Ok(SyntheticScene {
        image,
        native_labels: LabelMap::new(h, w, native)?,
        instances: InstanceMap::new(h, w, inst)?,
        is_negative,
    })
}

/// Renders `spec.count` scenes into `<root>/<dataset_id>`. The manifest is
/// written last, so a failed run never leaves a manifest behind.
pub fn generate_synthetic(root: &Path, spec: &SyntheticSpec, space: &LabelSpace, seed: u64) -> Result<Dataset> {
    spec.validate(space)?;
    let dir = root.join(&spec.dataset_id);
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path)?;
    }
    let with_instances = space.group_classes(Group::Driving).iter().any(|&c| spec.classes.contains(&c))
        && spec.classes.iter().any(|&c| space.class(c).is_some_and(|i| i.has_instances));
    for sub in ["images", "labels"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    if with_instances {
        fs::create_dir_all(dir.join("instances"))?;
    }
    let mut entries = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let scene = render_scene(spec, space, seed, index)?;
        let name = format!("{index:05}");
        let file = format!("{name}.png");
        write_image(&dir.join("images").join(&file), &scene.image)?;
        write_labels(&dir.join("labels").join(&file), &scene.native_labels)?;
        if with_instances {
            write_instances(&dir.join("instances").join(&file), &scene.instances)?;
        }
        entries.push(ManifestEntry {
            name,
            is_negative: scene.is_negative,
        });
    }
    write_atomic(&manifest_path, format_manifest(&entries).as_bytes())?;
    load_dataset(root, &spec.dataset_id, space)
}

/// Random scale, crop and flip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub scale_min: f64,
    pub scale_max: f64,
    pub crop: usize,
    pub flip_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            scale_min: 0.5,
            scale_max: 2.0,
            crop: 768,
            flip_prob: 0.5,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::config("augment.scale_min/scale_max", "need 0 < scale_min <= scale_max"));
        }
        if self.crop == 0 {
            return Err(Error::config("augment.crop", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("augment.flip_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Nearest-neighbor source index for half-pixel aligned resampling.
fn nearest_taps(input: usize, output: usize) -> Vec<usize> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| (((o as f64 + 0.5) * scale).floor() as usize).min(input - 1))
        .collect()
}

fn resize_nearest<T: Copy>(g: &crate::grid::Grid<T>, h: usize, w: usize) -> crate::grid::Grid<T> {
    let ty = nearest_taps(g.height(), h);
    let tx = nearest_taps(g.width(), w);
    crate::grid::Grid::from_fn(h, w, |y, x| g.get(ty[y], tx[x]))
}

/// Places a `crop x crop` window at offset (`oy`, `ox`) of a `h x w` source;
/// negative offsets pad.
fn crop_grid<T: Copy>(g: &crate::grid::Grid<T>, crop: usize, oy: isize, ox: isize, fill: T) -> crate::grid::Grid<T> {
    crate::grid::Grid::from_fn(crop, crop, |y, x| {
        let sy = y as isize + oy;
        let sx = x as isize + ox;
        if sy < 0 || sx < 0 || sy as usize >= g.height() || sx as usize >= g.width() {
            fill
        } else {
            g.get(sy as usize, sx as usize)
        }
    })
}

fn crop_image(img: &Tensor, crop: usize, oy: isize, ox: isize) -> Tensor {
    let [_, c, h, w] = img.shape();
    let mut out = Tensor::zeros([1, c, crop, crop]);
    for ci in 0..c {
        let plane = img.plane(0, ci);
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        let dst = out.plane_mut(0, ci);
        for y in 0..crop {
            for x in 0..crop {
                let sy = y as isize + oy;
                let sx = x as isize + ox;
                dst[y * crop + x] = if sy < 0 || sx < 0 || sy as usize >= h || sx as usize >= w {
                    mean
                } else {
                    plane[sy as usize * w + sx as usize]
                };
            }
        }
    }
    out
}

fn flip_image(img: &Tensor) -> Tensor {
    let [n, c, h, w] = img.shape();
    Tensor::from_fn([n, c, h, w], |[i, ci, y, x]| img.at([i, ci, y, w - 1 - x]))
}

/// Draws a window offset along one axis: inside the image when it is large
/// enough, otherwise a negative offset placing the image inside the window.
fn draw_offset(rng: &mut impl Rng, size: usize, crop: usize) -> isize {
    if size >= crop {
        rng.random_range(0..=size - crop) as isize
    } else {
        -(rng.random_range(0..=crop - size) as isize)
    }
}

/// Applies scale, crop and flip jointly to image, labels and instances.
pub fn augment(sample: &Sample, params: &AugmentParams, ignore_id: u8, rng: &mut impl Rng) -> Sample {
    let s = params.scale_min + (params.scale_max - params.scale_min) * rng.random::<f64>();
    let (h, w) = (sample.height(), sample.width());
    let sh = ((h as f64 * s).round() as usize).max(1);
    let sw = ((w as f64 * s).round() as usize).max(1);
    let image = resize_bilinear(&sample.image, sh, sw);
    let labels = resize_nearest(&sample.labels, sh, sw);
    let instances = sample.instances.as_ref().map(|i| resize_nearest(i, sh, sw));

    let oy = draw_offset(rng, sh, params.crop);
    let ox = draw_offset(rng, sw, params.crop);
    let mut image = crop_image(&image, params.crop, oy, ox);
    let mut labels = crop_grid(&labels, params.crop, oy, ox, ignore_id);
    let mut instances = instances.map(|i| crop_grid(&i, params.crop, oy, ox, 0));

    if rng.random::<f64>() < params.flip_prob {
        image = flip_image(&image);
        labels = labels.flip_horizontal();
        instances = instances.map(|i| i.flip_horizontal());
    }
    Sample {
        name: sample.name.clone(),
        image,
        labels,
        instances,
        dataset_id: sample.dataset_id.clone(),
        is_negative: sample.is_negative,
    }
}

/// Stacks sample images into one `[B, 3, H, W]` batch.
pub fn stack_images(samples: &[Sample]) -> Result<Tensor> {
    let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
    Tensor::stack(&images)
}
