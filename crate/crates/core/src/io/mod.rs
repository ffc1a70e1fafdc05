//! On-disk formats: score maps, parameter bundles, images, label maps and
//! dataset manifests.
//!
//! Binary formats are little-endian with 32-bit floats. In memory
//! everything is 64-bit.
//!
//! Score map (`SCM1`):
//!
//! ```text
//! "SCM1" | u32 height | u32 width | u32 channels | f32 × (H·W·C)
//! ```
//!
//! Parameter bundle (`PRB1`):
//!
//! ```text
//! "PRB1" | u32 version (= 1) | u32 count |
//!   count × { u32 name_len | name | u32 ndim | u32 × ndim | f32 × prod(dims) }
//! ```

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use crate::context::{ContextCrf, ContextMessageNet, GlobalCompatibility, GlobalHead};
use crate::error::{Error, FormatError, Result};
use crate::guidance::{CompatibilityMatrix, GuidanceCrf, GuidanceParams};
use crate::tensor::{GuideImage, LabelMap, ScoreMap, Tensor2D};
use crate::training::pipeline::{format_log, Arch, EpochLog, Model, ModelConfig, Sample};

const SCORE_MAGIC: &[u8; 4] = b"SCM1";
const BUNDLE_MAGIC: &[u8; 4] = b"PRB1";
const BUNDLE_VERSION: u32 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4.min(self.buf.len()))?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    /// `n` f32 values widened to f64; rejects NaN and infinities.
    fn floats(&mut self, n: usize, first_index: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| FormatError::CorruptHeader {
                offset: self.pos,
                reason: "payload size overflows".into(),
            })?;
        let raw = self.take(bytes)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, b)| {
                let v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(FormatError::NonFinite(first_index + i))
                }
            })
            .collect()
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::CorruptHeader {
                offset: self.pos,
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_floats(out: &mut Vec<u8>, data: &[f64]) {
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_score_map(map: &ScoreMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * map.data().len());
    out.extend_from_slice(SCORE_MAGIC);
    for d in [map.height(), map.width(), map.channels()] {
        push_u32(&mut out, d)?;
    }
    push_floats(&mut out, map.data());
    Ok(out)
}

pub fn decode_score_map(bytes: &[u8]) -> Result<ScoreMap> {
    let mut r = Reader::new(bytes);
    r.magic(SCORE_MAGIC)?;
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if h == 0 || w == 0 || c == 0 {
        return Err(FormatError::CorruptHeader {
            offset: 4,
            reason: format!("zero dimension in {h}x{w}x{c}"),
        }
        .into());
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| FormatError::CorruptHeader {
            offset: 4,
            reason: "dimensions overflow".into(),
        })?;
    let data = r.floats(n, 0)?;
    r.finish()?;
    Tensor2D::from_vec(h, w, c, data)
}

pub fn save_score_map(path: impl AsRef<Path>, map: &ScoreMap) -> Result<()> {
    write_file(path.as_ref(), &encode_score_map(map)?)
}

pub fn load_score_map(path: impl AsRef<Path>) -> Result<ScoreMap> {
    decode_score_map(&read_file(path.as_ref())?)
}

/// Every name a bundle may contain.
pub const BUNDLE_NAMES: [&str; 13] = [
    "context.conv1.weight",
    "context.conv1.bias",
    "context.conv2.weight",
    "context.conv2.bias",
    "global.mu",
    "global.head.weight",
    "global.head.bias",
    "guidance.mu",
    "guidance.lambda",
    "guidance.radius",
    "guidance.epsilon",
    "guidance.subsample",
    "guidance.iters",
];

#[derive(Clone, Debug, PartialEq)]
pub struct BundleEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named, shaped parameter arrays in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamBundle {
    entries: Vec<(String, BundleEntry)>,
}

impl ParamBundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces an entry. Unknown names are rejected.
    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if !BUNDLE_NAMES.contains(&name) {
            return Err(FormatError::UnknownComponent(name.to_string()).into());
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("{n} values for {shape:?}"), data.len()));
        }
        let entry = BundleEntry { shape, data };
        match self.entries.iter_mut().find(|(k, _)| k == name) {
            Some((_, e)) => *e = entry,
            None => self.entries.push((name.to_string(), entry)),
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BundleEntry> {
        self.entries.iter().find(|(k, _)| k == name).map(|(_, e)| e)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        push_u32(&mut out, BUNDLE_VERSION as usize)?;
        push_u32(&mut out, self.entries.len())?;
        for (name, e) in &self.entries {
            push_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            push_u32(&mut out, e.shape.len())?;
            for &d in &e.shape {
                push_u32(&mut out, d)?;
            }
            push_floats(&mut out, &e.data);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(BUNDLE_MAGIC)?;
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let count = r.u32()?;
        let mut bundle = Self::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| FormatError::CorruptHeader {
                    offset: at + 4,
                    reason: "entry name is not UTF-8".into(),
                })?
                .to_string();
            if !BUNDLE_NAMES.contains(&name.as_str()) {
                return Err(FormatError::UnknownComponent(name).into());
            }
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(FormatError::CorruptHeader {
                    offset: r.pos - 4,
                    reason: format!("{ndim} dimensions"),
                }
                .into());
            }
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
                FormatError::CorruptHeader {
                    offset: r.pos,
                    reason: "shape overflows".into(),
                }
            })?;
            let data = r.floats(n, 0)?;
            bundle.entries.push((name, BundleEntry { shape, data }));
        }
        r.finish()?;
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

/// Stores the parameters of every component the model's arch enables,
/// plus the guidance filter settings.
pub fn model_to_bundle(model: &Model) -> Result<ParamBundle> {
    let mut b = ParamBundle::new();
    let l = model.labels();
    if model.arch.context() {
        let n = &model.context.net;
        b.insert("context.conv1.weight", n.conv1.weight_shape().to_vec(), n.conv1.weight.clone())?;
        b.insert("context.conv1.bias", vec![n.conv1.out_channels], n.conv1.bias.clone())?;
        b.insert("context.conv2.weight", n.conv2.weight_shape().to_vec(), n.conv2.weight.clone())?;
        b.insert("context.conv2.bias", vec![l], n.conv2.bias.clone())?;
    }
    if model.arch.global() {
        let c = &model.context;
        b.insert("global.mu", vec![l, l, 2], c.mu_g.data().to_vec())?;
        b.insert("global.head.weight", vec![l], c.head.weight.clone())?;
        b.insert("global.head.bias", vec![l], c.head.bias.clone())?;
    }
    if model.arch.guidance() {
        let p = &model.guidance.params;
        b.insert("guidance.mu", vec![l, l], p.mu.data().to_vec())?;
        b.insert("guidance.lambda", vec![1], vec![p.lambda])?;
        b.insert("guidance.radius", vec![1], vec![p.filter.radius as f64])?;
        b.insert("guidance.epsilon", vec![1], vec![p.filter.epsilon])?;
        b.insert("guidance.subsample", vec![1], vec![p.filter.subsample as f64])?;
        b.insert("guidance.iters", vec![1], vec![p.iters as f64])?;
    }
    Ok(b)
}

fn expect_shape<'a>(b: &'a ParamBundle, name: &str, expected: &[usize]) -> Result<Option<&'a [f64]>> {
    match b.get(name) {
        None => Ok(None),
        Some(e) if e.shape == expected => Ok(Some(&e.data)),
        Some(e) => Err(FormatError::ShapeMismatch {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: e.shape.clone(),
        }
        .into()),
    }
}

fn scalar(b: &ParamBundle, name: &str) -> Result<Option<f64>> {
    Ok(expect_shape(b, name, &[1])?.map(|d| d[0]))
}

fn positive_int(b: &ParamBundle, name: &str) -> Result<Option<usize>> {
    match scalar(b, name)? {
        None => Ok(None),
        Some(v) if v >= 1.0 && v.fract() == 0.0 => Ok(Some(v as usize)),
        Some(v) => Err(Error::invalid(format!("{name} must be a positive integer, got {v}"))),
    }
}

/// Rebuilds a model for `labels` classes. The arch follows from which
/// components are present; missing guidance settings come from `defaults`.
pub fn model_from_bundle(bundle: &ParamBundle, labels: usize, defaults: &ModelConfig) -> Result<Model> {
    let l = labels;
    let has_context = bundle.contains("context.conv1.weight");
    let has_global = bundle.names().any(|n| n.starts_with("global."));
    let has_guidance = bundle.names().any(|n| n.starts_with("guidance."));
    let arch = match (has_context, has_global, has_guidance) {
        (false, false, false) => Arch::Unary,
        (true, false, false) => Arch::A,
        (true, true, false) => Arch::B,
        (true, true, true) => Arch::C,
        _ => {
            return Err(Error::invalid(
                "bundle components do not form a supported arch (unary, A, B or C)",
            ))
        }
    };
    let mut model = Model::new(arch, &ModelConfig { labels: l, ..defaults.clone() }, 0)?;

    if has_context {
        let w1 = bundle.get("context.conv1.weight").expect("checked");
        let [c, in_l, k1, k1b]: [usize; 4] = w1.shape.clone().try_into().map_err(|_| FormatError::ShapeMismatch {
            name: "context.conv1.weight".into(),
            expected: vec![defaults.net_channels, l, defaults.k1, defaults.k1],
            found: w1.shape.clone(),
        })?;
        let k2 = bundle
            .get("context.conv2.weight")
            .and_then(|e| e.shape.get(2).copied())
            .unwrap_or(defaults.k2);
        if in_l != l || k1 != k1b || k1 % 2 == 0 || k2 % 2 == 0 {
            return Err(FormatError::ShapeMismatch {
                name: "context.conv1.weight".into(),
                expected: vec![c, l, k1, k1],
                found: w1.shape.clone(),
            }
            .into());
        }
        let mut net = ContextMessageNet::zeros(l, c, k1, k2)?;
        let groups: [(&str, Vec<usize>, &mut Vec<f64>); 4] = [
            ("context.conv1.weight", vec![c, l, k1, k1], &mut net.conv1.weight),
            ("context.conv1.bias", vec![c], &mut net.conv1.bias),
            ("context.conv2.weight", vec![l, c, k2, k2], &mut net.conv2.weight),
            ("context.conv2.bias", vec![l], &mut net.conv2.bias),
        ];
        for (name, shape, dst) in groups {
            let d = expect_shape(bundle, name, &shape)?
                .ok_or_else(|| Error::invalid(format!("bundle lacks {name}")))?;
            dst.copy_from_slice(d);
        }
        let iters = model.context.iters;
        model.context = ContextCrf::new(net, model.context.mu_g.clone(), model.context.head.clone())?;
        model.context.iters = iters;
    }
    if has_global {
        if let Some(d) = expect_shape(bundle, "global.mu", &[l, l, 2])? {
            model.context.mu_g = GlobalCompatibility::from_vec(l, d.to_vec())?;
        }
        let mut head = GlobalHead::zeros(l);
        if let Some(d) = expect_shape(bundle, "global.head.weight", &[l])? {
            head.weight.copy_from_slice(d);
        }
        if let Some(d) = expect_shape(bundle, "global.head.bias", &[l])? {
            head.bias.copy_from_slice(d);
        }
        model.context.head = head;
    }
    if has_guidance {
        let mut p: GuidanceParams = model.guidance.params.clone();
        if let Some(d) = expect_shape(bundle, "guidance.mu", &[l, l])? {
            p.mu = CompatibilityMatrix::from_vec(l, d.to_vec())?;
        }
        if let Some(v) = scalar(bundle, "guidance.lambda")? {
            p.lambda = v;
        }
        if let Some(v) = positive_int(bundle, "guidance.radius")? {
            p.filter.radius = v;
        }
        if let Some(v) = scalar(bundle, "guidance.epsilon")? {
            p.filter.epsilon = v;
        }
        if let Some(v) = positive_int(bundle, "guidance.subsample")? {
            p.filter.subsample = v;
        }
        if let Some(v) = positive_int(bundle, "guidance.iters")? {
            p.iters = v;
        }
        model.guidance = GuidanceCrf::new(p)?;
    }
    Ok(model)
}

fn unsupported(offset: usize, reason: impl Into<String>) -> Error {
    FormatError::Unsupported {
        offset,
        reason: reason.into(),
    }
    .into()
}

fn corrupt(offset: usize, reason: impl Into<String>) -> Error {
    FormatError::CorruptHeader {
        offset,
        reason: reason.into(),
    }
    .into()
}

/// Header of a binary netpbm file (`P5` or `P6`).
struct Pnm<'a> {
    kind: u8,
    width: usize,
    height: usize,
    maxval: usize,
    pixels: &'a [u8],
    pixel_offset: usize,
}

fn parse_pnm(bytes: &[u8]) -> Result<Pnm<'_>> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(unsupported(0, "expected binary PGM (P5) or PPM (P6)"));
    }
    let kind = bytes[1];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments before each field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt(start, format!("expected header field {}", k + 1)));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits")
            .parse()
            .map_err(|_| corrupt(start, "header value too large"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(corrupt(pos, "missing whitespace after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(corrupt(3, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(unsupported(pos - 1, format!("maxval {maxval} (only 8-bit data is supported)")));
    }
    let channels = if kind == b'6' { 3 } else { 1 };
    let need = width * height * channels;
    if bytes.len() - pos < need {
        return Err(FormatError::Truncated {
            offset: pos,
            needed: need,
            available: bytes.len(),
        }
        .into());
    }
    Ok(Pnm {
        kind,
        width,
        height,
        maxval,
        pixels: &bytes[pos..pos + need],
        pixel_offset: pos,
    })
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// 8-bit PNG, PPM (P6) or PGM (P5) as a 3-channel image in `[0, 1]`. Gray
/// images are replicated into all channels; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<GuideImage> {
    if bytes.starts_with(PNG_SIGNATURE) {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| corrupt(0, format!("PNG: {e}")))?;
        let rgb = match img {
            DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageRgb8(_)
            | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
            other => return Err(unsupported(0, format!("PNG color type {:?}", other.color()))),
        };
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        return Tensor2D::from_vec(h, w, 3, data);
    }
    let pnm = parse_pnm(bytes)?;
    let maxval = pnm.maxval as f64;
    let data: Vec<f64> = if pnm.kind == b'6' {
        pnm.pixels.iter().map(|&b| b as f64 / maxval).collect()
    } else {
        pnm.pixels.iter().flat_map(|&b| [b as f64 / maxval; 3]).collect()
    };
    if data.iter().any(|&v| v > 1.0) {
        let i = pnm.pixels.iter().position(|&b| b as usize > pnm.maxval).unwrap_or(0);
        return Err(corrupt(pnm.pixel_offset + i, "sample exceeds maxval"));
    }
    Tensor2D::from_vec(pnm.height, pnm.width, 3, data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GuideImage> {
    decode_image(&read_file(path.as_ref())?)
}

fn image_bytes(img: &GuideImage) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::shape("3 channels", img.channels()));
    }
    Ok(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
}

pub fn encode_ppm(img: &GuideImage) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(image_bytes(img)?);
    Ok(out)
}

pub fn encode_png(img: &GuideImage) -> Result<Vec<u8>> {
    let raw = image_bytes(img)?;
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| Error::invalid("image too large for PNG"))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Writes PNG when the extension is `png`, binary PPM otherwise.
pub fn save_image(path: impl AsRef<Path>, img: &GuideImage) -> Result<()> {
    let path = path.as_ref();
    let png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    write_file(path, &if png { encode_png(img)? } else { encode_ppm(img)? })
}

/// 8-bit binary PGM; 255 is the ignore label.
pub fn decode_label_map(bytes: &[u8]) -> Result<LabelMap> {
    let pnm = parse_pnm(bytes)?;
    if pnm.kind != b'5' {
        return Err(unsupported(0, "label maps must be binary PGM (P5)"));
    }
    LabelMap::new(pnm.height, pnm.width, pnm.pixels.to_vec())
}

pub fn encode_label_map(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    out.extend_from_slice(&labels.data);
    out
}

pub fn load_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_label_map(&read_file(path.as_ref())?)
}

pub fn save_label_map(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_file(path.as_ref(), &encode_label_map(labels))
}

/// One manifest line, with paths already resolved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub unary: PathBuf,
}

/// Parses `image<TAB>labels<TAB>unary` lines. Blank lines and lines starting
/// with `#` are skipped. Relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(FormatError::Manifest {
                line: i + 1,
                reason: format!("expected 3 tab-separated paths, found {}", fields.len()),
            }
            .into());
        }
        let resolve = |p: &str| base.join(p);
        out.push(ManifestEntry {
            image: resolve(fields[0]),
            labels: resolve(fields[1]),
            unary: resolve(fields[2]),
        });
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

pub fn load_sample(entry: &ManifestEntry) -> Result<Sample> {
    let image = load_image(&entry.image)?;
    let labels = load_label_map(&entry.labels)?;
    let unary = load_score_map(&entry.unary)?;
    if (labels.height, labels.width) != (image.height(), image.width()) {
        return Err(Error::shape(
            format!("{}x{} labels for {}", image.height(), image.width(), entry.image.display()),
            format!("{}x{}", labels.height, labels.width),
        ));
    }
    Ok(Sample { image, labels, unary })
}

pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Vec<Sample>> {
    load_manifest(manifest)?.iter().map(load_sample).collect()
}

/// Writes `image.ppm`, `labels.pgm` and `unary.scm` per sample into `dir`
/// under numbered names, plus `manifest.tsv` listing them.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let names = [format!("{i:04}.ppm"), format!("{i:04}.pgm"), format!("{i:04}.scm")];
        save_image(dir.join(&names[0]), &s.image)?;
        save_label_map(dir.join(&names[1]), &s.labels)?;
        save_score_map(dir.join(&names[2]), &s.unary)?;
        manifest.push_str(&names.join("\t"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.tsv");
    write_file(&path, manifest.as_bytes())?;
    Ok(path)
}

pub fn save_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    write_file(path.as_ref(), format_log(log).as_bytes())
}

#[cfg(test)]
mod tests;
