//! Datasets: the in-memory type, deterministic synthetic corpora, the IDX
//! image/label loader, and a binary container for persisting datasets
//! losslessly.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng::{self, tags};
use crate::tensor::Tensor;

/// Labeled images with pixel values in `[0, 1]`. All images share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    /// Validates shapes, label range, and the pixel range invariant.
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        let item_shape = images[0].shape().to_vec();
        for (i, img) in images.iter().enumerate() {
            if img.shape() != item_shape {
                return Err(Error::ShapeMismatch {
                    context: "dataset image",
                    expected: item_shape,
                    got: img.shape().to_vec(),
                });
            }
            if !img.all_finite() || !img.all_in_range(0.0, 1.0) {
                return Err(Error::Numeric(format!(
                    "image {i} has pixels outside [0, 1]"
                )));
            }
        }
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes,
                });
            }
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn item_shape(&self) -> &[usize] {
        self.images[0].shape()
    }

    /// Errors unless this dataset matches the model's input shape and class
    /// count.
    pub fn check_compatible(&self, model: &Model) -> Result<()> {
        if self.item_shape() != model.input_shape() {
            return Err(Error::ShapeMismatch {
                context: "dataset vs model input",
                expected: model.input_shape().to_vec(),
                got: self.item_shape().to_vec(),
            });
        }
        if self.num_classes != model.num_classes() {
            return Err(Error::Config(format!(
                "dataset has {} classes, model has {}",
                self.num_classes,
                model.num_classes()
            )));
        }
        Ok(())
    }

    /// Stacks the samples at `indices` into a batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let refs: Vec<&Tensor> = indices.iter().map(|&i| &self.images[i]).collect();
        let batch = Tensor::stack(&refs)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((batch, labels))
    }

    /// Seeded subsample without replacement.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::Config(format!(
                "cannot draw {n} samples from a dataset of {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = rng::stream(seed, tags::DATASET);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        order.truncate(n);
        let images = order.iter().map(|&i| self.images[i].clone()).collect();
        let labels = order.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(images, labels, self.num_classes)
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Two well-separated Gaussian blobs in 16 flat features.
    Blobs,
    /// 8x8 images: horizontal stripes (class 0) vs vertical stripes (class 1).
    Stripes,
    /// 28x28 images of ten seven-segment glyph classes with jitter and noise.
    Digits,
}

/// Deterministic synthetic dataset. Labels alternate through the classes, so
/// class counts are balanced within one sample.
pub fn synthetic_dataset(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("cannot generate an empty dataset".into()));
    }
    let base = rng::derive_seed(seed, tags::DATASET);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let num_classes = match kind {
        SyntheticKind::Blobs | SyntheticKind::Stripes => 2,
        SyntheticKind::Digits => 10,
    };
    for i in 0..n {
        let label = i % num_classes;
        let mut rng = rng::stream(base, i as u64);
        let image = match kind {
            SyntheticKind::Blobs => blob_image(label, &mut rng),
            SyntheticKind::Stripes => stripe_image(label, &mut rng),
            SyntheticKind::Digits => digit_image(label, &mut rng),
        };
        images.push(image);
        labels.push(label);
    }
    Dataset::new(images, labels, num_classes)
}

fn clamp01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

fn blob_image<R: Rng>(label: usize, rng: &mut R) -> Tensor {
    let mean = if label == 0 { 0.35 } else { 0.65 };
    let data = (0..16)
        .map(|_| {
            let e: f32 = StandardNormal.sample(rng);
            clamp01(mean + 0.06 * e)
        })
        .collect();
    Tensor::from_vec(&[16], data).expect("blob shape")
}

fn stripe_image<R: Rng>(label: usize, rng: &mut R) -> Tensor {
    let phase: usize = rng.random_range(0..2);
    let high = 0.75 + rng.random_range(0.0..0.2);
    let mut data = vec![0.0f32; 64];
    for r in 0..8 {
        for c in 0..8 {
            let on = if label == 0 {
                (r + phase) % 2 == 0
            } else {
                (c + phase) % 2 == 0
            };
            let base = if on { high } else { 0.1 };
            let e: f32 = StandardNormal.sample(rng);
            data[r * 8 + c] = clamp01(base + 0.08 * e);
        }
    }
    Tensor::from_vec(&[1, 8, 8], data).expect("stripe shape")
}

/// Seven-segment layout. Segments are axis-aligned rectangles on a 28x28
/// canvas; each sample gets integer jitter, a thickness, and a brightness,
/// and every segment keeps its own intensity factor whose low tail can fade
/// a stroke into the background, so classes that differ by one segment
/// genuinely overlap. Digits 4, 7, and 9 also carry a handwritten-style
/// descender: a short diagonal tail from the glyph's lower right toward the
/// bottom-right canvas corner, so corner pixels hold real class evidence.
fn digit_image<R: Rng>(label: usize, rng: &mut R) -> Tensor {
    const SEGMENTS_PER_DIGIT: [&[usize]; 10] = [
        &[0, 1, 2, 3, 4, 5],    // 0: A B C D E F
        &[1, 2],                // 1: B C
        &[0, 1, 6, 4, 3],       // 2: A B G E D
        &[0, 1, 6, 2, 3],       // 3: A B G C D
        &[5, 1, 6, 2],          // 4: F B G C
        &[0, 5, 6, 2, 3],       // 5: A F G C D
        &[0, 5, 6, 4, 2, 3],    // 6: A F G E C D
        &[0, 1, 2],             // 7: A B C
        &[0, 1, 2, 3, 4, 5, 6], // 8: all
        &[0, 1, 2, 3, 5, 6],    // 9: A B C D F G
    ];
    let dx: i32 = rng.random_range(-2..=2);
    let dy: i32 = rng.random_range(-2..=2);
    let t: usize = rng.random_range(2..=3);
    let brightness = 0.7 + rng.random_range(0.0..0.3);

    let (xl, xr) = ((7 + dx) as usize, (19 + dx) as usize);
    let (yt, ym, yb) = ((4 + dy) as usize, (13 + dy) as usize, (22 + dy) as usize);
    // (row_start, row_end, col_start, col_end), end exclusive.
    let rects: [(usize, usize, usize, usize); 7] = [
        (yt, yt + t, xl, xr + t),     // A top bar
        (yt, ym + t, xr, xr + t),     // B upper right
        (ym, yb + t, xr, xr + t),     // C lower right
        (yb, yb + t, xl, xr + t),     // D bottom bar
        (ym, yb + t, xl, xl + t),     // E lower left
        (yt, ym + t, xl, xl + t),     // F upper left
        (ym, ym + t, xl, xr + t),     // G middle bar
    ];

    let mut data = vec![0.0f32; 28 * 28];
    for v in data.iter_mut() {
        let e: f32 = StandardNormal.sample(rng);
        *v = clamp01(0.06 * e);
    }
    for &seg in SEGMENTS_PER_DIGIT[label] {
        let fade = rng.random_range(0.15..1.0);
        let level = brightness * fade;
        let (r0, r1, c0, c1) = rects[seg];
        for r in r0..r1 {
            for c in c0..c1 {
                let e: f32 = StandardNormal.sample(rng);
                data[r * 28 + c] = clamp01(level + 0.05 * e);
            }
        }
    }
    const TAILED: [usize; 3] = [4, 7, 9];
    if TAILED.contains(&label) {
        let reach = rng.random_range(3..=5);
        for k in 0..reach {
            // 2x2 blocks stepping down-right from the stroke's end; clips
            // keep the tail out of the last row and the outer four columns.
            let r0 = (yb + t + k).min(25);
            let c0 = (xr + k).min(22);
            let level = brightness * rng.random_range(0.3..1.0);
            for r in r0..r0 + 2 {
                for c in c0..c0 + 2 {
                    let e: f32 = StandardNormal.sample(rng);
                    data[r * 28 + c] = clamp01(level + 0.05 * e);
                }
            }
        }
    }
    Tensor::from_vec(&[1, 28, 28], data).expect("digit shape")
}

// ---------------------------------------------------------------------------
// IDX files
// ---------------------------------------------------------------------------

const IDX_IMAGE_MAGIC: u32 = 2051;
const IDX_LABEL_MAGIC: u32 = 2049;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "{what}: need 4 bytes at offset {offset}, file has {}",
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().expect("4 bytes")))
}

/// Loads an IDX image file and its companion label file (the classic
/// handwritten-digit distribution format). Pixels are scaled from `0..=255`
/// to `[0, 1]`; images come out shaped `(1, rows, cols)`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let magic = read_u32_be(&img_bytes, 0, "image file magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image file {}: magic {magic}, expected {IDX_IMAGE_MAGIC}",
            images_path.display()
        )));
    }
    let n = read_u32_be(&img_bytes, 4, "image count")? as usize;
    let rows = read_u32_be(&img_bytes, 8, "image rows")? as usize;
    let cols = read_u32_be(&img_bytes, 12, "image cols")? as usize;
    let need = 16 + n * rows * cols;
    if img_bytes.len() != need {
        return Err(Error::Format(format!(
            "image file {}: {} bytes, expected {need} for {n} images of {rows}x{cols} \
             ({} bytes missing or extra)",
            images_path.display(),
            img_bytes.len(),
            (need as i64 - img_bytes.len() as i64).abs()
        )));
    }

    let magic = read_u32_be(&lbl_bytes, 0, "label file magic")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label file {}: magic {magic}, expected {IDX_LABEL_MAGIC}",
            labels_path.display()
        )));
    }
    let n_labels = read_u32_be(&lbl_bytes, 4, "label count")? as usize;
    if n_labels != n {
        return Err(Error::Format(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    if lbl_bytes.len() != 8 + n {
        return Err(Error::Format(format!(
            "label file {}: {} bytes, expected {}",
            labels_path.display(),
            lbl_bytes.len(),
            8 + n
        )));
    }

    let mut images = Vec::with_capacity(n);
    let per = rows * cols;
    for i in 0..n {
        let start = 16 + i * per;
        let data: Vec<f32> = img_bytes[start..start + per]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        images.push(Tensor::from_vec(&[1, rows, cols], data)?);
    }
    let labels: Vec<usize> = lbl_bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(images, labels, num_classes)
}

// ---------------------------------------------------------------------------
// Binary dataset container (lossless f32 persistence)
// ---------------------------------------------------------------------------

const DATASET_MAGIC: &[u8; 4] = b"GRSD";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    item_shape: Vec<usize>,
    num_classes: usize,
    len: usize,
}

pub fn dataset_to_bytes(data: &Dataset) -> Result<Vec<u8>> {
    let header = DatasetHeader {
        item_shape: data.item_shape().to_vec(),
        num_classes: data.num_classes,
        len: data.len(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let per: usize = data.item_shape().iter().product();
    let mut out =
        Vec::with_capacity(12 + header_json.len() + data.len() * (per * 4 + 4));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for img in &data.images {
        for v in img.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &y in &data.labels {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 12 || &bytes[0..4] != DATASET_MAGIC {
        return Err(Error::Format("not a dataset container".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Format("dataset header truncated".into()));
    }
    let header: DatasetHeader = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::Format(format!("dataset header is not valid JSON: {e}")))?;
    let per: usize = header.item_shape.iter().product();
    let expected = 12 + header_len + header.len * (per * 4 + 4);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "dataset payload is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut offset = 12 + header_len;
    let mut images = Vec::with_capacity(header.len);
    for _ in 0..header.len {
        let mut data = Vec::with_capacity(per);
        for _ in 0..per {
            data.push(f32::from_le_bytes(
                bytes[offset..offset + 4].try_into().expect("4 bytes"),
            ));
            offset += 4;
        }
        images.push(Tensor::from_vec(&header.item_shape, data)?);
    }
    let mut labels = Vec::with_capacity(header.len);
    for _ in 0..header.len {
        labels.push(u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes")) as usize);
        offset += 4;
    }
    Dataset::new(images, labels, header.num_classes)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_bytes(data)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    dataset_from_bytes(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_corpora_are_deterministic_and_balanced() {
        for kind in [SyntheticKind::Blobs, SyntheticKind::Stripes, SyntheticKind::Digits] {
            let a = synthetic_dataset(kind, 40, 7).unwrap();
            let b = synthetic_dataset(kind, 40, 7).unwrap();
            assert_eq!(a, b);
            let c = synthetic_dataset(kind, 40, 8).unwrap();
            assert_ne!(a, c);
            let mut counts = vec![0usize; a.num_classes];
            for &y in &a.labels {
                counts[y] += 1;
            }
            assert_eq!(counts.iter().sum::<usize>(), 40);
            let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(max - min <= 1, "class counts unbalanced: {counts:?}");
        }
    }

    #[test]
    fn digits_have_expected_shape_and_range() {
        let d = synthetic_dataset(SyntheticKind::Digits, 20, 1).unwrap();
        assert_eq!(d.item_shape(), &[1, 28, 28]);
        for img in &d.images {
            assert!(img.all_in_range(0.0, 1.0));
        }
    }

    #[test]
    fn subsample_is_seeded_and_sized() {
        let d = synthetic_dataset(SyntheticKind::Blobs, 50, 3).unwrap();
        let a = d.subsample(10, 4).unwrap();
        let b = d.subsample(10, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(d.subsample(51, 4).is_err());
        assert!(d.subsample(0, 4).is_err());
    }

    #[test]
    fn idx_fixture_round_trips() {
        // Hand-built IDX pair: four 2x3 images, values picked to check both
        // the byte order and the 1/255 scaling.
        let mut img = Vec::new();
        img.extend_from_slice(&2051u32.to_be_bytes());
        img.extend_from_slice(&4u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        let pixels: Vec<u8> = (0..24).map(|i| (i * 10) as u8).collect();
        img.extend_from_slice(&pixels);
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&2049u32.to_be_bytes());
        lbl.extend_from_slice(&4u32.to_be_bytes());
        lbl.extend_from_slice(&[0, 1, 2, 1]);

        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx");
        let lbl_path = dir.path().join("labels.idx");
        fs::write(&img_path, &img).unwrap();
        fs::write(&lbl_path, &lbl).unwrap();

        let d = load_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.item_shape(), &[1, 2, 3]);
        assert_eq!(d.labels, vec![0, 1, 2, 1]);
        assert_eq!(d.num_classes, 3);
        assert!((d.images[0].data()[1] - 10.0 / 255.0).abs() < 1e-7);
        assert!((d.images[3].data()[5] - 230.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn idx_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx");
        let lbl_path = dir.path().join("labels.idx");

        // Wrong magic.
        let mut img = Vec::new();
        img.extend_from_slice(&1234u32.to_be_bytes());
        img.extend_from_slice(&[0; 12]);
        fs::write(&img_path, &img).unwrap();
        fs::write(&lbl_path, [0u8; 9]).unwrap();
        assert!(matches!(
            load_idx(&img_path, &lbl_path),
            Err(Error::Format(_))
        ));

        // Truncated pixel payload: error must name the byte count.
        let mut img = Vec::new();
        img.extend_from_slice(&2051u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0u8; 5]); // needs 8
        fs::write(&img_path, &img).unwrap();
        let err = load_idx(&img_path, &lbl_path).unwrap_err();
        assert!(err.to_string().contains("3 bytes missing"), "{err}");
    }

    #[test]
    fn dataset_container_round_trips() {
        let d = synthetic_dataset(SyntheticKind::Stripes, 12, 9).unwrap();
        let bytes = dataset_to_bytes(&d).unwrap();
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn dataset_new_validates() {
        let img = Tensor::from_vec(&[4], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        assert!(Dataset::new(vec![img.clone()], vec![0, 1], 2).is_err());
        assert!(Dataset::new(vec![img.clone()], vec![5], 2).is_err());
        let bad = Tensor::from_vec(&[4], vec![0.0, 0.5, 1.5, 0.25]).unwrap();
        assert!(Dataset::new(vec![bad], vec![0], 2).is_err());
        assert!(Dataset::new(vec![img], vec![0], 2).is_ok());
    }
}
