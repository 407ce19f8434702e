//! Datasets: IDX digit files, synthetic Gaussian blobs, class subsets, and
//! seeded mini-batching.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simplex::build_simplex;
use crate::tensor::{norm, Matrix};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// One instance per row (N×D).
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::CountMismatch { images: x.rows(), labels: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes: num_classes });
        }
        Ok(Dataset { x, labels, num_classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
        }
        (Matrix::from_vec_unchecked(indices.len(), d, data), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// First `n` instances (or all of them if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (x, labels) = self.gather(&idx);
        Dataset { x, labels, num_classes: self.num_classes, split: self.split }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// CSV with header `f0,…,f{D-1},label`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (k, &l) in self.labels.iter().enumerate() {
            let mut rec: Vec<String> = self.x.row(k).iter().map(|v| v.to_string()).collect();
            rec.push(l.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated { needed: self.pos.saturating_add(n), available: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }
}

/// Raw IDX image tensor: `count` images of `rows×cols` unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut r = IdxReader { bytes, pos: 0 };
    r.magic(IDX_IMAGES_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.take(count * rows * cols)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = IdxReader { bytes, pos: 0 };
    r.magic(IDX_LABELS_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(r.take(count)?.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset from parsed IDX parts, pixels scaled to [0, 1].
/// The class count is the largest label + 1 (at least 2).
pub fn idx_to_dataset(images: &IdxImages, labels: &[u8], split: Split) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::CountMismatch { images: images.count, labels: labels.len() });
    }
    if images.count == 0 {
        return Err(invalid("IDX file holds no instances"));
    }
    let d = images.rows * images.cols;
    let x = images.pixels.iter().map(|&p| f64::from(p) / PIXEL_SCALE).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(Matrix::new(images.count, d, x)?, labels, classes, split)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    idx_to_dataset(&images, &labels, split)
}

/// The standard file names inside a digits directory.
pub fn load_idx_dir(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx(dir.join(format!("{prefix}-images-idx3-ubyte")), dir.join(format!("{prefix}-labels-idx1-ubyte")), split)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterLayout {
    /// Columns of the C-class simplex, zero-padded to `dim` (needs dim >= C-1).
    #[default]
    SimplexScaled,
    /// Independent random unit vectors.
    RandomUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    #[serde(default)]
    pub centers: CenterLayout,
    pub spread: f64,
    pub per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 || self.per_class == 0 {
            return Err(invalid("blobs need classes >= 2, dim >= 1, per_class >= 1"));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(invalid(format!("blob spread must be >= 0, got {}", self.spread)));
        }
        if self.centers == CenterLayout::SimplexScaled && self.dim < self.classes - 1 {
            return Err(invalid(format!("simplex centers need dim >= {}", self.classes - 1)));
        }
        Ok(())
    }

    pub fn centers(&self) -> Result<Matrix> {
        self.validate()?;
        let mut c = Matrix::zeros(self.classes, self.dim);
        match self.centers {
            CenterLayout::SimplexScaled => {
                let s = build_simplex(self.classes)?;
                for k in 0..self.classes {
                    for r in 0..self.classes - 1 {
                        c.set(k, r, s.matrix().get(r, k));
                    }
                }
            }
            CenterLayout::RandomUnit => {
                // separate stream from the sampling noise
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(1);
                for k in 0..self.classes {
                    loop {
                        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                        let n = norm(&v);
                        if n > 1e-9 {
                            c.row_mut(k).iter_mut().zip(&v).for_each(|(dst, x)| *dst = x / n);
                            break;
                        }
                    }
                }
            }
        }
        Ok(c)
    }
}

/// Isotropic Gaussian blobs around unit-radius centers, split 80/20 per class.
pub fn make_blobs(spec: &BlobSpec) -> Result<(Dataset, Dataset)> {
    let centers = spec.centers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_train = ((spec.per_class as f64) * 0.8).round() as usize;
    let (mut train_x, mut train_y, mut test_x, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..spec.classes {
        for i in 0..spec.per_class {
            let (xs, ys) = if i < n_train { (&mut train_x, &mut train_y) } else { (&mut test_x, &mut test_y) };
            for &c in centers.row(k) {
                let z: f64 = StandardNormal.sample(&mut rng);
                xs.push(c + spec.spread * z);
            }
            ys.push(k);
        }
    }
    let build = |x: Vec<f64>, y: Vec<usize>, split| -> Result<Dataset> {
        if y.is_empty() {
            return Err(invalid(format!("{split:?} split is empty; raise per_class")));
        }
        Dataset::new(Matrix::new(y.len(), spec.dim, x)?, y, spec.classes, split)
    };
    Ok((build(train_x, train_y, Split::Train)?, build(test_x, test_y, Split::Test)?))
}

/// Keeps instances with label < k and sets the class count to k.
pub fn select_first_k_classes(d: &Dataset, k: usize) -> Result<Dataset> {
    if k < 2 || k > d.num_classes {
        return Err(invalid(format!("k must be in [2, {}], got {k}", d.num_classes)));
    }
    let idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] < k).collect();
    let (x, labels) = d.gather(&idx);
    if labels.is_empty() {
        return Err(invalid(format!("no instances with label < {k}")));
    }
    Ok(Dataset { x, labels, num_classes: k, split: d.split })
}

/// Seeded permutation of `0..n` for one epoch, cut into batches; the last
/// batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn batches(
    d: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> impl Iterator<Item = (Matrix, Vec<usize>)> + '_ {
    batch_indices(d.len(), batch_size, seed, epoch).into_iter().map(move |idx| d.gather(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cosine;
    use proptest::prelude::*;

    fn tiny_idx(n: usize) -> (IdxImages, Vec<u8>) {
        let pixels = (0..n * 4).map(|i| (i * 37 % 256) as u8).collect();
        (IdxImages { count: n, rows: 2, cols: 2, pixels }, (0..n).map(|i| (i % 10) as u8).collect())
    }

    #[test]
    fn idx_round_trip_and_scaling() {
        let (img, lab) = tiny_idx(12);
        let bytes = encode_idx_images(&img);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_idx_images(&bytes).unwrap(), img);
        assert_eq!(parse_idx_labels(&encode_idx_labels(&lab)).unwrap(), lab);

        let d = idx_to_dataset(&img, &lab, Split::Train).unwrap();
        assert_eq!((d.len(), d.dim(), d.num_classes), (12, 4, 10));
        assert_eq!(d.x.get(0, 1), 37.0 / 255.0);
        assert!(d.x.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn idx_errors_are_distinct() {
        let (img, lab) = tiny_idx(3);
        let img_bytes = encode_idx_images(&img);
        // images file handed over as labels
        assert!(matches!(
            parse_idx_labels(&img_bytes),
            Err(Error::BadMagic { expected: IDX_LABELS_MAGIC, found: IDX_IMAGES_MAGIC })
        ));
        assert!(matches!(parse_idx_images(&img_bytes[..img_bytes.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(parse_idx_images(&img_bytes[..6]), Err(Error::Truncated { .. })));
        assert!(matches!(
            idx_to_dataset(&img, &lab[..2], Split::Test),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        ));
    }

    #[test]
    fn load_idx_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = tiny_idx(5);
        fs::write(dir.path().join("t10k-images-idx3-ubyte"), encode_idx_images(&img)).unwrap();
        fs::write(dir.path().join("t10k-labels-idx1-ubyte"), encode_idx_labels(&lab)).unwrap();
        let d = load_idx_dir(dir.path(), Split::Test).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.split, Split::Test);
        let swapped =
            load_idx(dir.path().join("t10k-labels-idx1-ubyte"), dir.path().join("t10k-labels-idx1-ubyte"), Split::Test);
        assert!(matches!(swapped, Err(Error::BadMagic { .. })));
    }

    #[test]
    fn blobs_zero_spread_sit_on_centers() {
        let spec =
            BlobSpec { classes: 3, dim: 2, centers: CenterLayout::SimplexScaled, spread: 0.0, per_class: 10, seed: 1 };
        let (train, test) = make_blobs(&spec).unwrap();
        assert_eq!((train.len(), test.len()), (24, 6));
        let centers = spec.centers().unwrap();
        for d in [&train, &test] {
            for k in 0..d.len() {
                assert_eq!(d.x.row(k), centers.row(d.labels[k]));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                assert!((cosine(centers.row(i), centers.row(j)).unwrap() + 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blobs_are_deterministic() {
        for centers in [CenterLayout::SimplexScaled, CenterLayout::RandomUnit] {
            let spec = BlobSpec { classes: 4, dim: 5, centers, spread: 0.3, per_class: 20, seed: 9 };
            assert_eq!(make_blobs(&spec).unwrap(), make_blobs(&spec).unwrap());
            let c = spec.centers().unwrap();
            for k in 0..4 {
                assert!((norm(c.row(k)) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blob_spec_validation() {
        let bad =
            BlobSpec { classes: 5, dim: 2, centers: CenterLayout::SimplexScaled, spread: 0.1, per_class: 10, seed: 0 };
        assert!(make_blobs(&bad).is_err());
        let bad = BlobSpec { spread: -1.0, dim: 4, ..bad };
        assert!(make_blobs(&bad).is_err());
    }

    #[test]
    fn first_k_selection() {
        let spec =
            BlobSpec { classes: 10, dim: 9, centers: CenterLayout::SimplexScaled, spread: 0.1, per_class: 5, seed: 0 };
        let (train, _) = make_blobs(&spec).unwrap();
        assert_eq!(select_first_k_classes(&train, 10).unwrap(), train);
        let two = select_first_k_classes(&train, 2).unwrap();
        assert!(two.labels.iter().all(|&l| l < 2));
        assert_eq!(two.num_classes, 2);
        assert_eq!(two.len(), 8);
        assert!(select_first_k_classes(&train, 1).is_err());
        assert!(select_first_k_classes(&train, 11).is_err());
    }

    #[test]
    fn batch_shapes() {
        let sizes: Vec<usize> = batch_indices(10, 3, 0, 0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let one = batch_indices(7, 7, 5, 2);
        assert_eq!(one.len(), 1);
        let mut sorted = one[0].clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        assert_eq!(batch_indices(50, 8, 3, 4), batch_indices(50, 8, 3, 4));
        assert_ne!(batch_indices(50, 8, 3, 4), batch_indices(50, 8, 3, 5));
    }

    #[test]
    fn csv_export_header() {
        let spec =
            BlobSpec { classes: 2, dim: 3, centers: CenterLayout::RandomUnit, spread: 0.1, per_class: 5, seed: 0 };
        let (train, _) = make_blobs(&spec).unwrap();
        let mut buf = Vec::new();
        train.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("f0,f1,f2,label\n"));
        assert_eq!(text.lines().count(), 1 + train.len());
    }

    proptest! {
        #[test]
        fn epoch_covers_every_instance_once(n in 1usize..200, b in 1usize..40, seed in any::<u64>(), epoch in 0u64..5) {
            let mut all: Vec<usize> = batch_indices(n, b, seed, epoch).concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn nested_selection_composes(k1 in 2usize..=6, k2 in 2usize..=6, seed in any::<u64>()) {
            prop_assume!(k2 <= k1);
            let spec = BlobSpec { classes: 6, dim: 5, centers: CenterLayout::SimplexScaled, spread: 0.2, per_class: 4, seed };
            let (train, _) = make_blobs(&spec).unwrap();
            let a = select_first_k_classes(&select_first_k_classes(&train, k1).unwrap(), k2).unwrap();
            prop_assert_eq!(a, select_first_k_classes(&train, k2).unwrap());
        }

        #[test]
        fn idx_reserialization_is_identity(pixels in prop::collection::vec(any::<u8>(), 1..64), rows in 1usize..4) {
            let cols = 1;
            let count = pixels.len() / rows;
            prop_assume!(count > 0);
            let img = IdxImages { count, rows, cols, pixels: pixels[..count * rows].to_vec() };
            let labels: Vec<u8> = (0..count).map(|i| (i % 3) as u8).collect();
            let d = idx_to_dataset(&parse_idx_images(&encode_idx_images(&img)).unwrap(), &labels, Split::Train).unwrap();
            let back: Vec<u8> = d.x.as_slice().iter().map(|v| (v * PIXEL_SCALE).round() as u8).collect();
            prop_assert_eq!(back, img.pixels);
        }
    }
}
