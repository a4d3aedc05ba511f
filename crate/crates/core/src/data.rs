//! Datasets: IDX image files, synthetic Gaussian blobs, stratified splits
//! and shuffled mini-batches.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::numerics::{Matrix, RngState};
use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Train and validation halves of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train_x: Matrix,
    pub val_x: Matrix,
    pub train_labels: Vec<usize>,
    pub val_labels: Vec<usize>,
    pub k_classes: usize,
    pub d: usize,
}

impl DatasetSplit {
    /// Checks the split's own invariants.
    pub fn new(
        train_x: Matrix,
        train_labels: Vec<usize>,
        val_x: Matrix,
        val_labels: Vec<usize>,
        k_classes: usize,
    ) -> Result<Self> {
        if k_classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {k_classes}")));
        }
        if train_x.cols() != val_x.cols() {
            return Err(Error::Shape("train and validation widths differ".into()));
        }
        if train_x.rows() != train_labels.len() || val_x.rows() != val_labels.len() {
            return Err(Error::Shape("label count differs from row count".into()));
        }
        if let Some(&l) = train_labels.iter().chain(&val_labels).find(|&&l| l >= k_classes) {
            return Err(Error::InvalidArgument(format!("label {l} outside [0, {k_classes})")));
        }
        if !train_x.data().iter().chain(val_x.data()).all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        let d = train_x.cols();
        Ok(Self {
            train_x,
            val_x,
            train_labels,
            val_labels,
            k_classes,
            d,
        })
    }

    /// Keeps the first `n` training rows.
    pub fn truncate_train(mut self, n: usize) -> Self {
        if n < self.train_x.rows() {
            let keep: Vec<usize> = (0..n).collect();
            self.train_x = self.train_x.select_rows(&keep);
            self.train_labels.truncate(n);
        }
        self
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "{}: truncated at byte {} (wanted {n} more, file has {})",
                self.what,
                self.pos,
                self.bytes.len()
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses IDX image bytes into rows of `rows × cols` pixels scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let mut r = Reader { bytes, pos: 0, what: "image file" };
    let magic = r.u32().map_err(|_| Error::NotIdx("image file shorter than its header".into()))?;
    if magic != IMAGE_MAGIC {
        return Err(Error::NotIdx(format!("image magic {magic:#010x}")));
    }
    let count = r.u32()? as usize;
    let d = r.u32()? as usize * r.u32()? as usize;
    let pixels = r.take(count * d)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("image file has {} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Matrix::from_vec_unchecked(count, d, pixels.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader { bytes, pos: 0, what: "label file" };
    let magic = r.u32().map_err(|_| Error::NotIdx("label file shorter than its header".into()))?;
    if magic != LABEL_MAGIC {
        return Err(Error::NotIdx(format!("label magic {magic:#010x}")));
    }
    let count = r.u32()? as usize;
    let labels = r.take(count)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("label file has {} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(labels.iter().map(|&b| b as usize).collect())
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<(Matrix, Vec<usize>)> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&fs::read(ip).map_err(|e| Error::io("reading images", ip, e))?)?;
    let labels = parse_idx_labels(&fs::read(lp).map_err(|e| Error::io("reading labels", lp, e))?)?;
    if images.rows() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.rows(),
            labels.len()
        )));
    }
    Ok((images, labels))
}

/// Encodes `images` as IDX bytes, rounding pixels to the nearest of 256
/// levels.
pub fn encode_idx_images(images: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != images.cols() {
        return Err(Error::Shape(format!("{rows}×{cols} images but rows of width {}", images.cols())));
    }
    let mut out = Vec::with_capacity(16 + images.data().len());
    for v in [IMAGE_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte")))?);
    }
    Ok(out)
}

pub fn save_idx(
    images: &Matrix,
    labels: &[usize],
    shape: (usize, usize),
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let write = |path: &Path, bytes: Vec<u8>| -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io("creating IDX file", path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io("writing IDX file", path, e))
    };
    write(images_path.as_ref(), encode_idx_images(images, shape.0, shape.1)?)?;
    write(labels_path.as_ref(), encode_idx_labels(labels)?)
}

/// Stratified split: the first `round(n_c · train_fraction)` rows of each
/// class (in the given order) go to training, the rest to validation.
pub fn stratified_split(x: &Matrix, labels: &[usize], k_classes: usize, train_fraction: f64) -> Result<DatasetSplit> {
    if labels.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    let mut by_class = vec![Vec::new(); k_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::InvalidArgument(format!("label {l} outside [0, {k_classes})")))?
            .push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for rows in &by_class {
        let cut = (rows.len() as f64 * train_fraction).round() as usize;
        train.extend_from_slice(&rows[..cut]);
        val.extend_from_slice(&rows[cut..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    DatasetSplit::new(
        x.select_rows(&train),
        train.iter().map(|&i| labels[i]).collect(),
        x.select_rows(&val),
        val.iter().map(|&i| labels[i]).collect(),
        k_classes,
    )
}

/// `k_classes` isotropic Gaussian clusters in `d` dimensions with centres
/// drawn uniformly from [0.2, 0.8]^d and per-pixel noise `spread`, clamped
/// to [0, 1]. Rows are interleaved by class and split 80/20 per class.
pub fn make_blobs(n_per_class: usize, k_classes: usize, d: usize, spread: f64, seed: u64) -> Result<DatasetSplit> {
    if k_classes < 2 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "blobs need k >= 2 and d >= 2, got k={k_classes}, d={d}"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("spread must be finite and non-negative, got {spread}")));
    }
    let root = RngState::new(seed);
    let mut centre_rng = root.stream(0);
    let centres: Vec<Vec<f64>> = (0..k_classes)
        .map(|_| (0..d).map(|_| centre_rng.uniform_range(0.2, 0.8)).collect())
        .collect();
    let mut noise = root.stream(1);
    let n = n_per_class * k_classes;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (c, centre) in centres.iter().enumerate() {
            data.extend(centre.iter().map(|&m| (m + spread * noise.normal()).clamp(0.0, 1.0)));
            labels.push(c);
        }
    }
    stratified_split(&Matrix::new(n, d, data)?, &labels, k_classes, 0.8)
}

/// Shuffles row indices with `rng` and cuts them into batches; the last
/// batch may be short.
pub fn batch_indices(rows: usize, batch_size: usize, rng: &mut RngState) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batches(x: &Matrix, batch_size: usize, rng: &mut RngState) -> Result<Vec<Matrix>> {
    Ok(batch_indices(x.rows(), batch_size, rng)?
        .iter()
        .map(|idx| x.select_rows(idx))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::silhouette_score;

    #[test]
    fn blob_split_sizes() {
        let s = make_blobs(100, 3, 16, 0.05, 7).unwrap();
        assert_eq!((s.train_x.rows(), s.val_x.rows(), s.d), (240, 60, 16));
        for c in 0..3 {
            assert_eq!(s.train_labels.iter().filter(|&&l| l == c).count(), 80);
            assert_eq!(s.val_labels.iter().filter(|&&l| l == c).count(), 20);
        }
    }

    #[test]
    fn zero_spread_rows_are_identical_within_class() {
        let s = make_blobs(5, 2, 4, 0.0, 1).unwrap();
        for c in 0..2 {
            let rows: Vec<&[f64]> = (0..s.train_x.rows())
                .filter(|&i| s.train_labels[i] == c)
                .map(|i| s.train_x.row(i))
                .collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn blobs_are_well_separated() {
        let s = make_blobs(50, 4, 32, 0.05, 3).unwrap();
        assert!(silhouette_score(&s.train_x, &s.train_labels).unwrap() > 0.5);
        assert!(s.train_x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn batches_cover_rows_once() {
        let x = Matrix::new(10, 1, (0..10).map(f64::from).collect()).unwrap();
        let b = batches(&x, 4, &mut RngState::new(2)).unwrap();
        assert_eq!(b.iter().map(Matrix::rows).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut seen: Vec<f64> = b.iter().flat_map(|m| m.data().to_vec()).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, x.data());
        assert_eq!(b, batches(&x, 4, &mut RngState::new(2)).unwrap());
        assert!(batches(&x, 0, &mut RngState::new(2)).is_err());
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let pixels: Vec<f64> = (0..2 * 6).map(|i| (i * 20) as f64 / 255.0).collect();
        let x = Matrix::new(2, 6, pixels).unwrap();
        let img = encode_idx_images(&x, 2, 3).unwrap();
        let lab = encode_idx_labels(&[3, 9]).unwrap();
        assert_eq!(parse_idx_images(&img).unwrap(), x);
        assert_eq!(parse_idx_labels(&lab).unwrap(), vec![3, 9]);

        assert!(matches!(parse_idx_images(&img[..img.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&lab), Err(Error::NotIdx(_))));
        assert!(matches!(parse_idx_labels(&img), Err(Error::NotIdx(_))));
        assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::NotIdx(_))));
    }

    #[test]
    fn single_blank_image() {
        let img = encode_idx_images(&Matrix::zeros(1, 784), 28, 28).unwrap();
        let x = parse_idx_images(&img).unwrap();
        assert_eq!(x.shape(), (1, 784));
        assert!(x.data().iter().all(|&v| v == 0.0));
    }
}
