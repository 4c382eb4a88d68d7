//! Labelled datasets: MNIST IDX files, synthetic Gaussian blobs, and a
//! binary cache.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, ParseError, Result};
use crate::linalg::{Matrix, RngState};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const CACHE_MAGIC: &[u8; 4] = b"TPDS";
const CACHE_VERSION: u32 = 1;

/// Environment variable overriding where datasets are looked up.
pub const DATA_DIR_ENV: &str = "TIGHTPROP_DATA_DIR";

/// Samples stored row-wise with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    declared_range: Option<(f64, f64)>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize, declared_range: Option<(f64, f64)>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::dim("Dataset: labels", inputs.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::param("labels", format!("label {bad} is not below class_count {class_count}")));
        }
        if let Some((lo, hi)) = declared_range {
            if !(lo <= hi) {
                return Err(Error::param("declared_range", format!("[{lo}, {hi}] is empty")));
            }
            if inputs.as_slice().iter().any(|&v| !(lo..=hi).contains(&v)) {
                return Err(Error::param("declared_range", format!("a sample lies outside [{lo}, {hi}]")));
            }
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
            declared_range,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Valid value range of every input coordinate, if the data has one.
    pub fn declared_range(&self) -> Option<(f64, f64)> {
        self.declared_range
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Matrix::zeros(indices.len(), self.dim());
        for (r, &i) in indices.iter().enumerate() {
            inputs.row_mut(r).copy_from_slice(self.sample(i));
        }
        Dataset {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            declared_range: self.declared_range,
        }
    }

    /// Number of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(parse_err(self.path, ParseError::Truncated { field }));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32_be(&mut self, field: &'static str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_err(path: &Path, kind: ParseError) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        kind,
    }
}

fn expect_magic(cur: &mut Cursor<'_>, field: &'static str, expected: u32) -> Result<()> {
    let found = cur.u32_be(field)?;
    if found != expected {
        return Err(parse_err(cur.path, ParseError::BadMagic { field, expected, found }));
    }
    Ok(())
}

/// Reads an IDX image file and its label file (either may be gzipped).
/// Pixels are scaled by `1/255` into `[0, 1]`; `limit` keeps only the first
/// records.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let image_bytes = read_maybe_gzip(images_path)?;
    let label_bytes = read_maybe_gzip(labels_path)?;

    let mut img = Cursor {
        bytes: &image_bytes,
        pos: 0,
        path: images_path,
    };
    expect_magic(&mut img, "images.magic", IMAGES_MAGIC)?;
    let count = img.u32_be("images.count")? as usize;
    let rows = img.u32_be("images.rows")? as usize;
    let cols = img.u32_be("images.cols")? as usize;

    let mut lab = Cursor {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path,
    };
    expect_magic(&mut lab, "labels.magic", LABELS_MAGIC)?;
    let label_count = lab.u32_be("labels.count")? as usize;
    if label_count != count {
        return Err(parse_err(
            labels_path,
            ParseError::CountMismatch {
                images_field: "images.count",
                images: count,
                labels_field: "labels.count",
                labels: label_count,
            },
        ));
    }

    let keep = limit.map_or(count, |l| l.min(count));
    let dim = rows * cols;
    let pixels = img.take(keep * dim, "images.pixels")?;
    let labels: Vec<usize> = lab.take(keep, "labels.values")?.iter().map(|&b| b as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(parse_err(
            labels_path,
            ParseError::Invalid {
                field: "labels.values",
                reason: format!("label {bad} is not a digit"),
            },
        ));
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(Matrix::from_vec(keep, dim, data)?, labels, 10, Some((0.0, 1.0)))
}

/// Directory holding MNIST-style IDX files: `$TIGHTPROP_DATA_DIR` when set,
/// otherwise the sample bundled with the source tree.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-sample"))
}

/// Loads `<split>-images-idx3-ubyte[.gz]` and `<split>-labels-idx1-ubyte[.gz]`
/// from `dir`; `split` is `train` or `t10k`.
pub fn load_mnist_split(dir: &Path, split: &str, limit: Option<usize>) -> Result<Dataset> {
    let find = |stem: String| -> Result<PathBuf> {
        [dir.join(&stem), dir.join(format!("{stem}.gz"))]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| {
                Error::io(
                    dir.join(&stem),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found (plain or .gz)"),
                )
            })
    };
    let images = find(format!("{split}-images-idx3-ubyte"))?;
    let labels = find(format!("{split}-labels-idx1-ubyte"))?;
    load_idx(&images, &labels, limit)
}

/// Gaussian clusters (unit variance) centred at the vertices of a regular
/// simplex scaled so neighbouring centres are `separation` apart.
///
/// Each class centre is `separation/√2 · e_c` in the first `n_classes`
/// coordinates, so `dim ≥ n_classes` is required.
pub fn synthetic_blobs(
    rng: &mut RngState,
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
) -> Result<Dataset> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::param("separation", format!("must be positive and finite, got {separation}")));
    }
    if n_classes < 2 {
        return Err(Error::param("n_classes", format!("need at least 2, got {n_classes}")));
    }
    if dim < n_classes {
        return Err(Error::param("dim", format!("must be at least n_classes = {n_classes}, got {dim}")));
    }
    let scale = separation / std::f64::consts::SQRT_2;
    let total = n_classes * n_per_class;
    let mut inputs = Matrix::zeros(total, dim);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let c = i % n_classes;
        for (j, v) in inputs.row_mut(i).iter_mut().enumerate() {
            let mean = if j == c { scale } else { 0.0 };
            *v = mean + rng.standard_normal();
        }
        labels.push(c);
    }
    Dataset::new(inputs, labels, n_classes, None)
}

/// Shuffles with `rng` and returns `(train, test)` with
/// `round(fraction · len)` training samples.
pub fn split(dataset: &Dataset, fraction: f64, rng: &mut RngState) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param("fraction", format!("must lie strictly between 0 and 1, got {fraction}")));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);
    let cut = (fraction * dataset.len() as f64).round() as usize;
    Ok((dataset.subset(&order[..cut]), dataset.subset(&order[cut..])))
}

/// Writes the dataset in the binary cache format: magic `TPDS`, a `u32`
/// version, then little-endian dimensions, range, `f64` samples and `u32`
/// labels.
pub fn write_cache(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(48 + 8 * dataset.inputs.as_slice().len() + 4 * dataset.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    for v in [dataset.len(), dataset.dim(), dataset.class_count] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let (flag, lo, hi) = match dataset.declared_range {
        Some((lo, hi)) => (1u8, lo, hi),
        None => (0u8, 0.0, 0.0),
    };
    out.push(flag);
    out.extend_from_slice(&lo.to_le_bytes());
    out.extend_from_slice(&hi.to_le_bytes());
    for v in dataset.inputs.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &dataset.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    let magic = cur.take(4, "cache.magic")?;
    if magic != CACHE_MAGIC {
        return Err(parse_err(
            path,
            ParseError::BadMagic {
                field: "cache.magic",
                expected: u32::from_be_bytes(*CACHE_MAGIC),
                found: u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]),
            },
        ));
    }
    let version = u32::from_le_bytes(cur.take(4, "cache.version")?.try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(parse_err(
            path,
            ParseError::Invalid {
                field: "cache.version",
                reason: format!("unsupported version {version}, expected {CACHE_VERSION}"),
            },
        ));
    }
    let mut u64_field = |field| -> Result<usize> {
        Ok(u64::from_le_bytes(cur.take(8, field)?.try_into().expect("8 bytes")) as usize)
    };
    let rows = u64_field("cache.rows")?;
    let cols = u64_field("cache.cols")?;
    let classes = u64_field("cache.classes")?;
    let flag = cur.take(1, "cache.range_flag")?[0];
    let lo = f64::from_le_bytes(cur.take(8, "cache.range_low")?.try_into().expect("8 bytes"));
    let hi = f64::from_le_bytes(cur.take(8, "cache.range_high")?.try_into().expect("8 bytes"));
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| parse_err(path, ParseError::Invalid {
            field: "cache.rows",
            reason: "size overflow".into(),
        }))?;
    let data = cur
        .take(len, "cache.samples")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let labels = cur
        .take(rows * 4, "cache.labels")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let range = (flag == 1).then_some((lo, hi));
    Dataset::new(Matrix::from_vec(rows, cols, data)?, labels, classes, range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn parses_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 255, 128, 1, 2, 3, 4, 5];
        let imgs = idx_images(2, 2, 2, &pixels);
        let labs = idx_labels(&[7, 3]);
        let ip = write(dir.path(), "i", &imgs);
        let lp = write(dir.path(), "l", &labs);
        let ds = load_idx(&ip, &lp, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.sample(0)[0], 0.0);
        assert_eq!(ds.sample(0)[1], 1.0);
        assert_eq!(ds.labels(), &[7, 3]);
        assert_eq!(ds.declared_range(), Some((0.0, 1.0)));

        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&imgs).unwrap();
        let gp = write(dir.path(), "i.gz", &gz.finish().unwrap());
        assert_eq!(load_idx(&gp, &lp, None).unwrap(), ds);

        let first = load_idx(&ip, &lp, Some(1)).unwrap();
        assert_eq!(first.len(), 1);
        assert_eq!(first.sample(0), ds.sample(0));
    }

    #[test]
    fn distinct_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = idx_images(2, 1, 2, &[1, 2, 3, 4]);
        let labs = idx_labels(&[0, 1]);
        let ip = write(dir.path(), "i", &imgs);
        let lp = write(dir.path(), "l", &labs);

        let kind = |r: Result<Dataset>| match r {
            Err(Error::Parse { kind, .. }) => kind,
            other => panic!("expected parse error, got {other:?}"),
        };
        assert!(matches!(
            kind(load_idx(&lp, &lp, None)),
            ParseError::BadMagic { field: "images.magic", .. }
        ));
        assert!(matches!(
            kind(load_idx(&ip, &ip, None)),
            ParseError::BadMagic { field: "labels.magic", .. }
        ));
        let short = write(dir.path(), "short", &imgs[..imgs.len() - 1]);
        assert_eq!(
            kind(load_idx(&short, &lp, None)),
            ParseError::Truncated { field: "images.pixels" }
        );
        let three = write(dir.path(), "three", &idx_labels(&[0, 1, 2]));
        assert!(matches!(kind(load_idx(&ip, &three, None)), ParseError::CountMismatch { .. }));
        let header = write(dir.path(), "hdr", &imgs[..6]);
        assert_eq!(
            kind(load_idx(&header, &lp, None)),
            ParseError::Truncated { field: "images.count" }
        );
    }

    #[test]
    fn bundled_sample_loads() {
        let dir = data_dir();
        let train = load_mnist_split(&dir, "train", None).unwrap();
        let test = load_mnist_split(&dir, "t10k", None).unwrap();
        assert_eq!((train.len(), test.len()), (2000, 1000));
        assert_eq!(train.dim(), 784);
        assert_eq!(train.class_histogram(), vec![200; 10]);
        assert_eq!(test.class_histogram(), vec![100; 10]);
    }

    #[test]
    fn blobs_and_split() {
        let mut rng = RngState::new(3);
        let ds = synthetic_blobs(&mut rng, 3, 4, 5, 10.0).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.declared_range(), None);
        assert_eq!(synthetic_blobs(&mut RngState::new(3), 3, 4, 5, 10.0).unwrap(), ds);
        assert!(synthetic_blobs(&mut rng, 3, 0, 5, 1.0).unwrap().is_empty());
        assert!(synthetic_blobs(&mut rng, 3, 4, 5, 0.0).is_err());

        let ten = synthetic_blobs(&mut rng, 2, 5, 2, 1.0).unwrap();
        let (a, b) = split(&ten, 0.5, &mut RngState::new(9)).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a2, _) = split(&ten, 0.5, &mut RngState::new(9)).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<Vec<u64>> = (0..5)
            .flat_map(|i| [a.sample(i), b.sample(i)])
            .map(|s| s.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut orig: Vec<Vec<u64>> = (0..10).map(|i| ten.sample(i).iter().map(|v| v.to_bits()).collect()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert!(split(&ten, 1.0, &mut rng).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngState::new(4);
        let ds = synthetic_blobs(&mut rng, 3, 7, 4, 2.5).unwrap();
        let p = dir.path().join("c.bin");
        write_cache(&ds, &p).unwrap();
        assert_eq!(read_cache(&p).unwrap(), ds);

        let mnist = load_mnist_split(&data_dir(), "t10k", Some(50)).unwrap();
        write_cache(&mnist, &p).unwrap();
        assert_eq!(read_cache(&p).unwrap(), mnist);

        let mut bytes = fs::read(&p).unwrap();
        bytes[4] = 9;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_cache(&p),
            Err(Error::Parse { kind: ParseError::Invalid { field: "cache.version", .. }, .. })
        ));
    }

    #[test]
    fn dataset_validation() {
        let m = Matrix::zeros(2, 2);
        assert!(Dataset::new(m.clone(), vec![0], 2, None).is_err());
        assert!(Dataset::new(m.clone(), vec![0, 2], 2, None).is_err());
        assert!(Dataset::new(m.map(|_| 2.0), vec![0, 1], 2, Some((0.0, 1.0))).is_err());
        assert!(Dataset::new(m, vec![0, 1], 2, Some((0.0, 1.0))).is_ok());
    }
}
