//! Dataset ingestion, synthetic blobs and the built-in PCA projection.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Samples, optional labels, projection targets and split assignment.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub name: String,
    pub x: Tensor,
    pub labels: Option<Vec<i64>>,
    pub y: Tensor,
    pub split: Vec<Split>,
}

impl DatasetBundle {
    pub fn new(
        name: impl Into<String>,
        x: Tensor,
        labels: Option<Vec<i64>>,
        y: Tensor,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = x.rows();
        if x.shape().len() != 2 || y.shape().len() != 2 {
            return Err(Error::shape("dataset", x.shape(), y.shape()));
        }
        if y.rows() != n {
            return Err(Error::shape("dataset rows (x vs projection)", x.shape(), y.shape()));
        }
        if split.len() != n {
            return Err(Error::shape("dataset rows (x vs split)", x.shape(), &[split.len()]));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape("dataset rows (x vs labels)", x.shape(), &[l.len()]));
            }
        }
        if !x.all_finite() || !y.all_finite() {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        Ok(Self {
            name: name.into(),
            x,
            labels,
            y,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Row indices assigned to `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }
}

/// Parsed IDX file: dimension sizes and the raw `u8` payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxFile {
    pub fn count(&self) -> usize {
        self.dims[0]
    }

    /// Values per sample (product of the trailing dimensions).
    pub fn sample_len(&self) -> usize {
        self.dims[1..].iter().product()
    }
}

fn parse_err(source: &str, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        location: location.into(),
        message: message.into(),
    }
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxFile> {
    let path = path.as_ref();
    parse_idx(&fs::read(path)?, &path.display().to_string())
}

/// Big-endian IDX: magic `0x00000803` (3-D `u8`) or `0x00000801` (1-D `u8`).
pub fn parse_idx(bytes: &[u8], source: &str) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(parse_err(source, "byte 0", format!("header needs 4 bytes, found {}", bytes.len())));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        _ => return Err(Error::BadMagic(format!("{source}: 0x{magic:08x}"))),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(parse_err(
            source,
            format!("byte {}", bytes.len()),
            format!("dimension header needs {header} bytes, found {}", bytes.len()),
        ));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| parse_err(source, "byte 4", format!("dimension product overflows: {dims:?}")))?;
    let actual = bytes.len() - header;
    if actual < payload {
        return Err(parse_err(
            source,
            format!("byte {}", bytes.len()),
            format!("truncated payload: expected {payload} bytes, found {actual}"),
        ));
    }
    if actual > payload {
        return Err(parse_err(
            source,
            format!("byte {}", header + payload),
            format!("{} trailing bytes after payload", actual - payload),
        ));
    }
    Ok(IdxFile {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn write_idx(path: impl AsRef<Path>, idx: &IdxFile) -> Result<()> {
    let magic = match idx.dims.len() {
        3 => IDX_IMAGES_MAGIC,
        1 => IDX_LABELS_MAGIC,
        n => return Err(Error::InvalidArgument(format!("IDX writer supports 1 or 3 dims, got {n}"))),
    };
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &idx.dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&idx.data);
    fs::write(path, out)?;
    Ok(())
}

/// Maps raw pixel bytes to `[0, 1]` by `v / 255`.
pub fn scale_pixels(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&v| f64::from(v) / 255.0).collect()
}

/// Images (and optional label file) as a scaled `[n, rows·cols]` matrix.
pub fn load_idx_dataset(images: &Path, labels: Option<&Path>) -> Result<(Tensor, Option<Vec<i64>>)> {
    let img = read_idx(images)?;
    if img.dims.len() != 3 {
        return Err(parse_err(&images.display().to_string(), "byte 0", "expected a 3-D image file"));
    }
    let x = Tensor::matrix(img.count(), img.sample_len(), scale_pixels(&img.data))?;
    let labels = match labels {
        Some(p) => {
            let l = read_idx(p)?;
            if l.dims.len() != 1 || l.count() != img.count() {
                return Err(Error::shape("idx labels", &img.dims, &l.dims));
            }
            Some(l.data.iter().map(|&v| i64::from(v)).collect())
        }
        None => None,
    };
    Ok((x, labels))
}

/// Numeric CSV matrix with an optional header and optional `label` column.
#[derive(Debug, Clone)]
pub struct CsvVectors {
    pub x: Tensor,
    pub labels: Option<Vec<i64>>,
}

pub fn read_csv_vectors(path: impl AsRef<Path>) -> Result<CsvVectors> {
    let path = path.as_ref();
    parse_csv_vectors(&fs::read_to_string(path)?, &path.display().to_string())
}

fn csv_records(text: &str, source: &str) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(source, format!("line {line}"), e.to_string())
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

pub fn parse_csv_vectors(text: &str, source: &str) -> Result<CsvVectors> {
    let records = csv_records(text, source)?;
    let Some((_, first)) = records.first() else {
        return Err(Error::Empty(format!("CSV {source}")));
    };
    let has_header = first.iter().any(|f| f.parse::<f64>().is_err());
    let width = first.len();
    let label_col = if has_header {
        first.iter().position(|h| h == "label")
    } else {
        None
    };
    let body = if has_header { &records[1..] } else { &records[..] };
    if body.is_empty() {
        return Err(Error::Empty(format!("CSV {source} has no data rows")));
    }
    let d = width - usize::from(label_col.is_some());
    if d == 0 {
        return Err(parse_err(source, "line 1", "no feature columns"));
    }

    let mut data = Vec::with_capacity(body.len() * d);
    let mut labels = Vec::new();
    for (line, rec) in body {
        if rec.len() != width {
            return Err(parse_err(
                source,
                format!("line {line}"),
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        for (c, field) in rec.iter().enumerate() {
            if Some(c) == label_col {
                let l = field.parse::<i64>().map_err(|_| {
                    parse_err(source, format!("line {line}"), format!("label `{field}` is not an integer"))
                })?;
                labels.push(l);
            } else {
                let v = field.parse::<f64>().map_err(|_| {
                    parse_err(source, format!("line {line}, column {}", c + 1), format!("`{field}` is not numeric"))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(source, format!("line {line}"), format!("non-finite value `{field}`")));
                }
                data.push(v);
            }
        }
    }
    Ok(CsvVectors {
        x: Tensor::matrix(body.len(), d, data)?,
        labels: label_col.map(|_| labels),
    })
}

/// Writes `f0..f{d-1}[,label]` with a header row.
pub fn write_csv_vectors(path: impl AsRef<Path>, x: &Tensor, labels: Option<&[i64]>) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..x.cols()).map(|j| format!("f{j}")).collect();
    out.push_str(&header.join(","));
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        if let Some(l) = labels {
            out.push_str(&format!(",{}", l[i]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Projection coordinates from `id,x,y[,label]`, ordered by id.
pub fn read_projection_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    parse_projection_csv(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn parse_projection_csv(text: &str, source: &str) -> Result<Tensor> {
    let records = csv_records(text, source)?;
    let Some((_, header)) = records.first() else {
        return Err(Error::Empty(format!("projection CSV {source}")));
    };
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(id_c), Some(x_c), Some(y_c)) = (col("id"), col("x"), col("y")) else {
        return Err(parse_err(source, "line 1", "header must contain id, x and y columns"));
    };
    if let Some(extra) = header.iter().find(|h| !matches!(*h, "id" | "x" | "y" | "label")) {
        return Err(parse_err(
            source,
            "line 1",
            format!("projection must be 2-D; unexpected column `{extra}`"),
        ));
    }
    let body = &records[1..];
    let n = body.len();
    if n == 0 {
        return Err(Error::Empty(format!("projection CSV {source} has no rows")));
    }
    let mut coords = std::collections::BTreeMap::new();
    for (line, rec) in body {
        if rec.len() != header.len() {
            return Err(parse_err(
                source,
                format!("line {line}"),
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let num = |c: usize| -> Result<f64> {
            let f = &rec[c];
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(source, format!("line {line}"), format!("`{f}` is not a finite number")))
        };
        let id: usize = rec[id_c]
            .parse()
            .map_err(|_| parse_err(source, format!("line {line}"), format!("id `{}` is not a non-negative integer", &rec[id_c])))?;
        if coords.insert(id, [num(x_c)?, num(y_c)?]).is_some() {
            return Err(parse_err(source, format!("line {line}"), format!("duplicate id {id}")));
        }
    }
    let mut data = Vec::with_capacity(2 * n);
    for id in 0..n {
        let c = coords
            .get(&id)
            .ok_or_else(|| parse_err(source, "end of file", format!("missing id {id} (ids must be 0..{n})")))?;
        data.extend_from_slice(c);
    }
    Tensor::matrix(n, 2, data)
}

pub fn write_projection_csv(path: impl AsRef<Path>, y: &Tensor, labels: Option<&[i64]>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "id,x,y")?;
    if labels.is_some() {
        write!(f, ",label")?;
    }
    writeln!(f)?;
    for i in 0..y.rows() {
        write!(f, "{i},{},{}", y.get(i, 0), y.get(i, 1))?;
        if let Some(l) = labels {
            write!(f, ",{}", l[i])?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Loads CSV vectors, or IDX images when the file carries the IDX image magic.
pub fn load_vectors(path: &Path, idx_labels: Option<&Path>) -> Result<(Tensor, Option<Vec<i64>>)> {
    let head = fs::read(path)?;
    if head.len() >= 4 && u32::from_be_bytes(head[..4].try_into().expect("4 bytes")) == IDX_IMAGES_MAGIC {
        return load_idx_dataset(path, idx_labels);
    }
    let text = String::from_utf8(head)
        .map_err(|_| parse_err(&path.display().to_string(), "byte 0", "neither IDX nor UTF-8 CSV"))?;
    let v = parse_csv_vectors(&text, &path.display().to_string())?;
    Ok((v.x, v.labels))
}

#[derive(Debug, Clone)]
pub struct Blobs {
    pub x: Tensor,
    pub labels: Vec<i64>,
    pub centers: Tensor,
}

/// Gaussian clusters around seeded centers drawn uniformly in `[-5, 5]^d`.
/// Labels are contiguous and balanced; earlier clusters take the remainder.
pub fn make_blobs(n: usize, d: usize, k: usize, spread: f64, seed: u64) -> Result<Blobs> {
    if k == 0 || n < k || d < 2 || !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "make_blobs needs n >= k >= 1, d >= 2, spread > 0 (got n={n}, d={d}, k={k}, spread={spread})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..k * d).map(|_| rng.random_range(-5.0..=5.0)).collect();
    let (base, rem) = (n / k, n % k);
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        labels.extend(std::iter::repeat_n(c as i64, base + usize::from(c < rem)));
    }
    let mut x = Vec::with_capacity(n * d);
    for &c in &labels {
        let center = &centers[c as usize * d..(c as usize + 1) * d];
        for &m in center {
            let z: f64 = rng.sample(StandardNormal);
            x.push(m + spread * z);
        }
    }
    Ok(Blobs {
        x: Tensor::matrix(n, d, x)?,
        labels,
        centers: Tensor::matrix(k, d, centers)?,
    })
}

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal axes, largest variance first.
    pub axes: [Vec<f64>; 2],
    pub variances: [f64; 2],
    pub coords: Tensor,
}

/// Top-2 PCA coordinates of `x`.
pub fn pca_project(x: &Tensor) -> Result<Tensor> {
    Ok(fit_pca(x)?.coords)
}

/// Power iteration with deflation on the sample covariance, applied
/// implicitly as `Xcᵀ(Xc v)/(n-1)`. Each axis is signed so its first
/// non-negligible entry is positive.
pub fn fit_pca(x: &Tensor) -> Result<Pca> {
    let (n, d) = (x.rows(), x.cols());
    if x.shape().len() != 2 || n < 3 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs n >= 3 and d >= 2, got shape {:?}",
            x.shape()
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = (0..n)
        .flat_map(|i| x.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let total_var: f64 = centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    if !(total_var > 1e-300) {
        return Err(Error::DegenerateData("data has zero variance".into()));
    }

    let cov_apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for row in centered.chunks_exact(d) {
            let p: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            out.iter_mut().zip(row).for_each(|(o, r)| *o += p * r);
        }
        out.iter_mut().for_each(|o| *o /= (n - 1) as f64);
        out
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0fca);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut variances = [0.0; 2];
    for comp in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        orthonormalize(&mut v, &axes);
        let mut lambda = 0.0;
        for _ in 0..PCA_MAX_ITERATIONS {
            let mut w = cov_apply(&v);
            for (a, &l) in axes.iter().zip(&variances) {
                let p = dot(a, &v);
                w.iter_mut().zip(a).for_each(|(wi, ai)| *wi -= l * p * ai);
            }
            for a in &axes {
                let p = dot(a, &w);
                w.iter_mut().zip(a).for_each(|(wi, ai)| *wi -= p * ai);
            }
            let norm = dot(&w, &w).sqrt();
            if norm <= 1e-14 * total_var {
                // remaining spectrum is numerically zero; keep the orthonormal start
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|wi| *wi /= norm);
            let delta = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v = w;
            lambda = norm;
            if delta < PCA_TOLERANCE {
                break;
            }
        }
        if comp == 0 && lambda <= 0.0 {
            return Err(Error::DegenerateData("no dominant principal axis".into()));
        }
        if lambda > 0.0 {
            lambda = dot(&v, &cov_apply(&v));
        }
        orthonormalize(&mut v, &axes);
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|c| *c = -*c);
            }
        }
        variances[comp] = lambda;
        axes.push(v);
    }

    let mut coords = Vec::with_capacity(2 * n);
    for row in centered.chunks_exact(d) {
        coords.push(dot(row, &axes[0]));
        coords.push(dot(row, &axes[1]));
    }
    let second = axes.pop().expect("two axes");
    let first = axes.pop().expect("two axes");
    Ok(Pca {
        mean,
        axes: [first, second],
        variances,
        coords: Tensor::matrix(n, 2, coords)?,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for a in basis {
            let p = dot(a, v);
            v.iter_mut().zip(a).for_each(|(vi, ai)| *vi -= p * ai);
        }
    }
    let norm = dot(v, v).sqrt();
    v.iter_mut().for_each(|vi| *vi /= norm);
}

/// Distinct labels in ascending order.
pub fn label_set(labels: &[i64]) -> Vec<i64> {
    labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}
