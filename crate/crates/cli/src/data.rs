//! Feature files (CSV), IDX image/label files and split construction.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hopkins_core::rng::{streams, Rng};
use hopkins_core::train::{Dataset, Splits};
use hopkins_core::Matrix;

use crate::error::{CliError, CliResult};

pub const LABEL_COLUMN: &str = "label";
pub const GROUP_COLUMN: &str = "group";

/// In-memory feature file: named feature columns, optional integer labels
/// and optional group ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub columns: Vec<String>,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub groups: Option<Vec<String>>,
}

impl FeatureFile {
    pub fn new(features: Matrix, labels: Option<Vec<usize>>) -> Self {
        let columns = (0..features.cols()).map(|j| format!("x{j}")).collect();
        Self {
            columns,
            features,
            labels,
            groups: None,
        }
    }

    pub fn dataset(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }
}

pub fn read_csv(path: &Path) -> CliResult<FeatureFile> {
    let text = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(&text).map_err(|msg| CliError::Data(format!("{}: {msg}", path.display())))
}

fn parse_csv(text: &[u8]) -> Result<FeatureFile, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| format!("header: {e}"))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err("missing header row".into());
    }
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    let group_col = header.iter().position(|h| h == GROUP_COLUMN);
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&j| Some(j) != label_col && Some(j) != group_col)
        .collect();
    if feature_cols.is_empty() {
        return Err("no feature columns".into());
    }

    let mut data = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    let mut groups = group_col.map(|_| Vec::new());
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(0, |p| p.line());
        for &j in &feature_cols {
            let raw = record[j].trim();
            let v: f64 = raw.parse().map_err(|_| {
                format!("line {line}, column '{}': '{raw}' is not a number", header[j])
            })?;
            if !v.is_finite() {
                return Err(format!("line {line}, column '{}': non-finite value", header[j]));
            }
            data.push(v);
        }
        if let (Some(j), Some(l)) = (label_col, labels.as_mut()) {
            let raw = record[j].trim();
            l.push(raw.parse::<usize>().map_err(|_| {
                format!("line {line}, column '{LABEL_COLUMN}': '{raw}' is not a non-negative integer")
            })?);
        }
        if let (Some(j), Some(g)) = (group_col, groups.as_mut()) {
            g.push(record[j].trim().to_string());
        }
        rows += 1;
    }
    if rows == 0 {
        return Err("no data rows".into());
    }
    let features = Matrix::from_vec(rows, feature_cols.len(), data).map_err(|e| e.to_string())?;
    Ok(FeatureFile {
        columns: feature_cols.iter().map(|&j| header[j].clone()).collect(),
        features,
        labels,
        groups,
    })
}

/// Decimal with 17 significant digits; parses back to the identical `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, file: &FeatureFile) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = file.columns.clone();
    if file.groups.is_some() {
        header.push(GROUP_COLUMN.into());
    }
    if file.labels.is_some() {
        header.push(LABEL_COLUMN.into());
    }
    let csv_err = |e: csv::Error| CliError::Runtime(format!("csv encoding: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in file.features.row_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        if let Some(g) = &file.groups {
            rec.push(g[i].clone());
        }
        if let Some(l) = &file.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Runtime(format!("csv encoding: {e}")))?;
    write_file(path, &bytes)
}

/// Writes via a temporary sibling and a rename, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxCursor<'a> {
    what: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxCursor<'a> {
    fn u32(&mut self) -> CliResult<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CliError::Data(format!(
                "{}: truncated at byte offset {} (needed {n} more bytes, file has {})",
                self.what,
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn finish(&self) -> CliResult<()> {
        if self.pos != self.bytes.len() {
            return Err(CliError::Data(format!(
                "{}: {} unexpected trailing bytes at byte offset {}",
                self.what,
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

/// Parses an IDX image file and its label file. Pixels map to
/// `p / 127.5 − 1`, so the range is `[−1, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> CliResult<FeatureFile> {
    let mut img = IdxCursor {
        what: "idx images",
        bytes: images,
        pos: 0,
    };
    let magic = img.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CliError::Data(format!(
            "idx images: bad magic 0x{magic:08x} at byte offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let n = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let d = rows * cols;
    let pixels = img.take(n * d)?;
    img.finish()?;

    let mut lab = IdxCursor {
        what: "idx labels",
        bytes: labels,
        pos: 0,
    };
    let magic = lab.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CliError::Data(format!(
            "idx labels: bad magic 0x{magic:08x} at byte offset 0, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let n_labels = lab.u32()? as usize;
    if n_labels != n {
        return Err(CliError::Data(format!(
            "idx: {n} images but {n_labels} labels (count at byte offset 4)"
        )));
    }
    let label_bytes = lab.take(n)?;
    lab.finish()?;

    let data = pixels.iter().map(|&p| p as f64 / 127.5 - 1.0).collect();
    let features = Matrix::from_vec(n, d, data)?;
    Ok(FeatureFile::new(
        features,
        Some(label_bytes.iter().map(|&l| l as usize).collect()),
    ))
}

pub fn read_idx(images: &Path, labels: &Path) -> CliResult<FeatureFile> {
    let img = fs::read(images).map_err(|e| CliError::io(images, e))?;
    let lab = fs::read(labels).map_err(|e| CliError::io(labels, e))?;
    parse_idx(&img, &lab)
}

/// Splits whole groups: groups are shuffled and assigned in turn to train
/// until it holds `train` of the rows, then to validation, then to test.
pub fn group_splits(
    data: &Dataset,
    groups: &[String],
    train: f64,
    validation: f64,
    seed: u64,
) -> CliResult<Splits> {
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    if members.len() < 3 {
        return Err(CliError::Data(format!(
            "group split needs at least 3 groups, found {}",
            members.len()
        )));
    }
    let mut keys: Vec<&str> = members.keys().copied().collect();
    Rng::with_stream(seed, streams::SPLIT).shuffle(&mut keys);
    let n = data.rows() as f64;
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (k, key) in keys.iter().enumerate() {
        let rows = &members[key];
        let remaining = keys.len() - k;
        if tr.is_empty() || ((tr.len() as f64) < train * n && remaining > 2) {
            tr.extend(rows);
        } else if va.is_empty() || ((va.len() as f64) < validation * n && remaining > 1) {
            va.extend(rows);
        } else {
            te.extend(rows);
        }
    }
    if te.is_empty() {
        return Err(CliError::Data("group split left the test split empty".into()));
    }
    Ok(Splits {
        train: data.select(&tr),
        validation: data.select(&va),
        test: data.select(&te),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_labels_and_groups() {
        let f = parse_csv(b"a,b,group,label\n1.5,2,s1,0\n-3,4e-1,s2,1\n").unwrap();
        assert_eq!(f.columns, vec!["a", "b"]);
        assert_eq!(f.features.data(), &[1.5, 2.0, -3.0, 0.4]);
        assert_eq!(f.labels, Some(vec![0, 1]));
        assert_eq!(f.groups, Some(vec!["s1".into(), "s2".into()]));
    }

    #[test]
    fn csv_errors_have_context() {
        let e = parse_csv(b"a,b\n1,2\n3,x\n").unwrap_err();
        assert!(e.contains("line 3") && e.contains("'b'"), "{e}");
        assert!(parse_csv(b"a,b\n1,2\n3\n").is_err());
        assert!(parse_csv(b"a,label\n1,-1\n").unwrap_err().contains("label"));
        assert!(parse_csv(b"a\n").unwrap_err().contains("no data"));
        assert!(parse_csv(b"a\nNaN\n").is_err());
    }

    #[test]
    fn format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456789.123456789, f64::MIN_POSITIVE] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    fn idx_images(n: u32, r: u32, c: u32, px: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [n, r, c] {
            b.extend(v.to_be_bytes());
        }
        b.extend(px);
        b
    }

    fn idx_labels(l: &[u8]) -> Vec<u8> {
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend((l.len() as u32).to_be_bytes());
        b.extend(l);
        b
    }

    #[test]
    fn idx_pixel_mapping() {
        let f = parse_idx(&idx_images(1, 1, 3, &[0, 128, 255]), &idx_labels(&[7])).unwrap();
        assert_eq!(f.features.row(0)[0], -1.0);
        assert!((f.features.row(0)[1] - 0.003921568627450966).abs() < 1e-15);
        assert_eq!(f.features.row(0)[2], 1.0);
        assert_eq!(f.labels, Some(vec![7]));
    }

    #[test]
    fn idx_errors() {
        let img = idx_images(2, 1, 1, &[0, 1]);
        let e = parse_idx(&img, &idx_labels(&[1])).unwrap_err().to_string();
        assert!(e.contains("2 images but 1 labels"), "{e}");
        let e = parse_idx(&img[..img.len() - 1], &idx_labels(&[1, 2])).unwrap_err().to_string();
        assert!(e.contains("byte offset 16"), "{e}");
        let mut bad = img.clone();
        bad[3] = 0x01;
        assert!(parse_idx(&bad, &idx_labels(&[1, 2])).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn group_split_keeps_groups_whole() {
        let x = Matrix::from_fn(40, 1, |i, _| i as f64);
        let data = Dataset {
            features: x,
            labels: None,
        };
        let groups: Vec<String> = (0..40).map(|i| format!("g{}", i / 4)).collect();
        let s = group_splits(&data, &groups, 0.6, 0.2, 3).unwrap();
        assert_eq!(s.train.rows() + s.validation.rows() + s.test.rows(), 40);
        let group_of = |v: f64| v as usize / 4;
        let ids = |d: &Dataset| -> Vec<usize> {
            d.features.data().iter().map(|&v| group_of(v)).collect()
        };
        let (a, b, c) = (ids(&s.train), ids(&s.validation), ids(&s.test));
        assert!(a.iter().all(|g| !b.contains(g) && !c.contains(g)));
        assert!(b.iter().all(|g| !c.contains(g)));
    }
}
