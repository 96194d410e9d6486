use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{FeatureRecord, GzslDataset, Split};
use crate::codec::ByteReader;
use crate::error::{Error, Result};

const BIN_MAGIC: &[u8; 4] = b"GZSL";
pub const BIN_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Bin,
}

impl FeatureFormat {
    /// Picks the format from a `.csv` or `.bin` extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(e) if e == "csv" => Ok(FeatureFormat::Csv),
            Some(e) if e == "bin" => Ok(FeatureFormat::Bin),
            _ => Err(Error::Format(format!(
                "cannot infer feature format from `{}` (expected .csv or .bin)",
                path.display()
            ))),
        }
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<GzslDataset> {
    load_features_with_manifest(path, format, None)
}

/// Loads a dataset; for CSV input an optional class manifest fixes the
/// seen/unseen partition. Without one, a class is seen exactly when at least
/// one of its rows is tagged train.
pub fn load_features_with_manifest(
    path: &Path,
    format: FeatureFormat,
    manifest: Option<&Path>,
) -> Result<GzslDataset> {
    match format {
        FeatureFormat::Bin => {
            if manifest.is_some() {
                return Err(Error::Format("BIN datasets carry their own class partition".into()));
            }
            dataset_from_bin(&fs::read(path)?)
        }
        FeatureFormat::Csv => {
            let text = fs::read_to_string(path)?;
            let manifest = manifest.map(fs::read_to_string).transpose()?;
            parse_csv(&text, manifest.as_deref())
        }
    }
}

pub fn save_features(dataset: &GzslDataset, path: &Path, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::Bin => fs::write(path, dataset_to_bin(dataset))?,
        FeatureFormat::Csv => fs::write(path, to_csv_string(dataset)?)?,
    }
    Ok(())
}

/// Writes `class_id,seen|unseen` lines.
pub fn write_manifest(dataset: &GzslDataset, path: &Path) -> Result<()> {
    let mut out = String::from("class_id,split\n");
    let mut all: Vec<(u32, &str)> = dataset.seen_classes().iter().map(|&c| (c, "seen")).collect();
    all.extend(dataset.unseen_classes().iter().map(|&c| (c, "unseen")));
    all.sort();
    for (c, s) in all {
        out.push_str(&format!("{c},{s}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        detail: e.to_string(),
    }
}

pub fn to_csv_string(dataset: &GzslDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let (d, k) = (dataset.d_visual(), dataset.k_semantic());
    let mut header = vec!["label".to_string(), "split".to_string()];
    header.extend((0..d).map(|i| format!("v{i}")));
    header.extend((0..k).map(|i| format!("s{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for r in dataset.records() {
        let mut row = vec![r.label.to_string(), r.split.as_str().to_string()];
        // `{}` on f64 prints the shortest string that parses back exactly
        row.extend(r.visual.iter().chain(&r.semantic).map(|v| format!("{v}")));
        w.write_record(&row).map_err(csv_error)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

struct Layout {
    has_split: bool,
    d: usize,
    k: usize,
}

fn parse_header(header: &csv::StringRecord) -> Result<Layout> {
    let bad = |detail: String| Error::Parse { line: 1, detail };
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.first() != Some(&"label") {
        return Err(bad("first column must be `label`".into()));
    }
    let has_split = fields.get(1) == Some(&"split");
    let rest = &fields[1 + usize::from(has_split)..];
    let d = rest.iter().take_while(|f| f.starts_with('v')).count();
    for (i, f) in rest.iter().enumerate() {
        let expected = if i < d { format!("v{i}") } else { format!("s{}", i - d) };
        if *f != expected {
            return Err(bad(format!("column `{f}` where `{expected}` was expected")));
        }
    }
    let k = rest.len() - d;
    if d == 0 || k == 0 {
        return Err(bad("need at least one visual and one semantic column".into()));
    }
    Ok(Layout { has_split, d, k })
}

/// Parses feature CSV text, with optional manifest text.
///
/// Row numbers in errors count data rows from 1; `Parse` errors carry file
/// line numbers.
pub fn parse_csv(text: &str, manifest: Option<&str>) -> Result<GzslDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let layout = parse_header(rdr.headers().map_err(csv_error)?)?;
    let width = 1 + usize::from(layout.has_split) + layout.d + layout.k;
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(i + 2, |p| p.line() as usize);
        if row.len() != width {
            return Err(Error::RowDimension {
                row: i + 1,
                expected: width,
                found: row.len(),
            });
        }
        let label: u32 = row[0].trim().parse().map_err(|_| Error::Parse {
            line,
            detail: format!("label `{}` is not a class id", &row[0]),
        })?;
        let mut col = 1;
        let split = if layout.has_split {
            col += 1;
            match row[1].trim() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::Parse {
                        line,
                        detail: format!("split `{other}` is neither train nor test"),
                    })
                }
            }
        } else {
            Split::Test
        };
        let values = row
            .iter()
            .skip(col)
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    detail: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (visual, semantic) = values.split_at(layout.d);
        records.push(FeatureRecord {
            visual: visual.to_vec(),
            semantic: semantic.to_vec(),
            label,
            split,
        });
    }
    let present: BTreeSet<u32> = records.iter().map(|r| r.label).collect();
    let (seen, unseen) = match manifest {
        Some(m) => {
            let (seen, unseen) = parse_manifest(m)?;
            if let Some(&c) = seen.union(&unseen).find(|c| !present.contains(c)) {
                return Err(Error::UnknownClass {
                    class: c,
                    detail: "listed in the manifest but absent from the data".into(),
                });
            }
            if let Some(r) = records
                .iter()
                .find(|r| !seen.contains(&r.label) && !unseen.contains(&r.label))
            {
                return Err(Error::UnknownClass {
                    class: r.label,
                    detail: "present in the data but missing from the manifest".into(),
                });
            }
            (seen, unseen)
        }
        None => {
            let seen: BTreeSet<u32> = records
                .iter()
                .filter(|r| r.split == Split::Train)
                .map(|r| r.label)
                .collect();
            let unseen = present.difference(&seen).copied().collect();
            (seen, unseen)
        }
    };
    GzslDataset::new(records, seen, unseen)
}

/// Parses `class_id,seen|unseen` lines; an optional first line starting
/// with `class_id` is a header.
pub fn parse_manifest(text: &str) -> Result<(BTreeSet<u32>, BTreeSet<u32>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut seen = BTreeSet::new();
    let mut unseen = BTreeSet::new();
    let mut owner: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && row.get(0).map(str::trim) == Some("class_id") {
            continue;
        }
        if row.len() != 2 {
            return Err(Error::Parse {
                line,
                detail: "manifest rows are `class_id,seen|unseen`".into(),
            });
        }
        let class: u32 = row[0].trim().parse().map_err(|_| Error::Parse {
            line,
            detail: format!("`{}` is not a class id", &row[0]),
        })?;
        if let Some(prev) = owner.insert(class, line) {
            return Err(Error::Parse {
                line,
                detail: format!("class {class} already listed on line {prev}"),
            });
        }
        match row[1].trim() {
            "seen" => seen.insert(class),
            "unseen" => unseen.insert(class),
            other => {
                return Err(Error::Parse {
                    line,
                    detail: format!("`{other}` is neither seen nor unseen"),
                })
            }
        };
    }
    Ok((seen, unseen))
}

pub fn dataset_to_bin(dataset: &GzslDataset) -> Vec<u8> {
    let (d, k) = (dataset.d_visual(), dataset.k_semantic());
    let mut out = Vec::with_capacity(32 + dataset.len() * (5 + 8 * (d + k)));
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&BIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for set in [dataset.seen_classes(), dataset.unseen_classes()] {
        out.extend_from_slice(&(set.len() as u32).to_le_bytes());
        for c in set {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for r in dataset.records() {
        out.extend_from_slice(&r.label.to_le_bytes());
        out.push(match r.split {
            Split::Train => 0,
            Split::Test => 1,
        });
        for v in r.visual.iter().chain(&r.semantic) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn dataset_from_bin(bytes: &[u8]) -> Result<GzslDataset> {
    let mut r = ByteReader::new(bytes, "dataset");
    if r.take(4)? != BIN_MAGIC {
        return Err(Error::Format("not a GZSL dataset (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != BIN_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BIN_VERSION,
        });
    }
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let n_raw = r.u64()?;
    let mut sets = [BTreeSet::new(), BTreeSet::new()];
    for set in &mut sets {
        let raw = r.u32()?;
        let n = r.count(raw as u64, 4)?;
        for _ in 0..n {
            set.insert(r.u32()?);
        }
    }
    let n = r.count(n_raw, 5 + 8 * (d + k))?;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let label = r.u32()?;
        let split = match r.u8()? {
            0 => Split::Train,
            1 => Split::Test,
            other => {
                return Err(Error::Format(format!("record {}: split tag {other}", i + 1)));
            }
        };
        let visual = r.f64s(d)?;
        let semantic = r.f64s(k)?;
        records.push(FeatureRecord {
            visual,
            semantic,
            label,
            split,
        });
    }
    r.finish()?;
    let [seen, unseen] = sets;
    GzslDataset::new(records, seen, unseen)
}
