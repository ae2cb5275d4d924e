use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Country, DatasetError, DocClass, DocumentRecord, Split};

/// Format tag of the manifest header line.
pub const MANIFEST_FORMAT: &str = "gfv-manifest/1";

/// Catalog of documents, optionally tagged with a train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<DocumentRecord>,
    splits: Option<Vec<Split>>,
    pub created_with_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Line {
    #[serde(flatten)]
    record: DocumentRecord,
    split: Option<Split>,
}

impl Manifest {
    pub fn new(records: Vec<DocumentRecord>, created_with_seed: u64) -> Result<Self, DatasetError> {
        let mut ids = HashSet::with_capacity(records.len());
        for rec in &records {
            rec.check()?;
            if !ids.insert(rec.id.as_str()) {
                return Err(DatasetError::InvalidManifest(format!("duplicate record id {}", rec.id)));
            }
        }
        Ok(Self {
            records,
            splits: None,
            created_with_seed,
        })
    }

    pub fn with_splits(mut self, splits: Vec<Split>) -> Result<Self, DatasetError> {
        if splits.len() != self.records.len() {
            return Err(DatasetError::InvalidManifest(format!(
                "{} split tags for {} records",
                splits.len(),
                self.records.len()
            )));
        }
        self.splits = Some(splits);
        Ok(self)
    }

    pub fn records(&self) -> &[DocumentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn splits(&self) -> Option<&[Split]> {
        self.splits.as_deref()
    }

    pub fn split_of(&self, index: usize) -> Option<Split> {
        self.splits.as_ref().map(|s| s[index])
    }

    pub fn get(&self, id: &str) -> Option<&DocumentRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Countries present in the manifest, sorted.
    pub fn countries(&self) -> Vec<Country> {
        let mut out: Vec<Country> = self.records.iter().map(|r| r.country).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Records of one country and split (all records of the country when untagged).
    pub fn select(&self, country: Country, split: Option<Split>) -> impl Iterator<Item = &DocumentRecord> {
        self.records.iter().enumerate().filter_map(move |(i, r)| {
            let split_ok = match (split, &self.splits) {
                (None, _) => true,
                (Some(want), Some(tags)) => tags[i] == want,
                (Some(_), None) => false,
            };
            (r.country == country && split_ok).then_some(r)
        })
    }

    pub fn count_class(&self, class: DocClass) -> usize {
        self.records.iter().filter(|r| r.doc_class == class).count()
    }

    /// Writes the JSON-lines manifest. Image paths inside the manifest's
    /// directory are stored relative to it so output trees can be moved.
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        if !base.as_os_str().is_empty() {
            std::fs::create_dir_all(&base).map_err(DatasetError::io(&base))?;
        }
        let base_abs = std::path::absolute(&base).map_err(DatasetError::io(&base))?;
        let file = File::create(path).map_err(DatasetError::io(path))?;
        let mut out = BufWriter::new(file);
        let header = Header {
            format: MANIFEST_FORMAT.to_string(),
            seed: self.created_with_seed,
        };
        writeln!(out, "{}", to_json(&header)).map_err(DatasetError::io(path))?;
        for (i, rec) in self.records.iter().enumerate() {
            let mut record = rec.clone();
            record.image_path = relativize(&rec.image_path, &base_abs);
            let line = Line {
                record,
                split: self.split_of(i),
            };
            writeln!(out, "{}", to_json(&line)).map_err(DatasetError::io(path))?;
        }
        out.flush().map_err(DatasetError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let file = File::open(path).map_err(DatasetError::io(path))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        };
        let header_line = lines
            .next()
            .ok_or_else(|| DatasetError::InvalidManifest("missing header line".into()))?
            .map_err(DatasetError::io(path))?;
        let header: Header = serde_json::from_str(&header_line).map_err(parse_err)?;
        if header.format != MANIFEST_FORMAT {
            return Err(DatasetError::InvalidManifest(format!(
                "unsupported format {:?}",
                header.format
            )));
        }
        let mut records = Vec::new();
        let mut splits = Vec::new();
        for line in lines {
            let line = line.map_err(DatasetError::io(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parsed: Line = serde_json::from_str(&line).map_err(parse_err)?;
            if parsed.record.image_path.is_relative() {
                parsed.record.image_path = base.join(&parsed.record.image_path);
            }
            records.push(parsed.record);
            splits.push(parsed.split);
        }
        let manifest = Manifest::new(records, header.seed)?;
        let tagged = splits.iter().filter(|s| s.is_some()).count();
        if tagged == 0 {
            Ok(manifest)
        } else if tagged == splits.len() {
            manifest.with_splits(splits.into_iter().flatten().collect())
        } else {
            Err(DatasetError::InvalidManifest(format!(
                "{tagged} of {} records carry a split tag",
                splits.len()
            )))
        }
    }
}

fn relativize(path: &Path, base_abs: &Path) -> PathBuf {
    match std::path::absolute(path) {
        Ok(abs) => abs.strip_prefix(base_abs).map(Path::to_path_buf).unwrap_or(abs),
        Err(_) => path.to_path_buf(),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("manifest types serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Source, TamperStep};
    use crate::imaging::Region;
    use proptest::prelude::*;

    fn record(id: &str, country: Country, forged: bool, path: PathBuf) -> DocumentRecord {
        DocumentRecord {
            id: id.to_string(),
            country,
            doc_class: if forged { DocClass::Forged } else { DocClass::Genuine },
            source: if id.contains("scan") { Source::Scan } else { Source::Template },
            image_path: path,
            tamper_log: forged.then(|| {
                vec![TamperStep {
                    src: Region::new(0, 0, 32, 32),
                    dst: Region::new(64, 32, 32, 32),
                    block_size: 32,
                }]
            }),
        }
    }

    #[test]
    fn rejects_duplicates_and_partial_tags() {
        let r = record("a", Country::Fin, false, "a.png".into());
        assert!(Manifest::new(vec![r.clone(), r.clone()], 0).is_err());
        let m = Manifest::new(vec![r], 0).unwrap();
        assert!(m.clone().with_splits(vec![]).is_err());
        assert!(m.with_splits(vec![Split::Train]).is_ok());
    }

    #[test]
    fn header_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let inside = dir.path().join("fin/forged/templates/a_f.png");
        let outside = PathBuf::from("/elsewhere/fin/templates/a.png");
        let m = Manifest::new(
            vec![
                record("fin/template/a.png", Country::Fin, false, outside.clone()),
                record("fin/template/a_f.png", Country::Fin, true, inside.clone()),
            ],
            42,
        )
        .unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), r#"{"format":"gfv-manifest/1","seed":42}"#);
        assert!(lines.next().unwrap().contains("\"/elsewhere/fin/templates/a.png\""));
        let second = lines.next().unwrap();
        assert!(second.contains("\"fin/forged/templates/a_f.png\""), "{second}");
        assert!(second.contains("\"split\":null"));
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back.records()[1].image_path, dir.path().join("fin/forged/templates/a_f.png"));
    }

    #[test]
    fn rejects_unknown_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"format\":\"other/9\",\"seed\":1}\n").unwrap();
        assert!(matches!(Manifest::read(&path), Err(DatasetError::InvalidManifest(_))));
    }

    proptest! {
        #[test]
        fn round_trip(n in 1usize..12, seed in any::<u64>(), tags in proptest::collection::vec(any::<bool>(), 12), tagged in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let records: Vec<DocumentRecord> = (0..n)
                .map(|i| {
                    let country = Country::ALL[i % Country::ALL.len()];
                    let path = dir.path().join(format!("{country}/doc{i}.png"));
                    record(&format!("{country}/template/doc{i}.png"), country, i % 3 == 0, path)
                })
                .collect();
            let mut m = Manifest::new(records, seed).unwrap();
            if tagged {
                m = m.with_splits(tags[..n].iter().map(|&t| if t { Split::Train } else { Split::Test }).collect()).unwrap();
            }
            let path = dir.path().join("manifest.jsonl");
            m.write(&path).unwrap();
            prop_assert_eq!(Manifest::read(&path).unwrap(), m);
        }
    }
}
