use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{Country, DatasetError, DocClass, DocumentRecord, Manifest, Source};
use crate::imaging::Region;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];

/// Directories that were skipped while ingesting a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub skipped_dirs: Vec<String>,
}

/// Foreground rectangles keyed by record id.
pub type Annotations = HashMap<String, Vec<Region>>;

/// Builds a genuine-only manifest from `root/<country>/{templates,scans}/*`.
///
/// Unknown country directories are logged and listed in the report instead
/// of failing the whole ingest.
pub fn ingest(root: &Path) -> Result<(Manifest, IngestReport), DatasetError> {
    let root = std::path::absolute(root).map_err(DatasetError::io(root))?;
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for entry in sorted_entries(&root)? {
        if !entry.is_dir() {
            continue;
        }
        let name = entry.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let country: Country = match name.parse() {
            Ok(c) => c,
            Err(_) => {
                log::warn!("skipping unknown country directory {}", entry.display());
                report.skipped_dirs.push(name);
                continue;
            }
        };
        for source in [Source::Template, Source::Scan] {
            let dir = entry.join(source.dir_name());
            if !dir.is_dir() {
                continue;
            }
            for file in sorted_entries(&dir)? {
                if !file.is_file() || !is_image(&file) {
                    continue;
                }
                let filename = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
                records.push(DocumentRecord {
                    id: format!("{}/{}/{}", country, source.as_str(), filename),
                    country,
                    doc_class: DocClass::Genuine,
                    source,
                    image_path: file,
                    tamper_log: None,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyCorpus(root));
    }
    Ok((Manifest::new(records, 0)?, report))
}

/// Reads the optional foreground annotations of every record.
///
/// For `root/<country>/<templates|scans>/<stem>.<ext>` the lookup order is
/// `root/<country>/annotations/<templates|scans>/<stem>.json`, then
/// `root/<country>/annotations/<stem>.json`. Records without a file are absent
/// from the map and fall back to the foreground heuristic.
pub fn load_annotations(manifest: &Manifest) -> Result<Annotations, DatasetError> {
    let mut out = Annotations::new();
    for rec in manifest.records() {
        let Some(source_dir) = rec.image_path.parent() else { continue };
        let Some(country_dir) = source_dir.parent() else { continue };
        let stem = rec.image_path.file_stem().unwrap_or_default().to_string_lossy();
        let candidates = [
            country_dir
                .join("annotations")
                .join(rec.source.dir_name())
                .join(format!("{stem}.json")),
            country_dir.join("annotations").join(format!("{stem}.json")),
        ];
        if let Some(path) = candidates.iter().find(|p| p.is_file()) {
            let text = std::fs::read_to_string(path).map_err(DatasetError::io(path))?;
            let regions: Vec<Region> = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
                path: path.clone(),
                source,
            })?;
            out.insert(rec.id.clone(), regions);
        }
    }
    Ok(out)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(DatasetError::io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(DatasetError::io(dir))?;
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()))
}
