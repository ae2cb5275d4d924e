use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{stream_seed, Annotations, DatasetError, DocClass, DocumentRecord, Manifest, TamperStep};
use crate::imaging::{self, ImagingError};

#[derive(Debug, Clone)]
pub struct ForgeOptions {
    /// Side of the square tamper blocks, in pixels of the source image.
    pub block_size: usize,
    pub zones_per_doc: usize,
    pub seed: u64,
    /// Forged images go to `out_dir/<country>/forged/<templates|scans>/<stem>_f.png`.
    pub out_dir: PathBuf,
}

impl Default for ForgeOptions {
    fn default() -> Self {
        Self {
            block_size: 64,
            zones_per_doc: 1,
            seed: 42,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// What happened to one genuine document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ForgeOutcome {
    pub parent_id: String,
    pub candidate_blocks: usize,
    pub forged_id: Option<String>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ForgeReport {
    pub documents: Vec<ForgeOutcome>,
}

impl ForgeReport {
    pub fn skipped(&self) -> impl Iterator<Item = &ForgeOutcome> {
        self.documents.iter().filter(|d| d.skipped.is_some())
    }
}

/// Produces one copy-move forgery per genuine record.
///
/// Each document gets its own random stream derived from `(seed, id)`, so the
/// output does not depend on processing order. Documents without enough
/// candidate blocks are skipped and listed in the report.
pub fn generate_forged_set(
    manifest: &Manifest,
    options: &ForgeOptions,
    annotations: &Annotations,
) -> Result<(Manifest, ForgeReport), DatasetError> {
    if options.zones_per_doc == 0 {
        return Err(DatasetError::InvalidArgument("zones_per_doc must be at least 1".into()));
    }
    if let Some(rec) = manifest.records().iter().find(|r| r.doc_class != DocClass::Genuine) {
        return Err(DatasetError::InvalidManifest(format!(
            "forged-set generation expects genuine records only, found {}",
            rec.id
        )));
    }
    let results: Vec<Result<(ForgeOutcome, Option<DocumentRecord>), DatasetError>> = manifest
        .records()
        .par_iter()
        .map(|rec| forge_one(rec, options, annotations.get(&rec.id).map(Vec::as_slice)))
        .collect();

    let mut report = ForgeReport::default();
    let mut records = manifest.records().to_vec();
    for result in results {
        let (outcome, forged) = result?;
        if let Some(reason) = &outcome.skipped {
            log::warn!("{}: {}", outcome.parent_id, reason);
        }
        records.extend(forged);
        report.documents.push(outcome);
    }
    Ok((Manifest::new(records, options.seed)?, report))
}

fn forge_one(
    rec: &DocumentRecord,
    options: &ForgeOptions,
    foreground: Option<&[imaging::Region]>,
) -> Result<(ForgeOutcome, Option<DocumentRecord>), DatasetError> {
    let mut outcome = ForgeOutcome {
        parent_id: rec.id.clone(),
        candidate_blocks: 0,
        forged_id: None,
        skipped: None,
    };
    let img = imaging::load_grayscale(&rec.image_path)?;
    let grid = match imaging::partition_blocks(&img, options.block_size) {
        Ok(grid) => grid,
        Err(ImagingError::InvalidBlockSize { .. }) => {
            outcome.skipped = Some(format!(
                "NoCandidateZones: block size {} exceeds the {}x{} image",
                options.block_size,
                img.width(),
                img.height()
            ));
            return Ok((outcome, None));
        }
        Err(e) => return Err(e.into()),
    };
    let heuristic;
    let foreground = match foreground {
        Some(regions) => regions,
        None => {
            heuristic = imaging::heuristic_foreground(&img, &grid);
            &heuristic
        }
    };
    let candidates = imaging::select_candidate_zones(&grid, foreground);
    outcome.candidate_blocks = candidates.len();
    let needed = 2 * options.zones_per_doc;
    if candidates.len() < needed {
        outcome.skipped = Some(format!(
            "NoCandidateZones: {} candidate blocks, {} needed",
            candidates.len(),
            needed
        ));
        return Ok((outcome, None));
    }

    // All source and destination blocks are distinct.
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(options.seed, &rec.id));
    let picked: Vec<usize> = candidates.choose_multiple(&mut rng, needed).copied().collect();
    let mut forged = img;
    let mut log = Vec::with_capacity(options.zones_per_doc);
    for pair in picked.chunks_exact(2) {
        let src = grid.region(pair[0]).expect("candidate index is in the grid");
        let dst = grid.region(pair[1]).expect("candidate index is in the grid");
        forged = imaging::copy_move(&forged, src, dst)?;
        log.push(TamperStep {
            src,
            dst,
            block_size: options.block_size,
        });
    }

    let stem = rec.image_path.file_stem().unwrap_or_default().to_string_lossy();
    let filename = format!("{stem}_f.png");
    let path = forged_path(&options.out_dir, rec, &filename);
    forged.save_png(&path)?;
    let id = format!("{}/{}/{}", rec.country, rec.source.as_str(), filename);
    outcome.forged_id = Some(id.clone());
    Ok((
        outcome,
        Some(DocumentRecord {
            id,
            country: rec.country,
            doc_class: DocClass::Forged,
            source: rec.source,
            image_path: path,
            tamper_log: Some(log),
        }),
    ))
}

fn forged_path(out_dir: &Path, rec: &DocumentRecord, filename: &str) -> PathBuf {
    out_dir
        .join(rec.country.code())
        .join("forged")
        .join(rec.source.dir_name())
        .join(filename)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ingest, Country};
    use crate::imaging::{GrayImage, Region};

    fn corpus(dir: &Path, size: usize) {
        for (i, name) in ["00", "01", "02"].iter().enumerate() {
            let img = GrayImage::from_fn(size, size, |x, y| ((x * 7 + y * 3 + i * 11) % 17) as f64 / 40.0 + 0.4).unwrap();
            img.save_png(&dir.join(format!("est/templates/{name}.png"))).unwrap();
        }
    }

    #[test]
    fn forges_every_document_once() {
        let dir = tempfile::tempdir().unwrap();
        corpus(&dir.path().join("root"), 64);
        let (manifest, _) = ingest(&dir.path().join("root")).unwrap();
        let opts = ForgeOptions {
            block_size: 16,
            zones_per_doc: 2,
            seed: 5,
            out_dir: dir.path().join("out"),
        };
        let (out, report) = generate_forged_set(&manifest, &opts, &Annotations::new()).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out.count_class(DocClass::Forged), 3);
        assert_eq!(report.skipped().count(), 0);
        let forged = out.get("est/template/01_f.png").unwrap();
        assert_eq!(forged.country, Country::Est);
        assert!(forged.image_path.ends_with("est/forged/templates/01_f.png"));
        let log = forged.tamper_log.as_ref().unwrap();
        assert_eq!(log.len(), 2);
        let blocks = [log[0].src, log[0].dst, log[1].src, log[1].dst];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(blocks[i], blocks[j]);
            }
        }
    }

    #[test]
    fn two_candidates_give_one_pair() {
        let dir = tempfile::tempdir().unwrap();
        corpus(&dir.path().join("root"), 32);
        let (manifest, _) = ingest(&dir.path().join("root")).unwrap();
        // Foreground covering the bottom half leaves exactly blocks 1 and 2.
        let ann: Annotations = manifest
            .records()
            .iter()
            .map(|r| (r.id.clone(), vec![Region::new(0, 16, 32, 16)]))
            .collect();
        let opts = ForgeOptions {
            block_size: 16,
            zones_per_doc: 1,
            seed: 1,
            out_dir: dir.path().join("out"),
        };
        let (out, report) = generate_forged_set(&manifest, &opts, &ann).unwrap();
        assert!(report.documents.iter().all(|d| d.candidate_blocks == 2));
        for rec in out.records().iter().filter(|r| r.doc_class == DocClass::Forged) {
            let log = rec.tamper_log.as_ref().unwrap();
            assert_eq!(log.len(), 1);
            let mut pair = [log[0].src, log[0].dst];
            pair.sort_by_key(|r| r.x);
            assert_eq!(pair, [Region::new(0, 0, 16, 16), Region::new(16, 0, 16, 16)]);
        }
    }

    #[test]
    fn skips_documents_without_candidates() {
        let dir = tempfile::tempdir().unwrap();
        corpus(&dir.path().join("root"), 32);
        let (manifest, _) = ingest(&dir.path().join("root")).unwrap();
        let opts = ForgeOptions {
            block_size: 32,
            zones_per_doc: 1,
            seed: 1,
            out_dir: dir.path().join("out"),
        };
        let (out, report) = generate_forged_set(&manifest, &opts, &Annotations::new()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(report.skipped().count(), 3);
        assert!(report.documents[0].skipped.as_ref().unwrap().starts_with("NoCandidateZones"));
    }

    #[test]
    fn rejects_forged_input_and_zero_zones() {
        let dir = tempfile::tempdir().unwrap();
        corpus(&dir.path().join("root"), 64);
        let (manifest, _) = ingest(&dir.path().join("root")).unwrap();
        let opts = ForgeOptions {
            block_size: 16,
            zones_per_doc: 0,
            seed: 1,
            out_dir: dir.path().join("out"),
        };
        assert!(matches!(
            generate_forged_set(&manifest, &opts, &Annotations::new()),
            Err(DatasetError::InvalidArgument(_))
        ));
        let opts = ForgeOptions { zones_per_doc: 1, ..opts };
        let (forged, _) = generate_forged_set(&manifest, &opts, &Annotations::new()).unwrap();
        assert!(matches!(
            generate_forged_set(&forged, &opts, &Annotations::new()),
            Err(DatasetError::InvalidManifest(_))
        ));
    }
}
