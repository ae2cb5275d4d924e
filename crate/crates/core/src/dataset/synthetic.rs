//! Synthetic stand-in corpus for runs without the real document collection.
//!
//! Each pseudo-country gets its own guilloche background (all of its
//! documents share it, as printed documents of one issuer do) plus a photo
//! box and three text lines whose lengths vary per document. Foreground
//! rectangles are written as annotations next to the images.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stream_seed, Country, DatasetError};
use crate::imaging::{synth_guilloche, GrayImage, GuillocheParams, Region};

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub countries: Vec<Country>,
    pub docs_per_country: usize,
    /// Side of the square documents, in pixels.
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            countries: vec![Country::Fin, Country::Grc, Country::Svk],
            docs_per_country: 20,
            size: 256,
            seed: 42,
        }
    }
}

/// Layout shared by every document of one pseudo-country.
#[derive(Debug, Clone)]
pub struct CountryStyle {
    pub guilloche: GuillocheParams,
    pub photo: Region,
    pub text_rows: [usize; 3],
    pub text_x: usize,
}

impl SyntheticCorpus {
    pub fn style(&self, country: Country) -> CountryStyle {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, &format!("synth/{country}")));
        let s = self.size as f64;
        let guilloche = GuillocheParams {
            curve_count: rng.random_range(18..=30),
            amplitude: s * rng.random_range(0.30..0.42),
            frequency: rng.random_range(2.2..4.8),
            phase_jitter: 0.6,
            line_intensity: rng.random_range(0.55..0.65),
            background_intensity: rng.random_range(0.80..0.86),
            seed: rng.random(),
        };
        let unit = self.size / 16;
        let photo = Region::new(unit, unit * 2, unit * 4, unit * 5);
        let first = unit * rng.random_range(2..4);
        CountryStyle {
            guilloche,
            photo,
            text_rows: [first, first + unit * 2, first + unit * 4],
            text_x: unit * 6,
        }
    }

    /// Renders document `index` of `country` and returns it with its foreground rectangles.
    pub fn document(&self, country: Country, index: usize) -> Result<(GrayImage, Vec<Region>), DatasetError> {
        let style = self.style(country);
        let mut img = synth_guilloche(&style.guilloche, self.size, self.size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, &format!("synth/{country}/{index}")));
        let unit = self.size / 16;
        let mut foreground = vec![style.photo];
        img.fill_region(style.photo, 0.3)?;
        let max_len = self.size - style.text_x - unit;
        for &row in &style.text_rows {
            let len = rng.random_range(max_len / 3..=max_len);
            let line = Region::new(style.text_x, row, len, unit / 2);
            img.fill_region(line, 0.15)?;
            foreground.push(line);
        }
        Ok((img, foreground))
    }

    /// Writes `root/<country>/templates/NN.png` and matching annotation files.
    pub fn write(&self, root: &Path) -> Result<Vec<PathBuf>, DatasetError> {
        let mut written = Vec::new();
        for &country in &self.countries {
            let ann_dir = root.join(country.code()).join("annotations");
            std::fs::create_dir_all(&ann_dir).map_err(DatasetError::io(&ann_dir))?;
            for i in 0..self.docs_per_country {
                let (img, fg) = self.document(country, i)?;
                let path = root.join(country.code()).join("templates").join(format!("{i:02}.png"));
                img.save_png(&path)?;
                let ann = ann_dir.join(format!("{i:02}.json"));
                let json = serde_json::to_string(&fg).expect("regions serialize");
                std::fs::write(&ann, json).map_err(DatasetError::io(&ann))?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ingest, load_annotations};
    use crate::imaging::{heuristic_foreground, partition_blocks};

    #[test]
    fn documents_share_background_but_differ() {
        let corpus = SyntheticCorpus { size: 128, ..Default::default() };
        let (a, fg_a) = corpus.document(Country::Fin, 0).unwrap();
        let (b, fg_b) = corpus.document(Country::Fin, 1).unwrap();
        assert_ne!(a, b);
        // Pixels outside every foreground rectangle come from the shared guilloche.
        for y in 0..128 {
            for x in 0..128 {
                if !fg_a.iter().chain(&fg_b).any(|r| r.contains(x, y)) {
                    assert_eq!(a.get(x, y), b.get(x, y));
                }
            }
        }
        let (c, _) = corpus.document(Country::Grc, 0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn heuristic_agrees_with_annotation_on_photo() {
        let corpus = SyntheticCorpus::default();
        let (img, fg) = corpus.document(Country::Svk, 3).unwrap();
        let grid = partition_blocks(&img, 32).unwrap();
        let detected = heuristic_foreground(&img, &grid);
        assert!(detected.iter().any(|b| b.intersects(&fg[0])));
        // The bare guilloche is low contrast, so most blocks stay candidates.
        assert!(detected.len() < grid.len() / 2, "{} of {}", detected.len(), grid.len());
    }

    #[test]
    fn writes_ingestible_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = SyntheticCorpus {
            docs_per_country: 3,
            size: 64,
            ..Default::default()
        };
        assert_eq!(corpus.write(dir.path()).unwrap().len(), 9);
        let (m, _) = ingest(dir.path()).unwrap();
        assert_eq!(m.len(), 9);
        assert_eq!(load_annotations(&m).unwrap().len(), 9);
    }
}
