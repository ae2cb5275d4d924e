use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stream_seed, Country, DatasetError, DocClass, DocumentRecord, Manifest, Source, Split};

/// Similarity label `c` of a pair: similar pairs share a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairLabel {
    Dissimilar,
    Similar,
}

impl PairLabel {
    pub fn of(a: &DocumentRecord, b: &DocumentRecord) -> Self {
        if a.doc_class == b.doc_class {
            PairLabel::Similar
        } else {
            PairLabel::Dissimilar
        }
    }

    /// Numeric label: 1 for similar, 0 for dissimilar.
    pub fn c(self) -> u8 {
        match self {
            PairLabel::Similar => 1,
            PairLabel::Dissimilar => 0,
        }
    }
}

/// Ordered same-country document pair with its similarity label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub a: DocumentRecord,
    pub b: DocumentRecord,
    pub label: PairLabel,
}

impl PairSample {
    /// Builds a pair, deriving the label from the document classes.
    pub fn new(a: DocumentRecord, b: DocumentRecord) -> Result<Self, DatasetError> {
        if a.country != b.country {
            return Err(DatasetError::InvalidArgument(format!(
                "pair mixes countries: {} and {}",
                a.id, b.id
            )));
        }
        let label = PairLabel::of(&a, &b);
        Ok(Self { a, b, label })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PairOptions {
    /// Allow pairing a template with a scan. Off by default so source-domain
    /// shift is not mistaken for a forgery signal.
    pub allow_cross_source: bool,
}

/// Samples labelled pairs for one country and split.
///
/// Similar pairs alternate between genuine/genuine and forged/forged. The two
/// members of a pair are always distinct documents; documents may repeat
/// across pairs.
pub fn sample_pairs(
    manifest: &Manifest,
    country: Country,
    n_similar: usize,
    n_dissimilar: usize,
    split: Split,
    seed: u64,
    options: PairOptions,
) -> Result<Vec<PairSample>, DatasetError> {
    if manifest.splits().is_none() {
        return Err(DatasetError::InvalidManifest("manifest has no train/test split".into()));
    }
    let insufficient = |detail: String| DatasetError::InsufficientDocuments { country, split, detail };
    let mut docs: Vec<&DocumentRecord> = manifest.select(country, Some(split)).collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    for class in [DocClass::Genuine, DocClass::Forged] {
        let n = docs.iter().filter(|d| d.doc_class == class).count();
        if n < 2 {
            return Err(insufficient(format!("{n} {class} documents, need at least 2")));
        }
    }

    // Pools of documents that may be paired together.
    let groups: Vec<[Vec<&DocumentRecord>; 2]> = if options.allow_cross_source {
        vec![by_class(docs.iter().copied())]
    } else {
        [Source::Template, Source::Scan]
            .iter()
            .map(|&s| by_class(docs.iter().copied().filter(|d| d.source == s)))
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("pairs/{country}/{split}")));
    let mut pairs = Vec::with_capacity(n_similar + n_dissimilar);
    for i in 0..n_similar {
        let class = if i % 2 == 0 { 0 } else { 1 };
        let eligible: Vec<&[Vec<&DocumentRecord>; 2]> = groups.iter().filter(|g| g[class].len() >= 2).collect();
        let group = eligible
            .choose(&mut rng)
            .ok_or_else(|| insufficient("no source has two documents of one class".into()))?;
        let two: Vec<&&DocumentRecord> = group[class].choose_multiple(&mut rng, 2).collect();
        pairs.push(PairSample::new((*two[0]).clone(), (*two[1]).clone())?);
    }
    for _ in 0..n_dissimilar {
        let eligible: Vec<&[Vec<&DocumentRecord>; 2]> =
            groups.iter().filter(|g| !g[0].is_empty() && !g[1].is_empty()).collect();
        let group = eligible
            .choose(&mut rng)
            .ok_or_else(|| insufficient("no source has both genuine and forged documents".into()))?;
        let genuine = *group[0].choose(&mut rng).expect("non-empty");
        let forged = *group[1].choose(&mut rng).expect("non-empty");
        let (a, b) = if rng.random_bool(0.5) { (genuine, forged) } else { (forged, genuine) };
        pairs.push(PairSample::new(a.clone(), b.clone())?);
    }
    Ok(pairs)
}

fn by_class<'a>(docs: impl Iterator<Item = &'a DocumentRecord>) -> [Vec<&'a DocumentRecord>; 2] {
    let mut out: [Vec<&DocumentRecord>; 2] = [Vec::new(), Vec::new()];
    for d in docs {
        match d.doc_class {
            DocClass::Genuine => out[0].push(d),
            DocClass::Forged => out[1].push(d),
        }
    }
    out
}
