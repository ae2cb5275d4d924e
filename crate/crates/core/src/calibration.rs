//! Per-country distance distributions and decision thresholds.
//!
//! Distances of calibration pairs are split by label. When every similar
//! distance lies below every dissimilar one, the threshold range is the gap
//! between them. Otherwise candidate thresholds are the midpoints between
//! consecutive distinct pooled distances; the range is the widest contiguous
//! run of candidates with maximal accuracy.
//!
//! Threshold search only needs ordering and midpoints, so it works on any
//! `Num + PartialOrd` scalar, exact rationals included.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_traits::Num;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Country, DatasetError, InputTensor, PairLabel, PairSample, Preprocessor};
use crate::network::{pair_distance, NetworkError, SiameseParams};
use crate::Real;

pub const THRESHOLDS_FORMAT: &str = "gfv-thresholds/1";

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("empty distance list")]
    EmptyList,
    #[error("pairs mix countries {0} and {1}")]
    MixedCountries(Country, Country),
    #[error("no threshold for country {0}")]
    UnknownCountry(String),
    #[error("invalid threshold table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CalibrationError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::EmptyList => "EmptyList",
            Self::MixedCountries(..) => "MixedCountries",
            Self::UnknownCountry(_) => "UnknownCountry",
            Self::InvalidTable(_) => "InvalidTable",
            Self::Network(e) => e.kind(),
            Self::Dataset(e) => e.kind(),
            Self::Io { .. } => "Io",
        }
    }
}

/// Embedding distances of one country's calibration pairs, split by label.
///
/// Embeddings are computed in evaluation mode, each distinct document once.
/// Within each label the output order follows the input order.
pub fn compute_distances<T: Real>(
    params: &SiameseParams<T>,
    pairs: &[PairSample],
    pre: &dyn Preprocessor,
) -> Result<(Vec<T>, Vec<T>), CalibrationError> {
    if let Some(first) = pairs.first() {
        if let Some(p) = pairs.iter().find(|p| p.a.country != first.a.country) {
            return Err(CalibrationError::MixedCountries(first.a.country, p.a.country));
        }
    }
    let mut ids: Vec<&str> = Vec::new();
    let mut tensors: Vec<Arc<InputTensor>> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        for doc in [&p.a, &p.b] {
            if !index.contains_key(doc.id.as_str()) {
                index.insert(&doc.id, ids.len());
                ids.push(&doc.id);
                tensors.push(pre.tensor(doc)?);
            }
        }
    }
    let mut embeddings = Vec::with_capacity(tensors.len());
    for chunk in tensors.chunks(16) {
        let refs: Vec<&InputTensor> = chunk.iter().map(|t| &**t).collect();
        embeddings.extend(params.embed_batch(&refs)?);
    }
    let mut similar = Vec::new();
    let mut dissimilar = Vec::new();
    for p in pairs {
        let d = pair_distance(&embeddings[index[p.a.id.as_str()]], &embeddings[index[p.b.id.as_str()]])?;
        match p.label {
            PairLabel::Similar => similar.push(d),
            PairLabel::Dissimilar => dissimilar.push(d),
        }
    }
    Ok((similar, dissimilar))
}

/// Extremes and raw values of the two distance distributions of a country.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceStats<T> {
    pub country: Country,
    pub sim_min: T,
    pub sim_max: T,
    pub dis_min: T,
    pub dis_max: T,
    pub n_sim: usize,
    pub n_dis: usize,
    pub similar: Vec<T>,
    pub dissimilar: Vec<T>,
}

fn extremes<T: PartialOrd + Copy>(v: &[T]) -> Result<(T, T), CalibrationError> {
    let first = *v.first().ok_or(CalibrationError::EmptyList)?;
    Ok(v.iter().fold((first, first), |(lo, hi), &x| {
        (if x < lo { x } else { lo }, if x > hi { x } else { hi })
    }))
}

pub fn distance_stats<T: PartialOrd + Copy>(
    similar: &[T],
    dissimilar: &[T],
    country: Country,
) -> Result<DistanceStats<T>, CalibrationError> {
    let (sim_min, sim_max) = extremes(similar)?;
    let (dis_min, dis_max) = extremes(dissimilar)?;
    Ok(DistanceStats {
        country,
        sim_min,
        sim_max,
        dis_min,
        dis_max,
        n_sim: similar.len(),
        n_dis: dissimilar.len(),
        similar: similar.to_vec(),
        dissimilar: dissimilar.to_vec(),
    })
}

/// Calibrated decision threshold for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRecord<T> {
    pub country: Country,
    pub lambda: T,
    pub range_lo: T,
    pub range_hi: T,
    pub overlap: bool,
    /// Calibration pairs classified correctly at `lambda`.
    pub correct: usize,
    pub total: usize,
}

impl<T> ThresholdRecord<T> {
    pub fn calibration_accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Calibration pairs classified correctly at `lambda`: similar below it, dissimilar at or above.
pub fn correct_count<T: PartialOrd>(similar: &[T], dissimilar: &[T], lambda: &T) -> usize {
    similar.iter().filter(|d| *d < lambda).count() + dissimilar.iter().filter(|d| *d >= lambda).count()
}

fn midpoint<T: Num + Copy>(a: T, b: T) -> T {
    a + (b - a) / (T::one() + T::one())
}

/// Candidate thresholds of the overlap case: midpoints of consecutive distinct pooled distances.
pub fn candidate_thresholds<T: Num + PartialOrd + Copy>(similar: &[T], dissimilar: &[T]) -> Vec<T> {
    let pooled = distinct_sorted(similar, dissimilar);
    pooled.windows(2).map(|w| midpoint(w[0], w[1])).collect()
}

fn distinct_sorted<T: PartialOrd + Copy>(similar: &[T], dissimilar: &[T]) -> Vec<T> {
    let mut pooled: Vec<T> = similar.iter().chain(dissimilar).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("distances are ordered"));
    pooled.dedup_by(|a, b| a == b);
    pooled
}

pub fn determine_threshold<T: Num + PartialOrd + Copy>(
    stats: &DistanceStats<T>,
) -> Result<ThresholdRecord<T>, CalibrationError> {
    let (similar, dissimilar) = (&stats.similar, &stats.dissimilar);
    if similar.is_empty() || dissimilar.is_empty() {
        return Err(CalibrationError::EmptyList);
    }
    let total = similar.len() + dissimilar.len();
    let record = |lambda: T, lo: T, hi: T, overlap: bool| ThresholdRecord {
        country: stats.country,
        lambda,
        range_lo: lo,
        range_hi: hi,
        overlap,
        correct: correct_count(similar, dissimilar, &lambda),
        total,
    };
    if stats.sim_max < stats.dis_min {
        let lambda = midpoint(stats.sim_max, stats.dis_min);
        return Ok(record(lambda, stats.sim_max, stats.dis_min, false));
    }
    let pooled = distinct_sorted(similar, dissimilar);
    if pooled.len() == 1 {
        return Ok(record(pooled[0], pooled[0], pooled[0], true));
    }
    // Candidate i sits between pooled[i] and pooled[i + 1].
    let scores: Vec<usize> = pooled
        .windows(2)
        .map(|w| correct_count(similar, dissimilar, &midpoint(w[0], w[1])))
        .collect();
    let best = *scores.iter().max().expect("at least one candidate");
    let mut chosen: Option<(T, T)> = None;
    let mut i = 0;
    while i < scores.len() {
        if scores[i] != best {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < scores.len() && scores[j + 1] == best {
            j += 1;
        }
        let (lo, hi) = (pooled[i], pooled[j + 1]);
        chosen = match chosen {
            // Runs are visited in increasing order, so on equal width the earlier one has the smaller midpoint.
            Some((clo, chi)) if hi - lo <= chi - clo => Some((clo, chi)),
            _ => Some((lo, hi)),
        };
        i = j + 1;
    }
    let (lo, hi) = chosen.expect("a best run exists");
    Ok(record(midpoint(lo, hi), lo, hi, true))
}

/// Persisted threshold of one country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub country: Country,
    pub lambda: f64,
    pub range: [f64; 2],
    pub overlap: bool,
}

impl<T: Real> From<&ThresholdRecord<T>> for ThresholdEntry {
    fn from(r: &ThresholdRecord<T>) -> Self {
        Self {
            country: r.country,
            lambda: r.lambda.as_f64(),
            range: [r.range_lo.as_f64(), r.range_hi.as_f64()],
            overlap: r.overlap,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableFile {
    format: String,
    entries: Vec<ThresholdEntry>,
}

/// Per-country thresholds, kept in country order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdTable {
    entries: Vec<ThresholdEntry>,
}

impl ThresholdTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the entry of a country.
    pub fn insert(&mut self, entry: ThresholdEntry) {
        match self.entries.binary_search_by_key(&entry.country, |e| e.country) {
            Ok(i) => self.entries[i] = entry,
            Err(i) => self.entries.insert(i, entry),
        }
    }

    pub fn get(&self, country: Country) -> Option<&ThresholdEntry> {
        self.entries.iter().find(|e| e.country == country)
    }

    pub fn lambda(&self, country: Country) -> Result<f64, CalibrationError> {
        self.get(country)
            .map(|e| e.lambda)
            .ok_or_else(|| CalibrationError::UnknownCountry(country.to_string()))
    }

    pub fn entries(&self) -> &[ThresholdEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let file = TableFile {
            format: THRESHOLDS_FORMAT.into(),
            entries: self.entries.clone(),
        };
        serde_json::to_string_pretty(&file).expect("thresholds serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let file: TableFile = serde_json::from_str(text).map_err(|e| CalibrationError::InvalidTable(e.to_string()))?;
        if file.format != THRESHOLDS_FORMAT {
            return Err(CalibrationError::InvalidTable(format!("unknown format {:?}", file.format)));
        }
        let mut table = Self::new();
        for e in file.entries {
            if !(e.range[0] <= e.lambda && e.lambda <= e.range[1]) {
                return Err(CalibrationError::InvalidTable(format!("{}: lambda outside its range", e.country)));
            }
            table.insert(e);
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<(), CalibrationError> {
        let io = |source| CalibrationError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(path, self.to_json()).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path).map_err(|source| CalibrationError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn threshold(sim: &[f64], dis: &[f64]) -> ThresholdRecord<f64> {
        determine_threshold(&distance_stats(sim, dis, Country::Aze).unwrap()).unwrap()
    }

    /// Best accuracy over every candidate, by brute force.
    fn oracle<T: Num + PartialOrd + Copy>(sim: &[T], dis: &[T]) -> usize {
        let all: Vec<T> = sim.iter().chain(dis).copied().collect();
        let mut best = 0;
        for &a in &all {
            for &b in &all {
                if a < b && !all.iter().any(|&x| a < x && x < b) {
                    best = best.max(correct_count(sim, dis, &midpoint(a, b)));
                }
            }
        }
        best
    }

    #[test]
    fn stats_extremes() {
        let s = distance_stats(&[0.3, 0.0, 0.73], &[2.45, 1.2, 1.9], Country::Aze).unwrap();
        assert_eq!((s.sim_min, s.sim_max, s.dis_min, s.dis_max), (0.0, 0.73, 1.2, 2.45));
        assert_eq!((s.n_sim, s.n_dis), (3, 3));
        let s = distance_stats(&[0.4], &[0.4], Country::Aze).unwrap();
        assert_eq!(s.sim_min, s.sim_max);
        assert!(matches!(distance_stats::<f64>(&[], &[1.0], Country::Aze), Err(CalibrationError::EmptyList)));
        assert!(matches!(distance_stats(&[1.0], &[], Country::Aze), Err(CalibrationError::EmptyList)));
    }

    #[test]
    fn disjoint_aze() {
        let r = threshold(&[0.0, 0.41, 0.73], &[1.20, 1.77, 2.45]);
        assert!(!r.overlap);
        assert_eq!((r.range_lo, r.range_hi), (0.73, 1.20));
        assert!((r.lambda - 0.965).abs() < 1e-12);
        assert_eq!(r.calibration_accuracy(), 1.0);
        assert!(r.range_lo <= 0.75 && 1.15 <= r.range_hi);
    }

    #[test]
    fn singletons() {
        let r = threshold(&[0.1], &[0.9]);
        assert_eq!((r.range_lo, r.range_hi, r.lambda), (0.1, 0.9, 0.5));
        assert_eq!(r.calibration_accuracy(), 1.0);
    }

    #[test]
    fn overlap_example() {
        let r = threshold(&[0.2, 0.8], &[0.5, 1.5]);
        assert!(r.overlap);
        assert_eq!((r.range_lo, r.range_hi), (0.8, 1.5));
        assert!((r.lambda - 1.15).abs() < 1e-12);
        assert_eq!(r.calibration_accuracy(), 0.75);
        assert_eq!(r.correct, oracle(&[0.2, 0.8], &[0.5, 1.5]));
    }

    #[test]
    fn all_equal_distances() {
        let r = threshold(&[0.5, 0.5], &[0.5]);
        assert!(r.overlap);
        assert_eq!((r.range_lo, r.lambda, r.range_hi), (0.5, 0.5, 0.5));
    }

    #[test]
    fn ties_prefer_wider_then_lower() {
        // Midpoints 0.15 (acc 2/4), 0.5, 1.5 (2/4): runs [0.1,0.2] and [1,2], the wider wins.
        let r = threshold(&[0.1, 1.0], &[0.2, 2.0]);
        assert_eq!((r.range_lo, r.range_hi), (1.0, 2.0));
        // Equal widths: the lower run wins.
        let r = threshold(&[0.0, 2.0], &[1.0, 3.0]);
        assert_eq!((r.range_lo, r.range_hi), (0.0, 1.0));
    }

    #[test]
    fn outlier_can_move_an_overlap_range() {
        // The outlier opens a new candidate above the old maximum that ties the best run and is wider.
        let r = threshold(&[0.0, 1.0], &[0.5]);
        assert_eq!((r.range_lo, r.range_hi), (0.0, 0.5));
        let r = threshold(&[0.0, 1.0], &[0.5, 2.0]);
        assert_eq!((r.range_lo, r.range_hi), (1.0, 2.0));
    }

    #[test]
    fn exact_rationals() {
        let q = |n: i64, d: i64| Ratio::new(n, d);
        let s = distance_stats(&[q(1, 5), q(4, 5)], &[q(1, 2), q(3, 2)], Country::Fin).unwrap();
        let r = determine_threshold(&s).unwrap();
        assert_eq!(r.lambda, q(23, 20));
        assert_eq!((r.correct, r.total), (3, 4));
    }

    #[test]
    fn table_json_round_trip() {
        let mut t = ThresholdTable::new();
        t.insert((&threshold(&[0.1], &[0.9])).into());
        let mut other: ThresholdEntry = (&threshold(&[0.2, 0.8], &[0.5, 1.5])).into();
        other.country = Country::Alb;
        t.insert(other);
        assert_eq!(t.entries()[0].country, Country::Alb);
        let json = t.to_json();
        assert!(json.contains("\"format\": \"gfv-thresholds/1\""));
        assert!(json.contains("\"range\": ["));
        assert_eq!(ThresholdTable::from_json(&json).unwrap(), t);
        assert!(matches!(t.lambda(Country::Rus), Err(CalibrationError::UnknownCountry(_))));
        assert!(ThresholdTable::from_json("{\"format\":\"x\",\"entries\":[]}").is_err());
    }

    fn distances() -> impl Strategy<Value = Vec<i64>> {
        prop::collection::vec(0i64..60, 1..20)
    }

    proptest! {
        #[test]
        fn matches_brute_force(sim in distances(), dis in distances()) {
            let sim: Vec<Ratio<i64>> = sim.into_iter().map(|v| Ratio::new(v, 20)).collect();
            let dis: Vec<Ratio<i64>> = dis.into_iter().map(|v| Ratio::new(v, 20)).collect();
            let r = determine_threshold(&distance_stats(&sim, &dis, Country::Grc).unwrap()).unwrap();
            prop_assert!(r.range_lo <= r.lambda && r.lambda <= r.range_hi);
            if r.overlap && distinct_sorted(&sim, &dis).len() > 1 {
                prop_assert_eq!(r.correct, oracle(&sim, &dis));
            } else if !r.overlap {
                prop_assert_eq!(r.correct, r.total);
            }
        }

        #[test]
        fn disjoint_interior_is_perfect(sim in distances(), gap in 1i64..10, dis in distances(), t in 1i64..100) {
            let top = *sim.iter().max().unwrap();
            let dis: Vec<i64> = dis.iter().map(|d| d + top + gap).collect();
            let r = threshold(
                &sim.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                &dis.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            );
            prop_assert!(!r.overlap);
            let lambda = r.range_lo + (r.range_hi - r.range_lo) * t as f64 / 100.0;
            let sim_f: Vec<f64> = sim.iter().map(|&v| v as f64).collect();
            let dis_f: Vec<f64> = dis.iter().map(|&v| v as f64).collect();
            prop_assert_eq!(correct_count(&sim_f, &dis_f, &lambda), r.total);
        }

        #[test]
        fn outliers_leave_range_unchanged(sim in distances(), dis in distances(), extra in 1i64..20) {
            let sim: Vec<f64> = sim.into_iter().map(|v| v as f64).collect();
            let dis: Vec<f64> = dis.into_iter().map(|v| v as f64).collect();
            let r = threshold(&sim, &dis);
            let mut more_dis = dis.clone();
            more_dis.push(sim.iter().chain(&dis).fold(0.0f64, |a, &b| a.max(b)) + extra as f64);
            let mut more_sim = sim.clone();
            more_sim.push(sim.iter().chain(&dis).fold(f64::MAX, |a, &b| a.min(b)) - extra as f64);
            for (s, d) in [(&sim, &more_dis), (&more_sim, &dis)] {
                let r2 = threshold(s, d);
                if !r.overlap {
                    prop_assert_eq!((r2.range_lo, r2.range_hi), (r.range_lo, r.range_hi));
                }
            }
        }
    }
}
