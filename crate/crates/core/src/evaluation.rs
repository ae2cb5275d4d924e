//! Pair decisions against a threshold, TAR/FRR/FAR, ROC curves and CSV export.
//!
//! A pair is declared similar when its distance is strictly below λ. FRR is
//! the share of similar pairs at or above λ, so TAR + FRR = 1.

use std::path::{Path, PathBuf};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Country, PairLabel};
use crate::Real;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("empty distance list")]
    EmptyList,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EvaluationError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::EmptyList => "EmptyList",
            Self::Io { .. } => "Io",
        }
    }
}

pub fn classify_pair<T: PartialOrd>(d: T, lambda: T) -> PairLabel {
    if d < lambda {
        PairLabel::Similar
    } else {
        PairLabel::Dissimilar
    }
}

/// Counts behind the rates; named after the symbols of the acceptance-rate definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    /// Similar pairs accepted.
    pub x1: usize,
    /// Similar pairs rejected.
    pub x2: usize,
    /// Dissimilar pairs accepted.
    pub x3: usize,
    pub n_similar: usize,
    pub n_dissimilar: usize,
}

pub fn count_decisions<T: PartialOrd>(similar: &[T], dissimilar: &[T], lambda: &T) -> Counts {
    let x1 = similar.iter().filter(|d| *d < lambda).count();
    Counts {
        x1,
        x2: similar.len() - x1,
        x3: dissimilar.iter().filter(|d| *d < lambda).count(),
        n_similar: similar.len(),
        n_dissimilar: dissimilar.len(),
    }
}

impl Counts {
    pub fn tar_exact(&self) -> Ratio<u64> {
        Ratio::new(self.x1 as u64, self.n_similar as u64)
    }

    pub fn frr_exact(&self) -> Ratio<u64> {
        Ratio::new(self.x2 as u64, self.n_similar as u64)
    }

    pub fn far_exact(&self) -> Ratio<u64> {
        Ratio::new(self.x3 as u64, self.n_dissimilar as u64)
    }

    pub fn tar(&self) -> f64 {
        self.x1 as f64 / self.n_similar as f64
    }

    pub fn frr(&self) -> f64 {
        self.x2 as f64 / self.n_similar as f64
    }

    pub fn far(&self) -> f64 {
        self.x3 as f64 / self.n_dissimilar as f64
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub country: Country,
    pub lambda: f64,
    pub tar: f64,
    pub frr: f64,
    pub far: f64,
    pub x1: usize,
    pub x2: usize,
    pub x3: usize,
    #[serde(rename = "X1")]
    pub big_x1: usize,
    #[serde(rename = "X2")]
    pub big_x2: usize,
}

impl MetricsReport {
    pub fn counts(&self) -> Counts {
        Counts {
            x1: self.x1,
            x2: self.x2,
            x3: self.x3,
            n_similar: self.big_x1,
            n_dissimilar: self.big_x2,
        }
    }
}

pub fn compute_metrics<T: Real>(
    similar: &[T],
    dissimilar: &[T],
    lambda: T,
    country: Country,
) -> Result<MetricsReport, EvaluationError> {
    if similar.is_empty() || dissimilar.is_empty() {
        return Err(EvaluationError::EmptyList);
    }
    let c = count_decisions(similar, dissimilar, &lambda);
    Ok(MetricsReport {
        country,
        lambda: lambda.as_f64(),
        tar: c.tar(),
        frr: c.frr(),
        far: c.far(),
        x1: c.x1,
        x2: c.x2,
        x3: c.x3,
        big_x1: c.n_similar,
        big_x2: c.n_dissimilar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint<T> {
    pub lambda: T,
    pub far: f64,
    pub tar: f64,
}

/// Thresholds of the ROC sweep: 0, the midpoints of consecutive distinct
/// pooled distances, and just above the largest distance.
pub fn roc_thresholds<T: Real>(similar: &[T], dissimilar: &[T]) -> Vec<T> {
    let mut pooled: Vec<T> = similar.iter().chain(dissimilar).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    pooled.dedup();
    let max = *pooled.last().expect("non-empty");
    let eps = T::of(1e-6) * max.abs().max(T::one());
    let mut out = vec![T::zero()];
    out.extend(pooled.windows(2).map(|w| w[0] + (w[1] - w[0]) / T::of(2.0)));
    out.push(max + eps);
    out.dedup();
    out
}

pub fn roc_curve<T: Real>(similar: &[T], dissimilar: &[T]) -> Result<Vec<RocPoint<T>>, EvaluationError> {
    if similar.is_empty() || dissimilar.is_empty() {
        return Err(EvaluationError::EmptyList);
    }
    Ok(roc_thresholds(similar, dissimilar)
        .into_iter()
        .map(|lambda| {
            let c = count_decisions(similar, dissimilar, &lambda);
            RocPoint {
                lambda,
                far: c.far(),
                tar: c.tar(),
            }
        })
        .collect())
}

/// Everything exported for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryEvaluation {
    pub report: MetricsReport,
    pub roc: Vec<RocPoint<f64>>,
    pub similar: Vec<f64>,
    pub dissimilar: Vec<f64>,
}

#[derive(Serialize)]
struct DistanceRow {
    class: &'static str,
    distance: f64,
}

/// Writes `metrics.csv`, `roc_<country>.csv` and `distances_<country>.csv` into `out_dir`.
pub fn export_report(evaluations: &[CountryEvaluation], out_dir: &Path) -> Result<Vec<PathBuf>, EvaluationError> {
    std::fs::create_dir_all(out_dir).map_err(|source| EvaluationError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let metrics = out_dir.join("metrics.csv");
    write_csv(&metrics, |w| {
        if evaluations.is_empty() {
            w.write_record(["country", "lambda", "tar", "frr", "far", "x1", "x2", "x3", "X1", "X2"])?;
        }
        for e in evaluations {
            w.serialize(&e.report)?;
        }
        Ok(())
    })?;
    written.push(metrics);
    for e in evaluations {
        let code = e.report.country.code();
        let roc = out_dir.join(format!("roc_{code}.csv"));
        write_csv(&roc, |w| {
            if e.roc.is_empty() {
                w.write_record(["lambda", "far", "tar"])?;
            }
            for p in &e.roc {
                w.serialize(p)?;
            }
            Ok(())
        })?;
        written.push(roc);
        let dist = out_dir.join(format!("distances_{code}.csv"));
        write_csv(&dist, |w| {
            if e.similar.is_empty() && e.dissimilar.is_empty() {
                w.write_record(["class", "distance"])?;
            }
            let rows = e
                .similar
                .iter()
                .map(|&d| ("similar", d))
                .chain(e.dissimilar.iter().map(|&d| ("dissimilar", d)));
            for (class, distance) in rows {
                w.serialize(DistanceRow { class, distance })?;
            }
            Ok(())
        })?;
        written.push(dist);
    }
    Ok(written)
}

fn write_csv(
    path: &Path,
    body: impl FnOnce(&mut csv::Writer<std::fs::File>) -> Result<(), csv::Error>,
) -> Result<(), EvaluationError> {
    let io = |e: csv::Error| EvaluationError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(io)?;
    body(&mut w).map_err(io)?;
    w.flush().map_err(|source| EvaluationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads back a `metrics.csv`.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsReport>, EvaluationError> {
    let io = |e: csv::Error| EvaluationError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().collect::<Result<_, _>>().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strict_classification() {
        assert_eq!(classify_pair(0.0, 1.0), PairLabel::Similar);
        assert_eq!(classify_pair(1.0, 1.0), PairLabel::Dissimilar);
        assert_eq!(classify_pair(2.5, 1.0), PairLabel::Dissimilar);
    }

    #[test]
    fn worked_metrics() {
        let r = compute_metrics(&[0.1, 0.3, 0.8, 1.2], &[0.9, 1.5, 2.1, 2.4], 1.0, Country::Fin).unwrap();
        assert_eq!((r.tar, r.frr, r.far), (0.75, 0.25, 0.25));
        assert_eq!((r.x1, r.x2, r.x3, r.big_x1, r.big_x2), (3, 1, 1, 4, 4));
        let r = compute_metrics(&[0.1, 0.3], &[0.9], 10.0, Country::Fin).unwrap();
        assert_eq!((r.tar, r.frr, r.far), (1.0, 0.0, 1.0));
        assert!(matches!(
            compute_metrics::<f64>(&[], &[1.0], 1.0, Country::Fin),
            Err(EvaluationError::EmptyList)
        ));
    }

    #[test]
    fn single_sample_staircase() {
        let roc = roc_curve(&[0.1], &[1.0]).unwrap();
        let pts: Vec<(f64, f64)> = roc.iter().map(|p| (p.far, p.tar)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn export_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let (sim, dis) = (vec![0.25, 0.5], vec![1.5]);
        let report = compute_metrics(&sim, &dis, 1.0, Country::Grc).unwrap();
        let eval = CountryEvaluation {
            report: report.clone(),
            roc: roc_curve(&sim, &dis).unwrap(),
            similar: sim,
            dissimilar: dis,
        };
        let files = export_report(&[eval], dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(read_metrics(&files[0]).unwrap(), vec![report]);
        let metrics = std::fs::read_to_string(&files[0]).unwrap();
        assert!(metrics.starts_with("country,lambda,tar,frr,far,x1,x2,x3,X1,X2\ngrc,1.0,"));
        let roc = std::fs::read_to_string(dir.path().join("roc_grc.csv")).unwrap();
        assert_eq!(roc.lines().next(), Some("lambda,far,tar"));
        assert_eq!(roc.lines().count(), 1 + 4);
        let dist = std::fs::read_to_string(dir.path().join("distances_grc.csv")).unwrap();
        assert_eq!(dist, "class,distance\nsimilar,0.25\nsimilar,0.5\ndissimilar,1.5\n");
    }

    #[test]
    fn empty_export_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        export_report(&[], dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text, "country,lambda,tar,frr,far,x1,x2,x3,X1,X2\n");
    }

    fn list() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u32..40).prop_map(|v| v as f64 / 8.0), 1..25)
    }

    proptest! {
        #[test]
        fn complementary_and_exact(sim in list(), dis in list(), lambda in 0u32..45) {
            let lambda = lambda as f64 / 8.0;
            let r = compute_metrics(&sim, &dis, lambda, Country::Iva).unwrap();
            prop_assert!((r.tar + r.frr - 1.0).abs() <= 1e-12);
            let c = r.counts();
            prop_assert_eq!(c.tar_exact() + c.frr_exact(), Ratio::from_integer(1));
            prop_assert_eq!(c.far_exact(), Ratio::new(r.x3 as u64, dis.len() as u64));
        }

        #[test]
        fn roc_reproduces_metrics(sim in list(), dis in list()) {
            let roc = roc_curve(&sim, &dis).unwrap();
            prop_assert_eq!((roc[0].far, roc[0].tar), (0.0, 0.0));
            let last = roc.last().unwrap();
            prop_assert_eq!((last.far, last.tar), (1.0, 1.0));
            for w in roc.windows(2) {
                prop_assert!(w[0].lambda < w[1].lambda);
                prop_assert!(w[0].tar <= w[1].tar && w[0].far <= w[1].far);
            }
            for p in &roc {
                let r = compute_metrics(&sim, &dis, p.lambda, Country::Iva).unwrap();
                prop_assert_eq!((r.far, r.tar), (p.far, p.tar));
            }
        }

        #[test]
        fn separated_lists_reach_the_corner(sim in list(), dis in list()) {
            let top = sim.iter().fold(0.0f64, |a, &b| a.max(b));
            let dis: Vec<f64> = dis.iter().map(|d| d + top + 0.5).collect();
            let roc = roc_curve(&sim, &dis).unwrap();
            prop_assert!(roc.iter().any(|p| p.far == 0.0 && p.tar == 1.0));
        }
    }
}
