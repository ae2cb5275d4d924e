use gfv_core::calibration::{compute_distances, determine_threshold, distance_stats, ThresholdEntry};
use gfv_core::dataset::synthetic::SyntheticCorpus;
use gfv_core::dataset::{self, CachedPreprocessor, ForgeOptions, PairOptions, Preprocessor, Split};
use gfv_core::evaluation::{compute_metrics, export_report, read_metrics, roc_curve, CountryEvaluation};
use gfv_core::network::{self, load_checkpoint, save_checkpoint};
use gfv_core::{ArchitectureConfig, Country, DocClass, ThresholdTable, TrainConfig};

#[test]
fn synthetic_corpus_through_training_calibration_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    let out = dir.path().join("out");
    let corpus = SyntheticCorpus {
        countries: vec![Country::Est, Country::Rus],
        docs_per_country: 6,
        size: 96,
        seed: 1,
    };
    assert_eq!(corpus.write(&root).unwrap().len(), 12);

    let (manifest, report) = dataset::ingest(&root).unwrap();
    assert!(report.skipped_dirs.is_empty());
    let annotations = dataset::load_annotations(&manifest).unwrap();
    let options = ForgeOptions {
        block_size: 32,
        zones_per_doc: 1,
        seed: 1,
        out_dir: out.clone(),
    };
    let (forged, _) = dataset::generate_forged_set(&manifest, &options, &annotations).unwrap();
    assert_eq!(forged.count_class(DocClass::Forged), 12);
    let split = dataset::split(&forged, 2.0 / 3.0, 1).unwrap();

    let arch = ArchitectureConfig::with_resolution(16);
    let pre = CachedPreprocessor::new(16, 16);
    let mut pairs = Vec::new();
    for country in split.countries() {
        pairs.extend(dataset::sample_pairs(&split, country, 4, 4, Split::Train, 2, PairOptions::default()).unwrap());
    }
    let config = TrainConfig {
        epochs: 2,
        seed: 1,
        ..TrainConfig::default()
    };
    let (params, trace) = network::train::<f64>(&arch, &config, &pairs, &pre).unwrap();
    assert_eq!(trace.epoch_means().len(), 2);

    let ckpt = out.join("model.gfv");
    save_checkpoint(&params, &ckpt).unwrap();
    let restored = load_checkpoint::<f64>(&ckpt, &arch).unwrap();
    let x = pre.tensor(&pairs[0].a).unwrap();
    assert_eq!(params.embed(&x).unwrap(), restored.embed(&x).unwrap());

    let mut table = ThresholdTable::new();
    let mut evaluations = Vec::new();
    for country in split.countries() {
        let cal = dataset::sample_pairs(&split, country, 4, 4, Split::Train, 3, PairOptions::default()).unwrap();
        let (sim, dis) = compute_distances(&restored, &cal, &pre).unwrap();
        let record = determine_threshold(&distance_stats(&sim, &dis, country).unwrap()).unwrap();
        assert!(record.range_lo <= record.lambda && record.lambda <= record.range_hi);
        table.insert(ThresholdEntry::from(&record));

        let test = dataset::sample_pairs(&split, country, 2, 2, Split::Test, 4, PairOptions::default()).unwrap();
        let (sim, dis) = compute_distances(&restored, &test, &pre).unwrap();
        let report = compute_metrics(&sim, &dis, record.lambda, country).unwrap();
        assert_eq!(report.x1 + report.x2, sim.len());
        evaluations.push(CountryEvaluation {
            report,
            roc: roc_curve(&sim, &dis).unwrap(),
            similar: sim,
            dissimilar: dis,
        });
    }
    assert_eq!(ThresholdTable::from_json(&table.to_json()).unwrap(), table);

    let written = export_report(&evaluations, &out.join("eval")).unwrap();
    assert_eq!(written.len(), 1 + 2 * evaluations.len());
    let reports: Vec<_> = evaluations.iter().map(|e| e.report.clone()).collect();
    assert_eq!(read_metrics(&out.join("eval/metrics.csv")).unwrap(), reports);
}
