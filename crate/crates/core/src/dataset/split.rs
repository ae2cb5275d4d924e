use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{stream_seed, Country, DatasetError, DocClass, DocumentRecord, Manifest, Source, Split};

/// Stratified random train/test assignment that keeps each genuine document
/// and its forged counterpart on the same side.
///
/// Records are grouped by country, source and file stem (a forged copy's
/// `_f` suffix removed). Groups are stratified by country and by the classes
/// they contain, and per-stratum quotas are apportioned by largest remainder
/// so the global number of training groups is `round(fraction * groups)`.
/// Strata of two or more groups keep at least one group on each side.
pub fn split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<Manifest, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let records = manifest.records();
    let mut classes: BTreeMap<(Country, DocClass), usize> = BTreeMap::new();
    for rec in records {
        *classes.entry((rec.country, rec.doc_class)).or_default() += 1;
    }
    check_strata(&classes)?;

    let mut groups: BTreeMap<(Country, Source, String), Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        groups.entry(group_key(rec)).or_default().push(i);
    }
    let mut strata: BTreeMap<(Country, Vec<DocClass>), Vec<&Vec<usize>>> = BTreeMap::new();
    for ((country, _, _), members) in &groups {
        let mut kinds: Vec<DocClass> = members.iter().map(|&i| records[i].doc_class).collect();
        kinds.sort();
        kinds.dedup();
        strata.entry((*country, kinds)).or_default().push(members);
    }

    let quotas = apportion(strata.values().map(Vec::len), train_fraction);
    let mut tags = vec![Split::Test; manifest.len()];
    for (((country, kinds), members), quota) in strata.iter().zip(quotas) {
        let mut members = members.clone();
        let key: String = kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("+");
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("split/{country}/{key}")));
        members.shuffle(&mut rng);
        for group in &members[..quota] {
            for &i in group.iter() {
                tags[i] = Split::Train;
            }
        }
    }

    let mut train: BTreeMap<(Country, DocClass), usize> = BTreeMap::new();
    for (rec, tag) in records.iter().zip(&tags) {
        if *tag == Split::Train {
            *train.entry((rec.country, rec.doc_class)).or_default() += 1;
        }
    }
    for (&(country, class), &count) in &classes {
        let t = train.get(&(country, class)).copied().unwrap_or(0);
        if t == 0 || t == count {
            return Err(DatasetError::StratumTooSmall { country, class, count });
        }
    }
    manifest.clone().with_splits(tags)
}

fn check_strata(classes: &BTreeMap<(Country, DocClass), usize>) -> Result<(), DatasetError> {
    for (&(country, class), &count) in classes {
        if count < 2 {
            return Err(DatasetError::StratumTooSmall { country, class, count });
        }
    }
    Ok(())
}

fn group_key(rec: &DocumentRecord) -> (Country, Source, String) {
    let name = rec.id.rsplit('/').next().unwrap_or(&rec.id);
    let stem = name.rsplit_once('.').map_or(name, |(stem, _)| stem);
    let stem = match rec.doc_class {
        DocClass::Forged => stem.strip_suffix("_f").unwrap_or(stem),
        DocClass::Genuine => stem,
    };
    (rec.country, rec.source, stem.to_string())
}

fn apportion(sizes: impl Iterator<Item = usize>, fraction: f64) -> Vec<usize> {
    let sizes: Vec<usize> = sizes.collect();
    let total: usize = sizes.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let exact: Vec<f64> = sizes.iter().map(|&n| fraction * n as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Stable sort keeps stratum order among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
    });
    let mut missing = target.saturating_sub(quotas.iter().sum());
    for &i in &order {
        if missing == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            missing -= 1;
        }
    }
    quotas
        .iter()
        .zip(&sizes)
        .map(|(&q, &n)| if n >= 2 { q.clamp(1, n - 1) } else { q })
        .collect()
}
