use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::contrastive_with_grad;
use super::{ArchitectureConfig, NetworkError, SiameseParams, TrainConfig};
use crate::dataset::{stream_seed, InputTensor, PairSample, Preprocessor};
use crate::Real;

/// Mean batch loss after one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

/// Per-batch loss history of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub entries: Vec<TraceEntry>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for e in &self.entries {
            if sums.len() <= e.epoch {
                sums.resize(e.epoch + 1, (0.0, 0));
            }
            sums[e.epoch].0 += e.loss;
            sums[e.epoch].1 += 1;
        }
        sums.into_iter()
            .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }

    /// Writes `epoch,batch,loss` rows.
    pub fn write_csv(&self, path: &Path) -> Result<(), NetworkError> {
        let io = |e: csv::Error| NetworkError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        for e in &self.entries {
            w.serialize(e).map_err(io)?;
        }
        w.flush().map_err(|source| NetworkError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Adam with optional L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Vec<T>>, grads: &[Vec<T>]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = T::of(1.0 - self.beta1.powi(self.t));
        let c2 = T::of(1.0 - self.beta2.powi(self.t));
        let (lr, eps, wd) = (T::of(self.lr), T::of(self.eps), T::of(self.weight_decay));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            p.par_iter_mut()
                .zip(g.par_iter())
                .zip(m.par_iter_mut())
                .zip(v.par_iter_mut())
                .for_each(|(((p, &g), m), v)| {
                    let g = g + wd * *p;
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub loss: f64,
}

/// One forward/backward/update on a batch of pairs. Both branches of every
/// pair share one normalisation batch of `2 × len` images.
pub fn train_step<T: Real>(
    params: &mut SiameseParams<T>,
    optimizer: &mut Adam<T>,
    batch: &[(&InputTensor, &InputTensor, u8)],
    margin: f64,
) -> Result<StepOutcome, NetworkError> {
    let b = batch.len();
    let images: Vec<&InputTensor> = batch.iter().map(|p| p.0).chain(batch.iter().map(|p| p.1)).collect();
    let (out, cache) = params.forward_train_raw(&images)?;
    let len = params.arch.embedding_len();
    let margin = T::of(margin);
    let scale = T::one() / T::of(b as f64);
    let mut d_out = vec![T::zero(); out.len()];
    let mut total = T::zero();
    for (j, &(_, _, c)) in batch.iter().enumerate() {
        let va = &out[j * len..][..len];
        let vb = &out[(b + j) * len..][..len];
        let (loss, _, grad) = contrastive_with_grad(va, vb, c, margin);
        total += loss;
        for (k, g) in grad.into_iter().enumerate() {
            d_out[j * len + k] = g * scale;
            d_out[(b + j) * len + k] = -g * scale;
        }
    }
    let loss = (total * scale).as_f64();
    if !loss.is_finite() {
        return Err(NetworkError::NonFinite);
    }
    let grads = params.backward(&cache, &d_out);
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(NetworkError::NonFinite);
    }
    optimizer.step(params.learnable_mut(), &grads);
    params.update_running_stats(&cache);
    Ok(StepOutcome { loss })
}

/// Trains a fresh parameter set on labelled pairs.
///
/// Pairs are put in a canonical order first, so the result depends only on
/// the set of pairs, the configuration and the seed.
pub fn train<T: Real>(
    arch: &ArchitectureConfig,
    config: &TrainConfig,
    pairs: &[PairSample],
    pre: &dyn Preprocessor,
) -> Result<(SiameseParams<T>, LossTrace), NetworkError> {
    train_with_progress(arch, config, pairs, pre, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean epoch loss)`.
pub fn train_with_progress<T: Real>(
    arch: &ArchitectureConfig,
    config: &TrainConfig,
    pairs: &[PairSample],
    pre: &dyn Preprocessor,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(SiameseParams<T>, LossTrace), NetworkError> {
    arch.validate()?;
    config.validate()?;
    if pairs.is_empty() {
        return Err(NetworkError::EmptyTrainingSet);
    }
    if pre.input_shape() != (arch.input_h, arch.input_w) {
        let (h, w) = pre.input_shape();
        return Err(NetworkError::ShapeMismatch {
            expected: vec![1, arch.input_h, arch.input_w],
            got: vec![1, h, w],
        });
    }
    let mut ordered: Vec<&PairSample> = pairs.iter().collect();
    ordered.sort_by(|x, y| (&x.a.id, &x.b.id, x.label).cmp(&(&y.a.id, &y.b.id, y.label)));
    let data: Vec<(Arc<InputTensor>, Arc<InputTensor>, u8)> = ordered
        .iter()
        .map(|p| Ok((pre.tensor(&p.a)?, pre.tensor(&p.b)?, p.label.c())))
        .collect::<Result<_, crate::dataset::DatasetError>>()?;

    let mut params = SiameseParams::<T>::init(arch, config.seed)?;
    let mut optimizer = Adam::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "train/shuffle"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = LossTrace::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        let mut batches = 0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&InputTensor, &InputTensor, u8)> =
                chunk.iter().map(|&i| (&*data[i].0, &*data[i].1, data[i].2)).collect();
            match train_step(&mut params, &mut optimizer, &batch, config.margin) {
                Ok(step) => {
                    trace.entries.push(TraceEntry {
                        epoch,
                        batch: batch_idx,
                        loss: step.loss,
                    });
                    epoch_total += step.loss;
                    batches += 1;
                }
                Err(NetworkError::NonFinite) => {
                    return Err(NetworkError::DivergenceDetected {
                        epoch,
                        batch: batch_idx,
                        trace: Box::new(trace),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        let mean = epoch_total / batches as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        on_epoch(epoch, mean);
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Country, DatasetError, DocClass, DocumentRecord, Source};
    use std::collections::HashMap;

    struct Fixed(HashMap<String, Arc<InputTensor>>, usize);

    impl Preprocessor for Fixed {
        fn input_shape(&self) -> (usize, usize) {
            (self.1, self.1)
        }

        fn tensor(&self, record: &DocumentRecord) -> Result<Arc<InputTensor>, DatasetError> {
            self.0
                .get(&record.id)
                .cloned()
                .ok_or_else(|| DatasetError::InvalidArgument(record.id.clone()))
        }
    }

    fn record(id: &str, class: DocClass) -> DocumentRecord {
        DocumentRecord {
            id: id.into(),
            country: Country::Fin,
            doc_class: class,
            source: Source::Template,
            image_path: "unused".into(),
            tamper_log: None,
        }
    }

    fn image(side: usize, phase: f64) -> Arc<InputTensor> {
        Arc::new(InputTensor {
            channels: 1,
            height: side,
            width: side,
            values: (0..side * side)
                .map(|i| 0.5 + 0.4 * ((i as f64) * 0.37 + phase).sin())
                .collect(),
        })
    }

    fn arch(side: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            fc_widths: vec![16, 16, 5],
            ..ArchitectureConfig::with_resolution(side)
        }
    }

    fn fixture() -> (Vec<PairSample>, Fixed) {
        let mut map = HashMap::new();
        let mut genuine = Vec::new();
        let mut forged = Vec::new();
        for i in 0..3 {
            let g = record(&format!("g{i}"), DocClass::Genuine);
            let f = record(&format!("f{i}"), DocClass::Forged);
            map.insert(g.id.clone(), image(8, i as f64 * 0.01));
            map.insert(f.id.clone(), image(8, 2.0 + i as f64 * 0.01));
            genuine.push(g);
            forged.push(f);
        }
        let mut pairs = Vec::new();
        for i in 0..3 {
            let j = (i + 1) % 3;
            pairs.push(PairSample::new(genuine[i].clone(), genuine[j].clone()).unwrap());
            pairs.push(PairSample::new(forged[i].clone(), forged[j].clone()).unwrap());
            pairs.push(PairSample::new(genuine[i].clone(), forged[j].clone()).unwrap());
        }
        (pairs, Fixed(map, 8))
    }

    #[test]
    fn identical_pair_has_zero_loss() {
        let (pairs, pre) = fixture();
        let same = PairSample::new(pairs[0].a.clone(), pairs[0].a.clone()).unwrap();
        let config = TrainConfig { epochs: 3, ..Default::default() };
        let (_, trace) = train::<f32>(&arch(8), &config, &[same], &pre).unwrap();
        assert_eq!(trace.len(), 3);
        assert!(trace.entries.iter().all(|e| e.loss == 0.0));
    }

    #[test]
    fn loss_decreases_and_runs_are_reproducible() {
        let (pairs, pre) = fixture();
        let config = TrainConfig {
            epochs: 40,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let (p1, t1) = train::<f64>(&arch(8), &config, &pairs, &pre).unwrap();
        let means = t1.epoch_means();
        assert_eq!(means.len(), 40);
        assert_eq!(t1.len(), 40 * 3);
        assert!(means[39] < means[0], "{means:?}");
        let mut reversed = pairs.clone();
        reversed.reverse();
        let (p2, t2) = train::<f64>(&arch(8), &config, &reversed, &pre).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn empty_set_rejected() {
        let (_, pre) = fixture();
        let r = train::<f32>(&arch(8), &TrainConfig::default(), &[], &pre);
        assert!(matches!(r, Err(NetworkError::EmptyTrainingSet)));
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let (pairs, pre) = fixture();
        let config = TrainConfig {
            epochs: 200,
            learning_rate: 1e30,
            margin: 1e30,
            ..Default::default()
        };
        match train::<f32>(&arch(8), &config, &pairs, &pre) {
            Err(NetworkError::DivergenceDetected { trace, .. }) => {
                assert!(trace.entries.iter().all(|e| e.loss.is_finite()));
            }
            other => panic!("expected divergence, got {:?}", other.map(|(_, t)| t.len())),
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let config = TrainConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut adam = Adam::<f64>::new(&config);
        let mut w = vec![1.0, -1.0, 0.5];
        adam.step(vec![&mut w], &[vec![3.0, -0.2, 0.0]]);
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] + 0.99).abs() < 1e-9);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn trace_csv() {
        let trace = LossTrace {
            entries: vec![
                TraceEntry { epoch: 0, batch: 0, loss: 1.5 },
                TraceEntry { epoch: 0, batch: 1, loss: 0.5 },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,batch,loss\n0,0,1.5\n0,1,0.5\n");
        assert_eq!(trace.epoch_means(), vec![1.0]);
    }
}
