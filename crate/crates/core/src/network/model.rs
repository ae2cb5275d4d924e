use super::config::LayerOrder;
use super::layers::{self, BnBatch, ConvDims};
use super::{FeatureVector, Mode, NetworkError, SiameseParams};
use crate::dataset::InputTensor;
use crate::Real;

/// Intermediate values kept from a training-mode pass for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache<T> {
    pub n: usize,
    conv_inputs: Vec<Vec<T>>,
    conv_act: Vec<Vec<T>>,
    conv_bn: Vec<BnBatch<T>>,
    /// Input of every FC layer; the input of layer `i + 1` is the activated output of layer `i`.
    fc_inputs: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    /// Sign pattern of every ReLU pre-activation, used to detect kinks.
    pub fn relu_pattern(&self, relu_in_conv: bool) -> Vec<bool> {
        let mut out = Vec::new();
        if relu_in_conv {
            for a in &self.conv_act {
                out.extend(a.iter().map(|&v| v > T::zero()));
            }
        }
        for x in self.fc_inputs.iter().skip(1) {
            out.extend(x.iter().map(|&v| v > T::zero()));
        }
        out
    }
}

/// Gradients of the learnable tensors, in [`SiameseParams::learnable_mut`] order.
pub type Gradients<T> = Vec<Vec<T>>;

impl<T: Real> SiameseParams<T> {
    fn check_input(&self, x: &InputTensor) -> Result<(), NetworkError> {
        let expected = (1, self.arch.input_h, self.arch.input_w);
        if x.shape() != expected {
            return Err(NetworkError::ShapeMismatch {
                expected: vec![expected.0, expected.1, expected.2],
                got: vec![x.channels, x.height, x.width],
            });
        }
        Ok(())
    }

    fn stack(&self, xs: &[&InputTensor]) -> Result<Vec<T>, NetworkError> {
        let mut data = Vec::with_capacity(xs.len() * self.arch.input_h * self.arch.input_w);
        for x in xs {
            self.check_input(x)?;
            data.extend(x.values.iter().map(|&v| T::of(v)));
        }
        Ok(data)
    }

    fn conv_dims(&self, n: usize, i: usize) -> ConvDims {
        ConvDims {
            n,
            cin: self.convs[i].cin,
            cout: self.convs[i].cout,
            h: self.arch.input_h,
            w: self.arch.input_w,
            k: self.arch.kernel,
            pad: self.arch.padding,
        }
    }

    /// Runs the branch on a batch. Training mode normalises with the batch
    /// statistics and returns a cache; running statistics are not touched here.
    pub(crate) fn forward(&self, input: Vec<T>, n: usize, train: bool) -> (Vec<T>, Option<ForwardCache<T>>) {
        let plane = self.arch.input_h * self.arch.input_w;
        let eps = T::of(self.arch.bn_eps);
        let act = self.arch.nonlinearity;
        let mut cache = ForwardCache {
            n,
            conv_inputs: Vec::new(),
            conv_act: Vec::new(),
            conv_bn: Vec::new(),
            fc_inputs: Vec::new(),
        };
        let mut x = input;
        for (i, c) in self.convs.iter().enumerate() {
            let z = layers::conv_forward(self.conv_dims(n, i), &x, &c.weight, &c.bias);
            let bn = |v: &[T], cache: &mut ForwardCache<T>| {
                if train {
                    let (y, batch) = layers::bn_forward_train(v, n, c.cout, plane, &c.gamma, &c.beta, eps);
                    cache.conv_bn.push(batch);
                    y
                } else {
                    layers::bn_forward_eval(v, c.cout, plane, &c.gamma, &c.beta, &c.running_mean, &c.running_var, eps)
                }
            };
            let out = match self.arch.order {
                LayerOrder::ConvActBn => {
                    let mut a = z;
                    layers::activate(&mut a, act);
                    let y = bn(&a, &mut cache);
                    if train {
                        cache.conv_act.push(a);
                    }
                    y
                }
                LayerOrder::ConvBnAct => {
                    let mut a = bn(&z, &mut cache);
                    layers::activate(&mut a, act);
                    if train {
                        cache.conv_act.push(a.clone());
                    }
                    a
                }
            };
            if train {
                cache.conv_inputs.push(std::mem::replace(&mut x, out));
            } else {
                x = out;
            }
        }
        let last = self.fcs.len() - 1;
        for (i, d) in self.fcs.iter().enumerate() {
            let mut y = layers::dense_forward(&x, n, d.fin, &d.weight, &d.bias);
            if i < last {
                layers::activate(&mut y, super::config::Nonlinearity::Relu);
            }
            if train {
                cache.fc_inputs.push(std::mem::replace(&mut x, y));
            } else {
                x = y;
            }
        }
        (x, train.then_some(cache))
    }

    /// Backpropagates `d_out` (`n × embedding_len`) through a cached training pass.
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, d_out: &[T]) -> Gradients<T> {
        let n = cache.n;
        let plane = self.arch.input_h * self.arch.input_w;
        let act = self.arch.nonlinearity;
        let mut fc_grads = Vec::with_capacity(self.fcs.len());
        let mut g = d_out.to_vec();
        for (i, d) in self.fcs.iter().enumerate().rev() {
            if i + 1 < self.fcs.len() {
                layers::activate_backward(&mut g, &cache.fc_inputs[i + 1], super::config::Nonlinearity::Relu);
            }
            let (dw, db, dx) = layers::dense_backward(&cache.fc_inputs[i], n, d.fin, &d.weight, &g, true);
            fc_grads.push([dw, db]);
            g = dx.expect("requested");
        }
        let mut conv_grads = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate().rev() {
            let bn = &cache.conv_bn[i];
            let a = &cache.conv_act[i];
            let (dz, dgamma, dbeta) = match self.arch.order {
                LayerOrder::ConvActBn => {
                    let (mut da, dgamma, dbeta) = layers::bn_backward(&g, bn, n, c.cout, plane, &c.gamma);
                    layers::activate_backward(&mut da, a, act);
                    (da, dgamma, dbeta)
                }
                LayerOrder::ConvBnAct => {
                    layers::activate_backward(&mut g, a, act);
                    layers::bn_backward(&g, bn, n, c.cout, plane, &c.gamma)
                }
            };
            let (dw, db, dx) = layers::conv_backward(self.conv_dims(n, i), &cache.conv_inputs[i], &c.weight, &dz, i > 0);
            conv_grads.push([dw, db, dgamma, dbeta]);
            if let Some(dx) = dx {
                g = dx;
            }
        }
        conv_grads
            .into_iter()
            .rev()
            .flatten()
            .chain(fc_grads.into_iter().rev().flatten())
            .collect()
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    /// The running variance uses the unbiased batch variance.
    pub(crate) fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let momentum = T::of(self.arch.bn_momentum);
        let keep = T::one() - momentum;
        for (c, bn) in self.convs.iter_mut().zip(&cache.conv_bn) {
            let m = bn.count as f64;
            let correction = T::of(if bn.count > 1 { m / (m - 1.0) } else { 1.0 });
            for ch in 0..c.cout {
                c.running_mean[ch] = keep * c.running_mean[ch] + momentum * bn.mean[ch];
                c.running_var[ch] = keep * c.running_var[ch] + momentum * bn.var[ch] * correction;
            }
        }
    }

    pub(crate) fn forward_train_raw(&self, xs: &[&InputTensor]) -> Result<(Vec<T>, ForwardCache<T>), NetworkError> {
        let input = self.stack(xs)?;
        let (out, cache) = self.forward(input, xs.len(), true);
        Ok((out, cache.expect("training pass keeps a cache")))
    }

    fn split(&self, out: Vec<T>) -> Result<Vec<FeatureVector<T>>, NetworkError> {
        out.chunks(self.arch.embedding_len())
            .map(|c| FeatureVector::new(c.to_vec()))
            .collect()
    }

    /// Inference on a batch; every image is processed independently.
    pub fn embed_batch(&self, xs: &[&InputTensor]) -> Result<Vec<FeatureVector<T>>, NetworkError> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let input = self.stack(xs)?;
        let (out, _) = self.forward(input, xs.len(), false);
        self.split(out)
    }

    /// Inference on one image.
    pub fn embed(&self, x: &InputTensor) -> Result<FeatureVector<T>, NetworkError> {
        Ok(self.embed_batch(&[x])?.remove(0))
    }

    /// Training-mode pass over a batch: batch statistics normalise and the
    /// running statistics are updated.
    pub fn forward_train(&mut self, xs: &[&InputTensor]) -> Result<Vec<FeatureVector<T>>, NetworkError> {
        let (out, cache) = self.forward_train_raw(xs)?;
        self.update_running_stats(&cache);
        self.split(out)
    }

    /// One branch on one image.
    pub fn forward_branch(&mut self, x: &InputTensor, mode: Mode) -> Result<FeatureVector<T>, NetworkError> {
        match mode {
            Mode::Eval => self.embed(x),
            Mode::Train => Ok(self.forward_train(&[x])?.remove(0)),
        }
    }

    /// Both branches with the shared parameters. In training mode the two
    /// images form one batch for normalisation.
    pub fn embed_pair(
        &mut self,
        a: &InputTensor,
        b: &InputTensor,
        mode: Mode,
    ) -> Result<(FeatureVector<T>, FeatureVector<T>), NetworkError> {
        let mut v = match mode {
            Mode::Eval => self.embed_batch(&[a, b])?,
            Mode::Train => self.forward_train(&[a, b])?,
        };
        let vb = v.pop().expect("two outputs");
        let va = v.pop().expect("two outputs");
        Ok((va, vb))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ArchitectureConfig, LayerOrder, Nonlinearity};
    use super::*;

    fn arch() -> ArchitectureConfig {
        ArchitectureConfig {
            fc_widths: vec![12, 12, 5],
            ..ArchitectureConfig::with_resolution(10)
        }
    }

    fn tensor(seed: usize) -> InputTensor {
        InputTensor {
            channels: 1,
            height: 10,
            width: 10,
            values: (0..100).map(|i| ((i * 31 + seed * 17) % 97) as f64 / 96.0).collect(),
        }
    }

    #[test]
    fn embedding_has_five_finite_components() {
        let p = SiameseParams::<f32>::init(&arch(), 1).unwrap();
        let v = p.embed(&tensor(0)).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.values().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn eval_batch_matches_single() {
        let p = SiameseParams::<f64>::init(&arch(), 1).unwrap();
        let (a, b) = (tensor(1), tensor(2));
        let both = p.embed_batch(&[&a, &b]).unwrap();
        assert_eq!(both[1], p.embed(&b).unwrap());
        assert_eq!(both[0], p.embed(&a).unwrap());
    }

    #[test]
    fn shared_weights_give_identical_embeddings() {
        for order in [LayerOrder::ConvActBn, LayerOrder::ConvBnAct] {
            let arch = ArchitectureConfig { order, nonlinearity: Nonlinearity::Tanh, ..arch() };
            let mut p = SiameseParams::<f32>::init(&arch, 5).unwrap();
            let x = tensor(3);
            let (va, vb) = p.embed_pair(&x, &x, Mode::Train).unwrap();
            assert_eq!(va, vb);
            let (va, vb) = p.embed_pair(&x, &x.clone(), Mode::Eval).unwrap();
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let p = SiameseParams::<f32>::init(&arch(), 1).unwrap();
        let x = InputTensor {
            channels: 1,
            height: 9,
            width: 10,
            values: vec![0.0; 90],
        };
        assert!(matches!(p.embed(&x), Err(NetworkError::ShapeMismatch { .. })));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut p = SiameseParams::<f64>::init(&arch(), 2).unwrap();
        let (a, b) = (tensor(4), tensor(5));
        let (_, cache) = p.forward_train_raw(&[&a, &b]).unwrap();
        p.update_running_stats(&cache);
        let bn = &cache.conv_bn[0];
        let m = bn.count as f64;
        for ch in 0..4 {
            assert!((p.convs[0].running_mean[ch] - 0.1 * bn.mean[ch]).abs() < 1e-15);
            let unbiased = bn.var[ch] * m / (m - 1.0);
            assert!((p.convs[0].running_var[ch] - (0.9 + 0.1 * unbiased)).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_shapes_match_plan() {
        let arch = arch();
        let p = SiameseParams::<f64>::init(&arch, 2).unwrap();
        let (_, cache) = p.forward_train_raw(&[&tensor(0)]).unwrap();
        let plan = arch.plan();
        let convs: Vec<_> = plan.iter().filter(|l| l.kind == super::super::LayerKind::Conv).collect();
        for (l, act) in convs.iter().zip(&cache.conv_act) {
            assert_eq!(l.output.iter().product::<usize>(), act.len());
        }
        let fcs: Vec<_> = plan.iter().filter(|l| l.kind == super::super::LayerKind::Fc).collect();
        for (l, x) in fcs.iter().zip(&cache.fc_inputs) {
            assert_eq!(l.input[0], x.len());
        }
    }
}
