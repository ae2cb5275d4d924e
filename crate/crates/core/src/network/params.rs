use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchitectureConfig, NetworkError};
use crate::dataset::stream_seed;
use crate::Real;

/// Convolution followed by its batchnorm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub cin: usize,
    pub cout: usize,
    /// `[cout][cin][k][k]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Fully connected layer, weights stored `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub fin: usize,
    pub fout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// The single parameter set both branches of the twin network use.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseParams<T> {
    pub(crate) arch: ArchitectureConfig,
    pub(crate) seed: u64,
    pub convs: Vec<ConvBlock<T>>,
    pub fcs: Vec<Dense<T>>,
}

/// One tensor of the parameter set, addressed by a stable name such as `conv1.weight`.
#[derive(Debug)]
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
    /// False for batchnorm running statistics.
    pub learnable: bool,
}

fn named<T>(name: String, shape: Vec<usize>, data: &[T], learnable: bool) -> NamedTensor<'_, T> {
    NamedTensor {
        name,
        shape,
        data,
        learnable,
    }
}

#[derive(Debug)]
pub struct NamedTensorMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut Vec<T>,
    pub learnable: bool,
}

impl<T: Real> SiameseParams<T> {
    /// All-zero parameters with unit running variance and unit batchnorm scale.
    pub fn zeros(arch: &ArchitectureConfig) -> Result<Self, NetworkError> {
        arch.validate()?;
        let k2 = arch.kernel * arch.kernel;
        let mut convs = Vec::new();
        let mut cin = 1;
        for &cout in &arch.conv_channels {
            convs.push(ConvBlock {
                cin,
                cout,
                weight: vec![T::zero(); cout * cin * k2],
                bias: vec![T::zero(); cout],
                gamma: vec![T::one(); cout],
                beta: vec![T::zero(); cout],
                running_mean: vec![T::zero(); cout],
                running_var: vec![T::one(); cout],
            });
            cin = cout;
        }
        let mut fcs = Vec::new();
        let mut fin = arch.flatten_width();
        for &fout in &arch.fc_widths {
            fcs.push(Dense {
                fin,
                fout,
                weight: vec![T::zero(); fout * fin],
                bias: vec![T::zero(); fout],
            });
            fin = fout;
        }
        Ok(Self {
            arch: arch.clone(),
            seed: 0,
            convs,
            fcs,
        })
    }

    /// Seeded fan-in scaled uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    ///
    /// Values are drawn as `f64` and rounded, so `f32` and `f64` sets from one
    /// seed agree up to rounding.
    pub fn init(arch: &ArchitectureConfig, seed: u64) -> Result<Self, NetworkError> {
        let mut p = Self::zeros(arch)?;
        p.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "init"));
        let k2 = arch.kernel * arch.kernel;
        let mut fill = |v: &mut [T], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in v {
                *x = T::of((rng.random::<f64>() * 2.0 - 1.0) * bound);
            }
        };
        for c in &mut p.convs {
            fill(&mut c.weight, c.cin * k2);
            fill(&mut c.bias, c.cin * k2);
        }
        for d in &mut p.fcs {
            fill(&mut d.weight, d.fin);
            fill(&mut d.bias, d.fin);
        }
        Ok(p)
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> u64 {
        self.arch.fingerprint()
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let k = self.arch.kernel;
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            let i = i + 1;
            out.push(named(format!("conv{i}.weight"), vec![c.cout, c.cin, k, k], &c.weight, true));
            out.push(named(format!("conv{i}.bias"), vec![c.cout], &c.bias, true));
            out.push(named(format!("bn{i}.weight"), vec![c.cout], &c.gamma, true));
            out.push(named(format!("bn{i}.bias"), vec![c.cout], &c.beta, true));
            out.push(named(format!("bn{i}.running_mean"), vec![c.cout], &c.running_mean, false));
            out.push(named(format!("bn{i}.running_var"), vec![c.cout], &c.running_var, false));
        }
        for (i, d) in self.fcs.iter().enumerate() {
            let i = i + 1;
            out.push(NamedTensor {
                name: format!("fc{i}.weight"),
                shape: vec![d.fout, d.fin],
                data: &d.weight,
                learnable: true,
            });
            out.push(NamedTensor {
                name: format!("fc{i}.bias"),
                shape: vec![d.fout],
                data: &d.bias,
                learnable: true,
            });
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, T>> {
        let k = self.arch.kernel;
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            let i = i + 1;
            let (cout, cin) = (c.cout, c.cin);
            let t = |name: String, shape: Vec<usize>, data, learnable| NamedTensorMut {
                name,
                shape,
                data,
                learnable,
            };
            out.push(t(format!("conv{i}.weight"), vec![cout, cin, k, k], &mut c.weight, true));
            out.push(t(format!("conv{i}.bias"), vec![cout], &mut c.bias, true));
            out.push(t(format!("bn{i}.weight"), vec![cout], &mut c.gamma, true));
            out.push(t(format!("bn{i}.bias"), vec![cout], &mut c.beta, true));
            out.push(t(format!("bn{i}.running_mean"), vec![cout], &mut c.running_mean, false));
            out.push(t(format!("bn{i}.running_var"), vec![cout], &mut c.running_var, false));
        }
        for (i, d) in self.fcs.iter_mut().enumerate() {
            let i = i + 1;
            let (fout, fin) = (d.fout, d.fin);
            out.push(NamedTensorMut {
                name: format!("fc{i}.weight"),
                shape: vec![fout, fin],
                data: &mut d.weight,
                learnable: true,
            });
            out.push(NamedTensorMut {
                name: format!("fc{i}.bias"),
                shape: vec![fout],
                data: &mut d.bias,
                learnable: true,
            });
        }
        out
    }

    /// Learnable tensors, in the order gradients are reported.
    pub fn learnable_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.tensors_mut()
            .into_iter()
            .filter(|t| t.learnable)
            .map(|t| t.data)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().filter(|t| t.learnable).map(|t| t.data.len()).sum()
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Real>(&self) -> SiameseParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        SiameseParams {
            arch: self.arch.clone(),
            seed: self.seed,
            convs: self
                .convs
                .iter()
                .map(|c| ConvBlock {
                    cin: c.cin,
                    cout: c.cout,
                    weight: conv(&c.weight),
                    bias: conv(&c.bias),
                    gamma: conv(&c.gamma),
                    beta: conv(&c.beta),
                    running_mean: conv(&c.running_mean),
                    running_var: conv(&c.running_var),
                })
                .collect(),
            fcs: self
                .fcs
                .iter()
                .map(|d| Dense {
                    fin: d.fin,
                    fout: d.fout,
                    weight: conv(&d.weight),
                    bias: conv(&d.bias),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchitectureConfig {
        ArchitectureConfig {
            fc_widths: vec![16, 16, 5],
            ..ArchitectureConfig::with_resolution(8)
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = SiameseParams::<f64>::init(&small(), 3).unwrap();
        let b = SiameseParams::<f64>::init(&small(), 3).unwrap();
        let c = SiameseParams::<f64>::init(&small(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 9f64.sqrt();
        assert!(a.convs[0].weight.iter().all(|w| w.abs() <= bound));
        let bound = 1.0 / 512f64.sqrt();
        assert!(a.fcs[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(a.convs[1].gamma.iter().all(|&g| g == 1.0));
        assert!(a.convs[2].running_var.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn f32_and_f64_agree() {
        let a = SiameseParams::<f64>::init(&small(), 9).unwrap();
        let b = SiameseParams::<f32>::init(&small(), 9).unwrap();
        assert_eq!(a.cast::<f32>(), b);
    }

    #[test]
    fn names_and_counts() {
        let p = SiameseParams::<f32>::zeros(&small()).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names.len(), 3 * 6 + 3 * 2);
        assert_eq!(names[0], "conv1.weight");
        assert_eq!(names[5], "bn1.running_var");
        assert_eq!(names[18], "fc1.weight");
        assert_eq!(p.parameter_count(), small().parameter_count());
        for t in p.tensors() {
            assert_eq!(t.shape.iter().product::<usize>(), t.data.len(), "{}", t.name);
        }
    }
}
