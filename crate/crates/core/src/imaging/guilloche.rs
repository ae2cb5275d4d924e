use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GrayImage, ImagingError};

/// Parameters of a synthetic interlaced-sinusoid background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuillocheParams {
    pub curve_count: usize,
    /// Vertical swing of each curve, in pixels.
    pub amplitude: f64,
    /// Cycles per image width.
    pub frequency: f64,
    /// Width of the uniform random perturbation added to each curve phase, in radians.
    pub phase_jitter: f64,
    pub line_intensity: f64,
    pub background_intensity: f64,
    pub seed: u64,
}

impl Default for GuillocheParams {
    fn default() -> Self {
        Self {
            curve_count: 24,
            amplitude: 100.0,
            frequency: 3.3,
            phase_jitter: 0.2,
            line_intensity: 0.62,
            background_intensity: 0.82,
            seed: 0,
        }
    }
}

impl GuillocheParams {
    fn validate(&self) -> Result<(), ImagingError> {
        if self.curve_count == 0 {
            return Err(ImagingError::InvalidParams("curve_count must be at least 1".into()));
        }
        for (name, v) in [
            ("line_intensity", self.line_intensity),
            ("background_intensity", self.background_intensity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ImagingError::InvalidParams(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.amplitude.is_finite() && self.frequency.is_finite() && self.phase_jitter.is_finite()) {
            return Err(ImagingError::InvalidParams("non-finite curve parameter".into()));
        }
        Ok(())
    }

    /// Curve phases: evenly spread over a full turn, each perturbed by the seeded jitter.
    pub fn phases(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.curve_count)
            .map(|k| {
                let u: f64 = rng.random();
                TAU * k as f64 / self.curve_count as f64 + self.phase_jitter * (u - 0.5)
            })
            .collect()
    }
}

/// Renders `curve_count` interlaced curves `y(x) = h/2 + A sin(2π f x / w + φ_k)`
/// as anti-aliased one-pixel strokes. Deterministic for a fixed seed.
pub fn synth_guilloche(params: &GuillocheParams, w: usize, h: usize) -> Result<GrayImage, ImagingError> {
    if w < 16 || h < 16 {
        return Err(ImagingError::InvalidDimensions { width: w, height: h });
    }
    params.validate()?;
    let phases = params.phases();
    let omega = TAU * params.frequency / w as f64;
    let centre = (h / 2) as f64;
    let ink = params.line_intensity - params.background_intensity;

    let mut pixels = vec![params.background_intensity; w * h];
    let mut coverage = vec![0.0f64; h];
    for x in 0..w {
        coverage.fill(0.0);
        for &phase in &phases {
            let arg = omega * x as f64 + phase;
            let yc = centre + params.amplitude * arg.sin();
            // Perpendicular distance to the curve, first-order in the slope.
            let slope = params.amplitude * omega * arg.cos();
            let norm = (1.0 + slope * slope).sqrt();
            let reach = norm.ceil() as isize + 1;
            let yc_row = yc.round() as isize;
            for y in (yc_row - reach).max(0)..=(yc_row + reach).min(h as isize - 1) {
                let dist = (y as f64 - yc).abs() / norm;
                let c = (1.0 - dist).max(0.0);
                let cell = &mut coverage[y as usize];
                if c > *cell {
                    *cell = c;
                }
            }
        }
        for (y, c) in coverage.iter().enumerate() {
            if *c > 0.0 {
                pixels[y * w + x] = (params.background_intensity + ink * c).clamp(0.0, 1.0);
            }
        }
    }
    GrayImage::new(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let p = GuillocheParams { seed: 3, ..Default::default() };
        assert_eq!(synth_guilloche(&p, 96, 80).unwrap(), synth_guilloche(&p, 96, 80).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_guilloche(&GuillocheParams { seed: 7, ..Default::default() }, 64, 64).unwrap();
        let b = synth_guilloche(&GuillocheParams { seed: 8, ..Default::default() }, 64, 64).unwrap();
        assert!(a.pixels().iter().zip(b.pixels()).any(|(x, y)| x != y));
    }

    #[test]
    fn flat_curve_is_one_row() {
        let p = GuillocheParams {
            curve_count: 1,
            amplitude: 0.0,
            ..Default::default()
        };
        let img = synth_guilloche(&p, 32, 20).unwrap();
        let rows: Vec<usize> = (0..20)
            .filter(|&y| (0..32).any(|x| img.get(x, y) != p.background_intensity))
            .collect();
        assert_eq!(rows, vec![10]);
        assert!((0..32).all(|x| img.get(x, 10) == p.line_intensity));
    }

    #[test]
    fn rejects_bad_input() {
        let p = GuillocheParams::default();
        assert!(matches!(synth_guilloche(&p, 15, 64), Err(ImagingError::InvalidDimensions { .. })));
        let p = GuillocheParams { curve_count: 0, ..Default::default() };
        assert!(matches!(synth_guilloche(&p, 32, 32), Err(ImagingError::InvalidParams(_))));
        let p = GuillocheParams { line_intensity: 1.2, ..Default::default() };
        assert!(matches!(synth_guilloche(&p, 32, 32), Err(ImagingError::InvalidParams(_))));
    }
}
