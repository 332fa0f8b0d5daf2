//! Conditional ancestral sampling with skip-step striding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{ConditionVector, RoadScenario, ShapePoint};
use crate::nn::{FreeUConfig, RoadUNet};
use crate::real::Real;
use crate::rng;
use crate::schedule::{NoiseSchedule, StepCoefficients};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub stride: usize,
    /// `false` bypasses feature rebalancing entirely.
    pub use_freeu: bool,
    pub freeu: FreeUConfig,
    pub seed: u64,
    pub count: usize,
    /// Scenarios per network batch; results do not depend on it.
    pub batch: usize,
    /// Valid roads per generated scenario (defaults to all slots).
    pub roads: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            stride: 5,
            use_freeu: true,
            freeu: FreeUConfig::default(),
            seed: 0,
            count: 100,
            batch: 25,
            roads: None,
        }
    }
}

impl SamplerConfig {
    pub fn freeu(&self) -> Option<&FreeUConfig> {
        self.use_freeu.then_some(&self.freeu)
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        build_timestep_subsequence(steps, self.stride)?;
        if self.batch == 0 {
            return Err(Error::Config("sampler batch must be >= 1".into()));
        }
        if let Some(f) = self.freeu() {
            f.validate()?;
        }
        Ok(())
    }
}

/// `(T, T - stride, ...)` down to 1, strictly decreasing; 1 is appended when
/// the stride skips it.
pub fn build_timestep_subsequence(steps: usize, stride: usize) -> Result<Vec<usize>> {
    if steps == 0 || stride == 0 || stride > steps {
        return Err(Error::Config(format!("stride must lie in 1..={steps}, got {stride}")));
    }
    let mut tau: Vec<usize> = (1..=steps).rev().step_by(stride).collect();
    if *tau.last().unwrap() != 1 {
        tau.push(1);
    }
    Ok(tau)
}

/// Denormalization metadata shared by every generated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub roads: usize,
    pub points: usize,
    pub half_extent_m: f64,
    pub origin: ShapePoint,
}

/// Reverse-chain driver over a read-only network.
pub struct Sampler<'a, T> {
    net: &'a RoadUNet<T>,
    schedule: &'a NoiseSchedule,
}

enum Path<'t> {
    Full,
    Strided(&'t [usize]),
}

impl<'a, T: Real> Sampler<'a, T> {
    pub fn new(net: &'a RoadUNet<T>, schedule: &'a NoiseSchedule) -> Self {
        Self { net, schedule }
    }

    /// Generated `[2n, k]` channel data for each `(index, condition)`; each
    /// scenario draws from the stream `(seed, index)`.
    pub fn sample_strided(&self, conds: &[ConditionVector], indices: &[u64], seed: u64, stride: usize, freeu: Option<&FreeUConfig>) -> Result<Vec<Vec<f64>>> {
        let tau = build_timestep_subsequence(self.schedule.steps(), stride)?;
        self.run(conds, indices, seed, freeu, Path::Strided(&tau))
    }

    /// Every step of the chain with tabulated coefficients.
    pub fn sample_full(&self, conds: &[ConditionVector], indices: &[u64], seed: u64, freeu: Option<&FreeUConfig>) -> Result<Vec<Vec<f64>>> {
        self.run(conds, indices, seed, freeu, Path::Full)
    }

    fn run(&self, conds: &[ConditionVector], indices: &[u64], seed: u64, freeu: Option<&FreeUConfig>, path: Path<'_>) -> Result<Vec<Vec<f64>>> {
        if conds.len() != indices.len() {
            return Err(Error::Contract("one condition per scenario index".into()));
        }
        if let Some(f) = freeu {
            f.validate()?;
            if f.stages() > self.net.config().stages() {
                return Err(Error::Config(format!(
                    "{} rebalancing stages exceed {} decoder stages",
                    f.stages(),
                    self.net.config().stages()
                )));
            }
        }
        let cfg = self.net.config();
        let cond: Vec<[f64; ConditionVector::DIM]> = conds.iter().map(ConditionVector::as_array).collect();
        let dims = [conds.len(), cfg.in_channels, cfg.seq_len];
        chain(self.schedule, dims, indices, seed, path, |x, t| {
            let xt = Tensor::from_vec(dims[0], dims[1], dims[2], x.iter().map(|v| T::of(*v)).collect());
            let eps = self.net.predict_noise_raw(&xt, &vec![t; dims[0]], &cond, freeu)?;
            Ok(eps.data().iter().map(|v| v.as_f64()).collect())
        })
    }

    /// Generates scenario `indices[i]` under `conds[i]`, in network batches of
    /// `cfg.batch`, and wraps the results as normalized scenarios.
    pub fn generate(&self, conds: &[ConditionVector], indices: &[u64], cfg: &SamplerConfig, template: &ScenarioTemplate) -> Result<Vec<RoadScenario>> {
        cfg.validate(self.schedule.steps())?;
        let mut out = Vec::with_capacity(conds.len());
        for (cs, is) in conds.chunks(cfg.batch).zip(indices.chunks(cfg.batch)) {
            let data = self.sample_strided(cs, is, cfg.seed, cfg.stride, cfg.freeu())?;
            for (c, d) in cs.iter().zip(data) {
                out.push(wrap(&d, *c, cfg.roads, template)?);
            }
        }
        Ok(out)
    }
}

/// Reverse chain over `dims = [batch, channels, len]` with an arbitrary
/// noise predictor `denoise(x_t, t)`.
fn chain(
    schedule: &NoiseSchedule,
    dims: [usize; 3],
    indices: &[u64],
    seed: u64,
    path: Path<'_>,
    mut denoise: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    let per = dims[1] * dims[2];
    let mut rngs: Vec<_> = indices.iter().map(|&i| rng::stream(seed, rng::DOMAIN_SAMPLE, i)).collect();
    let mut x = vec![0.0f64; dims[0] * per];
    for (r, chunk) in rngs.iter_mut().zip(x.chunks_mut(per)) {
        rng::fill_normal(r, chunk);
    }
    let big_t = schedule.steps();
    let steps: Vec<(usize, usize)> = match path {
        Path::Full => (1..=big_t).rev().map(|t| (t, t - 1)).collect(),
        Path::Strided(tau) => tau.iter().enumerate().map(|(i, &t)| (t, tau.get(i + 1).copied().unwrap_or(0))).collect(),
    };
    let mut z = vec![0.0f64; per];
    for &(t, prev) in &steps {
        let eps = denoise(&x, t)?;
        let coeffs = match path {
            Path::Full => StepCoefficients {
                alpha_bar: schedule.alpha_bar(t),
                beta: schedule.beta(t),
                sigma2: schedule.sigma2(t),
            },
            Path::Strided(_) => StepCoefficients::between(schedule.alpha_bar(t), schedule.alpha_bar(prev)),
        };
        let sigma = coeffs.sigma2.sqrt();
        for (s, r) in rngs.iter_mut().enumerate() {
            let range = s * per..(s + 1) * per;
            let mean = coeffs.mean(&x[range.clone()], &eps[range.clone()]);
            if prev > 0 {
                rng::fill_normal(r, &mut z);
                for ((xi, m), zi) in x[range].iter_mut().zip(&mean).zip(&z) {
                    *xi = m + sigma * zi;
                }
            } else {
                x[range].copy_from_slice(&mean);
            }
        }
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: t,
                detail: format!("scenario {} holds a non-finite coordinate", indices[bad / per]),
            });
        }
    }
    Ok(x.chunks(per).map(|c| c.iter().map(|v| v.clamp(-1.0, 1.0)).collect()).collect())
}

/// Builds a normalized scenario from generated channel data.
pub fn wrap(channels: &[f64], condition: ConditionVector, roads: Option<usize>, template: &ScenarioTemplate) -> Result<RoadScenario> {
    let scenario_type = condition
        .scenario_type()
        .ok_or_else(|| Error::Contract("condition must name exactly one scenario type".into()))?;
    let n = template.roads;
    let valid = roads.unwrap_or(n).min(n);
    let mut s = RoadScenario {
        n,
        k: template.points,
        points: vec![0.0; n * template.points * 2],
        mask: (0..n).map(|r| r < valid).collect(),
        origin: template.origin,
        half_extent_m: template.half_extent_m,
        scenario_type,
        condition,
    };
    if channels.len() != n * 2 * template.points {
        return Err(Error::Shape {
            expected: [1, 2 * n, template.points],
            found: [1, 1, channels.len()],
        });
    }
    s.set_from_channels(channels);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::ScenarioType;
    use crate::nn::UNetConfig;

    fn setup() -> (RoadUNet<f32>, NoiseSchedule) {
        (RoadUNet::new(UNetConfig::reduced(2, 16), 3).unwrap(), NoiseSchedule::linear(500, 1e-4, 0.05).unwrap())
    }

    fn conds(b: usize) -> Vec<ConditionVector> {
        (0..b).map(|i| ConditionVector::new(ScenarioType::ALL[i % 4], 200.0, i)).collect()
    }

    #[test]
    fn subsequences() {
        let full = build_timestep_subsequence(500, 1).unwrap();
        assert_eq!(full, (1..=500).rev().collect::<Vec<_>>());
        let five = build_timestep_subsequence(500, 5).unwrap();
        assert_eq!(five.len(), 101);
        assert_eq!(&five[..3], &[500, 495, 490]);
        assert_eq!(&five[99..], &[5, 1]);
        assert_eq!(build_timestep_subsequence(500, 500).unwrap(), [500, 1]);
        assert_eq!(build_timestep_subsequence(10, 3).unwrap(), [10, 7, 4, 1]);
        for bad in [0, 501] {
            assert!(matches!(build_timestep_subsequence(500, bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn stride_one_matches_full_chain() {
        let (net, s) = setup();
        let sampler = Sampler::new(&net, &s);
        let c = conds(2);
        let a = sampler.sample_strided(&c, &[0, 1], 7, 1, Some(&FreeUConfig::default())).unwrap();
        let b = sampler.sample_full(&c, &[0, 1], 7, Some(&FreeUConfig::default())).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn deterministic_and_partition_free() {
        let (net, s) = setup();
        let sampler = Sampler::new(&net, &s);
        let c = conds(6);
        let idx: Vec<u64> = (10..16).collect();
        let whole = sampler.sample_strided(&c, &idx, 2, 10, None).unwrap();
        assert_eq!(whole, sampler.sample_strided(&c, &idx, 2, 10, None).unwrap());
        let mut parts = sampler.sample_strided(&c[..4], &idx[..4], 2, 10, None).unwrap();
        parts.extend(sampler.sample_strided(&c[4..], &idx[4..], 2, 10, None).unwrap());
        assert_eq!(whole, parts);
        assert!(whole.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(whole[0], whole[1]);
    }

    #[test]
    fn generate_wraps_metadata() {
        let (net, s) = setup();
        let template = ScenarioTemplate {
            roads: 2,
            points: 16,
            half_extent_m: 150.0,
            origin: ShapePoint { lat: 1.0, lng: 2.0 },
        };
        let cfg = SamplerConfig { stride: 50, count: 3, batch: 2, roads: Some(1), ..Default::default() };
        let out = Sampler::new(&net, &s).generate(&conds(3), &[0, 1, 2], &cfg, &template).unwrap();
        assert_eq!(out.len(), 3);
        for (i, sc) in out.iter().enumerate() {
            assert!(sc.is_well_formed());
            assert_eq!(sc.mask, [true, false]);
            assert_eq!(sc.scenario_type, ScenarioType::ALL[i]);
            assert_eq!(sc.half_extent_m, 150.0);
        }
    }

    #[test]
    fn exact_denoiser_recovers_its_data_point() {
        let s = NoiseSchedule::linear(500, 1e-4, 0.05).unwrap();
        let x0 = [0.3, -0.7, 0.05, 0.9];
        let oracle = |x: &[f64], t: usize| -> Result<Vec<f64>> {
            let ab = s.alpha_bar(t);
            Ok(x.iter().zip(x0.iter().cycle()).map(|(xt, x0)| (xt - ab.sqrt() * x0) / (1.0 - ab).sqrt()).collect())
        };
        for stride in [1, 5, 37] {
            let tau = build_timestep_subsequence(500, stride).unwrap();
            let out = chain(&s, [2, 2, 2], &[0, 1], 3, Path::Strided(&tau), oracle).unwrap();
            for v in &out {
                for (a, b) in v.iter().zip(x0) {
                    assert!((a - b).abs() < 1e-9, "stride {stride}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn freeu_stage_count_checked() {
        let (net, s) = setup();
        let f = FreeUConfig {
            b: vec![1.0; 3],
            s: vec![1.0; 3],
            r_thresh: 0.25,
        };
        assert!(Sampler::new(&net, &s).sample_strided(&conds(1), &[0], 0, 100, Some(&f)).is_err());
    }

    #[test]
    fn invalid_condition_rejected_on_wrap() {
        let template = ScenarioTemplate {
            roads: 1,
            points: 2,
            half_extent_m: 1.0,
            origin: ShapePoint { lat: 0.0, lng: 0.0 },
        };
        let c = ConditionVector {
            type_onehot: [0.5, 0.5, 0.0, 0.0],
            scale: 0.5,
            junction_count: 0.0,
        };
        assert!(wrap(&[0.0; 4], c, None, &template).is_err());
    }
}
