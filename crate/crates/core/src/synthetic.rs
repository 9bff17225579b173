//! Proportional-hazards cohorts with known ground-truth risk.
//!
//! Each patient draws a latent vector `z ~ N(0, I)`. The true log-hazard
//! ratio is `w · z`, re-centered over the cohort and clipped to `[-3, 3]`.
//! Event times are exponential with rate `baseline_rate · exp(risk)`,
//! censoring times exponential with `censor_rate`. Every modality observes
//! `z` through its own fixed random linear map plus Gaussian noise.
//!
//! Patient `i` samples from its own ChaCha stream, so records do not depend
//! on generation order.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, StandardNormal};

use crate::data::{Cohort, EmbeddingBundle, ModalityId, PatientRecord};
use crate::error::{Error, Result};
use crate::evaluation::concordance_index;
use crate::adapters::RISK_BOUND;
use crate::survival::{percentile, TERTILE_CUTS};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub latent_dim: usize,
    pub d_rad: usize,
    pub d_path: usize,
    pub true_weights: Vec<f64>,
    /// Constant baseline hazard, per day.
    pub baseline_rate: f64,
    /// Exponential censoring rate; `None` disables censoring.
    pub censor_rate: Option<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::InvalidSpec(msg));
        if self.n_patients < 3 {
            return fail(format!("n_patients must be at least 3, got {}", self.n_patients));
        }
        if self.latent_dim == 0 || self.d_rad == 0 || self.d_path == 0 {
            return fail("latent_dim, d_rad and d_path must be positive".into());
        }
        if self.true_weights.len() != self.latent_dim {
            return fail(format!(
                "true_weights has {} entries, latent_dim is {}",
                self.true_weights.len(),
                self.latent_dim
            ));
        }
        if !self.true_weights.iter().all(|w| w.is_finite()) {
            return fail("true_weights must be finite".into());
        }
        if !(self.baseline_rate.is_finite() && self.baseline_rate > 0.0) {
            return fail(format!("baseline_rate must be positive, got {}", self.baseline_rate));
        }
        if let Some(c) = self.censor_rate {
            if !(c.is_finite() && c > 0.0) {
                return fail(format!("censor_rate must be positive, got {c}"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

struct Draw {
    z: Vec<f64>,
    u_event: f64,
    u_censor: f64,
    noise: [Vec<f64>; 5],
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn modality_dim(spec: &SyntheticSpec, m: ModalityId) -> usize {
    if m.is_radiology() {
        spec.d_rad
    } else {
        spec.d_path
    }
}

/// Fixed `latent_dim x d` maps, one per modality, scaled by `1/sqrt(latent_dim)`.
fn modality_maps(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let mut rng = stream(spec.seed, 0);
    let scale = 1.0 / libm::sqrt(spec.latent_dim as f64);
    ModalityId::ALL
        .iter()
        .map(|&m| {
            (0..spec.latent_dim * modality_dim(spec, m))
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

fn draw_patient(spec: &SyntheticSpec, i: usize) -> Draw {
    let mut rng = stream(spec.seed, i as u64 + 1);
    let z = (0..spec.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
    let u_event = Open01.sample(&mut rng);
    let u_censor = Open01.sample(&mut rng);
    let noise = ModalityId::ALL.map(|m| {
        (0..modality_dim(spec, m))
            .map(|_| spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    });
    Draw {
        z,
        u_event,
        u_censor,
        noise,
    }
}

/// Generates a cohort and the per-patient true risks (aligned with records).
pub fn generate_cohort(spec: &SyntheticSpec) -> Result<(Cohort, Vec<f64>)> {
    spec.validate()?;
    let maps = modality_maps(spec);
    let draws: Vec<Draw> = (0..spec.n_patients).map(|i| draw_patient(spec, i)).collect();

    let raw: Vec<f64> = draws
        .iter()
        .map(|d| d.z.iter().zip(&spec.true_weights).map(|(z, w)| z * w).sum())
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let risks: Vec<f64> = raw
        .iter()
        .map(|r| (r - mean).clamp(-RISK_BOUND, RISK_BOUND))
        .collect();

    let mut sorted = risks.clone();
    sorted.sort_by(f64::total_cmp);
    let p33 = percentile(&sorted, TERTILE_CUTS.0)?;
    let p66 = percentile(&sorted, TERTILE_CUTS.1)?;

    let mut records = Vec::with_capacity(spec.n_patients);
    for (i, (d, &r)) in draws.iter().zip(&risks).enumerate() {
        let event_time = -libm::log(d.u_event) / (spec.baseline_rate * libm::exp(r));
        let censor_time = match spec.censor_rate {
            Some(rate) => -libm::log(d.u_censor) / rate,
            None => f64::INFINITY,
        };
        let event = event_time <= censor_time;
        let time = event_time.min(censor_time);

        let vectors = core::array::from_fn(|k| {
            let m = ModalityId::ALL[k];
            let dim = modality_dim(spec, m);
            let map = &maps[k];
            (0..dim)
                .map(|c| {
                    let proj: f64 = (0..spec.latent_dim).map(|l| d.z[l] * map[l * dim + c]).sum();
                    proj + d.noise[k][c]
                })
                .collect()
        });
        let grade = if r <= p33 {
            0
        } else if r <= p66 {
            1
        } else {
            2
        };
        records.push(PatientRecord::new(
            format!("syn-{i:05}"),
            EmbeddingBundle::new(vectors),
            time,
            event,
            Some(grade),
        )?);
    }
    Ok((Cohort::new(records)?, risks))
}

/// Harrell's c-index of the ground-truth risks on the cohort.
pub fn oracle_cindex(cohort: &Cohort, true_risks: &[f64]) -> Result<f64> {
    if cohort.len() != true_risks.len() {
        return Err(Error::LengthMismatch {
            what: "oracle c-index",
            left: cohort.len(),
            right: true_risks.len(),
        });
    }
    Ok(concordance_index(true_risks, &cohort.times(), &cohort.events())?.c_index)
}

/// Expected censored fraction `E[λc / (λc + λ0 exp(r))]`, estimated from
/// `draws` independent latent samples (centered and clipped like
/// [`generate_cohort`]).
pub fn expected_censoring_fraction(spec: &SyntheticSpec, draws: usize, seed: u64) -> Result<f64> {
    spec.validate()?;
    let Some(censor_rate) = spec.censor_rate else {
        return Ok(0.0);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..draws)
        .map(|_| {
            spec.true_weights
                .iter()
                .map(|w| w * rng.sample::<f64, _>(StandardNormal))
                .sum()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / draws as f64;
    let total: f64 = raw
        .iter()
        .map(|r| {
            let r = (r - mean).clamp(-RISK_BOUND, RISK_BOUND);
            censor_rate / (censor_rate + spec.baseline_rate * libm::exp(r))
        })
        .sum();
    Ok(total / draws as f64)
}
