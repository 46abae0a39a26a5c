//! Synthetic CGM subjects: basal level, a 24 h sinusoid, gamma-shaped meal
//! excursions and AR(1) sensor noise, clipped to the usual CGM reporting
//! range. Deterministic given the profile seed.

use serde::{Deserialize, Serialize};

use crate::numerics::SeededRng;
use crate::pipeline::GlucoseSeries;

pub const SAMPLES_PER_DAY: usize = 288;
pub const CLIP_MGDL: (f64, f64) = (40.0, 400.0);
/// 2018-01-01T00:00:00Z; synthetic series start at midnight.
pub const SYNTH_EPOCH: i64 = 1_514_764_800;

const MINUTES_PER_DAY: f64 = 1440.0;
/// Meal responses are ignored once `u` exceeds this (contribution < 1e-6·A).
const MEAL_TAIL_U: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub basal: f64,
    pub circadian_amp: f64,
    /// Minutes after midnight.
    pub meal_times: Vec<f64>,
    /// Peak excursion of each meal, mg/dl.
    pub meal_amps: Vec<f64>,
    /// Minutes from meal to peak.
    pub meal_tau: f64,
    pub noise_phi: f64,
    pub noise_sigma: f64,
    /// Standard deviation of the day-to-day shift of each meal time, minutes.
    pub meal_time_jitter: f64,
    /// Relative standard deviation of the day-to-day meal size.
    pub meal_amp_jitter: f64,
    pub seed: u64,
}

impl SubjectProfile {
    /// Same subject without noise or day-to-day variation.
    pub fn noise_free(&self) -> Self {
        Self {
            noise_sigma: 0.0,
            meal_time_jitter: 0.0,
            meal_amp_jitter: 0.0,
            ..self.clone()
        }
    }
}

/// Ranges from which [`gen_cohort`] draws profiles, uniformly.
pub mod ranges {
    pub const BASAL: (f64, f64) = (100.0, 140.0);
    pub const CIRCADIAN_AMP: (f64, f64) = (5.0, 20.0);
    pub const BREAKFAST: (f64, f64) = (390.0, 510.0);
    pub const LUNCH: (f64, f64) = (690.0, 810.0);
    pub const DINNER: (f64, f64) = (1080.0, 1200.0);
    pub const MEAL_AMP: (f64, f64) = (30.0, 80.0);
    pub const MEAL_TAU: (f64, f64) = (40.0, 70.0);
    pub const NOISE_PHI: (f64, f64) = (0.90, 0.98);
    pub const NOISE_SIGMA: (f64, f64) = (1.0, 3.0);
    pub const MEAL_TIME_JITTER: f64 = 20.0;
    pub const MEAL_AMP_JITTER: f64 = 0.2;
}

fn meal_response(amp: f64, minutes_since: f64, tau: f64) -> f64 {
    if minutes_since <= 0.0 {
        return 0.0;
    }
    let u = minutes_since / tau;
    if u > MEAL_TAIL_U {
        return 0.0;
    }
    amp * u * (1.0 - u).exp()
}

/// `days × 288` samples of one subject, starting at midnight.
pub fn gen_subject(profile: &SubjectProfile, days: usize) -> GlucoseSeries {
    assert!(days >= 1, "gen_subject needs at least one day");
    let mut rng = SeededRng::new(profile.seed);

    // Realised meals, one day before the first sample onward so late-evening tails carry over.
    let mut meals: Vec<(f64, f64)> = Vec::new();
    for day in 0..=days {
        for (&t, &a) in profile.meal_times.iter().zip(&profile.meal_amps) {
            let shift = profile.meal_time_jitter * rng.normal();
            let size = (1.0 + profile.meal_amp_jitter * rng.normal()).max(0.0);
            meals.push(((day as f64 - 1.0) * MINUTES_PER_DAY + t + shift, a * size));
        }
    }

    let n = days * SAMPLES_PER_DAY;
    let stationary_sd = if profile.noise_phi < 1.0 {
        profile.noise_sigma / (1.0 - profile.noise_phi * profile.noise_phi).sqrt()
    } else {
        profile.noise_sigma
    };
    let mut noise = stationary_sd * rng.normal();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * 5.0;
        if i > 0 {
            noise = profile.noise_phi * noise + profile.noise_sigma * rng.normal();
        }
        let circadian = profile.circadian_amp * (2.0 * std::f64::consts::PI * t / MINUTES_PER_DAY).sin();
        let meal: f64 = meals
            .iter()
            .map(|&(tm, a)| meal_response(a, t - tm, profile.meal_tau))
            .sum();
        let g = (profile.basal + circadian + meal + noise).clamp(CLIP_MGDL.0, CLIP_MGDL.1);
        samples.push(Some(g));
    }
    GlucoseSeries {
        subject_id: profile.subject_id.clone(),
        start_time: SYNTH_EPOCH,
        samples,
    }
}

pub fn draw_profile(rng: &mut SeededRng, subject_id: String) -> SubjectProfile {
    use ranges::*;
    let mut draw = |r: (f64, f64)| rng.uniform_range(r.0, r.1);
    let basal = draw(BASAL);
    let circadian_amp = draw(CIRCADIAN_AMP);
    let meal_times = vec![draw(BREAKFAST), draw(LUNCH), draw(DINNER)];
    let meal_amps = vec![draw(MEAL_AMP), draw(MEAL_AMP), draw(MEAL_AMP)];
    let meal_tau = draw(MEAL_TAU);
    let noise_phi = draw(NOISE_PHI);
    let noise_sigma = draw(NOISE_SIGMA);
    SubjectProfile {
        subject_id,
        basal,
        circadian_amp,
        meal_times,
        meal_amps,
        meal_tau,
        noise_phi,
        noise_sigma,
        meal_time_jitter: MEAL_TIME_JITTER,
        meal_amp_jitter: MEAL_AMP_JITTER,
        seed: rng.next_u64(),
    }
}

pub fn cohort_profiles(n_subjects: usize, master_seed: u64) -> Vec<SubjectProfile> {
    let mut rng = SeededRng::new(master_seed);
    (0..n_subjects)
        .map(|i| draw_profile(&mut rng, format!("sim_{:02}", i + 1)))
        .collect()
}

pub fn gen_cohort(n_subjects: usize, days: usize, master_seed: u64) -> Vec<GlucoseSeries> {
    assert!(n_subjects >= 1, "gen_cohort needs at least one subject");
    cohort_profiles(n_subjects, master_seed)
        .iter()
        .map(|p| gen_subject(p, days))
        .collect()
}
