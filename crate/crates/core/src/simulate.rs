//! Synthetic cohorts with three known trajectory groups.
//!
//! Every score is drawn as `round(Exp(rate))` clamped to `0..=10`, with the
//! rate driven by the subject's group covariates, a linear trend in time
//! and standard normal noise per subject-period. The second design adds a
//! rate shift before an unobserved per-subject event time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CategoryMap, LongitudinalDataset, SubjectRecord};
use crate::error::{LcgaError, Result};
use crate::par;

pub const SCORE_MIN: i32 = 0;
pub const SCORE_MAX: i32 = 10;
pub const GROUP_NAMES: [&str; 3] = ["constant-low", "increasing", "decreasing"];

const EVENT_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    One,
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Subjects in the constant-low, increasing and decreasing groups.
    pub n_per_group: [usize; 3],
    pub n_periods: u32,
    /// Rate shift applied while the event has not yet happened.
    pub beta_tr: f64,
    pub group_covariates: [[f64; 3]; 3],
    /// Rate slopes on `z2·t` (added) and `z3·t` (subtracted).
    pub trend: [f64; 2],
    pub rate_floor: f64,
    /// Standard deviation of the per-period rate noise `ε_t`.
    #[serde(default = "unit_noise")]
    pub noise_sd: f64,
    pub seed: u64,
}

fn unit_noise() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn scenario1() -> Self {
        Self {
            scenario: Scenario::One,
            n_per_group: [3000, 1000, 1000],
            n_periods: 12,
            beta_tr: 0.0,
            group_covariates: [[2.0, 0.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
            trend: [0.5, 0.05],
            rate_floor: 0.05,
            noise_sd: 1.0,
            seed: 0,
        }
    }

    pub fn scenario2() -> Self {
        Self {
            scenario: Scenario::Two,
            beta_tr: 0.2,
            group_covariates: [[0.2, 0.0, 0.0], [0.3, 0.0, 1.0], [0.15, 1.0, 0.0]],
            trend: [0.01, 0.02],
            ..Self::scenario1()
        }
    }

    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::One => Self::scenario1(),
            Scenario::Two => Self::scenario2(),
        }
    }

    pub fn with_counts(mut self, counts: [usize; 3]) -> Self {
        self.n_per_group = counts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_subjects(&self) -> usize {
        self.n_per_group.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_periods == 0 {
            return Err(LcgaError::Config("n_periods must be at least 1".into()));
        }
        if !(self.rate_floor > 0.0) {
            return Err(LcgaError::Config("rate_floor must be positive".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(LcgaError::Config("noise_sd must be non-negative".into()));
        }
        if self.n_subjects() == 0 {
            return Err(LcgaError::Config("at least one subject is required".into()));
        }
        Ok(())
    }

    fn group_of(&self, index: usize) -> usize {
        let [a, b, _] = self.n_per_group;
        if index < a {
            0
        } else if index < a + b {
            1
        } else {
            2
        }
    }
}

/// Exponential rate at period `t` before flooring.
pub fn rate(cfg: &ScenarioConfig, z: &[f64; 3], t: u32, before_event: bool, noise: f64) -> f64 {
    let t = t as f64;
    let treatment = if before_event { cfg.beta_tr } else { 0.0 };
    z[0] + cfg.trend[0] * z[1] * t - cfg.trend[1] * z[2] * t + treatment + noise
}

/// Rounds half away from zero and clamps to the score range.
pub fn to_score(draw: f64) -> i32 {
    (draw.round() as i64).clamp(SCORE_MIN as i64, SCORE_MAX as i64) as i32
}

/// Failures before the first success of a fair coin, plus one.
pub fn event_time<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    let mut failures = 0;
    while rng.random::<bool>() {
        failures += 1;
    }
    failures + 1
}

fn subject_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn generate(cfg: &ScenarioConfig, with_events: bool) -> Result<LongitudinalDataset> {
    cfg.validate()?;
    let subjects = par::map_indexed(cfg.n_subjects(), |i| {
        let group = cfg.group_of(i);
        let z = cfg.group_covariates[group];
        let mut rng = subject_rng(cfg.seed, i as u64);
        let event = with_events.then(|| event_time(&mut subject_rng(cfg.seed, EVENT_STREAM_OFFSET + i as u64)));
        let times: Vec<u32> = (1..=cfg.n_periods).collect();
        let scores = times
            .iter()
            .map(|&t| {
                let noise = cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
                let before = event.is_some_and(|e| e > t);
                let lambda = rate(cfg, &z, t, before, noise).max(cfg.rate_floor);
                let draw = Exp::new(lambda).expect("positive rate").sample(&mut rng);
                to_score(draw)
            })
            .collect();
        SubjectRecord {
            subject_id: format!("{}", i + 1),
            times,
            scores,
            covariates: z.to_vec(),
            true_class: Some(group),
        }
    });
    LongitudinalDataset::new(subjects, cfg.n_periods, (SCORE_MIN, SCORE_MAX))
}

/// Constant-low, increasing and decreasing groups without events.
pub fn simulate_scenario1(cfg: &ScenarioConfig) -> Result<LongitudinalDataset> {
    if cfg.scenario != Scenario::One {
        return Err(LcgaError::Config("simulate_scenario1 needs scenario One".into()));
    }
    generate(cfg, false)
}

/// Adds a per-subject event time `NegBin(1, 1/2) + 1`; the rate carries
/// `beta_tr` while `event > t`. The event time is not exported.
pub fn simulate_scenario2(cfg: &ScenarioConfig) -> Result<LongitudinalDataset> {
    if cfg.scenario != Scenario::Two {
        return Err(LcgaError::Config("simulate_scenario2 needs scenario Two".into()));
    }
    generate(cfg, true)
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<LongitudinalDataset> {
    match cfg.scenario {
        Scenario::One => simulate_scenario1(cfg),
        Scenario::Two => simulate_scenario2(cfg),
    }
}

/// Maps every score through `map`; the result is on the `1..=M` scale.
pub fn categorize(data: &LongitudinalDataset, map: &CategoryMap) -> Result<LongitudinalDataset> {
    let subjects = data
        .subjects()
        .iter()
        .map(|s| {
            let scores = s.scores.iter().map(|&y| map.category(y)).collect::<Result<Vec<_>>>()?;
            Ok(SubjectRecord { scores, ..s.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(
        LongitudinalDataset::new(subjects, data.max_time(), (1, map.n_categories() as i32))?
            .with_category_map(map.clone()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scenario: Scenario) -> ScenarioConfig {
        ScenarioConfig::for_scenario(scenario)
            .with_counts([30, 10, 10])
            .with_seed(7)
    }

    #[test]
    fn default_group_covariates() {
        let one = ScenarioConfig::scenario1();
        assert_eq!(
            one.group_covariates,
            [[2.0, 0.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
        );
        assert_eq!(one.n_per_group, [3000, 1000, 1000]);
        assert_eq!(one.n_periods, 12);
        let two = ScenarioConfig::scenario2();
        assert_eq!(
            two.group_covariates,
            [[0.2, 0.0, 0.0], [0.3, 0.0, 1.0], [0.15, 1.0, 0.0]]
        );
        assert_eq!(two.beta_tr, 0.2);
    }

    #[test]
    fn scenario1_assigns_covariates_by_group() {
        let data = simulate_scenario1(&small(Scenario::One)).unwrap();
        assert_eq!(data.n_subjects(), 50);
        for s in data.subjects() {
            let g = s.true_class.unwrap();
            assert_eq!(s.covariates, ScenarioConfig::scenario1().group_covariates[g].to_vec());
            assert_eq!(s.times, (1..=12).collect::<Vec<_>>());
            assert!(s.scores.iter().all(|y| (0..=10).contains(y)));
        }
    }

    #[test]
    fn wrong_scenario_rejected() {
        assert!(simulate_scenario1(&small(Scenario::Two)).is_err());
        assert!(simulate_scenario2(&small(Scenario::One)).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_score(0.49), 0);
        assert_eq!(to_score(0.5), 1);
        assert_eq!(to_score(2.5), 3);
        assert_eq!(to_score(37.0), 10);
    }

    #[test]
    fn same_seed_same_data() {
        let a = simulate(&small(Scenario::Two)).unwrap();
        let b = simulate(&small(Scenario::Two)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&small(Scenario::Two).with_seed(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scenario2_reduces_to_scenario1() {
        let one = small(Scenario::One);
        let mut two = one.clone();
        two.scenario = Scenario::Two;
        two.beta_tr = 0.0;
        assert_eq!(simulate_scenario1(&one).unwrap(), simulate_scenario2(&two).unwrap());
    }

    #[test]
    fn categorize_maps_and_records() {
        let data = simulate(&small(Scenario::One)).unwrap();
        let cat = categorize(&data, &CategoryMap::default()).unwrap();
        assert_eq!(cat.score_bounds(), (1, 3));
        assert_eq!(cat.category_map(), Some(&CategoryMap::default()));
        for (a, b) in data.subjects().iter().zip(cat.subjects()) {
            for (&raw, &c) in a.scores.iter().zip(&b.scores) {
                assert_eq!(c, CategoryMap::default().category(raw).unwrap());
            }
        }
    }

    #[test]
    fn categorize_rejects_scores_outside_map() {
        let data = simulate(&small(Scenario::One)).unwrap();
        let narrow = CategoryMap::new(0, vec![2, 5]).unwrap();
        assert!(categorize(&data, &narrow).is_err());
    }
}
