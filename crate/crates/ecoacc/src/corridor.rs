//! Corridor geometry, traffic-light schedules and the empirical
//! distribution of post-green queue-discharge delay used by the planner's
//! chance constraints.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Signal phase. Within one cycle the order is green → yellow → red,
/// with the cycle clock starting at green onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Green,
    Yellow,
    Red,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Green => write!(f, "green"),
            Phase::Yellow => write!(f, "yellow"),
            Phase::Red => write!(f, "red"),
        }
    }
}

/// Phase at an instant plus the time left until the next phase change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub phase: Phase,
    pub remaining: f64,
}

/// Empirical distribution of the delay between green onset and the moment
/// the queue ahead has discharged enough to let a vehicle pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DelayDistributionRaw")]
pub struct DelayDistribution {
    support: Vec<f64>,
    pmf: Vec<f64>,
    #[serde(skip_serializing)]
    cdf: Vec<f64>,
}

#[derive(Deserialize)]
struct DelayDistributionRaw {
    support: Vec<f64>,
    pmf: Vec<f64>,
}

impl TryFrom<DelayDistributionRaw> for DelayDistribution {
    type Error = Error;
    fn try_from(raw: DelayDistributionRaw) -> Result<Self> {
        DelayDistribution::new(raw.support, raw.pmf)
    }
}

impl DelayDistribution {
    pub fn new(support: Vec<f64>, pmf: Vec<f64>) -> Result<Self> {
        if support.is_empty() || pmf.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        if support.len() != pmf.len() {
            return Err(Error::InvalidParameter(
                "delay support and pmf lengths differ".into(),
            ));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) || support[0] < 0.0 {
            return Err(Error::InvalidParameter(
                "delay support must be nonnegative and strictly ascending".into(),
            ));
        }
        if pmf.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidParameter("pmf entries must be >= 0".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "pmf sums to {total}, expected 1"
            )));
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        Ok(DelayDistribution { support, pmf, cdf })
    }

    /// Point mass at zero delay.
    pub fn zero() -> Self {
        DelayDistribution::new(vec![0.0], vec![1.0]).unwrap()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn max_delay(&self) -> f64 {
        *self.support.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.pmf)
            .map(|(x, p)| x * p)
            .sum()
    }

    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        self.support
            .iter()
            .zip(&self.pmf)
            .map(|(x, p)| p * (x - mean).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// P(delay <= x).
    pub fn cdf(&self, x: f64) -> f64 {
        match self.support.iter().rposition(|&s| s <= x) {
            Some(i) => self.cdf[i],
            None => 0.0,
        }
    }

    /// Generalized inverse CDF at probability `1 - eta`: the smallest
    /// support value whose CDF reaches that level. Small `eta` demands a
    /// large delay margin; `eta = 1` returns the smallest support value.
    pub fn quantile(&self, eta: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!(
                "reliability eta = {eta} outside [0, 1]"
            )));
        }
        let level = 1.0 - eta;
        let idx = self
            .cdf
            .iter()
            .position(|&c| c >= level - 1e-12)
            .unwrap_or(self.cdf.len() - 1);
        Ok(self.support[idx])
    }

    /// Inverse-CDF sample.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        let idx = self
            .cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1);
        self.support[idx]
    }
}

/// One signalized intersection: stop-bar position, cycle structure and
/// the empirical queue-delay distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    /// Stop bar distance from the route origin (m).
    pub position: f64,
    /// Cycle length (s).
    pub cycle: f64,
    /// Red duration (s).
    pub red: f64,
    /// Green duration (s).
    pub green: f64,
    /// Yellow duration (s).
    pub yellow: f64,
    /// Cycle-clock offset at t = 0 (s): local time = (t + offset) mod cycle.
    pub offset: f64,
    pub delay: DelayDistribution,
}

impl Intersection {
    pub fn validate(&self) -> Result<()> {
        if (self.red + self.green + self.yellow - self.cycle).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "phase durations {} + {} + {} do not sum to cycle {}",
                self.red, self.green, self.yellow, self.cycle
            )));
        }
        if self.red < 0.0 || self.green < 0.0 || self.yellow < 0.0 {
            return Err(Error::InvalidParameter(
                "phase durations must be >= 0".into(),
            ));
        }
        if self.delay.max_delay() > self.green + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "delay support reaches {} s beyond the green duration {} s",
                self.delay.max_delay(),
                self.green
            )));
        }
        Ok(())
    }

    /// Time into the cycle at absolute time `t`, measured from green onset.
    pub fn local_time(&self, t: f64) -> f64 {
        (t + self.offset).rem_euclid(self.cycle)
    }

    /// Deterministic periodic phase lookup.
    pub fn phase_at(&self, t: f64) -> PhaseState {
        let tau = self.local_time(t);
        if tau < self.green {
            PhaseState {
                phase: Phase::Green,
                remaining: self.green - tau,
            }
        } else if tau < self.green + self.yellow {
            PhaseState {
                phase: Phase::Yellow,
                remaining: self.green + self.yellow - tau,
            }
        } else {
            PhaseState {
                phase: Phase::Red,
                remaining: self.cycle - tau,
            }
        }
    }

    /// Seconds from an arrival instant until the next green onset; zero if
    /// the arrival already falls in green. The planner treats yellow as
    /// red, so yellow arrivals wait out yellow plus red.
    pub fn remaining_red(&self, t_arrival: f64) -> f64 {
        let tau = self.local_time(t_arrival);
        if tau < self.green {
            0.0
        } else {
            self.cycle - tau
        }
    }

    /// Chance-constrained crossing test: the within-cycle arrival instant
    /// must fall inside green and clear the queue-delay quantile after
    /// green onset. `margin` widens the quantile (s); pass 0 for the bare
    /// constraint.
    pub fn feasible_crossing(&self, t_arrival: f64, eta: f64, margin: f64) -> Result<bool> {
        let tau = self.local_time(t_arrival);
        let q = self.delay.quantile(eta)? + margin;
        Ok(tau < self.green && tau > q)
    }
}

/// Route geometry: total length and the ordered stop bars along it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub length: f64,
    pub intersections: Vec<Intersection>,
}

impl Corridor {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::InvalidParameter("corridor length must be > 0".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for i in &self.intersections {
            i.validate()?;
            if i.position <= prev || i.position >= self.length {
                return Err(Error::InvalidParameter(
                    "intersection positions must be strictly increasing and inside the route"
                        .into(),
                ));
            }
            prev = i.position;
        }
        Ok(())
    }

    /// Index of the next intersection strictly downstream of `position`.
    pub fn next_intersection(&self, position: f64) -> Option<usize> {
        self.intersections.iter().position(|i| i.position > position)
    }

    /// Replace per-intersection phase offsets with realized ones.
    pub fn with_offsets(&self, offsets: &[f64]) -> Corridor {
        let mut c = self.clone();
        for (i, &o) in c.intersections.iter_mut().zip(offsets) {
            i.offset = o;
        }
        c
    }
}

/// One realized draw of the corridor's randomness: a phase offset per
/// intersection and a queue-discharge delay per intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSchedule {
    pub offsets: Vec<f64>,
    pub delays: Vec<f64>,
}

/// Draw per-intersection phase offsets (uniform over each cycle) and
/// i.i.d. queue delays from each empirical distribution. Deterministic
/// for a given seed.
pub fn sample_schedule(corridor: &Corridor, seed: u64) -> SignalSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = Vec::with_capacity(corridor.intersections.len());
    let mut delays = Vec::with_capacity(corridor.intersections.len());
    for i in &corridor.intersections {
        offsets.push(rng.gen::<f64>() * i.cycle);
        delays.push(i.delay.sample(&mut rng));
    }
    SignalSchedule { offsets, delays }
}

/// Histogram fit of an empirical delay PMF with the given bin width; the
/// support carries the lower edge of each occupied bin.
pub fn fit_delay_distribution(samples: &[f64], bin_width: f64) -> Result<DelayDistribution> {
    if samples.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    if !(bin_width > 0.0) {
        return Err(Error::InvalidParameter("bin width must be > 0".into()));
    }
    if samples.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidParameter(
            "delay samples must be nonnegative".into(),
        ));
    }
    let mut counts: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    for &s in samples {
        *counts.entry((s / bin_width).floor() as u64).or_default() += 1;
    }
    let n = samples.len() as f64;
    let support: Vec<f64> = counts.keys().map(|&k| k as f64 * bin_width).collect();
    let pmf: Vec<f64> = counts.values().map(|&c| c as f64 / n).collect();
    DelayDistribution::new(support, pmf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn light(offset: f64) -> Intersection {
        Intersection {
            position: 100.0,
            cycle: 60.0,
            red: 25.0,
            green: 30.0,
            yellow: 5.0,
            offset,
            delay: DelayDistribution::zero(),
        }
    }

    #[test]
    fn phase_at_cycle_start_is_green() {
        let i = light(0.0);
        let s = i.phase_at(0.0);
        assert_eq!(s.phase, Phase::Green);
        assert_relative_eq!(s.remaining, 30.0);
    }

    #[test]
    fn phase_at_34s_is_yellow_with_one_second_left() {
        let i = light(0.0);
        let s = i.phase_at(34.0);
        assert_eq!(s.phase, Phase::Yellow);
        assert_relative_eq!(s.remaining, 1.0);
    }

    #[test]
    fn remaining_red_examples() {
        let i = light(0.0);
        assert_eq!(i.remaining_red(0.0), 0.0); // green onset
        assert_relative_eq!(i.remaining_red(55.0), 5.0); // 5 s before green
        assert_relative_eq!(i.remaining_red(30.0), 30.0); // yellow onset: yellow + red
    }

    #[test]
    fn delay_quantile_cdf_scan() {
        let d = DelayDistribution::new(vec![0.0, 1.0, 2.0], vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(d.quantile(1.0).unwrap(), 0.0);
        assert_eq!(d.quantile(0.1).unwrap(), 2.0);
        assert_eq!(d.quantile(0.3).unwrap(), 1.0);
    }

    #[test]
    fn feasible_crossing_examples() {
        let mut i = light(0.0);
        i.delay = DelayDistribution::new(vec![2.0], vec![1.0]).unwrap();
        // Mid-red is never crossable.
        assert!(!i.feasible_crossing(45.0, 0.5, 0.0).unwrap());
        assert!(!i.feasible_crossing(45.0, 0.0, 0.0).unwrap());
        // Green onset with a 2-s delay quantile fails; 2.1 s in passes.
        assert!(!i.feasible_crossing(0.0, 0.5, 0.0).unwrap());
        assert!(i.feasible_crossing(2.1, 0.5, 0.0).unwrap());
        // Zero-delay distribution at eta = 1 reduces to "phase is green".
        let z = light(0.0);
        assert!(z.feasible_crossing(10.0, 1.0, 0.0).unwrap());
        assert!(!z.feasible_crossing(31.0, 1.0, 0.0).unwrap());
    }

    #[test]
    fn schedule_sampling_is_deterministic() {
        let corridor = Corridor {
            length: 500.0,
            intersections: vec![light(0.0), {
                let mut l = light(7.0);
                l.position = 300.0;
                l.delay =
                    DelayDistribution::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
                l
            }],
        };
        let a = sample_schedule(&corridor, 42);
        let b = sample_schedule(&corridor, 42);
        assert_eq!(a, b);
        let c = sample_schedule(&corridor, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_distribution_always_draws_its_point() {
        let d = DelayDistribution::new(vec![1.5], vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 1.5);
        }
    }

    #[test]
    fn sample_mean_matches_distribution_mean() {
        // Shape follows the published example: mean 1.96 s, std ~1.03 s.
        let d = DelayDistribution::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0.08, 0.27, 0.38, 0.19, 0.06, 0.02],
        )
        .unwrap();
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mean: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        let se = d.std_dev() / (n as f64).sqrt();
        assert!(
            (mean - d.mean()).abs() < 3.0 * se,
            "sample mean {mean} vs {} (3se = {})",
            d.mean(),
            3.0 * se
        );
    }

    #[test]
    fn fit_delay_distribution_examples() {
        let d = fit_delay_distribution(&[0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(d.support(), &[0.0]);
        assert_eq!(d.pmf(), &[1.0]);

        let d = fit_delay_distribution(&[0.0, 0.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!(d.support(), &[0.0, 1.0]);
        assert_eq!(d.pmf(), &[0.5, 0.5]);

        assert!(matches!(
            fit_delay_distribution(&[], 1.0),
            Err(Error::EmptyDistribution)
        ));
    }

    #[test]
    fn monte_carlo_effective_red_frequency_within_reliability() {
        // An arrival deemed feasible at reliability eta is blocked by the
        // realized queue delay with frequency at most eta + 0.02.
        let d = DelayDistribution::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0.08, 0.27, 0.38, 0.19, 0.06, 0.02],
        )
        .unwrap();
        let mut i = light(0.0);
        i.delay = d.clone();
        for eta in [0.05, 0.1, 0.3] {
            // Earliest feasible arrival: just past the quantile.
            let tau = d.quantile(eta).unwrap() + 1e-6;
            assert!(i.feasible_crossing(tau, eta, 0.0).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 10_000;
            let blocked = (0..n).filter(|_| d.sample(&mut rng) > tau).count();
            let freq = blocked as f64 / n as f64;
            assert!(freq <= eta + 0.02, "eta {eta}: blocked frequency {freq}");
        }
    }

    proptest! {
        #[test]
        fn phases_partition_the_cycle(t in 0.0f64..600.0, offset in 0.0f64..60.0) {
            let i = light(offset);
            let s = i.phase_at(t);
            let dur = match s.phase {
                Phase::Green => i.green,
                Phase::Yellow => i.yellow,
                Phase::Red => i.red,
            };
            prop_assert!(s.remaining > 0.0 && s.remaining <= dur + 1e-9);
            // Periodicity.
            let s2 = i.phase_at(t + i.cycle);
            prop_assert_eq!(s.phase, s2.phase);
            prop_assert!((s.remaining - s2.remaining).abs() < 1e-6);
        }

        #[test]
        fn quantile_nonincreasing_in_eta(e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
            let d = DelayDistribution::new(
                vec![0.0, 1.0, 2.0, 3.0],
                vec![0.4, 0.3, 0.2, 0.1],
            ).unwrap();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(d.quantile(lo).unwrap() >= d.quantile(hi).unwrap());
        }

        #[test]
        fn zero_delay_full_reliability_equals_green_phase(t in 0.0f64..600.0) {
            // Generic (non-boundary) instants: the two code paths agree.
            let i = light(13.37);
            let feas = i.feasible_crossing(t, 1.0, 0.0).unwrap();
            let green = i.phase_at(t).phase == Phase::Green;
            // Exact green onset differs only on a measure-zero boundary.
            if i.local_time(t) > 1e-9 {
                prop_assert_eq!(feas, green);
            }
        }
    }
}
