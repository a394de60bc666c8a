//! Age-of-information model: Brownian first-hitting moments, the
//! second-order AoI approximation, the renewal formula, and trace-based AoI.
//!
//! Slot convention: an update generated in slot `g` is stamped `g - 1` (the
//! start of the slot). AoI at the end of slot `t` is `t` minus the stamp of
//! the freshest update delivered so far, so an update generated and delivered
//! in the same slot has age 1. The initial update is stamped 0.

use rand::Rng;
use rand_distr::{Distribution, InverseGaussian};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// Bernoulli update generation and AoI weight of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateModel<T> {
    pub lambda: T,
    pub weight: T,
}

impl<T: Scalar> UpdateModel<T> {
    pub fn new(lambda: T, weight: T) -> Result<Self> {
        if !(lambda > T::zero() && lambda <= T::one()) {
            return domain(format!("update probability {lambda} outside (0, 1]"));
        }
        if !(weight > T::zero()) {
            return domain(format!("AoI weight {weight} must be positive"));
        }
        Ok(Self { lambda, weight })
    }
}

/// First two moments of the time to deliver one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingMoments<T> {
    pub first: T,
    pub second: T,
}

/// Moments of the first time a Brownian motion with drift `mu` and variance
/// `sigma2` per slot reaches level 1, i.e. IG(1/mu, 1/sigma2).
pub fn ig_moments<T: Scalar>(mu: T, sigma2: T) -> Result<HittingMoments<T>> {
    if !(mu > T::zero()) || !(sigma2 > T::zero()) {
        return domain(format!("hitting moments need mu > 0 and sigma2 > 0 (got {mu}, {sigma2})"));
    }
    let first = mu.recip();
    Ok(HittingMoments { first, second: sigma2 / mu.powi(3) + first * first })
}

/// Expected time-average AoI of a client whose deliveries have second-order
/// model (mu, sigma2) and whose sensor updates with probability `lambda`.
pub fn aoi_approx<T: Scalar>(mu: T, sigma2: T, lambda: T) -> Result<T> {
    if !(mu > T::zero()) {
        return domain(format!("delivery rate {mu} must be positive"));
    }
    if !(sigma2 >= T::zero()) {
        return domain(format!("temporal variance {sigma2} must be non-negative"));
    }
    if !(lambda > T::zero() && lambda <= T::one()) {
        return domain(format!("update probability {lambda} outside (0, 1]"));
    }
    let half = T::lit(0.5);
    Ok(half * (sigma2 / (mu * mu) + mu.recip()) + lambda.recip() - half)
}

/// Renewal-reward AoI from observed inter-delivery times.
pub fn empirical_aoi_renewal<T: Scalar>(interdelivery: &[u64], lambda: T) -> Result<T> {
    if interdelivery.is_empty() {
        return Err(Error::EmptySamples);
    }
    if interdelivery.contains(&0) {
        return domain("inter-delivery times must be at least one slot");
    }
    if !(lambda > T::zero() && lambda <= T::one()) {
        return domain(format!("update probability {lambda} outside (0, 1]"));
    }
    let sum: f64 = interdelivery.iter().map(|&b| b as f64).sum();
    let sum_sq: f64 = interdelivery.iter().map(|&b| (b as f64) * (b as f64)).sum();
    Ok(T::lit(sum_sq / (2.0 * sum)) + lambda.recip() - T::lit(0.5))
}

fn ig_distribution(mu: f64, sigma2: f64) -> Result<InverseGaussian<f64>> {
    if !(mu > 0.0) || !(sigma2 > 0.0) {
        return domain(format!("reference process needs mu > 0 and sigma2 > 0 (got {mu}, {sigma2})"));
    }
    InverseGaussian::new(1.0 / mu, 1.0 / sigma2).map_err(|e| Error::Domain(e.to_string()))
}

/// Raw IG(1/mu, 1/sigma2) first-hitting times.
pub fn sample_hitting_times<T: Scalar>(mu: T, sigma2: T, n: usize, seed: u64) -> Result<Vec<T>> {
    let dist = ig_distribution(mu.as_f64(), sigma2.as_f64())?;
    let mut rng = rng::stream(seed, 0, 0, Purpose::Sampler);
    Ok((0..n).map(|_| T::lit(dist.sample(&mut rng))).collect())
}

/// Inter-delivery times of the reference delivery process.
///
/// Successive unit crossings of the Brownian motion happen at cumulative
/// IG-distributed times; each delivery lands in the slot containing its
/// crossing (ceiling of the cumulative time), at least one slot after the
/// previous delivery.
pub fn reference_delivery_sampler<T: Scalar>(mu: T, sigma2: T, n: usize, seed: u64) -> Result<Vec<u64>> {
    let dist = ig_distribution(mu.as_f64(), sigma2.as_f64())?;
    let mut rng = rng::stream(seed, 0, 0, Purpose::Sampler);
    let mut crossing = 0.0f64;
    let mut last_slot = 0u64;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        crossing += dist.sample(&mut rng);
        // Absorb rounding noise so exact multiples stay put.
        let slot = (crossing * (1.0 - 1e-12)).ceil().max(1.0) as u64;
        let slot = slot.max(last_slot + 1);
        out.push(slot - last_slot);
        last_slot = slot;
    }
    Ok(out)
}

/// Time-average AoI over slots `warmup+1..=horizon` of one client.
///
/// `deliveries` and `generations` are sorted 1-based slot indices; a delivery
/// in slot `s` carries the freshest update generated in a slot `<= s`.
pub fn trace_time_average_aoi<T: Scalar>(deliveries: &[u64], generations: &[u64], horizon: u64, warmup: u64) -> Result<T> {
    if warmup >= horizon {
        return domain(format!("warmup {warmup} must be shorter than horizon {horizon}"));
    }
    let sorted = |xs: &[u64]| xs.windows(2).all(|w| w[0] <= w[1]);
    if !sorted(deliveries) || !sorted(generations) {
        return domain("event slots must be sorted");
    }
    let mut gen_iter = generations.iter().peekable();
    let mut del_iter = deliveries.iter().peekable();
    let mut sensor_stamp = 0u64;
    let mut ap_stamp = 0u64;
    let mut total = 0u64;
    for t in 1..=horizon {
        while let Some(&g) = gen_iter.next_if(|&&g| g <= t) {
            sensor_stamp = g - 1;
        }
        while del_iter.next_if(|&&s| s <= t).is_some() {
            ap_stamp = sensor_stamp;
        }
        if t > warmup {
            total += t - ap_stamp;
        }
    }
    Ok(T::from_count(total) / T::from_count(horizon - warmup))
}

/// Draws geometric(q) inter-delivery times (support 1, 2, ...).
pub fn sample_geometric(q: f64, n: usize, seed: u64) -> Vec<u64> {
    let mut rng = rng::stream(seed, 1, 0, Purpose::Sampler);
    (0..n)
        .map(|_| {
            let mut k = 1;
            while rng.random::<f64>() >= q {
                k += 1;
            }
            k
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_model_validation() {
        assert!(UpdateModel::new(1.0, 1.0).is_ok());
        assert!(UpdateModel::new(0.0, 1.0).is_err());
        assert!(UpdateModel::new(0.5, 0.0).is_err());
    }

    #[test]
    fn moments_examples() {
        let m = ig_moments(0.5f64, 0.25).unwrap();
        assert!((m.first - 2.0).abs() < 1e-15 && (m.second - 6.0).abs() < 1e-14);
        let m = ig_moments(1.0f64, 1e-12).unwrap();
        assert!((m.first - 1.0).abs() < 1e-15 && (m.second - 1.0).abs() < 1e-11);
        assert!(ig_moments(0.0, 0.1).is_err());
        assert!(ig_moments(0.5, 0.0).is_err());
    }

    #[test]
    fn approx_examples() {
        assert!((aoi_approx(0.5f64, 0.25, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((aoi_approx(0.8f64, 0.16, 1.0).unwrap() - 1.25).abs() < 1e-15);
        let a = aoi_approx(0.4f64, 0.3, 0.5).unwrap();
        let b = aoi_approx(0.4, 0.3, 0.2).unwrap();
        assert!((b - a - 3.0).abs() < 1e-14);
        assert!(aoi_approx(0.0, 0.1, 1.0).is_err());
        assert!(aoi_approx(0.5, -0.1, 1.0).is_err());
        assert!(aoi_approx(0.5, 0.1, 1.5).is_err());
    }

    #[test]
    fn renewal_examples() {
        assert!((empirical_aoi_renewal(&[2u64; 10], 1.0f64).unwrap() - 1.5).abs() < 1e-15);
        assert!((empirical_aoi_renewal(&[1, 3], 0.5f64).unwrap() - 2.75).abs() < 1e-15);
        assert_eq!(empirical_aoi_renewal::<f64>(&[], 1.0), Err(Error::EmptySamples));
    }

    #[test]
    fn deterministic_reference_process() {
        let samples = reference_delivery_sampler(0.25, 1e-24, 1000, 4).unwrap();
        assert!(samples.iter().all(|&b| b == 4), "{:?}", &samples[..10]);
    }

    #[test]
    fn saturated_trace_has_unit_age() {
        let slots: Vec<u64> = (1..=100).collect();
        let aoi: f64 = trace_time_average_aoi(&slots, &slots, 100, 0).unwrap();
        assert_eq!(aoi, 1.0);
    }

    #[test]
    fn no_deliveries_grow_linearly() {
        let aoi: f64 = trace_time_average_aoi(&[], &[3, 7], 9, 0).unwrap();
        assert!((aoi - 5.0).abs() < 1e-15);
    }

    #[test]
    fn stale_delivery_keeps_old_stamp() {
        // Update generated in slot 2 (stamp 1); deliveries in slots 3 and 5.
        let aoi: f64 = trace_time_average_aoi(&[3, 5], &[2], 5, 0).unwrap();
        // Ages: 1, 2, 2, 3, 4.
        assert!((aoi - 12.0 / 5.0).abs() < 1e-15);
        let warm: f64 = trace_time_average_aoi(&[3, 5], &[2], 5, 2).unwrap();
        assert!((warm - 3.0).abs() < 1e-15);
    }
}
