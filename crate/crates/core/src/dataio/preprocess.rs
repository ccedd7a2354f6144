//! Preprocessing: zero-imputation, per-plate MAD normalization against
//! negative controls, and global quantile clipping.

use std::collections::BTreeMap;

use super::Dataset;
use crate::{CoreError, Result};

/// Scale factor that makes the MAD consistent with the standard deviation
/// under normality.
pub const MAD_CONSISTENCY: f64 = 1.4826;
/// Floor applied to zero-MAD divisors.
pub const MAD_FLOOR: f64 = 1e-6;
/// Clipping quantiles, computed over the full dataset after normalization.
pub const CLIP_QUANTILES: (f64, f64) = (0.01, 0.99);

/// What preprocessing had to touch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocessReport {
    /// NaN/Inf entries replaced with zero.
    pub imputed: usize,
    /// (plate, feature) pairs whose control MAD was zero and whose divisor
    /// was floored.
    pub floored_divisors: usize,
}

/// Replaces every NaN/Inf entry with zero; returns the number replaced.
pub fn impute_non_finite(dataset: &mut Dataset) -> usize {
    let mut count = 0;
    for p in &mut dataset.profiles {
        for v in &mut p.values {
            if !v.is_finite() {
                *v = 0.0;
                count += 1;
            }
        }
    }
    count
}

/// Per plate and feature: `x ← (x − median_ctrl) / (1.4826·MAD_ctrl)` with
/// the median/MAD taken over that plate's negative-control wells. Returns
/// the number of floored divisors.
pub fn mad_normalize(dataset: &mut Dataset) -> Result<usize> {
    let mut plate_controls: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut plate_members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in dataset.profiles.iter().enumerate() {
        plate_members.entry(&p.plate).or_default().push(i);
        if p.is_negative_control {
            plate_controls.entry(&p.plate).or_default().push(i);
        }
    }
    for (&plate, members) in &plate_members {
        let n_ctrl = plate_controls.get(plate).map_or(0, |v| v.len());
        if n_ctrl < 2 {
            return Err(CoreError::invalid(format!(
                "plate {plate} has {n_ctrl} negative-control wells, need at least 2"
            )));
        }
        let _ = members;
    }

    let n_feat = dataset.schema.len();
    let mut floored = 0usize;
    // Collect the per-plate transforms first, then apply; avoids borrowing
    // profiles mutably while reading controls.
    let mut transforms: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (plate, ctrl_idx) in &plate_controls {
        let mut per_feature = Vec::with_capacity(n_feat);
        for feat in 0..n_feat {
            let mut vals: Vec<f64> = ctrl_idx
                .iter()
                .map(|&i| dataset.profiles[i].values[feat])
                .collect();
            let med = median_in_place(&mut vals);
            let mut devs: Vec<f64> = vals.iter().map(|v| (v - med).abs()).collect();
            let mad = median_in_place(&mut devs);
            let mut divisor = MAD_CONSISTENCY * mad;
            if divisor < MAD_FLOOR {
                divisor = MAD_FLOOR;
                floored += 1;
            }
            per_feature.push((med, divisor));
        }
        transforms.insert(plate.to_string(), per_feature);
    }
    for p in &mut dataset.profiles {
        let tf = &transforms[&p.plate];
        for (v, (med, div)) in p.values.iter_mut().zip(tf) {
            *v = (*v - med) / div;
        }
    }
    Ok(floored)
}

/// Clips each feature to its `[lo, hi]` quantiles computed over the whole
/// dataset (linear interpolation between order statistics).
pub fn clip_to_quantiles(dataset: &mut Dataset, lo: f64, hi: f64) {
    let n_feat = dataset.schema.len();
    for feat in 0..n_feat {
        let mut vals: Vec<f64> = dataset.profiles.iter().map(|p| p.values[feat]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let qlo = quantile_sorted(&vals, lo);
        let qhi = quantile_sorted(&vals, hi);
        for p in &mut dataset.profiles {
            p.values[feat] = p.values[feat].clamp(qlo, qhi);
        }
    }
}

/// The full pipeline: impute, MAD-normalize per plate, clip globally.
/// Requires at least two negative controls on every plate.
pub fn preprocess(dataset: &Dataset) -> Result<(Dataset, PreprocessReport)> {
    let mut out = dataset.clone();
    let mut report = PreprocessReport::default();
    report.imputed = impute_non_finite(&mut out);
    report.floored_divisors = mad_normalize(&mut out)?;
    clip_to_quantiles(&mut out, CLIP_QUANTILES.0, CLIP_QUANTILES.1);
    Ok((out, report))
}

fn median_in_place(vals: &mut [f64]) -> f64 {
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthConfig};

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_sources: 2,
            plates_per_source: 2,
            wells_per_plate: 30,
            controls_per_plate: 6,
            n_compounds: 10,
            n_moas: 3,
            n_features: 12,
            n_groups: 4,
            seed: 42,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn control_medians_are_zero_after_normalization() {
        let (data, _) = generate_synthetic(&small_config()).unwrap();
        let mut normed = data.clone();
        impute_non_finite(&mut normed);
        mad_normalize(&mut normed).unwrap();
        for plate in normed.plates() {
            for feat in 0..normed.schema.len() {
                let mut ctrl: Vec<f64> = normed
                    .profiles
                    .iter()
                    .filter(|p| p.plate == plate && p.is_negative_control)
                    .map(|p| p.values[feat])
                    .collect();
                let med = median_in_place(&mut ctrl);
                assert!(med.abs() < 1e-12, "plate {plate} feat {feat}: median {med}");
            }
        }
    }

    #[test]
    fn injected_inf_is_imputed_to_zero() {
        let (mut data, _) = generate_synthetic(&small_config()).unwrap();
        data.profiles[0].values[3] = f64::INFINITY;
        data.profiles[1].values[5] = f64::NAN;
        let imputed = impute_non_finite(&mut data);
        assert_eq!(imputed, 2);
        assert_eq!(data.profiles[0].values[3], 0.0);
        assert_eq!(data.profiles[1].values[5], 0.0);

        // Full pipeline on infected data equals the pipeline on pre-zeroed data.
        let (infected, _) = generate_synthetic(&small_config()).unwrap();
        let mut zeroed = infected.clone();
        let mut with_inf = infected;
        with_inf.profiles[0].values[3] = f64::NEG_INFINITY;
        zeroed.profiles[0].values[3] = 0.0;
        let (a, ra) = preprocess(&with_inf).unwrap();
        let (b, rb) = preprocess(&zeroed).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.imputed, rb.imputed + 1);
    }

    #[test]
    fn values_above_high_quantile_clip_exactly_to_it() {
        let (data, _) = generate_synthetic(&small_config()).unwrap();
        let mut normed = data;
        impute_non_finite(&mut normed);
        mad_normalize(&mut normed).unwrap();
        let feat = 0;
        let mut vals: Vec<f64> = normed.profiles.iter().map(|p| p.values[feat]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q99 = quantile_sorted(&vals, 0.99);
        let above: Vec<usize> = (0..normed.profiles.len())
            .filter(|&i| normed.profiles[i].values[feat] > q99)
            .collect();
        assert!(!above.is_empty(), "fixture should contain outliers");
        clip_to_quantiles(&mut normed, 0.01, 0.99);
        for i in above {
            assert_eq!(normed.profiles[i].values[feat], q99);
        }
    }

    #[test]
    fn zero_mad_divisor_is_floored_and_reported() {
        let (mut data, _) = generate_synthetic(&small_config()).unwrap();
        let plate = data.profiles[0].plate.clone();
        for p in data
            .profiles
            .iter_mut()
            .filter(|p| p.plate == plate && p.is_negative_control)
        {
            p.values[0] = 7.5; // constant controls → MAD 0
        }
        let (out, report) = preprocess(&data).unwrap();
        assert!(report.floored_divisors >= 1);
        assert!(out.profiles.iter().all(|p| p.values.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn plate_with_single_control_is_rejected() {
        let (mut data, _) = generate_synthetic(&small_config()).unwrap();
        let plate = data.profiles[0].plate.clone();
        let mut kept_one = false;
        data.profiles.retain(|p| {
            if p.plate == plate && p.is_negative_control {
                if kept_one {
                    return false;
                }
                kept_one = true;
            }
            true
        });
        assert!(preprocess(&data).is_err());
    }

    #[test]
    fn profile_order_does_not_change_preprocessed_values() {
        let (data, _) = generate_synthetic(&small_config()).unwrap();
        let (a, _) = preprocess(&data).unwrap();
        let mut shuffled = data;
        shuffled.profiles.reverse();
        let (b, _) = preprocess(&shuffled).unwrap();
        for pa in &a.profiles {
            let pb = b
                .profiles
                .iter()
                .find(|p| p.plate == pa.plate && p.well == pa.well)
                .unwrap();
            assert_eq!(pa.values, pb.values);
        }
    }
}
