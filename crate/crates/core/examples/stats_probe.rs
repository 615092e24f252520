//! Empirical check of the statistical properties the test suite pins down.

use pufauth_core::config::Config;
use pufauth_core::enroll;
use pufauth_core::exec;
use pufauth_core::keys;
use pufauth_core::puf::{
    derive_transmission_matrix, interrogate, speckle_correlation, LightParams, NoiseModel,
    TokenDisorder,
};
use pufauth_core::stats;

fn main() {
    let grid = pufauth_core::GridSpec::default();

    // speckle contrast at 4096 pixels
    let contrasts: Vec<f64> = exec::map_trials(100, |i| {
        let t = TokenDisorder::from_seed_index(1000 + i, 64, 4096);
        interrogate(&t, &LightParams::default_public(), &grid, &mut NoiseModel::noiseless())
            .unwrap()
            .contrast()
    });
    println!(
        "contrast: mean {:.4}, min {:.4}, max {:.4}",
        stats::mean(&contrasts),
        contrasts.iter().cloned().fold(f64::INFINITY, f64::min),
        contrasts.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );

    // cross-token speckle correlation
    let cross: Vec<f64> = exec::map_trials(100, |i| {
        let a = TokenDisorder::from_seed_index(2 * i, 64, 4096);
        let b = TokenDisorder::from_seed_index(2 * i + 1, 64, 4096);
        let p = LightParams::default_public();
        let sa = interrogate(&a, &p, &grid, &mut NoiseModel::noiseless()).unwrap();
        let sb = interrogate(&b, &p, &grid, &mut NoiseModel::noiseless()).unwrap();
        speckle_correlation(&sa, &sb).unwrap().abs()
    });
    println!("cross-token |rho|: mean {:.4}, max {:.4}",
        stats::mean(&cross),
        cross.iter().cloned().fold(f64::NEG_INFINITY, f64::max));

    // single-field sensitivity
    for (name, delta) in [
        ("wavelength", (1u8, 0u8, 0u8, 0u8, 0u64)),
        ("point-x", (0, 1, 0, 0, 0)),
        ("point-y", (0, 0, 1, 0, 0)),
        ("angle", (0, 0, 0, 1, 0)),
        ("mask", (0, 0, 0, 0, 1)),
    ] {
        let rhos: Vec<f64> = exec::map_trials(100, |i| {
            let t = TokenDisorder::from_seed_index(50_000 + i, 64, 4096);
            let base = LightParams {
                wavelength_index: (i % 15) as u8,
                incidence_point: ((i % 7) as u8, (i / 7 % 7) as u8),
                incidence_angle_index: (i % 7) as u8,
                phase_mask_seed: i,
                power: 1.0,
            };
            let changed = LightParams {
                wavelength_index: base.wavelength_index + delta.0,
                incidence_point: (base.incidence_point.0 + delta.1, base.incidence_point.1 + delta.2),
                incidence_angle_index: base.incidence_angle_index + delta.3,
                phase_mask_seed: base.phase_mask_seed + delta.4 * 7777,
                power: 1.0,
            };
            let sa = interrogate(&t, &base, &grid, &mut NoiseModel::noiseless()).unwrap();
            let sb = interrogate(&t, &changed, &grid, &mut NoiseModel::noiseless()).unwrap();
            speckle_correlation(&sa, &sb).unwrap().abs()
        });
        println!(
            "sensitivity {name}: mean |rho| {:.4}, max {:.4}",
            stats::mean(&rhos),
            rhos.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        );
    }

    // matrix entry correlation across seeds / wavelengths
    let t0 = TokenDisorder::from_seed_index(0, 64, 4096);
    let t1 = TokenDisorder::from_seed_index(1, 64, 4096);
    let m00 = derive_transmission_matrix(&t0, 0, &grid).unwrap();
    let m10 = derive_transmission_matrix(&t1, 0, &grid).unwrap();
    let m01 = derive_transmission_matrix(&t0, 1, &grid).unwrap();
    let flat = |m: &pufauth_core::puf::TransmissionMatrix| -> Vec<f64> {
        m.entries().iter().flat_map(|c| [c.re, c.im]).collect()
    };
    println!(
        "matrix corr seeds: {:.5}, wavelengths: {:.5}",
        stats::pearson(&flat(&m00), &flat(&m10)).unwrap(),
        stats::pearson(&flat(&m00), &flat(&m01)).unwrap()
    );

    // key-weight statistics at both sizes
    for (label, n_out, n_in) in [("4096x16", 4096usize, 16usize), ("512x16", 512, 16)] {
        let weights: Vec<f64> = exec::map_trials(2000, |i| {
            let t = TokenDisorder::from_seed_index(90_000 + i, n_in, n_out);
            let s = interrogate(&t, &LightParams::default_public(), &grid, &mut NoiseModel::noiseless()).unwrap();
            let (key, _) = keys::enroll_key(&s, 128).unwrap();
            key.bits().count_ones() as f64
        });
        let mean = stats::mean(&weights);
        let var = stats::std_dev(&weights).powi(2);
        println!("key weight {label}: mean {:.2} (want 64), var {:.2} (binomial 32)", mean, var);
    }

    // PIN chi-square at the pin-quality size (4096x16)
    let cfg = Config { n_in: 16, n_out: 4096, pin_key_len: 128, ..Config::default() };
    let pins: Vec<Option<u16>> = exec::map_trials(10_000, |i| {
        let t = TokenDisorder::from_seed_index(200_000 + i, cfg.n_in, cfg.n_out);
        enroll::enroll_stage_e1(&t, &LightParams::default_public(), &cfg)
            .ok()
            .map(|(pin, _)| pin.value())
    });
    let mut buckets = [0u64; 100];
    let mut ok = 0u64;
    for p in pins.into_iter().flatten() {
        buckets[(p / 100) as usize] += 1;
        ok += 1;
    }
    let chi = stats::chi_square_uniform(&buckets);
    println!(
        "pin chi-square (4096x16, {ok} samples): {:.1} vs critical {:.1}",
        chi,
        stats::chi_square_critical(99, 0.01)
    );

    // same at campaign size to see the distortion
    let ccfg = Config::campaign(128, 0.02, 0);
    let pins: Vec<Option<u16>> = exec::map_trials(10_000, |i| {
        let t = TokenDisorder::from_seed_index(300_000 + i, ccfg.n_in, ccfg.n_out);
        enroll::enroll_stage_e1(&t, &LightParams::default_public(), &ccfg)
            .ok()
            .map(|(pin, _)| pin.value())
    });
    let mut buckets = [0u64; 100];
    for p in pins.into_iter().flatten() {
        buckets[(p / 100) as usize] += 1;
    }
    println!("pin chi-square (512x16): {:.1}", stats::chi_square_uniform(&buckets));

    // stability at sigma=0.02 and 0.5
    for sigma in [0.02, 0.5] {
        let flips = exec::count_hits(1000, |i| {
            let t = TokenDisorder::from_seed_index(400_000 + i, 16, 512);
            let s0 = interrogate(&t, &LightParams::default_public(), &grid, &mut NoiseModel::noiseless()).unwrap();
            let (key, helper) = keys::enroll_key(&s0, 128).unwrap();
            let s1 = interrogate(&t, &LightParams::default_public(), &grid, &mut NoiseModel::new(sigma, i)).unwrap();
            let rep = keys::reproduce_key(&s1, &helper).unwrap();
            rep != key
        });
        println!("key mismatch rate at sigma={sigma}: {}/1000", flips);
    }

    // inter-token fractional distance
    let dists: Vec<f64> = exec::map_trials(100, |i| {
        let a = TokenDisorder::from_seed_index(500_000 + 2 * i, 16, 512);
        let b = TokenDisorder::from_seed_index(500_000 + 2 * i + 1, 16, 512);
        let p = LightParams::default_public();
        let sa = interrogate(&a, &p, &grid, &mut NoiseModel::noiseless()).unwrap();
        let sb = interrogate(&b, &p, &grid, &mut NoiseModel::noiseless()).unwrap();
        let (ka, _) = keys::enroll_key(&sa, 128).unwrap();
        let (kb, _) = keys::enroll_key(&sb, 128).unwrap();
        keys::hamming_distance(&ka, &kb).unwrap() as f64 / 128.0
    });
    println!(
        "inter-token distance: mean {:.4}, min {:.4}, max {:.4}",
        stats::mean(&dists),
        dists.iter().cloned().fold(f64::INFINITY, f64::min),
        dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );
}
