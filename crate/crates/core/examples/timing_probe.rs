//! Rough throughput probe for sizing Monte-Carlo campaigns.

use std::time::Instant;

use pufauth_core::adversary;
use pufauth_core::config::Config;
use pufauth_core::enroll;
use pufauth_core::puf::{Interrogator, LightParams, NoiseModel, TokenDisorder};

fn main() {
    let campaign = Config::campaign(128, 0.02, 1);
    println!(
        "campaign config: n_out={} n_in={}",
        campaign.n_out, campaign.n_in
    );

    // E1 enrollment throughput at campaign size
    let t0 = Instant::now();
    let reps = 2000u64;
    let mut acc = 0u32;
    for i in 0..reps {
        let token = TokenDisorder::from_seed_index(i, campaign.n_in, campaign.n_out);
        match enroll::enroll_stage_e1(&token, &LightParams::default_public(), &campaign) {
            Ok((pin, _h)) => acc = acc.wrapping_add(pin.value() as u32),
            Err(_) => continue, // rare rejection-sampling failure
        }
    }
    println!(
        "E1 campaign-size: {:.3} ms/enroll (checksum {acc})",
        t0.elapsed().as_secs_f64() * 1e3 / reps as f64
    );

    // cached interrogation at campaign size
    let token = TokenDisorder::from_seed_index(0, campaign.n_in, campaign.n_out);
    let bench = Interrogator::new(token, campaign.grid);
    bench.matrix(0).unwrap();
    let t0 = Instant::now();
    let reps = 20_000u64;
    let mut s = 0.0;
    for i in 0..reps {
        s += bench
            .interrogate(&LightParams::default_public(), &mut NoiseModel::new(0.02, i))
            .unwrap()
            .contrast();
    }
    println!(
        "cached interrogation campaign-size: {:.1} us ({s:.1})",
        t0.elapsed().as_secs_f64() * 1e6 / reps as f64
    );

    // full default-size interrogation
    let dcfg = Config::default();
    let token = TokenDisorder::from_seed_index(0, dcfg.n_in, dcfg.n_out);
    let t0 = Instant::now();
    let bench = Interrogator::new(token, dcfg.grid);
    bench.matrix(0).unwrap();
    println!(
        "matrix derivation 4096x64: {:.2} ms",
        t0.elapsed().as_secs_f64() * 1e3
    );
    let t0 = Instant::now();
    let reps = 500u64;
    let mut s = 0.0;
    for i in 0..reps {
        s += bench
            .interrogate(&LightParams::default_public(), &mut NoiseModel::new(0.02, i))
            .unwrap()
            .contrast();
    }
    println!(
        "cached interrogation 4096x64: {:.3} ms ({s:.1})",
        t0.elapsed().as_secs_f64() * 1e3 / reps as f64
    );

    // pin-guess campaign throughput (parallel)
    let t0 = Instant::now();
    let trials = 20_000u64;
    let stats = adversary::attack_pin_guess(trials, &campaign, 42).unwrap();
    let per = t0.elapsed().as_secs_f64() * 1e3 / trials as f64;
    println!(
        "pin-guess campaign: {:.3} ms/trial -> 1e6 trials ~ {:.0} s (successes={})",
        per,
        per * 1e3,
        stats.successes
    );
}
