//! Ornstein-Uhlenbeck magnetic-field noise: one trajectory, its ensemble
//! moments against the closed form, and the averaged power spectrum.
//!
//! `cargo run --release --example ou_noise`

use rabi_ccd::noise::{
    analytic_moments, periodogram, spectral_density_analytic, NoiseRealization, OuParams, SpectralEstimate,
};

fn main() -> rabi_ccd::Result<()> {
    let params = OuParams::new(50e-6, 1.5e11)?;
    let dt = 0.5e-6;
    println!(
        "f_cr = {:.0} Hz, stationary sd = {:.1} rad/s",
        params.crossover_frequency(),
        params.stationary_variance().sqrt()
    );

    let path = NoiseRealization::generate(params, dt, 1001, 7)?;
    for (t, x) in path.times().zip(&path.samples).step_by(200) {
        println!("t = {:>6.1} us  delta_m = {x:>8.1}", t * 1e6);
    }

    let chains = 5000;
    let finals: Vec<f64> = (0..chains)
        .map(|k| NoiseRealization::generate(params, dt, 101, k as u64).map(|r| *r.samples.last().unwrap()))
        .collect::<rabi_ccd::Result<_>>()?;
    let mean = finals.iter().sum::<f64>() / chains as f64;
    let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (chains - 1) as f64;
    let (_, exact) = analytic_moments(100.0 * dt, &params)?;
    println!("t = 50 us over {chains} chains: mean {mean:.1}, variance {var:.4e} (exact {exact:.4e})");

    let stationary = params.with_x0(0.0);
    let estimates: Vec<SpectralEstimate> = (0..20)
        .map(|k| periodogram(&NoiseRealization::generate(stationary, dt, 1 << 16, 100 + k)?))
        .collect::<rabi_ccd::Result<_>>()?;
    let avg = SpectralEstimate::average(&estimates)?;
    let f_cr = params.crossover_frequency();
    if let Some(slope) = avg.loglog_slope(10.0 * f_cr, 100.0 * f_cr) {
        println!("log-log slope above 10 f_cr: {slope:.2}");
    }
    println!(
        "analytic S(f_cr) / S(0) = {:.3}",
        spectral_density_analytic(f_cr, &params) / spectral_density_analytic(0.0, &params)
    );
    Ok(())
}
