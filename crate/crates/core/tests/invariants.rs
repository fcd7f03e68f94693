mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sensorsim::fourier;
use sensorsim::imaging::{Raster, SensorConfig};
use sensorsim::optics;
use sensorsim::pipeline::{self, MtfMode, PreprocessMode, SimulationOptions};
use sensorsim::radiometry::NoiseMode;

use common::*;

fn random_raster(h: usize, w: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Raster::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn band_limited_resampling_keeps_the_mean(seed in 0u64..1000, h in 40usize..90, w in 40usize..90, factor in 1.0f64..4.0) {
        let r = random_raster(h, w, seed);
        let spec = fourier::forward_spectrum(&r, 1.0).unwrap();
        let mut budget = optics::frequency_budget(&SensorConfig::reference(0.5, 0.06)).unwrap();
        // below output Nyquist nothing can fold onto DC
        budget.nu_cutoff_gnd = 0.45 / factor;
        let out = fourier::inverse_spectrum(&fourier::resample_with_alias(&spec, &budget, factor).unwrap()).unwrap();
        prop_assert!((out.mean() - r.mean()).abs() < 1e-9);
    }

    #[test]
    fn system_mtf_is_bounded_and_unity_at_dc(f in 0.1f64..1.0, d in 0.05f64..0.075) {
        let cfg = SensorConfig::reference(f, d);
        let axis: Vec<f64> = (-20..=20).map(|i| i as f64 * 2e3).collect();
        for band in 0..cfg.band_count() {
            let tf = optics::system_mtf(&cfg, band, &axis, &axis).unwrap();
            prop_assert!((tf.at(20, 20) - 1.0).abs() < 1e-12);
            for v in &tf.values {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(v));
            }
        }
    }

    #[test]
    fn budget_relations_hold(f in 0.1f64..1.0, d in 0.05f64..0.075) {
        let cfg = SensorConfig::reference(f, d);
        let b = optics::frequency_budget(&cfg).unwrap();
        let fnum = f / d;
        prop_assert!((b.q - 4.5e-7 * fnum / 6e-6).abs() < 1e-12);
        prop_assert!((b.gsd_m - 3.0 / f).abs() < 1e-9);
        prop_assert!(b.nu_cutoff_gnd <= b.nu_optcut_gnd.max(b.nu_nyquist_gnd) + 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_and_finite(seed in 0u64..50, f in 0.2f64..1.0) {
        let image = dn_image(natural_scene(224, seed, 0.03..0.08, 0.3), 2.0);
        let md = metadata("p", "c", 2.0);
        let cfg = SensorConfig::reference(f, 0.06);
        let opts = SimulationOptions { seed, ..SimulationOptions::default() };
        let a = pipeline::simulate(&image, &md, &cfg, PreprocessMode::Crop, &opts).unwrap();
        let b = pipeline::simulate(&image, &md, &cfg, PreprocessMode::Crop, &opts).unwrap();
        prop_assert_eq!(a.output.bands(), b.output.bands());
        prop_assert_eq!(a.output.height(), a.reference.height());
        prop_assert_eq!(a.output.width(), a.reference.width());
        prop_assert!(a.output.bands().iter().all(Raster::is_finite));
        let c = pipeline::simulate(&image, &md, &cfg, PreprocessMode::Crop, &SimulationOptions { seed: seed + 1, ..opts }).unwrap();
        prop_assert_ne!(a.output.bands(), c.output.bands());
    }

    #[test]
    fn oversampled_noise_free_chain_preserves_band_means(seed in 0u64..50, f in 1.4f64..2.5) {
        let image = dn_image(natural_scene(224, seed, 0.03..0.08, 0.3), 1.0);
        let md = metadata("p", "c", 1.0);
        let cfg = SensorConfig::reference(f, 0.05);
        let opts = SimulationOptions { noise: NoiseMode::Off, quantize: false, seed, ..SimulationOptions::default() };
        let p = pipeline::simulate(&image, &md, &cfg, PreprocessMode::Crop, &opts).unwrap();
        for (o, r) in p.output.bands().iter().zip(p.reference.bands()) {
            // the final bilinear resize is only mean-preserving to first order
            prop_assert!((o.mean() / r.mean() - 1.0).abs() < 5e-3);
        }
    }

    #[test]
    fn unity_mtf_never_blurs_more(seed in 0u64..50, f in 0.2f64..0.6) {
        let image = dn_image(natural_scene(224, seed, 0.03..0.08, 0.3), 2.0);
        let md = metadata("p", "c", 2.0);
        let cfg = SensorConfig::reference(f, 0.05);
        let base = SimulationOptions { noise: NoiseMode::Off, quantize: false, seed, ..SimulationOptions::default() };
        let variance = |r: &Raster| { let m = r.mean(); r.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() };
        let blurred = pipeline::simulate(&image, &md, &cfg, PreprocessMode::Crop, &base).unwrap();
        let sharp = pipeline::simulate(&image, &md, &cfg, PreprocessMode::Crop, &SimulationOptions { mtf: MtfMode::Unity, ..base }).unwrap();
        prop_assert!(variance(sharp.output.band(0)) >= variance(blurred.output.band(0)) - 1e-12);
    }
}
