//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantity (visible with `--nocapture`; failures always show).
//!
//! Tolerances are pinned in the constants right where they are asserted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refldiff_core::eval;
use refldiff_core::geometry::{self, Domain};
use refldiff_core::inference::{self, GuidedScore};
use refldiff_core::kernel::{self, cdf_table, eval_cdf_table, ReflectedKernel};
use refldiff_core::quad;
use refldiff_core::samplers::{
    chain_rng, OdeMode, Sampler, SamplerConfig, SamplerMethod, ScoreFunction, ZeroScore,
};
use refldiff_core::schedule::NoiseSchedule;
use refldiff_core::score::toy::{ExactScore, ToyDistribution, TwoClassMixture};
use refldiff_core::score::{self, NetworkArch, ScoreNetwork, TrainConfig};
use std::time::Instant;

/// W1 between a 1D sample batch and a density known up to normalization,
/// via a tabulated quadrature CDF on [0, 1].
fn w1_to_density(samples: &[f64], density: impl Fn(f64) -> f64) -> f64 {
    let table = cdf_table(&density, 4096);
    let total = *table.last().unwrap();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eval::wasserstein1_vs_cdf(&sorted, |t| eval_cdf_table(&table, t) / total, 0.0, 1.0, 10_000)
        .unwrap()
}

fn first_coords(points: &[Vec<f64>]) -> Vec<f64> {
    points.iter().map(|p| p[0]).collect()
}

#[test]
fn criterion_01_kernel_branch_agreement() {
    let start = Instant::now();
    let mut max_gap = 0.0f64;
    let mut arg = (0.0, 0.0, 0.0);
    for i in 0..20 {
        let x = i as f64 / 19.0;
        for j in 0..20 {
            let y = j as f64 / 19.0;
            for l in 0..5 {
                let v = 0.09 + 0.4 * l as f64 / 4.0;
                let a = kernel::gaussian_image_sum(x, y, v, 5).unwrap();
                let b = kernel::eigen_sum(x, y, v, 5).unwrap();
                if (a - b).abs() > max_gap {
                    max_gap = (a - b).abs();
                    arg = (x, y, v);
                }
            }
        }
    }
    let elapsed = start.elapsed();
    // Context for the failure mode: the discrepancy at the branch point and
    // over the upper half of the range, where both truncations converge.
    let mut max_at_branch = 0.0f64;
    let mut max_above = 0.0f64;
    for i in 0..20 {
        let x = i as f64 / 19.0;
        for j in 0..20 {
            let y = j as f64 / 19.0;
            let a = kernel::gaussian_image_sum(x, y, 0.1225, 5).unwrap();
            let b = kernel::eigen_sum(x, y, 0.1225, 5).unwrap();
            max_at_branch = max_at_branch.max((a - b).abs());
            for &v in &[0.19, 0.29, 0.39, 0.49] {
                let a = kernel::gaussian_image_sum(x, y, v, 5).unwrap();
                let b = kernel::eigen_sum(x, y, v, 5).unwrap();
                max_above = max_above.max((a - b).abs());
            }
        }
    }
    assert!(elapsed.as_secs_f64() < 1.0, "branch-agreement grid took {elapsed:?}");
    println!(
        "acceptance criterion 01: max |image - eigen| = {max_gap:.3e} at {arg:?} \
         (branch point: {max_at_branch:.3e}, v >= 0.19: {max_above:.3e}, runtime {elapsed:?})"
    );
    assert!(
        max_gap < 1e-8,
        "criterion 1 FAILED: max |gaussian_image_sum - eigen_sum| = {max_gap:.3e} at \
         (x, y, v) = {arg:?} exceeds 1e-8 with M = K = 5. The gap is the K = 5 eigen-series \
         truncation error 2 exp(-36 pi^2 v / 2) ~ 2.3e-7 at v = 0.09; both series are exact \
         to 1e-9 at the branch point v = 0.1225 ({max_at_branch:.3e}) and to machine \
         precision for v >= 0.19 ({max_above:.3e})."
    );
    println!("acceptance criterion 01: PASS");
}

#[test]
fn criterion_02_kernel_normalization_and_neumann() {
    let k = ReflectedKernel::default();
    let mut worst_mass = 0.0f64;
    let mut worst_neumann = 0.0f64;
    for i in 0..10 {
        let x = (i as f64 + 0.5) / 10.0;
        for j in 0..10 {
            let v = 1e-4 * (25.0f64 / 1e-4).powf(j as f64 / 9.0);
            let mass = quad::integrate_unit_adaptive(
                |y| k.transition_density_1d(x, y, v).unwrap_or(0.0),
                v.sqrt(),
            );
            worst_mass = worst_mass.max((mass - 1.0).abs());

            let h = 1e-5;
            let peak = k.transition_density_1d(x, x, v).unwrap();
            let p = |y: f64| k.transition_density_1d(x, y, v).unwrap_or(0.0);
            let d0 = (-3.0 * p(0.0) + 4.0 * p(h) - p(2.0 * h)) / (2.0 * h);
            let d1 = (3.0 * p(1.0) - 4.0 * p(1.0 - h) + p(1.0 - 2.0 * h)) / (2.0 * h);
            worst_neumann = worst_neumann.max(d0.abs() / peak).max(d1.abs() / peak);
        }
    }
    println!(
        "acceptance criterion 02: max |mass - 1| = {worst_mass:.3e}, \
         boundary derivative / peak = {worst_neumann:.3e}"
    );
    assert!(worst_mass < 1e-6, "normalization defect {worst_mass:.3e}");
    assert!(worst_neumann < 1e-4, "Neumann defect {worst_neumann:.3e}");
    println!("acceptance criterion 02: PASS");
}

#[test]
fn criterion_03_chapman_kolmogorov() {
    let k = ReflectedKernel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20_03);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: f64 = rng.gen();
        let y: f64 = rng.gen();
        let v1 = 1e-3 * (2.0f64 / 1e-3).powf(rng.gen::<f64>());
        let v2 = 1e-3 * (2.0f64 / 1e-3).powf(rng.gen::<f64>());
        let direct = k.transition_density_1d(x, y, v1 + v2).unwrap();
        let composed = quad::integrate_unit_adaptive(
            |z| {
                k.transition_density_1d(z, y, v1).unwrap_or(0.0)
                    * k.transition_density_1d(x, z, v2).unwrap_or(0.0)
            },
            v1.min(v2).sqrt(),
        );
        worst = worst.max((direct - composed).abs());
    }
    println!("acceptance criterion 03: max semigroup defect = {worst:.3e} over 50 tuples");
    assert!(worst < 1e-5, "Chapman-Kolmogorov defect {worst:.3e}");
    println!("acceptance criterion 03: PASS");
}

#[test]
fn criterion_04_score_correctness() {
    let k = ReflectedKernel::default();
    let schedule = NoiseSchedule::sample_quality();

    // Transition scores against central differences of the log density.
    let h = 1e-6;
    let mut worst_transition = 0.0f64;
    for &v in &[1e-3, 0.02, 0.1225, 0.8, 4.0] {
        for i in 1..8 {
            let x = i as f64 / 8.0;
            for j in 1..8 {
                let y = j as f64 / 8.0;
                let analytic = k.transition_score_1d(x, y, v).unwrap();
                let fd = (k.transition_density_1d(x, y + h, v).unwrap().ln()
                    - k.transition_density_1d(x, y - h, v).unwrap().ln())
                    / (2.0 * h);
                worst_transition = worst_transition.max((analytic - fd).abs() / (1.0 + analytic.abs()));
            }
        }
    }
    assert!(worst_transition < 1e-5, "transition score vs FD: {worst_transition:.3e}");

    // Toy-mixture scores.
    let toy = ToyDistribution::two_bump_2d();
    let mut worst_toy = 0.0f64;
    for &t in &[0.05, 0.3, 0.7] {
        for &x in &[[0.2, 0.3], [0.5, 0.5], [0.85, 0.15], [0.4, 0.9]] {
            let s = toy.score_t(&k, &schedule, &x, t).unwrap();
            for j in 0..2 {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += h;
                xm[j] -= h;
                let fd = (toy.density_t(&k, &schedule, &xp, t).unwrap().ln()
                    - toy.density_t(&k, &schedule, &xm, t).unwrap().ln())
                    / (2.0 * h);
                worst_toy = worst_toy.max((s[j] - fd).abs() / (1.0 + s[j].abs()));
            }
        }
    }
    assert!(worst_toy < 1e-5, "toy score vs FD: {worst_toy:.3e}");

    // Network parameter gradients against central differences.
    let mut rng = ChaCha8Rng::seed_from_u64(20_04);
    let arch = NetworkArch {
        data_dim: 2,
        hidden_width: 8,
        hidden_layers: 2,
        time_embed_dim: 8,
        output_scale: true,
    };
    let mut net = ScoreNetwork::init(arch, schedule, &mut rng).unwrap();
    let batch: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen(), rng.gen()]).collect();
    let samples = score::draw_loss_samples(&k, &schedule, &batch, &mut rng).unwrap();
    let (_, grad) = score::loss_and_grad(&net, &samples).unwrap();
    let mut worst_grad = 0.0f64;
    let fd_h = 1e-6;
    for i in (0..net.n_params()).step_by(5) {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + fd_h;
        let (lp, _) = score::loss_and_grad(&net, &samples).unwrap();
        net.params_mut()[i] = orig - fd_h;
        let (lm, _) = score::loss_and_grad(&net, &samples).unwrap();
        net.params_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * fd_h);
        let denom = fd.abs().max(grad[i].abs()).max(1e-3);
        worst_grad = worst_grad.max((fd - grad[i]).abs() / denom);
    }
    assert!(worst_grad < 1e-4, "network gradient vs FD: {worst_grad:.3e}");

    println!(
        "acceptance criterion 04: transition {worst_transition:.3e}, toy {worst_toy:.3e}, \
         network grads {worst_grad:.3e}"
    );
    println!("acceptance criterion 04: PASS");
}

#[test]
fn criterion_05_cdsm_equals_csm_up_to_constant() {
    // Prop-4.1 check by quadrature at fixed t: loss differences between two
    // fixed score candidates agree across the conditional (CDSM) and
    // marginal (CSM) forms.
    let k = ReflectedKernel::default();
    let schedule = NoiseSchedule::sample_quality();
    let toy = ToyDistribution::two_bump_1d();
    let t = 0.5;
    let v = schedule.accumulated_variance(0.0, t).unwrap();
    let g2 = schedule.gbar(t).powi(2);

    let s1 = |x: f64| 0.3 * (2.0 * std::f64::consts::PI * x).sin();
    let s2 = |x: f64| 0.5 - x;

    let cdsm = |s: &dyn Fn(f64) -> f64| -> f64 {
        quad::integrate(
            |x0| {
                let p0 = toy.density(&k, &[x0], 0.0).unwrap();
                if p0 < 1e-14 {
                    return 0.0;
                }
                p0 * quad::integrate(
                    |xt| {
                        let trans = k.transition_density_1d(x0, xt, v).unwrap();
                        let target = k.transition_score_1d(x0, xt, v).unwrap();
                        let diff = s(xt) - target;
                        trans * g2 * diff * diff
                    },
                    0.0,
                    1.0,
                    100,
                    16,
                )
            },
            0.0,
            1.0,
            100,
            16,
        )
    };
    let csm = |s: &dyn Fn(f64) -> f64| -> f64 {
        quad::integrate(
            |xt| {
                let pt = toy.density_t(&k, &schedule, &[xt], t).unwrap();
                let target = toy.score_t(&k, &schedule, &[xt], t).unwrap()[0];
                let diff = s(xt) - target;
                pt * g2 * diff * diff
            },
            0.0,
            1.0,
            200,
            16,
        )
    };

    let delta_cdsm = cdsm(&s1) - cdsm(&s2);
    let delta_csm = csm(&s1) - csm(&s2);
    let gap = (delta_cdsm - delta_csm).abs();
    println!(
        "acceptance criterion 05: dCDSM = {delta_cdsm:.8}, dCSM = {delta_csm:.8}, \
         |gap| = {gap:.3e}"
    );
    assert!(gap < 1e-3, "Prop 4.1 constant-gap defect {gap:.3e}");
    println!("acceptance criterion 05: PASS");
}

#[test]
fn criterion_06_exact_score_samplers_agree() {
    let k = ReflectedKernel::default();
    let schedule = NoiseSchedule::sample_quality();
    let toy = ToyDistribution::two_bump_1d();
    let score = ExactScore { toy: &toy, kernel: &k, schedule: &schedule };
    let sampler = Sampler::new(&k, &schedule, Domain::UnitInterval);
    let n = 10_000;
    let steps = 1000;

    let variants: Vec<(&str, SamplerMethod)> = vec![
        ("reflect-em", SamplerMethod::ReflectEm),
        ("pc", SamplerMethod::PredictorCorrector),
        ("ode", SamplerMethod::ProbabilityFlowOde),
        ("annealed-0", SamplerMethod::AnnealedSde { gbar_scale: 0.0 }),
        ("annealed-0.5", SamplerMethod::AnnealedSde { gbar_scale: 0.5 }),
        ("annealed-1", SamplerMethod::AnnealedSde { gbar_scale: 1.0 }),
    ];
    let mut batches: Vec<(&str, Vec<f64>)> = Vec::new();
    for (i, (name, method)) in variants.iter().enumerate() {
        let config = SamplerConfig::new(*method, steps, 600 + i as u64).unwrap();
        let pts = sampler.sample_batch(&score, &config, n).unwrap();
        batches.push((name, first_coords(&pts)));
    }

    let density = |x: f64| toy.density(&k, &[x], 0.0).unwrap();
    for (name, xs) in &batches {
        let w1 = w1_to_density(xs, density);
        println!("acceptance criterion 06: {name} W1 to target = {w1:.4}");
        assert!(w1 < 0.03, "{name}: W1 {w1:.4} exceeds 0.03");
    }
    for i in 0..batches.len() {
        for j in i + 1..batches.len() {
            let w1 = eval::wasserstein1_1d(&batches[i].1, &batches[j].1).unwrap();
            assert!(
                w1 < 0.03,
                "pairwise {} vs {}: W1 {w1:.4} exceeds 0.03",
                batches[i].0,
                batches[j].0
            );
        }
    }
    println!("acceptance criterion 06: PASS");
}

#[test]
fn criterion_07_thresholding_convergence() {
    let start = Instant::now();
    let k = ReflectedKernel::default();
    let schedule = NoiseSchedule::sample_quality();
    let toy = ToyDistribution::two_bump_1d();
    let score = ExactScore { toy: &toy, kernel: &k, schedule: &schedule };
    let sampler = Sampler::new(&k, &schedule, Domain::UnitInterval);
    let n = 20_000;

    let reference = {
        let config = SamplerConfig::new(SamplerMethod::ReflectEm, 3200, 700).unwrap();
        first_coords(&sampler.sample_batch(&score, &config, n).unwrap())
    };
    let reference_b = {
        let config = SamplerConfig::new(SamplerMethod::ReflectEm, 3200, 701).unwrap();
        first_coords(&sampler.sample_batch(&score, &config, n).unwrap())
    };
    let noise_floor = eval::wasserstein1_1d(&reference, &reference_b).unwrap();
    println!("acceptance criterion 07: reference self-distance = {noise_floor:.4}");

    let ladder = [50usize, 100, 200, 400, 800];
    let mut w1s = Vec::new();
    for (i, &steps) in ladder.iter().enumerate() {
        let config = SamplerConfig::new(SamplerMethod::ThresholdStatic, steps, 710 + i as u64).unwrap();
        let xs = first_coords(&sampler.sample_batch(&score, &config, n).unwrap());
        let w1 = eval::wasserstein1_1d(&xs, &reference).unwrap();
        println!("acceptance criterion 07: static thresholding steps {steps}: W1 = {w1:.4}");
        w1s.push(w1);
    }
    for i in 1..w1s.len() {
        assert!(
            w1s[i] <= 1.2 * w1s[i - 1] + noise_floor,
            "W1 not non-increasing within 20% noise: {} -> {} (floor {noise_floor:.4})",
            w1s[i - 1],
            w1s[i]
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "thresholding study took {elapsed:?}");
    println!("acceptance criterion 07: PASS ({elapsed:?})");
}

#[test]
fn criterion_08_elbo_uniform_and_bound() {
    let k = ReflectedKernel::default();
    let schedule = NoiseSchedule::likelihood();

    // Uniform data, zero-score model: total ~ 0 nats in d = 1 and d = 16.
    let mut rng = ChaCha8Rng::seed_from_u64(20_08);
    for &d in &[1usize, 16] {
        let zero = ZeroScore(d);
        for _ in 0..3 {
            let x = geometry::uniform_sample(&Domain::UnitHypercube(d), &mut rng);
            let report = inference::elbo_pointwise(&k, &schedule, &x, &zero, 64, &mut rng).unwrap();
            println!(
                "acceptance criterion 08: d={d} uniform total = {:.3e} \
                 (score {:.1e}, prior {:.1e}, recon {:.1e})",
                report.total_nats, report.score_term, report.prior_term, report.reconstruction_term
            );
            assert!(
                report.total_nats.abs() < 2e-3,
                "d={d}: |total| = {:.3e} exceeds 2e-3",
                report.total_nats.abs()
            );
        }
    }

    // Exact-score toy: mean ELBO upper-bounds mean NLL within 3 standard
    // errors of the paired difference.
    let toy = ToyDistribution::two_bump_1d();
    let score = ExactScore { toy: &toy, kernel: &k, schedule: &schedule };
    let n_points = 1000;
    let mut diffs = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x = toy.sample_p0(&mut rng);
        let report = inference::elbo_pointwise(&k, &schedule, &x, &score, 32, &mut rng).unwrap();
        let nll = -toy.density(&k, &x, 0.0).unwrap().ln();
        diffs.push(report.total_nats - nll);
    }
    let mean = diffs.iter().sum::<f64>() / n_points as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n_points - 1) as f64;
    let se = (var / n_points as f64).sqrt();
    println!("acceptance criterion 08: mean(ELBO - NLL) = {mean:.4} +- {se:.4}");
    assert!(mean >= -3.0 * se, "ELBO fails to upper-bound NLL: mean gap {mean:.4}, se {se:.4}");
    println!("acceptance criterion 08: PASS");
}

#[test]
fn criterion_09_guidance() {
    let k = ReflectedKernel::default();
    let schedule = NoiseSchedule::sample_quality();
    let mix = TwoClassMixture::default_1d();

    // w = 0 identities, exact.
    let s_cond = mix.conditional(1).score_t(&k, &schedule, &[0.4], 0.3).unwrap();
    let s_uncond = mix.marginal().score_t(&k, &schedule, &[0.4], 0.3).unwrap();
    assert_eq!(inference::compose_cfg(&s_cond, &s_uncond, 0.0).unwrap(), s_cond);
    let glc = mix.grad_log_posterior(&k, &schedule, 1, &[0.4], 0.3).unwrap();
    assert_eq!(inference::compose_classifier(&s_cond, &glc, 0.0).unwrap(), s_cond);

    // Composed exact scores match finite differences of the tilted log
    // density.
    let h = 1e-6;
    let mut worst_fd = 0.0f64;
    for &w in &[1.0, 4.0] {
        let guided = GuidedScore { mixture: &mix, kernel: &k, schedule: &schedule, class: 1, weight: w };
        for &t in &[0.2, 0.5] {
            for &x in &[0.25, 0.5, 0.75] {
                let s = guided.evaluate(&[x], t)[0];
                let lp = |x: f64| {
                    mix.tilted_density_unnorm(&k, &schedule, 1, &[x], t, w).unwrap().ln()
                };
                let fd = (lp(x + h) - lp(x - h)) / (2.0 * h);
                worst_fd = worst_fd.max((s - fd).abs() / (1.0 + s.abs()));
            }
        }
    }
    assert!(worst_fd < 1e-4, "composed score vs FD tilted gradient: {worst_fd:.3e}");

    // Guided sampling hits the tilted target.
    let sampler = Sampler::new(&k, &schedule, Domain::UnitInterval);
    for (i, &w) in [1.0, 4.0].iter().enumerate() {
        let guided = GuidedScore { mixture: &mix, kernel: &k, schedule: &schedule, class: 1, weight: w };
        let config = SamplerConfig::new(SamplerMethod::ReflectEm, 1000, 900 + i as u64).unwrap();
        let xs = first_coords(&sampler.sample_batch(&guided, &config, 10_000).unwrap());
        let w1 = w1_to_density(&xs, |x| {
            mix.tilted_density_unnorm(&k, &schedule, 1, &[x], 0.0, w).unwrap()
        });
        println!("acceptance criterion 09: w = {w}: W1 to tilted target = {w1:.4}");
        assert!(w1 < 0.03, "w = {w}: W1 {w1:.4} exceeds 0.03");
    }
    println!("acceptance criterion 09: FD worst {worst_fd:.3e}; PASS");
}

#[test]
fn criterion_10_learned_model_end_to_end() {
    let k = ReflectedKernel::default();
    let schedule = NoiseSchedule::sample_quality();

    // 1D two-bump: train, then sample with the EMA network.
    let start = Instant::now();
    let toy = ToyDistribution::two_bump_1d();
    let mut rng = ChaCha8Rng::seed_from_u64(20_10);
    let data: Vec<Vec<f64>> = (0..4000).map(|_| toy.sample_p0(&mut rng)).collect();
    let mut net = ScoreNetwork::init(NetworkArch::toy_default(1), schedule, &mut rng).unwrap();
    // Learning rate scaled up from the width-512 default for the desk-scale
    // width-128 network; 2e-4 underfits within the 2000-step budget.
    let config = TrainConfig {
        total_steps: 2000,
        batch_size: 256,
        learning_rate: 1e-3,
        seed: 1010,
        ..TrainConfig::default()
    };
    let run = score::train(&mut net, &k, &data, &config).unwrap();
    let train_time = start.elapsed();
    assert!(train_time.as_secs_f64() < 300.0, "1D training took {train_time:?}");

    let ema_at_100 = run.curve[100].ema_loss;
    let ema_final = run.curve.last().unwrap().ema_loss;
    println!(
        "acceptance criterion 10: 1D ema loss step 100 = {ema_at_100:.4}, final = {ema_final:.4} \
         ({train_time:?})"
    );

    let ema_net = net.with_params(run.ema_params.clone()).unwrap();
    let sampler = Sampler::new(&k, &schedule, Domain::UnitInterval);
    // 200 reflected-EM steps: discretization error is far below the W1
    // tolerance (measured ~0.002 with exact scores), and network evaluation
    // dominates the cost.
    let sample_config = SamplerConfig::new(SamplerMethod::ReflectEm, 200, 1011).unwrap();
    let xs = first_coords(&sampler.sample_batch(&ema_net, &sample_config, 10_000).unwrap());
    let w1 = w1_to_density(&xs, |x| toy.density(&k, &[x], 0.0).unwrap());
    println!("acceptance criterion 10: 1D learned-model W1 to target = {w1:.4}");
    assert!(w1 < 0.05, "learned-model W1 {w1:.4} exceeds 0.05");

    // 100-dimensional simplex training through the stick-breaking map.
    let start = Instant::now();
    let d = 100;
    let concentration = vec![0.5; d + 1];
    let simplex_data = score::make_simplex_dataset(d, 3000, &concentration, &mut rng).unwrap();
    let cube_data: Vec<Vec<f64>> = simplex_data
        .iter()
        .map(|y| geometry::stick_break_inv(y).unwrap())
        .collect();
    let mut net100 = ScoreNetwork::init(NetworkArch::toy_default(d), schedule, &mut rng).unwrap();
    let config100 = TrainConfig {
        total_steps: 1200,
        learning_rate: 1e-3,
        seed: 1012,
        ..TrainConfig::default()
    };
    let run100 = score::train(&mut net100, &k, &cube_data, &config100).unwrap();
    let train_time = start.elapsed();
    assert!(train_time.as_secs_f64() < 600.0, "simplex training took {train_time:?}");

    let initial = run100.curve[50].ema_loss;
    let final_ema = run100.curve.last().unwrap().ema_loss;
    let final_val = run100.curve.iter().rev().find_map(|p| p.val_loss).unwrap();
    let initial_val = run100.curve.iter().find_map(|p| p.val_loss).unwrap();
    println!(
        "acceptance criterion 10: simplex ema loss {initial:.4} -> {final_ema:.4}, \
         val {initial_val:.4} -> {final_val:.4} ({train_time:?})"
    );
    // The smoothed train loss decreases while the fixed-noise validation
    // loss halves; the train curve itself sits on an irreducible
    // conditional-variance floor and cannot halve.
    assert!(
        final_ema < initial,
        "simplex EMA train loss did not decrease: {initial:.4} -> {final_ema:.4}"
    );
    assert!(
        final_val < 0.5 * initial_val,
        "simplex validation loss did not halve: {initial_val:.4} -> {final_val:.4}"
    );
    println!("acceptance criterion 10: PASS");
}

#[test]
fn criterion_11_tweedie_failure() {
    let k = ReflectedKernel::default();
    let (y, v) = (0.05, 0.04);

    // Reflected case: quadrature posterior mean vs the Tweedie expression.
    let exact = k.posterior_mean_1d(y, v, |_| 1.0).unwrap();
    let tweedie = k.tweedie_estimate_1d(y, v, |_| 1.0).unwrap();
    let reflected_gap = (exact - tweedie).abs();
    println!(
        "acceptance criterion 11: reflected posterior mean {exact:.5} vs tweedie {tweedie:.5} \
         (gap {reflected_gap:.4})"
    );
    assert!(reflected_gap > 1e-3, "reflected Tweedie gap {reflected_gap:.2e} should exceed 1e-3");

    // Unbounded control with plain Gaussians and the same uniform-on-[0,1]
    // prior: Tweedie's formula is exact, so the same quadrature agrees.
    let phi = |u: f64| (-u * u / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let num = quad::integrate(|x| x * phi(y - x), 0.0, 1.0, 200, 16);
    let den = quad::integrate(|x| phi(y - x), 0.0, 1.0, 200, 16);
    let gauss_posterior = num / den;
    let marginal_dy = quad::integrate(|x| phi(y - x) * ((x - y) / v), 0.0, 1.0, 200, 16);
    let gauss_tweedie = y + v * marginal_dy / den;
    let control_gap = (gauss_posterior - gauss_tweedie).abs();
    println!(
        "acceptance criterion 11: gaussian control posterior {gauss_posterior:.6} vs \
         tweedie {gauss_tweedie:.6} (gap {control_gap:.2e})"
    );
    assert!(control_gap < 1e-3, "gaussian control gap {control_gap:.2e} should be below 1e-3");
    println!("acceptance criterion 11: PASS");
}

#[test]
fn criterion_12_geometry_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_12);
    let mut worst_roundtrip = 0.0f64;
    let mut accepted = 0usize;
    while accepted < 10_000 {
        let d = 1 + (rng.gen::<u64>() % 8) as usize;
        let x: Vec<f64> = (0..d).map(|_| 1e-3 + (1.0 - 2e-3) * rng.gen::<f64>()).collect();
        let y = geometry::stick_break(&x).unwrap();
        // Bounded away from degeneracy: every inverse denominator (suffix
        // tail product) stays at least 1e-3.
        if 1.0 - y.iter().sum::<f64>() < 1e-3 {
            continue;
        }
        accepted += 1;
        let back = geometry::stick_break_inv(&y).unwrap();
        for (a, b) in x.iter().zip(&back) {
            worst_roundtrip = worst_roundtrip.max((a - b).abs());
        }
    }
    assert!(worst_roundtrip < 1e-10, "round-trip defect {worst_roundtrip:.3e}");

    // Log-determinant against the finite-difference Jacobian.
    let mut worst_logdet = 0.0f64;
    for _ in 0..20 {
        let d = 2 + (rng.gen::<u64>() % 5) as usize;
        let x: Vec<f64> = (0..d).map(|_| 0.05 + 0.9 * rng.gen::<f64>()).collect();
        let h = 1e-6;
        let mut jac = vec![vec![0.0; d]; d];
        for c in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let yp = geometry::stick_break(&xp).unwrap();
            let ym = geometry::stick_break(&xm).unwrap();
            for r in 0..d {
                jac[r][c] = (yp[r] - ym[r]) / (2.0 * h);
            }
        }
        let mut det: f64 = 1.0;
        for c in 0..d {
            let pivot = (c..d)
                .max_by(|&a, &b| jac[a][c].abs().partial_cmp(&jac[b][c].abs()).unwrap())
                .unwrap();
            if pivot != c {
                jac.swap(pivot, c);
                det = -det;
            }
            det *= jac[c][c];
            for r in c + 1..d {
                let f = jac[r][c] / jac[c][c];
                for cc in c..d {
                    jac[r][cc] -= f * jac[c][cc];
                }
            }
        }
        let fd = det.abs().ln();
        let analytic = geometry::stick_break_logdet(&x).unwrap();
        worst_logdet = worst_logdet.max((fd - analytic).abs());
    }
    assert!(worst_logdet < 1e-6, "logdet vs FD defect {worst_logdet:.3e}");
    println!(
        "acceptance criterion 12: round-trip {worst_roundtrip:.3e}, logdet {worst_logdet:.3e}"
    );
    println!("acceptance criterion 12: PASS");
}

/// Cross-checks the probability-flow ODE against the adaptive embedded
/// pair on the exact-score toy (not a numbered criterion; supports 6).
#[test]
fn ode_fixed_and_adaptive_agree_on_toy() {
    let k = ReflectedKernel::default();
    let schedule = NoiseSchedule::sample_quality();
    let toy = ToyDistribution::two_bump_1d();
    let score = ExactScore { toy: &toy, kernel: &k, schedule: &schedule };
    let sampler = Sampler::new(&k, &schedule, Domain::UnitInterval);
    let fixed = SamplerConfig::new(SamplerMethod::ProbabilityFlowOde, 1000, 0).unwrap();
    let adaptive = fixed.with_ode_mode(OdeMode::Adaptive { abs_tol: 1e-5, rel_tol: 1e-5 });
    let mut worst = 0.0f64;
    for chain in 0..50u64 {
        let mut rng = chain_rng(42, chain);
        let x1 = geometry::uniform_sample(&Domain::UnitInterval, &mut rng);
        let a = sampler.ode_solve(&score, &x1, &fixed).unwrap();
        let b = sampler.ode_solve(&score, &x1, &adaptive).unwrap();
        assert_eq!(a.boundary_projections, 0, "exact score must keep the ODE inside");
        assert_eq!(b.boundary_projections, 0);
        worst = worst.max((a.point[0] - b.point[0]).abs());
    }
    // Per-step tolerance 1e-5 accumulates to a few 1e-3 at the endpoint.
    assert!(worst < 5e-3, "fixed vs adaptive ODE endpoints differ by {worst:.2e}");
}
