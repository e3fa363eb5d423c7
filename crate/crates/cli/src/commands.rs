//! Command implementations: configuration resolution, orchestration, and
//! CSV emission. All files are written atomically (temp + rename).

use crate::config::RunConfig;
use crate::CliError;
use refldiff_core::eval;
use refldiff_core::geometry::{self, Domain};
use refldiff_core::inference::{self, GuidedScore};
use refldiff_core::kernel::{cdf_table, eval_cdf_table, property_suite, ReflectedKernel};
use refldiff_core::samplers::{chain_rng, OdeMode, Sampler, SamplerConfig, SamplerMethod, ScoreFunction, ZeroScore};
use refldiff_core::schedule::NoiseSchedule;
use refldiff_core::score::toy::{ExactScore, ToyDistribution, TwoClassMixture};
use refldiff_core::score::{self, Checkpoint, NetworkArch, ScoreNetwork, TrainConfig};
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, CliError>;

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::Failure(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Failure(format!("renaming to {}: {e}", path.display())))?;
    Ok(())
}

/// Shared preamble: load config, apply overrides, prepare the output dir.
fn begin(
    config_path: Option<PathBuf>,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<(RunConfig, PathBuf, u64)> {
    let mut config = RunConfig::load(config_path.as_deref())?;
    if let Some(seed) = seed_override {
        config.set("seed", seed.to_string());
    }
    let seed = config.get_u64("seed", 0)?;
    let out_dir = out_override
        .unwrap_or_else(|| PathBuf::from(config.get_str("output_dir", "out")));
    config.set("output_dir", out_dir.display().to_string());
    let _ = config.get_str("output_dir", "out");
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Failure(format!("creating {}: {e}", out_dir.display())))?;
    Ok((config, out_dir, seed))
}

/// Validate leftover keys and drop the resolved copy next to the outputs.
fn finish(config: &RunConfig, out_dir: &Path) -> Result<()> {
    config.reject_unknown()?;
    write_atomic(&out_dir.join("resolved-config.txt"), config.resolved_text().as_bytes())
}

fn resolve_kernel(config: &mut RunConfig) -> Result<ReflectedKernel> {
    let crossover = config.get_f64("kernel.crossover_sigma", 0.35)?;
    let m = config.get_usize("kernel.image_terms", 5)?;
    let k = config.get_usize("kernel.eigen_terms", 5)?;
    Ok(ReflectedKernel::new(crossover, m, k)?)
}

fn resolve_schedule(config: &mut RunConfig) -> Result<NoiseSchedule> {
    let sigma0 = config.get_f64("schedule.sigma0", 0.01)?;
    let sigma1 = config.get_f64("schedule.sigma1", 5.0)?;
    let t_min = config.get_f64("schedule.t_min", NoiseSchedule::DEFAULT_T_MIN)?;
    Ok(NoiseSchedule::new(sigma0, sigma1)?.with_t_min(t_min)?)
}

fn resolve_method(config: &mut RunConfig) -> Result<SamplerMethod> {
    let name = config.get_str("sampler.method", "reflect-em");
    let lambda = config.get_f64("sampler.lambda", 1.0)?;
    let percentile = config.get_f64("sampler.percentile", 0.995)?;
    match name.as_str() {
        "reflect-em" => Ok(SamplerMethod::ReflectEm),
        "project-em" => Ok(SamplerMethod::ProjectEm),
        "pc" => Ok(SamplerMethod::PredictorCorrector),
        "ode" => Ok(SamplerMethod::ProbabilityFlowOde),
        "annealed" => Ok(SamplerMethod::AnnealedSde { gbar_scale: lambda }),
        "threshold-static" => Ok(SamplerMethod::ThresholdStatic),
        "threshold-dynamic" => Ok(SamplerMethod::ThresholdDynamic { percentile }),
        other => Err(CliError::Config(format!(
            "sampler.method `{other}` (expected reflect-em | project-em | pc | ode | annealed | \
             threshold-static | threshold-dynamic)"
        ))),
    }
}

fn resolve_sampler_config(config: &mut RunConfig, seed: u64) -> Result<SamplerConfig> {
    let method = resolve_method(config)?;
    let steps = config.get_usize("sampler.steps", 1000)?;
    let snr = config.get_f64("sampler.snr", 0.03)?;
    let adaptive = config.get_bool("sampler.ode_adaptive", false)?;
    let abs_tol = config.get_f64("sampler.ode_abs_tol", 1e-5)?;
    let rel_tol = config.get_f64("sampler.ode_rel_tol", 1e-5)?;
    let mut sc = SamplerConfig::new(method, steps, seed)?.with_snr(snr)?;
    if adaptive {
        sc = sc.with_ode_mode(OdeMode::Adaptive { abs_tol, rel_tol });
    }
    Ok(sc)
}

fn named_toy(name: &str) -> Result<ToyDistribution> {
    match name {
        "two-bump-1d" => Ok(ToyDistribution::two_bump_1d()),
        "two-bump-2d" => Ok(ToyDistribution::two_bump_2d()),
        other => Err(CliError::Config(format!(
            "unknown toy dataset `{other}` (expected two-bump-1d | two-bump-2d)"
        ))),
    }
}

fn format_f64(v: f64) -> String {
    format!("{v:.17e}")
}

// ---------------------------------------------------------------------------
// kernel-check

pub fn kernel_check(
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let (mut config, out_dir, seed) = begin(config_path, seed, out)?;
    let kernel = resolve_kernel(&mut config)?;
    finish(&config, &out_dir)?;

    let mut rng = chain_rng(seed, 0);
    let checks = property_suite(&kernel, &mut rng);
    let mut csv = String::from("check,max_discrepancy,threshold,status\n");
    let mut all_pass = true;
    let mut first_failure = None;
    for c in &checks {
        let status = if c.warning {
            "warn"
        } else if c.pass {
            "pass"
        } else {
            all_pass = false;
            if first_failure.is_none() {
                first_failure = Some(c.name);
            }
            "fail"
        };
        csv.push_str(&format!(
            "{},{},{},{}\n",
            c.name,
            format_f64(c.max_discrepancy),
            format_f64(c.threshold),
            status
        ));
        println!("kernel-check: {:24} {:>12.3e} (threshold {:.1e}) {}", c.name, c.max_discrepancy, c.threshold, status);
    }
    write_atomic(&out_dir.join("kernel-check.csv"), csv.as_bytes())?;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "kernel property suite failed; first failing check: {}",
            first_failure.unwrap_or("unknown")
        )))
    }
}

// ---------------------------------------------------------------------------
// train

pub fn train(config_path: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (mut config, out_dir, seed) = begin(config_path, seed, out)?;
    let kernel = resolve_kernel(&mut config)?;
    let schedule = resolve_schedule(&mut config)?;

    let dataset = config.get_str("train.dataset", "two-bump-1d");
    let n_data = config.get_usize("train.n_data", 4000)?;
    let simplex_dim = config.get_usize("train.simplex_dim", 100)?;
    let concentration = config.get_f64("train.concentration", 0.5)?;
    let width = config.get_usize("train.width", 128)?;
    let depth = config.get_usize("train.depth", 4)?;
    let embed = config.get_usize("train.time_embed_dim", 32)?;
    let output_scale = config.get_bool("train.output_scale", true)?;
    let train_config = TrainConfig {
        learning_rate: config.get_f64("train.lr", 1e-3)?,
        batch_size: config.get_usize("train.batch_size", 128)?,
        total_steps: config.get_usize("train.steps", 2000)?,
        ema_rate: config.get_f64("train.ema_rate", 0.9999)?,
        seed,
        val_fraction: config.get_f64("train.val_fraction", 0.1)?,
        val_every: config.get_usize("train.val_every", 50)?,
        grad_clip: config.get_f64("train.grad_clip", 1.0)?,
    };
    let init_checkpoint = config.get_path_opt("train.init_checkpoint");
    finish(&config, &out_dir)?;

    // Materialize the dataset in modeled (cube) coordinates.
    let mut data_rng = chain_rng(seed, 100);
    let (domain, cube_data): (Domain, Vec<Vec<f64>>) = match dataset.as_str() {
        "simplex-dirichlet" => {
            let alpha = vec![concentration; simplex_dim + 1];
            let simplex = score::make_simplex_dataset(simplex_dim, n_data, &alpha, &mut data_rng)?;
            let cube = simplex
                .iter()
                .map(|y| geometry::stick_break_inv(y))
                .collect::<refldiff_core::Result<Vec<_>>>()?;
            (Domain::ProjectedSimplex(simplex_dim), cube)
        }
        name => {
            let toy = named_toy(name)?;
            let dim = toy.dim();
            let data = (0..n_data).map(|_| toy.sample_p0(&mut data_rng)).collect();
            (if dim == 1 { Domain::UnitInterval } else { Domain::UnitHypercube(dim) }, data)
        }
    };
    let data_dim = cube_data[0].len();

    let mut net = match init_checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::MissingArtifact(path.display().to_string()));
            }
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.network.arch().data_dim != data_dim {
                return Err(CliError::Config(format!(
                    "checkpoint dimension {} does not match dataset dimension {data_dim}",
                    ckpt.network.arch().data_dim
                )));
            }
            ckpt.network
        }
        None => {
            let arch = NetworkArch {
                data_dim,
                hidden_width: width,
                hidden_layers: depth,
                time_embed_dim: embed,
                output_scale,
            };
            let mut init_rng = chain_rng(seed, 101);
            ScoreNetwork::init(arch, schedule, &mut init_rng)?
        }
    };

    let run = match score::train(&mut net, &kernel, &cube_data, &train_config) {
        Ok(run) => run,
        Err(e) => {
            // Keep the last finite parameter state for post-mortems; the
            // optimizer never applies a non-finite update.
            let ema = net.params().to_vec();
            let ckpt = Checkpoint::new(domain, net, ema)?;
            ckpt.save(&out_dir.join("checkpoint-aborted.ckpt"))?;
            return Err(CliError::Failure(format!(
                "training aborted ({e}); last finite state written to checkpoint-aborted.ckpt"
            )));
        }
    };

    let mut csv = String::from("step,loss,ema_loss,val_loss\n");
    for p in &run.curve {
        let val = p.val_loss.map(format_f64).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{}\n", p.step, format_f64(p.loss), format_f64(p.ema_loss), val));
    }
    write_atomic(&out_dir.join("loss-curve.csv"), csv.as_bytes())?;

    let ckpt = Checkpoint::new(domain, net, run.ema_params)?;
    ckpt.save(&out_dir.join("checkpoint.ckpt"))?;
    println!(
        "train: {} steps on {dataset}, final ema loss {:.4}; checkpoint.ckpt written",
        run.curve.len(),
        run.curve.last().map(|p| p.ema_loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sample

enum ResolvedScore {
    Exact(ToyDistribution),
    Learned(Box<Checkpoint>),
    Zero(usize),
}

fn resolve_score(config: &mut RunConfig) -> Result<ResolvedScore> {
    let source = config.get_str("score.source", "exact");
    match source.as_str() {
        "exact" => {
            let toy = named_toy(&config.get_str("score.toy", "two-bump-1d"))?;
            Ok(ResolvedScore::Exact(toy))
        }
        "zero" => {
            let dim = config.get_usize("score.dim", 1)?;
            Ok(ResolvedScore::Zero(dim))
        }
        "checkpoint" => {
            let path = config
                .get_path_opt("score.checkpoint")
                .ok_or_else(|| CliError::Config("score.checkpoint path required".into()))?;
            if !path.exists() {
                return Err(CliError::MissingArtifact(path.display().to_string()));
            }
            let ckpt = Checkpoint::load(&path)?;
            Ok(ResolvedScore::Learned(Box::new(ckpt)))
        }
        other => Err(CliError::Config(format!(
            "score.source `{other}` (expected exact | zero | checkpoint)"
        ))),
    }
}

pub fn sample(config_path: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (mut config, out_dir, seed) = begin(config_path, seed, out)?;
    let kernel = resolve_kernel(&mut config)?;
    let schedule = resolve_schedule(&mut config)?;
    let resolved_score = resolve_score(&mut config)?;
    let use_ema = config.get_bool("score.use_ema", true)?;
    let n = config.get_usize("sampler.batch", 10_000)?;
    let sampler_config = resolve_sampler_config(&mut config, seed)?;
    let method_name = match sampler_config.method {
        SamplerMethod::ReflectEm => "reflect-em",
        SamplerMethod::ProjectEm => "project-em",
        SamplerMethod::PredictorCorrector => "pc",
        SamplerMethod::ProbabilityFlowOde => "ode",
        SamplerMethod::AnnealedSde { .. } => "annealed",
        SamplerMethod::ThresholdStatic => "threshold-static",
        SamplerMethod::ThresholdDynamic { .. } => "threshold-dynamic",
    };
    finish(&config, &out_dir)?;

    // Generation always runs in cube coordinates; a simplex-domain model is
    // mapped through stick breaking afterwards.
    let (cube_points, target_domain): (Vec<Vec<f64>>, Domain) = match &resolved_score {
        ResolvedScore::Exact(toy) => {
            let dim = toy.dim();
            let domain = if dim == 1 { Domain::UnitInterval } else { Domain::UnitHypercube(dim) };
            let sampler = Sampler::new(&kernel, &schedule, domain);
            let score = ExactScore { toy, kernel: &kernel, schedule: &schedule };
            (sampler.sample_batch(&score, &sampler_config, n)?, domain)
        }
        ResolvedScore::Zero(dim) => {
            let domain = if *dim == 1 { Domain::UnitInterval } else { Domain::UnitHypercube(*dim) };
            let sampler = Sampler::new(&kernel, &schedule, domain);
            (sampler.sample_batch(&ZeroScore(*dim), &sampler_config, n)?, domain)
        }
        ResolvedScore::Learned(ckpt) => {
            let dim = ckpt.network.arch().data_dim;
            let cube = if dim == 1 { Domain::UnitInterval } else { Domain::UnitHypercube(dim) };
            // The checkpoint's schedule is authoritative for the network.
            let net_schedule = *ckpt.network.schedule();
            let sampler = Sampler::new(&kernel, &net_schedule, cube);
            let net =
                if use_ema { ckpt.ema_network()? } else { ckpt.network.clone() };
            (sampler.sample_batch(&net, &sampler_config, n)?, ckpt.domain)
        }
    };
    let points: Vec<Vec<f64>> = match target_domain {
        Domain::ProjectedSimplex(_) => cube_points
            .iter()
            .map(|p| geometry::stick_break(p))
            .collect::<refldiff_core::Result<Vec<_>>>()?,
        _ => cube_points,
    };

    let dim = points[0].len();
    let mut csv = String::from("seed,method,steps,chain");
    for j in 0..dim {
        csv.push_str(&format!(",x{j}"));
    }
    csv.push('\n');
    for (chain, p) in points.iter().enumerate() {
        csv.push_str(&format!("{seed},{method_name},{},{chain}", sampler_config.steps));
        for v in p {
            csv.push(',');
            csv.push_str(&format_f64(*v));
        }
        csv.push('\n');
    }
    write_atomic(&out_dir.join("samples.csv"), csv.as_bytes())?;
    println!("sample: {n} chains of {method_name} at {} steps written", sampler_config.steps);
    Ok(())
}

// ---------------------------------------------------------------------------
// compare-thresholding

pub fn compare_thresholding(
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let (mut config, out_dir, seed) = begin(config_path, seed, out)?;
    let kernel = resolve_kernel(&mut config)?;
    let schedule = resolve_schedule(&mut config)?;
    let toy = named_toy(&config.get_str("compare.toy", "two-bump-1d"))?;
    let ladder = config.get_usize_list("compare.steps", "50,100,200,400,800")?;
    let reference_steps = config.get_usize("compare.reference_steps", 3200)?;
    let n = config.get_usize("compare.batch", 20_000)?;
    let percentile = config.get_f64("compare.percentile", 0.995)?;
    finish(&config, &out_dir)?;

    if toy.dim() != 1 {
        return Err(CliError::Config("compare-thresholding runs on a 1D toy".into()));
    }
    let sampler = Sampler::new(&kernel, &schedule, Domain::UnitInterval);
    let score = ExactScore { toy: &toy, kernel: &kernel, schedule: &schedule };
    let first = |pts: Vec<Vec<f64>>| -> Vec<f64> { pts.into_iter().map(|p| p[0]).collect() };

    let reference = {
        let cfg = SamplerConfig::new(SamplerMethod::ReflectEm, reference_steps, seed)?;
        first(sampler.sample_batch(&score, &cfg, n)?)
    };
    let reference_b = {
        let cfg = SamplerConfig::new(SamplerMethod::ReflectEm, reference_steps, seed ^ 0x5eed)?;
        first(sampler.sample_batch(&score, &cfg, n)?)
    };
    let self_distance = eval::wasserstein1_1d(&reference, &reference_b)?;

    let mut csv = String::from("method,steps,w1_to_reference\n");
    csv.push_str(&format!("reference,{reference_steps},{}\n", format_f64(self_distance)));
    println!("compare-thresholding: reference self-distance {self_distance:.4}");

    let variants: [(&str, SamplerMethod); 4] = [
        ("threshold-static", SamplerMethod::ThresholdStatic),
        ("threshold-dynamic", SamplerMethod::ThresholdDynamic { percentile }),
        ("project-em", SamplerMethod::ProjectEm),
        ("reflect-em", SamplerMethod::ReflectEm),
    ];
    for (name, method) in variants {
        for (i, &steps) in ladder.iter().enumerate() {
            let cfg = SamplerConfig::new(method, steps, seed.wrapping_add(1 + i as u64))?;
            let xs = first(sampler.sample_batch(&score, &cfg, n)?);
            let w1 = eval::wasserstein1_1d(&xs, &reference)?;
            csv.push_str(&format!("{name},{steps},{}\n", format_f64(w1)));
            println!("compare-thresholding: {name:18} steps {steps:5}: W1 {w1:.4}");
        }
    }
    write_atomic(&out_dir.join("convergence.csv"), csv.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// elbo

pub fn elbo(config_path: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (mut config, out_dir, seed) = begin(config_path, seed, out)?;
    let kernel = resolve_kernel(&mut config)?;
    let schedule = resolve_schedule(&mut config)?;
    let n_mc = config.get_usize("elbo.n_mc", 64)?;
    let n_points = config.get_usize("elbo.n_points", 200)?;
    let dataset = config.get_str("elbo.dataset", "uniform");
    let dim = config.get_usize("elbo.dim", 1)?;
    let resolved_score = resolve_score(&mut config)?;
    let use_ema = config.get_bool("score.use_ema", true)?;
    finish(&config, &out_dir)?;

    if n_mc < 16 {
        return Err(CliError::Config(format!("elbo.n_mc = {n_mc} is below the floor of 16")));
    }

    let mut rng = chain_rng(seed, 0);
    let data: Vec<Vec<f64>> = match dataset.as_str() {
        "uniform" => (0..n_points)
            .map(|_| geometry::uniform_sample(&Domain::UnitHypercube(dim), &mut rng))
            .collect(),
        name => {
            let toy = named_toy(name)?;
            (0..n_points).map(|_| toy.sample_p0(&mut rng)).collect()
        }
    };
    let data_dim = data[0].len();

    let mut csv = String::from(
        "point,total_nats,score_term,prior_term,reconstruction_term,bpd,mc_std_error\n",
    );
    let mut totals = Vec::with_capacity(data.len());
    let mut bpds = Vec::with_capacity(data.len());
    {
        let mut evaluate = |score_fn: &dyn ScoreFunction| -> Result<()> {
            for (i, x) in data.iter().enumerate() {
                let report =
                    inference::elbo_pointwise(&kernel, &schedule, x, score_fn, n_mc, &mut rng)?;
                totals.push(report.total_nats);
                bpds.push(report.bpd);
                csv.push_str(&format!(
                    "{i},{},{},{},{},{},{}\n",
                    format_f64(report.total_nats),
                    format_f64(report.score_term),
                    format_f64(report.prior_term),
                    format_f64(report.reconstruction_term),
                    format_f64(report.bpd),
                    format_f64(report.mc_std_error)
                ));
            }
            Ok(())
        };
        match &resolved_score {
            ResolvedScore::Zero(_) => evaluate(&ZeroScore(data_dim))?,
            ResolvedScore::Exact(toy) => {
                if toy.dim() != data_dim {
                    return Err(CliError::Config(
                        "score.toy dimension does not match dataset".into(),
                    ));
                }
                evaluate(&ExactScore { toy, kernel: &kernel, schedule: &schedule })?
            }
            ResolvedScore::Learned(ckpt) => {
                if ckpt.network.arch().data_dim != data_dim {
                    return Err(CliError::Config(
                        "checkpoint dimension does not match dataset".into(),
                    ));
                }
                let net = if use_ema { ckpt.ema_network()? } else { ckpt.network.clone() };
                evaluate(&net)?
            }
        }
    }
    write_atomic(&out_dir.join("elbo.csv"), csv.as_bytes())?;

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mean_bpd = mean(&bpds);
    let var = bpds.iter().map(|b| (b - mean_bpd) * (b - mean_bpd)).sum::<f64>()
        / (bpds.len().max(2) - 1) as f64;
    let stderr = (var / bpds.len() as f64).sqrt();
    let summary = format!(
        "n_points,mean_total_nats,mean_bpd,bpd_std_error\n{},{},{},{}\n",
        data.len(),
        format_f64(mean(&totals)),
        format_f64(mean_bpd),
        format_f64(stderr)
    );
    write_atomic(&out_dir.join("elbo-summary.csv"), summary.as_bytes())?;
    println!("elbo: mean {:.4} bpd +- {:.4} over {} points", mean_bpd, stderr, data.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// guidance-demo

pub fn guidance_demo(
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let (mut config, out_dir, seed) = begin(config_path, seed, out)?;
    let kernel = resolve_kernel(&mut config)?;
    let schedule = resolve_schedule(&mut config)?;
    let weights = config.get_f64_list("guidance.weights", "0,1,4")?;
    let steps = config.get_usize("guidance.steps", 1000)?;
    let n = config.get_usize("guidance.batch", 10_000)?;
    let class = config.get_usize("guidance.class", 1)?;
    let methods = config.get_str("guidance.methods", "reflect-em,ode");
    finish(&config, &out_dir)?;

    if class > 1 {
        return Err(CliError::Config("guidance.class must be 0 or 1".into()));
    }
    let mix = TwoClassMixture::default_1d();
    let sampler = Sampler::new(&kernel, &schedule, Domain::UnitInterval);

    let mut summary = String::from("w,method,w1_to_tilted_target\n");
    for (wi, &w) in weights.iter().enumerate() {
        if w < 0.0 {
            return Err(CliError::Config(format!("guidance weight {w} must be >= 0")));
        }
        let guided =
            GuidedScore { mixture: &mix, kernel: &kernel, schedule: &schedule, class, weight: w };
        let table = cdf_table(
            |x| mix.tilted_density_unnorm(&kernel, &schedule, class, &[x], 0.0, w).unwrap_or(0.0),
            4096,
        );
        let total_mass = *table.last().unwrap();
        for method_name in methods.split(',').map(str::trim) {
            let method = match method_name {
                "reflect-em" => SamplerMethod::ReflectEm,
                "ode" => SamplerMethod::ProbabilityFlowOde,
                "pc" => SamplerMethod::PredictorCorrector,
                other => {
                    return Err(CliError::Config(format!(
                        "guidance.methods entry `{other}` (expected reflect-em | ode | pc)"
                    )))
                }
            };
            let cfg = SamplerConfig::new(method, steps, seed.wrapping_add(wi as u64))?;
            let mut xs: Vec<f64> =
                sampler.sample_batch(&guided, &cfg, n)?.into_iter().map(|p| p[0]).collect();

            let mut csv = String::from("w,method,chain,x0\n");
            for (chain, x) in xs.iter().enumerate() {
                csv.push_str(&format!("{w},{method_name},{chain},{}\n", format_f64(*x)));
            }
            write_atomic(&out_dir.join(format!("samples-w{w}-{method_name}.csv")), csv.as_bytes())?;

            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let w1 = eval::wasserstein1_vs_cdf(
                &xs,
                |t| eval_cdf_table(&table, t) / total_mass,
                0.0,
                1.0,
                10_000,
            )?;
            summary.push_str(&format!("{w},{method_name},{}\n", format_f64(w1)));
            println!("guidance-demo: w = {w}, {method_name}: W1 to tilted target {w1:.4}");
        }
    }
    write_atomic(&out_dir.join("guidance-summary.csv"), summary.as_bytes())?;
    Ok(())
}
