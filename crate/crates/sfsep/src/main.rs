//! Command-line front end: model fitting with Wiener extraction, parametric
//! re-synthesis, the F0-informed NMF baseline, metric reports, gradient
//! verification, and multi-F0 voice assignment.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sfsep::audio::{read_wav, write_wav, AudioBuffer};
use sfsep::config::Config;
use sfsep::dsp::{num_frames, stft};
use sfsep::error::{Error, Result};
use sfsep::eval::{framewise_eval, si_sdr, spectral_snr, SourceEval};
use sfsep::f0::{assign_f0s, load_f0_csv, tracks_on_grid, write_assigned_csv, F0File};
use sfsep::fit::{gradient_check, separate_mixture};
use sfsep::nmf::{init_from_f0, nmf_fit, nmf_separate};
use sfsep::synth::{synthesize_mixture, F0Track, ParamsFile, SourceParams};

#[derive(Parser)]
#[command(
    name = "sfsep",
    version,
    about = "Unsupervised source separation by fitting differentiable source-filter models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a mixture and write Wiener-filtered source estimates.
    Separate(SeparateArgs),
    /// Render the mixture of a saved parameter file back to audio.
    Synthesize {
        /// Parameter JSON produced by `separate --emit-params`.
        #[arg(long)]
        params: PathBuf,
        /// Output WAV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the F0-informed NMF baseline on a mixture.
    Nmf(NmfArgs),
    /// Score estimated sources against references and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Compare reverse-mode gradients with finite differences; exits nonzero on mismatch.
    Gradcheck {
        /// Seed of the synthetic check problem.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of coordinates to sample across all parameter classes.
        #[arg(long, default_value_t = 200)]
        coords: usize,
        /// Largest accepted relative error against central differences.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Assign raw multi-F0 estimates to persistent per-source tracks.
    AssignF0 {
        /// Raw estimator CSV (`time,f0,...` rows with any number of pitches).
        #[arg(long)]
        raw: PathBuf,
        /// Number of sources J.
        #[arg(long)]
        sources: usize,
        /// Output CSV path (`time,src0,...` layout).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SeparateArgs {
    /// Mixture WAV (mono, at the configured sample rate).
    #[arg(long)]
    mixture: PathBuf,
    /// F0 CSV, raw (`time,f0,...`) or already assigned (`time,src0,...`).
    #[arg(long)]
    f0: PathBuf,
    /// Number of sources J.
    #[arg(long)]
    sources: usize,
    /// Output directory for source_{j}.wav and run metadata.
    #[arg(long)]
    out: PathBuf,
    /// ADAM steps; overrides the config value (default 2000).
    #[arg(long)]
    steps: Option<usize>,
    /// ADAM learning rate; overrides the config value (default 0.0001).
    #[arg(long)]
    lr: Option<f64>,
    /// Noise seed; overrides the config value (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file overriding any subset of the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the raw synthesized sources as synth_{j}.wav.
    #[arg(long)]
    emit_synth: bool,
    /// Also write the fitted parameters as params.json.
    #[arg(long)]
    emit_params: bool,
}

#[derive(Args)]
struct NmfArgs {
    /// Mixture WAV (mono, at the configured sample rate).
    #[arg(long)]
    mixture: PathBuf,
    /// F0 CSV, raw or already assigned.
    #[arg(long)]
    f0: PathBuf,
    /// Number of sources J.
    #[arg(long)]
    sources: usize,
    /// Output directory for source_{j}.wav and the divergence trace.
    #[arg(long)]
    out: PathBuf,
    /// Multiplicative update iterations.
    #[arg(long, default_value_t = 200)]
    iters: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of estimated sources (every .wav is scored).
    #[arg(long)]
    est_dir: PathBuf,
    /// Directory of reference sources with matching file names.
    #[arg(long)]
    ref_dir: PathBuf,
    /// Output report JSON path.
    #[arg(long)]
    report: PathBuf,
    /// Evaluation frame length in seconds.
    #[arg(long, default_value_t = 1.0)]
    frame_len: f64,
    /// Reference frames with energy below this are excluded.
    #[arg(long, default_value_t = 10.0)]
    energy_thresh: f64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Separate(args) => run_separate(&args),
        Command::Synthesize { params, out } => run_synthesize(&params, &out),
        Command::Nmf(args) => run_nmf(&args),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::Gradcheck { seed, coords, tol } => return run_gradcheck(seed, coords, tol),
        Command::AssignF0 { raw, sources, out } => run_assign_f0(&raw, sources, &out),
    }?;
    Ok(ExitCode::SUCCESS)
}

/// Load the config file if given, then apply command-line overrides.
fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::from_json_file(p),
        None => Ok(Config::default()),
    }
}

/// Turn a loaded F0 file into per-source tracks on a frame grid, assigning
/// raw estimator output to `j` voices first when necessary.
fn tracks_for(f0: &F0File, j: usize, hop: usize, fs: f64, frames: usize) -> Result<Vec<F0Track>> {
    if j == 0 {
        return Err(Error::invalid("J must be >= 1: need at least one source"));
    }
    let (times, tracks) = match f0 {
        F0File::Raw(raw) => {
            let times: Vec<f64> = raw.iter().map(|f| f.time).collect();
            (times, assign_f0s(raw, j))
        }
        F0File::Assigned { times, tracks } => {
            if tracks.len() != j {
                return Err(Error::invalid(format!(
                    "CSV holds {} assigned sources but --sources is {j}",
                    tracks.len()
                )));
            }
            (times.clone(), tracks.clone())
        }
    };
    tracks_on_grid(&times, &tracks, hop, fs, frames)
}

/// Everything a separation run leaves behind besides audio.
#[derive(Serialize)]
struct RunMeta<'a> {
    seed: u64,
    steps: usize,
    best_loss: f64,
    best_step: usize,
    runtime_seconds: f64,
    config: &'a Config,
    loss_trace: &'a [f64],
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_separate(args: &SeparateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(steps) = args.steps {
        cfg.fit_steps = steps;
    }
    if let Some(lr) = args.lr {
        cfg.adam.lr = lr;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mix = read_wav(&args.mixture, cfg.fs)?;
    let frames = num_frames(mix.len(), cfg.fft_size, cfg.hop);
    let f0 = load_f0_csv(&args.f0)?;
    let tracks = tracks_for(&f0, args.sources, cfg.hop, cfg.fs as f64, frames)?;
    println!(
        "fitting {} sources over {frames} frames: {} steps, lr {}, seed {}",
        args.sources, cfg.fit_steps, cfg.adam.lr, cfg.seed
    );
    let t0 = Instant::now();
    let out = separate_mixture(&mix.samples, &tracks, cfg.fit_steps, cfg.seed, &cfg)?;
    let runtime = t0.elapsed().as_secs_f64();
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (j, est) in out.estimates.iter().enumerate() {
        let path = args.out.join(format!("source_{j}.wav"));
        write_wav(&path, &AudioBuffer::new(est.clone(), cfg.fs)?)?;
    }
    if args.emit_synth {
        for (j, s) in out.synths.iter().enumerate() {
            let path = args.out.join(format!("synth_{j}.wav"));
            write_wav(&path, &AudioBuffer::new(s.clone(), cfg.fs)?)?;
        }
    }
    if args.emit_params {
        let sources: Vec<(SourceParams, F0Track)> = (0..args.sources)
            .map(|j| Ok((out.fit.raw.source_params(j, &cfg)?, tracks[j].clone())))
            .collect::<Result<_>>()?;
        let file = ParamsFile::from_sources(&sources, cfg.seed, &cfg, mix.len());
        file.save(&args.out.join("params.json"))?;
    }
    let meta = RunMeta {
        seed: cfg.seed,
        steps: cfg.fit_steps,
        best_loss: out.fit.best_loss,
        best_step: out.fit.best_step,
        runtime_seconds: runtime,
        config: &cfg,
        loss_trace: &out.fit.trace,
    };
    write_json(&args.out.join("run_meta.json"), &meta)?;
    let initial = out.fit.trace.first().copied().unwrap_or(f64::NAN);
    println!(
        "loss {initial:.3} -> {:.3} at step {} ({runtime:.1} s); wrote {} estimates to {}",
        out.fit.best_loss,
        out.fit.best_step,
        out.estimates.len(),
        args.out.display()
    );
    Ok(())
}

fn run_synthesize(params: &Path, out: &Path) -> Result<()> {
    let file = ParamsFile::load(params)?;
    let sources = file.to_sources()?;
    let mix = synthesize_mixture(&sources, file.seed, &file.config, file.num_samples)?;
    write_wav(out, &AudioBuffer::new(mix, file.config.fs)?)?;
    println!(
        "synthesized {} sources, {} samples -> {}",
        file.sources.len(),
        file.num_samples,
        out.display()
    );
    Ok(())
}

/// Divergence trace left next to the NMF baseline's estimates.
#[derive(Serialize)]
struct NmfMeta<'a> {
    rank: usize,
    iters: usize,
    divergence_trace: &'a [f64],
    config: &'a Config,
}

fn run_nmf(args: &NmfArgs) -> Result<()> {
    let cfg = Config::default();
    let mix = read_wav(&args.mixture, cfg.fs)?;
    let sc = cfg.mask_stft();
    let frames = sc.num_frames(mix.len());
    let f0 = load_f0_csv(&args.f0)?;
    let tracks = tracks_for(&f0, args.sources, cfg.mask_hop, cfg.fs as f64, frames)?;
    let v = stft(&mix.samples, &sc)?.magnitude();
    let mut model = init_from_f0(&tracks, v.ncols(), &cfg)?;
    let trace = nmf_fit(&v, &mut model, args.iters)?;
    let est = nmf_separate(&mix.samples, &model, &tracks, &cfg)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (j, s) in est.iter().enumerate() {
        let path = args.out.join(format!("source_{j}.wav"));
        write_wav(&path, &AudioBuffer::new(s.clone(), cfg.fs)?)?;
    }
    let meta = NmfMeta {
        rank: model.rank(),
        iters: args.iters,
        divergence_trace: &trace,
        config: &cfg,
    };
    write_json(&args.out.join("nmf_meta.json"), &meta)?;
    println!(
        "rank-{} model, divergence {:.3} -> {:.3}; wrote {} estimates to {}",
        model.rank(),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN),
        est.len(),
        args.out.display()
    );
    Ok(())
}

/// Metrics of one (estimate, reference) pair.
#[derive(Serialize)]
struct PairReport {
    name: String,
    si_sdr_db: f64,
    spectral_snr_db: f64,
    framewise: SourceEval,
}

/// Full evaluation report: the knobs used plus per-pair metric arrays.
#[derive(Serialize)]
struct EvalReport<'a> {
    frame_len_seconds: f64,
    frame_len_samples: usize,
    energy_thresh: f64,
    config: &'a Config,
    pairs: Vec<PairReport>,
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = Config::default();
    let frame_len = (args.frame_len * cfg.fs as f64).round() as usize;
    if frame_len == 0 {
        return Err(Error::invalid("frame length must cover at least one sample"));
    }
    let mut names: Vec<String> = fs::read_dir(&args.est_dir)
        .map_err(|e| Error::io(&args.est_dir, e))?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.file_name().to_string_lossy().into_owned())
        .filter(|name| name.ends_with(".wav"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::invalid(format!(
            "no .wav files found in {}",
            args.est_dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(names.len());
    for name in names {
        let est = read_wav(&args.est_dir.join(&name), cfg.fs)?;
        let reference = read_wav(&args.ref_dir.join(&name), cfg.fs)?;
        let si = si_sdr(&est.samples, &reference.samples)?;
        let snr = spectral_snr(&est.samples, &reference.samples, &cfg.mask_stft())?;
        let framewise = framewise_eval(&est.samples, &reference.samples, frame_len, args.energy_thresh)?;
        println!(
            "{name}: si-sdr {si:.2} dB, spectral snr {snr:.2} dB, {} frames scored, {} excluded",
            framewise.frames.len(),
            framewise.excluded.len()
        );
        pairs.push(PairReport {
            name,
            si_sdr_db: si,
            spectral_snr_db: snr,
            framewise,
        });
    }
    let report = EvalReport {
        frame_len_seconds: args.frame_len,
        frame_len_samples: frame_len,
        energy_thresh: args.energy_thresh,
        config: &cfg,
        pairs,
    };
    write_json(&args.report, &report)?;
    println!("wrote report to {}", args.report.display());
    Ok(())
}

fn run_gradcheck(seed: u64, coords: usize, tol: f64) -> Result<ExitCode> {
    let t0 = Instant::now();
    let report = gradient_check(seed, coords, tol, &Config::default())?;
    println!(
        "checked {} coordinates in {:.1} s: {} failures, worst relative error {:.3e} at coordinate {}",
        report.checked,
        t0.elapsed().as_secs_f64(),
        report.failures,
        report.worst_rel,
        report.worst_index
    );
    if report.failures == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed");
        Ok(ExitCode::FAILURE)
    }
}

fn run_assign_f0(raw: &Path, sources: usize, out: &Path) -> Result<()> {
    if sources == 0 {
        return Err(Error::invalid("J must be >= 1: need at least one source"));
    }
    let file = load_f0_csv(raw)?;
    let (times, tracks) = match file {
        F0File::Raw(frames) => {
            let times: Vec<f64> = frames.iter().map(|f| f.time).collect();
            let tracks = assign_f0s(&frames, sources);
            (times, tracks)
        }
        F0File::Assigned { times, tracks } => {
            if tracks.len() != sources {
                return Err(Error::invalid(format!(
                    "CSV already holds {} assigned sources but --sources is {sources}",
                    tracks.len()
                )));
            }
            (times, tracks)
        }
    };
    write_assigned_csv(out, &times, &tracks)?;
    println!(
        "assigned {} frames to {sources} sources -> {}",
        times.len(),
        out.display()
    );
    Ok(())
}
