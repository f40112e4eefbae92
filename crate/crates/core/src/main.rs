use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use needle_track::config::{ExperimentConfig, InitConfig};
use needle_track::error::{Error, Result};
use needle_track::filter::{initial_pose_from_detections, ParticleFilter};
use needle_track::observation::ObservationVariant;
use needle_track::pose::{pose_error, Action};
use needle_track::records::{
    read_csv, read_log, write_csv, write_log, LoggedFrame, ResultsWriter, TrackRow,
};
use needle_track::simulator::{
    run_experiment, simulate, trial_seed, ErrorSummary, Motion, NoiseSpec,
};
use serde::Serialize;

/// Exit status when the filter diverged at least once during `track`.
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "needle-track",
    version,
    about = "Suture needle pose tracking with a particle filter"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Observation variant, e.g. TwoPointsEM.
    #[arg(long, global = true)]
    variant: Option<ObservationVariant>,
    /// Overrides the configured trial count.
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write its detection log.
    Simulate {
        /// static or moving; the first configured motion by default.
        #[arg(long)]
        motion: Option<String>,
        /// Detection noise (px); the first configured sigma by default.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Track the needle through a detection log and write a track file.
    Track {
        log: PathBuf,
        /// Detection noise assumed by the filter when no point_sigma is configured.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Run every (motion, sigma, variant) condition and write the results CSV.
    Bench {
        /// Write NaN instead of measured runtimes so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
    },
    /// Diff two track files frame by frame.
    Compare { a: PathBuf, b: PathBuf },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(trials) = common.trials {
        config.trials = trials;
    }
    if let Some(variant) = common.variant {
        config.variants = vec![variant];
    }
    config.validate()?;
    Ok(config)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_motion(name: &str) -> Result<Motion> {
    match name.to_ascii_lowercase().as_str() {
        "static" => Ok(Motion::Static),
        "moving" => Ok(Motion::Moving),
        _ => Err(Error::InvalidConfig {
            field: "motion".into(),
            reason: format!("unknown motion `{name}`, expected static or moving"),
        }),
    }
}

fn cmd_simulate(common: &Common, motion: Option<String>, sigma: Option<f64>) -> Result<()> {
    let config = load_config(common)?;
    let motion = match motion {
        Some(m) => parse_motion(&m)?,
        None => config.motions[0],
    };
    let sigma = sigma.unwrap_or(config.sigmas[0]);
    // Trial 0 of the bench seed scheme, so `track` on this log matches bench trial 0.
    let noise = NoiseSpec {
        seed: trial_seed(config.seed, 0, 0),
        ..config.noise_spec(sigma)
    };
    noise.validate()?;
    let frames = simulate(
        &config.trajectory_spec(motion),
        &config.needle_model()?,
        &config.camera_intrinsics()?,
        &noise,
    )?;
    let logged: Vec<LoggedFrame> = frames.iter().map(LoggedFrame::from).collect();
    write_log(output(common.out.as_deref())?, &logged)?;
    eprintln!(
        "simulated {} frames ({}, sigma {sigma} px, seed {})",
        logged.len(),
        motion.name(),
        config.seed
    );
    Ok(())
}

struct TrackOutcome {
    rows: Vec<TrackRow>,
    divergences: usize,
}

fn track_frames(
    config: &ExperimentConfig,
    variant: ObservationVariant,
    sigma: f64,
    frames: &[LoggedFrame],
) -> Result<TrackOutcome> {
    let model = config.needle_model()?;
    let camera = config.camera_intrinsics()?;
    let mut filter_config = config.filter_config(variant, sigma)?;
    filter_config.seed = trial_seed(config.seed, 0, 1);

    let initial_pose = |f: &LoggedFrame| {
        if config.filter.init == InitConfig::Truth {
            if let Some(t) = &f.truth {
                return Some(t.to_pose());
            }
        }
        initial_pose_from_detections(&f.detections, &model, &camera).ok()
    };

    let mut filter: Option<ParticleFilter> = None;
    let mut rows = Vec::with_capacity(frames.len());
    let mut divergences = 0;
    for f in frames {
        let Some(pf) = filter.as_mut() else {
            if let Some(p0) = initial_pose(f) {
                filter = Some(ParticleFilter::new(
                    filter_config.clone(),
                    model.clone(),
                    camera,
                    &p0,
                )?);
            }
            continue;
        };
        let action = f.action.unwrap_or_else(Action::zero);
        let (estimate, neff, resampled, updated) = match pf.step(&action, &f.detections) {
            Ok(out) => (
                out.estimate,
                out.effective_count,
                out.resampled,
                out.updated,
            ),
            Err(Error::AllParticlesDegenerate) => {
                divergences += 1;
                eprintln!(
                    "frame {}: all particles degenerate, re-initializing",
                    f.frame
                );
                match initial_pose(f) {
                    Some(p0) => {
                        pf.reinitialize(&p0)?;
                        (pf.estimate()?, filter_config.particles as f64, false, false)
                    }
                    None => {
                        filter = None;
                        continue;
                    }
                }
            }
            Err(e) => return Err(e),
        };
        let error = f.truth.map(|t| pose_error(&estimate, &t.to_pose()));
        rows.push(TrackRow {
            frame: f.frame,
            x: estimate.position.x,
            y: estimate.position.y,
            z: estimate.position.z,
            rx: estimate.orientation.x,
            ry: estimate.orientation.y,
            rz: estimate.orientation.z,
            neff,
            resampled,
            updated,
            pos_err_mm: error.map(|e| e.0),
            ori_err_deg: error.map(|e| e.1),
        });
    }
    Ok(TrackOutcome { rows, divergences })
}

/// Track rows without the error columns, for logs that carry no ground truth.
#[derive(Serialize)]
struct PoseRow {
    frame: usize,
    x: f64,
    y: f64,
    z: f64,
    rx: f64,
    ry: f64,
    rz: f64,
    neff: f64,
    resampled: bool,
    updated: bool,
}

fn cmd_track(common: &Common, log: &Path, sigma: Option<f64>) -> Result<ExitCode> {
    let config = load_config(common)?;
    let file = File::open(log).map_err(|e| Error::Io(format!("{}: {e}", log.display())))?;
    let frames = read_log(BufReader::new(file))?;
    if frames.is_empty() {
        return Err(Error::Parse {
            frame: 0,
            reason: "log contains no frames".into(),
        });
    }
    let variant = config.variants[0];
    let sigma = sigma.unwrap_or(config.sigmas[0]);
    let outcome = track_frames(&config, variant, sigma, &frames)?;
    let out = output(common.out.as_deref())?;
    if frames.iter().all(|f| f.truth.is_some()) {
        write_csv(out, &outcome.rows)?;
    } else {
        let rows: Vec<PoseRow> = outcome
            .rows
            .iter()
            .map(|r| PoseRow {
                frame: r.frame,
                x: r.x,
                y: r.y,
                z: r.z,
                rx: r.rx,
                ry: r.ry,
                rz: r.rz,
                neff: r.neff,
                resampled: r.resampled,
                updated: r.updated,
            })
            .collect();
        write_csv(out, &rows)?;
    }
    let errors: Vec<(f64, f64)> = outcome
        .rows
        .iter()
        .filter_map(|r| Some((r.pos_err_mm?, r.ori_err_deg?)))
        .collect();
    if errors.is_empty() {
        eprintln!("tracked {} frames with {variant}", outcome.rows.len());
    } else {
        let n = errors.len() as f64;
        eprintln!(
            "tracked {} frames with {variant}: mean error {:.3} mm, {:.3} deg",
            outcome.rows.len(),
            errors.iter().map(|e| e.0).sum::<f64>() / n,
            errors.iter().map(|e| e.1).sum::<f64>() / n,
        );
    }
    if outcome.divergences > 0 {
        eprintln!("filter diverged {} time(s)", outcome.divergences);
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(common: &Common, no_timing: bool) -> Result<()> {
    let config = load_config(common)?;
    let path = common
        .out
        .clone()
        .or_else(|| config.output.clone().map(PathBuf::from));
    let mut writer = ResultsWriter::new(output(path.as_deref())?);
    for &motion in &config.motions {
        for &sigma in &config.sigmas {
            for &variant in &config.variants {
                let experiment = config.experiment(variant, motion, sigma)?;
                let mut row = match run_experiment(&experiment) {
                    Ok(row) => row,
                    Err(e) => {
                        writer.push(&ErrorSummary {
                            variant,
                            motion,
                            sigma,
                            pos_mean_mm: f64::NAN,
                            pos_std_mm: f64::NAN,
                            ori_mean_deg: f64::NAN,
                            ori_std_deg: f64::NAN,
                            runtime_s_per_frame: f64::NAN,
                            failures: config.trials,
                            trials: config.trials,
                        })?;
                        return Err(e);
                    }
                };
                if no_timing {
                    row.runtime_s_per_frame = f64::NAN;
                }
                writer.push(&row)?;
                eprintln!(
                    "{:<12} {:<7} sigma {:<4} pos {:7.3} ± {:6.3} mm  ori {:7.3} ± {:6.3} deg  {:.4} s/frame  failures {}/{}",
                    variant.name(),
                    motion.name(),
                    sigma,
                    row.pos_mean_mm,
                    row.pos_std_mm,
                    row.ori_mean_deg,
                    row.ori_std_deg,
                    row.runtime_s_per_frame,
                    row.failures,
                    row.trials
                );
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DiffRow {
    frame: usize,
    pos_diff_mm: f64,
    ori_diff_deg: f64,
}

fn read_track(path: &Path) -> Result<Vec<TrackRow>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(BufReader::new(file))
}

fn cmd_compare(common: &Common, a: &Path, b: &Path) -> Result<()> {
    let (ta, tb) = (read_track(a)?, read_track(b)?);
    let mut rows = Vec::new();
    let mut j = 0;
    for ra in &ta {
        while j < tb.len() && tb[j].frame < ra.frame {
            j += 1;
        }
        if let Some(rb) = tb.get(j).filter(|rb| rb.frame == ra.frame) {
            let (dp, da) = pose_error(&ra.pose(), &rb.pose());
            rows.push(DiffRow {
                frame: ra.frame,
                pos_diff_mm: dp,
                ori_diff_deg: da,
            });
        }
    }
    write_csv(output(common.out.as_deref())?, &rows)?;
    let max = |f: fn(&DiffRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    eprintln!(
        "{} common frames ({} only in first, {} only in second); max difference {:.6} mm, {:.6} deg",
        rows.len(),
        ta.len() - rows.len(),
        tb.len() - rows.len(),
        max(|r| r.pos_diff_mm),
        max(|r| r.ori_diff_deg),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { motion, sigma } => {
            cmd_simulate(&cli.common, motion, sigma).map(|_| ExitCode::SUCCESS)
        }
        Command::Track { log, sigma } => cmd_track(&cli.common, &log, sigma),
        Command::Bench { no_timing } => {
            cmd_bench(&cli.common, no_timing).map(|_| ExitCode::SUCCESS)
        }
        Command::Compare { a, b } => cmd_compare(&cli.common, &a, &b).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
