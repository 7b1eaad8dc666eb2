//! Command-line driver. Exit codes: 0 success, 1 usage or validation
//! error, 2 I/O error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::par::Schedule;
use crate::pipeline::checks::{gradient_suite, property_suite, GRAD_TOLERANCE};
use crate::pipeline::image_io::read_image;
use crate::pipeline::interpolate::{
    interpolate, InterpolationRequest, InterpolationSettings, Prepared, SsrSettings, TimeSpec,
};
use crate::pipeline::metrics::{psnr, ssim};
use crate::ssr::write_sweep_csv;
use crate::warp::{FusionConfig, HolePolicy};

#[derive(Debug, Parser)]
#[command(
    name = "m2m",
    version,
    about = "Many-to-many splatting frame interpolation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Interpolate frames between two inputs.
    Interpolate(InterpolateArgs),
    /// Sweep the refinement ratio at one time step against ground truth.
    Sweep(SweepArgs),
    /// Run the gradient check suite.
    Gradcheck(SeedArgs),
    /// Run the randomised property suite.
    Selftest(SeedArgs),
    /// Print PSNR and SSIM between two images.
    Metrics { a: PathBuf, b: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HoleArg {
    Blend,
    Mark,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    frame0: PathBuf,
    #[arg(long)]
    frame1: PathBuf,
    /// One .flo file, replicated to --n-flows sub-flows, or one per sub-flow.
    #[arg(long, num_args = 1.., required = true)]
    flow01: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    flow10: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long)]
    n_flows: Option<usize>,
    /// Offset replicated sub-flows by (+-0.5, +-0.5).
    #[arg(long)]
    jitter: bool,
    #[arg(long, value_enum, default_value = "blend")]
    holes: HoleArg,
    #[arg(long, default_value_t = 32)]
    patch_size: usize,
    /// Refinement network weights (M2MP container); random from --seed otherwise.
    #[arg(long)]
    prn_weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run every stage single-threaded.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated time steps in (0,1).
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "factor",
        required_unless_present = "factor"
    )]
    times: Option<Vec<f64>>,
    /// Emit frames at t = k/n, k = 1..n-1.
    #[arg(long)]
    factor: Option<usize>,
    /// Fraction of patches to refine; refinement is off when absent.
    #[arg(long)]
    ssr_ratio: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    time: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    ratios: Vec<f64>,
    /// Replace selected patches with ground truth instead of running the network.
    #[arg(long)]
    oracle: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeedArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl InputArgs {
    fn request(
        &self,
        times: TimeSpec,
        ssr: Option<SsrSettings>,
        out: PathBuf,
    ) -> InterpolationRequest {
        let fusion = FusionConfig {
            alpha: self.alpha,
            hole_policy: match self.holes {
                HoleArg::Blend => HolePolicy::BlendInputs,
                HoleArg::Mark => HolePolicy::MarkOnly,
            },
            ..FusionConfig::default()
        };
        let settings = InterpolationSettings {
            times,
            fusion,
            n_flows: self.n_flows,
            jitter: self.jitter,
            ssr,
            seed: self.seed,
            schedule: if self.sequential {
                Schedule::Sequential
            } else {
                Schedule::default()
            },
        };
        InterpolationRequest {
            frame0: self.frame0.clone(),
            frame1: self.frame1.clone(),
            flow01: self.flow01.clone(),
            flow10: self.flow10.clone(),
            prn_weights: self.prn_weights.clone(),
            settings,
            out,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Interpolate(a) => {
            let times = match (a.times, a.factor) {
                (Some(t), _) => TimeSpec::List(t),
                (None, Some(n)) => TimeSpec::Factor(n),
                (None, None) => {
                    return Err(Error::invalid("one of --times or --factor is required"))
                }
            };
            let ssr = a.ssr_ratio.map(|ratio| SsrSettings {
                ratio,
                patch: a.input.patch_size,
            });
            let req = a.input.request(times, ssr, a.out);
            let (run, _) = interpolate(&req)?;
            for f in &run.frames {
                writeln!(
                    out,
                    "{} t={} holes={} refined_patches={}",
                    f.file_name(),
                    f.t,
                    f.hole_ratio,
                    f.refined_patches
                )?;
            }
            writeln!(
                out,
                "shared={} unshared={} total={}",
                run.ledger.shared(),
                run.ledger.unshared()?,
                run.ledger.total()
            )?;
            Ok(0)
        }
        Command::Sweep(a) => {
            let ssr = SsrSettings {
                ratio: 0.0,
                patch: a.input.patch_size,
            };
            let req = a
                .input
                .request(TimeSpec::List(vec![a.time]), Some(ssr), PathBuf::new());
            let truth = read_image(&a.gt)?;
            let prep = Prepared::new(req.load()?, &req.settings)?;
            let rows = prep.sweep(a.time, &truth, &a.ratios, a.oracle)?;
            match a.csv {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_sweep_csv(&rows, &mut buf)?;
                    std::fs::write(&path, buf).map_err(|e| Error::file(&path, e))?;
                }
                None => write_sweep_csv(&rows, &mut *out)?,
            }
            Ok(0)
        }
        Command::Gradcheck(s) => {
            let start = Instant::now();
            let reports = gradient_suite(s.seed)?;
            let mut failed = 0;
            for r in &reports {
                let status = if r.passed() { "ok" } else { "FAIL" };
                failed += usize::from(!r.passed());
                writeln!(
                    out,
                    "{status:4} {:32} coords={:6} max_rel_err={:.3e}",
                    r.name, r.coords, r.max_rel_error
                )?;
            }
            writeln!(
                out,
                "{} checks, {failed} above {GRAD_TOLERANCE:e}, {:.1}s",
                reports.len(),
                start.elapsed().as_secs_f64()
            )?;
            Ok(i32::from(failed > 0))
        }
        Command::Selftest(s) => {
            let reports = property_suite(s.seed);
            let mut failed = 0;
            for r in &reports {
                match &r.failure {
                    None => writeln!(out, "ok   {} ({} trials)", r.name, r.trials)?,
                    Some(msg) => {
                        failed += 1;
                        writeln!(out, "FAIL {}: {msg}", r.name)?
                    }
                }
            }
            writeln!(out, "{} properties, {failed} failed", reports.len())?;
            Ok(i32::from(failed > 0))
        }
        Command::Metrics { a, b } => {
            let (fa, fb) = (read_image(&a)?, read_image(&b)?);
            writeln!(
                out,
                "psnr_db={} ssim={}",
                psnr(&fa, &fb, 1.0)?,
                ssim(&fa, &fb)?
            )?;
            Ok(0)
        }
    }
}
