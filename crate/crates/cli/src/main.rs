use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ulvc_core::bitstream::read_sequence;
use ulvc_core::diagnostics::{bits_per_pixel, LossReport};
use ulvc_core::pipeline::{
    decode_sequence_detailed, encode_sequence_with, init_model, read_raw, stats, synthetic_clip, write_raw,
    EncodeOptions, Frame, GopConfig, Model, ModelSource,
};
use ulvc_core::selftest::run_selftest;
use ulvc_core::temporal::dequantize_alpha;
use ulvc_core::transforms::lambda_for;
use ulvc_core::Error;

const EXIT_FORMAT: u8 = 2;
const EXIT_DECODE: u8 = 3;
const EXIT_INVALID: u8 = 4;

#[derive(Parser)]
#[command(name = "ulvc", version, about = "Unified learned video codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a raw clip into a stream.
    Encode(EncodeArgs),
    /// Decode a stream into a raw clip.
    Decode(DecodeArgs),
    /// Print sequence and frame headers of a stream.
    Inspect {
        #[arg(long)]
        input: PathBuf,
    },
    /// Decode a stream and report rate and distortion against the original clip.
    Stats(StatsArgs),
    /// Compare the runtime kernels against their reference implementations.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write the seeded weight set to a file.
    InitWeights {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a synthetic raw clip.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct WeightArgs {
    /// Derive the weights from a seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Load the weights from a file.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl WeightArgs {
    fn load(&self) -> anyhow::Result<Model> {
        let source = match (&self.seed, &self.weights) {
            (Some(seed), _) => ModelSource::Seed(*seed),
            (_, Some(path)) => ModelSource::File(path.clone()),
            _ => unreachable!("clap enforces one weight source"),
        };
        Ok(init_model(&source)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ai,
    Ld,
    Ra,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Ld)]
    mode: Mode,
    /// Intra refresh interval, -1 for a single leading intra frame.
    #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
    intra_period: i32,
    /// Random-access hierarchy size.
    #[arg(long, default_value_t = 8)]
    gop_size: usize,
    #[arg(long, default_value_t = 32)]
    quality: usize,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args)]
struct StatsArgs {
    /// Original raw clip.
    #[arg(long)]
    original: PathBuf,
    /// Encoded stream.
    #[arg(long)]
    input: PathBuf,
    /// Also print the loss terms as key=value lines.
    #[arg(long)]
    losses: bool,
    #[command(flatten)]
    weights: WeightArgs,
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, data: &[u8]) -> anyhow::Result<()> {
    fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

fn gop_config(args: &EncodeArgs) -> GopConfig {
    match args.mode {
        Mode::Ai => GopConfig::all_intra(),
        Mode::Ld => GopConfig::low_delay(args.intra_period),
        Mode::Ra => GopConfig::random_access(args.intra_period, args.gop_size),
    }
}

fn encode(args: &EncodeArgs) -> anyhow::Result<()> {
    let frames = read_raw(&read(&args.input)?)?;
    let model = args.weights.load()?;
    let out = encode_sequence_with(
        &frames,
        &gop_config(args),
        args.quality,
        &model,
        &EncodeOptions::default(),
    )?;
    write(&args.output, &out.stream)?;
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width(), f.height()));
    let payload: usize = out.frames.iter().map(|f| f.hyper_bytes + f.main_bytes).sum();
    println!(
        "encoded {} frames, {} bytes, {:.4} bpp",
        frames.len(),
        out.stream.len(),
        bits_per_pixel(payload, h, w) / frames.len().max(1) as f64
    );
    Ok(())
}

fn decode(args: &DecodeArgs) -> anyhow::Result<()> {
    let model = args.weights.load()?;
    let out = decode_sequence_detailed(&read(&args.input)?, &model)?;
    write(&args.output, &write_raw(&out.frames)?)?;
    println!("decoded {} frames", out.frames.len());
    Ok(())
}

fn inspect(input: &Path) -> anyhow::Result<()> {
    let (h, frames) = read_sequence(&read(input)?)?;
    println!(
        "version={} width={} height={} frames={} gop_mode={} intra_period={} gop_size={} weight_hash={:016x}",
        h.version, h.width, h.height, h.frame_count, h.gop_mode, h.intra_period, h.gop_size, h.weight_hash
    );
    for (i, f) in frames.iter().enumerate() {
        let fh = &f.header;
        println!(
            "frame {i}: mode={} quality={} alpha_code={} pad={}x{} hyper_bytes={} main_bytes={}",
            fh.frame_mode, fh.quality_index, fh.alpha_code, fh.pad_right, fh.pad_bottom, fh.hyper_len, fh.main_len
        );
    }
    Ok(())
}

fn loss_report(
    original: &[Frame],
    out: &ulvc_core::pipeline::DecodeOutput,
    quality: usize,
) -> anyhow::Result<LossReport> {
    let (w, h) = (out.header.width as usize, out.header.height as usize);
    let n = out.frames.len().max(1) as f64;
    let rate = |bytes: usize| bits_per_pixel(bytes, h, w) / n;
    let rate_y = rate(out.info.iter().map(|f| f.main_bytes).sum());
    let rate_z = rate(out.info.iter().map(|f| f.hyper_bytes).sum());
    let mut sse = 0.0;
    for (a, b) in original.iter().zip(&out.frames) {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let d = (x as f64 - y as f64) / 255.0;
            sse += d * d;
        }
    }
    let distortion = sse / (3 * w * h) as f64 / n;
    let alphas: Vec<f64> = out
        .info
        .iter()
        .filter_map(|f| f.gate_input.map(|_| dequantize_alpha(f.alpha_code)))
        .collect();
    Ok(LossReport::new(
        rate_y,
        rate_z,
        distortion,
        lambda_for(quality),
        &alphas,
        &[],
    )?)
}

fn report_stats(args: &StatsArgs) -> anyhow::Result<()> {
    let original = read_raw(&read(&args.original)?)?;
    let stream = read(&args.input)?;
    let model = args.weights.load()?;
    let out = decode_sequence_detailed(&stream, &model)?;
    if original.len() != out.frames.len() {
        return Err(Error::InvalidArgument(format!(
            "original has {} frames, stream has {}",
            original.len(),
            out.frames.len()
        ))
        .into());
    }
    let s = stats(&original, &out.frames, &stream)?;
    for (i, f) in s.frames.iter().enumerate() {
        println!(
            "frame {i}: bytes={} bpp={:.6} mse={:.6} psnr={:.4}",
            f.payload_bytes, f.bpp, f.mse, f.psnr
        );
    }
    println!(
        "mean: bpp={:.6} mse={:.6} psnr={:.4} stream_bpp={:.6}",
        s.mean_bpp, s.mean_mse, s.mean_psnr, s.stream_bpp
    );
    if args.losses {
        let (_, records) = read_sequence(&stream)?;
        let quality = records.first().map_or(0, |r| r.header.quality_index as usize);
        print!("{}", loss_report(&original, &out, quality)?);
    }
    Ok(())
}

fn selftest(seed: u64) -> anyhow::Result<bool> {
    let mut ok = true;
    for c in run_selftest(seed) {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Encode(args) => encode(&args)?,
        Command::Decode(args) => decode(&args)?,
        Command::Inspect { input } => inspect(&input)?,
        Command::Stats(args) => report_stats(&args)?,
        Command::Selftest { seed } => return selftest(seed),
        Command::InitWeights { seed, output } => {
            let model = Model::from_seed(seed)?;
            model.save(&output)?;
            println!("wrote weights {:016x}", model.fingerprint());
        }
        Command::Synth {
            seed,
            width,
            height,
            frames,
            output,
        } => {
            if frames == 0 {
                bail!(Error::InvalidArgument("frame count must be positive".into()));
            }
            write(&output, &write_raw(&synthetic_clip(seed, frames, width, height)?)?)?;
        }
    }
    Ok(true)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Format { .. } | Error::WeightLoad { .. }) => EXIT_FORMAT,
        Some(Error::Decode { .. }) => EXIT_DECODE,
        Some(Error::InvalidArgument(_) | Error::InvalidState(_)) => EXIT_INVALID,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
