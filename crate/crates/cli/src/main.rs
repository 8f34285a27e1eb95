use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pixenv::bench::{run_benchmark, write_csv, BenchConfig};
use pixenv::distractor::DistractorMode;
use pixenv::env::{parse_size, EnvConfig};
use pixenv::prng::key_from_seed;
use pixenv::recorder::{record_rollout, verify_digest, DumpOptions, Policy, TrajectoryDigest};
use pixenv::video_tools::{generate_synthetic_pack, pack_from_frames, FrameDirSpec, PackSummary};
use pixenv::Real;

#[derive(Parser)]
#[command(name = "pixenv", version, about = "Batched pixel-observation control environments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Scalar type for physics and rendering.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Measure steps per second across envs, batch sizes and distractor modes.
    Bench(BenchArgs),
    /// Build a video pack from a directory of PPM frames.
    Pack {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frame size HxW.
        #[arg(long, value_parser = size_arg)]
        size: (usize, usize),
    },
    /// Generate the synthetic moving-gradient video pack.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        videos: usize,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long, value_parser = size_arg, default_value = "64x64")]
        size: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a rollout and write its observation hash-chain digest.
    Record {
        #[command(flatten)]
        rollout: RolloutArgs,
        #[arg(long)]
        digest: PathBuf,
        /// Dump every k-th observation as PNG.
        #[arg(long, requires = "dump_dir")]
        dump_every: Option<u64>,
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Re-run a rollout and compare it against a digest file.
    Verify {
        #[command(flatten)]
        rollout: RolloutArgs,
        #[arg(long)]
        digest: PathBuf,
    },
}

#[derive(Args)]
struct RolloutArgs {
    /// Env config file (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// zeros, random[:seed] or conv[:seed].
    #[arg(long, default_value = "random")]
    policy: Policy,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    /// Override a config field, e.g. `--set seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Base env config; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    envs: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    batches: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    distractor: Option<Vec<DistractorMode>>,
    #[arg(long)]
    pack: Option<PathBuf>,
    /// Timed loop iterations per run.
    #[arg(long, default_value_t = 500)]
    steps: u64,
    #[arg(long, default_value_t = 50)]
    warmup: u64,
    #[arg(long, value_parser = size_arg)]
    res: Option<(usize, usize)>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    action_repeat: Option<u32>,
    /// rgb or grayscale.
    #[arg(long)]
    observation: Option<String>,
    #[arg(long)]
    floor_in_background: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn size_arg(s: &str) -> Result<(usize, usize), String> {
    parse_size(s).map_err(|e| e.to_string())
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<EnvConfig> {
    let mut config = match path {
        Some(p) => EnvConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => EnvConfig::default(),
    };
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else { bail!("override {o:?} is not KEY=VALUE") };
        config.set(k.trim(), v.trim())?;
    }
    Ok(config)
}

fn print_summary(out: &PathBuf, s: &PackSummary) {
    println!(
        "wrote {}: {} videos, {} frames, {} bytes, sha256 {}",
        out.display(),
        s.videos,
        s.total_frames,
        s.bytes,
        s.sha256
    );
}

fn bench<T: Real>(args: &BenchArgs) -> Result<()> {
    let mut template = load_config(args.config.as_ref(), &[])?;
    if let Some(n) = args.action_repeat {
        template.action_repeat = n;
    }
    if let Some(o) = &args.observation {
        template.observation = o.parse()?;
    }
    if let Some(f) = args.floor_in_background {
        template.floor_in_background = f;
    }
    let (height, width) = args.res.unwrap_or((template.height, template.width));
    let config = BenchConfig {
        envs: match &args.envs {
            Some(e) => e.clone(),
            None if args.config.is_some() => vec![template.model.clone()],
            None => BenchConfig::default().envs,
        },
        batches: args.batches.clone(),
        modes: args.distractor.clone().unwrap_or_else(|| vec![template.distractor_mode]),
        pack: args.pack.clone().or_else(|| template.video_pack_path.clone()),
        warmup_steps: args.warmup,
        measure_steps: args.steps,
        height,
        width,
        seed: args.seed.unwrap_or(template.seed),
        template,
    };
    println!("{:<14} {:>11}  {:<6} {:>16} {:>16}  digest", "env", "batch", "mode", "sps", "sps/env");
    let runs = run_benchmark::<T>(&config, |run| {
        let r = &run.record;
        println!(
            "{:<14} batch {:>5}  {:<6} {:>16.1} {:>16.1}  {}",
            r.env,
            r.batch,
            r.distractor.as_str(),
            r.sps,
            r.per_env_sps(),
            &run.digest[..16]
        );
    })?;
    if let Some(out) = &args.out {
        let records: Vec<_> = runs.into_iter().map(|r| r.record).collect();
        write_csv(&records, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn record<T: Real>(rollout: &RolloutArgs, digest: &PathBuf, dumps: Option<DumpOptions>) -> Result<()> {
    let config = load_config(rollout.config.as_ref(), &rollout.overrides)?;
    let d = record_rollout::<T>(&config, rollout.policy, rollout.steps, dumps.as_ref())?;
    d.write(digest)?;
    println!("recorded {} steps (seed {}, policy {}); final {}", d.steps, d.seed, d.policy, hex(&d.final_hash));
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn verify<T: Real>(rollout: &RolloutArgs, digest: &PathBuf) -> Result<bool> {
    let config = load_config(rollout.config.as_ref(), &rollout.overrides)?;
    let recorded = TrajectoryDigest::read(digest).with_context(|| format!("reading {}", digest.display()))?;
    if recorded.steps != rollout.steps {
        eprintln!("note: digest records {} steps, verifying {}", recorded.steps, rollout.steps);
    }
    let report = verify_digest::<T>(digest, &config, rollout.policy, rollout.steps)?;
    println!("{report}");
    Ok(report.passed)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let f64 = matches!(cli.precision, Precision::F64);
    match &cli.command {
        Command::Bench(args) => {
            if f64 {
                bench::<f64>(args)?
            } else {
                bench::<f32>(args)?
            }
        }
        Command::Pack { input, out, size } => {
            let spec = FrameDirSpec { root: input.clone(), height: size.0, width: size.1 };
            print_summary(out, &pack_from_frames(&spec, out)?);
        }
        Command::Synth { seed, videos, frames, size, out } => {
            let s = generate_synthetic_pack(key_from_seed(*seed), *videos, *frames, size.0, size.1, out)?;
            print_summary(out, &s);
        }
        Command::Record { rollout, digest, dump_every, dump_dir } => {
            let dumps = dump_dir.clone().map(|dir| DumpOptions { every: dump_every.unwrap_or(1), dir });
            if f64 {
                record::<f64>(rollout, digest, dumps)?
            } else {
                record::<f32>(rollout, digest, dumps)?
            }
        }
        Command::Verify { rollout, digest } => {
            return if f64 { verify::<f64>(rollout, digest) } else { verify::<f32>(rollout, digest) };
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
