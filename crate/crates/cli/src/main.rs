//! `hdh` command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hdh::config::RunConfig;
use hdh::ecc::{EccConfig, EccScheme};
use hdh::eval::{
    noise_robustness_eval, noise_rows_csv, payload_distortion_sweep, psnr, random_trigger_test,
    style_on_stego_eval, EvalData,
};
use hdh::hider::Hider;
use hdh::image_model::{denormalize, ingest_dataset, normalize, Dataset, ImageTensor, RawImage};
use hdh::message::bytes_to_bits;
use hdh::network::WeightSet;
use hdh::steganalyzer::{detector_accuracy, stego_pairs, train_detector, DetectorSplit};
use hdh::style::StyleGroundTruthSource;
use hdh::trainer::{train, TrainRun};
use hdh::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAPACITY: u8 = 3;
const EXIT_ECC: u8 = 4;
const EXIT_VERIFY: u8 = 5;
const EXIT_CHECKPOINT: u8 = 6;

#[derive(Parser)]
#[command(name = "hdh", version, about = "Style transfer network with a concealed hiding mode")]
struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Run configuration (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural image corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train on the configured dataset.
    Train,
    /// Hide a payload in a cover image.
    Embed(EmbedArgs),
    /// Recover a payload from a stego image.
    Extract(ExtractArgs),
    /// Apply the learned style transfer.
    Style {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full evaluation of the configured checkpoint at the configured N.
    Eval,
    /// Payload-distortion sweep over the configured block sizes.
    Sweep {
        /// Also write every stego image under `<output_dir>/sweep/N<n>/`.
        #[arg(long)]
        write_images: bool,
    },
    /// Steganalysis of each configured checkpoint.
    Detect,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cover: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Block size N; defaults to the configured one.
    #[arg(long)]
    block_size: Option<usize>,
    #[command(flatten)]
    payload: PayloadArgs,
    /// Protect the payload with the configured Reed-Solomon code.
    #[arg(long)]
    ecc: bool,
    /// Extract again from the written PNG and fail unless it matches.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct PayloadArgs {
    /// UTF-8 text payload.
    #[arg(long)]
    payload: Option<String>,
    #[arg(long)]
    payload_hex: Option<String>,
    #[arg(long)]
    payload_file: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    stego: PathBuf,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    ecc: bool,
    /// Use this image instead of the black trigger.
    #[arg(long)]
    trigger_image: Option<PathBuf>,
    /// Keep only the first K bytes (without ECC).
    #[arg(long)]
    bytes: Option<usize>,
    /// Write the payload here instead of printing hex.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report the bit error rate against this expected payload.
    #[arg(long)]
    truth_hex: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Capacity { .. } => EXIT_CAPACITY,
            Error::Uncorrectable { .. } | Error::Framing(_) => EXIT_ECC,
            Error::IncompatibleCheckpoint(_) | Error::CorruptCheckpoint(_) => EXIT_CHECKPOINT,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Ctx {
    workdir: PathBuf,
    config: RunConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn output_dir(&self) -> CliResult<PathBuf> {
        let dir = self.path(&self.config.output_dir);
        std::fs::create_dir_all(&dir).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn dataset(&self) -> CliResult<Dataset> {
        let rel = self
            .config
            .dataset
            .as_ref()
            .ok_or_else(|| fail(EXIT_CONFIG, "config key `dataset` is required"))?;
        Ok(ingest_dataset(
            &self.path(rel),
            self.config.image_size,
            self.config.split_ratios(),
            self.config.split_seed,
        )?)
    }

    fn style_source(&self, size: usize) -> CliResult<StyleGroundTruthSource> {
        let mut cfg = self.config.clone();
        cfg.image_size = size;
        Ok(cfg.style_source(&self.workdir)?)
    }

    /// Checkpoint required to match the configured network.
    fn configured_checkpoint(&self, p: &Path) -> CliResult<WeightSet<f32>> {
        Ok(WeightSet::load_expecting(&self.path(p), &self.config.network_spec())?)
    }

    fn required(&self, key: &str, v: &Option<PathBuf>) -> CliResult<PathBuf> {
        v.clone()
            .ok_or_else(|| fail(EXIT_CONFIG, format!("config key `{key}` is required")))
    }

    fn hider(&self, checkpoint: &Path, block_size: Option<usize>) -> CliResult<Hider> {
        let weights = WeightSet::<f32>::load(&self.path(checkpoint))?;
        let size = weights.spec().image_size;
        let source = self.style_source(size)?;
        let n = block_size.unwrap_or(self.config.block_size);
        Hider::new(weights, source.style_image, n).map_err(|e| match e {
            Error::InvalidArgument(m) | Error::Config(m) => fail(EXIT_CONFIG, format!("block size N={n}: {m}")),
            other => other.into(),
        })
    }

    fn ecc(&self, on: bool) -> CliResult<EccConfig> {
        if !on {
            return Ok(EccConfig::default());
        }
        let cfg = EccConfig {
            scheme: EccScheme::ReedSolomon,
            ..self.config.ecc_config()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_input(path: &Path, size: usize) -> CliResult<ImageTensor> {
    let raw = RawImage::load(path).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
    if raw.width() != size || raw.height() != size {
        return Err(fail(
            EXIT_CONFIG,
            format!("{} is {}x{}, the network expects {size}x{size}", path.display(), raw.width(), raw.height()),
        ));
    }
    Ok(normalize(&raw)?)
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn decode_hex(s: &str) -> CliResult<Vec<u8>> {
    hex::decode(s.trim()).map_err(|e| fail(EXIT_CONFIG, format!("invalid hex payload: {e}")))
}

fn cmd_train(ctx: &Ctx) -> CliResult<()> {
    let dataset = ctx.dataset()?;
    let source = ctx.config.style_source(&ctx.workdir)?;
    let spec = ctx.config.network_spec();
    let cfg = ctx.config.train_config();
    let out = ctx.output_dir()?;
    write_file(&out.join("split.txt"), dataset.split.to_manifest().as_bytes())?;
    let run = TrainRun {
        dataset: &dataset,
        source: &source,
        network: &spec,
        config: &cfg,
        out_dir: Some(&out),
    };
    let outcome = train(&run)?;
    println!(
        "trained {} steps; best weights in {}",
        outcome.state.step,
        out.join("best").display()
    );
    for v in &outcome.validation {
        println!("epoch {}: validation BER {:.5}, stego PSNR {:.2} dB", v.epoch, v.ber, v.stego_psnr);
    }
    Ok(())
}

fn cmd_embed(ctx: &Ctx, args: &EmbedArgs) -> CliResult<()> {
    let hider = ctx.hider(&args.checkpoint, args.block_size)?;
    let ecc = ctx.ecc(args.ecc)?;
    let payload = match (&args.payload.payload, &args.payload.payload_hex, &args.payload.payload_file) {
        (Some(text), _, _) => text.as_bytes().to_vec(),
        (_, Some(h), _) => decode_hex(h)?,
        (_, _, Some(f)) => {
            let p = ctx.path(f);
            std::fs::read(&p).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", p.display())))?
        }
        _ => unreachable!("clap requires one payload source"),
    };
    let cover = load_input(&ctx.path(&args.cover), hider.size())?;
    let bits = hider.payload_bits(&payload, &ecc)?;
    let stego = hider.embed(&cover, &bits)?;
    let out = ctx.path(&args.out);
    denormalize(&stego).save_png(&out)?;
    let cover_raw = denormalize(&cover);
    println!(
        "wrote {} ({} payload bytes, capacity {} bits, stego PSNR {:.2} dB)",
        out.display(),
        payload.len(),
        hider.capacity(),
        psnr(&denormalize(&stego), &cover_raw)?
    );
    if args.verify {
        let reread = normalize(&RawImage::load(&out)?)?;
        let got = hider.extract(&reread)?;
        let errors = bits.hamming(&got)?;
        let ber = errors as f64 / bits.len() as f64;
        let exact = if args.ecc {
            hider.bytes_from_bits(&got, &ecc, None).ok().as_deref() == Some(payload.as_slice())
        } else {
            got.truncated(payload.len() * 8) == bytes_to_bits(&payload)
        };
        println!("verify: BER {ber:.6} ({errors} bit errors), payload {}", if exact { "exact" } else { "MISMATCH" });
        if !exact {
            return Err(fail(EXIT_VERIFY, "verification failed: payload not recovered exactly"));
        }
    }
    Ok(())
}

fn cmd_extract(ctx: &Ctx, args: &ExtractArgs) -> CliResult<()> {
    let hider = ctx.hider(&args.checkpoint, args.block_size)?;
    let ecc = ctx.ecc(args.ecc)?;
    let stego = load_input(&ctx.path(&args.stego), hider.size())?;
    let bits = match &args.trigger_image {
        Some(t) => hider.extract_with(&stego, &load_input(&ctx.path(t), hider.size())?)?,
        None => hider.extract(&stego)?,
    };
    if let Some(truth) = &args.truth_hex {
        let expected = bytes_to_bits(&decode_hex(truth)?);
        let n = expected.len().min(bits.len());
        let errors = bits.truncated(n).hamming(&expected.truncated(n))?;
        eprintln!("BER vs truth: {:.6} over {n} bits", errors as f64 / n.max(1) as f64);
    }
    let payload = hider.bytes_from_bits(&bits, &ecc, args.bytes)?;
    match &args.out {
        Some(p) => write_file(&ctx.path(p), &payload)?,
        None => println!("{}", hex::encode(&payload)),
    }
    Ok(())
}

fn cmd_style(ctx: &Ctx, checkpoint: &Path, input: &Path, out: &Path) -> CliResult<()> {
    let weights = WeightSet::<f32>::load(&ctx.path(checkpoint))?;
    let size = weights.spec().image_size;
    let source = ctx.style_source(size)?;
    let hider = Hider::new(weights, source.style_image.clone(), size)?;
    let x = load_input(&ctx.path(input), size)?;
    let z = denormalize(&hider.style(&x)?);
    z.save_png(&ctx.path(out))?;
    let id = input.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    match source.ground_truth_for(id, &x) {
        Ok(zg) => println!("wrote {}; PSNR vs ground truth {:.2} dB", ctx.path(out).display(), psnr(&z, &denormalize(&zg))?),
        Err(_) => println!("wrote {} (no ground truth for {id})", ctx.path(out).display()),
    }
    Ok(())
}

fn cmd_eval(ctx: &Ctx) -> CliResult<()> {
    let cfg = &ctx.config;
    let weights = ctx.configured_checkpoint(&ctx.required("checkpoint", &cfg.checkpoint)?)?;
    let dataset = ctx.dataset()?;
    let source = cfg.style_source(&ctx.workdir)?;
    let data = EvalData {
        dataset: &dataset,
        ids: &dataset.split.test,
        source: &source,
        seed: cfg.seed,
    };
    let dir = ctx.output_dir()?.join("eval");
    let n = cfg.block_size;
    let report = payload_distortion_sweep(&weights, &data, &[n])?;
    write_file(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    let mut summary = report.summary();
    if cfg.random_trigger_trials > 0 {
        let rt = random_trigger_test(&weights, &data, n, cfg.random_trigger_trials)?;
        let mut csv = String::from("trial,ber\n");
        for (i, b) in rt.bers.iter().enumerate() {
            let _ = writeln!(csv, "{i},{b:.6}");
        }
        write_file(&dir.join("random_trigger.csv"), csv.as_bytes())?;
        let _ = writeln!(summary, "random-trigger mean BER {:.4} over {} trials", rt.mean_ber, rt.bers.len());
    }
    let st = style_on_stego_eval(&weights, &data, n)?;
    write_file(&dir.join("style_on_stego.csv"), st.to_csv().as_bytes())?;
    let _ = writeln!(
        summary,
        "style PSNR: cover input {:.2} dB, stego input {:.2} dB, gap {:.2} dB",
        st.cover_psnr_mean, st.stego_psnr_mean, st.gap
    );
    if let Some(p) = &cfg.noise_checkpoint {
        let noisy = ctx.configured_checkpoint(p)?;
        let rows = noise_robustness_eval(&weights, &noisy, &cfg.noise_eval_sigmas, &data, n)?;
        write_file(&dir.join("noise.csv"), noise_rows_csv(&rows).as_bytes())?;
        for r in rows {
            let _ = writeln!(
                summary,
                "sigma {}: plain BER {:.5}, noise-trained BER {:.5}",
                r.sigma, r.plain_ber, r.noise_trained_ber
            );
        }
    }
    write_file(&dir.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, write_images: bool) -> CliResult<()> {
    let cfg = &ctx.config;
    let weights = ctx.configured_checkpoint(&ctx.required("checkpoint", &cfg.checkpoint)?)?;
    let dataset = ctx.dataset()?;
    let source = cfg.style_source(&ctx.workdir)?;
    let data = EvalData {
        dataset: &dataset,
        ids: &dataset.split.test,
        source: &source,
        seed: cfg.seed,
    };
    let out = ctx.output_dir()?;
    let report = payload_distortion_sweep(&weights, &data, &cfg.eval_block_sizes)?;
    write_file(&out.join("sweep.csv"), report.to_csv().as_bytes())?;
    if write_images {
        for &n in &cfg.eval_block_sizes {
            let (_, stegos) = stego_pairs(&weights, &data, n)?;
            let dir = out.join("sweep").join(format!("N{n}"));
            std::fs::create_dir_all(&dir).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", dir.display())))?;
            for (id, s) in data.ids.iter().zip(&stegos) {
                s.save_png(&dir.join(id).with_extension("png"))?;
            }
        }
    }
    print!("{}", report.summary());
    Ok(())
}

fn cmd_detect(ctx: &Ctx) -> CliResult<()> {
    let cfg = &ctx.config;
    if cfg.detector_checkpoints.is_empty() {
        return Err(fail(EXIT_CONFIG, "config key `detector_checkpoints` is required"));
    }
    let dataset = ctx.dataset()?;
    let source = cfg.style_source(&ctx.workdir)?;
    let ids: Vec<String> = dataset.split.all().cloned().collect();
    let data = EvalData {
        dataset: &dataset,
        ids: &ids,
        source: &source,
        seed: cfg.seed,
    };
    let spec = cfg.detector_spec();
    let mut csv = String::from("block_size,al,accuracy,shuffled_accuracy\n");
    for (ckpt, &n) in cfg.detector_checkpoints.iter().zip(&cfg.detector_block_sizes) {
        let weights = ctx.configured_checkpoint(ckpt)?;
        let (covers, stegos) = stego_pairs(&weights, &data, n)?;
        let split = DetectorSplit::from_pairs(covers, stegos, cfg.seed)?;
        let acc = detector_accuracy(&train_detector(&split, &spec)?, &split.test)?;
        let mut shuffled = split.clone();
        shuffled.shuffle_labels(cfg.seed ^ 0x5a);
        let control = detector_accuracy(&train_detector(&shuffled, &spec)?, &shuffled.test)?;
        let al = (cfg.image_size / n).pow(2);
        println!("N={n} (AL {al}): accuracy {acc:.4}, label-shuffled control {control:.4}");
        let _ = writeln!(csv, "{n},{al},{acc:.4},{control:.4}");
    }
    write_file(&ctx.output_dir()?.join("detect.csv"), csv.as_bytes())
}

fn run(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(&cli.workdir.join(p))?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        workdir: cli.workdir,
        config,
    };
    match &cli.command {
        Command::Synth { out, count, size, seed } => {
            hdh::synth::write_corpus(&ctx.path(out), *count, *size, *seed)?;
            println!("wrote {count} images to {}", ctx.path(out).display());
            Ok(())
        }
        Command::Train => cmd_train(&ctx),
        Command::Embed(a) => cmd_embed(&ctx, a),
        Command::Extract(a) => cmd_extract(&ctx, a),
        Command::Style { checkpoint, input, out } => cmd_style(&ctx, checkpoint, input, out),
        Command::Eval => cmd_eval(&ctx),
        Command::Sweep { write_images } => cmd_sweep(&ctx, *write_images),
        Command::Detect => cmd_detect(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
