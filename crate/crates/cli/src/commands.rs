use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;

use echoxkit_core::codebook::{assign, train_codebook, Codebook};
use echoxkit_core::dataqc::{
    corpus_stats, filter_corpus, read_manifest, read_pair_records, write_pair_records,
};
use echoxkit_core::error::Error;
use echoxkit_core::losses::{
    combined_loss, cross_entropy, cross_entropy_with_grad, denoising_loss, grad_check,
    AdapterParams, Reduction, TokenDistribution, DEFAULT_LAMBDA,
};
use echoxkit_core::matrix::{
    read_matrix, write_matrix, Matrix, CODEBOOK_MAGIC, FRAME_MAGIC,
};
use echoxkit_core::pipeline::{HarnessConfig, StageThreeHarness};
use echoxkit_core::segmenter::{
    compression_report, segment, write_segment_records, SegmentRecord,
};
use echoxkit_core::streamer::{latency_report, stream_segment, TriggerConfig};
use echoxkit_core::unitlm::{train_span_model, SpanModel};
use echoxkit_core::unitseq::{
    dedup_adjacent, read_unit_records, write_unit_records, UnitRecord,
};

/// Speech-unit tokenization, unit-language segmentation, echo-training loss
/// kernels, streaming policy simulation, and data quality control.
#[derive(Parser)]
#[command(name = "echoxkit", version, subcommand_required = true, arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a k-means codebook over a frame matrix.
    TrainCodebook(TrainCodebookArgs),
    /// Quantize frame files into unit-sequence records.
    Quantize(QuantizeArgs),
    /// Collapse adjacent duplicate unit IDs.
    Dedup(DedupArgs),
    /// Train the span-statistics model used for segmentation.
    TrainUnitlm(TrainUnitlmArgs),
    /// Segment unit sequences into unit-language tokens.
    Segment(SegmentArgs),
    /// Report token/unit compression over a corpus.
    CompressReport(CompressReportArgs),
    /// Evaluate loss batches from a JSONL file.
    LossesEval(LossesEvalArgs),
    /// Verify analytic gradients against central finite differences.
    GradCheck(GradCheckArgs),
    /// Simulate the streaming read/write policy over hidden states.
    StreamSim(StreamSimArgs),
    /// Run seeded echo-training steps end to end.
    PipelineRun(PipelineRunArgs),
    /// Filter transcript pairs by word error rate.
    WerFilter(WerFilterArgs),
    /// Aggregate a dataset manifest into per-task statistics.
    CorpusStats(CorpusStatsArgs),
}

#[derive(Args)]
struct TrainCodebookArgs {
    /// Frame matrix file (EFX1).
    #[arg(long)]
    frames: PathBuf,
    /// Codebook size.
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output codebook file (ECB1).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Codebook file (ECB1).
    #[arg(long)]
    codebook: PathBuf,
    /// Output JSONL of unit records.
    #[arg(long)]
    output: PathBuf,
    /// Frame matrix files (EFX1); record ids are the file stems.
    #[arg(required = true)]
    frames: Vec<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainUnitlmArgs {
    /// Unit-record JSONL corpus.
    #[arg(long)]
    input: PathBuf,
    /// Maximum units per token (K).
    #[arg(long, default_value_t = 4)]
    max_span: usize,
    /// Additive smoothing constant.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Output model JSON.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// Span model JSON from train-unitlm.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CompressReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Render an aligned table instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct LossesEvalArgs {
    /// JSONL of loss batches.
    #[arg(long)]
    input: PathBuf,
    /// Weight on the denoising component when a batch does not set one.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Report per-position means instead of sums.
    #[arg(long)]
    mean: bool,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
}

#[derive(Args)]
struct StreamSimArgs {
    /// Hidden-state matrix file (EFX1).
    #[arg(long)]
    hidden: PathBuf,
    /// Trigger configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output JSONL of per-position decisions.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct PipelineRunArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Per-step loss JSONL destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct WerFilterArgs {
    /// Transcript pair JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Strict retention bound: keep pairs with WER < threshold.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    /// Retained pairs JSONL destination.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CorpusStatsArgs {
    /// Manifest CSV with header id,task,size,duration_hours.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    pretty: bool,
}

pub struct CliError {
    pub kind: String,
    pub message: String,
    pub exit_code: u8,
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let exit_code = match err {
            Error::Format(_) => 3,
            _ => 1,
        };
        CliError { kind: err.kind().to_string(), message: err.to_string(), exit_code }
    }
}

type CliResult = Result<(), CliError>;

fn format_err(message: String) -> CliError {
    CliError { kind: "FormatError".into(), message, exit_code: 3 }
}

/// Caps rayon's pool from ECHOXKIT_THREADS (0 or unset means auto).
pub fn init_thread_pool() {
    if let Ok(value) = std::env::var("ECHOXKIT_THREADS") {
        if let Ok(n) = value.trim().parse::<usize>() {
            if n > 0 {
                // Failure just means a pool already exists; keep going.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::TrainCodebook(args) => cmd_train_codebook(args),
        Command::Quantize(args) => cmd_quantize(args),
        Command::Dedup(args) => cmd_dedup(args),
        Command::TrainUnitlm(args) => cmd_train_unitlm(args),
        Command::Segment(args) => cmd_segment(args),
        Command::CompressReport(args) => cmd_compress_report(args),
        Command::LossesEval(args) => cmd_losses_eval(args),
        Command::GradCheck(args) => cmd_grad_check(args),
        Command::StreamSim(args) => cmd_stream_sim(args),
        Command::PipelineRun(args) => cmd_pipeline_run(args),
        Command::WerFilter(args) => cmd_wer_filter(args),
        Command::CorpusStats(args) => cmd_corpus_stats(args),
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format_err(format!("cannot open {}: {e}", path.display())))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError {
            kind: "IoError".into(),
            message: format!("cannot create {}: {e}", path.display()),
            exit_code: 1,
        })
}

fn load_frames(path: &Path) -> Result<Matrix, CliError> {
    let mut reader = open_reader(path)?;
    read_matrix(&mut reader, FRAME_MAGIC).map_err(CliError::from)
}

fn load_codebook(path: &Path) -> Result<Codebook, CliError> {
    let mut reader = open_reader(path)?;
    let centroids = read_matrix(&mut reader, CODEBOOK_MAGIC)?;
    Codebook::from_centroids(centroids, None).map_err(CliError::from)
}

fn load_unit_records(path: &Path) -> Result<Vec<UnitRecord>, CliError> {
    Ok(read_unit_records(open_reader(path)?)?)
}

fn load_span_model(path: &Path) -> Result<SpanModel, CliError> {
    let mut text = String::new();
    open_reader(path)?
        .read_to_string(&mut text)
        .map_err(|e| format_err(format!("cannot read {}: {e}", path.display())))?;
    Ok(SpanModel::from_json(&text)?)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_train_codebook(args: TrainCodebookArgs) -> CliResult {
    let frames = load_frames(&args.frames)?;
    let codebook = train_codebook(&frames, args.k, args.max_iters, args.seed)?;
    let mut writer = create_writer(&args.output)?;
    write_matrix(&mut writer, codebook.centroids(), CODEBOOK_MAGIC)?;
    writer.flush().map_err(Error::from)?;
    println!(
        "{}",
        serde_json::json!({
            "k": codebook.k(),
            "dim": codebook.dim(),
            "frames": frames.rows(),
            "seed": args.seed,
            "output": args.output.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_quantize(args: QuantizeArgs) -> CliResult {
    let codebook = load_codebook(&args.codebook)?;
    let loaded: Vec<(String, Matrix)> = args
        .frames
        .iter()
        .map(|p| Ok((file_stem(p), load_frames(p)?)))
        .collect::<Result<_, CliError>>()?;
    let records: Vec<UnitRecord> = loaded
        .par_iter()
        .map(|(id, frames)| {
            let units = assign(frames, &codebook)?;
            Ok(UnitRecord::new(id.clone(), &units))
        })
        .collect::<Result<_, Error>>()?;
    let mut writer = create_writer(&args.output)?;
    write_unit_records(&mut writer, &records)?;
    writer.flush().map_err(Error::from)?;
    println!(
        "{}",
        serde_json::json!({
            "records": records.len(),
            "vocab_size": codebook.k(),
            "output": args.output.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_dedup(args: DedupArgs) -> CliResult {
    let records = load_unit_records(&args.input)?;
    let mut out = Vec::with_capacity(records.len());
    let mut before = 0usize;
    let mut after = 0usize;
    for rec in &records {
        let seq = rec.to_sequence()?;
        let deduped = dedup_adjacent(&seq);
        before += seq.len();
        after += deduped.len();
        out.push(UnitRecord::new(rec.id.clone(), &deduped));
    }
    let mut writer = create_writer(&args.output)?;
    write_unit_records(&mut writer, &out)?;
    writer.flush().map_err(Error::from)?;
    println!(
        "{}",
        serde_json::json!({
            "records": out.len(),
            "units_before": before,
            "units_after": after,
        })
    );
    Ok(())
}

fn cmd_train_unitlm(args: TrainUnitlmArgs) -> CliResult {
    let records = load_unit_records(&args.input)?;
    let corpus = records
        .iter()
        .map(|r| r.to_sequence())
        .collect::<Result<Vec<_>, _>>()?;
    let model = train_span_model(&corpus, args.max_span, args.alpha)?;
    let mut writer = create_writer(&args.output)?;
    writer.write_all(model.to_json()?.as_bytes()).map_err(Error::from)?;
    writer.write_all(b"\n").map_err(Error::from)?;
    writer.flush().map_err(Error::from)?;
    println!(
        "{}",
        serde_json::json!({
            "sequences": corpus.len(),
            "max_span": args.max_span,
            "alpha": args.alpha,
            "vocab_size": model.vocab_size(),
            "output": args.output.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> CliResult {
    let records = load_unit_records(&args.input)?;
    let model = load_span_model(&args.model)?;
    let out: Vec<SegmentRecord> = records
        .par_iter()
        .map(|rec| {
            let seq = rec.to_sequence()?;
            let seg = segment(&seq, &model)?;
            Ok(SegmentRecord { id: rec.id.clone(), tokens: seg.tokens, score: seg.score })
        })
        .collect::<Result<_, Error>>()?;
    let mut writer = create_writer(&args.output)?;
    write_segment_records(&mut writer, &out)?;
    writer.flush().map_err(Error::from)?;
    println!(
        "{}",
        serde_json::json!({
            "records": out.len(),
            "output": args.output.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_compress_report(args: CompressReportArgs) -> CliResult {
    let records = load_unit_records(&args.input)?;
    let model = load_span_model(&args.model)?;
    let corpus = records
        .iter()
        .map(|r| r.to_sequence())
        .collect::<Result<Vec<_>, _>>()?;
    let report = compression_report(&corpus, &model)?;
    if args.pretty {
        println!("{:<20} {:>10} {:>10} {:>8}", "id", "units", "tokens", "ratio");
        for (rec, detail) in records.iter().zip(&report.per_sequence) {
            println!(
                "{:<20} {:>10} {:>10} {:>8.4}",
                rec.id, detail.units, detail.tokens, detail.ratio
            );
        }
        println!(
            "{:<20} {:>10.2} {:>10.2} {:>8.4}",
            "mean", report.mean_units, report.mean_tokens, report.ratio
        );
    } else {
        println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    }
    Ok(())
}

/// One loss-evaluation batch. Components are optional; absent ones score 0.
#[derive(Deserialize)]
struct LossBatchSpec {
    echo_logits: Option<Vec<Vec<f64>>>,
    echo_targets: Option<Vec<u32>>,
    s2t_logits: Option<Vec<Vec<f64>>>,
    s2t_targets: Option<Vec<u32>>,
    hidden: Option<Vec<Vec<f64>>>,
    embeddings: Option<Vec<Vec<f64>>>,
    adapter: Option<AdapterSpec>,
    lambda: Option<f64>,
}

#[derive(Deserialize)]
struct AdapterSpec {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

impl AdapterSpec {
    fn build(&self) -> Result<AdapterParams, Error> {
        AdapterParams::new(
            Matrix::from_rows(&self.w1)?,
            self.b1.clone(),
            Matrix::from_rows(&self.w2)?,
            self.b2.clone(),
        )
    }
}

fn ce_component(
    logits: &Option<Vec<Vec<f64>>>,
    targets: &Option<Vec<u32>>,
    reduction: Reduction,
    what: &str,
) -> Result<f64, Error> {
    match (logits, targets) {
        (Some(logits), Some(targets)) => {
            let dist = TokenDistribution::new(Matrix::from_rows(logits)?)?;
            cross_entropy(&dist, targets, reduction)
        }
        (None, None) => Ok(0.0),
        _ => Err(Error::InvalidInput(format!("{what} needs both logits and targets"))),
    }
}

fn cmd_losses_eval(args: LossesEvalArgs) -> CliResult {
    let reduction = if args.mean { Reduction::Mean } else { Reduction::Sum };
    let reader = open_reader(&args.input)?;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: LossBatchSpec = serde_json::from_str(&line)
            .map_err(|e| format_err(format!("batch line {}: {e}", lineno + 1)))?;
        let echo = ce_component(&spec.echo_logits, &spec.echo_targets, reduction, "echo")?;
        let s2t = ce_component(&spec.s2t_logits, &spec.s2t_targets, reduction, "s2t")?;
        let denoising = match (&spec.hidden, &spec.adapter, &spec.embeddings) {
            (Some(hidden), Some(adapter), Some(embeddings)) => {
                let h = Matrix::from_rows(hidden)?;
                let e = Matrix::from_rows(embeddings)?;
                denoising_loss(&h, &adapter.build()?, &e, reduction)?.0
            }
            (None, None, None) => 0.0,
            _ => {
                return Err(Error::InvalidInput(
                    "denoising needs hidden, adapter, and embeddings together".into(),
                )
                .into())
            }
        };
        let lambda = spec.lambda.unwrap_or(args.lambda);
        let breakdown = combined_loss(echo, denoising, s2t, lambda)?;
        println!("{}", serde_json::to_string(&breakdown).map_err(Error::from)?);
    }
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> CliResult {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst_denoising = 0.0f64;
    let mut worst_ce = 0.0f64;
    for _ in 0..args.trials {
        // Denoising adapter gradient on a random small instance.
        let n = rng.random_range(1..5usize);
        let d = rng.random_range(2..8usize);
        let h = rng.random_range(2..8usize);
        let o = rng.random_range(2..8usize);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize| {
            Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let hidden = mk(&mut rng, n, d);
        let embeddings = {
            // Keep rows away from zero norm.
            let mut m = mk(&mut rng, n, o);
            for i in 0..n {
                m.row_mut(i)[0] += 1.5;
            }
            m
        };
        let adapter = AdapterParams::new(
            mk(&mut rng, d, h),
            (0..h).map(|_| rng.random_range(-0.2..0.2)).collect(),
            mk(&mut rng, h, o),
            (0..o).map(|_| rng.random_range(-0.2..0.2)).collect(),
        )?;
        let template = adapter.clone();
        let err = grad_check(
            |flat| {
                let a = template.from_flat(flat)?;
                let (loss, grad) = denoising_loss(&hidden, &a, &embeddings, Reduction::Sum)?;
                Ok((loss, grad.to_flat()))
            },
            &adapter.to_flat(),
            args.step,
        )?;
        worst_denoising = worst_denoising.max(err);

        // Cross-entropy gradient with respect to the logits.
        let m = rng.random_range(1..5usize);
        let v = rng.random_range(2..8usize);
        let logits = mk(&mut rng, m, v);
        let targets: Vec<u32> = (0..m).map(|_| rng.random_range(0..v as u32)).collect();
        let err = grad_check(
            |flat| {
                let dist = TokenDistribution::new(Matrix::new(m, v, flat.to_vec())?)?;
                let (loss, grad) = cross_entropy_with_grad(&dist, &targets, Reduction::Sum)?;
                Ok((loss, grad.data().to_vec()))
            },
            logits.data(),
            args.step,
        )?;
        worst_ce = worst_ce.max(err);
    }
    let tolerance = 1e-4;
    println!(
        "{}",
        serde_json::json!({
            "trials": args.trials,
            "step": args.step,
            "denoising_max_rel_err": worst_denoising,
            "cross_entropy_max_rel_err": worst_ce,
            "tolerance": tolerance,
            "pass": worst_denoising <= tolerance && worst_ce <= tolerance,
        })
    );
    Ok(())
}

fn cmd_stream_sim(args: StreamSimArgs) -> CliResult {
    let hidden = load_frames(&args.hidden)?;
    let mut config_text = String::new();
    open_reader(&args.config)?
        .read_to_string(&mut config_text)
        .map_err(|e| format_err(format!("cannot read {}: {e}", args.config.display())))?;
    let config: TriggerConfig = serde_json::from_str(&config_text)
        .map_err(|e| format_err(format!("trigger config: {e}")))?;
    config.validate()?;

    let run = stream_segment(&hidden, &config)?;
    let mut writer = create_writer(&args.output)?;
    for decision in &run.decisions {
        serde_json::to_writer(&mut writer, decision).map_err(Error::from)?;
        writer.write_all(b"\n").map_err(Error::from)?;
    }
    writer.flush().map_err(Error::from)?;

    let report = latency_report(&run.decisions, config.window, run.decisions.len());
    if args.pretty {
        println!("positions        {}", run.decisions.len());
        println!("writes           {}", report.write_count);
        println!("segments         {}", report.segment_count);
        println!("latency (tokens) {}", report.latency_tokens);
        println!("offline latency  {}", report.offline_latency_tokens);
        println!("mean segment len {:.2}", report.mean_segment_length);
    } else {
        println!(
            "{}",
            serde_json::json!({
                "positions": run.decisions.len(),
                "threshold": config.threshold,
                "window": config.window,
                "latency": report,
                "segments": run.segments.len(),
            })
        );
    }
    Ok(())
}

fn cmd_pipeline_run(args: PipelineRunArgs) -> CliResult {
    let cfg = HarnessConfig { lambda: args.lambda, lr: args.lr, ..Default::default() };
    let mut harness = StageThreeHarness::new(args.seed, cfg)?;
    let mut lines = Vec::with_capacity(args.steps);
    for _ in 0..args.steps {
        let breakdown = harness.step()?;
        lines.push(serde_json::to_string(&breakdown).map_err(Error::from)?);
    }
    match &args.output {
        Some(path) => {
            let mut writer = create_writer(path)?;
            for line in &lines {
                writer.write_all(line.as_bytes()).map_err(Error::from)?;
                writer.write_all(b"\n").map_err(Error::from)?;
            }
            writer.flush().map_err(Error::from)?;
        }
        None => {
            for line in &lines {
                println!("{line}");
            }
        }
    }
    println!("{}", serde_json::to_string(&harness.checksum_manifest()).map_err(Error::from)?);
    Ok(())
}

fn cmd_wer_filter(args: WerFilterArgs) -> CliResult {
    let records = read_pair_records(open_reader(&args.input)?)?;
    let pairs: Vec<_> = records.par_iter().map(|r| r.to_pair()).collect();
    let (retained, report) = filter_corpus(&pairs, args.threshold)?;
    let retained_ids: std::collections::HashSet<&str> =
        retained.iter().map(|p| p.id.as_str()).collect();
    let retained_records: Vec<_> = records
        .iter()
        .filter(|r| retained_ids.contains(r.id.as_str()))
        .cloned()
        .collect();
    let mut writer = create_writer(&args.output)?;
    write_pair_records(&mut writer, &retained_records)?;
    writer.flush().map_err(Error::from)?;
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    Ok(())
}

fn cmd_corpus_stats(args: CorpusStatsArgs) -> CliResult {
    let rows = read_manifest(open_reader(&args.manifest)?)?;
    let stats = corpus_stats(&rows)?;
    if args.pretty {
        println!("{:<10} {:>12} {:>14}", "task", "size", "duration (h)");
        for task in &stats.per_task {
            println!("{:<10} {:>12} {:>14.1}", task.task, task.size, task.duration_hours);
        }
        println!("{:<10} {:>12} {:>14.1}", "total", stats.total_size, stats.total_duration_hours);
    } else {
        println!("{}", serde_json::to_string(&stats).map_err(Error::from)?);
    }
    Ok(())
}
