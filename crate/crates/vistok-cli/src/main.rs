//! Command-line pipeline driver: plan and encode images, compress token
//! tensors, prune record manifests, pack sequences, quantize tensors, and
//! emit cost reports. Machine-readable output goes to stdout; diagnostics go
//! to stderr. Exit codes: 0 ok, 1 domain error, 2 config/usage error,
//! 3 I/O or format error.

mod config;
mod ppm;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{build_spec, PipelineConfig};
use vistok::compress::{self, Provenance, TokenGrid, TokenSidecar, VideoTokenTensor};
use vistok::cost::{self, CostReport};
use vistok::pack::{self, PackPolicy, SeqSample};
use vistok::prune::{self, Aggregation, KeepRatios, SampleRecord};
use vistok::quant;
use vistok::{nvt, plan_tiles, Error, Image, ToyPatchEncoder};

#[derive(Parser)]
#[command(name = "vistok", version, about = "Visual-token pipeline toolkit")]
struct Cli {
    /// Pipeline configuration file (JSON)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for stochastic commands; required wherever randomness is drawn
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Primary output file
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide per-scale resize dimensions and tile grids for an image
    TilePlan {
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Take dimensions from an image file instead
        #[arg(long, value_name = "FILE")]
        image: Option<PathBuf>,
    },
    /// Extract multi-scale features from an image (PPM P6 or NVT1)
    Encode {
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
    },
    /// Compress a token tensor spatially or temporally
    Compress {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: CompressMode,
        /// Spatial block side (stc mode); defaults to the config value
        #[arg(long)]
        k: Option<usize>,
        /// Frame group size (temporal mode); defaults to the config value
        #[arg(long)]
        ratio: Option<usize>,
    },
    /// Prune a JSON-lines record manifest
    Prune {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: PruneMethodArg,
        #[arg(long)]
        ratio: f64,
        /// JSON file of per-subset ratio overrides (deltaloss only)
        #[arg(long, value_name = "FILE")]
        ratio_per_subset: Option<PathBuf>,
        /// Cluster count (cluster method only)
        #[arg(long)]
        clusters: Option<usize>,
        /// Token aggregation for scores (deltaloss only)
        #[arg(long, value_enum, default_value = "mean")]
        agg: AggArg,
    },
    /// Pack variable-length samples into fixed-capacity contexts
    Pack {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        capacity: usize,
        /// first-fit or ffd:W
        #[arg(long, default_value = "first-fit")]
        policy: String,
    },
    /// Quantize an NVT1 tensor and report round-trip error
    Quant {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// int8 | int4 | fp8; defaults to the config value
        #[arg(long)]
        format: Option<String>,
        /// per-tensor | per-channel | per-group; defaults to the config value
        #[arg(long)]
        granularity: Option<String>,
        #[arg(long)]
        group: Option<usize>,
    },
    /// Analytic prefill/decode cost accounting
    Cost {
        /// Visual tokens entering prefill
        #[arg(long)]
        tokens: Option<u64>,
        /// Second token count to compare against
        #[arg(long)]
        compare_tokens: Option<u64>,
        /// Tiles encoded, for the encoder term
        #[arg(long, default_value = "0")]
        tiles: u64,
        /// Decode context length; enables the decode section
        #[arg(long)]
        context: Option<u64>,
        #[arg(long, value_enum, default_value = "json")]
        format: CostFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CompressMode {
    Stc,
    Temporal,
}

#[derive(Clone, Copy, ValueEnum)]
enum PruneMethodArg {
    Deltaloss,
    Cluster,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Mean,
    Sum,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostFormat {
    Json,
    Csv,
}

enum CliError {
    Domain(String),
    Config(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Config(m) | CliError::Io(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => CliError::Domain(m),
            Error::CorruptBatch(m) | Error::CorruptTensor(m) => CliError::Io(m),
            Error::Format(m) => CliError::Io(m),
            Error::Io(e) => CliError::Io(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> CliResult<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => PipelineConfig::load(p).map_err(|e| match e {
            Error::Io(io) => CliError::Io(format!("config {}: {io}", p.display())),
            other => CliError::Config(other.to_string()),
        }),
    }
}

fn require_output(output: Option<&Path>, cmd: &str) -> CliResult<PathBuf> {
    output
        .map(Path::to_path_buf)
        .ok_or_else(|| CliError::Config(format!("{cmd} requires --output")))
}

fn require_seed(seed: Option<u64>, what: &str) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Config(format!("{what} draws randomness; pass an explicit --seed")))
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing output: {e}")))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::TilePlan { height, width, image } => {
            cmd_tile_plan(&cfg, height, width, image.as_deref(), cli.output.as_deref())
        }
        Command::Encode { image } => cmd_encode(&cfg, &image, cli.seed, cli.output.as_deref()),
        Command::Compress { input, mode, k, ratio } => {
            cmd_compress(&cfg, &input, mode, k, ratio, cli.output.as_deref())
        }
        Command::Prune { input, method, ratio, ratio_per_subset, clusters, agg } => cmd_prune(
            &input,
            method,
            ratio,
            ratio_per_subset.as_deref(),
            clusters,
            agg,
            cli.seed,
            cli.output.as_deref(),
        ),
        Command::Pack { input, capacity, policy } => {
            cmd_pack(&input, capacity, &policy, cli.output.as_deref())
        }
        Command::Quant { input, format, granularity, group } => {
            cmd_quant(&cfg, &input, format, granularity, group, cli.output.as_deref())
        }
        Command::Cost { tokens, compare_tokens, tiles, context, format } => {
            cmd_cost(&cfg, tokens, compare_tokens, tiles, context, format)
        }
    }
}

/// Load an image from PPM (P6) or a rank-3 NVT1 tensor, dispatching on the
/// leading magic bytes.
fn load_image(path: &Path) -> CliResult<Image> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(b"P6") {
        return Ok(ppm::read(bytes.as_slice())?);
    }
    if bytes.starts_with(&nvt::MAGIC) {
        let map = nvt::read_feature_map(bytes.as_slice())?;
        return Image::from_feature_map(map).map_err(CliError::from);
    }
    Err(CliError::Io(format!(
        "{}: unrecognized image format (expected P6 or NVT1)",
        path.display()
    )))
}

fn cmd_tile_plan(
    cfg: &PipelineConfig,
    height: Option<usize>,
    width: Option<usize>,
    image: Option<&Path>,
    output: Option<&Path>,
) -> CliResult<()> {
    let (h, w) = match (height, width, image) {
        (Some(h), Some(w), None) => (h, w),
        (None, None, Some(path)) => {
            let img = load_image(path)?;
            (img.height(), img.width())
        }
        _ => {
            return Err(CliError::Config(
                "pass either --height and --width, or --image".into(),
            ))
        }
    };
    let plan = plan_tiles(h, w, &cfg.s2)?;
    write_and_print(&plan, output)
}

fn write_and_print<T: Serialize>(value: &T, output: Option<&Path>) -> CliResult<()> {
    if let Some(path) = output {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Io(format!("serializing output: {e}")))?;
        std::fs::write(path, format!("{text}\n"))
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    print_json(value)
}

#[derive(Serialize)]
struct EncodeSummary {
    tiles: usize,
    tokens_per_tile: usize,
    total_tokens: usize,
}

fn cmd_encode(
    cfg: &PipelineConfig,
    image_path: &Path,
    seed: Option<u64>,
    output: Option<&Path>,
) -> CliResult<()> {
    let out_path = require_output(output, "encode")?;
    let img = load_image(image_path)?;
    let seed = seed.unwrap_or(cfg.encoder.seed);
    let encoder = ToyPatchEncoder::from_config(cfg.encoder.channels, &cfg.s2, seed)?;
    let plan = plan_tiles(img.height(), img.width(), &cfg.s2)?;
    let features = vistok::tiling::multiscale_features_planned(&img, &encoder, &plan)?;
    nvt::write_feature_map_file(&out_path, &features)?;
    let count = compress::count_tokens(&plan, cfg.stc_k, cfg.s2.feature_side)?;
    print_json(&EncodeSummary {
        tiles: count.merged_tiles,
        tokens_per_tile: count.tokens_per_tile,
        total_tokens: count.total_tokens,
    })
}

fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    output.with_file_name(name)
}

fn cmd_compress(
    cfg: &PipelineConfig,
    input: &Path,
    mode: CompressMode,
    k: Option<usize>,
    ratio: Option<usize>,
    output: Option<&Path>,
) -> CliResult<()> {
    let out_path = require_output(output, "compress")?;
    let (shape, data) = nvt::read_tensor_file(input)?;
    let sidecar = match mode {
        CompressMode::Stc => {
            let k = k.unwrap_or(cfg.stc_k);
            if shape.len() != 3 {
                return Err(CliError::Io(format!(
                    "stc mode expects a rank-3 tensor, got rank {}",
                    shape.len()
                )));
            }
            let grid = TokenGrid::new(shape[0], shape[1], shape[2], data, Provenance::Image)?;
            let out = compress::stc_reshape(&grid, k)?;
            nvt::write_tensor_file(&out_path, &[out.rows, out.cols, out.channels], &out.data)?;
            TokenSidecar::for_grid(&out)
        }
        CompressMode::Temporal => {
            let ratio = ratio.unwrap_or(cfg.temporal_pool_ratio);
            if shape.len() != 4 {
                return Err(CliError::Io(format!(
                    "temporal mode expects a rank-4 tensor, got rank {}",
                    shape.len()
                )));
            }
            let (frames, rows, cols, ch) = (shape[0], shape[1], shape[2], shape[3]);
            let per_frame = rows * cols * ch;
            let grids = (0..frames)
                .map(|f| {
                    TokenGrid::new(
                        rows,
                        cols,
                        ch,
                        data[f * per_frame..(f + 1) * per_frame].to_vec(),
                        Provenance::VideoFrame,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let video = VideoTokenTensor::new(grids)?;
            let out = compress::temporal_pool(&video, ratio)?;
            let mut flat = Vec::with_capacity(out.frames.len() * per_frame);
            for frame in &out.frames {
                flat.extend_from_slice(&frame.data);
            }
            nvt::write_tensor_file(&out_path, &[out.frames.len(), rows, cols, ch], &flat)?;
            TokenSidecar::for_video(&out)
        }
    };
    let side_path = sidecar_path(&out_path);
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CliError::Io(format!("serializing sidecar: {e}")))?;
    std::fs::write(&side_path, format!("{text}\n"))
        .map_err(|e| CliError::Io(format!("{}: {e}", side_path.display())))?;
    print_json(&sidecar)
}

fn read_jsonl_records(path: &Path) -> CliResult<Vec<SampleRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| {
            CliError::Io(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        record.validate()?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(CliError::Io(format!("{}: no records", path.display())));
    }
    Ok(records)
}

#[derive(Serialize)]
struct SubsetSummary {
    total: usize,
    kept: usize,
    ratio: f64,
}

#[derive(Serialize)]
struct PruneSummary {
    method: prune::PruneMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    subsets: BTreeMap<String, SubsetSummary>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_prune(
    input: &Path,
    method: PruneMethodArg,
    ratio: f64,
    ratio_per_subset: Option<&Path>,
    clusters: Option<usize>,
    agg: AggArg,
    seed: Option<u64>,
    output: Option<&Path>,
) -> CliResult<()> {
    let out_path = require_output(output, "prune")?;
    let records = read_jsonl_records(input)?;
    let manifest = match method {
        PruneMethodArg::Deltaloss => {
            let overrides: BTreeMap<String, f64> = match ratio_per_subset {
                None => BTreeMap::new(),
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
                }
            };
            let ratios = KeepRatios::with_overrides(ratio, overrides)?;
            let agg = match agg {
                AggArg::Mean => Aggregation::Mean,
                AggArg::Sum => Aggregation::Sum,
            };
            prune::prune_deltaloss(&records, &ratios, agg)?
        }
        PruneMethodArg::Cluster => {
            let seed = require_seed(seed, "cluster pruning")?;
            let k = clusters
                .ok_or_else(|| CliError::Config("cluster pruning requires --clusters".into()))?;
            prune::prune_cluster(&records, k, ratio, seed)?
        }
        PruneMethodArg::Random => {
            let seed = require_seed(seed, "random pruning")?;
            prune::prune_random(&records, ratio, seed)?
        }
    };

    let mut lines = String::new();
    for (subset, ids) in &manifest.kept {
        for id in ids {
            lines.push_str(&serde_json::json!({ "id": id, "subset": subset }).to_string());
            lines.push('\n');
        }
    }
    std::fs::write(&out_path, lines)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_path.display())))?;

    let mut subset_totals: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        *subset_totals.entry(r.subset.clone()).or_default() += 1;
    }
    let subsets = manifest
        .kept
        .iter()
        .map(|(name, ids)| {
            (
                name.clone(),
                SubsetSummary {
                    total: subset_totals[name],
                    kept: ids.len(),
                    ratio: manifest.keep_ratio[name],
                },
            )
        })
        .collect();
    print_json(&PruneSummary { method: manifest.method, seed: manifest.seed, subsets })
}

#[derive(serde::Deserialize)]
struct PackLine {
    id: String,
    #[serde(default)]
    tokens: Option<Vec<i64>>,
    #[serde(default)]
    length: Option<usize>,
}

#[derive(Serialize)]
struct PackSummary {
    contexts: usize,
    samples: usize,
    packed_tokens: usize,
    utilization: f64,
    rejected: Vec<pack::RejectedSample>,
}

fn cmd_pack(input: &Path, capacity: usize, policy: &str, output: Option<&Path>) -> CliResult<()> {
    let out_path = require_output(output, "pack")?;
    let policy = PackPolicy::parse(policy)?;
    let file = std::fs::File::open(input)
        .map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PackLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Io(format!("{}:{}: {e}", input.display(), lineno + 1)))?;
        let payload = match (parsed.tokens, parsed.length) {
            (Some(tokens), _) => tokens,
            (None, Some(len)) => vec![0i64; len],
            (None, None) => {
                return Err(CliError::Io(format!(
                    "{}:{}: record needs tokens or length",
                    input.display(),
                    lineno + 1
                )))
            }
        };
        samples.push(SeqSample::new(parsed.id, payload)?);
    }
    let n_samples = samples.len();
    let outcome = pack::pack_all(samples, capacity, policy)?;
    let blob_path = out_path.with_extension("payload");
    pack::write_batch_files(&outcome.batch, &out_path, &blob_path)?;
    print_json(&PackSummary {
        contexts: outcome.batch.contexts.len(),
        samples: n_samples,
        packed_tokens: outcome.batch.packed_tokens(),
        utilization: outcome.batch.utilization(),
        rejected: outcome.rejected,
    })
}

fn cmd_quant(
    cfg: &PipelineConfig,
    input: &Path,
    format: Option<String>,
    granularity: Option<String>,
    group: Option<usize>,
    output: Option<&Path>,
) -> CliResult<()> {
    let out_path = require_output(output, "quant")?;
    let spec = build_spec(
        format.as_deref().unwrap_or(&cfg.quant.format),
        granularity.as_deref().unwrap_or(&cfg.quant.granularity),
        group.or(cfg.quant.group_size),
    )?;
    let (shape, data) = nvt::read_tensor_file(input)?;
    let q = quant::quantize(&data, &shape, spec)?;
    quant::write_quantized_file(&out_path, &q)?;
    let report = quant::quant_error_report(&data, &shape, spec)?;
    print_json(&report)
}

#[derive(Serialize)]
struct CostOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    prefill: Option<CostReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compare_prefill: Option<CostReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attention_flop_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decode: Option<CostReport>,
}

fn cmd_cost(
    cfg: &PipelineConfig,
    tokens: Option<u64>,
    compare_tokens: Option<u64>,
    tiles: u64,
    context: Option<u64>,
    format: CostFormat,
) -> CliResult<()> {
    if tokens.is_none() && context.is_none() {
        return Err(CliError::Config("pass --tokens and/or --context".into()));
    }
    let prefill = tokens
        .map(|t| cost::prefill_cost_tiled(t, tiles, &cfg.model))
        .transpose()?;
    let compare = compare_tokens
        .map(|t| cost::prefill_cost_tiled(t, tiles, &cfg.model))
        .transpose()?;
    let ratio = match (&prefill, &compare) {
        (Some(a), Some(b)) => {
            Some(a.prefill_attention_flops as f64 / b.prefill_attention_flops as f64)
        }
        _ => None,
    };
    let decode = context
        .map(|c| cost::decode_cost(&cfg.model, cfg.quant.to_spec()?, c))
        .transpose()?;
    match format {
        CostFormat::Json => print_json(&CostOutput {
            prefill,
            compare_prefill: compare,
            attention_flop_ratio: ratio,
            decode,
        }),
        CostFormat::Csv => {
            println!("{}", CostReport::CSV_HEADER);
            for report in [prefill, compare, decode].iter().flatten() {
                println!("{}", report.to_csv_row());
            }
            Ok(())
        }
    }
}
