//! Command-line surface for the emorec pipeline. Non-interactive: every
//! subcommand reads files, writes files, and prints one machine-parseable
//! summary line (or a JSON document) on stdout.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 numerical
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use emorec::dataio::{
    self, load_catalog, load_dataset, load_manifest, save_catalog, save_dataset, save_manifest,
    DataError, DatasetManifest, MultimodalSample, SynthConfig,
};
use emorec::gradcheck::{check_model, Tolerance};
use emorec::model::Model;
use emorec::ndcore::{Mode, NdError, Tape};
use emorec::recommender::{
    rank_top_k, simulate_feedback, trace_to_csv, Catalog, ContentItem, RecError, SimConfig,
    SimUser,
};
use emorec::trainer::{evaluate, records_to_csv, train, Checkpoint, TrainConfig, TrainError};
use rand::rngs::StdRng;
use rand::SeedableRng;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

struct CliError {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn data_error(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_DATA,
        message: message.into(),
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            DataError::Parameter { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<RecError> for CliError {
    fn from(e: RecError) -> Self {
        let code = match &e {
            RecError::Parameter { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<NdError> for CliError {
    fn from(e: NdError) -> Self {
        let code = match &e {
            NdError::BadParameter { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config(_) => EXIT_USAGE,
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteParam { .. } => EXIT_NUMERIC,
            TrainError::Data(DataError::Parameter { .. }) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

// ── Flag parsing ─────────────────────────────────────────────────────────

struct Flag {
    name: &'static str,
    value_name: &'static str,
    help: &'static str,
    required: bool,
    default: Option<&'static str>,
}

struct Command {
    name: &'static str,
    summary: &'static str,
    flags: &'static [Flag],
}

fn help_text(command: &Command) -> String {
    let mut out = format!(
        "Usage: emorec {} [flags]\n\n{}\n\nFlags:\n",
        command.name, command.summary
    );
    for flag in command.flags {
        let requirement = if flag.required {
            "required".to_string()
        } else if let Some(default) = flag.default {
            format!("default: {default}")
        } else {
            "optional".to_string()
        };
        out.push_str(&format!(
            "  {} {:<12} {} ({})\n",
            flag.name, flag.value_name, flag.help, requirement
        ));
    }
    out.push_str("  --help               print this help and exit\n");
    out
}

/// Strict flag parser: every flag takes a value, unknown flags are
/// rejected. Returns `Ok(None)` when `--help` was requested.
fn parse_flags(
    command: &Command,
    args: &[String],
) -> Result<Option<BTreeMap<&'static str, String>>, CliError> {
    if args.iter().any(|a| a == "--help") {
        return Ok(None);
    }
    let mut values: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(flag) = command.flags.iter().find(|f| f.name == arg) else {
            return Err(usage(format!(
                "unknown flag {arg} for `emorec {}` (see --help)",
                command.name
            )));
        };
        let value = args.get(i + 1).ok_or_else(|| {
            usage(format!(
                "flag {} expects a value {}",
                flag.name, flag.value_name
            ))
        })?;
        if values.insert(flag.name, value.clone()).is_some() {
            return Err(usage(format!("flag {} given more than once", flag.name)));
        }
        i += 2;
    }
    for flag in command.flags {
        if values.contains_key(flag.name) {
            continue;
        }
        if let Some(default) = flag.default {
            values.insert(flag.name, default.to_string());
        } else if flag.required {
            return Err(usage(format!(
                "missing required flag {} for `emorec {}`",
                flag.name, command.name
            )));
        }
    }
    Ok(Some(values))
}

fn get_usize(
    values: &BTreeMap<&'static str, String>,
    name: &'static str,
) -> Result<usize, CliError> {
    values[name].parse().map_err(|_| {
        usage(format!(
            "{name} expects a non-negative integer, got {:?}",
            values[name]
        ))
    })
}

fn get_u64(values: &BTreeMap<&'static str, String>, name: &'static str) -> Result<u64, CliError> {
    values[name].parse().map_err(|_| {
        usage(format!(
            "{name} expects a non-negative integer, got {:?}",
            values[name]
        ))
    })
}

fn get_f64(values: &BTreeMap<&'static str, String>, name: &'static str) -> Result<f64, CliError> {
    values[name]
        .parse()
        .map_err(|_| usage(format!("{name} expects a number, got {:?}", values[name])))
}

fn get_path(values: &BTreeMap<&'static str, String>, name: &'static str) -> PathBuf {
    PathBuf::from(&values[name])
}

// ── Shared helpers ───────────────────────────────────────────────────────

fn load_checkpoint_model(path: &Path) -> Result<(Checkpoint, Model), CliError> {
    let checkpoint = Checkpoint::load(path)?;
    let (model, _) = checkpoint.to_model()?;
    Ok((checkpoint, model))
}

/// Catalog built from the checkpoint's trained content embeddings, keeping
/// the ingested catalog's metadata.
fn trained_catalog(model: &Model, ingested: &Catalog) -> Result<Catalog, CliError> {
    let mut items = Vec::with_capacity(model.content_ids.len());
    for (id, embedding) in model.content_rows() {
        let metadata = ingested
            .get(&id)
            .map(|item| item.metadata.clone())
            .ok_or_else(|| {
                data_error(format!(
                    "catalog is missing item {id:?} the checkpoint was trained on"
                ))
            })?;
        items.push(ContentItem {
            id,
            embedding,
            metadata,
        });
    }
    Ok(Catalog::new(items)?)
}

fn fused_state(model: &Model, sample: &MultimodalSample) -> Result<Vec<f64>, CliError> {
    let mut tape = Tape::new();
    let tracked = model.watch(&mut tape);
    let mut rng = StdRng::seed_from_u64(0);
    let forward = tracked.forward_sample(&mut tape, sample, Mode::Eval, 0.0, &mut rng)?;
    Ok(forward.state.fused_vector())
}

fn check_sample_dims(sample: &MultimodalSample, model: &Model) -> Result<(), CliError> {
    let checks = [
        ("visual", &sample.visual, model.config.d_v),
        ("audio", &sample.audio, model.config.d_a),
        ("text", &sample.text, model.config.d_t),
    ];
    for (field, seq, expected) in checks {
        if seq.is_empty() {
            return Err(data_error(format!(
                "sample {}: {field} sequence is empty",
                sample.id
            )));
        }
        for (i, vector) in seq.iter().enumerate() {
            if vector.len() != expected {
                return Err(data_error(format!(
                    "sample {}: {field}[{i}] has {} dims, checkpoint expects {expected}",
                    sample.id,
                    vector.len()
                )));
            }
        }
    }
    Ok(())
}

// ── Subcommands ──────────────────────────────────────────────────────────

static SYNTH_DATA: Command = Command {
    name: "synth-data",
    summary: "Generate a synthetic dataset, content catalog, and manifest.",
    flags: &[
        Flag {
            name: "--manifest",
            value_name: "<path>",
            help: "manifest JSON declaring label spaces and dims; built-in default when omitted",
            required: false,
            default: None,
        },
        Flag {
            name: "--n",
            value_name: "<int>",
            help: "number of samples",
            required: false,
            default: Some("210"),
        },
        Flag {
            name: "--seed",
            value_name: "<int>",
            help: "generator seed",
            required: false,
            default: Some("0"),
        },
        Flag {
            name: "--separation",
            value_name: "<float>",
            help: "minimum distance between class cluster centers",
            required: false,
            default: Some("10"),
        },
        Flag {
            name: "--content-dim",
            value_name: "<int>",
            help: "catalog embedding width (the model's unified dimension)",
            required: false,
            default: Some("16"),
        },
        Flag {
            name: "--out-dir",
            value_name: "<path>",
            help: "output directory for samples.jsonl, catalog.jsonl, manifest.json",
            required: false,
            default: Some("data"),
        },
    ],
};

fn cmd_synth_data(values: &BTreeMap<&'static str, String>) -> Result<(), CliError> {
    let manifest = match values.get("--manifest") {
        Some(path) => load_manifest(Path::new(path))?,
        None => DatasetManifest::default(),
    };
    let config = SynthConfig {
        n: get_usize(values, "--n")?,
        seed: get_u64(values, "--seed")?,
        separation: get_f64(values, "--separation")?,
        content_dim: get_usize(values, "--content-dim")?,
        ..SynthConfig::default()
    };
    let out_dir = get_path(values, "--out-dir");
    let dataset = dataio::synthesize(&manifest, &config)?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| data_error(format!("{}: {e}", out_dir.display())))?;
    let samples_path = out_dir.join("samples.jsonl");
    let catalog_path = out_dir.join("catalog.jsonl");
    let manifest_path = out_dir.join("manifest.json");
    save_dataset(&samples_path, &dataset.samples)?;
    save_catalog(&catalog_path, &dataset.catalog)?;
    save_manifest(&manifest_path, &dataset.manifest)?;
    println!(
        "synth-data samples={} catalog={} out_dir={}",
        dataset.samples.len(),
        dataset.catalog.len(),
        out_dir.display()
    );
    Ok(())
}

static TRAIN: Command = Command {
    name: "train",
    summary: "Train on a dataset and write the best-validation checkpoint plus the loss curve CSV.",
    flags: &[
        Flag {
            name: "--data",
            value_name: "<path>",
            help: "samples JSONL; split 70/15/15 by the config seed before training",
            required: true,
            default: None,
        },
        Flag {
            name: "--manifest",
            value_name: "<path>",
            help: "manifest JSON",
            required: true,
            default: None,
        },
        Flag {
            name: "--catalog",
            value_name: "<path>",
            help: "content catalog JSONL",
            required: true,
            default: None,
        },
        Flag {
            name: "--config",
            value_name: "<path>",
            help: "training config JSON; defaults when omitted",
            required: false,
            default: None,
        },
        Flag {
            name: "--out",
            value_name: "<path>",
            help: "output directory for checkpoint.json and loss_curve.csv",
            required: false,
            default: Some("run"),
        },
    ],
};

fn cmd_train(values: &BTreeMap<&'static str, String>) -> Result<(), CliError> {
    let manifest = load_manifest(&get_path(values, "--manifest"))?;
    let samples = load_dataset(&get_path(values, "--data"), &manifest)?;
    let catalog = load_catalog(&get_path(values, "--catalog"))?;
    let config = match values.get("--config") {
        Some(path) => TrainConfig::load(Path::new(path))?,
        None => TrainConfig::default(),
    };
    let spec = dataio::SplitSpec {
        seed: config.seed,
        ..dataio::SplitSpec::default()
    };
    let (train_set, val_set, _test_set) = dataio::split(&samples, &manifest, &spec)?;
    let outcome = train(&train_set, &val_set, &manifest, &catalog, &config)?;

    let out_dir = get_path(values, "--out");
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| data_error(format!("{}: {e}", out_dir.display())))?;
    let checkpoint_path = out_dir.join("checkpoint.json");
    let curve_path = out_dir.join("loss_curve.csv");
    outcome.checkpoint.save(&checkpoint_path)?;
    std::fs::write(&curve_path, records_to_csv(&outcome.records))
        .map_err(|e| data_error(format!("{}: {e}", curve_path.display())))?;

    let last = outcome.records.last().expect("at least one epoch");
    println!(
        "train epochs={} train_total={} val_total={} best_epoch={} best_val_loss={} checkpoint={} curve={}",
        last.epoch,
        last.train_total,
        last.val_total,
        outcome.checkpoint.epoch,
        outcome
            .checkpoint
            .best_val_loss
            .expect("trained checkpoint has a validation loss"),
        checkpoint_path.display(),
        curve_path.display()
    );
    Ok(())
}

static EVAL: Command = Command {
    name: "eval",
    summary: "Evaluate a checkpoint on a dataset and print the metrics JSON.",
    flags: &[
        Flag {
            name: "--checkpoint",
            value_name: "<path>",
            help: "checkpoint JSON",
            required: true,
            default: None,
        },
        Flag {
            name: "--data",
            value_name: "<path>",
            help: "samples JSONL",
            required: true,
            default: None,
        },
        Flag {
            name: "--manifest",
            value_name: "<path>",
            help: "manifest JSON",
            required: true,
            default: None,
        },
        Flag {
            name: "--catalog",
            value_name: "<path>",
            help: "content catalog JSONL",
            required: true,
            default: None,
        },
        Flag {
            name: "--k",
            value_name: "<int>",
            help: "ranking cutoff for NDCG@k / HR@k",
            required: false,
            default: Some("10"),
        },
        Flag {
            name: "--out",
            value_name: "<path>",
            help: "also write the metrics JSON here",
            required: false,
            default: None,
        },
    ],
};

fn cmd_eval(values: &BTreeMap<&'static str, String>) -> Result<(), CliError> {
    let manifest = load_manifest(&get_path(values, "--manifest"))?;
    let samples = load_dataset(&get_path(values, "--data"), &manifest)?;
    let catalog = load_catalog(&get_path(values, "--catalog"))?;
    let checkpoint = Checkpoint::load(&get_path(values, "--checkpoint"))?;
    let k = get_usize(values, "--k")?;
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let report = evaluate(&checkpoint, &samples, &manifest, &catalog, k)?;
    let body = report.to_json();
    if let Some(out) = values.get("--out") {
        std::fs::write(out, format!("{body}\n"))
            .map_err(|e| data_error(format!("{out}: {e}")))?;
    }
    println!("{body}");
    Ok(())
}

static RECOMMEND: Command = Command {
    name: "recommend",
    summary: "Rank the catalog for one sample and print the ranked list as JSON.",
    flags: &[
        Flag {
            name: "--checkpoint",
            value_name: "<path>",
            help: "checkpoint JSON",
            required: true,
            default: None,
        },
        Flag {
            name: "--sample",
            value_name: "<path>",
            help: "one sample as a JSON object",
            required: true,
            default: None,
        },
        Flag {
            name: "--catalog",
            value_name: "<path>",
            help: "content catalog JSONL",
            required: true,
            default: None,
        },
        Flag {
            name: "--k",
            value_name: "<int>",
            help: "number of items to return",
            required: false,
            default: Some("10"),
        },
    ],
};

fn cmd_recommend(values: &BTreeMap<&'static str, String>) -> Result<(), CliError> {
    let (_, model) = load_checkpoint_model(&get_path(values, "--checkpoint"))?;
    let ingested = load_catalog(&get_path(values, "--catalog"))?;
    let catalog = trained_catalog(&model, &ingested)?;
    let sample_path = get_path(values, "--sample");
    let body = std::fs::read_to_string(&sample_path)
        .map_err(|e| data_error(format!("{}: {e}", sample_path.display())))?;
    let sample: MultimodalSample = serde_json::from_str(body.trim())
        .map_err(|e| data_error(format!("{}: parse error: {e}", sample_path.display())))?;
    check_sample_dims(&sample, &model)?;
    let k = get_usize(values, "--k")?;
    let state = fused_state(&model, &sample)?;
    let ranked = rank_top_k(&state, &catalog, k)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&ranked).expect("ranked list serializes")
    );
    Ok(())
}

static SIMULATE: Command = Command {
    name: "simulate-feedback",
    summary: "Run the online implicit-feedback adaptation loop and write its trace CSV.",
    flags: &[
        Flag {
            name: "--checkpoint",
            value_name: "<path>",
            help: "checkpoint JSON",
            required: true,
            default: None,
        },
        Flag {
            name: "--data",
            value_name: "<path>",
            help: "held-out samples JSONL providing the simulated users",
            required: true,
            default: None,
        },
        Flag {
            name: "--manifest",
            value_name: "<path>",
            help: "manifest JSON",
            required: true,
            default: None,
        },
        Flag {
            name: "--catalog",
            value_name: "<path>",
            help: "content catalog JSONL",
            required: true,
            default: None,
        },
        Flag {
            name: "--rounds",
            value_name: "<int>",
            help: "number of feedback rounds",
            required: false,
            default: Some("200"),
        },
        Flag {
            name: "--seed",
            value_name: "<int>",
            help: "simulation seed",
            required: false,
            default: Some("0"),
        },
        Flag {
            name: "--step",
            value_name: "<float>",
            help: "feedback update learning rate",
            required: false,
            default: Some("0.1"),
        },
        Flag {
            name: "--k",
            value_name: "<int>",
            help: "hit-ratio cutoff in the summary",
            required: false,
            default: Some("10"),
        },
        Flag {
            name: "--out",
            value_name: "<path>",
            help: "trace CSV path",
            required: false,
            default: Some("simulation_trace.csv"),
        },
    ],
};

fn cmd_simulate(values: &BTreeMap<&'static str, String>) -> Result<(), CliError> {
    let manifest = load_manifest(&get_path(values, "--manifest"))?;
    let samples = load_dataset(&get_path(values, "--data"), &manifest)?;
    let (_, model) = load_checkpoint_model(&get_path(values, "--checkpoint"))?;
    let ingested = load_catalog(&get_path(values, "--catalog"))?;
    let mut catalog = trained_catalog(&model, &ingested)?;

    let mut users = Vec::with_capacity(samples.len());
    for sample in &samples {
        check_sample_dims(sample, &model)?;
        users.push(SimUser {
            id: sample.id.clone(),
            state: fused_state(&model, sample)?,
            positives: sample
                .positives
                .iter()
                .filter(|id| model.content_index(id).is_some())
                .cloned()
                .collect(),
        });
    }

    let config = SimConfig {
        rounds: get_usize(values, "--rounds")?,
        seed: get_u64(values, "--seed")?,
        step: get_f64(values, "--step")?,
        k: get_usize(values, "--k")?,
        ..SimConfig::default()
    };
    let simulation = simulate_feedback(&users, &mut catalog, &config)?;

    let out = get_path(values, "--out");
    std::fs::write(&out, trace_to_csv(&simulation.trace))
        .map_err(|e| data_error(format!("{}: {e}", out.display())))?;
    println!(
        "simulate-feedback rounds={} users={} hr_at_{}_before={} hr_at_{}_after={} mean_rank_before={} mean_rank_after={} trace={}",
        config.rounds,
        users.len(),
        config.k,
        simulation.before.hit_ratio_at_k,
        config.k,
        simulation.after.hit_ratio_at_k,
        simulation.before.mean_positive_rank,
        simulation.after.mean_positive_rank,
        out.display()
    );
    Ok(())
}

static GRAD_CHECK: Command = Command {
    name: "grad-check",
    summary: "Compare analytic gradients of a small random model against central finite differences.",
    flags: &[
        Flag {
            name: "--seed",
            value_name: "<int>",
            help: "fixture seed",
            required: false,
            default: Some("1"),
        },
        Flag {
            name: "--d",
            value_name: "<int>",
            help: "unified dimension of the test model",
            required: false,
            default: Some("8"),
        },
    ],
};

fn cmd_grad_check(values: &BTreeMap<&'static str, String>) -> Result<(), CliError> {
    let seed = get_u64(values, "--seed")?;
    let d = get_usize(values, "--d")?;
    if d == 0 {
        return Err(usage("--d must be at least 1"));
    }
    let report = check_model(seed, d, &Tolerance::default()).map_err(CliError::from)?;
    let status = if report.passed() { "pass" } else { "fail" };
    println!(
        "grad-check seed={seed} d={d} params={} entries={} max_rel_error={:.3e} status={status}",
        report.params_checked, report.entries_checked, report.max_rel_error
    );
    if report.passed() {
        Ok(())
    } else {
        let worst = &report.mismatches[0];
        Err(CliError {
            code: EXIT_NUMERIC,
            message: format!(
                "{} gradient entries disagree; worst: {}[{}] analytic {} vs numeric {}",
                report.mismatches.len(),
                worst.param,
                worst.index,
                worst.analytic,
                worst.numeric
            ),
        })
    }
}

// ── Entry point ──────────────────────────────────────────────────────────

static COMMANDS: [&Command; 6] = [
    &SYNTH_DATA,
    &TRAIN,
    &EVAL,
    &RECOMMEND,
    &SIMULATE,
    &GRAD_CHECK,
];

fn global_help() -> String {
    let mut out = String::from(
        "emorec: emotion- and intent-aware multimodal content recommendation\n\n\
         Usage: emorec <subcommand> [flags]\n\nSubcommands:\n",
    );
    for command in COMMANDS {
        out.push_str(&format!("  {:<18} {}\n", command.name, command.summary));
    }
    out.push_str("\nRun `emorec <subcommand> --help` for flags.\n");
    out
}

fn dispatch(name: &str, args: &[String]) -> Result<(), CliError> {
    let command = COMMANDS
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| usage(format!("unknown subcommand {name:?} (see emorec --help)")))?;
    let Some(values) = parse_flags(command, args)? else {
        print!("{}", help_text(command));
        return Ok(());
    };
    match command.name {
        "synth-data" => cmd_synth_data(&values),
        "train" => cmd_train(&values),
        "eval" => cmd_eval(&values),
        "recommend" => cmd_recommend(&values),
        "simulate-feedback" => cmd_simulate(&values),
        "grad-check" => cmd_grad_check(&values),
        _ => unreachable!("dispatch table covers all commands"),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        None | Some("--help") | Some("help") => {
            print!("{}", global_help());
        }
        Some(name) => {
            if let Err(e) = dispatch(name, &args[1..]) {
                eprintln!("error: {}", e.message);
                std::process::exit(i32::from(e.code));
            }
        }
    }
}
