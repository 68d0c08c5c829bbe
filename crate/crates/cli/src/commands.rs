use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use serde_json::json;
use sha2::{Digest, Sha256};
use sumgd_core::analysis::{
    attention_balance, attention_csv, jsd_by_pos, jsd_by_pos_interval, method_csv, method_jsd_comparison, pos_csv,
    pos_interval_csv, probe_decode, PriorProbe,
};
use sumgd_core::backend::{Backend, GenerationContext, ImageHandle};
use sumgd_core::decoding::{DecodeConfig, SumgdParts};
use sumgd_core::linguistics::{Linguistics, SentenceSegmenter};
use sumgd_core::metrics::{compare_runs, evaluate, ComparisonTable, EvaluateOptions};

use crate::args::{
    AnalyzeArgs, AnalyzeMode, BackendCheckArgs, Cli, Command, CompareArgs, DecodeArgs, EvaluateArgs, GridArgs,
    MetricsArgs, RunArgs, TableFormat,
};
use crate::backends::{build_backend, build_summarizer, AnyBackend};
use crate::config::{config_or_greedy, load_config};
use crate::dataset::Dataset;
use crate::runs::{
    decode_run, evaluate_run, file_safe, load_captions, load_manifest, run_summary, RunInputs, RunManifest, MANIFEST_FILE,
    REPORT_FILE,
};
use crate::{read, write, CliError};

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Decode(a) => cmd_decode(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::BackendCheck(a) => cmd_backend_check(a, out),
        Command::Grid(a) => cmd_grid(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn metrics_options(m: &MetricsArgs) -> Result<EvaluateOptions, CliError> {
    if m.ngram.contains(&0) {
        return Err(CliError::Usage("n-gram orders must be at least 1".into()));
    }
    if m.bucket == 0 {
        return Err(CliError::Usage("--bucket must be at least 1".into()));
    }
    Ok(EvaluateOptions { ngram_orders: m.ngram.clone(), position_bucket: m.bucket })
}

/// Loaded inputs shared by `decode` and `grid`.
struct Session {
    dataset: Dataset,
    backend_spec: String,
    backend: AnyBackend,
    summarizer_backend_spec: Option<String>,
    summarizer_backend: Option<AnyBackend>,
}

impl Session {
    fn open(run: &RunArgs) -> Result<Self, CliError> {
        let dataset = Dataset::load(&run.dataset)?;
        let backend = build_backend(&run.backend.backend, Some(&dataset))?;
        let summarizer_backend =
            run.backend.summarizer_backend.as_deref().map(|s| build_backend(s, Some(&dataset))).transpose()?;
        Ok(Self {
            dataset,
            backend_spec: run.backend.backend.clone(),
            backend,
            summarizer_backend_spec: run.backend.summarizer_backend.clone(),
            summarizer_backend,
        })
    }

    fn inputs<'a>(&'a self, cfg: &'a DecodeConfig, run: &'a RunArgs) -> RunInputs<'a> {
        RunInputs {
            config: cfg,
            dataset: &self.dataset,
            backend_spec: &self.backend_spec,
            backend: &self.backend,
            summarizer_backend_spec: self.summarizer_backend_spec.as_deref(),
            summarizer_backend: self.summarizer_backend.as_ref(),
            prompt: run.prompt.as_deref().unwrap_or(&self.dataset.prompt),
            limit: run.limit,
            jobs: run.jobs,
        }
    }
}

/// One config per requested token budget, or the config itself.
fn sweep(cfg: &DecodeConfig, lengths: &[usize]) -> Vec<DecodeConfig> {
    if lengths.is_empty() {
        vec![cfg.clone()]
    } else {
        lengths.iter().map(|&n| cfg.clone().with_max_new_tokens(n)).collect()
    }
}

fn cmd_decode(a: DecodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = config_or_greedy(a.config.as_deref())?;
    let session = Session::open(&a.run)?;
    for cfg in sweep(&cfg, &a.run.max_new_tokens) {
        let (dir, manifest) = decode_run(&session.inputs(&cfg, &a.run), &a.run.out)?;
        log::info!("{}: {} images", manifest.run_id, manifest.totals.images);
        emit(out, &format!("{}\n", dir.display()))?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let options = metrics_options(&a.metrics)?;
    let report = match (&a.run, &a.captions, &a.annotations) {
        (Some(run), _, _) => {
            let (dir, manifest) = load_manifest(run)?;
            let report = evaluate_run(&dir, &manifest, &options)?;
            write(&dir.join(REPORT_FILE), &to_pretty(&report))?;
            report
        }
        (None, Some(captions), Some(annotations)) => {
            let dataset = Dataset::from_parts(annotations, a.vocab.as_deref())?;
            let captions = load_captions(captions)?;
            evaluate(&captions, &dataset.annotations, &dataset.vocab, SentenceSegmenter::builtin(), &options)?
        }
        _ => return Err(CliError::Usage("evaluate needs --run DIR or --captions and --annotations".into())),
    };
    let text = to_pretty(&report);
    if let Some(path) = &a.out {
        write(path, &text)?;
    }
    emit(out, &format!("{text}\n"))
}

fn to_pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

fn render(table: &ComparisonTable, format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => table.to_markdown(),
        TableFormat::Json => format!("{}\n", to_pretty(table)),
    }
}

fn cmd_compare(a: CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let options = metrics_options(&a.metrics)?;
    let runs = a.runs.iter().map(|r| run_summary(r, &options)).collect::<Result<Vec<_>, _>>()?;
    let table = compare_runs(&runs)?;
    emit(out, &render(&table, a.format))
}

fn cmd_grid(a: GridArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let options = metrics_options(&a.metrics)?;
    let configs = a.configs.iter().map(|p| load_config(p)).collect::<Result<Vec<_>, _>>()?;
    let session = Session::open(&a.run)?;
    let mut summaries = Vec::new();
    let mut ids = Vec::new();
    for base in &configs {
        for cfg in sweep(base, &a.run.max_new_tokens) {
            let inputs = session.inputs(&cfg, &a.run);
            let existing = a.run.out.join(inputs.run_id());
            let (dir, manifest): (PathBuf, RunManifest) = if existing.join(MANIFEST_FILE).exists() {
                load_manifest(&existing)?
            } else {
                decode_run(&inputs, &a.run.out)?
            };
            let report = evaluate_run(&dir, &manifest, &options)?;
            write(&dir.join(REPORT_FILE), &to_pretty(&report))?;
            summaries.push(run_summary(&dir, &options)?);
            ids.push(manifest.run_id);
        }
    }
    let table = compare_runs(&summaries)?;
    let digest = hex::encode(Sha256::digest(ids.join("\n").as_bytes()));
    let stem = a.run.out.join(format!("grid-{}", &digest[..12]));
    write(&stem.with_extension("md"), &table.to_markdown())?;
    write(&stem.with_extension("json"), &to_pretty(&table))?;
    emit(out, &render(&table, a.format))
}

fn cmd_backend_check(a: BackendCheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dataset = a.dataset.as_deref().map(Dataset::load).transpose()?;
    let backend = build_backend(&a.backend, dataset.as_ref())?;
    let caps = backend.capabilities();
    let tokens = backend.tokenize(&a.text)?;
    let round_trip = backend.detokenize(&tokens)?;
    let mut checks = vec![];
    let mut ok = true;
    let mut probe = |name: &str, ctx: GenerationContext| -> Result<(), CliError> {
        let step = backend.next_distribution(&ctx, 50)?;
        let mass = step.distribution.total_mass();
        let normalized = (mass - 1.0).abs() <= 1e-4;
        ok &= normalized;
        checks.push(json!({
            "query": name,
            "entries": step.distribution.len(),
            "total_mass": mass,
            "normalized": normalized,
            "attention": step.attention,
        }));
        Ok(())
    };
    probe("text_only", GenerationContext::new(None, tokens.clone()))?;
    if let Some(image) = &a.image {
        if !caps.supports_image {
            return Err(CliError::Backend("backend does not accept images".into()));
        }
        probe("image", GenerationContext::new(Some(ImageHandle::new(image.as_str())), tokens.clone()))?;
    }
    let report = json!({
        "capabilities": caps,
        "tokenize": {"text": a.text, "tokens": tokens, "detokenized": round_trip, "round_trip": round_trip == a.text},
        "distributions": checks,
        "ok": ok,
    });
    emit(out, &format!("{}\n", to_pretty(&report)))?;
    if ok {
        Ok(())
    } else {
        Err(CliError::Backend("a distribution is not normalized within 1e-4".into()))
    }
}

fn cmd_analyze(a: AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.window == 0 {
        return Err(CliError::Usage("--window must be at least 1".into()));
    }
    let csv = if a.mode == AnalyzeMode::MethodCompare {
        method_compare(&a)?
    } else {
        let probes = if a.probes.is_empty() { decode_probes(&a)? } else { load_probes(&a.probes)? };
        match a.mode {
            AnalyzeMode::Pos => pos_csv(&jsd_by_pos(&probes, a.window)?),
            AnalyzeMode::PosInterval => pos_interval_csv(&jsd_by_pos_interval(&probes, a.window)?),
            AnalyzeMode::Attention => {
                let table = attention_balance(&probes, a.window)?;
                if let Some(w) = &table.warning {
                    eprintln!("warning: {w}");
                }
                attention_csv(&table)
            }
            AnalyzeMode::MethodCompare => unreachable!(),
        }
    };
    match &a.out {
        Some(path) => write(path, &csv),
        None => emit(out, &csv),
    }
}

fn load_probes(paths: &[PathBuf]) -> Result<Vec<PriorProbe>, CliError> {
    paths
        .iter()
        .map(|p| PriorProbe::from_jsonl(&read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .collect()
}

struct AnalyzeSession {
    dataset: Dataset,
    backend: AnyBackend,
    summarizer_backend: Option<AnyBackend>,
}

fn analyze_session(a: &AnalyzeArgs) -> Result<AnalyzeSession, CliError> {
    let (Some(dataset), Some(backend)) = (&a.dataset, &a.backend) else {
        return Err(CliError::Usage("analyze needs --probes, or --dataset and --backend".into()));
    };
    let dataset = Dataset::load(dataset)?;
    let backend = build_backend(backend, Some(&dataset))?;
    let summarizer_backend = a.summarizer_backend.as_deref().map(|s| build_backend(s, Some(&dataset))).transpose()?;
    Ok(AnalyzeSession { dataset, backend, summarizer_backend })
}

fn image_contexts(s: &AnalyzeSession, a: &AnalyzeArgs) -> Result<Vec<(String, GenerationContext)>, CliError> {
    let prompt = s.backend.tokenize(a.prompt.as_deref().unwrap_or(&s.dataset.prompt))?;
    let n = a.limit.unwrap_or(usize::MAX).min(s.dataset.images.len());
    Ok(s.dataset.images[..n]
        .iter()
        .map(|id| (id.clone(), GenerationContext::new(Some(ImageHandle::new(s.dataset.image_ref(id))), prompt.clone())))
        .collect())
}

fn analyze_configs(a: &AnalyzeArgs) -> Result<Vec<DecodeConfig>, CliError> {
    let configs = if a.config.is_empty() {
        vec![DecodeConfig::greedy()]
    } else {
        a.config.iter().map(|p| load_config(p)).collect::<Result<Vec<_>, _>>()?
    };
    Ok(configs.into_iter().map(|c| c.with_max_new_tokens(a.max_new_tokens)).collect())
}

fn decode_probes(a: &AnalyzeArgs) -> Result<Vec<PriorProbe>, CliError> {
    let s = analyze_session(a)?;
    let cfg = analyze_configs(a)?.remove(0);
    let linguistics = Linguistics::default();
    let summarizer = build_summarizer(&cfg, &s.backend, s.summarizer_backend.as_ref(), &linguistics)?;
    let parts = summarizer.as_deref().map(|x| SumgdParts { summarizer: x, linguistics: &linguistics });
    let mut probes = Vec::new();
    for (id, ctx) in image_contexts(&s, a)? {
        let (_, mut probe) = probe_decode(&s.backend, &ctx, &cfg, parts, &linguistics)?;
        probe.image_id = id.clone();
        if let Some(dir) = &a.probe_dir {
            write(&dir.join(format!("{}.probe.jsonl", file_safe(&id))), &probe.to_jsonl())?;
        }
        probes.push(probe);
    }
    Ok(probes)
}

fn method_compare(a: &AnalyzeArgs) -> Result<String, CliError> {
    let s = analyze_session(a)?;
    let configs = analyze_configs(a)?;
    let linguistics = Linguistics::default();
    let mut csv = String::from("image,method,position,tag,source,jsd,contrast_jsd\n");
    for (id, ctx) in image_contexts(&s, a)? {
        let mut curves = BTreeMap::new();
        for cfg in &configs {
            let summarizer = build_summarizer(cfg, &s.backend, s.summarizer_backend.as_ref(), &linguistics)?;
            let parts = summarizer.as_deref().map(|x| SumgdParts { summarizer: x, linguistics: &linguistics });
            curves.extend(method_jsd_comparison(&s.backend, &ctx, std::slice::from_ref(cfg), parts, &linguistics)?);
        }
        for line in method_csv(&curves).lines().skip(1) {
            csv.push_str(&format!("{id},{line}\n"));
        }
    }
    Ok(csv)
}
