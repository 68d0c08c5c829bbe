//! Decode runs and their on-disk layout:
//!
//! ```text
//! OUT/RUN_ID/manifest.json
//! OUT/RUN_ID/captions.jsonl
//! OUT/RUN_ID/traces/IMAGE.jsonl
//! OUT/RUN_ID/report.json        (written by `evaluate --run`)
//! ```

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sumgd_core::backend::{Backend, GenerationContext, ImageHandle};
use sumgd_core::decoding::{decode, CallCounts, DecodeConfig, DecodeOutput, NoObserver, SumgdParts};
use sumgd_core::linguistics::{Linguistics, SentenceSegmenter};
use sumgd_core::metrics::{evaluate, CaptionRecord, EvaluateOptions, MetricsReport, RunSummary};
use sumgd_core::schema::SCHEMA_VERSION;

use crate::backends::{build_summarizer, AnyBackend};
use crate::dataset::Dataset;
use crate::{read, write, CliError};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const TRACES_DIR: &str = "traces";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub path: String,
    pub fingerprint: String,
    pub prompt: String,
    pub annotations: String,
    pub vocab: Option<String>,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub captions: String,
    pub traces: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub images: usize,
    pub generated_tokens: u64,
    pub total_backend_calls: usize,
    pub calls: CallCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub run_id: String,
    pub engine_version: String,
    pub config: DecodeConfig,
    pub backend: String,
    pub summarizer_backend: Option<String>,
    pub dataset: DatasetRecord,
    pub outputs: OutputRecord,
    pub totals: Totals,
    #[serde(default)]
    pub approximations: Vec<String>,
    pub created_unix: u64,
}

/// Everything needed to decode one dataset with one config.
pub struct RunInputs<'a> {
    pub config: &'a DecodeConfig,
    pub dataset: &'a Dataset,
    pub backend_spec: &'a str,
    pub backend: &'a AnyBackend,
    pub summarizer_backend_spec: Option<&'a str>,
    pub summarizer_backend: Option<&'a AnyBackend>,
    pub prompt: &'a str,
    pub limit: Option<usize>,
    pub jobs: usize,
}

impl RunInputs<'_> {
    fn images(&self) -> &[String] {
        let n = self.limit.unwrap_or(usize::MAX).min(self.dataset.images.len());
        &self.dataset.images[..n]
    }

    /// Deterministic id: config label, token budget and a hash of every input.
    pub fn run_id(&self) -> String {
        let key = serde_json::json!({
            "engine_version": ENGINE_VERSION,
            "config": self.config,
            "backend": self.backend_spec,
            "summarizer_backend": self.summarizer_backend_spec,
            "dataset": self.dataset.fingerprint,
            "prompt": self.prompt,
            "images": self.images(),
        });
        let digest = Sha256::digest(serde_json::to_vec(&key).expect("key serializes"));
        format!("{}-{}-{}", file_safe(&self.config.label()), self.config.max_new_tokens, &hex::encode(digest)[..12])
    }
}

/// Replaces anything outside `[A-Za-z0-9._-]` so ids can be file names.
pub fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' }).collect()
}

/// Decodes every image, `jobs` at a time, keeping dataset order.
pub fn decode_images<B: Backend<f64> + ?Sized>(
    backend: &B,
    contexts: &[GenerationContext],
    cfg: &DecodeConfig,
    parts: Option<SumgdParts<'_>>,
    jobs: usize,
) -> Vec<Result<DecodeOutput, CliError>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<DecodeOutput, CliError>>>> = Mutex::new((0..contexts.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, contexts.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= contexts.len() {
                    break;
                }
                let r = decode(backend, &contexts[i], cfg, parts, &mut NoObserver).map_err(CliError::from);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every image decoded")).collect()
}

pub fn contexts(backend: &AnyBackend, dataset: &Dataset, images: &[String], prompt: &str) -> Result<Vec<GenerationContext>, CliError> {
    let prompt = backend.tokenize(prompt)?;
    Ok(images
        .iter()
        .map(|id| GenerationContext::new(Some(ImageHandle::new(dataset.image_ref(id))), prompt.clone()))
        .collect())
}

/// Decodes the dataset and writes the run under `out`. Fails if the run
/// directory already holds a manifest.
pub fn decode_run(inputs: &RunInputs<'_>, out: &Path) -> Result<(PathBuf, RunManifest), CliError> {
    inputs.config.validate()?;
    let run_id = inputs.run_id();
    let dir = out.join(&run_id);
    if dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::Data(format!("run {run_id} already exists at {}", dir.display())));
    }
    let linguistics = Linguistics::default();
    let summarizer = build_summarizer(inputs.config, inputs.backend, inputs.summarizer_backend, &linguistics)?;
    let parts = summarizer.as_deref().map(|s| SumgdParts { summarizer: s, linguistics: &linguistics });
    let images = inputs.images();
    let ctxs = contexts(inputs.backend, inputs.dataset, images, inputs.prompt)?;
    let outputs = decode_images(inputs.backend, &ctxs, inputs.config, parts, inputs.jobs);

    let mut totals = Totals::default();
    let mut captions = String::new();
    let mut traces = Vec::new();
    for (id, out) in images.iter().zip(outputs) {
        let out = out?;
        let trace_path = format!("{TRACES_DIR}/{}.jsonl", file_safe(id));
        totals.images += 1;
        totals.generated_tokens += out.trace.generated_tokens() as u64;
        totals.total_backend_calls += out.trace.total_backend_calls;
        totals.calls += out.trace.calls;
        let record = CaptionRecord {
            run_id: Some(run_id.clone()),
            trace_path: Some(trace_path.clone()),
            ..CaptionRecord::new(id.clone(), out.text.clone())
        };
        captions.push_str(&serde_json::to_string(&record).expect("record serializes"));
        captions.push('\n');
        traces.push((trace_path, out.trace.to_jsonl(&run_id, id, &out.text)));
    }
    for (path, body) in &traces {
        write(&dir.join(path), body)?;
    }
    write(&dir.join(CAPTIONS_FILE), &captions)?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        run_id,
        engine_version: ENGINE_VERSION.to_string(),
        config: inputs.config.clone(),
        backend: inputs.backend_spec.to_string(),
        summarizer_backend: inputs.summarizer_backend_spec.map(str::to_string),
        dataset: DatasetRecord {
            path: inputs.dataset.path.display().to_string(),
            fingerprint: inputs.dataset.fingerprint.clone(),
            prompt: inputs.prompt.to_string(),
            annotations: absolute(&inputs.dataset.annotations_path),
            vocab: inputs.dataset.vocab_path.as_deref().map(absolute),
            images: images.to_vec(),
        },
        outputs: OutputRecord { captions: CAPTIONS_FILE.to_string(), traces: TRACES_DIR.to_string() },
        totals,
        approximations: inputs.config.approximations(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    write(&dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok((dir, manifest))
}

fn absolute(p: &Path) -> String {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

/// A run directory (or its manifest path) with its manifest.
pub fn load_manifest(path: &Path) -> Result<(PathBuf, RunManifest), CliError> {
    let (dir, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let manifest: RunManifest =
        serde_json::from_str(&read(&file)?).map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
    Ok((dir, manifest))
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>, CliError> {
    CaptionRecord::parse_jsonl(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Evaluates a run against the annotations recorded in its manifest.
pub fn evaluate_run(dir: &Path, manifest: &RunManifest, options: &EvaluateOptions) -> Result<MetricsReport, CliError> {
    let annotations = Path::new(&manifest.dataset.annotations);
    let dataset = Dataset::from_parts(annotations, manifest.dataset.vocab.as_deref().map(Path::new))?;
    let captions = load_captions(&dir.join(&manifest.outputs.captions))?;
    Ok(evaluate(&captions, &dataset.annotations, &dataset.vocab, SentenceSegmenter::builtin(), options)?)
}

/// Comparison input for a run: its report (read from `report.json`, or
/// computed) and its call totals.
pub fn run_summary(path: &Path, options: &EvaluateOptions) -> Result<RunSummary, CliError> {
    let (dir, manifest) = load_manifest(path)?;
    let report_path = dir.join(REPORT_FILE);
    let report = if report_path.exists() {
        serde_json::from_str(&read(&report_path)?).map_err(|e| CliError::Data(format!("{}: {e}", report_path.display())))?
    } else {
        evaluate_run(&dir, &manifest, options)?
    };
    Ok(RunSummary {
        label: manifest.config.label(),
        strategy: manifest.config.strategy.as_str().to_string(),
        max_new_tokens: manifest.config.max_new_tokens,
        dataset: manifest.dataset.fingerprint.clone(),
        report,
        calls: manifest.totals.calls,
        generated_tokens: manifest.totals.generated_tokens,
    })
}
