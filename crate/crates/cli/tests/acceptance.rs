//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without a model sidecar.

mod common;

use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sumgd_core::backend::{
    Backend, GenerationContext, ImageCondition, ImageHandle, Rule, RuleTable, ScriptedBackend, SyntheticConfig,
    SyntheticHallucinationBackend,
};
use sumgd_core::decoding::{
    decode, ContrastMode, ContrastSpec, DecodeConfig, DecodeOutput, DecodeTrace, NoObserver, PosScope, Routing, Source,
    Strategy, SumgdParts, SumgdSpec, SummarizerKind,
};
use sumgd_core::dist::{jsd, TokenDistribution};
use sumgd_core::linguistics::{Linguistics, SentenceSegmenter};
use sumgd_core::metrics::{
    chair_metrics, compare_runs, evaluate, hallucination_by_position, ngram_counts, Annotations, CaptionRecord,
    EvaluateOptions, ObjectVocabulary, RunSummary,
};
use sumgd_core::schema::shape_mismatches;
use sumgd_core::summarizer::{ExtractiveSummarizer, IdentitySummarizer, PromptSummarizer, Summarizer, SummaryVariant};

use common::{config, fixture, golden, jsonl, p, read_json, sumgd};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: &[Criterion] = &[
        ("jsd_oracle_equivalence", jsd_oracle_equivalence),
        ("jsd_bounds_and_symmetry", jsd_bounds_and_symmetry),
        ("chair_fixture_exact", chair_fixture_exact),
        ("sumgd_identity_equals_greedy", sumgd_identity_equals_greedy),
        ("routing_soundness", routing_soundness),
        ("synthetic_hallucination_reduction", synthetic_hallucination_reduction),
        ("degenerate_configs_equal_greedy", degenerate_configs_equal_greedy),
        ("cost_accounting_identity", cost_accounting_identity),
        ("report_schemas_match_golden", report_schemas_match_golden),
        ("ngram_fluency_examples", ngram_fluency_examples),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s): {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- JSD

/// Random sparse pair over a shared vocabulary. Some pairs are truncated,
/// some have disjoint supports and some are identical.
fn random_pair(rng: &mut ChaCha8Rng) -> (TokenDistribution<f64>, TokenDistribution<f64>, usize) {
    let vocab = rng.gen_range(2..200);
    let one = |rng: &mut ChaCha8Rng, pool: &[u32]| {
        let k = rng.gen_range(1..=pool.len().min(40));
        let support: Vec<u32> = pool.choose_multiple(rng, k).copied().collect();
        let weights: Vec<f64> = support.iter().map(|_| rng.gen_range(0.001..1.0)).collect();
        let residual = if rng.gen_bool(0.3) { rng.gen_range(0.001..0.5) } else { 0.0 };
        let total: f64 = weights.iter().sum::<f64>() + residual;
        let entries = support.iter().zip(&weights).map(|(&t, &w)| (t, w / total));
        if residual > 0.0 {
            TokenDistribution::truncated(entries, vocab, residual / total).unwrap()
        } else {
            TokenDistribution::new(entries, vocab).unwrap()
        }
    };
    let ids: Vec<u32> = (0..vocab as u32).collect();
    let p = one(rng, &ids);
    let q = match rng.gen_range(0..10) {
        0 => p.clone(),
        1 => {
            let rest: Vec<u32> = ids.iter().copied().filter(|t| !p.contains(*t)).collect();
            if rest.is_empty() {
                one(rng, &ids)
            } else {
                one(rng, &rest)
            }
        }
        _ => one(rng, &ids),
    };
    (p, q, vocab)
}

/// Dense vector over the vocabulary plus one slot for the residual mass.
fn dense(d: &TokenDistribution<f64>, vocab: usize) -> Vec<f64> {
    let mut v = vec![0.0; vocab + 1];
    for (t, pr) in d.iter() {
        v[t as usize] = pr;
    }
    v[vocab] = d.residual();
    v
}

/// Entropy form: H(m) - (H(p) + H(q)) / 2.
fn dense_jsd(p: &[f64], q: &[f64]) -> f64 {
    let h = |v: &mut dyn Iterator<Item = f64>| -> f64 { v.filter(|&x| x > 0.0).map(|x| -x * x.ln()).sum() };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    h(&mut m.into_iter()) - 0.5 * (h(&mut p.iter().copied()) + h(&mut q.iter().copied()))
}

fn jsd_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pairs: Vec<_> = (0..10_000).map(|_| random_pair(&mut rng)).collect();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (p, q, vocab) in &pairs {
        let got = jsd(p, q).map_err(|e| e.to_string())?;
        let want = dense_jsd(&dense(p, *vocab), &dense(q, *vocab));
        worst = worst.max((got - want).abs());
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-9, || format!("max abs error {worst:e} > 1e-9"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("10000 pairs, max abs error {worst:.1e}, {:.3}s", elapsed.as_secs_f64()))
}

fn jsd_bounds_and_symmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ln2 = std::f64::consts::LN_2;
    let mut asym: f64 = 0.0;
    for i in 0..10_000 {
        let (p, q, _) = random_pair(&mut rng);
        let pq = jsd(&p, &q).map_err(|e| e.to_string())?;
        let qp = jsd(&q, &p).map_err(|e| e.to_string())?;
        ensure((0.0..=ln2 + 1e-12).contains(&pq), || format!("pair {i}: jsd {pq} out of [0, ln 2]"))?;
        asym = asym.max((pq - qp).abs());
        let pp = jsd(&p, &p).map_err(|e| e.to_string())?;
        ensure(pp == 0.0, || format!("pair {i}: jsd(p, p) = {pp:e}"))?;
    }
    ensure(asym <= 1e-12, || format!("max asymmetry {asym:e}"))?;
    Ok(format!("10000 pairs, max asymmetry {asym:.1e}"))
}

// ---------------------------------------------------------------- CHAIR

fn chair_fixture_exact() -> Outcome {
    let vocab = ObjectVocabulary::load(fixture("chair/vocab.json")).map_err(|e| e.to_string())?;
    let annotations = Annotations::load(fixture("chair/annotations.json"), &vocab).map_err(|e| e.to_string())?;
    let captions = CaptionRecord::parse_jsonl(&std::fs::read_to_string(fixture("chair/captions.jsonl")).unwrap())
        .map_err(|e| e.to_string())?;
    let expected = read_json(&fixture("chair/expected.json"));
    let ratio = |k: &str| -> Ratio<u64> { expected[k].as_str().unwrap().parse().unwrap() };

    for c in &captions {
        let want: Vec<&str> =
            expected["per_caption"][&c.image_id]["mentions"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        let got: Vec<String> = vocab.extract(&c.caption).into_iter().map(|m| m.object).collect();
        ensure(got == want, || format!("{}: mentions {got:?}, expected {want:?}", c.image_id))?;
    }
    let counts = chair_metrics(captions.iter().map(|c| (c.image_id.as_str(), c.caption.as_str())), &annotations, &vocab)
        .map_err(|e| e.to_string())?;
    ensure(counts.chair_s() == ratio("chair_s"), || format!("CHAIR_S {} != {}", counts.chair_s(), ratio("chair_s")))?;
    ensure(counts.chair_i() == ratio("chair_i"), || format!("CHAIR_I {} != {}", counts.chair_i(), ratio("chair_i")))?;
    ensure(counts.recall() == ratio("recall"), || format!("Recall {} != {}", counts.recall(), ratio("recall")))?;
    let sentences: usize = captions.iter().map(|c| SentenceSegmenter::builtin().count(&c.caption)).sum();
    ensure(Ratio::new(sentences as u64, captions.len() as u64) == ratio("spi"), || format!("SPI {sentences}/5"))?;
    Ok(format!("CHAIR_S {}, CHAIR_I {}, Recall {}", counts.chair_s(), counts.chair_i(), counts.recall()))
}

// ---------------------------------------------------------------- random scripted backends

const WORDS: &[&str] = &[
    "the", "a", "dog", "cat", "car", "frisbee", "table", "bird", "red", "small", "green", "two", "runs", "sits", "on",
    "near", "and", "is", ".",
];

fn random_dist(rng: &mut ChaCha8Rng, eos: bool) -> Vec<(String, f64)> {
    let k = rng.gen_range(2..=5);
    let mut words: Vec<String> = WORDS.choose_multiple(rng, k).map(|w| w.to_string()).collect();
    if eos {
        words.push("<eos>".into());
    }
    let weights: Vec<f64> = words.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    words.into_iter().zip(weights).map(|(w, x)| (w, x / total)).collect()
}

/// Deterministic rule-table backend drawn from `seed`: single-word and
/// two-word suffix rules, with separate tables with and without the image.
fn random_backend(seed: u64) -> ScriptedBackend<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rules = Vec::new();
    for cond in [ImageCondition::Present, ImageCondition::Absent] {
        rules.push(Rule::new("^", random_dist(&mut rng, false)).image(cond));
    }
    for w in WORDS {
        let eos = *w == "." || rng.gen_bool(0.1);
        rules.push(Rule::new(*w, random_dist(&mut rng, eos)).image(ImageCondition::Present));
        rules.push(Rule::new(*w, random_dist(&mut rng, eos)).image(ImageCondition::Absent));
    }
    for _ in 0..rng.gen_range(3..10) {
        let pattern = format!("{} {}", WORDS.choose(&mut rng).unwrap(), WORDS.choose(&mut rng).unwrap());
        let eos = pattern.ends_with('.');
        rules.push(Rule::new(pattern, random_dist(&mut rng, eos)));
    }
    ScriptedBackend::new(RuleTable { vocab: vec!["describe".into()], rules }).expect("valid rules")
}

fn image_ctx<B: Backend<f64> + ?Sized>(b: &B, image: &str, prompt: &str) -> GenerationContext {
    GenerationContext::new(Some(ImageHandle::new(image)), b.tokenize(prompt).unwrap())
}

fn sumgd_cfg(kind: SummarizerKind, scope: PosScope, routing: Routing, max: usize) -> DecodeConfig {
    let spec = SumgdSpec { pos_scope: scope, routing, ..SumgdSpec::with_summarizer(kind) };
    DecodeConfig::new(Strategy::Sumgd).with_sumgd(spec).with_max_new_tokens(max)
}

fn run<B: Backend<f64> + ?Sized>(
    b: &B,
    ctx: &GenerationContext,
    cfg: &DecodeConfig,
    parts: Option<SumgdParts<'_>>,
) -> Result<DecodeOutput, String> {
    decode::<f64, B>(b, ctx, cfg, parts, &mut NoObserver).map_err(|e| e.to_string())
}

const BACKENDS: u64 = 120;
const MAX_TOKENS: usize = 40;

fn sumgd_identity_equals_greedy() -> Outcome {
    let linguistics = Linguistics::default();
    let parts = SumgdParts { summarizer: &IdentitySummarizer, linguistics: &linguistics };
    let variants = [
        (PosScope::ImageRelated, Routing::SummaryFirst),
        (PosScope::ImageRelated, Routing::FullFirst),
        (PosScope::All, Routing::SummaryFirst),
    ];
    let mut cases = 0;
    let mut tokens = 0;
    for seed in 0..BACKENDS {
        let b = random_backend(seed);
        let ctx = image_ctx(&b, "img", "describe");
        let greedy = run(&b, &ctx, &DecodeConfig::greedy().with_max_new_tokens(MAX_TOKENS), None)?;
        for (scope, routing) in variants {
            let cfg = sumgd_cfg(SummarizerKind::Identity, scope, routing, MAX_TOKENS);
            let out = run(&b, &ctx, &cfg, Some(parts))?;
            ensure(out.text.as_bytes() == greedy.text.as_bytes() && out.tokens == greedy.tokens, || {
                format!("seed {seed} {scope:?}/{routing:?}: {:?} vs greedy {:?}", out.text, greedy.text)
            })?;
            cases += 1;
        }
        tokens += greedy.tokens.len();
    }
    Ok(format!("{cases}/{cases} decodes over {BACKENDS} backends byte-identical ({tokens} greedy tokens)"))
}

fn check_routing(trace: &DecodeTrace, scope: PosScope) -> Result<usize, String> {
    for s in &trace.steps {
        let ok = match scope {
            PosScope::All => s.source == Source::Summary,
            PosScope::ImageRelated => {
                let image_related = s.pos_tag.is_some_and(|t| t.is_image_related());
                (s.source == Source::Summary) == image_related && s.pos_tag.is_some()
            }
        };
        ensure(ok, || format!("step {} ({:?}): source {:?}, tag {:?}", s.position, s.word, s.source, s.pos_tag))?;
    }
    Ok(trace.steps.len())
}

fn routing_soundness() -> Outcome {
    let linguistics = Linguistics::default();
    let extractive = ExtractiveSummarizer::new(linguistics.clone());
    let summarizers: [(&dyn Summarizer, SummarizerKind); 2] =
        [(&IdentitySummarizer, SummarizerKind::Identity), (&extractive, SummarizerKind::Extractive)];
    let mut steps = 0;
    let mut summary_steps = 0;
    for seed in 0..BACKENDS {
        let b = random_backend(seed);
        let ctx = image_ctx(&b, "img", "describe");
        for (summarizer, kind) in summarizers {
            let parts = SumgdParts { summarizer, linguistics: &linguistics };
            for (scope, routing) in [
                (PosScope::ImageRelated, Routing::SummaryFirst),
                (PosScope::ImageRelated, Routing::FullFirst),
                (PosScope::All, Routing::SummaryFirst),
            ] {
                let out = run(&b, &ctx, &sumgd_cfg(kind, scope, routing, MAX_TOKENS), Some(parts))?;
                steps += check_routing(&out.trace, scope).map_err(|e| format!("seed {seed} {kind:?} {scope:?}: {e}"))?;
                summary_steps += out.trace.steps.iter().filter(|s| s.source == Source::Summary).count();
            }
        }
    }
    ensure(summary_steps > 0 && summary_steps < steps, || "routing never exercised both sources".into())?;
    Ok(format!("{steps}/{steps} steps sound ({summary_steps} from the summary context)"))
}

// ---------------------------------------------------------------- synthetic oracle

struct SyntheticRun {
    captions: Vec<(String, String)>,
    traces: Vec<DecodeTrace>,
}

fn decode_all<B: Backend<f64> + ?Sized>(
    b: &B,
    images: &[String],
    cfg: &DecodeConfig,
    parts: Option<SumgdParts<'_>>,
) -> Result<SyntheticRun, String> {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(16);
    let chunk = images.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<(String, DecodeOutput)>, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = images
            .chunks(chunk)
            .map(|ids| {
                s.spawn(move || {
                    ids.iter()
                        .map(|id| run(b, &image_ctx(b, id, "describe"), cfg, parts).map(|o| (id.clone(), o)))
                        .collect::<Result<Vec<_>, String>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decode thread")).collect()
    });
    let mut out = SyntheticRun { captions: Vec::new(), traces: Vec::new() };
    for r in results {
        for (id, o) in r? {
            out.captions.push((id, o.text));
            out.traces.push(o.trace);
        }
    }
    Ok(out)
}

fn as_refs(v: &[(String, String)]) -> Vec<(&str, &str)> {
    v.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect()
}

fn synthetic_hallucination_reduction() -> Outcome {
    let start = Instant::now();
    let images = SyntheticHallucinationBackend::<f64>::random_images(200, 8, 7);
    let backend = SyntheticHallucinationBackend::<f64>::new(SyntheticConfig::default(), &images).map_err(|e| e.to_string())?;
    let vocab = ObjectVocabulary::builtin();
    let annotations = Annotations::new(images.clone(), vocab).map_err(|e| e.to_string())?;
    let ids: Vec<String> = images.keys().cloned().collect();
    let linguistics = Linguistics::default();
    let extractive = ExtractiveSummarizer::new(linguistics.clone());
    let parts = SumgdParts { summarizer: &extractive, linguistics: &linguistics };

    let greedy = decode_all(&backend, &ids, &DecodeConfig::greedy().with_max_new_tokens(256), None)?;
    let cfg = sumgd_cfg(SummarizerKind::Extractive, PosScope::ImageRelated, Routing::SummaryFirst, 256);
    let guided = decode_all(&backend, &ids, &cfg, Some(parts))?;

    let pairs = |r: &SyntheticRun| r.captions.iter().map(|(a, b)| (a.clone(), b.clone())).collect::<Vec<_>>();
    let (g, s) = (pairs(&greedy), pairs(&guided));
    let gc = chair_metrics(as_refs(&g), &annotations, vocab).map_err(|e| e.to_string())?;
    let sc = chair_metrics(as_refs(&s), &annotations, vocab).map_err(|e| e.to_string())?;
    ensure(gc.mentions > 0 && gc.hallucinated_mentions > 0, || "greedy produced no hallucinations".into())?;
    let g_rate = gc.hallucinated_mentions as f64 / gc.mentions as f64;
    let s_rate = if sc.mentions == 0 { 0.0 } else { sc.hallucinated_mentions as f64 / sc.mentions as f64 };
    ensure(s_rate <= 0.7 * g_rate, || format!("SumGD rate {s_rate:.4} > 0.7 x greedy {g_rate:.4}"))?;
    ensure(greedy.traces.iter().all(|t| t.generated_tokens() == 256), || "greedy decodes stopped early".into())?;

    let buckets = hallucination_by_position(as_refs(&g), &annotations, vocab, 32).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = buckets.iter().map(|b| b.ratio).collect();
    ensure(ratios.windows(2).all(|w| w[0] <= w[1]), || format!("greedy buckets not non-decreasing: {ratios:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    let shown: Vec<String> = buckets.iter().map(|b| format!("{}:{:.2}", b.bucket, b.ratio)).collect();
    Ok(format!(
        "200 x 256 tokens; hallucinated mentions greedy {}/{} ({:.3}), SumGD {}/{} ({:.3}); greedy buckets [{}]",
        gc.hallucinated_mentions,
        gc.mentions,
        g_rate,
        sc.hallucinated_mentions,
        sc.mentions,
        s_rate,
        shown.join(" ")
    ))
}

// ---------------------------------------------------------------- degeneracies

fn degenerate_configs_equal_greedy() -> Outcome {
    let beam = DecodeConfig { num_beams: 1, ..DecodeConfig::new(Strategy::Beam) }.with_max_new_tokens(MAX_TOKENS);
    let nucleus = DecodeConfig { top_p: 1e-9, seed: 3, ..DecodeConfig::new(Strategy::Nucleus) }.with_max_new_tokens(MAX_TOKENS);
    let contrast = |mode| DecodeConfig::new(Strategy::Contrastive).with_contrast(ContrastSpec::new(mode, 0.0)).with_max_new_tokens(MAX_TOKENS);
    let configs = [
        ("beam n=1", beam),
        ("nucleus top_p=1e-9", nucleus),
        ("contrastive no_image alpha=0", contrast(ContrastMode::NoImage)),
        ("contrastive distorted_image alpha=0", contrast(ContrastMode::DistortedImage)),
        ("contrastive modified_instruction alpha=0", contrast(ContrastMode::ModifiedInstruction)),
    ];
    for (name, cfg) in &configs {
        for seed in 1000..1020 {
            let b = random_backend(seed);
            let ctx = image_ctx(&b, "img", "describe");
            let greedy = run(&b, &ctx, &DecodeConfig::greedy().with_max_new_tokens(MAX_TOKENS), None)?;
            let out = run(&b, &ctx, cfg, None)?;
            ensure(out.text.as_bytes() == greedy.text.as_bytes(), || {
                format!("{name}, backend {seed}: {:?} vs greedy {:?}", out.text, greedy.text)
            })?;
        }
    }
    Ok(format!("{} configs x 20 backends byte-identical to greedy", configs.len()))
}

// ---------------------------------------------------------------- cost accounting

fn identity_holds(t: &DecodeTrace) -> bool {
    let sum = t.calls.generation + t.calls.lookahead + t.calls.summarization;
    t.total_backend_calls == sum && t.is_consistent()
}

fn summary_of(label: &str, strategy: Strategy, run: &SyntheticRun, report: sumgd_core::metrics::MetricsReport) -> RunSummary {
    let calls = run.traces.iter().fold(Default::default(), |acc, t| acc + t.calls);
    RunSummary {
        label: label.into(),
        strategy: strategy.as_str().into(),
        max_new_tokens: 96,
        dataset: "synthetic-40".into(),
        report,
        calls,
        generated_tokens: run.traces.iter().map(|t| t.generated_tokens() as u64).sum(),
    }
}

fn cost_accounting_identity() -> Outcome {
    let linguistics = Linguistics::default();
    let extractive = ExtractiveSummarizer::new(linguistics.clone());
    let mut traces = 0;
    let mut with_summaries = 0;

    for seed in 0..BACKENDS {
        let b = random_backend(seed);
        let ctx = image_ctx(&b, "img", "describe");
        let self_summary = PromptSummarizer::new(&b as &dyn Backend<f64>, SummaryVariant::SelfSummary).with_max_tokens(8);
        let summarizers: [(&dyn Summarizer, SummarizerKind); 2] =
            [(&extractive, SummarizerKind::Extractive), (&self_summary, SummarizerKind::SelfSummary)];
        for (summarizer, kind) in summarizers {
            let parts = SumgdParts { summarizer, linguistics: &linguistics };
            let cfg = sumgd_cfg(kind, PosScope::ImageRelated, Routing::SummaryFirst, MAX_TOKENS);
            let out = match run(&b, &ctx, &cfg, Some(parts)) {
                Ok(o) => o,
                Err(e) if e.contains("nothing to summarize") => continue,
                Err(e) => return Err(format!("seed {seed}: {e}")),
            };
            ensure(identity_holds(&out.trace), || format!("seed {seed} {kind:?}: {:?}", out.trace.calls))?;
            traces += 1;
            with_summaries += usize::from(out.trace.calls.summarization > 0);
        }
    }

    let images = SyntheticHallucinationBackend::<f64>::random_images(40, 6, 3);
    let backend = SyntheticHallucinationBackend::<f64>::new(SyntheticConfig::default(), &images).map_err(|e| e.to_string())?;
    let vocab = ObjectVocabulary::builtin();
    let annotations = Annotations::new(images.clone(), vocab).map_err(|e| e.to_string())?;
    let ids: Vec<String> = images.keys().cloned().collect();
    let self_summary = PromptSummarizer::new(&backend as &dyn Backend<f64>, SummaryVariant::SelfSummary).with_max_tokens(16);
    let runs = [
        ("greedy", DecodeConfig::greedy().with_max_new_tokens(96), None),
        (
            "sumgd-extractive",
            sumgd_cfg(SummarizerKind::Extractive, PosScope::ImageRelated, Routing::SummaryFirst, 96),
            Some(SumgdParts { summarizer: &extractive, linguistics: &linguistics }),
        ),
        (
            "sumgd-s",
            sumgd_cfg(SummarizerKind::SelfSummary, PosScope::ImageRelated, Routing::SummaryFirst, 96),
            Some(SumgdParts { summarizer: &self_summary, linguistics: &linguistics }),
        ),
    ];
    let mut summaries = Vec::new();
    for (label, cfg, parts) in runs {
        let r = decode_all(&backend, &ids, &cfg, parts)?;
        for t in &r.traces {
            ensure(identity_holds(t), || format!("{label}: {:?}", t.calls))?;
        }
        traces += r.traces.len();
        let records: Vec<CaptionRecord> = r.captions.iter().map(|(id, c)| CaptionRecord::new(id.clone(), c.clone())).collect();
        let report = evaluate(&records, &annotations, vocab, SentenceSegmenter::builtin(), &EvaluateOptions::default())
            .map_err(|e| e.to_string())?;
        summaries.push(summary_of(label, cfg.strategy, &r, report));
    }
    let table = compare_runs(&summaries).map_err(|e| e.to_string())?;
    let greedy_cpt = summaries[0].calls_per_token();
    for (row, s) in table.rows.iter().zip(&summaries) {
        ensure(row.total_calls == s.calls.total(), || format!("{}: total mismatch", row.method))?;
        let want = s.calls_per_token() / greedy_cpt;
        let got = row.relative_cost.ok_or_else(|| format!("{}: no relative cost", row.method))?;
        ensure((got - want).abs() < 1e-12, || format!("{}: relative cost {got} != {want}", row.method))?;
    }
    let md = table.to_markdown();
    ensure(md.lines().next().is_some_and(|h| h.ends_with("| Calls | Calls/token | Relative cost |")), || md.clone())?;
    let costs: Vec<String> = table.rows.iter().map(|r| format!("{} {:.2}", r.method, r.relative_cost.unwrap())).collect();
    Ok(format!(
        "{traces} traces satisfy total = generation + lookahead + summarization ({with_summaries} with summarizer calls); relative cost {}",
        costs.join(", ")
    ))
}

// ---------------------------------------------------------------- golden schemas

fn check_shape(name: &str, value: &Value) -> Result<(), String> {
    let errs = shape_mismatches(&golden(name), value);
    ensure(errs.is_empty(), || format!("{name}: {}", errs.join("; ")))
}

fn report_schemas_match_golden() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("runs");
    let dataset = p(&fixture("toy/dataset.json"));
    let names = [
        "greedy.toml",
        "nucleus.toml",
        "beam.toml",
        "vcd.toml",
        "icd.toml",
        "m3id.toml",
        "sumgd_s.toml",
        "sumgd_d.toml",
        "sumgd_extractive.toml",
        "sumgd_all_pos.toml",
    ];
    let mut args: Vec<String> = vec!["grid".into(), "--configs".into()];
    args.extend(names.iter().map(|n| p(&config(n))));
    args.extend(
        ["--dataset", &dataset, "--backend", "synthetic", "--summarizer-backend", "synthetic", "--max-new-tokens", "48"]
            .map(String::from),
    );
    args.extend(["--out".to_string(), p(&out), "--format".into(), "json".into()]);
    let (code, stdout) = sumgd(&args);
    ensure(code == 0, || format!("grid exited with {code}"))?;
    let table: Value = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
    check_shape("comparison.json", &table)?;
    let rows = table["rows"].as_array().map_or(0, Vec::len);
    ensure(rows == names.len(), || format!("{rows} rows for {} configs", names.len()))?;

    let mut artifacts = 1;
    for entry in std::fs::read_dir(&out).map_err(|e| e.to_string())? {
        let dir = entry.map_err(|e| e.to_string())?.path();
        if !dir.is_dir() {
            continue;
        }
        check_shape("manifest.json", &read_json(&dir.join("manifest.json")))?;
        check_shape("report.json", &read_json(&dir.join("report.json")))?;
        for c in jsonl(&dir.join("captions.jsonl")) {
            check_shape("caption.json", &c)?;
        }
        for t in std::fs::read_dir(dir.join("traces")).map_err(|e| e.to_string())? {
            let lines = jsonl(&t.map_err(|e| e.to_string())?.path());
            check_shape("trace_header.json", &lines[0])?;
            for l in &lines[1..] {
                check_shape("trace_step.json", l)?;
            }
            artifacts += lines.len();
        }
        artifacts += 2;
    }

    let probes = tmp.path().join("probes");
    let (code, _) = sumgd(&[
        "analyze",
        "--mode",
        "pos",
        "--dataset",
        &dataset,
        "--backend",
        "synthetic",
        "--max-new-tokens",
        "32",
        "--probe-dir",
        &p(&probes),
    ]);
    ensure(code == 0, || format!("analyze exited with {code}"))?;
    for f in std::fs::read_dir(&probes).map_err(|e| e.to_string())? {
        let lines = jsonl(&f.map_err(|e| e.to_string())?.path());
        check_shape("probe_header.json", &lines[0])?;
        for l in &lines[1..] {
            check_shape("probe_step.json", l)?;
        }
        artifacts += lines.len();
    }
    let md = std::fs::read_dir(&out)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| p.extension().is_some_and(|x| x == "md"))
        .ok_or("grid wrote no markdown table")?;
    let md = std::fs::read_to_string(md).map_err(|e| e.to_string())?;
    ensure(md.starts_with("| Method | Max tokens | C_S | C_I | R | SPI |"), || md.clone())?;
    Ok(format!("{} configs in one grid command; {artifacts} records match golden schemas", names.len()))
}

// ---------------------------------------------------------------- fluency

fn ngram_fluency_examples() -> Outcome {
    let cases = [("the cat sat on the mat", 1, (5, 6)), ("the cat sat on the mat", 2, (5, 5)), ("a a a a", 1, (1, 4))];
    for (text, n, (unique, total)) in cases {
        let c = ngram_counts(text, n).map_err(|e| e.to_string())?;
        ensure((c.unique, c.total) == (unique, total), || format!("{text:?} n={n}: {}/{}", c.unique, c.total))?;
        ensure(c.ratio() == unique as f64 / total as f64, || format!("{text:?} n={n}: ratio {}", c.ratio()))?;
    }
    ensure(ngram_counts("x", 0).is_err(), || "n = 0 accepted".into())?;
    Ok("5/6, 5/5, 1/4".into())
}
