use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use medtem::config::ConfigFile;
use medtem::corpus::{
    generate_fixture_corpus, load_directory, load_document, read_conll, spans_to_iob, write_conll, write_fixture, AnnotatedDocument,
    ConllDoc, FixtureSpec, LabeledSentence, ParseOptions, Relation, TagScheme, EVENT_TAGS, MEDICATION_TAGS,
};
use medtem::embed::load_pretrained;
use medtem::evalkit::{evaluate, span_prf_sequences};
use medtem::medstatus::{emit_jsonl, emit_table, Status};
use medtem::ner::{
    build_bilstm_crf, build_cnn_bilstm, build_vocabs, predict_tags, train_ner, Architecture, EmbeddingSource, NerConfig, NerModel,
};
use medtem::pipeline::{analyze_document, assemble, Source};
use medtem::relex::{
    downsample_balanced, dump_instances, gold_candidates, label_counts, rel_vocab_from_docs, train_rel, RelConfig, RelModel,
    RelationInstance,
};
use medtem::verify::run_all;
use medtem::{Error, Warnings};
use rayon::prelude::*;

use crate::{CliError, Command, Global};

type CliResult<T = ()> = Result<T, CliError>;

struct Context {
    seed: u64,
    seed_flag: bool,
    deterministic: bool,
    config: ConfigFile,
    jobs: usize,
}

impl Context {
    fn new(g: &Global) -> CliResult<Self> {
        let mut config = match &g.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        for o in &g.overrides {
            config.set_dotted(o).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        let seed = match g.seed {
            Some(s) => s,
            None => config.get_parsed("", "seed")?.unwrap_or(0),
        };
        Ok(Context {
            seed,
            seed_flag: g.seed.is_some(),
            deterministic: g.deterministic,
            config,
            jobs: g.jobs.max(1),
        })
    }

    /// Module seed: the `--seed` flag, else the section's own `seed`, else
    /// the global one.
    fn module_seed(&self, section: &str, current: u64) -> u64 {
        if self.seed_flag || self.config.get(section, "seed").is_none() {
            self.seed
        } else {
            current
        }
    }

    fn ner_config(&self, flag: Option<&str>) -> CliResult<NerConfig> {
        let arch: Architecture = match flag {
            Some(a) => a.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?,
            None => self.config.get_parsed("ner", "architecture")?.unwrap_or(Architecture::BilstmCrf),
        };
        let mut c = NerConfig::for_architecture(arch);
        self.config.apply_ner(&mut c)?;
        c.architecture = arch;
        c.seed = self.module_seed("ner", c.seed);
        c.validate()?;
        Ok(c)
    }

    fn rel_config(&self) -> CliResult<RelConfig> {
        let mut c = RelConfig::default();
        self.config.apply_rel(&mut c)?;
        c.seed = self.module_seed("rel", c.seed);
        c.validate()?;
        Ok(c)
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
    }

    fn log_elapsed(&self, what: &str, start: Instant) {
        if !self.deterministic {
            log::info!("{what} took {:.1}s", start.elapsed().as_secs_f64());
        }
    }
}

pub fn run(g: &Global, command: Command) -> CliResult {
    let ctx = Context::new(g)?;
    match command {
        Command::Fixture { n, out, no_fig1 } => fixture(&ctx, n, &out, !no_fig1),
        Command::Ingest {
            dir,
            lenient,
            scheme,
            conll,
        } => ingest(&dir, lenient, scheme.as_deref(), conll.as_deref()),
        Command::TrainNer {
            train,
            val,
            out,
            architecture,
            scheme,
            embeddings,
            history,
        } => train_ner_cmd(
            &ctx,
            &train,
            val.as_deref(),
            &out,
            architecture.as_deref(),
            scheme.as_deref(),
            embeddings.as_deref(),
            history.as_deref(),
        ),
        Command::TrainRel {
            train,
            val,
            out,
            with_replacement,
            instances,
        } => train_rel_cmd(&ctx, &train, val.as_deref(), &out, with_replacement, instances.as_deref()),
        Command::Predict { ner, input, out } => predict(&ctx, &ner, &input, out.as_deref()),
        Command::Extract {
            ner,
            rel,
            input,
            out,
            gold,
            id_base,
            jsonl,
        } => extract(&ctx, ner.as_deref(), rel.as_deref(), &input, out.as_deref(), gold, id_base, jsonl),
        Command::Eval {
            gold,
            pred,
            spans,
            json,
            include_padding,
        } => eval(&gold, &pred, spans, json, include_padding),
        Command::Verify => verify(&ctx),
    }
}

/// Writes `data` to `out`, or to stdout when no path is given. The summary
/// goes to stdout in the first case and to stderr in the second.
fn emit(out: Option<&Path>, data: &str, summary: &str) -> CliResult {
    match out {
        Some(p) => {
            std::fs::write(p, data).map_err(|e| Error::io(p, e))?;
            println!("{summary}");
        }
        None => {
            print!("{data}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn warnings_line(w: &Warnings) -> String {
    if w.is_empty() {
        return "0 warnings".into();
    }
    let kinds: Vec<String> = w.iter().map(|(k, n)| format!("{k}={n}")).collect();
    format!("{} warnings ({})", w.total(), kinds.join(", "))
}

fn load_docs(path: &Path, lenient: bool) -> CliResult<(Vec<AnnotatedDocument>, Warnings)> {
    let opts = ParseOptions { lenient };
    let parsed = if path.is_dir() {
        load_directory(path, opts)?
    } else {
        vec![load_document(path, opts)?]
    };
    let mut warnings = Warnings::new();
    let docs = parsed
        .into_iter()
        .map(|p| {
            warnings.merge(&p.warnings);
            p.doc
        })
        .collect();
    Ok((docs, warnings))
}

/// The named scheme, or the built-in one that covers every tag seen, or
/// an ad-hoc scheme over the sorted tags.
fn choose_scheme(name: Option<&str>, tags: &BTreeSet<String>) -> CliResult<TagScheme> {
    if let Some(n) = name {
        return TagScheme::by_name(n).map_err(|e| CliError::Usage(e.to_string()));
    }
    if tags.iter().all(|t| MEDICATION_TAGS.contains(&t.as_str())) {
        return Ok(TagScheme::medication());
    }
    if tags.iter().all(|t| EVENT_TAGS.contains(&t.as_str())) {
        return Ok(TagScheme::events());
    }
    let tags: Vec<&str> = tags.iter().map(String::as_str).collect();
    Ok(TagScheme::new("custom", &tags)?)
}

fn is_conll(path: &Path) -> bool {
    path.is_file() && path.extension().is_none_or(|e| e != "txt")
}

fn sentence_tags(sentences: &[LabeledSentence]) -> BTreeSet<String> {
    sentences
        .iter()
        .flat_map(|s| &s.labels)
        .filter_map(|l| {
            l.split_once('-')
                .filter(|(p, _)| *p == "B" || *p == "I")
                .map(|(_, t)| t.to_string())
        })
        .collect()
}

/// Labelled sentences from a CoNLL file or an annotated corpus, with the
/// scheme they were labelled under.
fn load_sentences(path: &Path, scheme: Option<&TagScheme>, scheme_name: Option<&str>) -> CliResult<(Vec<LabeledSentence>, TagScheme)> {
    if is_conll(path) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sentences: Vec<LabeledSentence> = read_conll(&text)?.into_iter().flat_map(|d| d.sentences).collect();
        let scheme = match scheme {
            Some(s) => s.clone(),
            None => choose_scheme(scheme_name, &sentence_tags(&sentences))?,
        };
        return Ok((sentences, scheme));
    }
    let (docs, w) = load_docs(path, false)?;
    let scheme = match scheme {
        Some(s) => s.clone(),
        None => {
            let tags = docs.iter().flat_map(|d| d.entities.iter().map(|e| e.tag.clone())).collect();
            choose_scheme(scheme_name, &tags)?
        }
    };
    let mut warnings = w;
    let mut sentences = Vec::new();
    for d in &docs {
        let (s, w) = spans_to_iob(d, &scheme)?;
        warnings.merge(&w);
        sentences.extend(s.into_iter().filter(|s| !s.is_empty()));
    }
    if !warnings.is_empty() {
        log::warn!("{}: {}", path.display(), warnings_line(&warnings));
    }
    Ok((sentences, scheme))
}

fn fixture(ctx: &Context, n: usize, out: &Path, fig1: bool) -> CliResult {
    let mut spec = FixtureSpec::new(n, ctx.seed);
    spec.include_fig1 = fig1;
    let docs = generate_fixture_corpus(&spec)?;
    write_fixture(out, &docs)?;
    println!("wrote {} documents to {}", docs.len(), out.display());
    Ok(())
}

fn ingest(dir: &Path, lenient: bool, scheme: Option<&str>, conll: Option<&Path>) -> CliResult {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let (docs, warnings) = load_docs(dir, lenient)?;
    let count = |f: fn(&AnnotatedDocument) -> usize| docs.iter().map(f).sum::<usize>();
    println!("{} documents, {}", docs.len(), warnings_line(&warnings));
    println!(
        "{} sentences, {} tokens, {} entities, {} events, {} timexes, {} tlinks",
        count(|d| d.sentences.len()),
        count(|d| d.tokens.len()),
        count(|d| d.entities.len()),
        count(|d| d.events.len()),
        count(|d| d.timexes.len()),
        count(|d| d.tlinks.len())
    );
    if let Some(path) = conll {
        let tags = docs.iter().flat_map(|d| d.entities.iter().map(|e| e.tag.clone())).collect();
        let scheme = choose_scheme(scheme, &tags)?;
        let mut out = Vec::with_capacity(docs.len());
        let mut w = Warnings::new();
        for d in &docs {
            let (sentences, dw) = spans_to_iob(d, &scheme)?;
            w.merge(&dw);
            out.push(ConllDoc {
                doc_id: d.doc_id.clone(),
                sentences,
            });
        }
        std::fs::write(path, write_conll(&out)).map_err(|e| Error::io(path, e))?;
        println!(
            "wrote {} scheme labels to {} ({})",
            scheme.name(),
            path.display(),
            warnings_line(&w)
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_ner_cmd(
    ctx: &Context,
    train: &Path,
    val: Option<&Path>,
    out: &Path,
    architecture: Option<&str>,
    scheme_name: Option<&str>,
    embeddings: Option<&Path>,
    history: Option<&Path>,
) -> CliResult {
    let mut config = ctx.ner_config(architecture)?;
    let (train_s, scheme) = load_sentences(train, None, scheme_name)?;
    let val_s = match val {
        Some(v) => load_sentences(v, Some(&scheme), None)?.0,
        None => Vec::new(),
    };
    if train_s.is_empty() {
        return Err(Error::Invalid(format!("{} has no labelled sentences", train.display())).into());
    }
    let (mut vocab, chars) = build_vocabs(&train_s, false);
    let mut table = None;
    if config.embedding == EmbeddingSource::Pretrained {
        match embeddings {
            Some(p) => {
                let (v, t) = load_pretrained(p, config.word_dim)?;
                vocab = v;
                table = Some(t);
            }
            None => {
                log::warn!("no --embeddings given; using randomly initialised word vectors");
                config.embedding = EmbeddingSource::RandomDense;
            }
        }
    }
    let model = match config.architecture {
        Architecture::BilstmCrf => build_bilstm_crf(&config, vocab, scheme, table)?,
        Architecture::CnnBilstm => build_cnn_bilstm(&config, vocab, chars, scheme, table)?,
    };
    let params = model.param_count();
    let start = Instant::now();
    let (model, hist) = train_ner(model, &train_s, &val_s, Some(out))?;
    ctx.log_elapsed("training", start);
    model.save(out)?;
    if let Some(h) = history {
        std::fs::write(h, hist.to_csv()).map_err(|e| Error::io(h, e))?;
    }
    let tokens: usize = train_s.iter().map(LabeledSentence::len).sum();
    println!(
        "{} on {} sentences ({tokens} tokens), {params} parameters, scheme {}",
        config.architecture,
        train_s.len(),
        model.scheme.name()
    );
    if let Some(e) = hist.best_epoch.and_then(|b| hist.epochs.iter().find(|e| e.epoch == b)) {
        let val = match (e.val_loss, e.val_acc) {
            (Some(l), Some(a)) => format!(", val loss {l:.6} acc {a:.4}"),
            _ => String::new(),
        };
        println!(
            "best epoch {} of {}: train loss {:.6} acc {:.4}{val}",
            e.epoch,
            hist.epochs.len(),
            e.train_loss,
            e.train_acc
        );
    }
    println!("saved {}", out.display());
    Ok(())
}

fn labeled_candidates(
    docs: &[AnnotatedDocument],
    model_vocab: &medtem::embed::Vocab,
    config: &RelConfig,
) -> (Vec<RelationInstance>, Warnings) {
    let opts = config.candidate_options();
    let mut all = Vec::new();
    let mut warnings = Warnings::new();
    for d in docs {
        let (inst, w) = gold_candidates(d, model_vocab, &opts);
        warnings.merge(&w);
        all.extend(inst.into_iter().filter(|i| i.label.is_some()));
    }
    (all, warnings)
}

fn train_rel_cmd(ctx: &Context, train: &Path, val: Option<&Path>, out: &Path, with_replacement: bool, dump: Option<&Path>) -> CliResult {
    let config = ctx.rel_config()?;
    let (docs, _) = load_docs(train, false)?;
    let vocab = rel_vocab_from_docs(&docs);
    let (instances, w) = labeled_candidates(&docs, &vocab, &config);
    if !w.is_empty() {
        log::warn!("candidates: {}", warnings_line(&w));
    }
    let counts = label_counts(&instances);
    let per_class: Vec<usize> = Relation::ALL.iter().map(|r| counts.get(r).copied().unwrap_or(0)).collect();
    let smallest = per_class.iter().copied().min().unwrap_or(0);
    let n = if with_replacement || smallest >= config.n_per_class {
        config.n_per_class
    } else {
        log::warn!(
            "smallest class has {smallest} instances; using {smallest} per class instead of {}",
            config.n_per_class
        );
        smallest
    };
    if n == 0 {
        return Err(Error::Invalid(format!("no labelled instances for every relation class (counts {per_class:?})")).into());
    }
    let balanced = downsample_balanced(&instances, n, config.seed, with_replacement)?;
    if let Some(p) = dump {
        std::fs::write(p, dump_instances(&balanced)).map_err(|e| Error::io(p, e))?;
    }
    let val_instances = match val {
        Some(v) => labeled_candidates(&load_docs(v, false)?.0, &vocab, &config).0,
        None => Vec::new(),
    };
    let start = Instant::now();
    let (model, hist) = train_rel(&config, vocab, &balanced, &val_instances)?;
    ctx.log_elapsed("training", start);
    model.save(out)?;
    let counts_line: Vec<String> = Relation::ALL.iter().zip(&per_class).map(|(r, c)| format!("{r}={c}")).collect();
    println!(
        "{} labelled candidates ({}), {n} per class after balancing",
        instances.len(),
        counts_line.join(" ")
    );
    if let Some(e) = hist.last() {
        let val = e.val_acc.map(|a| format!(", val acc {a:.4}")).unwrap_or_default();
        println!("epoch {}: train loss {:.6} acc {:.4}{val}", e.epoch, e.train_loss, e.train_acc);
    }
    println!("saved {}", out.display());
    Ok(())
}

fn predict(ctx: &Context, ner: &Path, input: &Path, out: Option<&Path>) -> CliResult {
    let model = NerModel::load(ner)?;
    let (docs, _) = load_docs(input, true)?;
    let tagged: Vec<ConllDoc> = ctx.pool()?.install(|| {
        docs.par_iter()
            .map(|d| {
                let labels = predict_tags(&model, d)?;
                let sentences = d
                    .sentence_token_ranges()
                    .into_iter()
                    .zip(labels)
                    .map(|(r, labels)| LabeledSentence {
                        tokens: d.tokens[r].iter().map(|t| t.text.clone()).collect(),
                        labels,
                    })
                    .collect();
                Ok(ConllDoc {
                    doc_id: d.doc_id.clone(),
                    sentences,
                })
            })
            .collect::<medtem::Result<Vec<_>>>()
    })?;
    let sentences: usize = tagged.iter().map(|d| d.sentences.len()).sum();
    let entities: usize = tagged
        .iter()
        .flat_map(|d| &d.sentences)
        .flat_map(|s| &s.labels)
        .filter(|l| l.starts_with("B-") || l.starts_with("I-"))
        .count();
    let summary = format!("tagged {} documents, {sentences} sentences, {entities} entity tokens", tagged.len());
    emit(out, &write_conll(&tagged), &summary)
}

#[allow(clippy::too_many_arguments)]
fn extract(
    ctx: &Context,
    ner: Option<&Path>,
    rel: Option<&Path>,
    input: &Path,
    out: Option<&Path>,
    gold: bool,
    id_base: u64,
    jsonl: bool,
) -> CliResult {
    let models = match (gold, ner, rel) {
        (true, _, _) => None,
        (false, Some(n), Some(r)) => Some((NerModel::load(n)?, RelModel::load(r)?)),
        _ => return Err(CliError::Usage("extract needs --ner and --rel, or --gold".into())),
    };
    let (docs, parse_warnings) = load_docs(input, true)?;
    let (source, opts) = match &models {
        None => (Source::Gold, Default::default()),
        Some((n, r)) => (Source::Models { ner: n, rel: r }, r.config.candidate_options()),
    };
    let results = ctx.pool()?.install(|| {
        docs.par_iter()
            .map(|d| analyze_document(d, source, &opts))
            .collect::<medtem::Result<Vec<_>>>()
    })?;
    let (records, mut warnings) = assemble(&results, id_base);
    warnings.merge(&parse_warnings);
    let data = if jsonl { emit_jsonl(&records)? } else { emit_table(&records)? };
    let on = records.iter().filter(|r| r.status == Status::On).count();
    let summary = format!(
        "{} documents, {} rows (ON {on}, OFF {}), {}",
        docs.len(),
        records.len(),
        records.len() - on,
        warnings_line(&warnings)
    );
    emit(out, &data, &summary)
}

fn read_labels(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(read_conll(&text)?.into_iter().flat_map(|d| d.sentences).map(|s| s.labels).collect())
}

fn eval(gold: &Path, pred: &Path, spans: bool, json: bool, include_padding: bool) -> CliResult {
    let g = read_labels(gold)?;
    let p = read_labels(pred)?;
    let aligned = g.len() == p.len() && g.iter().zip(&p).all(|(a, b)| a.len() == b.len());
    if !aligned {
        return Err(Error::Invalid(format!(
            "{} and {} are not aligned sentence by sentence",
            gold.display(),
            pred.display()
        ))
        .into());
    }
    let labels: Vec<String> = g.iter().chain(&p).flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let report = evaluate(&g, &p, &labels, include_padding)?;
    if json {
        println!("{}", report.to_json()?);
    } else {
        print!("{}", report.to_table(true));
    }
    if spans {
        let s = span_prf_sequences(&g, &p)?;
        println!();
        for (tag, (c, m)) in s.per_tag.iter().chain(std::iter::once((&"overall".to_string(), &s.overall))) {
            println!(
                "span {tag:>12}  P {:6.2}  R {:6.2}  F1 {:6.2}  (tp {} fp {} fn {})",
                m.precision * 100.0,
                m.recall * 100.0,
                m.f1 * 100.0,
                c.tp,
                c.fp,
                c.fn_
            );
        }
    }
    Ok(())
}

fn verify(ctx: &Context) -> CliResult {
    let report = run_all(ctx.seed)?;
    print!("{}", report.to_text());
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        Err(CliError::Verification(format!("failed suites: {}", failed.join(", "))))
    }
}
