//! `pfsmn`: generate corpora, train, evaluate, decode and rescore.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pfsmn::decode::{
    decode_nbest, lmwt_grid, lmwt_sweep, nbest_oracle_accuracy, rescore_all, rescore_with_oracle, top1_accuracy,
    top1_phone_error, train_tiny_rnnlm, LmScorer, NGramLm, PhoneErrorCount, RnnLmConfig, SweepPoint, UtteranceNbest,
};
use pfsmn::gradsuite::run_gradient_suite;
use pfsmn::graph::{build_denominator_graph, num_pdfs, PhoneLm, DEFAULT_ADD_K};
use pfsmn::net::{load_checkpoint, save_checkpoint, Network, NetworkConfig};
use pfsmn::train::{
    evaluate, generate_corpus, history_ndjson, load_corpus, parse_history, save_corpus, train_network,
    DenominatorGraphs, GeneratorSpec, TrainConfig, Utterance,
};

#[derive(Parser)]
#[command(name = "pfsmn", version, about = "CNN + pyramidal-FSMN acoustic model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference check of every layer and loss; exits 1 on failure.
    Gradcheck {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds per case.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Generate a synthetic corpus.
    Gen {
        /// Generator spec JSON; defaults to the desk preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 600)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Keep the first N utterances in `--out` and write the rest to `--test-out`.
        #[arg(long, requires = "test_out")]
        split: Option<usize>,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Train a network on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Network config JSON; defaults to the desk preset sized to the corpus.
        #[arg(long)]
        net_config: Option<PathBuf>,
        /// Training config JSON; defaults to the built-in schedule.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the phone LM behind the denominator graph.
        #[arg(long)]
        lm_out: Option<PathBuf>,
        /// Per-epoch history as NDJSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Frame and phone error of a checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Viterbi / n-best decoding to JSON.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        nbest: usize,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescore n-best lists with an LM, optionally sweeping the LM weight.
    Rescore {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long, value_enum)]
        lm: LmKind,
        /// Phone LM JSON for `--lm ngram`.
        #[arg(long)]
        lm_file: Option<PathBuf>,
        /// Corpus whose transcripts train `--lm rnn` (or estimate `--lm ngram`).
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// RNN LM config JSON.
        #[arg(long)]
        rnn_config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        lmwt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write top-1 phone error over the LM-weight grid as JSON.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// Comma-separated LM weights for `--sweep`; 0 is always included.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Dump configs, checkpoints, LMs and graphs.
    Inspect {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        net_config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<PresetKind>,
        #[arg(long)]
        lm: Option<PathBuf>,
        /// With `--lm`: unroll the denominator graph to this many frames.
        #[arg(long)]
        frames: Option<usize>,
        /// With `--lm --frames`: write the graph in text form here.
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
    /// Learning curves or LM-weight sweeps as CSV.
    Curves {
        #[arg(long, conflicts_with = "sweep", required_unless_present = "sweep")]
        history: Option<PathBuf>,
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LmKind {
    Ngram,
    Rnn,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetKind {
    Desk,
    Paper,
}

#[derive(Serialize, Deserialize)]
struct SweepReport {
    baseline: PhoneErrorCount,
    points: Vec<SweepPoint>,
    best: SweepPoint,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<pfsmn::Error>().map_or("cli", pfsmn::Error::kind);
            let msg = format!("{e:#}");
            eprintln!("{}", serde_json::json!({ "error": msg, "kind": kind }));
            ExitCode::from(1)
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_lm(path: &Path) -> Result<PhoneLm> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(PhoneLm::from_json(&text)?)
}

fn load_model(path: &Path) -> Result<Network> {
    load_checkpoint(path, None).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_utts(path: &Path) -> Result<(Vec<Utterance>, Option<GeneratorSpec>)> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

/// Writes `text` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable") + "\n"
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gradcheck { seed, seeds } => gradcheck(seed, seeds),
        Command::Gen { config, seed, count, out, split, test_out } => gen(config, seed, count, &out, split, test_out),
        Command::Train { corpus, out, net_config, config, epochs, alpha, seed, lm_out, history } => {
            let mut tc: TrainConfig = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.alpha = alpha.unwrap_or(tc.alpha);
            tc.seed = seed.unwrap_or(tc.seed);
            train(&corpus, &out, net_config.as_deref(), &tc, lm_out.as_deref(), history.as_deref())
        }
        Command::Eval { model, lm, corpus, k, out } => {
            let net = load_model(&model)?;
            let (utts, _) = load_utts(&corpus)?;
            let mut dens = DenominatorGraphs::new(read_lm(&lm)?);
            let m = evaluate(&net, &utts, &mut dens, k)?;
            emit(out.as_deref(), &to_json_line(&m))
        }
        Command::Decode { model, lm, corpus, nbest, k, out } => {
            let net = load_model(&model)?;
            let (utts, _) = load_utts(&corpus)?;
            let mut dens = DenominatorGraphs::new(read_lm(&lm)?);
            let lists = decode_nbest(&net, &utts, &mut dens, k, nbest)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&lists)? + "\n"))
        }
        Command::Rescore { nbest, lm, lm_file, transcripts, order, rnn_config, lmwt, out, sweep, grid } => {
            let lists: Vec<UtteranceNbest> = read_json(&nbest)?;
            let scorer = build_scorer(lm, lm_file.as_deref(), transcripts.as_deref(), order, rnn_config.as_deref(), &lists)?;
            let rescored = match &scorer {
                Some(s) => rescore_all(&lists, s.as_ref(), lmwt)?,
                None => rescore_with_oracle(&lists, lmwt)?,
            };
            if let Some(path) = sweep {
                let mut weights = vec![0.0];
                weights.extend(grid.unwrap_or_else(lmwt_grid).into_iter().filter(|&w| w != 0.0));
                let points = match &scorer {
                    Some(s) => lmwt_sweep(&lists, s.as_ref(), &weights)?,
                    None => weights
                        .iter()
                        .map(|&w| Ok(SweepPoint { lmwt: w, error: top1_phone_error(&rescore_with_oracle(&lists, w)?)? }))
                        .collect::<Result<_>>()?,
                };
                // first minimum wins, so ties prefer the smaller weight
                let best = *points.iter().fold(&points[0], |b, p| if p.error.phone_edits < b.error.phone_edits { p } else { b });
                let report = SweepReport { baseline: points[0].error, points, best };
                fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            eprintln!(
                "{}",
                serde_json::json!({
                    "top1_accuracy": top1_accuracy(&rescored),
                    "nbest_oracle_accuracy": nbest_oracle_accuracy(&lists),
                    "phone_error": top1_phone_error(&rescored)?.phone_error,
                })
            );
            emit(out.as_deref(), &(serde_json::to_string_pretty(&rescored)? + "\n"))
        }
        Command::Inspect { model, net_config, preset, lm, frames, graph_out } => {
            inspect(model.as_deref(), net_config.as_deref(), preset, lm.as_deref(), frames, graph_out.as_deref())
        }
        Command::Curves { history, sweep, out } => {
            let csv = match (history, sweep) {
                (Some(h), _) => history_csv(&fs::read_to_string(&h).with_context(|| format!("reading {}", h.display()))?)?,
                (None, Some(s)) => sweep_csv(&read_json(&s)?),
                (None, None) => unreachable!("clap requires one input"),
            };
            emit(out.as_deref(), &csv)
        }
    }
}

fn gradcheck(seed: u64, seeds: u64) -> Result<()> {
    if seeds == 0 {
        bail!("--seeds must be positive");
    }
    let results = run_gradient_suite(seed, seeds);
    let mut out = String::new();
    for r in &results {
        out += &to_json_line(&serde_json::json!({
            "case": r.name,
            "max_rel_err": r.max_rel_err,
            "tol": r.tol,
            "checked": r.checked,
            "excluded": r.excluded,
            "failed_seeds": r.failed_seeds,
            "pass": r.pass(),
        }));
    }
    emit(None, &out)?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        bail!("gradient check failed: {}", failed.join(", "))
    }
}

fn gen(config: Option<PathBuf>, seed: Option<u64>, count: usize, out: &Path, split: Option<usize>, test_out: Option<PathBuf>) -> Result<()> {
    let mut spec = match &config {
        Some(p) => read_json::<GeneratorSpec>(p)?,
        None => GeneratorSpec::desk(seed.unwrap_or(1)),
    };
    spec.seed = seed.unwrap_or(spec.seed);
    let mut utts = generate_corpus(&spec, count)?;
    if let (Some(n), Some(test_path)) = (split, test_out) {
        if n > utts.len() {
            bail!("--split {n} exceeds --count {count}");
        }
        let test = utts.split_off(n);
        save_corpus(&test_path, &test, Some(&spec))?;
    }
    save_corpus(out, &utts, Some(&spec))?;
    Ok(())
}

fn corpus_phones(utts: &[Utterance], spec: Option<&GeneratorSpec>) -> u32 {
    spec.map_or_else(|| utts.iter().flat_map(|u| u.phones.iter().copied()).max().map_or(1, |m| m + 1), |s| s.num_phones)
}

fn train(corpus: &Path, out: &Path, net_config: Option<&Path>, tc: &TrainConfig, lm_out: Option<&Path>, history: Option<&Path>) -> Result<()> {
    let (utts, spec) = load_utts(corpus)?;
    let first = utts.first().ok_or_else(|| anyhow!("corpus {} is empty", corpus.display()))?;
    let cfg = match net_config {
        Some(p) => read_json::<NetworkConfig>(p)?,
        None => {
            let mut c = NetworkConfig::desk(first.features.cols(), num_pdfs(corpus_phones(&utts, spec.as_ref())));
            c.l2_coefficient = tc.l2_coefficient;
            c
        }
    };
    cfg.validate()?;
    let net = Network::new(&cfg, tc.seed)?;
    let mut log = match history {
        Some(p) => Some(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => None,
    };
    let mut write_err = None;
    let outcome = train_network(net, &utts, tc, |r| {
        let line = history_ndjson(std::slice::from_ref(r));
        eprint!("{line}");
        if let Some(f) = log.as_mut() {
            if let Err(e) = f.write_all(line.as_bytes()) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing history");
    }
    save_checkpoint(&outcome.network, out)?;
    if let Some(p) = lm_out {
        fs::write(p, outcome.lm.to_json() + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn build_scorer(
    kind: LmKind,
    lm_file: Option<&Path>,
    transcripts: Option<&Path>,
    order: usize,
    rnn_config: Option<&Path>,
    lists: &[UtteranceNbest],
) -> Result<Option<Box<dyn LmScorer>>> {
    let load_transcripts = || -> Result<(Vec<Vec<u32>>, u32)> {
        let path = transcripts.ok_or_else(|| anyhow!("--transcripts is required for this LM"))?;
        let (utts, spec) = load_utts(path)?;
        let mut v = corpus_phones(&utts, spec.as_ref());
        // the n-best lists may mention phones the corpus never uses
        let seen = lists.iter().flat_map(|l| l.hypotheses.iter().flat_map(|h| h.phones.iter())).max();
        v = v.max(seen.map_or(0, |m| m + 1));
        Ok((utts.into_iter().map(|u| u.phones).collect(), v))
    };
    Ok(match kind {
        LmKind::Oracle => None,
        LmKind::Ngram => Some(Box::new(NGramLm(match lm_file {
            Some(p) => read_lm(p)?,
            None => {
                let (t, v) = load_transcripts()?;
                PhoneLm::estimate(&t, v, order, DEFAULT_ADD_K)?
            }
        }))),
        LmKind::Rnn => {
            let cfg: RnnLmConfig = rnn_config.map(read_json).transpose()?.unwrap_or_default();
            let (t, v) = load_transcripts()?;
            Some(Box::new(train_tiny_rnnlm(&t, v, &cfg)?))
        }
    })
}

fn inspect(
    model: Option<&Path>,
    net_config: Option<&Path>,
    preset: Option<PresetKind>,
    lm: Option<&Path>,
    frames: Option<usize>,
    graph_out: Option<&Path>,
) -> Result<()> {
    let describe = |cfg: &NetworkConfig| {
        let (past, future) = cfg.receptive_field();
        serde_json::json!({
            "config": cfg,
            "param_count": cfg.param_count(),
            "receptive_field": { "past": past, "future": future },
            "config_hash": cfg.hash(),
        })
    };
    let mut out = Vec::new();
    if let Some(p) = model {
        let net = load_model(p)?;
        out.push(describe(&net.cfg));
    }
    if let Some(p) = net_config {
        let cfg: NetworkConfig = read_json(p)?;
        cfg.validate()?;
        out.push(describe(&cfg));
    }
    if let Some(k) = preset {
        out.push(describe(&match k {
            PresetKind::Desk => NetworkConfig::desk(8, 10),
            PresetKind::Paper => NetworkConfig::paper(40, 10),
        }));
    }
    if let Some(p) = lm {
        let lm = read_lm(p)?;
        let mut v = serde_json::json!({
            "order": lm.order(),
            "num_phones": lm.num_phones(),
            "end_of_sentence": lm.has_end_of_sentence(),
            "histories": lm.reachable_histories().len(),
        });
        if let Some(t) = frames {
            let g = build_denominator_graph(&lm, t)?;
            v["denominator"] = serde_json::json!({ "frames": t, "states": g.num_states, "arcs": g.arcs.len() });
            if let Some(path) = graph_out {
                fs::write(path, g.to_text()).with_context(|| format!("writing {}", path.display()))?;
            }
        } else if graph_out.is_some() {
            bail!("--graph-out needs --frames");
        }
        out.push(v);
    }
    if out.is_empty() {
        bail!("nothing to inspect: pass --model, --net-config, --preset or --lm");
    }
    emit(None, &out.iter().map(to_json_line).collect::<String>())
}

fn history_csv(text: &str) -> Result<String> {
    let mut csv = String::from("epoch,joint,lfmmi,ce,l2,frame_accuracy,learning_rate,frames,skipped\n");
    for r in parse_history(text)? {
        csv += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch, r.joint, r.lfmmi, r.ce, r.l2, r.frame_accuracy, r.learning_rate, r.frames, r.skipped
        );
    }
    Ok(csv)
}

fn sweep_csv(report: &SweepReport) -> String {
    let mut csv = String::from("lmwt,phone_error,phone_edits,ref_phones\n");
    for p in &report.points {
        csv += &format!("{},{},{},{}\n", p.lmwt, p.error.phone_error, p.error.phone_edits, p.error.ref_phones);
    }
    csv
}
