use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use lgrpool::diff::{FaultInjection, Tape};
use lgrpool::graph::{parse_tu_dataset, split_dataset, GraphDataset, SplitSpec};
use lgrpool::model::ModelParams;
use lgrpool::pooling::hierarchical_pool;
use lgrpool::propagation::propagate_graph;
use lgrpool::selfcheck::gradient_suite;
use lgrpool::training::{ablation_csv, evaluate, mean_std, run_seed, AblationRow, Checkpoint, TrainingConfig};

use crate::manifest::{input_hash, DatasetRef, RunManifest};
use crate::{AblateArgs, EvalArgs, GradcheckArgs, InspectArgs, RunArgs, TrainArgs};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_NON_FINITE: u8 = 2;
pub const EXIT_GRADCHECK: u8 = 3;

pub fn exit_code_for(e: &anyhow::Error) -> ExitCode {
    let non_finite = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<lgrpool::Error>(), Some(lgrpool::Error::NonFinite(_))));
    ExitCode::from(if non_finite { EXIT_NON_FINITE } else { EXIT_FAILURE })
}

/// An existing directory as given, else the same name under `$LGRPOOL_DATA`.
pub fn resolve_dataset(arg: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(arg);
    if direct.is_dir() {
        return Ok(direct);
    }
    if let Some(root) = env::var_os("LGRPOOL_DATA") {
        let under = PathBuf::from(root).join(arg);
        if under.is_dir() {
            return Ok(under);
        }
        bail!("dataset directory not found: {} (also tried {})", direct.display(), under.display());
    }
    bail!("dataset directory not found: {} (LGRPOOL_DATA is not set)", direct.display())
}

fn load_dataset(arg: &str) -> Result<(GraphDataset, PathBuf)> {
    let dir = resolve_dataset(arg)?;
    let name = dir
        .canonicalize()
        .unwrap_or_else(|_| dir.clone())
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| anyhow!("cannot derive a dataset name from {}", dir.display()))?;
    let ds = parse_tu_dataset(&dir, &name)?;
    Ok((ds, dir))
}

/// Built-in profile or config file, then `KEY=VALUE` overrides.
pub fn load_config(arg: &str, overrides: &[String]) -> Result<TrainingConfig> {
    let mut cfg = match TrainingConfig::profile(arg) {
        Some(cfg) => cfg,
        None => {
            let text = fs::read_to_string(arg).with_context(|| format!("reading config file {arg}"))?;
            TrainingConfig::parse(&text).with_context(|| format!("in config file {arg}"))?
        }
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{o}` is not KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `A..B` (inclusive) or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("bad seed range start in `{s}`"))?;
        let b: u64 = b.trim().parse().with_context(|| format!("bad seed range end in `{s}`"))?;
        if b < a {
            bail!("empty seed range `{s}`");
        }
        Ok((a..=b).collect())
    } else {
        Ok(vec![s.parse().with_context(|| format!("bad seed `{s}`"))?])
    }
}

pub fn parse_gammas(s: &str) -> Result<Vec<f64>> {
    let gammas = s
        .split(',')
        .map(|t| {
            let g: f64 = t.trim().parse().with_context(|| format!("bad gamma `{}`", t.trim()))?;
            if !(g.is_finite() && g >= 0.0) {
                bail!("gamma `{}` must be finite and >= 0", t.trim());
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    if gammas.is_empty() {
        bail!("gamma list is empty");
    }
    Ok(gammas)
}

/// Runs `f` on every item with up to `jobs` threads; results keep item order.
fn run_parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no poisoned lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

fn prepare_manifest(command: &str, run: &RunArgs, dataset_dir: &Path, ds: &GraphDataset, cfg: &TrainingConfig, seeds: &[u64], extra: BTreeMap<String, String>) -> Result<RunManifest> {
    let hash = input_hash(command, dataset_dir, &cfg.to_text(), seeds, &extra)?;
    let mut manifest = RunManifest {
        command: command.to_string(),
        config: cfg.to_map(),
        dataset: DatasetRef {
            name: ds.name.clone(),
            path: dataset_dir.to_path_buf(),
        },
        seeds: seeds.to_vec(),
        extra,
        input_hash: hash,
        out_dir: PathBuf::new(),
    };
    manifest.out_dir = run.out.clone().unwrap_or_else(|| manifest.default_out_dir());
    Ok(manifest)
}

#[derive(Debug, Serialize)]
struct SeedResult {
    seed: u64,
    test_acc: f64,
    best_round: Option<usize>,
    em_rounds: usize,
}

#[derive(Debug, Serialize)]
struct Summary {
    dataset: String,
    mean_acc: f64,
    std_acc: f64,
    per_seed: Vec<SeedResult>,
}

impl Summary {
    fn new(dataset: &str, per_seed: Vec<SeedResult>) -> Self {
        let accs: Vec<f64> = per_seed.iter().map(|r| r.test_acc).collect();
        let (mean_acc, std_acc) = mean_std(&accs);
        Summary {
            dataset: dataset.to_string(),
            mean_acc,
            std_acc,
            per_seed,
        }
    }
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn train(args: &TrainArgs) -> Result<ExitCode> {
    let run = &args.run;
    let (ds, dir) = load_dataset(&run.dataset)?;
    let cfg = load_config(&run.config, &run.overrides)?;
    let seeds = parse_seeds(&run.seeds)?;
    let manifest = prepare_manifest("train", run, &dir, &ds, &cfg, &seeds, BTreeMap::new())?;
    let out = manifest.out_dir.clone();

    if args.eval_only {
        return eval_only(&ds, &out, &seeds);
    }
    manifest.write()?;

    let per_seed = run_parallel(&seeds, run.jobs, |&seed| {
        let cfg = TrainingConfig { seed, ..cfg.clone() };
        let model = run_seed(&ds, &cfg).with_context(|| format!("seed {seed}"))?;
        let dir = seed_dir(&out, seed);
        fs::create_dir_all(&dir)?;
        Checkpoint::new(&cfg, &model.params, &model.optimizer).save(&dir.join("checkpoint.json"))?;
        fs::write(dir.join("metrics.csv"), model.metrics.to_csv())?;
        write_json(&dir.join("metrics.json"), &model.metrics)?;
        let test_acc = model.metrics.test_accuracy.expect("run_seed scores the test split");
        eprintln!("seed {seed}: test accuracy {test_acc:.4} ({:.1}s)", model.metrics.wall_clock_secs);
        Ok(SeedResult {
            seed,
            test_acc,
            best_round: model.metrics.best_round,
            em_rounds: model.metrics.em_rounds(),
        })
    })?;

    let summary = Summary::new(&ds.name, per_seed);
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn eval_only(ds: &GraphDataset, out: &Path, seeds: &[u64]) -> Result<ExitCode> {
    let per_seed = seeds
        .iter()
        .map(|&seed| {
            let path = seed_dir(out, seed).join("checkpoint.json");
            let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let cfg = ck.config()?;
            let params = ck.params()?;
            let (_, _, test) = split_dataset(ds, &SplitSpec::new(cfg.seed))?;
            Ok(SeedResult {
                seed,
                test_acc: evaluate(&params, &test, &cfg)?,
                best_round: None,
                em_rounds: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = Summary::new(&ds.name, per_seed);
    write_json(&out.join("summary_eval.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: &EvalArgs) -> Result<ExitCode> {
    let (ds, _) = load_dataset(&args.dataset)?;
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let cfg = ck.config()?;
    let params = ck.params()?;
    let (train, val, test) = split_dataset(&ds, &SplitSpec::new(cfg.seed))?;
    let target = match args.split.as_str() {
        "train" => train,
        "val" => val,
        "test" => test,
        "all" => ds,
        other => bail!("unknown split `{other}` (expected train, val, test or all)"),
    };
    let acc = evaluate(&params, &target, &cfg)?;
    println!(
        "{}",
        serde_json::json!({ "split": args.split, "seed": cfg.seed, "graphs": target.len(), "accuracy": acc })
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let fault = match args.inject_fault.as_deref() {
        None => FaultInjection::None,
        Some("sigmoid") => FaultInjection::SigmoidDerivative,
        Some(other) => bail!("unknown fault `{other}`"),
    };
    let entries = gradient_suite(args.eps, fault, args.seed)?;
    let mut failed = Vec::new();
    for e in &entries {
        let ok = e.report.max_relative_error <= args.tol;
        println!(
            "{:<20} {:>12.3e} {}",
            e.target,
            e.report.max_relative_error,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(format!("{}: {}", e.target, e.report.offenders(args.tol).join(", ")));
        }
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed (tolerance {:e}):", args.tol);
        for f in failed {
            eprintln!("  {f}");
        }
        Ok(ExitCode::from(EXIT_GRADCHECK))
    }
}

pub fn ablate(args: &AblateArgs) -> Result<ExitCode> {
    let run = &args.run;
    let gammas = parse_gammas(&args.gamma)?;
    let (ds, dir) = load_dataset(&run.dataset)?;
    let cfg = load_config(&run.config, &run.overrides)?;
    let seeds = parse_seeds(&run.seeds)?;
    let extra = BTreeMap::from([("gammas".to_string(), format!("{gammas:?}"))]);
    let manifest = prepare_manifest("ablate", run, &dir, &ds, &cfg, &seeds, extra)?;
    manifest.write()?;

    let jobs: Vec<(f64, u64)> = gammas.iter().flat_map(|&g| seeds.iter().map(move |&s| (g, s))).collect();
    let accs = run_parallel(&jobs, run.jobs, |&(gamma, seed)| {
        let cfg = TrainingConfig { gamma, seed, ..cfg.clone() };
        let model = run_seed(&ds, &cfg).with_context(|| format!("gamma {gamma}, seed {seed}"))?;
        let acc = model.metrics.test_accuracy.expect("run_seed scores the test split");
        eprintln!("gamma {gamma} seed {seed}: test accuracy {acc:.4}");
        Ok(acc)
    })?;
    let rows: Vec<AblationRow> = gammas
        .iter()
        .zip(accs.chunks(seeds.len()))
        .map(|(&gamma, a)| {
            let (mean, std) = mean_std(a);
            AblationRow {
                gamma,
                accuracies: a.to_vec(),
                mean,
                std,
            }
        })
        .collect();
    let csv = ablation_csv(&rows);
    fs::write(manifest.out_dir.join("gamma_ablation.csv"), &csv)?;
    write_json(&manifest.out_dir.join("gamma_ablation.json"), &rows)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

pub fn inspect(args: &InspectArgs) -> Result<ExitCode> {
    let (ds, _) = load_dataset(&args.dataset)?;
    let mut out = serde_json::to_value(ds.summary())?;
    if args.trace {
        let idx = args.graph.expect("clap enforces --graph with --trace");
        let graph = ds
            .graphs
            .get(idx)
            .ok_or_else(|| anyhow!("graph index {idx} out of range (dataset has {})", ds.len()))?;
        let cfg = load_config(&args.config, &[])?;
        let params = ModelParams::init(ds.feature_dim, ds.num_classes, &cfg);
        let mut tape = Tape::new();
        let prop = params.propagation.bind_frozen(&mut tape);
        let pool = params.pooling.bind_frozen(&mut tape);
        let z = propagate_graph(&mut tape, graph, &prop, cfg.alpha, cfg.k)?.z_pre;
        let trace = hierarchical_pool(&mut tape, graph, z, &pool, cfg.s_thre)?;
        out["graph"] = idx.into();
        out["trace"] = serde_json::to_value(trace.summary())?;
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..9").unwrap(), (0..=9).collect::<Vec<_>>());
        assert_eq!(parse_seeds("3").unwrap(), vec![3]);
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("a..2").is_err());
    }

    #[test]
    fn gamma_syntax() {
        assert_eq!(parse_gammas("0.10,0.15, 0.2").unwrap(), vec![0.1, 0.15, 0.2]);
        assert!(parse_gammas("0.1,x").is_err());
        assert!(parse_gammas("0.1,").is_err());
        assert!(parse_gammas("-1").is_err());
    }

    #[test]
    fn parallel_keeps_order() {
        let items: Vec<u64> = (0..7).collect();
        let out = run_parallel(&items, 3, |&x| Ok(x * x)).unwrap();
        assert_eq!(out, vec![0, 1, 4, 9, 16, 25, 36]);
    }

    #[test]
    fn overrides_apply() {
        let cfg = load_config("desk", &["gamma=0.3".into(), "epochs = 2".into()]).unwrap();
        assert_eq!((cfg.gamma, cfg.epochs), (0.3, 2));
        assert!(load_config("desk", &["gamma".into()]).is_err());
        assert!(load_config("no/such/file.cfg", &[]).is_err());
    }
}
