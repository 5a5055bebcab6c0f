use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agmn_core::bp::{infer as run_infer, unary_only, BeliefResult, InferOptions, KernelMode};
use agmn_core::metrics::{cells_to_keypoints, default_sigmas, pck};
use agmn_core::oracle::{equivalence_trials, EnumerationBudget, TrialConfig};
use agmn_core::potentials::{make_kernel_targets, make_unary_targets};
use agmn_core::synth::{generate_dataset, resolve, CorruptionConfig, Manifest, MANIFEST_FILE};
use agmn_core::tensor_io::{read_tensor, write_tensor, Dtype};
use agmn_core::{build_schedule, default_hand_tree, KeypointSet, TreeGraph};
use anyhow::{anyhow, Context};
use log::info;
use rayon::prelude::*;

use crate::predictions::{PredictionFile, SamplePrediction};
use crate::{usage, CheckArgs, EvalArgs, Failure, InferArgs, SynthArgs, TargetsArgs};

type CmdResult = Result<ExitCode, Failure>;

const PREDICTIONS_FILE: &str = "predictions.json";

fn load_graph(path: Option<&Path>) -> anyhow::Result<TreeGraph> {
    match path {
        Some(p) => Ok(TreeGraph::from_json_file(p)?),
        None => Ok(default_hand_tree()),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let cfg = CorruptionConfig {
        occluded_fraction: a.occlusion,
        distractor_peaks: a.distractors,
        noise_amplitude: a.noise,
        peak_sigma: a.peak_sigma,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    generate_dataset(a.n, &cfg, &a.out, a.dtype.into())?;
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(ExitCode::SUCCESS)
}

struct Job {
    id: String,
    unary: PathBuf,
    kernels: Option<PathBuf>,
}

fn run_job(job: &Job, graph: &TreeGraph, a: &InferArgs, options: InferOptions) -> anyhow::Result<BeliefResult> {
    let unary = read_tensor(&job.unary).with_context(|| format!("sample {}", job.id))?;
    Ok(if a.unary_only {
        unary_only(&unary)?
    } else {
        let path = job.kernels.as_ref().context("kernels are required unless --unary-only is given")?;
        let kernels = read_tensor(path).with_context(|| format!("sample {}", job.id))?;
        run_infer(&unary, &kernels, graph, options).with_context(|| format!("sample {}", job.id))?
    })
}

pub fn infer(a: InferArgs) -> CmdResult {
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    if a.unary.is_some() && a.kernels.is_none() && !a.unary_only {
        return Err(usage("--kernels is required unless --unary-only is given"));
    }
    let graph = load_graph(a.graph.as_deref())?;
    let options = InferOptions {
        kernel_mode: if a.shared_kernels { KernelMode::Shared } else { KernelMode::Directed },
        conv: a.conv.into(),
    };
    let jobs: Vec<Job> = match (&a.unary, &a.manifest) {
        (Some(u), _) => vec![Job {
            id: u.file_stem().map_or("sample".into(), |s| s.to_string_lossy().into_owned()),
            unary: u.clone(),
            kernels: a.kernels.clone(),
        }],
        (None, Some(m)) => {
            let manifest = Manifest::load(m)?;
            manifest
                .samples
                .iter()
                .enumerate()
                .map(|(i, e)| Job {
                    id: format!("sample_{i:05}"),
                    unary: resolve(m, &e.unary),
                    kernels: Some(resolve(m, &e.kernels)),
                })
                .collect()
        }
        (None, None) => return Err(usage("either --unary or --manifest is required")),
    };

    let results: Vec<BeliefResult> = if a.jobs == 1 {
        jobs.iter().map(|j| run_job(j, &graph, &a, options)).collect::<anyhow::Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
        pool.install(|| jobs.par_iter().map(|j| run_job(j, &graph, &a, options)).collect::<anyhow::Result<_>>())?
    };

    create_dir(&a.out)?;
    let single = a.manifest.is_none();
    let mut samples = Vec::with_capacity(jobs.len());
    for (job, result) in jobs.iter().zip(&results) {
        let name = if single { "marginals.agt".to_string() } else { format!("{}_marginals.agt", job.id) };
        write_tensor(a.out.join(&name), &result.marginals, Dtype::from(a.dtype))?;
        samples.push(SamplePrediction::new(job.id.clone(), name, result));
    }
    let mode = if a.unary_only { "unary-only" } else { "bp" };
    let file = PredictionFile { mode: mode.into(), samples };
    let path = a.out.join(PREDICTIONS_FILE);
    file.save(&path)?;
    info!("{} samples, mode {mode}", jobs.len());
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let sigmas = a.sigmas.clone().unwrap_or_else(default_sigmas);
    if sigmas.is_empty() || sigmas.windows(2).any(|w| w[0] > w[1]) || sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(usage("--sigmas must be nonempty, ascending and nonnegative"));
    }
    if let Some(len) = a.norm_len {
        if !(len > 0.0 && len.is_finite()) {
            return Err(usage(format!("--norm-len must be positive, got {len}")));
        }
    }
    let preds = PredictionFile::load(&a.predictions)?;
    let (gts, lens): (Vec<KeypointSet>, Vec<Option<f64>>) = match &a.manifest {
        Some(m) => {
            let manifest = Manifest::load(m)?;
            let mut gts = Vec::new();
            let mut lens = Vec::new();
            for e in &manifest.samples {
                gts.push(KeypointSet::from_json_file(resolve(m, &e.keypoints))?);
                lens.push(Some(e.norm_len));
            }
            (gts, lens)
        }
        None => {
            let gts = a.truth.iter().map(KeypointSet::from_json_file).collect::<Result<Vec<_>, _>>()?;
            let lens = gts.iter().map(|g| g.bbox_side).collect();
            (gts, lens)
        }
    };
    if gts.len() != preds.samples.len() {
        return Err(anyhow!("sample count mismatch: {} predictions, {} ground truths", preds.samples.len(), gts.len()).into());
    }
    let lens = lens
        .into_iter()
        .enumerate()
        .map(|(i, l)| a.norm_len.or(l).with_context(|| format!("sample {i} has no normalization length; pass --norm-len")))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    let pred_kp: Vec<KeypointSet> = preds.samples.iter().map(|s| cells_to_keypoints(&s.grid_cells())).collect();
    let curve = pck(&pred_kp, &gts, &lens, &sigmas)?;

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(&a.out, serde_json::to_string_pretty(&curve)? + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(csv) = &a.csv {
        let label = a.label.clone().unwrap_or_else(|| preds.mode.clone());
        fs::write(csv, curve.to_csv(&label)).with_context(|| format!("writing {}", csv.display()))?;
    }
    for (s, v) in curve.sigmas.iter().zip(&curve.pck) {
        println!("PCK@{s:.2} {:.2}", v * 100.0);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn check(a: CheckArgs) -> CmdResult {
    if a.nodes == 0 || a.grid == 0 || a.trials == 0 {
        return Err(usage("--nodes, --grid and --trials must be at least 1"));
    }
    if a.kernel % 2 == 0 {
        return Err(usage(format!("--kernel must be odd, got {}", a.kernel)));
    }
    let mut budget = EnumerationBudget::default();
    if let Some(b) = a.budget {
        budget.max_configs = b;
    }
    let cfg = TrialConfig {
        nodes: a.nodes,
        grid: a.grid,
        kernel: a.kernel,
        trials: a.trials,
        seed: a.seed,
        tolerance: a.tolerance,
        budget,
    };
    let fault = a.inject_fault;
    let report = equivalence_trials(&cfg, |p| {
        let mut marginals = agmn_core::bp::run_bp(p)?.marginals;
        if fault {
            let first = marginals.channel(0).map(|v| v * v)?;
            marginals.set_channel(0, agmn_core::grid::normalize_sum(&first)?)?;
        }
        Ok(marginals)
    });
    let report = match report {
        Ok(r) => r,
        Err(agmn_core::Error::BudgetExceeded { required, budget }) => {
            return Err(usage(format!(
                "refusing to enumerate {required} configurations ({} nodes on a {}x{} grid); budget is {budget}",
                a.nodes, a.grid, a.grid
            )))
        }
        Err(e) => return Err(e.into()),
    };
    println!("trials {}  max relative deviation {:.3e}", report.trials, report.max_deviation);
    if report.passed() {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        for seed in &report.failures {
            println!("failing seed {seed}");
        }
        println!("{} of {} trials exceeded {:e}", report.failures.len(), report.trials, a.tolerance);
        Ok(ExitCode::from(1))
    }
}

pub fn targets(a: TargetsArgs) -> CmdResult {
    if a.ksize % 2 == 0 {
        return Err(usage(format!("--ksize must be odd, got {}", a.ksize)));
    }
    if a.rows == 0 || a.cols == 0 {
        return Err(usage("--rows and --cols must be positive"));
    }
    if !(a.sigma > 0.0 && a.sigma.is_finite()) {
        return Err(usage(format!("--sigma must be positive, got {}", a.sigma)));
    }
    let kp = KeypointSet::from_json_file(&a.keypoints)?;
    let graph = load_graph(a.graph.as_deref())?;
    kp.ensure_len(graph.num_nodes)?;
    let schedule = build_schedule(&graph)?;
    let unary = make_unary_targets(&kp, a.rows, a.cols, a.sigma)?;
    let kernels = make_kernel_targets(&kp, &schedule, a.ksize, a.sigma)?;
    create_dir(&a.out)?;
    let (u, k) = (a.out.join("unary_targets.agt"), a.out.join("kernel_targets.agt"));
    write_tensor(&u, &unary, a.dtype.into())?;
    write_tensor(&k, &kernels, a.dtype.into())?;
    println!("{}\n{}", u.display(), k.display());
    Ok(ExitCode::SUCCESS)
}
