use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use posekit::autoencoder::{format_loss_log, AutoencoderConfig, PoseAutoencoder};
use posekit::bench::{run_bench, BenchConfig};
use posekit::bundle::{
    load_autoencoder, load_solver_set, save_autoencoder, save_solver, weight_footprint,
};
use posekit::dataset::{DatasetOptions, PoseDataset};
use posekit::fabrik::{fabrik_solve_fullbody, FabrikConfig};
use posekit::geom::Vec3;
use posekit::ingest::ingest_dir;
use posekit::skeleton::{
    canonical_topology, JointMapping, Pose, RetargetOptions, JOINT_COUNT, JOINT_NAMES,
};
use posekit::solver::{
    solver_file_stem, train_solver, SolverConfig, TargetSpec, ANKLES, HANDS, HEAD, STANDARD_SETS,
};
use posekit::synth::{write_corpus, ClipOptions};
use posekit_service::{bind, serve, PoseService, WS_PATH};

use crate::posefile::{format_pose, parse_pose};
use crate::settings::Settings;
use crate::{Command, SolveMethod};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            clips,
            frames,
            jitter,
            seed,
        } => synth(&out, clips, frames, jitter, seed),
        Command::Ingest {
            input,
            mapping,
            out,
            seed,
            config,
        } => ingest(
            &input,
            &mapping,
            &out,
            seed,
            Settings::load(config.as_deref())?,
        ),
        Command::TrainAe {
            dataset,
            out,
            seed,
            config,
        } => train_ae(&dataset, &out, seed, Settings::load(config.as_deref())?),
        Command::TrainSolver {
            dataset,
            models,
            joints,
            out,
            seed,
            config,
        } => train_solvers(
            &dataset,
            &models,
            &joints,
            out.as_deref().unwrap_or(&models),
            seed,
            Settings::load(config.as_deref())?,
        ),
        Command::Solve {
            models,
            pose,
            targets,
            method,
            post_process,
            out,
            config,
        } => solve(
            &models,
            pose.as_deref(),
            &targets,
            method,
            post_process,
            out.as_deref(),
            Settings::load(config.as_deref())?,
        ),
        Command::Bench {
            models,
            dataset,
            iterations,
            repeats,
            seed,
            out,
            config,
        } => bench(
            &models,
            &dataset,
            iterations,
            repeats,
            seed,
            out.as_deref(),
            Settings::load(config.as_deref())?,
        ),
        Command::Serve {
            models,
            bind,
            port,
            config,
        } => serve_models(
            &models,
            (bind, port).into(),
            Settings::load(config.as_deref())?,
        ),
    }
}

/// A joint by canonical name or index.
pub fn parse_joint(s: &str) -> Result<usize> {
    let s = s.trim();
    if let Ok(i) = s.parse::<usize>() {
        ensure!(i < JOINT_COUNT, "joint index {i} out of range");
        return Ok(i);
    }
    canonical_topology().joint_index(s).ok_or_else(|| {
        anyhow!(
            "unknown joint `{s}` (expected one of {})",
            JOINT_NAMES.join(", ")
        )
    })
}

/// `hands`, `ankles`, `head`, `standard` or a comma-separated joint list.
pub fn parse_joint_set(s: &str) -> Result<Vec<Vec<usize>>> {
    Ok(match s.trim().to_ascii_lowercase().as_str() {
        "hands" => vec![HANDS.to_vec()],
        "ankles" => vec![ANKLES.to_vec()],
        "head" => vec![HEAD.to_vec()],
        "standard" => STANDARD_SETS.iter().map(|s| s.to_vec()).collect(),
        _ => {
            let mut joints = s.split(',').map(parse_joint).collect::<Result<Vec<_>>>()?;
            joints.sort_unstable();
            vec![joints]
        }
    })
}

/// `Joint=x,y,z`.
pub fn parse_target(s: &str) -> Result<(usize, Vec3)> {
    let (joint, coords) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("target `{s}`: expected Joint=x,y,z"))?;
    let c = coords
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("target `{s}`"))?;
    ensure!(c.len() == 3, "target `{s}`: expected three coordinates");
    ensure!(
        c.iter().all(|v| v.is_finite()),
        "target `{s}`: non-finite coordinate"
    );
    Ok((parse_joint(joint)?, Vec3::new(c[0], c[1], c[2])))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<PoseDataset> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    PoseDataset::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn fabrik_settings(settings: &mut Settings) -> Result<FabrikConfig> {
    let mut f = FabrikConfig::default();
    settings.take("tolerance", &mut f.tolerance)?;
    settings.take("max_iterations", &mut f.max_iterations)?;
    Ok(f)
}

fn synth(out: &Path, clips: usize, frames: usize, jitter: bool, seed: u64) -> Result<()> {
    ensure!(frames >= 2, "clips need at least two frames");
    let options = ClipOptions {
        frames,
        jitter,
        ..Default::default()
    };
    let paths = write_corpus(out, clips, options, seed)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {} clips of {frames} frames and cmu.map to {}",
        paths.len(),
        out.display()
    );
    Ok(())
}

fn ingest(
    input: &Path,
    mapping: &Path,
    out: &Path,
    seed: Option<u64>,
    mut settings: Settings,
) -> Result<()> {
    let mut options = DatasetOptions::default();
    let mut retarget = RetargetOptions::default();
    settings.take("validation_fraction", &mut options.validation_fraction)?;
    settings.take("jitter_threshold", &mut options.jitter_threshold)?;
    settings.take("remove_heading", &mut retarget.remove_heading)?;
    settings.take("seed", &mut options.seed)?;
    settings.finish()?;
    if let Some(s) = seed {
        options.seed = s;
    }

    let text =
        fs::read_to_string(mapping).with_context(|| format!("reading {}", mapping.display()))?;
    let mapping =
        JointMapping::parse(&text).with_context(|| format!("in {}", mapping.display()))?;
    let report = match ingest_dir(input, &mapping, retarget) {
        Ok(r) => r,
        Err(posekit::ingest::IngestError::NothingParsed(failures)) => {
            for f in &failures {
                eprintln!("skipped {}: {}", f.path.display(), f.message);
            }
            bail!(
                "none of the {} files in {} could be ingested",
                failures.len(),
                input.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    for f in &report.failures {
        eprintln!("skipped {}: {}", f.path.display(), f.message);
    }
    let (dataset, summary) = PoseDataset::build(report.clips, options)?;
    write_file(out, &dataset.to_bytes())?;
    println!(
        "poses {}  clips {}  dropped_jittery {}  failed_files {}",
        summary.poses,
        summary.clips,
        summary.dropped_jittery,
        report.failures.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn train_ae(dataset: &Path, out: &Path, seed: Option<u64>, mut settings: Settings) -> Result<()> {
    let mut c = AutoencoderConfig::default();
    settings.take("epochs", &mut c.epochs)?;
    settings.take("batch_size", &mut c.batch_size)?;
    settings.take("learning_rate", &mut c.learning_rate)?;
    settings.take("latent_dim", &mut c.latent_dim)?;
    settings.take("hidden_width", &mut c.hidden_width)?;
    settings.take("hidden_layers", &mut c.hidden_layers)?;
    settings.take("tied", &mut c.tied)?;
    settings.take("seed", &mut c.seed)?;
    settings.finish()?;
    if let Some(s) = seed {
        c.seed = s;
    }
    println!(
        "autoencoder: epochs={} batch_size={} learning_rate={} latent_dim={} hidden_width={} hidden_layers={} tied={} seed={}",
        c.epochs, c.batch_size, c.learning_rate, c.latent_dim, c.hidden_width, c.hidden_layers, c.tied, c.seed
    );

    let data = load_dataset(dataset)?;
    let mut ae = PoseAutoencoder::new(&c);
    let history = ae.train(&data, &c, |e| {
        let val = e
            .validation
            .map_or_else(|| "-".into(), |v| format!("{v:.6}"));
        println!(
            "epoch {:>3}  train {:.6}  validation {val}",
            e.epoch, e.train
        );
    })?;
    save_autoencoder(out, &ae, &data.stats)?;
    write_file(
        &out.join("ae_loss.tsv"),
        format_loss_log(&history).as_bytes(),
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

fn train_solvers(
    dataset: &Path,
    models: &Path,
    joints: &str,
    out: &Path,
    seed: Option<u64>,
    mut settings: Settings,
) -> Result<()> {
    let sets = parse_joint_set(joints)?;
    let mut c = SolverConfig::default();
    settings.take("epochs", &mut c.epochs)?;
    settings.take("batch_size", &mut c.batch_size)?;
    settings.take("learning_rate", &mut c.learning_rate)?;
    settings.take("k", &mut c.k)?;
    settings.take("hidden_width", &mut c.hidden_width)?;
    settings.take("hidden_layers", &mut c.hidden_layers)?;
    settings.take("normalize_targets", &mut c.normalize_targets)?;
    settings.take("validation_pairs", &mut c.validation_pairs)?;
    settings.take("seed", &mut c.seed)?;
    settings.finish()?;
    if let Some(s) = seed {
        c.seed = s;
    }
    println!(
        "solver: epochs={} batch_size={} learning_rate={} k={} hidden_width={} hidden_layers={} normalize_targets={} seed={}",
        c.epochs, c.batch_size, c.learning_rate, c.k, c.hidden_width, c.hidden_layers, c.normalize_targets, c.seed
    );

    let (ae, stats) = load_autoencoder(models).context("a trained autoencoder is required")?;
    let data = load_dataset(dataset)?;
    ensure!(
        data.stats.hash_hex() == stats.hash_hex(),
        "{} was not built from the dataset the autoencoder in {} was trained on",
        dataset.display(),
        models.display()
    );
    for joints in sets {
        let stem = solver_file_stem(&joints);
        println!("training {stem}");
        let (solver, history) = train_solver(&data, &ae, &joints, &c, |e| {
            let val = e
                .validation
                .map_or_else(|| "-".into(), |v| format!("{v:.6}"));
            println!(
                "epoch {:>3}  train {:.6}  validation {val}",
                e.epoch, e.train
            );
        })?;
        save_solver(out, &solver)?;
        write_file(
            &out.join(format!("{stem}_loss.tsv")),
            format_loss_log(&history).as_bytes(),
        )?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Groups joint targets into one spec per catalog joint set, ordered by each
/// set's first appearance on the command line.
fn group_targets(catalog: &[Vec<usize>], targets: &[(usize, Vec3)]) -> Result<Vec<TargetSpec>> {
    let mut order: Vec<usize> = Vec::new();
    for &(j, _) in targets {
        let set = catalog
            .iter()
            .position(|s| s.contains(&j))
            .ok_or_else(|| anyhow!("no trained solver drives {}", JOINT_NAMES[j]))?;
        if !order.contains(&set) {
            order.push(set);
        }
    }
    order
        .into_iter()
        .map(|i| {
            let joints = &catalog[i];
            let positions = joints
                .iter()
                .map(|j| {
                    targets
                        .iter()
                        .find(|(t, _)| t == j)
                        .map(|&(_, p)| p)
                        .ok_or_else(|| {
                            anyhow!(
                                "the solver for this joint set also needs a target for {}",
                                JOINT_NAMES[*j]
                            )
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TargetSpec::new(joints.clone(), positions)?)
        })
        .collect()
}

fn solve(
    models: &Path,
    pose: Option<&Path>,
    targets: &[String],
    method: SolveMethod,
    post_process: bool,
    out: Option<&Path>,
    mut settings: Settings,
) -> Result<()> {
    let fabrik = fabrik_settings(&mut settings)?;
    settings.finish()?;
    let set = load_solver_set(models)?;
    let start: Pose = match pose {
        Some(p) => {
            parse_pose(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("in {}", p.display()))?
        }
        None => set.stats.mean_pose(),
    };
    let targets = targets
        .iter()
        .map(|t| parse_target(t))
        .collect::<Result<Vec<_>>>()?;
    for (i, (j, _)) in targets.iter().enumerate() {
        ensure!(
            !targets[..i].iter().any(|(k, _)| k == j),
            "{} is targeted twice",
            JOINT_NAMES[*j]
        );
    }
    let solved = match method {
        SolveMethod::Neural => set.compose(
            &start,
            &group_targets(&set.catalog(), &targets)?,
            post_process,
        )?,
        SolveMethod::Fabrik => fabrik_solve_fullbody(&start, &targets, &fabrik)?.pose,
    };
    for (j, t) in &targets {
        eprintln!(
            "{:<14} residual {:.6} m",
            JOINT_NAMES[*j],
            solved.joint(*j).distance(*t)
        );
    }
    let text = format_pose(&solved);
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing stdout"),
    }
}

fn bench(
    models: &Path,
    dataset: &Path,
    iterations: Option<usize>,
    repeats: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
    mut settings: Settings,
) -> Result<()> {
    let mut c = BenchConfig {
        fabrik: fabrik_settings(&mut settings)?,
        ..Default::default()
    };
    settings.take("iterations", &mut c.iterations)?;
    settings.take("repeats", &mut c.repeats)?;
    settings.take("independence_cases", &mut c.independence_cases)?;
    settings.take("independence_reps", &mut c.independence_reps)?;
    settings.take("seed", &mut c.seed)?;
    settings.finish()?;
    c.iterations = iterations.unwrap_or(c.iterations);
    c.repeats = repeats.unwrap_or(c.repeats);
    c.seed = seed.unwrap_or(c.seed);

    let set = load_solver_set(models)?;
    let data = load_dataset(dataset)?;
    let kb =
        |sets: &[&[usize]]| -> Result<f64> { Ok(weight_footprint(models, sets)? as f64 / 1000.0) };
    let footprints = (kb(&[&HANDS])?, kb(&STANDARD_SETS)?);
    let report = run_bench(&set, &data, footprints, &c)?;
    print!("{}", report.to_table());
    match out {
        Some(p) => {
            write_file(p, report.to_tsv().as_bytes())?;
            println!("wrote {}", p.display());
        }
        None => print!("\n{}", report.to_tsv()),
    }
    Ok(())
}

fn serve_models(models: &Path, addr: std::net::SocketAddr, mut settings: Settings) -> Result<()> {
    let fabrik = fabrik_settings(&mut settings)?;
    settings.finish()?;
    let service = Arc::new(PoseService::new(load_solver_set(models)?, fabrik));
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(async move {
        let (listener, local) = bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on ws://{local}{WS_PATH}");
        serve(listener, service).await.context("serving")
    })
}
