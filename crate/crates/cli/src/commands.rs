use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::json;

use v2x_core::evalkit::{
    ablation_suite, ablation_table, constant_velocity_baseline, robustness_suite, robustness_table, sweep_bandwidth,
    sweep_table, AblationSetup, Table, EGO_RADIUS,
};
use v2x_core::flops::{counted_flops, dominant_term, layer_report, LowRankReading};
use v2x_core::losses::oracle_suite;
use v2x_core::model::checkpoint;
use v2x_core::scenario::{generate_dataset, load_dataset, save_dataset, split_held_out};
use v2x_core::trainer::{objective_gradcheck, prepare_examples, train_student, train_teacher, PrepareOptions};
use v2x_core::v2xlink::{
    bps, channel_pair, cooperative_infer, format_sci3, sequential_infer, spawn_roadside, tcp_pair,
    template_describer, CoopOutput, LinkConfig, RoadsideConfig, VehicleConfig,
};
use v2x_core::{FlopSpec, Model, ModelConfig, RngSeed, Sample, TextTokenizer, TrainConfig};

use super::{Cli, CliError, Command, Reading, TrainFlags, TransportKind};

pub(crate) fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out;
    let seed = RngSeed(cli.seed);
    match cli.command {
        Command::GenData { n } => gen_data(&out, n, seed),
        Command::TrainTeacher { data, train } => teacher(&out, &data, &train, seed),
        Command::Distill { data, teacher, train } => distill(&out, &data, &teacher, &train, seed),
        Command::Infer {
            model,
            data,
            index,
            scale,
            no_refine,
        } => infer(&out, &model, &data, index, scale, !no_refine),
        Command::CoopDemo {
            model,
            data,
            index,
            scale,
            transport,
            port,
            deadline_ms,
        } => coop_demo(&out, &model, &data, index, scale, transport, port, deadline_ms, seed),
        Command::SweepBandwidth { scales, model, data } => sweep(&out, &scales, model.as_deref(), data.as_deref(), seed),
        Command::Robustness { model, data } => robustness(&out, &model, &data, seed),
        Command::Ablate {
            data,
            teacher,
            seeds,
            train,
        } => ablate(&out, &data, &teacher, &seeds, &train),
        Command::VerifyGradients {
            trials,
            tol,
            model_checks,
            model_tol,
        } => verify(&out, trials, tol, model_checks, model_tol, seed),
        Command::FlopsReport {
            nv,
            nt,
            d,
            heads,
            rank,
            reading,
        } => flops_report(&out, FlopSpec::new(nv, nt, d, heads, rank)?, reading, seed),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(dir, name, &(text + "\n"))
}

fn write_table(dir: &Path, stem: &str, table: &Table) -> Result<(), CliError> {
    print!("{}", table.to_text());
    write(dir, &format!("{stem}.txt"), &table.to_text())?;
    write(dir, &format!("{stem}.csv"), &table.to_csv()?)?;
    Ok(())
}

fn train_config(flags: &TrainFlags, seed: RngSeed) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        cfg = cfg.apply_text(&text)?;
    }
    let mut set = |key: &str, value: Option<String>| match value {
        Some(v) => cfg.set(key, &v).map_err(CliError::Usage),
        None => Ok(()),
    };
    set("epochs", flags.epochs.map(|v| v.to_string()))?;
    set("batch", flags.batch.map(|v| v.to_string()))?;
    set("lr", flags.lr.map(|v| v.to_string()))?;
    set("lambda1", flags.lambda1.map(|v| v.to_string()))?;
    set("lambda2", flags.lambda2.map(|v| v.to_string()))?;
    set("kd_temp", flags.kd_temp.map(|v| v.to_string()))?;
    set("kappa", flags.kappa.map(|v| v.to_string()))?;
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    checkpoint::load(path).map_err(|e| match e {
        checkpoint::CheckpointError::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Runtime(format!("{}: {other}", path.display())),
    })
}

fn load_data(dir: &Path) -> Result<Vec<Sample>, CliError> {
    Ok(load_dataset(dir)?)
}

fn pick(samples: &[Sample], index: usize) -> Result<&Sample, CliError> {
    samples
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("scene index {index} out of range for {} scenes", samples.len())))
}

fn gen_data(out: &Path, n: usize, seed: RngSeed) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let dir = out.join("dataset");
    save_dataset(&dir, &generate_dataset(n, seed))?;
    println!("wrote {n} scenes to {}", dir.display());
    Ok(())
}

fn teacher(out: &Path, data: &Path, flags: &TrainFlags, seed: RngSeed) -> Result<(), CliError> {
    let cfg = train_config(flags, seed)?;
    let samples = load_data(data)?;
    let (train, _) = split_held_out(&samples);
    let tok = TextTokenizer::standard();
    let model_cfg = ModelConfig::teacher(tok.vocab_size());
    let examples = prepare_examples(train, &tok, &model_cfg, PrepareOptions::default())?;
    let (model, report) = train_teacher(&examples, model_cfg, &cfg)?;
    checkpoint::save(&model, &out.join("teacher.ckpt")).map_err(|e| CliError::Io(e.to_string()))?;
    write(out, "teacher_log.jsonl", &report.to_json_lines())?;
    write(out, "teacher_config.txt", &cfg.to_text())?;
    println!("teacher trained on {} scenes, final loss {:.4}", train.len(), report.totals().last().unwrap_or(&f64::NAN));
    Ok(())
}

fn distill(out: &Path, data: &Path, teacher: &Path, flags: &TrainFlags, seed: RngSeed) -> Result<(), CliError> {
    let cfg = train_config(flags, seed)?;
    let teacher = load_model(teacher)?;
    let samples = load_data(data)?;
    let (train, _) = split_held_out(&samples);
    let tok = TextTokenizer::standard();
    let model_cfg = ModelConfig::student(tok.vocab_size());
    let examples = prepare_examples(train, &tok, &model_cfg, PrepareOptions::default())?;
    let (student, report) = train_student(&examples, &teacher, model_cfg, &cfg)?;
    checkpoint::save(&student, &out.join("student.ckpt")).map_err(|e| CliError::Io(e.to_string()))?;
    write(out, "student_log.jsonl", &report.to_json_lines())?;
    write(out, "student_config.txt", &cfg.to_text())?;
    println!("student distilled on {} scenes, final loss {:.4}", train.len(), report.totals().last().unwrap_or(&f64::NAN));
    Ok(())
}

fn waypoints_json(traj: &[v2x_core::model::Waypoint]) -> serde_json::Value {
    json!(traj.iter().map(|w| [w.x, w.y]).collect::<Vec<_>>())
}

fn infer(out: &Path, model: &Path, data: &Path, index: usize, scale: f64, refine: bool) -> Result<(), CliError> {
    let model = load_model(model)?;
    let samples = load_data(data)?;
    let s = pick(&samples, index)?;
    let tok = TextTokenizer::standard();
    let road = RoadsideConfig {
        scale,
        ..Default::default()
    };
    let plan = sequential_infer(&model, &tok, &s.vehicle, &s.infra, &s.prompt.full_text(), &road, refine)?;
    for (i, w) in plan.trajectory.iter().enumerate() {
        println!("{i}\t{:.2}\t{:.2}", w.x, w.y);
    }
    write_json(
        out,
        "infer.json",
        &json!({
            "index": index,
            "scale": scale,
            "prompt": plan.prompt,
            "raw": waypoints_json(&plan.raw),
            "trajectory": waypoints_json(&plan.trajectory),
            "ground_truth": waypoints_json(&s.trajectory),
        }),
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn coop_demo(
    out: &Path,
    model: &Path,
    data: &Path,
    index: usize,
    scale: f64,
    transport: TransportKind,
    port: u16,
    deadline_ms: u64,
    seed: RngSeed,
) -> Result<(), CliError> {
    let model = load_model(model)?;
    let samples = load_data(data)?;
    let s = pick(&samples, index)?;
    let tok = TextTokenizer::standard();
    let road = RoadsideConfig {
        scale,
        seed,
        frame_id: index as u64,
        ..Default::default()
    };
    let veh = VehicleConfig {
        deadline: Duration::from_millis(deadline_ms),
        infra_dims: (s.infra.height(), s.infra.width()),
        refine: true,
    };
    let describe = template_describer(&s.scene);
    let joined = |r: std::thread::Result<Result<usize, v2x_core::LinkError>>| {
        r.map_err(|_| CliError::Runtime("roadside task panicked".into()))?
            .map_err(CliError::from)
    };
    let (result, sent): (CoopOutput, usize) = match transport {
        TransportKind::Channel => {
            let (mut vehicle, roadside) = channel_pair();
            let task = spawn_roadside(roadside, s.infra.clone(), road);
            let result = cooperative_infer(&mut vehicle, &s.vehicle, &describe, &model, &tok, &veh)?;
            (result, joined(task.join())?)
        }
        TransportKind::Tcp => {
            let (mut vehicle, roadside) = tcp_pair(port)?;
            let task = spawn_roadside(roadside, s.infra.clone(), road);
            let result = cooperative_infer(&mut vehicle, &s.vehicle, &describe, &model, &tok, &veh)?;
            (result, joined(task.join())?)
        }
    };
    println!(
        "frame {} at scale {:.3}: {} payload bytes, {} tokens",
        result.meta.frame_id,
        result.meta.scale(),
        sent,
        result.plan.tokens.ids.len()
    );
    for (i, w) in result.plan.trajectory.iter().enumerate() {
        println!("{i}\t{:.2}\t{:.2}", w.x, w.y);
    }
    write_json(
        out,
        "coop.json",
        &json!({
            "index": index,
            "scale": scale,
            "payload_bytes": result.payload_bytes,
            "prompt": result.plan.prompt,
            "tokens": result.plan.tokens.ids,
            "trajectory": waypoints_json(&result.plan.trajectory),
        }),
    )?;
    Ok(())
}

fn sweep(out: &Path, scales: &[f64], model: Option<&Path>, data: Option<&Path>, seed: RngSeed) -> Result<(), CliError> {
    let links: Vec<LinkConfig> = scales.iter().map(|&s| LinkConfig::full_hd(s)).collect::<Result<_, _>>()?;
    let (Some(model), Some(data)) = (model, data) else {
        let mut t = Table::new(["scale", "frame", "payload bytes", "bps", "bps (3 s.f.)"]);
        for link in &links {
            let (h, w) = link.frame_dims();
            t.push(vec![
                format!("{}", link.scale),
                format!("{h}x{w}"),
                link.payload_bytes().to_string(),
                bps(link).to_string(),
                format_sci3(bps(link) as f64),
            ]);
        }
        return write_table(out, "sweep", &t);
    };
    let model = load_model(model)?;
    let samples = load_data(data)?;
    let (_, held) = split_held_out(&samples);
    let rows = sweep_bandwidth(&model, &TextTokenizer::standard(), held, scales, seed)?;
    write_table(out, "sweep", &sweep_table(&rows))
}

fn robustness(out: &Path, model: &Path, data: &Path, seed: RngSeed) -> Result<(), CliError> {
    let model = load_model(model)?;
    let samples = load_data(data)?;
    let (_, held) = split_held_out(&samples);
    let rows = robustness_suite(&model, &TextTokenizer::standard(), held, seed)?;
    write_table(out, "robustness", &robustness_table(&rows))
}

fn ablate(out: &Path, data: &Path, teacher: &Path, seeds: &[u64], flags: &TrainFlags) -> Result<(), CliError> {
    let teacher = load_model(teacher)?;
    let samples = load_data(data)?;
    let (train, held) = split_held_out(&samples);
    let tok = TextTokenizer::standard();
    let cv = constant_velocity_baseline(held, EGO_RADIUS)?;
    println!("constant-velocity baseline: avg L2 {:.2}", cv.l2.avg);
    for &seed in seeds {
        let setup = AblationSetup {
            train,
            held_out: held,
            teacher: &teacher,
            student_cfg: ModelConfig::student(tok.vocab_size()),
            train_cfg: train_config(flags, RngSeed(seed))?,
            tokenizer: &tok,
        };
        let rows = ablation_suite(&setup)?;
        println!("seed {seed}");
        write_table(out, &format!("ablation_seed{seed}"), &ablation_table(&rows))?;
    }
    Ok(())
}

fn verify(out: &Path, trials: usize, tol: f64, checks: usize, model_tol: f64, seed: RngSeed) -> Result<(), CliError> {
    let losses = oracle_suite(trials, seed, tol)?;
    let model = objective_gradcheck(checks, seed, model_tol)?;
    println!(
        "alignment: max rel {:.3e} (scores), {:.3e} (embeddings); closed form gap {:.1e}",
        losses.align_max_rel, losses.align_embed_max_rel, losses.closed_form_max_abs
    );
    println!("distillation: max rel {:.3e}", losses.kd_max_rel);
    println!("model objective: {} params, max rel {:.3e}", model.checked, model.max_rel_error);
    write_json(
        out,
        "gradients.json",
        &json!({
            "losses": losses,
            "model": { "checked": model.checked, "max_rel_error": model.max_rel_error, "failures": model.failures, "tol": model_tol },
        }),
    )?;
    if !losses.passed() || model.failures > 0 {
        return Err(CliError::Verification(format!(
            "{} loss mismatches, {} model mismatches",
            losses.failures, model.failures
        )));
    }
    println!("all gradients within tolerance");
    Ok(())
}

fn flops_report(out: &Path, spec: FlopSpec, reading: Reading, seed: RngSeed) -> Result<(), CliError> {
    let reading = match reading {
        Reading::Literal => LowRankReading::Literal,
        Reading::PerProjection => LowRankReading::PerProjection,
    };
    let rows = layer_report(&spec, reading);
    let mut t = Table::new(["layer", "projection", "attention", "total"]);
    for r in &rows {
        t.push(vec![r.layer.clone(), r.projection.to_string(), r.attention.to_string(), r.total.to_string()]);
    }
    write_table(out, "flops", &t)?;
    let counted = counted_flops(&spec, seed);
    let dominant = dominant_term(&spec);
    println!("counted (vis, text, cross): {counted:?}");
    println!("dominant term: {}", dominant.label());
    write_json(
        out,
        "flops.json",
        &json!({
            "spec": spec,
            "rows": rows,
            "counted": { "vis": counted.0, "text": counted.1, "cross": counted.2 },
            "dominant": dominant.label(),
        }),
    )?;
    Ok(())
}
