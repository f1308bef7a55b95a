use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use tkml::attack::{
    attack_mlap, attack_targeted, attack_universal, attack_untargeted, AttackConfig,
};
use tkml::data::{generate_synthetic, load_dataset, save_dataset, Dataset};
use tkml::eval::{consistency, select_targets, top_k_set, LabelSet, TargetStrategy};
use tkml::predictor::{subset_accuracy, train_victim, MlpModel, Predictor, TrainConfig};
use tkml::records::{
    append_results, read_results, write_results, ResultRecord, ResultsHeader, UniversalSummary,
    RESULTS_SCHEMA,
};
use tkml::topk::ScoreVector;
use tkml::{Error, Result};

use crate::config::Settings;
use crate::{AttackArgs, GenDataArgs, ReportArgs, TrainArgs};

/// Restrict a dataset to `take` instances starting at `skip`; instance ids
/// downstream stay relative to the full file via the returned offset.
fn slice_dataset(
    dataset: Dataset,
    cfg: &Settings,
    skip: Option<usize>,
    take: Option<usize>,
) -> Result<(Dataset, usize)> {
    let n = dataset.instances.len();
    let skip = cfg.get("skip", skip, 0)?;
    let take = cfg.get("take", take, n.saturating_sub(skip))?;
    if skip >= n {
        return Err(Error::invalid_parameter(
            "skip",
            format!("skip = {skip} but dataset has {n} instances"),
        ));
    }
    let end = (skip + take).min(n);
    Ok((dataset.slice(skip..end), skip))
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = Settings::load(args.config.as_deref())?;
    let m = cfg.get("m", args.m, 10)?;
    let d = cfg.get("d", args.d, 20)?;
    let n = cfg.get("n", args.n, 1000)?;
    let avg_labels = cfg.get("avg_labels", args.avg_labels, 2.0)?;
    let seed = cfg.get("seed", args.seed, 0)?;

    let dataset = generate_synthetic(m, d, n, avg_labels, seed)?;
    save_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} instances (m={m}, d={d}, seed={seed}) to {}",
        dataset.instances.len(),
        args.out.display()
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = Settings::load(args.config.as_deref())?;
    let train_cfg = TrainConfig {
        epochs: cfg.get("epochs", args.epochs, 200)?,
        learning_rate: cfg.get("lr", args.lr, 0.5)?,
        batch_size: cfg.get("batch", args.batch, 32)?,
        seed: cfg.get("seed", args.seed, 0)?,
        hidden_layers: cfg.get_list("hidden", &args.hidden, &[64])?,
    };
    let dataset = load_dataset(&args.data)?;
    let (dataset, _) = slice_dataset(dataset, &cfg, args.skip, args.take)?;
    let model = train_victim(&dataset, &train_cfg)?;
    model.save(&args.out)?;
    let accuracy = subset_accuracy(&model, &dataset)?;
    println!(
        "trained {} epochs, subset accuracy {accuracy:.4}, saved to {}",
        train_cfg.epochs,
        args.out.display()
    );
    Ok(())
}

/// Per-instance seed for randomized target selection, derived from the run
/// seed so runs stay reproducible while instances differ.
fn instance_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn success_at_cutoffs(
    truth: &LabelSet,
    scores: &ScoreVector,
    cutoffs: &[usize],
) -> Result<BTreeMap<usize, bool>> {
    let mut out = BTreeMap::new();
    for &kp in cutoffs {
        let predicted = top_k_set(scores, kp)?;
        out.insert(kp, consistency(truth, &predicted) == 0);
    }
    Ok(out)
}

fn dump_z_line(file: &mut Option<std::io::BufWriter<std::fs::File>>, id: usize, z: &[f64]) -> Result<()> {
    if let Some(w) = file {
        let cells: Vec<String> = z.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{id},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn attack(args: AttackArgs) -> Result<()> {
    let cfg = Settings::load(args.config.as_deref())?;
    let mode = cfg.get("mode", Some(args.mode.clone()), String::new())?;
    if !matches!(mode.as_str(), "untargeted" | "universal" | "targeted" | "mlap") {
        return Err(Error::invalid_parameter(
            "mode",
            format!("unknown mode `{mode}` (expected untargeted|universal|targeted|mlap)"),
        ));
    }
    let model = MlpModel::load(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let (dataset, id_offset) = slice_dataset(dataset, &cfg, args.skip, args.take)?;
    if model.num_labels() != dataset.m || model.input_dim() != dataset.d {
        return Err(Error::invalid_parameter(
            "model",
            format!(
                "model is {}x{} but dataset is m={}, d={}",
                model.num_labels(),
                model.input_dim(),
                dataset.m,
                dataset.d
            ),
        ));
    }

    let k = cfg.get("k", args.k, 3)?;
    let seed = cfg.get("seed", args.seed, 0)?;
    let mut attack_cfg = match mode.as_str() {
        "untargeted" => AttackConfig::untargeted(k),
        "universal" => AttackConfig::universal(k),
        _ => AttackConfig::targeted(k),
    };
    attack_cfg.eta = cfg.get("eta", args.eta, attack_cfg.eta)?;
    attack_cfg.max_iter = cfg.get("max_iter", args.max_iter, attack_cfg.max_iter)?;
    attack_cfg.beta = cfg.get("beta", args.beta, attack_cfg.beta)?;
    attack_cfg.seed = seed;
    if args.no_projection {
        attack_cfg.epsilon = None;
    } else if let Some(eps) = cfg.get_opt("epsilon", args.epsilon)? {
        attack_cfg.epsilon = Some(eps);
    }
    attack_cfg.validate(dataset.m)?;
    let xi = cfg.get("xi", args.xi, 0.7)?;
    let k_prime = cfg.get_list("k_prime", &args.k_prime, &[k])?;
    for &kp in &k_prime {
        if kp < 1 || kp >= dataset.m {
            return Err(Error::invalid_parameter(
                "k_prime",
                format!("k' = {kp} out of range [1, {})", dataset.m),
            ));
        }
    }
    let strategy: Option<TargetStrategy> = match mode.as_str() {
        "targeted" | "mlap" => Some(
            cfg.get("strategy", args.strategy.clone(), "best".to_string())?
                .parse()?,
        ),
        _ => None,
    };

    // protocol: only attack instances the victim already classifies
    // consistently (E = 1 at z = 0)
    let mut eligible: Vec<usize> = Vec::new();
    for (id, inst) in dataset.instances.iter().enumerate() {
        let scores = model.predict(&inst.x)?;
        if consistency(&inst.truth, &top_k_set(&scores, k)?) == 1 {
            eligible.push(id);
        }
    }

    let header = ResultsHeader {
        schema: RESULTS_SCHEMA.into(),
        attack: mode.clone(),
        k,
        strategy: strategy.map(|s| s.to_string()),
        epsilon: attack_cfg.epsilon,
        eta: attack_cfg.eta,
        max_iter: attack_cfg.max_iter,
        beta: attack_cfg.beta,
        seed,
        k_prime: k_prime.clone(),
        input_dim: dataset.d,
        universal: None,
    };

    let mut dump = match &args.dump_z {
        Some(path) => Some(std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => None,
    };

    if mode == "universal" {
        let training = Dataset {
            instances: eligible
                .iter()
                .map(|&id| dataset.instances[id].clone())
                .collect(),
            m: dataset.m,
            d: dataset.d,
            seed: dataset.seed,
        };
        let result = attack_universal(&model, &training, &attack_cfg, xi)?;
        let z = &result.perturbation.z;
        let mut records = Vec::with_capacity(eligible.len());
        for &id in &eligible {
            let inst = &dataset.instances[id];
            let x_adv: Vec<f64> = inst
                .x
                .iter()
                .zip(z)
                .map(|(&a, &b)| (a + b).clamp(attack_cfg.clip_low, attack_cfg.clip_high))
                .collect();
            let scores = model.predict(&x_adv)?;
            let success_at = success_at_cutoffs(&inst.truth, &scores, &k_prime)?;
            records.push(ResultRecord {
                id: id_offset + id,
                success: consistency(&inst.truth, &top_k_set(&scores, k)?) == 0,
                l2_norm: result.perturbation.l2_norm,
                iterations: result.epochs_used,
                final_topk: top_k_set(&scores, k)?.iter().collect(),
                success_at,
            });
        }
        dump_z_line(&mut dump, 0, z)?;
        let header = ResultsHeader {
            universal: Some(UniversalSummary {
                z: z.clone(),
                l2_norm: result.perturbation.l2_norm,
                training_uasr: result.training_uasr,
                epochs_used: result.epochs_used,
                hit_epoch_cap: result.hit_epoch_cap,
            }),
            ..header
        };
        write_results(&args.out, &header, &records)?;
        println!(
            "universal attack: training UASR {:.4} after {} epochs, ||z|| = {:.4}",
            result.training_uasr, result.epochs_used, result.perturbation.l2_norm
        );
        return Ok(());
    }

    // resume an interrupted run when the existing file matches this one
    let mut done: BTreeSet<usize> = BTreeSet::new();
    let mut resuming = false;
    if args.out.exists() {
        if let Ok((existing_header, existing)) = read_results(&args.out) {
            if existing_header == header {
                done = existing.iter().map(|r| r.id).collect();
                resuming = true;
            }
        }
    }
    if !resuming {
        write_results(&args.out, &header, &[])?;
    }

    let mut new_records = Vec::new();
    for &id in &eligible {
        let global_id = id_offset + id;
        if done.contains(&global_id) {
            continue;
        }
        let inst = &dataset.instances[id];
        let result = match mode.as_str() {
            "untargeted" => attack_untargeted(&model, &inst.x, &inst.truth, &attack_cfg)?,
            "targeted" | "mlap" => {
                let scores = model.predict(&inst.x)?;
                let target = select_targets(
                    &scores,
                    &inst.truth,
                    k,
                    strategy.expect("strategy set for targeted modes"),
                    instance_seed(seed, global_id),
                )?;
                if mode == "targeted" {
                    attack_targeted(&model, &inst.x, &target, &attack_cfg)?
                } else {
                    attack_mlap(&model, &inst.x, &target, &attack_cfg)?
                }
            }
            _ => unreachable!(),
        };
        let success_at = match mode.as_str() {
            // untargeted success generalizes across cutoffs; targeted
            // success is set equality and only meaningful at the attack's k
            "untargeted" => success_at_cutoffs(&inst.truth, &result.final_scores, &k_prime)?,
            _ => BTreeMap::from([(k, result.success)]),
        };
        dump_z_line(&mut dump, global_id, &result.perturbation.z)?;
        new_records.push(ResultRecord {
            id: global_id,
            success: result.success,
            l2_norm: result.perturbation.l2_norm,
            iterations: result.iterations_used,
            final_topk: top_k_set(&result.final_scores, k)?.iter().collect(),
            success_at,
        });
    }
    append_results(&args.out, &new_records)?;
    if let Some(mut w) = dump {
        w.flush()?;
    }

    let total = done.len() + new_records.len();
    let successes = new_records.iter().filter(|r| r.success).count();
    println!(
        "{mode} attack: {successes}/{} new records ({} resumed), {total} total in {}",
        new_records.len(),
        done.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct ReportRow {
    attack: String,
    k: usize,
    strategy: String,
    pert: Option<f64>,
    asr: f64,
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut groups: BTreeMap<(String, usize, String), (Vec<bool>, Vec<f64>, usize)> =
        BTreeMap::new();
    for path in &args.inputs {
        let (header, records) = read_results(path).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        let key = (
            header.attack.clone(),
            header.k,
            header.strategy.clone().unwrap_or_default(),
        );
        let entry = groups
            .entry(key)
            .or_insert_with(|| (Vec::new(), Vec::new(), header.input_dim));
        for rec in &records {
            entry.0.push(rec.success);
            if rec.success {
                entry.1.push(rec.l2_norm / header.input_dim as f64);
            }
        }
    }

    let mut rows = Vec::new();
    for ((attack, k, strategy), (successes, norms, _d)) in &groups {
        if successes.is_empty() {
            continue;
        }
        let asr = successes.iter().filter(|&&s| s).count() as f64 / successes.len() as f64;
        let pert = if norms.is_empty() {
            None
        } else {
            Some(norms.iter().sum::<f64>() / norms.len() as f64)
        };
        rows.push(ReportRow {
            attack: attack.clone(),
            k: *k,
            strategy: strategy.clone(),
            pert,
            asr,
        });
    }

    // append rather than `with_extension`: the base may contain dots
    let mut csv_path = args.out.clone().into_os_string();
    csv_path.push(".csv");
    let csv_path = std::path::PathBuf::from(csv_path);
    let mut json_path = args.out.clone().into_os_string();
    json_path.push(".json");
    let json_path = std::path::PathBuf::from(json_path);
    let mut csv = String::from("attack,k,strategy,Pert,ASR\n");
    for row in &rows {
        let pert = row.pert.map(|p| p.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.attack, row.k, row.strategy, pert, row.asr
        ));
    }
    std::fs::write(&csv_path, csv)?;
    let file = std::fs::File::create(&json_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &rows)?;
    println!(
        "wrote {} rows to {} and {}",
        rows.len(),
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}
