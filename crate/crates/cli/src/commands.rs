use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use edge_unlearn::engine::{run_variant, Dataset};
use edge_unlearn::memory::{MemoryStore, PolicyKind};
use edge_unlearn::report::{assignments_jsonl, events_jsonl, metrics_csv, summary_json};
use edge_unlearn::workload::generate_workload;
use edge_unlearn::{
    run_scenario, run_workload, Capacity, ConfigError, EngineError, ScenarioConfig, VariantTag,
    Workload, WorkloadError,
};

use crate::{ScenarioArgs, SweepParam, EXIT_CONFIG, EXIT_GOLDEN, EXIT_INVARIANT};

/// Raised when the replacement policy disagrees with the golden trace.
#[derive(Debug, thiserror::Error)]
#[error("golden trace mismatch: {0}")]
pub struct GoldenMismatch(String);

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<WorkloadError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<GoldenMismatch>() {
            return EXIT_GOLDEN;
        }
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            return match e {
                EngineError::Invariant(_) => EXIT_INVARIANT,
                EngineError::Config(_) | EngineError::Workload(_) => EXIT_CONFIG,
                _ => 1,
            };
        }
    }
    1
}

struct Scenario {
    config: ScenarioConfig,
    out: PathBuf,
}

fn load(args: &ScenarioArgs) -> Result<Scenario> {
    let mut config = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    let out = PathBuf::from(&config.output_dir);
    Ok(Scenario { config, out })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn pick_variant(config: &ScenarioConfig, variant: Option<VariantTag>) -> Result<VariantTag> {
    match variant {
        Some(v) => Ok(v),
        None => Ok(config.variant_tags()?[0]),
    }
}

pub fn run(args: &ScenarioArgs, variant: Option<VariantTag>) -> Result<()> {
    let Scenario { mut config, out } = load(args)?;
    let tag = pick_variant(&config, variant)?;
    config.variants = vec![tag.to_string()];
    config.validate()?;
    let workload = generate_workload(&config.workload())?;
    let dataset = std::sync::Arc::new(Dataset::for_config(&config, &workload));
    let run = run_variant(&config, tag, &workload, dataset).with_context(|| format!("running {tag}"))?;
    write(&out, "metrics.csv", &metrics_csv(&run.metrics))?;
    write(&out, "events.jsonl", &events_jsonl(&run.events))?;
    write(&out, "assignments.jsonl", &assignments_jsonl(&run.assignments))?;
    println!(
        "{tag}: rsn {} energy {:.3} J episodes {} accuracy {}",
        run.rsn_total(),
        run.energy_total(),
        run.episodes,
        run.final_accuracy().map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn compare(args: &ScenarioArgs, workload: Option<&Path>) -> Result<()> {
    let Scenario { config, out } = load(args)?;
    let result = match workload {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let workload = Workload::read_jsonl(BufReader::new(file))
                .with_context(|| format!("reading {}", path.display()))?;
            run_workload(&config, &workload)?
        }
        None => run_scenario(&config)?,
    };
    write(&out, "metrics.csv", &metrics_csv(result.records()))?;
    write(&out, "summary.json", &summary_json(&result))?;
    for run in &result.runs {
        write(&out, &format!("events_{}.jsonl", run.tag), &events_jsonl(&run.events))?;
    }
    println!(
        "{} chunks, {} samples, {} delete requests",
        result.chunks, result.samples_added, result.delete_requests
    );
    println!("{:<16} {:>12} {:>14} {:>9}", "variant", "rsn", "energy_j", "accuracy");
    for run in &result.runs {
        println!(
            "{:<16} {:>12} {:>14.3} {:>9}",
            run.tag.to_string(),
            run.rsn_total(),
            run.energy_total(),
            run.final_accuracy().map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn trace(args: &ScenarioArgs, variant: Option<VariantTag>) -> Result<()> {
    let Scenario { config, .. } = load(args)?;
    let tag = pick_variant(&config, variant)?;
    let workload = generate_workload(&config.workload())?;
    let dataset = std::sync::Arc::new(Dataset::for_config(&config, &workload));
    let run = run_variant(&config, tag, &workload, dataset)?;
    print!("{}", events_jsonl(&run.events));
    Ok(())
}

fn apply_sweep(config: &mut ScenarioConfig, param: SweepParam, value: f64) -> Result<()> {
    match param {
        SweepParam::Rho => config.unlearn_probability = value,
        SweepParam::Capacity | SweepParam::Shards => {
            if value < 1.0 || value.fract() != 0.0 {
                bail!(ConfigError::Range {
                    key: "values",
                    message: format!("{value} is not a positive integer"),
                });
            }
            if matches!(param, SweepParam::Capacity) {
                config.capacity = Capacity::Slots(value as usize);
            } else {
                config.shards = value as u32;
            }
        }
    }
    config.validate()?;
    Ok(())
}

pub fn sweep(args: &ScenarioArgs, param: SweepParam, values: &[f64]) -> Result<()> {
    let Scenario { config, out } = load(args)?;
    let name = match param {
        SweepParam::Rho => "rho",
        SweepParam::Capacity => "capacity",
        SweepParam::Shards => "shards",
    };
    let mut csv = format!("{name},variant,rsn_total,energy_total_j,final_accuracy\n");
    for &value in values {
        let mut c = config.clone();
        apply_sweep(&mut c, param, value)?;
        let result = run_scenario(&c).with_context(|| format!("{name}={value}"))?;
        for run in &result.runs {
            let _ = writeln!(
                csv,
                "{value},{},{},{:.3},{}",
                run.tag,
                run.rsn_total(),
                run.energy_total(),
                run.final_accuracy().map(|a| format!("{a:.4}")).unwrap_or_default()
            );
        }
    }
    let file = format!("sweep_{name}.csv");
    write(&out, &file, &csv)?;
    print!("{csv}");
    println!("wrote {}", out.join(file).display());
    Ok(())
}

pub fn workload(args: &ScenarioArgs) -> Result<()> {
    let Scenario { config, out } = load(args)?;
    let workload = generate_workload(&config.workload())?;
    write(&out, "workload.jsonl", &workload.to_jsonl_string())?;
    println!(
        "{} chunks, {} delete requests; wrote {}",
        workload.chunks().count(),
        workload.delete_count(),
        out.join("workload.jsonl").display()
    );
    Ok(())
}

const GOLDEN_VICTIMS: [u64; 6] = [1, 2, 4, 7, 11, 13];
const GOLDEN_FINAL: [u64; 8] = [3, 5, 6, 8, 9, 10, 12, 14];

pub fn verify_figure8() -> Result<()> {
    let mut store = MemoryStore::<u64>::slots(8, PolicyKind::Fibor)?;
    let mut victims = Vec::new();
    for id in 1..=14u64 {
        if let (_, Some(evicted)) = store.store(id, id as u32) {
            victims.push(evicted);
        }
    }
    let mut resident: Vec<u64> = store.iter().copied().collect();
    resident.sort_unstable();
    let slots: Vec<String> = store
        .events()
        .iter()
        .filter_map(|e| e.slot.filter(|_| e.evicted.is_some()))
        .map(|s| (s + 1).to_string())
        .collect();
    println!("eviction slots: {}", slots.join(", "));
    println!("victims: {victims:?}");
    println!(
        "stored set: {{{}}}",
        resident.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    );
    if victims != GOLDEN_VICTIMS || resident != GOLDEN_FINAL {
        bail!(GoldenMismatch(format!(
            "expected victims {GOLDEN_VICTIMS:?} and set {GOLDEN_FINAL:?}"
        )));
    }
    println!("golden trace: ok");
    Ok(())
}
