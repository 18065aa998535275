use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use stepspec::latsim::{self, AcceptSchedule, QualitySampler, Scenario};
use stepspec::orchestrator::{Clock, Engine, EngineError, VerifyMode};
use stepspec::schema::{EpisodeRow, PolicyTotals, RunSummary, SimulateReport, SweepReport};
use stepspec::trace::{self, TraceEvent};
use stepspec::{sapo, Policy};

use crate::manifest::Manifest;
use crate::output::{opt, table, OutDir};
use crate::CliError;

const GANTT_WIDTH: usize = 100;

pub struct RunArgs<'a> {
    pub manifest: Manifest,
    pub out: &'a Path,
    pub force: bool,
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub virtual_clock: bool,
}

pub fn run(args: RunArgs) -> Result<String, CliError> {
    let m = args.manifest;
    let mut cfg = m.engine.clone();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Config(format!("engine: {e}")))?;
    let target_spec = m
        .target
        .as_ref()
        .ok_or_else(|| CliError::Config("no target backend configured".into()))?;
    let target = target_spec
        .build(cfg.seed, cfg.max_response_tokens)
        .map_err(|e| CliError::Config(format!("target: {e}")))?;
    let draft = match &m.draft {
        Some(spec) => Some(
            spec.build(cfg.seed, cfg.max_response_tokens)
                .map_err(|e| CliError::Config(format!("draft: {e}")))?,
        ),
        None => None,
    };
    if m.problems.is_empty() {
        return Err(CliError::Config("no problems configured".into()));
    }
    let policies = m.policies();
    if policies.is_empty() {
        return Err(CliError::Config("no policies selected".into()));
    }
    if draft.is_none() && policies.iter().any(|p| *p != Policy::Baseline) {
        return Err(CliError::Config("speculative policies need a draft backend".into()));
    }
    let count = args.episodes.unwrap_or(m.problems.len());

    let mut engine = Engine::new(draft, target, cfg.clone());
    if args.virtual_clock {
        engine = engine.with_clock(Clock::Virtual(VerifyMode::Preempt));
    }
    let clock =
        if args.virtual_clock || (target_spec.is_simulated() && m.draft.as_ref().is_none_or(|d| d.is_simulated())) {
            "virtual"
        } else {
            "wall"
        };

    let out = OutDir::prepare(args.out, args.force)?;
    let mut episodes = Vec::new();
    for index in 0..count {
        let problem = &m.problems[index % m.problems.len()];
        let mut baseline = None;
        for &policy in &policies {
            let trace_file = format!("episodes/{index:03}_{}.jsonl", policy.name());
            let result = match engine.run(policy, problem) {
                Ok(r) => r,
                Err(e) => {
                    if let Some(partial) = e.partial_trace() {
                        out.write(&trace_file, trace::to_jsonl(partial))?;
                    }
                    return Err(engine_error(index, policy, e));
                }
            };
            out.write(&trace_file, trace::to_jsonl(&result.trace))?;
            if policy == Policy::Baseline {
                baseline = Some(result.makespan);
            }
            episodes.push(EpisodeRow {
                problem_index: index,
                policy: policy.name().to_owned(),
                summary: result.summary(),
                speedup: baseline
                    .filter(|_| result.makespan > 0)
                    .map(|b| b as f64 / result.makespan as f64),
                answer: result.transcript.final_answer().map(str::to_owned),
                trace_file,
            });
        }
    }

    let mut totals = BTreeMap::new();
    let baseline_total: Option<u64> = policies.contains(&Policy::Baseline).then(|| {
        episodes
            .iter()
            .filter(|e| e.policy == "baseline")
            .map(|e| e.summary.makespan)
            .sum()
    });
    for &policy in &policies {
        let rows: Vec<&EpisodeRow> = episodes.iter().filter(|e| e.policy == policy.name()).collect();
        let tag_count = |tag: &str| {
            rows.iter()
                .flat_map(|r| &r.summary.source_per_round)
                .filter(|s| *s == tag)
                .count() as u64
        };
        let rates: Vec<f64> = rows.iter().filter_map(|r| r.summary.acceptance_rate).collect();
        let total_makespan: u64 = rows.iter().map(|r| r.summary.makespan).sum();
        totals.insert(
            policy.name().to_owned(),
            PolicyTotals {
                episodes: rows.len(),
                draft_steps: tag_count("draft"),
                target_steps: tag_count("target"),
                mean_acceptance_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
                total_makespan,
                speedup: baseline_total
                    .filter(|_| total_makespan > 0)
                    .map(|b| b as f64 / total_makespan as f64),
            },
        );
    }
    let summary = RunSummary {
        seed: cfg.seed,
        clock: clock.to_owned(),
        episodes,
        totals,
    };
    out.write_json("summary.json", &summary)?;

    let rows: Vec<Vec<String>> = policies
        .iter()
        .map(|p| {
            let t = &summary.totals[p.name()];
            vec![
                p.name().to_owned(),
                t.episodes.to_string(),
                t.draft_steps.to_string(),
                t.target_steps.to_string(),
                opt(t.mean_acceptance_rate, 3),
                t.total_makespan.to_string(),
                opt(t.speedup, 2),
            ]
        })
        .collect();
    let text = table(
        &["policy", "episodes", "draft", "target", "accept", "makespan", "speedup"],
        &rows,
    );
    out.write("summary.txt", &text)?;
    Ok(text)
}

fn engine_error(index: usize, policy: Policy, e: EngineError) -> CliError {
    let msg = format!("problem {index}, {}: {e}", policy.name());
    match e {
        EngineError::Config(_) | EngineError::VirtualClockUnsupported(_) => CliError::Config(msg),
        _ => CliError::Runtime(msg),
    }
}

fn sim_error(e: latsim::SimError) -> CliError {
    match e {
        latsim::SimError::InvalidScenario(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn reseed(schedule: &mut AcceptSchedule, seed: Option<u64>) {
    if let (AcceptSchedule::Bernoulli { seed: s, .. }, Some(seed)) = (schedule, seed) {
        *s = seed;
    }
}

pub fn simulate(m: Manifest, out: &Path, force: bool, seed: Option<u64>) -> Result<String, CliError> {
    let mut scenario = m
        .scenario
        .unwrap_or_else(|| Scenario::hand(AcceptSchedule::Fixed(vec![true, true]), Policy::Fpsr));
    reseed(&mut scenario.accept_schedule, seed);
    scenario.validate().map_err(sim_error)?;
    let mut timelines = BTreeMap::new();
    for policy in Policy::ALL {
        timelines.insert(
            policy,
            latsim::simulate(&scenario.with_policy(policy)).map_err(sim_error)?,
        );
    }
    let baseline = &timelines[&Policy::Baseline];
    let mut makespans = BTreeMap::new();
    let mut speedups = BTreeMap::new();
    for (policy, t) in &timelines {
        makespans.insert(policy.name().to_owned(), t.makespan);
        speedups.insert(
            policy.name().to_owned(),
            latsim::speedup(t, baseline).map_err(sim_error)?,
        );
    }

    let out = OutDir::prepare(out, force)?;
    for (policy, t) in &timelines {
        out.write(
            &format!("timelines/{}.jsonl", policy.name()),
            trace::to_jsonl(&t.events),
        )?;
    }
    let shown = &timelines[&scenario.policy].events;
    out.write("gantt.txt", latsim::render_text(shown, GANTT_WIDTH))?;
    out.write("gantt.svg", latsim::render_svg(shown))?;
    let rows: Vec<Vec<String>> = Policy::ALL
        .iter()
        .map(|p| {
            vec![
                p.name().to_owned(),
                makespans[p.name()].to_string(),
                format!("{:.3}", speedups[p.name()]),
            ]
        })
        .collect();
    let text = table(&["policy", "makespan", "speedup"], &rows);
    out.write("simulate.txt", &text)?;
    out.write_json(
        "simulate.json",
        &SimulateReport {
            scenario,
            makespans,
            speedups,
        },
    )?;
    Ok(text)
}

pub fn sweep_alpha(
    m: Manifest,
    out: &Path,
    force: bool,
    seed: Option<u64>,
    episodes: Option<usize>,
) -> Result<String, CliError> {
    let seed = seed.unwrap_or(m.engine.seed);
    let mut scenario = m.scenario.unwrap_or_else(|| Scenario::calibration(seed));
    reseed(&mut scenario.accept_schedule, Some(seed));
    let sampler = match m.sweep.sampler {
        Some(QualitySampler::Uniform { .. }) => QualitySampler::Uniform { seed },
        Some(QualitySampler::Beta { a, b, .. }) => QualitySampler::Beta { a, b, seed },
        None => QualitySampler::Uniform { seed },
    };
    if m.sweep.alphas.is_empty() || m.sweep.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(CliError::Config(
            "sweep.alphas must be a non-empty list of values in [0,1]".into(),
        ));
    }
    let episodes = episodes.map_or(m.sweep.episodes, |e| e as u32);
    if episodes == 0 {
        return Err(CliError::Config("sweep needs at least one episode".into()));
    }
    let rows = latsim::sweep_alpha(&scenario, &m.sweep.alphas, &sampler, episodes).map_err(sim_error)?;

    let out = OutDir::prepare(out, force)?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{:.2}", r.alpha),
                format!("{:.3}", r.acceptance),
                format!("{:.3}", r.speedup),
            ]
        })
        .collect();
    let text = table(&["alpha", "acceptance", "speedup"], &cells);
    out.write("sweep.txt", &text)?;
    out.write_json(
        "sweep.json",
        &SweepReport {
            scenario,
            sampler,
            episodes,
            rows,
        },
    )?;
    Ok(text)
}

pub fn train_toy(m: Manifest, out: &Path, force: bool, seed: Option<u64>) -> Result<String, CliError> {
    let mut cfg = m.train.config;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = sapo::toy_train(&m.train.env, &m.train.weights, &cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let out = OutDir::prepare(out, force)?;
    let names = |actions: &[usize]| {
        actions
            .iter()
            .map(|&a| m.train.env.templates[a].name.as_str())
            .collect::<Vec<_>>()
            .join(",")
    };
    let row = |label: &str, s: &sapo::PolicyStats| {
        vec![
            label.to_owned(),
            format!("{:.4}", s.expected_reward),
            format!("{:.3}", s.expected_acceptance),
            format!("{:.1}", s.expected_length),
            names(&s.modal_actions),
        ]
    };
    let text = table(
        &["policy", "reward", "acceptance", "length", "modal"],
        &[row("initial", &report.initial), row("final", &report.final_stats)],
    );
    out.write("train.txt", &text)?;
    out.write_json("train_report.json", &report)?;
    Ok(text)
}

pub fn trace_export(trace_path: &Path, out: &Path, force: bool) -> Result<String, CliError> {
    let file = File::open(trace_path).map_err(|e| CliError::Config(format!("{}: {e}", trace_path.display())))?;
    let events: Vec<TraceEvent> = trace::read_jsonl(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", trace_path.display())))?;
    let out = OutDir::prepare(out, force)?;
    let text = latsim::render_text(&events, GANTT_WIDTH);
    out.write("gantt.txt", &text)?;
    out.write("gantt.svg", latsim::render_svg(&events))?;
    out.write_json("intervals.json", &latsim::intervals(&events))?;
    Ok(text)
}
