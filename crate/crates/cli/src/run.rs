use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;
use voltvar::harness::{
    evaluate_dispatch, multiperiod_simulate, sample_scenarios, volatility_sweep, write_report_csv, write_sweep_csv,
    write_timeline_csv, DayProfile, Policy, PolicySummary, SimulationOptions, Summary,
};
use voltvar::robust::{ccg_solve, solve_dvo, write_trace_csv, BoxUncertainty, RobustOptions};
use voltvar::{assemble_compact, parse_network, scenario};
use voltvar_conic::MipOptions;

use crate::config::{Mode, RunConfig};

fn robust_options(cfg: &RunConfig) -> RobustOptions {
    RobustOptions {
        mip: MipOptions { rel_gap: cfg.gap, node_limit: cfg.node_limit, workers: cfg.workers, ..Default::default() },
        epsilon: cfg.epsilon,
        max_iterations: cfg.max_iterations,
        subproblem: cfg.subproblem.into(),
        record_timings: cfg.timings,
        ..Default::default()
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let net = parse_network(&cfg.network).with_context(|| format!("loading {}", cfg.network.display()))?;
    let model = assemble_compact(&net, &scenario::forecast(&net))?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let opts = robust_options(cfg);
    let kw = |pu: f64| net.base.kw(pu);
    let name = cfg.network.display().to_string();
    match cfg.mode {
        Mode::Dvo => {
            let s = solve_dvo(&model, &opts)?;
            s.gaps.write_csv(create(&cfg.out, "gaps.csv")?)?;
            write_json(
                &cfg.out,
                "dispatch.json",
                &json!({"mode": "dvo", "network": name, "loss_pu": s.loss, "loss_kw": kw(s.loss),
                        "optimal": s.optimal, "max_soc_gap": s.gaps.max_gap, "dispatch": s.dispatch}),
            )?;
            println!("DVO loss {:.6} p.u. ({:.3} kW), max cone gap {:.2e}", s.loss, kw(s.loss), s.gaps.max_gap);
            print_settings(&s.dispatch);
        }
        Mode::Rvo => {
            let u = BoxUncertainty::from_volatility(&model.d0, cfg.volatility)?;
            let r = ccg_solve(&model, &u, &opts)?;
            write_trace_csv(&r.state.trace, create(&cfg.out, "trace.csv")?)?;
            write_json(
                &cfg.out,
                "dispatch.json",
                &json!({"mode": "rvo", "network": name, "volatility": cfg.volatility,
                        "objective_pu": r.objective, "objective_kw": kw(r.objective),
                        "iterations": r.state.iteration, "converged": r.converged, "certified": r.certified,
                        "lower_bound_pu": r.state.lb, "worst_case": r.worst_d, "dispatch": r.dispatch}),
            )?;
            let verdict = if r.converged { "converged" } else { "stopped" };
            let plural = if r.state.iteration == 1 { "" } else { "s" };
            println!("{verdict} in {} iteration{plural}", r.state.iteration);
            println!("RVO worst-case loss {:.6} p.u. ({:.3} kW), gap {:.2e}", r.objective, kw(r.objective), r.state.ub - r.state.lb);
            if !r.certified {
                println!("worst case found heuristically (not certified)");
            }
            print_settings(&r.dispatch);
        }
        Mode::Evaluate => {
            let u = BoxUncertainty::from_volatility(&model.d0, cfg.volatility)?;
            let dvo = solve_dvo(&model, &opts)?;
            let rvo = ccg_solve(&model, &u, &opts)?;
            let samples = sample_scenarios(&u, cfg.samples, cfg.seed);
            let rd = evaluate_dispatch(&model, &dvo.dispatch.x, &samples, cfg.workers)?.with_seed(cfg.seed);
            let rr = evaluate_dispatch(&model, &rvo.dispatch.x, &samples, cfg.workers)?.with_seed(cfg.seed);
            write_report_csv(&model, &[("DVO", &rd), ("RVO", &rr)], create(&cfg.out, "report.csv")?)?;
            let summary = Summary {
                network: name,
                volatility: cfg.volatility,
                samples: cfg.samples,
                seed: cfg.seed,
                policies: vec![PolicySummary::new("DVO", &rd, dvo.loss), PolicySummary::new("RVO", &rr, rvo.objective)],
            };
            write_json(&cfg.out, "summary.json", &serde_json::to_value(&summary)?)?;
            println!("{:<6}{:>18}{:>14}", "policy", "E[loss] kW", "failure rate");
            for p in &summary.policies {
                let e = p.expected_loss_kw.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!("{:<6}{:>18}{:>13.0}%", p.policy, e, 100.0 * p.failure_rate);
            }
        }
        Mode::Sweep => {
            let rows = volatility_sweep(&model, &cfg.volatilities, &opts)?;
            write_sweep_csv(&rows, create(&cfg.out, "sweep.csv")?)?;
            println!("{:>10}{:>20}{:>12}", "volatility", "worst-case loss kW", "iterations");
            for r in &rows {
                println!("{:>10}{:>20.3}{:>12}", r.volatility, r.worst_case_loss_kw, r.iterations);
            }
        }
        Mode::Simulate => {
            let path = cfg.profile.as_ref().expect("validated");
            let profile = DayProfile::from_path(path)?;
            let sim = SimulationOptions {
                slow_minutes: cfg.slow_minutes,
                fast_minutes: cfg.fast_minutes,
                whole_horizon: cfg.whole_horizon,
                robust: opts,
            };
            let timelines = [Policy::Dvo, Policy::Rvo]
                .into_iter()
                .map(|p| multiperiod_simulate(&model, &profile, p, &sim))
                .collect::<Result<Vec<_>, _>>()?;
            write_timeline_csv(&model, &timelines, create(&cfg.out, "timeline.csv")?)?;
            for t in &timelines {
                println!(
                    "{}: {} tick(s) with violations, at most {} overvoltage bus(es)",
                    t.policy,
                    t.violating_ticks(),
                    t.max_overvoltage()
                );
            }
        }
    }
    Ok(())
}

fn print_settings(d: &voltvar::SlowDispatch) {
    let on: Vec<String> = d.msc.iter().filter(|m| m.on).map(|m| format!("{}{}", m.bus.0, m.phase)).collect();
    println!("capacitors on: {}", if on.is_empty() { "none".into() } else { on.join(" ") });
    for t in &d.taps {
        println!("regulator {}{}: {}", t.branch, t.phase, t.ratio);
    }
}

