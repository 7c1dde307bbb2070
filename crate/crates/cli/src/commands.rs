use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lll_core::driver::{
    evaluate_report, inverse_eps_ratios, linear_fit, run_trials, sweep_dimension, sweep_epsilon,
    Mode, RefineTrigger, RrRounding, RunConfig, RunReport, SummaryTable, SweepPoint,
};
use lll_core::geometry::{normalize, Vector, UNIT_TOL};
use lll_core::learner::CheckMode;
use lll_core::lowerbound::{
    adversarial_subspace_angle, build_instance, exhaustive_exceedance, new_task_angle_stats,
    sample_complexity_ledger, tight_example, uniform_allocation, AngleStats, SampleLedger,
    MAX_EXHAUSTIVE,
};
use lll_core::refinement::{
    max_distance, round_sdp, solve_refinement_sdp_with, SolverMethod, SolverOptions,
};

use crate::config::{Settings, AUTO};
use crate::CliError;

pub const RUN_KEYS: &[&str] = &[
    "d",
    "k",
    "m",
    "N",
    "epsilon",
    "epsilon_acc",
    "acc_constant",
    "c_s",
    "seed",
    "trials",
    "mode",
    "check_mode",
    "refine_every",
    "rr_rounding",
    "solver",
    "solver_max_iters",
    "solver_tol",
    "perceptron_passes",
    "gamma",
];

pub const SWEEP_KEYS: &[&str] = &[
    "d",
    "k",
    "m",
    "N",
    "epsilon",
    "epsilon_acc",
    "acc_constant",
    "c_s",
    "seed",
    "trials",
    "mode",
    "check_mode",
    "refine_every",
    "rr_rounding",
    "solver",
    "solver_max_iters",
    "solver_tol",
    "perceptron_passes",
    "gamma",
    "d_grid",
    "epsilon_grid",
];

pub const LOWERBOUND_KEYS: &[&str] = &[
    "k",
    "n_random",
    "seed",
    "epsilon",
    "eps_vector",
    "trials",
    "d_cost",
];

pub const REFINE_KEYS: &[&str] = &[
    "input",
    "k",
    "c",
    "solver",
    "solver_max_iters",
    "solver_tol",
    "basis_out",
    "dump_sdp",
];

/// Largest default number of random tasks for the lower-bound harness.
const MAX_DEFAULT_RANDOM: usize = 4096;

pub fn run_defaults(mode: &str) -> Vec<(&'static str, String)> {
    let d = RunConfig::default();
    vec![
        ("d", d.d.to_string()),
        ("m", d.m.to_string()),
        ("N", d.n_per_task.to_string()),
        ("epsilon", d.epsilon.to_string()),
        ("epsilon_acc", AUTO.into()),
        ("acc_constant", d.acc_constant.to_string()),
        ("c_s", d.c_s.to_string()),
        ("seed", d.seed.to_string()),
        ("trials", d.trials.to_string()),
        ("mode", mode.into()),
        ("check_mode", d.check_mode.to_string()),
        ("refine_every", d.refine_every.to_string()),
        ("rr_rounding", d.rr_rounding.to_string()),
        ("solver", d.solver.method.to_string()),
        ("solver_max_iters", AUTO.into()),
        ("solver_tol", d.solver.tol.to_string()),
        ("perceptron_passes", d.perceptron_passes.to_string()),
        ("gamma", AUTO.into()),
    ]
}

fn parse_modes(raw: &str) -> Result<Vec<Mode>, CliError> {
    if raw.eq_ignore_ascii_case("all") {
        return Ok(Mode::ALL.to_vec());
    }
    raw.split(',')
        .map(|m| {
            m.parse()
                .map_err(|e: lll_core::Error| CliError::Config(e.to_string()))
        })
        .collect()
}

fn run_config(s: &Settings) -> Result<(RunConfig, Vec<Mode>), CliError> {
    let modes = parse_modes(s.require("mode")?)?;
    let cfg = RunConfig {
        d: s.get("d")?,
        k: s.get("k")?,
        m: s.get("m")?,
        n_per_task: s.get("N")?,
        epsilon: s.get("epsilon")?,
        epsilon_acc: s.get_opt("epsilon_acc")?,
        acc_constant: s.get("acc_constant")?,
        c_s: s.get("c_s")?,
        seed: s.get("seed")?,
        trials: s.get("trials")?,
        mode: modes[0],
        check_mode: s.get::<CheckMode>("check_mode")?,
        refine_every: s.get::<RefineTrigger>("refine_every")?,
        rr_rounding: s.get::<RrRounding>("rr_rounding")?,
        solver: SolverOptions {
            method: s.get::<SolverMethod>("solver")?,
            max_iters: s.get_opt("solver_max_iters")?,
            tol: s.get("solver_tol")?,
        },
        perceptron_passes: s.get("perceptron_passes")?,
        gamma: s.get_opt("gamma")?,
    };
    for &mode in &modes {
        RunConfig {
            mode,
            ..cfg.clone()
        }
        .validate()?;
    }
    Ok((cfg, modes))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn echo_config(dir: &Path, s: &Settings) -> Result<(), CliError> {
    create_dir(dir)?;
    write(&dir.join("config.resolved"), &s.to_text())
}

/// Plain-text invariant report for a set of runs, and whether any invariant or
/// solver check failed.
#[derive(Default)]
struct Audit {
    text: String,
    invariant_failures: usize,
    unconverged: usize,
}

impl Audit {
    fn add(&mut self, r: &RunReport, check_mode: CheckMode) {
        let failures = r.invariant_failures(check_mode);
        let unconverged = r.refinements.iter().filter(|e| !e.converged).count();
        let _ = writeln!(
            self.text,
            "mode={} trial={} seed={} final_avg_acc={:.6} final_min_acc={:.6} final_dim={} max_dim={} new_features={} \
             refinements={} unconverged={} violations={} angle={:.6} samples_total={} invariants={}",
            r.mode,
            r.trial,
            r.seed,
            r.final_accuracy(),
            r.final_min_accuracy(),
            r.final_dim(),
            r.max_dim(),
            r.new_feature_events.len(),
            r.refinements.len(),
            unconverged,
            r.violations.len(),
            r.final_angle(),
            r.samples_total,
            if failures.is_empty() { "ok" } else { "FAILED" }
        );
        for f in &failures {
            let _ = writeln!(self.text, "  invariant: {f}");
        }
        for v in &r.violations {
            let _ = writeln!(
                self.text,
                "  violation: task {} at step {} has error {:.6}",
                v.task, v.step, v.error
            );
        }
        self.invariant_failures += failures.len();
        self.unconverged += unconverged;
    }

    fn finish(self, dir: &Path) -> Result<(), CliError> {
        let mut text = self.text;
        let _ = writeln!(
            text,
            "summary: invariant_failures={} unconverged_refinements={}",
            self.invariant_failures, self.unconverged
        );
        write(&dir.join("report.txt"), &text)?;
        if self.invariant_failures > 0 {
            return Err(CliError::Invariant(format!(
                "{} invariant failure(s); see {}",
                self.invariant_failures,
                dir.join("report.txt").display()
            )));
        }
        if self.unconverged > 0 {
            return Err(CliError::Solver(format!(
                "{} refinement solve(s) did not converge; see {}",
                self.unconverged,
                dir.join("report.txt").display()
            )));
        }
        Ok(())
    }
}

pub fn simulate(s: &Settings, out: &Path) -> Result<(), CliError> {
    let (cfg, modes) = run_config(s)?;
    echo_config(out, s)?;
    let mut runs = format!("{}\n", RunReport::csv_header());
    let mut summary = format!("{}\n", SummaryTable::csv_header());
    let mut audit = Audit::default();
    for mode in modes {
        let start = Instant::now();
        let reports = run_trials(&RunConfig {
            mode,
            ..cfg.clone()
        })?;
        for r in &reports {
            runs.push_str(&r.csv_rows());
            audit.add(r, cfg.check_mode);
        }
        let table = evaluate_report(&reports)?;
        summary.push_str(&table.csv_rows());
        let last = table.rows.last().expect("m >= 1");
        let events: f64 = reports
            .iter()
            .map(|r| r.new_feature_events.len() as f64)
            .sum::<f64>()
            / reports.len() as f64;
        println!(
            "{mode:>5}: trials={} avg_acc={:.4} min_acc={:.4} feature_dim={:.2} new_features={events:.2} angle={:.4} \
             samples={:.0} ({:.1}s)",
            reports.len(),
            last.avg_acc.0,
            last.min_acc.0,
            last.feature_dim.0,
            last.angle.0,
            last.samples_cum.0,
            start.elapsed().as_secs_f64()
        );
    }
    write(&out.join("runs.csv"), &runs)?;
    write(&out.join("summary.csv"), &summary)?;
    audit.finish(out)
}

fn sweep_csv(
    axis: &str,
    points: &[SweepPoint],
    csv: &mut String,
    audit: &mut Audit,
    check_mode: CheckMode,
) {
    for p in points {
        for r in &p.reports {
            let _ = writeln!(
                csv,
                "{axis},{},{},{},{}",
                p.d, p.epsilon, r.trial, r.samples_total
            );
            audit.add(r, check_mode);
        }
    }
}

pub fn sweep(s: &Settings, out: &Path) -> Result<(), CliError> {
    let (cfg, modes) = run_config(s)?;
    if modes.len() != 1 {
        return Err(CliError::Config("sweep runs a single mode".into()));
    }
    let d_grid: Vec<usize> = s.get_list("d_grid")?;
    let eps_grid: Vec<f64> = s.get_list("epsilon_grid")?;
    if d_grid.is_empty() && eps_grid.is_empty() {
        return Err(CliError::Usage(
            "sweep needs a nonempty d_grid or epsilon_grid".into(),
        ));
    }
    for &d in &d_grid {
        RunConfig { d, ..cfg.clone() }.validate()?;
    }
    for &epsilon in &eps_grid {
        RunConfig {
            epsilon,
            ..cfg.clone()
        }
        .validate()?;
    }
    echo_config(out, s)?;

    let mut csv = String::from("axis,d,epsilon,trial,samples_total\n");
    let mut fits = String::from("axis,slope,intercept,r2\n");
    let mut audit = Audit::default();
    if !d_grid.is_empty() {
        let points = sweep_dimension(&cfg, &d_grid)?;
        sweep_csv("d", &points, &mut csv, &mut audit, cfg.check_mode);
        for p in &points {
            println!(
                "d={:>5} epsilon={} mean samples_total={:.1}",
                p.d,
                p.epsilon,
                p.mean_samples()
            );
        }
        if points.len() > 1 {
            let xs: Vec<f64> = points.iter().map(|p| p.d as f64).collect();
            let ys: Vec<f64> = points.iter().map(SweepPoint::mean_samples).collect();
            let f = linear_fit(&xs, &ys)?;
            println!(
                "samples_total vs d: slope={:.3} intercept={:.1} R^2={:.5}",
                f.slope, f.intercept, f.r2
            );
            let _ = writeln!(fits, "d,{},{},{}", f.slope, f.intercept, f.r2);
        }
    }
    if !eps_grid.is_empty() {
        let points = sweep_epsilon(&cfg, &eps_grid)?;
        sweep_csv("epsilon", &points, &mut csv, &mut audit, cfg.check_mode);
        for p in &points {
            println!(
                "d={:>5} epsilon={} mean samples_total={:.1}",
                p.d,
                p.epsilon,
                p.mean_samples()
            );
        }
        if points.len() > 1 {
            let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.epsilon).collect();
            let ys: Vec<f64> = points.iter().map(SweepPoint::mean_samples).collect();
            let f = linear_fit(&xs, &ys)?;
            println!(
                "samples_total vs 1/epsilon: slope={:.3} intercept={:.1} R^2={:.5}",
                f.slope, f.intercept, f.r2
            );
            let _ = writeln!(fits, "inv_epsilon,{},{},{}", f.slope, f.intercept, f.r2);
            let ratios: Vec<String> = inverse_eps_ratios(&points)
                .iter()
                .map(|r| format!("{r:.4}"))
                .collect();
            println!(
                "adjacent ratios to 1/epsilon scaling: {}",
                ratios.join(", ")
            );
        }
    }
    write(&out.join("sweep.csv"), &csv)?;
    write(&out.join("sweep_fit.csv"), &fits)?;
    audit.finish(out)
}

pub fn lowerbound(s: &Settings, out: &Path) -> Result<(), CliError> {
    let k: usize = s.get("k")?;
    let epsilon: f64 = s.get("epsilon")?;
    let seed: u64 = s.get("seed")?;
    let d_cost: usize = s.get("d_cost")?;
    let given: Vec<f64> = match s.raw("eps_vector") {
        None | Some(AUTO) => Vec::new(),
        Some(_) => s.get_list("eps_vector")?,
    };
    let eps = if given.is_empty() {
        uniform_allocation(k, epsilon)
    } else {
        given.clone()
    };
    let n_random = match s.get_opt::<usize>("n_random")? {
        Some(n) => n,
        None => 1usize
            .checked_shl((k / 2) as u32)
            .unwrap_or(usize::MAX)
            .min(MAX_DEFAULT_RANDOM),
    };
    let trials = s.get_opt::<usize>("trials")?.unwrap_or(n_random).max(1);
    let instance = build_instance(k, n_random, seed, &eps)?;
    echo_config(out, s)?;

    let mut report = String::new();
    let mut failures = Vec::new();
    let norm = eps.iter().map(|e| e * e).sum::<f64>().sqrt();
    let angle = adversarial_subspace_angle(&eps)?;
    let _ = writeln!(
        report,
        "k={k} d={} |S|={} random_tasks={n_random} seed={seed}",
        instance.d,
        instance.subset.len()
    );
    let _ = writeln!(
        report,
        "learned-span angle={angle:.9} arctan|eps|={:.9}",
        norm.atan()
    );
    if (angle - norm.atan()).abs() > 1e-6 {
        failures.push("learned-span angle differs from arctan |eps|".to_string());
    }

    let stats = new_task_angle_stats(&instance, trials)?;
    write(&out.join("lowerbound_angles.csv"), &angles_csv(&stats))?;
    let _ = writeln!(
        report,
        "new-task exceedance: {:.4} of {trials} at threshold {:.6} (floor 1-exp(-|S|/128) = {:.4})",
        stats.exceed_fraction, stats.threshold, stats.predicted_floor
    );
    if stats.subset_size >= 64 {
        let p = stats.predicted_floor;
        let slack = 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
        if stats.exceed_fraction < p - slack {
            failures.push(format!(
                "exceedance {} below {p} - {slack}",
                stats.exceed_fraction
            ));
        }
    }
    if instance.subset.len() <= MAX_EXHAUSTIVE.min(20) {
        let exact = exhaustive_exceedance(&instance)?;
        let _ = writeln!(
            report,
            "exhaustive exceedance over all patterns: {exact:.4}"
        );
    }

    let mut allocations = vec![("uniform".to_string(), uniform_allocation(k, epsilon))];
    if !given.is_empty() {
        allocations.push(("given".to_string(), given));
    }
    for skew in [0.5, 1.0, 1.5] {
        let raw: Vec<f64> = (0..k)
            .map(|i| 1.0 + skew * (i as f64 / (k - 1) as f64 - 0.5))
            .collect();
        let scale = epsilon / raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        allocations.push((
            format!("skew_{skew}"),
            raw.iter().map(|x| x * scale).collect(),
        ));
    }
    allocations.push((
        "uniform_x1.2".to_string(),
        uniform_allocation(k, 1.2 * epsilon),
    ));
    let mut ledger = format!("name,{}\n", SampleLedger::csv_header());
    for (name, alloc) in &allocations {
        if alloc.iter().any(|e| !(*e > 0.0 && *e < 0.5)) {
            let _ = writeln!(
                report,
                "allocation {name}: skipped (entries outside (0, 1/2))"
            );
            continue;
        }
        let l = sample_complexity_ledger(&instance, d_cost, epsilon, alloc)?;
        let _ = writeln!(ledger, "{name},{}", l.csv_row());
        let _ = writeln!(
            report,
            "allocation {name}: basis_cost={:.1} total={:.1} ratio_to_dk^1.5/eps={:.6} feasible={}",
            l.basis_cost, l.total, l.ratio, l.feasible
        );
        if l.feasible && l.ratio < 1.0 - 1e-9 {
            failures.push(format!("feasible allocation {name} beats the Hölder bound"));
        }
    }
    write(&out.join("lowerbound_ledger.csv"), &ledger)?;

    let tight = tight_example(k, epsilon / (k as f64).sqrt())?;
    let _ = writeln!(
        report,
        "tight example at eps_acc=eps/sqrt(k): max error {:.6}, mean error {:.6}",
        tight.max_error, tight.mean_error
    );
    for f in &failures {
        let _ = writeln!(report, "FAILED: {f}");
    }
    print!("{report}");
    write(&out.join("report.txt"), &report)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failures.join("; ")))
    }
}

fn angles_csv(stats: &AngleStats) -> String {
    let mut s = format!("{}\n", AngleStats::csv_header());
    for row in stats.csv_rows() {
        s.push_str(&row);
        s.push('\n');
    }
    s
}

/// One feature per nonempty line; `#` starts a comment.
pub fn parse_features(text: &str) -> Result<(Vec<Vector>, usize), CliError> {
    let mut rows = Vec::new();
    let mut renormalized = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        CliError::Config(format!("line {}: `{t}` is not a finite number", n + 1))
                    })
            })
            .collect::<Result<_, _>>()?;
        if let Some(first) = rows.first().map(|r: &Vector| r.len()) {
            if values.len() != first {
                return Err(CliError::Config(format!(
                    "line {}: {} entries, expected {first}",
                    n + 1,
                    values.len()
                )));
            }
        }
        let v = Vector::from_vec(values);
        if (v.norm() - 1.0).abs() > UNIT_TOL {
            renormalized += 1;
        }
        let unit =
            normalize(&v).map_err(|_| CliError::Config(format!("line {}: zero vector", n + 1)))?;
        rows.push(unit);
    }
    if rows.is_empty() {
        return Err(CliError::Config("feature file has no rows".into()));
    }
    Ok((rows, renormalized))
}

pub fn refine(s: &Settings, out: &Path) -> Result<(), CliError> {
    let input = PathBuf::from(s.require("input")?);
    let k: usize = s.get("k")?;
    let c: usize = s.get("c")?;
    let opts = SolverOptions {
        method: s.get("solver")?,
        max_iters: s.get_opt("solver_max_iters")?,
        tol: s.get("solver_tol")?,
    };
    let text = fs::read_to_string(&input)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?;
    let (w, renormalized) = parse_features(&text)?;
    if renormalized > 0 {
        eprintln!("warning: {renormalized} non-unit row(s) normalized");
    }
    let d = w[0].len();
    if k == 0 || k >= d {
        return Err(CliError::Config(format!(
            "need 1 <= k < d, got k={k}, d={d}"
        )));
    }
    echo_config(out, s)?;
    let start = Instant::now();
    let sol = solve_refinement_sdp_with(&w, k, &opts)?;
    let v = round_sdp(&sol, k, c)?;
    let dist = max_distance(&w, &v)?;
    println!("t* = {:.6}", sol.t);
    println!("lower bound = {:.6}", sol.lower_bound);
    println!("gap = {:.3e}", sol.gap());
    println!(
        "converged = {} ({} iterations, {})",
        sol.converged, sol.iterations, sol.method
    );
    println!("dims = {}", v.dim());
    println!("max distance = {dist:.6}");
    println!(
        "rounding bound sqrt(c/(c-1) t*) = {:.6}",
        (c as f64 / (c as f64 - 1.0) * sol.t.max(0.0)).sqrt()
    );
    println!("time = {:.3}s", start.elapsed().as_secs_f64());

    let basis_path = match s.raw("basis_out") {
        None | Some(AUTO) => out.join("basis.txt"),
        Some(p) => PathBuf::from(p),
    };
    let mut basis = String::new();
    for col in v.basis().column_iter() {
        let row: Vec<String> = col.iter().map(|x| format!("{x:e}")).collect();
        basis.push_str(&row.join(" "));
        basis.push('\n');
    }
    write(&basis_path, &basis)?;
    println!("basis written to {}", basis_path.display());
    if let Some(p) = s.raw("dump_sdp").filter(|p| *p != AUTO) {
        write(Path::new(p), &sol.to_text())?;
        println!("SDP solution written to {p}");
    }
    if !sol.converged {
        return Err(CliError::Solver(format!(
            "solver stopped with gap {:.3e}",
            sol.gap()
        )));
    }
    Ok(())
}
