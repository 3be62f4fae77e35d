use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gaugempc::config::SystemConfig;
use gaugempc::evalsim::{benchmark_suite, BenchConfig};
use gaugempc::learner::hpsearch::{random_search, SearchSpace};
use gaugempc::learner::{
    train, validation_seed, NeuralPolicy, PolicyKind, TrainConfig, ValidationSet,
    WeightsFile, SAFETY_TOL,
};
use gaugempc::mpc::{CondensedMpc, LinearSystem};
use gaugempc::phase1::{max_violation_at, rollout_phase1, synthesize_affine, AffinePhaseOne, PhaseOne, STRICT_TOL};
use gaugempc::policy::{ControlPolicy, NeuralController, OracleController, PhaseOneController};
use gaugempc::polytope::{rci_iterate, RciOptions};
use gaugempc::{DVector, Error};
use serde_json::{json, Value};

use crate::{
    BenchArgs, Cli, CliError, CliResult, Command, EvalArgs, Exit, HpsearchArgs, Phase1Args, Preset, RciArgs, Report,
    RunDir, TrainArgs, TrainOptions,
};

pub(crate) fn dispatch(cli: &Cli) -> CliResult<Report> {
    let cfg = load_system(cli.system.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    // Inputs are checked before the run directory exists.
    preflight(&cli.command)?;
    let dir = RunDir::create(&cli.out, cli.run_name.as_deref(), cli.command.name(), seed)?;
    let (summary, text, exit) = match &cli.command {
        Command::Phase1(a) => phase1(&cfg, seed, a, &dir)?,
        Command::Rci(a) => rci(&cfg, a, &dir)?,
        Command::Train(a) => train_cmd(&cfg, seed, a, &dir)?,
        Command::Eval(a) => eval(&cfg, seed, a, &dir)?,
        Command::Bench(a) => bench(&cfg, seed, a, &dir)?,
        Command::Hpsearch(a) => hpsearch(&cfg, seed, a, &dir)?,
    };
    dir.write_manifest(cli.command.name(), &format!("{:?}", cli.command), seed)?;
    Ok(Report {
        run_dir: dir.path().to_path_buf(),
        summary,
        text,
        exit,
    })
}

type Outcome = (Value, String, Exit);

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_system(path: Option<&Path>) -> CliResult<SystemConfig> {
    match path {
        None => Ok(SystemConfig::bundled()),
        Some(p) => {
            require_file(p, "system file")?;
            Ok(SystemConfig::load(p)?)
        }
    }
}

fn phase1_path(arg: &Option<String>) -> Option<PathBuf> {
    arg.as_deref().filter(|s| *s != "lp").map(PathBuf::from)
}

fn preflight(command: &Command) -> CliResult<()> {
    let mut files: Vec<(PathBuf, &str)> = Vec::new();
    match command {
        Command::Phase1(_) => {}
        Command::Rci(a) => files.extend(a.phase1.clone().map(|p| (p, "Phase I file"))),
        Command::Train(a) => {
            files.extend(phase1_path(&a.phase1).map(|p| (p, "Phase I file")));
            files.extend(a.opts.config.clone().map(|p| (p, "training config")));
        }
        Command::Eval(a) => {
            files.extend(phase1_path(&a.phase1).map(|p| (p, "Phase I file")));
            files.extend(a.weights.clone().map(|p| (p, "weights file")));
        }
        Command::Bench(a) => {
            files.extend(phase1_path(&a.phase1).map(|p| (p, "Phase I file")));
            files.extend(a.weights.iter().cloned().map(|p| (p, "weights file")));
        }
        Command::Hpsearch(a) => {
            files.extend(phase1_path(&a.phase1).map(|p| (p, "Phase I file")));
            files.extend(a.opts.config.clone().map(|p| (p, "training config")));
        }
    }
    for (p, what) in files {
        require_file(&p, what)?;
    }
    Ok(())
}

/// Re-certifies a stored law on the system's S.
fn certified(sys: &LinearSystem, law: AffinePhaseOne) -> CliResult<AffinePhaseOne> {
    let law = AffinePhaseOne::from_law(sys, law.gain, law.offset)?;
    if law.margin > -STRICT_TOL {
        return Err(Error::PhaseOneInfeasible { best: law.margin }.into());
    }
    Ok(law)
}

/// `lp`, a law file, the `[phase1]` table of the system, or a fresh
/// synthesis, in that order.
fn resolve_phase1(arg: &Option<String>, cfg: &SystemConfig, sys: &LinearSystem) -> CliResult<PhaseOne> {
    match arg.as_deref() {
        Some("lp") => Ok(PhaseOne::Lp),
        Some(path) => {
            let law = AffinePhaseOne::load(Path::new(path))?;
            Ok(PhaseOne::Affine(certified(sys, law)?))
        }
        None => match &cfg.phase1 {
            Some(l) => {
                let law = AffinePhaseOne {
                    gain: l.gain.clone(),
                    offset: l.offset.clone(),
                    margin: f64::NAN,
                };
                Ok(PhaseOne::Affine(certified(sys, law)?))
            }
            None => Ok(PhaseOne::Affine(synthesize_affine(sys)?)),
        },
    }
}

fn phase1(cfg: &SystemConfig, seed: u64, a: &Phase1Args, dir: &RunDir) -> CliResult<Outcome> {
    let sys = cfg.system()?;
    let mpc = cfg.mpc()?;
    let law = synthesize_affine(&sys)?;
    law.save(&dir.path().join("phase1.json"))?;

    let states = sys.rci_set().sample_uniform(a.samples, seed)?;
    let mut worst_violation = f64::NEG_INFINITY;
    let mut mean_violation = 0.0;
    let mut min_margin = f64::INFINITY;
    let mut failures = 0usize;
    for x in &states {
        let v = max_violation_at(&sys, x, &law.action(x));
        worst_violation = worst_violation.max(v);
        mean_violation += v / states.len() as f64;
        match rollout_phase1(&mpc, &law, x) {
            Ok(r) => min_margin = min_margin.min(r.margin),
            Err(_) => failures += 1,
        }
    }
    let config_law_margin = match &cfg.phase1 {
        Some(l) => Some(AffinePhaseOne::from_law(&sys, l.gain.clone(), l.offset.clone())?.margin),
        None => None,
    };
    let report = json!({
        "margin": law.margin,
        "samples": states.len(),
        "max_violation": { "max": worst_violation, "mean": mean_violation },
        "rollout_margin_min": min_margin,
        "rollout_failures": failures,
        "config_law_margin": config_law_margin,
    });
    dir.write_json("certification.json", &report)?;
    let mut text = format!("Phase I law certified over S with margin {:.4e}\n", law.margin);
    let _ = writeln!(
        text,
        "{} samples: worst one-step violation {worst_violation:.4e}, smallest rollout slack {min_margin:.4e}, {failures} failures",
        states.len()
    );
    let exit = if failures > 0 || worst_violation >= 0.0 { Exit::Numerical } else { Exit::Ok };
    Ok((report, text, exit))
}

fn rci(cfg: &SystemConfig, a: &RciArgs, dir: &RunDir) -> CliResult<Outcome> {
    if !(a.margin >= 0.0 && a.margin.is_finite()) {
        return Err(CliError::usage("--margin must be nonnegative"));
    }
    if a.margin > 0.0 && !a.feedback {
        return Err(CliError::usage("--margin applies to --feedback only"));
    }
    let feedback = if a.feedback {
        let law = match &a.phase1 {
            Some(p) => {
                let l = AffinePhaseOne::load(p)?;
                (l.gain, l.offset)
            }
            None => {
                let l = cfg
                    .phase1
                    .as_ref()
                    .ok_or_else(|| CliError::usage("--feedback needs --phase1 or a [phase1] table in the system file"))?;
                (l.gain.clone(), l.offset.clone())
            }
        };
        Some(law)
    } else {
        None
    };
    let opts = RciOptions {
        max_iter: a.max_iter,
        margin: a.margin,
        feedback,
    };
    let s = &cfg.sets;
    let r = rci_iterate(&s.state, &s.input, &s.disturbance, &cfg.dynamics.a, &cfg.dynamics.b, &opts)?;
    let cheb = r.set.chebyshev()?;
    let report = json!({
        "set": r.set,
        "rows": r.set.n_rows(),
        "certified": r.certified,
        "iterations": r.iterations,
        "chebyshev_center": cheb.center.as_slice(),
        "chebyshev_radius": cheb.radius,
    });
    dir.write_json("rci.json", &report)?;
    let mut with_set = cfg.clone();
    with_set.sets.rci = Some(r.set.clone());
    dir.write("system.toml", with_set.to_toml_string()?)?;
    let text = format!(
        "{} set with {} rows after {} iterations ({}), Chebyshev radius {:.4}\n",
        if a.feedback { "invariant" } else { "maximal RCI" },
        r.set.n_rows(),
        r.iterations,
        if r.certified { "fixed point" } else { "NOT converged" },
        cheb.radius
    );
    let exit = if r.certified { Exit::Ok } else { Exit::Numerical };
    Ok((json!({ "rows": r.set.n_rows(), "certified": r.certified, "iterations": r.iterations, "chebyshev_radius": cheb.radius }), text, exit))
}

fn train_config(opts: &TrainOptions, seed: u64, seed_given: bool) -> CliResult<TrainConfig> {
    let kind: PolicyKind = opts.kind.into();
    let mut tc = match &opts.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let tc: TrainConfig =
                serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            tc
        }
        None => match opts.preset {
            Preset::Desk => TrainConfig::desk(kind),
            Preset::Full => TrainConfig::full(kind),
        },
    };
    if opts.config.is_none() || seed_given {
        tc.seed = seed;
    }
    if opts.config.is_some() && tc.kind != kind {
        log::info!("training config selects kind {}", tc.kind);
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = opts.$field {
                tc.$field = v.into();
            }
        };
    }
    set!(iterations);
    set!(width);
    set!(lr);
    set!(batch_size);
    set!(beta);
    set!(n_val);
    set!(validate_every);
    set!(squash);
    tc.check()?;
    Ok(tc)
}

fn train_cmd(cfg: &SystemConfig, seed: u64, a: &TrainArgs, dir: &RunDir) -> CliResult<Outcome> {
    let sys = cfg.system()?;
    let mpc = cfg.mpc()?;
    let tc = train_config(&a.opts, seed, true)?;
    let phase1 = match tc.kind {
        PolicyKind::Gauge => Some(resolve_phase1(&a.phase1, cfg, &sys)?),
        _ => None,
    };
    if let Some(PhaseOne::Affine(l)) = &phase1 {
        l.save(&dir.path().join("phase1.json"))?;
    }
    let start = Instant::now();
    let out = train(&mpc, phase1.as_ref(), &tc)?;
    let seconds = start.elapsed().as_secs_f64();
    WeightsFile::new(tc.clone(), out.policy.mlp.clone(), Some(out.optimizer.clone())).save(&dir.path().join("weights.json"))?;
    dir.write("trace.csv", out.trace.to_csv())?;
    dir.write("trace_timing.csv", out.trace.timing_csv())?;
    let cps = &out.trace.checkpoints;
    let summary = json!({
        "kind": tc.kind,
        "iterations": tc.iterations,
        "initial_delta": cps.first().map(|c| c.1),
        "final_delta": cps.last().map(|c| c.1),
        "best_delta": out.trace.best_delta,
        "best_iteration": out.trace.best_iteration,
        "final_loss": out.trace.loss.last(),
        "config": tc,
    });
    dir.write_json("train.json", &summary)?;
    let text = format!(
        "{} policy: best validation delta {:.4e} at iteration {} of {} ({seconds:.1} s)\n",
        tc.kind, out.trace.best_delta, out.trace.best_iteration, tc.iterations
    );
    Ok((summary, text, Exit::Ok))
}

/// A policy with a display name and whether it must stay feasible.
struct Named<'a> {
    name: String,
    safe: bool,
    inner: Box<dyn ControlPolicy + 'a>,
}

impl ControlPolicy for Named<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn plan(&self, x0: &DVector<f64>) -> gaugempc::Result<DVector<f64>> {
        self.inner.plan(x0)
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
}

fn load_networks(
    paths: &[PathBuf],
    cfg: &SystemConfig,
    sys: &LinearSystem,
    mpc: &CondensedMpc,
    phase1_arg: &Option<String>,
    want_phase1: bool,
) -> CliResult<(Vec<NeuralPolicy>, Option<PhaseOne>)> {
    let files = paths.iter().map(|p| WeightsFile::load(p)).collect::<gaugempc::Result<Vec<_>>>()?;
    let needs = want_phase1 || files.iter().any(|f| f.config.kind == PolicyKind::Gauge);
    let phase1 = if needs { Some(resolve_phase1(phase1_arg, cfg, sys)?) } else { None };
    let nets = files
        .into_iter()
        .map(|f| f.into_policy(mpc, phase1.as_ref()))
        .collect::<gaugempc::Result<Vec<_>>>()?;
    Ok((nets, phase1))
}

fn named_policies<'a>(
    nets: &'a [NeuralPolicy],
    mpc: &'a CondensedMpc,
    phase1: Option<&'a PhaseOne>,
    oracle: bool,
    phase1_policy: bool,
) -> Vec<Named<'a>> {
    let mut out: Vec<Named<'a>> = Vec::new();
    let mut push = |name: String, safe: bool, inner: Box<dyn ControlPolicy + 'a>| {
        let taken = |n: &str, out: &[Named<'a>]| out.iter().any(|p| p.name == n);
        let mut unique = name.clone();
        let mut k = 2;
        while taken(&unique, &out) {
            unique = format!("{name}#{k}");
            k += 1;
        }
        out.push(Named {
            name: unique,
            safe,
            inner,
        });
    };
    for net in nets {
        push(net.kind().to_string(), net.kind().is_safe(), Box::new(NeuralController { net, mpc }));
    }
    if oracle {
        push("oracle".into(), true, Box::new(OracleController::new(mpc)));
    }
    if let (true, Some(p1)) = (phase1_policy, phase1) {
        push("phase1".into(), true, Box::new(PhaseOneController { mpc, phase1: p1 }));
    }
    out
}

fn eval(cfg: &SystemConfig, seed: u64, a: &EvalArgs, dir: &RunDir) -> CliResult<Outcome> {
    let chosen = usize::from(a.weights.is_some()) + usize::from(a.oracle) + usize::from(a.phase1_policy);
    if chosen != 1 {
        return Err(CliError::usage("choose exactly one of --weights, --oracle, --phase1-policy"));
    }
    if a.n_val == 0 {
        return Err(CliError::usage("--n-val must be positive"));
    }
    let sys = cfg.system()?;
    let mpc = cfg.mpc()?;
    let paths: Vec<PathBuf> = a.weights.iter().cloned().collect();
    let (nets, phase1) = load_networks(&paths, cfg, &sys, &mpc, &a.phase1, a.phase1_policy)?;
    let policies = named_policies(&nets, &mpc, phase1.as_ref(), a.oracle, a.phase1_policy);
    let policy = &policies[0];

    let val = ValidationSet::new(&mpc, a.n_val, validation_seed(seed))?;
    let mut csv = String::from("index");
    for i in 0..mpc.n() {
        let _ = write!(csv, ",x{i}");
    }
    csv.push_str(",policy_cost,oracle_cost,max_residual\n");
    let (mut c_nn, mut c_mpc, mut worst) = (0.0, 0.0, f64::NEG_INFINITY);
    for (j, (x0, &oc)) in val.states.iter().zip(&val.oracle_costs).enumerate() {
        let u = policy.plan(x0)?;
        let cost = mpc.trajectory_cost(x0, &u);
        let r = mpc.max_residual(x0, &u);
        c_nn += cost;
        c_mpc += oc;
        worst = worst.max(r);
        let _ = write!(csv, "{j}");
        for v in x0.iter() {
            let _ = write!(csv, ",{v:e}");
        }
        let _ = writeln!(csv, ",{cost:e},{oc:e},{r:e}");
    }
    let delta = (c_nn - c_mpc) / c_mpc;
    dir.write("eval.csv", csv)?;
    let n = val.states.len() as f64;
    let summary = json!({
        "policy": policy.name,
        "n_val": val.states.len(),
        "delta": delta,
        "mean_policy_cost": c_nn / n,
        "mean_oracle_cost": c_mpc / n,
        "max_residual": worst,
    });
    dir.write_json("eval.json", &summary)?;
    let mut text = format!(
        "{}: delta {delta:.4e} over {} validation states (worst constraint residual {worst:.2e})\n",
        policy.name,
        val.states.len()
    );
    let exit = if policy.safe && worst > SAFETY_TOL {
        let _ = writeln!(text, "safe policy left the feasible set");
        Exit::Safety
    } else {
        Exit::Ok
    };
    Ok((summary, text, exit))
}

fn bench(cfg: &SystemConfig, seed: u64, a: &BenchArgs, dir: &RunDir) -> CliResult<Outcome> {
    if a.weights.is_empty() && !a.oracle && !a.phase1_policy {
        return Err(CliError::usage("nothing to benchmark: pass --weights, --oracle or --phase1-policy"));
    }
    let sys = cfg.system()?;
    let mpc = cfg.mpc()?;
    let (nets, phase1) = load_networks(&a.weights, cfg, &sys, &mpc, &a.phase1, a.phase1_policy)?;
    let policies = named_policies(&nets, &mpc, phase1.as_ref(), a.oracle, a.phase1_policy);
    let refs: Vec<&dyn ControlPolicy> = policies.iter().map(|p| p as &dyn ControlPolicy).collect();
    let bc = BenchConfig {
        n_traj: a.n_traj,
        steps: a.steps,
        alpha: a.alpha,
        seeds: if a.seeds.is_empty() { vec![seed] } else { a.seeds.clone() },
        warmup: a.warmup,
    };
    let val = if a.n_val > 0 {
        Some(ValidationSet::new(&mpc, a.n_val, validation_seed(seed))?)
    } else {
        None
    };
    let table = benchmark_suite(&refs, &mpc, val.as_ref(), &bc)?;
    dir.write("bench.csv", table.to_csv())?;
    dir.write("bench_timing.csv", table.timing_csv())?;
    dir.write("quartiles.csv", table.quartiles_csv())?;
    dir.write("timing_summary.csv", table.timing_summary_csv())?;

    let mut text = String::from("policy        median cost   violations  failures  mean action time\n");
    let mut per_policy = Vec::new();
    let mut exit = Exit::Ok;
    for p in &policies {
        let s = table.summary(&p.name).expect("every policy ran");
        let _ = writeln!(
            text,
            "{:<12}  {:>11.4}   {:>10}  {:>8}  {:>12.3e} s",
            s.policy, s.cost_quantiles[2], s.violations, s.failures, s.mean_action_seconds
        );
        if p.safe && (s.violations > 0 || s.failures > 0) {
            exit = Exit::Safety;
        }
        per_policy.push(json!({
            "policy": s.policy,
            "safe": p.safe,
            "trajectories": s.trajectories,
            "failures": s.failures,
            "violations": s.violations,
            "cost_quartiles": s.cost_quantiles[1..4],
            "mean_action_seconds": s.mean_action_seconds,
            "delta_open_loop": s.delta_open_loop,
        }));
    }
    if exit == Exit::Safety {
        text.push_str("a safe policy violated S or failed\n");
    }
    let summary = json!({ "rows": table.rows.len(), "policies": per_policy });
    Ok((summary, text, exit))
}

fn hpsearch(cfg: &SystemConfig, seed: u64, a: &HpsearchArgs, dir: &RunDir) -> CliResult<Outcome> {
    if a.trials == 0 {
        return Err(CliError::usage("--trials must be positive"));
    }
    let sys = cfg.system()?;
    let mpc = cfg.mpc()?;
    let base = train_config(&a.opts, seed, true)?;
    let phase1 = match base.kind {
        PolicyKind::Gauge => Some(resolve_phase1(&a.phase1, cfg, &sys)?),
        _ => None,
    };
    let space = SearchSpace {
        trials: a.trials,
        ..SearchSpace::default()
    };
    let val = ValidationSet::new(&mpc, base.n_val, validation_seed(seed))?;
    let trials = random_search(&mpc, phase1.as_ref(), &base, &space, seed, &val)?;
    let mut csv = String::from("trial,width,batch_size,lr,seed,delta,error\n");
    for (k, t) in trials.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{k},{},{},{:e},{},{},{}",
            t.config.width,
            t.config.batch_size,
            t.config.lr,
            t.config.seed,
            t.delta.map(|d| format!("{d:e}")).unwrap_or_default(),
            t.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        );
    }
    dir.write("trials.csv", csv)?;
    let best = gaugempc::learner::hpsearch::best(&trials);
    let summary = match best {
        Some(t) => {
            dir.write_json("best.json", &t.config)?;
            json!({ "trials": trials.len(), "best_delta": t.delta, "best": t.config })
        }
        None => json!({ "trials": trials.len(), "best_delta": null }),
    };
    let text = match best {
        Some(t) => format!(
            "best of {} trials: width {}, batch {}, lr {:.2e}, delta {:.4e}\n",
            trials.len(),
            t.config.width,
            t.config.batch_size,
            t.config.lr,
            t.delta.unwrap_or(f64::NAN)
        ),
        None => format!("all {} trials failed\n", trials.len()),
    };
    let exit = if best.is_some() { Exit::Ok } else { Exit::Numerical };
    Ok((summary, text, exit))
}
