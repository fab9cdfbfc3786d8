//! One function per stage. Each reads its inputs from the artifacts of
//! earlier stages, so a stage run on its own behaves exactly like the same
//! stage inside a pipeline.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::Value;

use bgwqsd_core::io::{read_kernel, write_kernel};
use bgwqsd_core::kernel::{build_kernel_exact, build_kernel_mc, solve_qsd, BuildMode, QsdOptions};
use bgwqsd_core::lyapunov::{
    check_moment_assumption, verify_assumption_e, verify_drift, DriftMode, EOptions, LyapunovWeight,
};
use bgwqsd_core::model::{validate_model, ModelSpec};
use bgwqsd_core::montecarlo::{
    estimate_theta0, simulate_with, yaglom_convergence, PathFate, Recording, SimOptions, Start,
};
use bgwqsd_core::qsdfamily::{auto_anchors, build_family, default_lambda_grid, estimate_upsilon0};
use bgwqsd_core::spectral::{check_primitivity, continuity_estimate, power_iterate};
use bgwqsd_core::{QsdEstimate, SpectralResult, StateVector, TruncatedKernel};

use crate::artifact::{
    artifact_path, as_f64s, as_state, kernel_fingerprint, num, nums, opt_num, state, write_json, Artifact, Obj,
    KERNEL_STATES, KERNEL_TRIPLETS,
};
use crate::config::{start_state, Anchors, ExperimentConfig, KernelMode, LambdaGrid, Stage};
use crate::CliError;

/// Everything a stage needs.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub spec: &'a ModelSpec,
    pub dir: &'a Path,
}

impl Context<'_> {
    fn header(&self, stage: Stage) -> Obj {
        Obj::new()
            .with("stage", stage.name())
            .with("model_digest", self.spec.digest())
    }

    /// Loads the artifact of `dep`, insisting it belongs to this model.
    fn input(&self, stage: Stage, dep: Stage) -> Result<Artifact, CliError> {
        let path = artifact_path(self.dir, dep);
        if !path.exists() {
            return Err(CliError::Dependency {
                stage,
                missing: dep,
                detail: format!("no artifact at {}", path.display()),
            });
        }
        let art = Artifact::load(self.dir, dep)?;
        if art.str("model_digest")? != self.spec.digest() {
            return Err(CliError::Dependency {
                stage,
                missing: dep,
                detail: "its artifact belongs to a different model".into(),
            });
        }
        Ok(art)
    }

    fn kernel(&self, stage: Stage) -> Result<(TruncatedKernel, String), CliError> {
        self.input(stage, Stage::Kernel)?;
        let k = read_kernel(self.dir.join(KERNEL_TRIPLETS), self.dir.join(KERNEL_STATES))
            .map_err(|e| CliError::stage(stage, e))?;
        Ok((k, kernel_fingerprint(self.dir)?))
    }

    /// The QSD artifact, which must have been computed on the current kernel.
    fn qsd(&self, stage: Stage, fingerprint: &str) -> Result<Artifact, CliError> {
        let art = self.input(stage, Stage::Qsd)?;
        if art.str("kernel_fingerprint")? != fingerprint {
            return Err(CliError::Dependency {
                stage,
                missing: Stage::Qsd,
                detail: "its artifact was computed on a different kernel".into(),
            });
        }
        Ok(art)
    }

    fn spectral(&self, stage: Stage) -> Result<SpectralResult, CliError> {
        let art = self.input(stage, Stage::Spectral)?;
        Ok(SpectralResult {
            lambda_star: art.f64("lambda_star")?,
            z_star: art.f64s("z_star")?,
            n0: art.get("n0")?.as_u64().map(|n| n as usize),
            iterations: art.u64("iterations")? as usize,
            residual: art.f64("residual")?,
            tol: art.f64("tol")?,
        })
    }
}

pub fn run(stage: Stage, ctx: &Context) -> Result<(), CliError> {
    ctx.cfg.check_seeds(stage)?;
    match stage {
        Stage::Validate => validate(ctx),
        Stage::Spectral => spectral(ctx),
        Stage::Kernel => kernel(ctx),
        Stage::Qsd => qsd(ctx),
        Stage::QsdFamily => family(ctx),
        Stage::Lyapunov => lyapunov(ctx),
        Stage::VerifyE => verify_e(ctx),
        Stage::Simulate => simulate(ctx),
        Stage::Yaglom => yaglom(ctx),
    }
}

fn validate(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.validate;
    let err = |e| CliError::stage(Stage::Validate, e);
    let rep = validate_model(ctx.spec, p.samples, p.seed.unwrap_or_default()).map_err(err)?;
    let prim = check_primitivity(ctx.spec, p.primitivity_steps).map_err(err)?;
    let cont = continuity_estimate(ctx.spec, p.continuity_pairs, p.seed.unwrap_or_default()).map_err(err)?;
    let faces: Vec<Value> = cont
        .faces
        .iter()
        .map(|f| {
            Obj::new()
                .with("support", f.support.clone())
                .with("modulus", num(f.modulus))
                .with("pairs", f.pairs)
                .into()
        })
        .collect();
    let out = ctx
        .header(Stage::Validate)
        .with("mating", ctx.spec.mating().name())
        .with("p", ctx.spec.p())
        .with("q", ctx.spec.q())
        .with("passed", rep.passed())
        .with("pairs_checked", rep.pairs_checked)
        .with("exhaustive", rep.exhaustive)
        .with("partial_certificate", rep.partial_certificate)
        .with(
            "violations",
            rep.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        )
        .with("primitivity_index", prim.n0)
        .with(
            "primitivity_failures",
            prim.failures.iter().map(|&(i, c)| vec![i, c]).collect::<Vec<_>>(),
        )
        .with(
            "face_continuity",
            Obj::new().with("certifying", cont.certifying).with("faces", faces),
        );
    write_json(&artifact_path(ctx.dir, Stage::Validate), out)
}

fn spectral(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.spectral;
    let s = power_iterate(ctx.spec, p.tol, p.max_iter).map_err(|e| CliError::stage(Stage::Spectral, e))?;
    let out = ctx
        .header(Stage::Spectral)
        .with("lambda_star", num(s.lambda_star))
        .with("z_star", nums(&s.z_star))
        .with("n0", s.n0)
        .with("residual", num(s.residual))
        .with("iterations", s.iterations)
        .with("tol", num(s.tol));
    write_json(&artifact_path(ctx.dir, Stage::Spectral), out)
}

fn kernel(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.kernel;
    let err = |e| CliError::stage(Stage::Kernel, e);
    let k = match p.mode {
        KernelMode::Exact => build_kernel_exact(ctx.spec, p.radius, p.cap),
        KernelMode::Mc => build_kernel_mc(ctx.spec, p.radius, p.samples, p.seed.unwrap_or_default()),
    }
    .map_err(err)?;
    write_kernel(&k, ctx.dir.join(KERNEL_TRIPLETS), ctx.dir.join(KERNEL_STATES)).map_err(err)?;
    let mut out = ctx.header(Stage::Kernel).with("radius", p.radius).with(
        "mode",
        match k.mode() {
            BuildMode::Exact => "exact",
            BuildMode::MonteCarlo { .. } => "mc",
            BuildMode::Synthetic => "synthetic",
        },
    );
    if let BuildMode::MonteCarlo { samples, seed } = k.mode() {
        out.set("samples", *samples);
        out.set("seed", *seed);
    }
    let max_escaped = k.escaped().iter().cloned().fold(0.0, f64::max);
    let out = out
        .with("states", k.len())
        .with("nnz", k.nnz())
        .with("max_escaped", num(max_escaped))
        .with("fingerprint", kernel_fingerprint(ctx.dir)?);
    write_json(&artifact_path(ctx.dir, Stage::Kernel), out)
}

fn qsd(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.qsd;
    let (k, fp) = ctx.kernel(Stage::Qsd)?;
    let opts = QsdOptions {
        tol: p.tol,
        max_iter: p.max_iter,
        j_range: p.j_range,
    };
    let q = solve_qsd(&k, &opts).map_err(|e| CliError::stage(Stage::Qsd, e))?;
    let classes = q.classes.as_ref().expect("solve_qsd decomposes the kernel");
    let class_json: Vec<Value> = classes
        .classes
        .iter()
        .map(|c| {
            Obj::new()
                .with(
                    "members",
                    c.members.iter().map(|&i| state(k.index().state(i))).collect::<Vec<_>>(),
                )
                .with("theta", num(c.theta))
                .with("trivial", c.trivial)
                .with("period", c.period)
                .into()
        })
        .collect();
    let j_json: Vec<Value> = q
        .j_estimates
        .iter()
        .map(|j| {
            Obj::new()
                .with("state", state(k.index().state(j.state)))
                .with("slope", num(j.slope))
                .with("j", j.j)
                .with("residual", num(j.residual))
                .into()
        })
        .collect();
    let out = ctx
        .header(Stage::Qsd)
        .with("kernel_fingerprint", fp)
        .with("radius", k.radius())
        .with("theta", num(q.theta))
        .with("residual_left", num(q.residual_left))
        .with("residual_right", num(q.residual_right))
        .with("iterations", q.iterations)
        .with("dense_fallback", q.dense_fallback)
        .with("nu", nums(&q.nu))
        .with("eta", nums(&q.eta))
        .with("theta_bar", num(classes.theta_bar))
        .with("classes", class_json)
        .with("j_range", vec![p.j_range.0, p.j_range.1])
        .with("j_estimates", j_json);
    write_json(&artifact_path(ctx.dir, Stage::Qsd), out)
}

fn family(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.qsd_family;
    let stage = Stage::QsdFamily;
    let s = ctx.spectral(stage)?;
    let (k, fp) = ctx.kernel(stage)?;
    let theta = ctx.qsd(stage, &fp)?.f64("theta")?;
    let anchors = match &p.anchors {
        Anchors::Auto => auto_anchors(&k, &s, p.anchor_count),
        Anchors::List(list) => list.iter().map(|v| StateVector::new(v.clone())).collect(),
    };
    let grid = match &p.lambda_grid {
        LambdaGrid::Default => default_lambda_grid(theta),
        LambdaGrid::List(v) => v.clone(),
    };
    let err = |e| CliError::stage(stage, e);
    let rep = build_family(&k, theta, &grid, &anchors, p.tail_tol).map_err(err)?;
    let ups = estimate_upsilon0(&k, p.upsilon_window, p.upsilon_tol).map_err(err)?;

    let entries: Vec<Value> = rep
        .entries
        .iter()
        .map(|e| {
            let mu: Vec<Value> =
                e.mu.iter()
                    .enumerate()
                    .filter(|(_, &m)| m != 0.0)
                    .map(|(i, &m)| Value::Array(vec![Value::from(i), num(m)]))
                    .collect();
            Obj::new()
                .with("lambda", num(e.lambda))
                .with("anchor", state(&e.anchor))
                .with("normalizer", num(e.normalizer))
                .with("defect", num(e.one_step_defect))
                .with("identity_residual", num(e.identity_residual))
                .with("terms", e.terms)
                .with("mu", mu)
                .into()
        })
        .collect();
    let trends: Vec<Value> = rep
        .trends
        .iter()
        .map(|t| {
            Obj::new()
                .with("lambda", num(t.lambda))
                .with("defects", nums(&t.defects))
                .with("monotone", t.monotone)
                .into()
        })
        .collect();
    let upsilon = Obj::new()
        .with("value", num(ups.upsilon0))
        .with("regression_rate", num(ups.regression_rate))
        .with("window", vec![ups.window.0, ups.window.1])
        .with("state", state(&ups.state))
        .with("consistent", ups.consistent);
    let out = ctx
        .header(stage)
        .with("kernel_fingerprint", fp)
        .with("theta", num(theta))
        .with("lambda_grid", nums(&grid))
        .with("anchors", anchors.iter().map(state).collect::<Vec<_>>())
        .with("tail_tol", num(p.tail_tol))
        .with("upsilon0", upsilon)
        .with("max_identity_residual", num(rep.max_identity_residual))
        .with("independence_gaps", nums(&rep.independence_gaps))
        .with("trends", trends)
        .with("entries", entries);
    write_json(&artifact_path(ctx.dir, stage), out)
}

fn lyapunov(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.lyapunov;
    let stage = Stage::Lyapunov;
    let s = ctx.spectral(stage)?;
    let theta0 = ctx.input(stage, Stage::Qsd)?.f64("theta")?;
    let mode = match p.mode {
        KernelMode::Exact => DriftMode::Exact { cap: p.cap },
        KernelMode::Mc => DriftMode::MonteCarlo {
            samples: p.samples,
            seed: p.seed.unwrap_or_default(),
        },
    };
    let moment = check_moment_assumption(&s, theta0, p.a);
    let rep = verify_drift(ctx.spec, &s, p.a, p.radius, &mode, theta0).map_err(|e| CliError::stage(stage, e))?;
    let rows: Vec<Value> = rep
        .rows
        .iter()
        .map(|r| {
            Obj::new()
                .with("state", state(&r.state))
                .with("q_a", num(r.q_a))
                .with("lhs", num(r.lhs))
                .with("ci", opt_num(r.ci))
                .into()
        })
        .collect();
    let trend = rep.trend.as_ref().map_or(Value::Null, |t| {
        Obj::new()
            .with("target", num(t.target))
            .with("band", num(t.band))
            .with(
                "ladder",
                t.ladder
                    .iter()
                    .map(|(k, z, r)| {
                        Obj::new()
                            .with("k", *k)
                            .with("state", state(z))
                            .with("ratio", num(*r))
                            .into()
                    })
                    .collect::<Vec<Value>>(),
            )
            .with("within_band", t.within_band)
            .with(
                "tail",
                t.tail
                    .iter()
                    .map(|(k, r)| Obj::new().with("k", *k).with("ratio", num(*r)).into())
                    .collect::<Vec<Value>>(),
            )
            .with("tail_monotone", t.tail_monotone)
            .with("passed", t.passed())
            .into()
    });
    let out = ctx
        .header(stage)
        .with("a", num(p.a))
        .with("radius", p.radius)
        .with(
            "mode",
            match p.mode {
                KernelMode::Exact => "exact",
                KernelMode::Mc => "mc",
            },
        )
        .with("theta0_hat", num(theta0))
        .with("lambda_a", num(s.lambda_star.powf(p.a)))
        .with("theta_a", num(rep.theta_a))
        .with("c_a", num(rep.c_a))
        .with("theta_a_below_theta0", rep.theta_a_below_theta0)
        .with("violation_free", rep.violation_free())
        .with(
            "violations",
            rep.violations
                .iter()
                .map(|(z, lhs, bound)| {
                    Obj::new()
                        .with("state", state(z))
                        .with("lhs", num(*lhs))
                        .with("bound", num(*bound))
                        .into()
                })
                .collect::<Vec<Value>>(),
        )
        .with("undetermined", rep.undetermined.iter().map(state).collect::<Vec<_>>())
        .with(
            "moment",
            Obj::new()
                .with("r", num(p.a))
                .with("pass", moment.pass)
                .with("margin", num(moment.margin))
                .with("r_min", num(moment.r_min))
                .with("reason", moment.reason),
        )
        .with("trend", trend)
        .with("rows", rows);
    write_json(&artifact_path(ctx.dir, stage), out)
}

fn verify_e(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.verify_e;
    let stage = Stage::VerifyE;
    let s = ctx.spectral(stage)?;
    let (k, fp) = ctx.kernel(stage)?;
    let theta0 = ctx.qsd(stage, &fp)?.f64("theta")?;
    let a = p.a.unwrap_or(ctx.cfg.lyapunov.a);
    let err = |e| CliError::stage(stage, e);
    let weight = LyapunovWeight::from_model(ctx.spec, &s, a, &k, theta0).map_err(err)?;
    let opts = EOptions {
        small_set: p.small_set.0.clone(),
        window: p.window,
        step_cap: p.step_cap,
        return_horizon: p.return_horizon,
        harnack_stab_tol: p.harnack_stab_tol,
    };
    let r = verify_assumption_e(&k, theta0, &weight, &opts).map_err(err)?;
    let v = &r.verdicts;
    let verdicts = Obj::new()
        .with("e1", v.e1)
        .with("e2_prime", v.e2_prime)
        .with("e3", v.e3)
        .with("e4", v.e4)
        .with("e2", v.e2)
        .with("all", v.all());
    let aperiodicity: Vec<Value> = r
        .aperiodicity
        .iter()
        .map(|ap| {
            Obj::new()
                .with("state", state(&ap.state))
                .with("period", ap.period)
                .with("pass", ap.pass)
                .into()
        })
        .collect();
    let out = ctx
        .header(stage)
        .with("kernel_fingerprint", fp)
        .with("a", num(a))
        .with("theta_a", num(weight.theta_a))
        .with("c_a", num(weight.c_a))
        .with("verdicts", verdicts)
        .with("theta0", num(r.theta0))
        .with("theta1", num(r.theta1))
        .with("theta2", num(r.theta2))
        .with("r1", r.r1)
        .with("small_set", r.small_set.iter().map(state).collect::<Vec<_>>())
        .with("reference", state(&r.reference))
        .with("n1", r.n1)
        .with("c1", num(r.c1))
        .with("c2", num(r.c2))
        .with("drift_excess", num(r.drift_excess))
        .with("c3", num(r.c3))
        .with("harnack_stabilized", r.harnack_stabilized)
        .with("n_phi2", r.n_phi2)
        .with("c_theta2", num(r.c_theta2))
        .with("phi2_identity_residual", num(r.phi2_identity_residual))
        .with("phi2_min_margin", num(r.phi2_min_margin))
        .with("aperiodicity", aperiodicity)
        .with("notes", r.notes.clone())
        .with("phi1", nums(&r.phi1))
        .with("phi2", nums(&r.phi2));
    write_json(&artifact_path(ctx.dir, stage), out)
}

fn table_path(dir: &Path, stage: Stage) -> std::path::PathBuf {
    dir.join(format!("{}.tsv", stage.name()))
}

fn write_table(path: &Path, text: String) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn simulate(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.simulate;
    let stage = Stage::Simulate;
    let z0 = start_state(&p.z0, ctx.spec.p())?;
    let opts = SimOptions {
        recording: Recording::None,
        population_cap: p.population_cap,
    };
    let seed = p.seed.unwrap_or_default();
    let b = simulate_with(ctx.spec, &Start::Fixed(z0.clone()), p.horizon, p.paths, seed, &opts)
        .map_err(|e| CliError::stage(stage, e))?;
    let fractions = b.survival_fractions();
    let mut extinctions = vec![0u64; p.horizon + 1];
    let mut censored = 0u64;
    for fate in &b.fates {
        match fate {
            PathFate::Extinct(n) => extinctions[*n as usize] += 1,
            PathFate::Censored | PathFate::Capped(_) => censored += 1,
        }
    }
    let extinct: u64 = extinctions.iter().sum();
    let mean_t = (extinct > 0).then(|| {
        extinctions
            .iter()
            .enumerate()
            .map(|(n, &c)| n as f64 * c as f64)
            .sum::<f64>()
            / extinct as f64
    });
    let theta = match estimate_theta0(&b) {
        Ok(est) => Obj::new()
            .with("theta_hat", num(est.theta_hat))
            .with("ci", nums(&[est.ci.0, est.ci.1]))
            .with("window", vec![est.window.0, est.window.1])
            .with("reason", Value::Null),
        Err(e) => Obj::new()
            .with("theta_hat", Value::Null)
            .with("ci", Value::Null)
            .with("window", Value::Null)
            .with("reason", e.to_string()),
    };
    let mut table = String::from("n\tsurvivors\tsurvival_fraction\n");
    for (n, (s, f)) in b.survivors.iter().zip(&fractions).enumerate() {
        writeln!(table, "{n}\t{s}\t{}", bgwqsd_core::io::sig17(*f)).unwrap();
    }
    write_table(&table_path(ctx.dir, stage), table)?;
    let out = ctx
        .header(stage)
        .with("z0", state(&z0))
        .with("horizon", p.horizon)
        .with("paths", p.paths)
        .with("seed", seed)
        .with("capped", b.capped)
        .with("survivors", b.survivors.clone())
        .with("survival_fraction", nums(&fractions))
        .with("extinctions", extinctions)
        // Paths alive at the horizon count as survivors but carry no
        // extinction time, so the mean below is over extinct paths only.
        .with("censored", censored)
        .with("mean_extinction_time", opt_num(mean_t))
        .with("theta0", theta);
    write_json(&artifact_path(ctx.dir, stage), out)
}

fn yaglom(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.yaglom;
    let stage = Stage::Yaglom;
    let (k, fp) = ctx.kernel(stage)?;
    let art = ctx.qsd(stage, &fp)?;
    let q = QsdEstimate {
        theta: art.f64("theta")?,
        nu: art.f64s("nu")?,
        eta: art.f64s("eta")?,
        residual_left: art.f64("residual_left")?,
        residual_right: art.f64("residual_right")?,
        iterations: art.u64("iterations")? as usize,
        dense_fallback: art.bool("dense_fallback")?,
        classes: None,
        j_estimates: Vec::new(),
    };
    let z0 = start_state(&p.z0, ctx.spec.p())?;
    let seed = p.seed.unwrap_or_default();
    let rep = yaglom_convergence(ctx.spec, &Start::Fixed(z0.clone()), &p.horizons, &k, &q, p.paths, seed)
        .map_err(|e| CliError::stage(stage, e))?;
    let mut table = String::from("n\tsurvivors\tsurvival_fraction\ttv\tnoise\n");
    let mut rows = Vec::new();
    for r in &rep.rows {
        let frac = r.survivors as f64 / p.paths as f64;
        let tv = r.tv.map_or("-".to_string(), bgwqsd_core::io::sig17);
        writeln!(
            table,
            "{}\t{}\t{}\t{tv}\t{}",
            r.n,
            r.survivors,
            bgwqsd_core::io::sig17(frac),
            bgwqsd_core::io::sig17(r.noise)
        )
        .unwrap();
        rows.push(Value::from(
            Obj::new()
                .with("n", r.n)
                .with("survivors", r.survivors)
                .with("survival_fraction", num(frac))
                .with("tv", opt_num(r.tv))
                .with("noise", num(r.noise)),
        ));
    }
    write_table(&table_path(ctx.dir, stage), table)?;
    let out = ctx
        .header(stage)
        .with("kernel_fingerprint", fp)
        .with("z0", state(&z0))
        .with("paths", p.paths)
        .with("seed", seed)
        .with("fit_horizons", rep.fit_horizons.clone())
        .with("gamma_hat", opt_num(rep.gamma_hat))
        .with("envelope_c", opt_num(rep.envelope_c))
        .with("gamma_ref", opt_num(rep.gamma_ref))
        .with("eventually_decreasing", rep.eventually_decreasing)
        .with("rows", rows);
    write_json(&artifact_path(ctx.dir, stage), out)
}

/// Reads `ν`, `η`, `θ` and the kernel back from disk.
pub fn qsd_from_artifacts(dir: &Path) -> Result<(TruncatedKernel, f64, Vec<f64>, Vec<f64>), CliError> {
    let k = read_kernel(dir.join(KERNEL_TRIPLETS), dir.join(KERNEL_STATES))
        .map_err(|e| CliError::Artifact(format!("kernel: {e}")))?;
    let art = Artifact::load(dir, Stage::Qsd)?;
    Ok((k, art.f64("theta")?, art.f64s("nu")?, art.f64s("eta")?))
}

/// Sparse `μ` and its anchor from one family entry.
pub fn family_entry(v: &Value) -> Option<(f64, StateVector, f64, Vec<(usize, f64)>)> {
    let mu = v
        .get("mu")?
        .as_array()?
        .iter()
        .map(|pair| {
            let xs = as_f64s(pair)?;
            Some((xs[0] as usize, xs[1]))
        })
        .collect::<Option<Vec<_>>>()?;
    Some((
        v.get("lambda")?.as_f64()?,
        as_state(v.get("anchor")?)?,
        v.get("normalizer")?.as_f64()?,
        mu,
    ))
}
