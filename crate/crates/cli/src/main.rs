use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mtgl_core::connectivity::{p_conn_bounds, p_conn_brute, p_conn_exact};
use mtgl_core::cpp::{full_alpha, jump_law, terminal_prob_convolution, terminal_prob_formula, verify_representation, DEFAULT_CAP_MASS};
use mtgl_core::experiments::{
    cgf_experiment, gw_explosion, load_config, mc_fluctuations_with_stats, replicates_csv, resolve_seed, to_json, write_json,
    Config, Report, RunManifest, Stopwatch, Tolerances, SEED_ENV,
};
use mtgl_core::model::{criticality, solve_dual, solve_dual_with, DEFAULT_DUAL_TOL, DEFAULT_EPS_CRIT};
use mtgl_core::rates::{
    build_context, build_k_context, cpp_rates, predicted_covariances, rate_i, rate_i_giant, rate_i_sub, rate_j,
    rate_j_sub, CgfVariant, CppRate, DualMatrices,
};
use mtgl_core::sim::run_batch;
use mtgl_core::tree::{h_value, mass_identities, phi_closed, tau_enum, tau_log, TAU_ENUM_MAX};
use mtgl_core::{validate_model, Error as CoreError, TypeVector, ValidatedModel};

#[derive(Parser, Debug)]
#[command(name = "mtgl", version, about = "Sparse multi-type random graphs: simulation, compound-Poisson laws and rate functions")]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    format: Format,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write the JSON report to this file (plus a .timing.json sidecar).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Model checks.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Characteristic equation.
    #[command(subcommand)]
    Dual(DualCmd),
    /// Tree counts and cluster weights.
    #[command(subcommand)]
    Tree(TreeCmd),
    /// Connection probabilities.
    #[command(subcommand)]
    Conn(ConnCmd),
    /// Graph simulation.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Compound-Poisson representation.
    #[command(subcommand)]
    Cpp(CppCmd),
    /// Rate functions.
    #[command(subcommand)]
    Rates(RatesCmd),
    /// Monte Carlo and expansion checks.
    #[command(subcommand)]
    Mc(McCmd),
}

#[derive(Args, Debug)]
struct ModelArg {
    /// Model config file.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct KArg {
    /// Type vector as comma-separated counts, e.g. 1,2.
    #[arg(long)]
    k: String,
}

#[derive(Subcommand, Debug)]
enum ModelCmd {
    Validate(ModelArg),
    Criticality {
        #[command(flatten)]
        m: ModelArg,
        #[arg(long, default_value_t = DEFAULT_EPS_CRIT)]
        eps: f64,
    },
}

#[derive(Subcommand, Debug)]
enum DualCmd {
    Solve {
        #[command(flatten)]
        m: ModelArg,
        #[arg(long, default_value_t = DEFAULT_DUAL_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_EPS_CRIT)]
        eps: f64,
    },
}

#[derive(Subcommand, Debug)]
enum TreeCmd {
    Tau {
        #[command(flatten)]
        m: ModelArg,
        #[command(flatten)]
        k: KArg,
    },
    H {
        #[command(flatten)]
        m: ModelArg,
        #[command(flatten)]
        k: KArg,
    },
    Identities {
        #[command(flatten)]
        m: ModelArg,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

#[derive(Subcommand, Debug)]
enum ConnCmd {
    Exact {
        #[command(flatten)]
        m: ModelArg,
        #[command(flatten)]
        k: KArg,
    },
    Brute {
        #[command(flatten)]
        m: ModelArg,
        #[command(flatten)]
        k: KArg,
    },
    Bounds {
        #[command(flatten)]
        m: ModelArg,
        #[command(flatten)]
        k: KArg,
        /// Anchor type r with k_r >= 1.
        #[arg(long)]
        anchor: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct BatchArgs {
    #[command(flatten)]
    m: ModelArg,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tracked type vectors, e.g. "1,0;2,1".
    #[arg(long = "track-k")]
    track_k: Option<String>,
    /// Write one CSV row per replicate to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum SimCmd {
    Run(BatchArgs),
}

#[derive(Args, Debug)]
struct AlphaArgs {
    #[command(flatten)]
    m: ModelArg,
    /// Truncation levels, comma separated (default: the model's μⁿ).
    #[arg(long)]
    alpha: Option<String>,
}

#[derive(Subcommand, Debug)]
enum CppCmd {
    Law {
        #[command(flatten)]
        a: AlphaArgs,
        #[arg(long, default_value_t = DEFAULT_CAP_MASS)]
        cap_mass: f64,
    },
    Terminal {
        #[command(flatten)]
        a: AlphaArgs,
    },
    Verify {
        #[command(flatten)]
        a: AlphaArgs,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Which {
    #[value(name = "I")]
    GiantI,
    #[value(name = "J")]
    J,
    #[value(name = "i")]
    SmallI,
    #[value(name = "Jsub")]
    Jsub,
    #[value(name = "isub")]
    Isub,
    #[value(name = "j1")]
    J1,
    #[value(name = "j2")]
    J2,
    #[value(name = "j3")]
    J3,
}

#[derive(Subcommand, Debug)]
enum RatesCmd {
    Eval {
        #[command(flatten)]
        m: ModelArg,
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        k: Option<String>,
        /// Argument: a scalar, or comma-separated for vector rates.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    Covariance {
        #[command(flatten)]
        m: ModelArg,
        #[arg(long = "track-k")]
        track_k: Option<String>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Poisson,
    FixedCount,
}

#[derive(Subcommand, Debug)]
enum McCmd {
    Fluctuations(BatchArgs),
    Cgf {
        #[command(flatten)]
        m: ModelArg,
        /// Scale n (default: the model's n).
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        #[arg(long, value_enum, default_value_t = VariantArg::Poisson)]
        variant: VariantArg,
        /// Table radius of the limiting jump law.
        #[arg(long, default_value_t = 40)]
        radius: u32,
    },
    Gw {
        #[command(flatten)]
        m: ModelArg,
        #[arg(long, default_value_t = 0)]
        root: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10_000)]
        cap: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .downcast_ref::<CoreError>()
                .map(CoreError::is_validation)
                .unwrap_or(true);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}

/// The argument list with output-only flags removed; this identifies the run.
fn command_line() -> String {
    let skip = ["--out", "--csv", "--threads", "--format"];
    let mut out = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if skip.contains(&a.as_str()) {
            args.next();
        } else if !skip.iter().any(|s| a.starts_with(&format!("{s}="))) {
            out.push(a);
        }
    }
    out.join(" ")
}

fn load(path: &Path) -> Result<(Config, ValidatedModel)> {
    let cfg = load_config(path).with_context(|| format!("reading {}", path.display()))?;
    let model = validate_model(&cfg.model)?;
    Ok((cfg, model))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| CoreError::PreconditionViolated(format!("bad {what} entry {p:?}")).into()))
        .collect()
}

fn parse_k(s: &str) -> Result<TypeVector> {
    Ok(TypeVector::new(parse_list(s, "type vector")?))
}

fn parse_ks(s: &str) -> Result<Vec<TypeVector>> {
    s.split(';').filter(|p| !p.trim().is_empty()).map(parse_k).collect()
}

fn units(d: usize) -> Vec<TypeVector> {
    (0..d).map(|r| TypeVector::unit(d, r)).collect()
}

struct Output {
    manifest: RunManifest,
    result: Value,
    ok: bool,
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(CoreError::PreconditionViolated("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let watch = Stopwatch::start();
    let cmd = command_line();
    let env_seed = std::env::var(SEED_ENV).ok();
    let plain = |digest: &str, result: Value| Output {
        manifest: RunManifest::new(cmd.clone(), Some(digest.to_string()), None),
        result,
        ok: true,
    };
    let out = match cli.command {
        Command::Model(ModelCmd::Validate(m)) => {
            let (cfg, model) = load(&m.model)?;
            let mut v = json!({"valid": true, "types": model.labels(), "n": model.n(), "counts": model.counts()});
            if let Some(w) = model.clamping_warning() {
                v["warnings"] = json!([w]);
            }
            plain(&cfg.digest, v)
        }
        Command::Model(ModelCmd::Criticality { m, eps }) => {
            let (cfg, model) = load(&m.model)?;
            plain(&cfg.digest, serde_json::to_value(criticality(&model, eps)?)?)
        }
        Command::Dual(DualCmd::Solve { m, tol, eps }) => {
            let (cfg, model) = load(&m.model)?;
            let dual = solve_dual_with(&model, tol, eps)?;
            let mut v = serde_json::to_value(&dual)?;
            v["q"] = json!(dual.q(model.kappa()));
            plain(&cfg.digest, v)
        }
        Command::Tree(TreeCmd::Tau { m, k }) => {
            let (cfg, model) = load(&m.model)?;
            let k = parse_k(&k.k)?;
            let lt = tau_log(&k, model.kappa())?;
            let mut v = json!({"k": k, "log_tau": lt, "tau": lt.exp()});
            if k.total() <= TAU_ENUM_MAX {
                v["tau_enum"] = json!(tau_enum(&k, model.kappa())?);
            }
            plain(&cfg.digest, v)
        }
        Command::Tree(TreeCmd::H { m, k }) => {
            let (cfg, model) = load(&m.model)?;
            let k = parse_k(&k.k)?;
            let dual = solve_dual(&model, DEFAULT_DUAL_TOL)?;
            let (mu_form, c_form) = h_value(&k, &model, &dual)?;
            plain(&cfg.digest, json!({"k": k, "mu_form": mu_form, "c_form": c_form}))
        }
        Command::Tree(TreeCmd::Identities { m, tol }) => {
            let (cfg, model) = load(&m.model)?;
            let dual = solve_dual(&model, DEFAULT_DUAL_TOL)?;
            let ids = mass_identities(&model, &dual, tol)?;
            let v = json!({
                "identities": ids,
                "targets": {
                    "q": dual.q(model.kappa()),
                    "c": dual.c.as_slice(),
                    "phi": rows(&phi_closed(model.kappa(), &dual.c)?),
                },
            });
            plain(&cfg.digest, v)
        }
        Command::Conn(c) => {
            let (m, k) = match &c {
                ConnCmd::Exact { m, k } | ConnCmd::Brute { m, k } | ConnCmd::Bounds { m, k, .. } => (m, k),
            };
            let (cfg, model) = load(&m.model)?;
            let k = parse_k(&k.k)?;
            let v = match c {
                ConnCmd::Exact { .. } => serde_json::to_value(p_conn_exact(&k, model.n(), model.kappa())?)?,
                ConnCmd::Brute { .. } => serde_json::to_value(p_conn_brute(&k, model.n(), model.kappa())?)?,
                ConnCmd::Bounds { anchor, .. } => {
                    let ambient = TypeVector::new(model.counts().iter().map(|&x| x as u32).collect());
                    serde_json::to_value(p_conn_bounds(&k, model.n(), model.kappa(), anchor, Some(&ambient))?)?
                }
            };
            plain(&cfg.digest, v)
        }
        Command::Sim(SimCmd::Run(b)) => {
            let (cfg, model) = load(&b.m.model)?;
            let seed = resolve_seed(b.seed, env_seed.as_deref(), cfg.seed)?;
            let ks = match &b.track_k {
                Some(s) => parse_ks(s)?,
                None => cfg.track.clone(),
            };
            let r = b.replicates.or(cfg.replicates).unwrap_or(100);
            let stats = run_batch(&model, r, seed.0, &ks)?;
            let manifest = RunManifest::new(cmd.clone(), Some(cfg.digest.clone()), Some(seed));
            if let Some(path) = &b.csv {
                std::fs::write(path, replicates_csv(&manifest, &stats, model.labels())?)?;
            }
            let summary = json!({
                "replicates": stats.replicates,
                "tracked": stats.tracked,
                "centering": stats.centering,
                "giant_mean": stats.giant_mean,
                "giant_cov": rows(&stats.giant_cov),
                "t_mean": stats.t_mean,
                "t_cov": rows(&stats.t_cov),
                "components_mean": stats.components_mean,
                "components_var": stats.components_var,
            });
            Output { manifest, result: summary, ok: true }
        }
        Command::Cpp(c) => {
            let a = match &c {
                CppCmd::Law { a, .. } | CppCmd::Terminal { a } | CppCmd::Verify { a, .. } => a,
            };
            let (cfg, model) = load(&a.m.model)?;
            let alpha = match &a.alpha {
                Some(s) => parse_list(s, "alpha")?,
                None => full_alpha(&model),
            };
            match c {
                CppCmd::Law { cap_mass, .. } => plain(&cfg.digest, serde_json::to_value(jump_law(&model, &alpha, cap_mass)?)?),
                CppCmd::Terminal { .. } => {
                    let formula = terminal_prob_formula(&model, &alpha)?;
                    let conv = terminal_prob_convolution(&model, &alpha).ok();
                    plain(&cfg.digest, json!({"formula": formula, "convolution": conv}))
                }
                CppCmd::Verify { tol, .. } => {
                    let rep = verify_representation(&model, &alpha, tol)?;
                    let ok = rep.pass;
                    Output { ok, ..plain(&cfg.digest, serde_json::to_value(rep)?) }
                }
            }
        }
        Command::Rates(RatesCmd::Eval { m, which, k, x }) => {
            let (cfg, model) = load(&m.model)?;
            let dual = solve_dual(&model, DEFAULT_DUAL_TOL)?;
            let xs: Vec<f64> = parse_list(&x, "x")?;
            let kv = k.as_deref().map(parse_k).transpose()?;
            let need_k = || kv.clone().ok_or_else(|| CoreError::PreconditionViolated("--k is required".into()));
            let scalar = || {
                if xs.len() == 1 {
                    Ok(xs[0])
                } else {
                    Err(CoreError::PreconditionViolated("x must be a scalar".into()))
                }
            };
            let vector = || {
                if xs.len() == model.dim() {
                    Ok(nalgebra::DVector::from_vec(xs.clone()))
                } else {
                    Err(CoreError::PreconditionViolated(format!("x needs {} entries", model.dim())))
                }
            };
            let value = match which {
                Which::GiantI => rate_i_giant(&build_context(&model, &dual)?, &vector()?),
                Which::J => {
                    let ctx = build_context(&model, &dual)?;
                    rate_j(&ctx, &build_k_context(&ctx, &need_k()?)?, scalar()?)?
                }
                Which::SmallI => rate_i(&build_context(&model, &dual)?, scalar()?)?,
                Which::Jsub => rate_j_sub(&DualMatrices::new(&model, &dual)?, &need_k()?, scalar()?)?,
                Which::Isub => rate_i_sub(&DualMatrices::new(&model, &dual)?, scalar()?)?,
                Which::J1 => cpp_rates(&DualMatrices::new(&model, &dual)?, &CppRate::J1, &vector()?)?,
                Which::J2 => cpp_rates(&DualMatrices::new(&model, &dual)?, &CppRate::J2, &vector()?)?,
                Which::J3 => cpp_rates(&DualMatrices::new(&model, &dual)?, &CppRate::J3(need_k()?), &vector()?)?,
            };
            let name = which.to_possible_value().expect("named").get_name().to_string();
            plain(&cfg.digest, json!({"which": name, "k": kv, "x": xs, "value": value}))
        }
        Command::Rates(RatesCmd::Covariance { m, track_k }) => {
            let (cfg, model) = load(&m.model)?;
            let dual = solve_dual(&model, DEFAULT_DUAL_TOL)?;
            let ks = match track_k {
                Some(s) => parse_ks(&s)?,
                None if !cfg.track.is_empty() => cfg.track.clone(),
                None => units(model.dim()),
            };
            let ctx = build_context(&model, &dual)?;
            plain(&cfg.digest, serde_json::to_value(predicted_covariances(&ctx, &ks)?)?)
        }
        Command::Mc(McCmd::Fluctuations(b)) => {
            let (cfg, model) = load(&b.m.model)?;
            let seed = resolve_seed(b.seed, env_seed.as_deref(), cfg.seed)?;
            let ks = match &b.track_k {
                Some(s) => parse_ks(s)?,
                None if !cfg.track.is_empty() => cfg.track.clone(),
                None => units(model.dim()),
            };
            let r = b.replicates.or(cfg.replicates).unwrap_or(10_000);
            let (rep, stats) = mc_fluctuations_with_stats(&model, r, seed.0, &ks, Tolerances::default())?;
            let manifest = RunManifest::new(cmd.clone(), Some(cfg.digest.clone()), Some(seed));
            if let Some(path) = &b.csv {
                std::fs::write(path, replicates_csv(&manifest, &stats, model.labels())?)?;
            }
            let ok = rep.pass;
            Output { manifest, result: serde_json::to_value(rep)?, ok }
        }
        Command::Mc(McCmd::Cgf { m, n, theta, z, variant, radius }) => {
            let (cfg, model) = load(&m.model)?;
            let z = nalgebra::DVector::from_vec(parse_list(&z, "z")?);
            let variant = match variant {
                VariantArg::Poisson => CgfVariant::Poisson,
                VariantArg::FixedCount => CgfVariant::FixedCount,
            };
            let rep = cgf_experiment(
                &model,
                radius,
                n.unwrap_or(model.n()),
                theta.unwrap_or(cfg.experiment.theta),
                cfg.experiment.lambda,
                &z,
                variant,
            )?;
            let ok = rep.gap <= 3.0 * rep.gap_scale;
            Output { ok, ..plain(&cfg.digest, serde_json::to_value(rep)?) }
        }
        Command::Mc(McCmd::Gw { m, root, samples, seed, cap }) => {
            let (cfg, model) = load(&m.model)?;
            let seed = resolve_seed(seed, env_seed.as_deref(), cfg.seed)?;
            let dual = solve_dual(&model, DEFAULT_DUAL_TOL)?;
            let rep = gw_explosion(&model, &dual, root, samples, seed.0, cap)?;
            let ok = rep.pass;
            Output {
                manifest: RunManifest::new(cmd.clone(), Some(cfg.digest.clone()), Some(seed)),
                result: serde_json::to_value(rep)?,
                ok,
            }
        }
    };
    let report = Report { manifest: out.manifest, result: out.result };
    if let Some(path) = &cli.out {
        write_json(path, &report, Some(&watch.finish()))?;
    }
    match cli.format {
        Format::Json => print!("{}", to_json(&report)?),
        Format::Text => print!("{}", render_text(&report.result)),
    }
    Ok(if out.ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Flattens a JSON value into aligned `path  value` lines.
fn render_text(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    let join = |key: &str| if prefix.is_empty() { key.to_string() } else { format!("{prefix}.{key}") };
    match v {
        Value::Object(map) => {
            for (key, val) in map {
                flatten(&join(key), val, rows);
            }
        }
        Value::Array(items) if items.iter().all(|x| !x.is_object() && !x.is_array()) => {
            let parts: Vec<String> = items.iter().map(scalar).collect();
            rows.push((prefix.to_string(), format!("[{}]", parts.join(", "))));
        }
        Value::Array(items) => {
            for (i, val) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), val, rows);
            }
        }
        other => rows.push((prefix.to_string(), scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
