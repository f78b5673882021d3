use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forget_audit::bounds::{auditing_bound, tnr_curve, BoundInputs};
use forget_audit::io::{load_feature_matrix, write_report, Method};
use forget_audit::kernel::{KernelFamily, KernelSpec};
use forget_audit::pipeline::{run_audit, synth_fixtures, AuditOptions};
use forget_audit::transport::{cost_matrix, sinkhorn, uniform_weights, Epsilon, SinkhornConfig, WassersteinMode};
use forget_audit::{AuditError, FeatureMatrix};

#[derive(Parser)]
#[command(name = "forget-audit", version, about = "Estimate the forgetting rate of an unlearned model from feature sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bootstrap audit of an audit set against member and non-member references.
    Audit(AuditArgs),
    /// Write synthetic Gaussian fixtures with a known forgetting rate.
    Synth(SynthArgs),
    /// Evaluate the statistical and auditing error bounds.
    Bounds(BoundsArgs),
    /// Sweep the TNR implied by a fixed accuracy and TPR over the non-member share.
    TnrCurve(TnrArgs),
    /// Entropic transport cost between two feature files.
    Sinkhorn(SinkhornArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Smia0,
    SmiaM,
    SmiaW,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Rbf,
    Laplacian,
    Poly,
    Rq,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ratio,
    Polarization,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    member: PathBuf,
    #[arg(long)]
    nonmember: PathBuf,
    #[arg(long)]
    audit: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Number of bootstrap groups.
    #[arg(long, default_value_t = 200)]
    k: usize,
    #[arg(long, default_value_t = 42, conflicts_with = "entropy")]
    seed: u64,
    /// Draw the seed from the OS instead of --seed; the seed used is recorded in the report.
    #[arg(long)]
    entropy: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = KernelArg::Rbf)]
    kernel: KernelArg,
    /// Kernel bandwidth; the median heuristic is used when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    poly_c: f64,
    #[arg(long, default_value_t = 2)]
    poly_p: u32,
    #[arg(long, default_value_t = 1.0)]
    rq_alpha: f64,
    /// Fixed Sinkhorn regularization; defaults to 0.05 x median cost.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Transport cost exponent.
    #[arg(long, default_value_t = 2)]
    wp: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Ratio)]
    mode: ModeArg,
    /// Weight of the mean term in the SMIA-0 residual.
    #[arg(long, default_value_t = 1.0)]
    mean_weight: f64,
    #[arg(long)]
    no_filter: bool,
    #[arg(long, default_value_t = forget_audit::stats::DEFAULT_Z_THRESHOLD)]
    z_threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    resample_fraction: f64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Per-coordinate offset of the non-member mean.
    #[arg(long, default_value_t = 3.0)]
    sep: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 0.0)]
    risk: f64,
    #[arg(long)]
    chi2: f64,
    #[arg(long)]
    m: u64,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0.0)]
    dinf: f64,
}

#[derive(Args)]
struct TnrArgs {
    #[arg(long)]
    accuracy: f64,
    #[arg(long)]
    tpr: f64,
    #[arg(long, default_value_t = 0.01)]
    p_min: f64,
    #[arg(long, default_value_t = 1.0)]
    p_max: f64,
    #[arg(long, default_value_t = 100)]
    p_steps: usize,
}

#[derive(Args)]
struct SinkhornArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Fixed regularization; defaults to 0.05 x median cost.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 2)]
    wp: u32,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Iterate on scaling vectors instead of log potentials.
    #[arg(long)]
    linear_domain: bool,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

/// Audit failures exit 2; everything else is a usage or IO problem.
fn classify(context: &str, e: AuditError) -> Failure {
    let code = if e.is_degenerate() || matches!(e, AuditError::TooManyFailedGroups { .. }) { 2 } else { 1 };
    let message = if context.is_empty() { e.to_string() } else { format!("{context}: {e}") };
    Failure { code, message }
}

fn load(flag: &str, path: &Path) -> CliResult<FeatureMatrix> {
    load_feature_matrix(path).map_err(|e| match e {
        AuditError::EmptyMatrix => usage(format!("{flag} {}: file has no data rows", path.display())),
        e => classify(flag, e),
    })
}

fn check(ok: bool, message: impl FnOnce() -> String) -> CliResult {
    if ok {
        Ok(())
    } else {
        Err(usage(message()))
    }
}

fn epsilon_choice(epsilon: Option<f64>) -> CliResult<Epsilon> {
    match epsilon {
        Some(e) => {
            check(e > 0.0 && e.is_finite(), || format!("--epsilon must be positive, got {e}"))?;
            Ok(Epsilon::Fixed(e))
        }
        None => Ok(Epsilon::MedianScaled(0.05)),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let Some(n) = threads else { return Ok(f()) };
    check(n >= 1, || "--threads must be at least 1".into())?;
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| usage(format!("--threads: {e}")))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    Ok(f())
}

fn cmd_audit(a: AuditArgs) -> CliResult {
    check(a.k >= 1, || "--k must be at least 1".into())?;
    check(a.resample_fraction > 0.0 && a.resample_fraction <= 1.0, || {
        format!("--resample-fraction must lie in (0, 1], got {}", a.resample_fraction)
    })?;
    check(a.z_threshold > 0.0, || format!("--z-threshold must be positive, got {}", a.z_threshold))?;
    check(a.mean_weight >= 0.0 && a.mean_weight.is_finite(), || {
        format!("--mean-weight must be nonnegative, got {}", a.mean_weight)
    })?;
    check(a.wp >= 1, || "--wp must be at least 1".into())?;
    if let Some(s) = a.sigma {
        check(s > 0.0 && s.is_finite(), || format!("--sigma must be positive, got {s}"))?;
    }
    check(a.poly_c >= 0.0, || format!("--poly-c must be nonnegative, got {}", a.poly_c))?;
    check(a.poly_p >= 1, || "--poly-p must be at least 1".into())?;
    check(a.rq_alpha > 0.0, || format!("--rq-alpha must be positive, got {}", a.rq_alpha))?;

    let method = match a.method {
        MethodArg::Smia0 => Method::Smia0,
        MethodArg::SmiaM => Method::SmiaM,
        MethodArg::SmiaW => Method::SmiaW,
    };
    let mut opts = AuditOptions::new(method);
    opts.bootstrap.k = a.k;
    opts.bootstrap.seed = if a.entropy { rand::random() } else { a.seed };
    opts.bootstrap.resample_fraction = a.resample_fraction;
    opts.smia0.mean_weight = a.mean_weight;
    opts.kernel = KernelSpec {
        family: match a.kernel {
            KernelArg::Rbf => KernelFamily::Rbf,
            KernelArg::Laplacian => KernelFamily::Laplacian,
            KernelArg::Poly => KernelFamily::Polynomial,
            KernelArg::Rq => KernelFamily::RationalQuadratic,
        },
        sigma: a.sigma,
        c: a.poly_c,
        p: a.poly_p,
        alpha_rq: a.rq_alpha,
    };
    opts.sinkhorn.epsilon = epsilon_choice(a.epsilon)?;
    opts.sinkhorn.p = a.wp;
    opts.wasserstein_mode = match a.mode {
        ModeArg::Ratio => WassersteinMode::Ratio,
        ModeArg::Polarization => WassersteinMode::Polarization,
    };
    opts.z_threshold = (!a.no_filter).then_some(a.z_threshold);

    let x_t = load("--member", &a.member)?;
    let x_v = load("--nonmember", &a.nonmember)?;
    let x_f = load("--audit", &a.audit)?;
    let mut report = with_threads(a.threads, || run_audit(&x_t, &x_v, &x_f, &opts))?
        .map_err(|e| classify("audit failed", e))?;
    report
        .diagnostics
        .insert("seed_from_entropy".into(), if a.entropy { 1.0 } else { 0.0 });
    write_report(&report, &a.out).map_err(|e| classify("--out", e))?;
    println!(
        "alpha_p50={:.6} ci=[{:.6}, {:.6}]",
        report.alpha_p50, report.alpha_p5, report.alpha_p95
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    check((0.0..=1.0).contains(&a.alpha), || format!("--alpha must lie in [0, 1], got {}", a.alpha))?;
    check(a.n >= 1, || "--n must be at least 1".into())?;
    check(a.d >= 1, || "--d must be at least 1".into())?;
    check(a.sep.is_finite(), || format!("--sep must be finite, got {}", a.sep))?;
    let fx = synth_fixtures(a.alpha, a.n, a.d, a.sep, a.seed).map_err(|e| classify("synth", e))?;
    std::fs::create_dir_all(&a.outdir).map_err(|e| usage(format!("--outdir {}: {e}", a.outdir.display())))?;
    fx.write_to(&a.outdir).map_err(|e| classify("--outdir", e))?;
    println!(
        "wrote {} (n_from_t={}, n_from_v={})",
        a.outdir.display(),
        fx.truth.n_from_t,
        fx.truth.n_from_v
    );
    Ok(())
}

fn cmd_bounds(a: BoundsArgs) -> CliResult {
    let b = auditing_bound(&BoundInputs {
        empirical_risk: a.risk,
        chi2: a.chi2,
        m: a.m,
        delta: a.delta,
        d_inf: a.dinf,
    })
    .map_err(|e| classify("bounds", e))?;
    println!("statistical_error={}", b.statistical_error);
    println!("risk_bound={}", b.in_distribution);
    println!("auditing_error={}", b.auditing_error);
    println!("auditing_bound={}", b.total);
    Ok(())
}

fn cmd_tnr_curve(a: TnrArgs) -> CliResult {
    check(a.p_steps >= 1, || "--p-steps must be at least 1".into())?;
    check(a.p_min > 0.0 && a.p_min <= a.p_max && a.p_max <= 1.0, || {
        format!("need 0 < --p-min <= --p-max <= 1, got {} and {}", a.p_min, a.p_max)
    })?;
    let mut out = String::from("p,tnr,feasible\n");
    for i in 0..a.p_steps {
        let p = if a.p_steps == 1 {
            a.p_min
        } else {
            let t = i as f64 / (a.p_steps - 1) as f64;
            a.p_min + t * (a.p_max - a.p_min)
        };
        let pt = tnr_curve(a.accuracy, a.tpr, p).map_err(|e| classify("tnr-curve", e))?;
        out.push_str(&format!("{p:.6},{:.12},{}\n", pt.tnr, pt.feasible));
    }
    print!("{out}");
    Ok(())
}

fn cmd_sinkhorn(a: SinkhornArgs) -> CliResult {
    check(a.wp >= 1, || "--wp must be at least 1".into())?;
    check(a.max_iters >= 1, || "--max-iters must be at least 1".into())?;
    check(a.tol > 0.0, || format!("--tol must be positive, got {}", a.tol))?;
    let x = load("--x", &a.x)?;
    let y = load("--y", &a.y)?;
    let cfg = SinkhornConfig {
        epsilon: epsilon_choice(a.epsilon)?,
        p: a.wp,
        max_iters: a.max_iters,
        tol: a.tol,
        log_domain: !a.linear_domain,
    };
    let c = cost_matrix(&x, &y, a.wp).map_err(|e| classify("--y", e))?;
    let plan = sinkhorn(&uniform_weights(x.n()), &uniform_weights(y.n()), &c, &cfg).map_err(|e| {
        let mut f = classify("sinkhorn", e);
        if f.code == 2 {
            f.message.push_str(" (retry without --linear-domain or with a larger --epsilon)");
        }
        f
    })?;
    println!("w_eps={}", plan.w_eps);
    println!("epsilon={}", plan.epsilon);
    println!("iterations={}", plan.iterations);
    println!("converged={}", plan.converged);
    println!("max_marginal_violation={:e}", plan.max_marginal_violation);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::TnrCurve(a) => cmd_tnr_curve(a),
        Command::Sinkhorn(a) => cmd_sinkhorn(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
