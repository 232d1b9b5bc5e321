use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use spvar::config::RunConfig;
use spvar::diagnostics::{default_lambda_eps, granger_network, impulse_responses, sigma_eps_estimate, write_irf_csv, DEFAULT_ZERO_TOL};
use spvar::experiment::{run_experiment, ExperimentKind, ExperimentSettings};
use spvar::forecast::{rolling_eval, ForecastMethod, Refit};
use spvar::model::{model_from_json, model_to_json, Eta, ModelOrders, Omega, SpvarModel};
use spvar::panel::{fmt_f64, SeriesPanel};
use spvar::selection::{select_orders, LambdaRule, SelectionConfig, DEFAULT_LAMBDA_C, DEFAULT_TAU};
use spvar::simulate::{gen_sparse_coefs, rng_from_seed, simulate_spvar, DgpSpec, Sparsity, DEFAULT_BURN_IN};
use spvar::solver::{default_var_order, fit, Estimator, FitConfig};
use spvar::{Result, SpvarError};

/// Sparse parametric VAR(∞): simulate, fit, select orders, forecast and inspect.
#[derive(Parser, Debug)]
#[command(name = "spvar", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with run settings; flags win over file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a sparse SPVAR panel; writes <prefix>.csv and <prefix>_model.json.
    Simulate(SimulateArgs),
    /// Fit at fixed orders; exit code 2 when the solver hit max_iter.
    Fit(FitArgs),
    /// BIC order selection over a grid of (p, r, s).
    Select(SelectArgs),
    /// Rolling one-step-ahead forecasts.
    Forecast(ForecastArgs),
    /// Granger-causal network of a fitted model as CSV and DOT.
    Granger(GrangerArgs),
    /// Impulse responses Ψ_1..Ψ_J in long format.
    Irf(IrfArgs),
    /// Monte-Carlo experiments: error-scaling, bic-consistency, varma-forecast or all.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct PenaltyArgs {
    /// ℓ1 penalty; overrides --lambda-c.
    #[arg(long)]
    lambda_g: Option<f64>,
    /// Constant c of the rate rule c·v̄·√(log(N·max(p,1))/T).
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    estimator: Option<Estimator>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV panel with one header row.
    #[arg(long)]
    data: PathBuf,
    /// Demean and scale each column to unit variance first.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    /// p,r,s
    #[arg(long)]
    orders: Option<ModelOrders>,
    /// Real decay rates, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lambdas: Option<Vec<f64>>,
    /// Complex pairs as gamma:theta, comma separated.
    #[arg(long, value_delimiter = ',')]
    etas: Option<Vec<String>>,
    #[arg(long)]
    nonzeros_per_row: Option<usize>,
    /// c·N nonzeros per coefficient matrix.
    #[arg(long, conflicts_with = "nonzeros_per_row")]
    nonzeros_total: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long, default_value = "sim")]
    prefix: String,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    orders: Option<ModelOrders>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// Output model JSON (default <out-dir>/model.json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the thresholded residual covariance to <out-dir>/sigma_eps.csv.
    #[arg(long)]
    sigma_eps: bool,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Largest p,r,s on the grid.
    #[arg(long)]
    max_orders: Option<ModelOrders>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[command(flatten)]
    penalty: PenaltyArgs,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    orders: Option<ModelOrders>,
    /// Rows used before the first forecast.
    #[arg(long)]
    origin: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// every | once
    #[arg(long)]
    refit: Option<Refit>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// Forecast with a VAR-Lasso of this lag order instead.
    #[arg(long)]
    var_p: Option<usize>,
}

#[derive(Args, Debug)]
struct GrangerArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    zero_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct IrfArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// error-scaling | bic-consistency | varma-forecast | all
    name: String,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    t_values: Option<Vec<usize>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.shared.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let rc = match &cli.shared.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.shared.threads.or(rc.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| SpvarError::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.shared.out_dir)?;
    let ctx = Ctx { seed: cli.shared.seed.or(rc.seed).unwrap_or(1), out_dir: cli.shared.out_dir.clone(), rc };
    match cli.command {
        Command::Simulate(a) => simulate_cmd(&ctx, a),
        Command::Fit(a) => fit_cmd(&ctx, a),
        Command::Select(a) => select_cmd(&ctx, a),
        Command::Forecast(a) => forecast_cmd(&ctx, a),
        Command::Granger(a) => granger_cmd(&ctx, a),
        Command::Irf(a) => irf_cmd(&ctx, a),
        Command::Experiment(a) => experiment_cmd(&ctx, a),
    }
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
    rc: RunConfig,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn load(&self, d: &DataArgs) -> Result<SeriesPanel> {
        let y = SeriesPanel::load_csv(&d.data)?;
        if d.standardize || self.rc.standardize.unwrap_or(false) {
            y.standardize()
        } else {
            Ok(y)
        }
    }

    fn orders(&self, flag: Option<ModelOrders>) -> Result<ModelOrders> {
        match flag {
            Some(o) => Ok(o),
            None => self.rc.orders()?.ok_or_else(|| SpvarError::Config("orders are required (--orders p,r,s)".into())),
        }
    }

    fn fit_config(&self) -> Result<FitConfig> {
        let mut fc = FitConfig::new(0.0);
        fc.seed = self.seed;
        self.rc.apply_fit(&mut fc)?;
        Ok(fc)
    }

    fn estimator(&self, p: &PenaltyArgs) -> Result<Estimator> {
        match p.estimator {
            Some(e) => Ok(e),
            None => self.rc.estimator.as_deref().map_or(Ok(Estimator::Je), str::parse),
        }
    }

    fn lambda_rule(&self, p: &PenaltyArgs) -> LambdaRule {
        match (p.lambda_g, p.lambda_c) {
            (Some(l), _) => LambdaRule::Fixed(l),
            (None, Some(c)) => LambdaRule::Rate(c),
            (None, None) => match self.rc.lambda_g {
                Some(l) => LambdaRule::Fixed(l),
                None => LambdaRule::Rate(self.rc.lambda_c.unwrap_or(DEFAULT_LAMBDA_C)),
            },
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_etas(raw: &[String]) -> Result<Vec<Eta>> {
    raw.iter()
        .map(|s| {
            let (g, t) = s.split_once(':').ok_or_else(|| SpvarError::InvalidArgument(format!("eta '{s}' is not gamma:theta")))?;
            let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| SpvarError::InvalidArgument(format!("eta '{s}': {e}")));
            Ok(Eta::new(parse(g)?, parse(t)?))
        })
        .collect()
}

fn simulate_cmd(ctx: &Ctx, a: SimulateArgs) -> Result<ExitCode> {
    let rc = &ctx.rc;
    let orders = a.orders.or(rc.orders()?).unwrap_or(ModelOrders::new(1, 1, 0));
    let lambdas = a.lambdas.or(rc.lambdas.clone()).unwrap_or_else(|| vec![-0.6; orders.r]);
    let etas = match a.etas {
        Some(raw) => parse_etas(&raw)?,
        None => rc.etas().unwrap_or_else(|| {
            (0..orders.s).map(|m| Eta::new(0.6, std::f64::consts::PI * (m + 1) as f64 / (orders.s + 2) as f64)).collect()
        }),
    };
    let n = a.n.or(rc.n).unwrap_or(10);
    let sparsity = match (a.nonzeros_per_row.or(rc.nonzeros_per_row), a.nonzeros_total.or(rc.nonzeros_total)) {
        (Some(_), Some(_)) => return Err(SpvarError::Config("set only one of nonzeros_per_row and nonzeros_total".into())),
        (_, Some(c)) => Sparsity::Total(c),
        (Some(c), None) => Sparsity::PerRow(c),
        (None, None) => Sparsity::PerRow(3.min(n)),
    };
    let mut spec = DgpSpec::new(n, orders, Omega::new(lambdas, etas), sparsity);
    if let Some(v) = a.noise_sd.or(rc.noise_sd) {
        spec.noise_sd = v;
    }
    if let (Some(lo), Some(hi)) = (rc.coef_low, rc.coef_high) {
        spec.coef_range = (lo, hi);
    }
    if let Some(v) = rc.stationarity_target {
        spec.stationarity_target = v;
    }
    spec.seed = ctx.seed;
    spec.validate()?;
    let t = a.t.or(rc.t).unwrap_or(200);
    let burn_in = a.burn_in.or(rc.burn_in).unwrap_or(DEFAULT_BURN_IN);
    let mut rng = rng_from_seed(ctx.seed);
    let coefs = gen_sparse_coefs(&spec, &mut rng)?;
    let model = SpvarModel::new(orders, spec.omega.clone(), coefs)?;
    let y = simulate_spvar(&model, t, burn_in, spec.noise_sd, &mut rng, false)?;
    let csv_path = ctx.path(&format!("{}.csv", a.prefix));
    let json_path = ctx.path(&format!("{}_model.json", a.prefix));
    y.save_csv(&csv_path)?;
    std::fs::write(&json_path, model_to_json(&model, y.names())?)?;
    println!("wrote {} ({t} x {n}) and {}", csv_path.display(), json_path.display());
    Ok(ExitCode::SUCCESS)
}

fn fit_cmd(ctx: &Ctx, a: FitArgs) -> Result<ExitCode> {
    let y = ctx.load(&a.data)?;
    let orders = ctx.orders(a.orders)?;
    let mut fc = ctx.fit_config()?;
    fc.lambda_g = ctx.lambda_rule(&a.penalty).lambda_for(&y, orders);
    let est = ctx.estimator(&a.penalty)?;
    let res = fit(&y, orders, est, &fc)?;
    let out = a.out.unwrap_or_else(|| ctx.path("model.json"));
    std::fs::write(&out, model_to_json(&res.model, y.names())?)?;
    if a.sigma_eps {
        let raw = sigma_eps_estimate(&res.model, &y, 0.0)?;
        let lam = ctx.rc.lambda_eps.unwrap_or_else(|| default_lambda_eps(&raw, y.t()));
        let sigma = sigma_eps_estimate(&res.model, &y, lam)?;
        let mut w = create(&ctx.path("sigma_eps.csv"))?;
        writeln!(w, "{}", y.names().join(","))?;
        for row in sigma.row_iter() {
            writeln!(w, "{}", row.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","))?;
        }
        w.flush()?;
    }
    let omega = res.model.omega().to_vec().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",");
    println!(
        "orders {orders} estimator {est} lambda_g {} loss {} objective {} nnz {} omega [{omega}] iterations {} converged {}",
        fmt_f64(fc.lambda_g),
        fmt_f64(res.in_sample_loss),
        fmt_f64(res.objective()),
        res.nnz,
        res.iterations,
        res.converged
    );
    println!("wrote {}", out.display());
    if res.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: solver stopped at max_iter without converging");
        Ok(ExitCode::from(2))
    }
}

fn select_cmd(ctx: &Ctx, a: SelectArgs) -> Result<ExitCode> {
    let y = ctx.load(&a.data)?;
    let max = a.max_orders.or(ctx.rc.max_orders()?).unwrap_or(ModelOrders::new(
        spvar::model::DEFAULT_MAX_ORDER,
        spvar::model::DEFAULT_MAX_ORDER,
        spvar::model::DEFAULT_MAX_ORDER,
    ));
    let mut sc = SelectionConfig::new(max, ctx.lambda_rule(&a.penalty), ctx.fit_config()?);
    sc.tau = a.tau.or(ctx.rc.tau).unwrap_or(DEFAULT_TAU);
    sc.q = a.q.or(ctx.rc.q).unwrap_or(0.0);
    sc.estimator = ctx.estimator(&a.penalty)?;
    let table = select_orders(&y, &sc)?;
    let path = ctx.path("bic.csv");
    table.write_csv(create(&path)?)?;
    let o = table.chosen_orders();
    println!("selected p={} r={} s={}{}", o.p, o.r, o.s, if table.fallback { " (no candidate converged)" } else { "" });
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn forecast_cmd(ctx: &Ctx, a: ForecastArgs) -> Result<ExitCode> {
    let y = ctx.load(&a.data)?;
    let rc = &ctx.rc;
    let steps = a.steps.or(rc.steps).unwrap_or(1);
    let origin = match a.origin.or(rc.origin) {
        Some(o) => o,
        None => y.t().checked_sub(steps).ok_or_else(|| SpvarError::InvalidArgument(format!("{steps} steps exceed T = {}", y.t())))?,
    };
    let refit = match (a.refit, rc.refit.as_deref()) {
        (Some(r), _) => r,
        (None, Some(s)) => s.parse()?,
        (None, None) => Refit::EveryStep,
    };
    let train = y.slice_rows(0, origin)?;
    let mut fc = ctx.fit_config()?;
    let rule = ctx.lambda_rule(&a.penalty);
    let method = match a.var_p.or(rc.var_lasso_p.filter(|_| a.orders.is_none() && rc.orders.is_none())) {
        Some(p) => {
            let p = if p == 0 { default_var_order(origin) } else { p };
            fc.lambda_g = rule.lambda_for(&train, ModelOrders::new(p, 0, 0));
            ForecastMethod::VarLasso { p, lambda: fc.lambda_g, config: fc }
        }
        None => {
            let orders = ctx.orders(a.orders)?;
            fc.lambda_g = rule.lambda_for(&train, orders);
            ForecastMethod::Spvar { orders, estimator: ctx.estimator(&a.penalty)?, config: fc }
        }
    };
    info!("forecasting {} steps from origin {origin} with {}", steps, method.label());
    let rep = rolling_eval(&y, &method, origin, steps, refit)?;
    let path = ctx.path("forecast.csv");
    rep.write_csv(create(&path)?)?;
    println!(
        "method {} refit {} steps {} failed {} mean_l2_error {}",
        rep.method,
        rep.refit,
        rep.steps.len(),
        rep.failed,
        fmt_f64(rep.mean_error)
    );
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn load_model(path: &Path) -> Result<(SpvarModel, Vec<String>)> {
    model_from_json(&std::fs::read_to_string(path)?)
}

fn granger_cmd(ctx: &Ctx, a: GrangerArgs) -> Result<ExitCode> {
    let (model, names) = load_model(&a.model)?;
    let tol = a.zero_tol.or(ctx.rc.zero_tol).unwrap_or(DEFAULT_ZERO_TOL);
    let net = granger_network(&model, tol)?;
    let csv_path = ctx.path("granger.csv");
    let dot_path = ctx.path("granger.dot");
    net.write_csv(create(&csv_path)?, &names)?;
    let mut dot = create(&dot_path)?;
    net.write_dot(&mut dot, &names)?;
    dot.flush()?;
    println!("{} edges; wrote {} and {}", net.edges.len(), csv_path.display(), dot_path.display());
    Ok(ExitCode::SUCCESS)
}

fn irf_cmd(ctx: &Ctx, a: IrfArgs) -> Result<ExitCode> {
    let (model, _) = load_model(&a.model)?;
    let horizon = a.horizon.or(ctx.rc.horizon).unwrap_or(20);
    let psi = impulse_responses(&model, horizon);
    let path = ctx.path("irf.csv");
    write_irf_csv(&psi, create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn experiment_cmd(ctx: &Ctx, a: ExperimentArgs) -> Result<ExitCode> {
    let kinds = if a.name == "all" {
        vec![ExperimentKind::ErrorScaling, ExperimentKind::BicConsistency, ExperimentKind::VarmaForecast]
    } else {
        vec![a.name.parse()?]
    };
    let mut settings = ExperimentSettings::default().with_seed(ctx.seed);
    let rc = &ctx.rc;
    if let Some(r) = a.replicates.or(rc.replicates) {
        settings.error_scaling.replicates = r;
        settings.bic_consistency.replicates = r;
        settings.varma_forecast.replicates = r;
    }
    if let Some(ts) = a.t_values.or(rc.t_values.clone()) {
        settings.error_scaling.t_values = ts.clone();
        settings.bic_consistency.t_values = ts;
    }
    if let Some(c) = rc.lambda_c {
        settings.error_scaling.lambda_c = c;
        settings.bic_consistency.lambda_c = c;
        settings.varma_forecast.tuning = spvar::experiment::ForecastTuning::Rate(c);
    }
    for fc in [&mut settings.error_scaling.fit, &mut settings.bic_consistency.fit, &mut settings.varma_forecast.fit] {
        rc.apply_fit(fc)?;
        fc.seed = ctx.seed;
    }
    for kind in kinds {
        let path = run_experiment(kind, &settings, &ctx.out_dir)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
