//! Command-line interface for the morsenet analysis pipeline.
//!
//! Subcommands: `classify`, `normalize`, `critical`, `morse-check`,
//! `ode-flow`, `embed`, and `verify`. Networks are read from the strict
//! JSON schema of `morsenet::io`; reports are emitted deterministically, so
//! running the same command on the same input (and seed) produces
//! byte-identical files.
//!
//! Exit codes: 0 on success, 1 on analysis errors (bad networks, failed
//! integrations, failed verification), 2 on usage errors.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use morsenet::io::{
    self, FlowSummary, MatrixDocument, NetworkDocument, NetworkObject, ReportDocument,
};
use morsenet::linalg::{self, Matrix};
use morsenet::mlp::{self, MLPNetwork};
use morsenet::morse::{self, Certification, CriticalPoint, MapClass, SearchConfig};
use morsenet::node::{
    self, EmbeddingTarget, IntegratorConfig, NeuralODE, VectorField,
};
use morsenet::normal_form;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "morsenet",
    about = "Critical-point and Morse-function analysis of scalar MLPs and neural ODEs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Network file in the morsenet JSON schema.
    #[arg(long)]
    input: PathBuf,
    /// Write a JSON report here (deterministic bytes).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Search box, one "lo,hi" per axis (a single occurrence is broadcast
    /// to every axis). Defaults to the file's domain, then to (-1,1)^n.
    #[arg(long, allow_hyphen_values = true)]
    domain: Vec<String>,
    /// Seed for all randomized checks.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Newton tolerance on the gradient norm.
    #[arg(long)]
    tol: Option<f64>,
    /// Number of quasi-random Newton starts.
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Architecture partition and C1/C2/C3 class verdict.
    Classify(CommonOpts),
    /// Reduce an MLP to its full-rank normal form.
    Normalize(CommonOpts),
    /// Multistart Newton search for critical points.
    Critical(CommonOpts),
    /// Rank condition on mixed second derivatives plus regularity summary.
    MorseCheck(CommonOpts),
    /// Integrate a neural ODE flow and print the variational Jacobian.
    OdeFlow {
        #[command(flatten)]
        common: CommonOpts,
        /// Evaluation point "x1,x2,..."; defaults to the origin.
        #[arg(long, allow_hyphen_values = true)]
        point: Option<String>,
    },
    /// Build a neural ODE that realizes a target scalar map exactly.
    Embed {
        /// Target: a path to an MLP network file, or one of the built-in
        /// expressions "sqdist:c1,...", "sin:k", "const:v,n".
        #[arg(long)]
        target: String,
        /// State dimension m of the embedding (must exceed the target's n).
        #[arg(long)]
        m: usize,
        /// Final time T of the flow.
        #[arg(long, default_value_t = 1.0)]
        time: f64,
        /// Write the embedded network file here.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the built-in property suite and print a pass/fail table.
    Verify {
        /// Seed for the randomized properties.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    // Die quietly when the consumer of a pipe (e.g. `head`) exits early
    // instead of panicking on a broken-pipe write error.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Classify(opts) => cmd_classify(&opts),
        Command::Normalize(opts) => cmd_normalize(&opts),
        Command::Critical(opts) => cmd_critical(&opts),
        Command::MorseCheck(opts) => cmd_morse_check(&opts),
        Command::OdeFlow { common, point } => cmd_ode_flow(&common, point.as_deref()),
        Command::Embed { target, m, time, output } => cmd_embed(&target, m, time, &output),
        Command::Verify { seed } => cmd_verify(seed),
    }
}

/// Parses "lo,hi" flags into a box, broadcasting a single pair to n axes.
/// Flag syntax errors exit with the usage code 2.
fn resolve_domain(
    flags: &[String],
    file_domain: Option<&[(f64, f64)]>,
    n: usize,
) -> Result<Vec<(f64, f64)>> {
    if flags.is_empty() {
        if let Some(d) = file_domain {
            if d.len() == n {
                return Ok(d.to_vec());
            }
        }
        return Ok(vec![(-1.0, 1.0); n]);
    }
    let parse_pair = |s: &str| -> Result<(f64, f64)> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 2 {
            usage_error(&format!("--domain expects \"lo,hi\", got \"{s}\""));
        }
        let lo: f64 = parts[0].trim().parse().context("bad domain bound")?;
        let hi: f64 = parts[1].trim().parse().context("bad domain bound")?;
        if !(lo < hi) {
            usage_error(&format!("--domain needs lo < hi, got \"{s}\""));
        }
        Ok((lo, hi))
    };
    let pairs: Vec<(f64, f64)> = flags.iter().map(|s| parse_pair(s)).collect::<Result<_>>()?;
    if pairs.len() == 1 {
        return Ok(vec![pairs[0]; n]);
    }
    if pairs.len() != n {
        usage_error(&format!("expected {n} --domain pairs, got {}", pairs.len()));
    }
    Ok(pairs)
}

fn usage_error(message: &str) -> ! {
    eprintln!("error: {message}");
    std::process::exit(2);
}

fn search_config(opts: &CommonOpts, domain: Vec<(f64, f64)>) -> SearchConfig {
    let mut cfg = SearchConfig::new(domain);
    if let Some(tol) = opts.tol {
        cfg.newton_tol = tol;
    }
    if let Some(starts) = opts.starts {
        cfg.start_count = starts;
    }
    cfg
}

fn read_input(path: &Path) -> Result<(NetworkObject, Option<Vec<(f64, f64)>>, String)> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let digest = io::digest_hex(&bytes);
    let (object, domain) = io::load_network(path)?;
    Ok((object, domain, digest))
}

fn print_critical_points(points: &[CriticalPoint]) {
    if points.is_empty() {
        println!("critical points: none found on the box");
        return;
    }
    println!("critical points ({}):", points.len());
    for p in points.iter().take(12) {
        let location: Vec<String> = p.location.iter().map(|v| format!("{v:.6}")).collect();
        let eigs: Vec<String> = p.hessian_eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
        println!(
            "  x* = [{}]  |grad| = {:.3e}  eigenvalues = [{}]  {:?}  index {}",
            location.join(", "),
            p.gradient_norm,
            eigs.join(", "),
            p.regularity,
            p.morse_index
        );
    }
    if points.len() > 12 {
        println!("  ... and {} more", points.len() - 12);
    }
}

fn write_report(output: Option<&Path>, report: &ReportDocument) -> Result<()> {
    if let Some(path) = output {
        io::save_report(report, path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

/// Image of a box under a linear map, row by row: the exact interval
/// arithmetic bound Σ_j [min, max](a_ij·[lo_j, hi_j]).
fn map_domain(a: &Matrix, domain: &[(f64, f64)]) -> Vec<(f64, f64)> {
    (0..a.rows())
        .map(|i| {
            let mut lo = 0.0;
            let mut hi = 0.0;
            for (j, (dlo, dhi)) in domain.iter().enumerate() {
                let c = a.get(i, j);
                lo += (c * dlo).min(c * dhi);
                hi += (c * dlo).max(c * dhi);
            }
            (lo, hi)
        })
        .collect()
}

fn cmd_classify(opts: &CommonOpts) -> Result<ExitCode> {
    let (object, file_domain, digest) = read_input(&opts.input)?;
    let domain = resolve_domain(&opts.domain, file_domain.as_deref(), object.input_dim())?;
    let mut report = ReportDocument { input_digest: digest, ..Default::default() };
    match object {
        NetworkObject::Mlp(net) => {
            let architecture = mlp::classify_architecture(&net);
            let nf = normal_form::normalize(&net)?;
            let reduced_arch = mlp::classify_architecture(&nf.reduced);
            if nf.steps.is_empty() {
                println!("architecture: {:?}", architecture.verdict);
            } else {
                println!(
                    "{:?} after normal form; original {:?}",
                    reduced_arch.verdict, architecture.verdict
                );
            }
            // Classify the original map directly so theorem certificates
            // survive; the normal form corroborates via the class-transfer
            // rule when the reduction removed input coordinates.
            let cfg = search_config(opts, domain);
            let class = morse::classify_mlp(&net, &cfg)?;
            println!("class: {:?} ({:?})", class.verdict, class.certification);
            if nf.reduced.input_dim() < net.input_dim() {
                let reduced_domain = map_domain(&nf.coord_change, cfg.domain.as_slice());
                let reduced_cfg = search_config(opts, reduced_domain);
                let reduced_class = morse::classify_mlp(&nf.reduced, &reduced_cfg)?;
                let transferred = normal_form::class_under_coordinate_change(
                    &reduced_class,
                    nf.reduced.input_dim(),
                    net.input_dim(),
                );
                println!(
                    "normal form corroborates: reduced {:?} transfers to {:?}",
                    reduced_class.verdict, transferred.verdict
                );
            }
            for note in &class.notes {
                println!("note: {note}");
            }
            print_critical_points(&class.critical_points);
            report.architecture = Some(architecture);
            report.critical_points = class.critical_points.clone();
            report.normal_form_steps = nf.steps;
            report.class = Some(class);
        }
        NetworkObject::Node(node) => {
            let partition = node::classify_node(&node)?;
            println!(
                "architecture: {:?} (rank W = {}, rank W~ = {})",
                partition.verdict, partition.rank_inner, partition.rank_outer
            );
            let cfg = search_config(opts, domain);
            let class = node::classify_node_map(&node, &cfg)?;
            println!("class: {:?} ({:?})", class.verdict, class.certification);
            for note in &class.notes {
                println!("note: {note}");
            }
            print_critical_points(&class.critical_points);
            report.node_partition = Some(partition);
            report.critical_points = class.critical_points.clone();
            report.class = Some(class);
        }
    }
    write_report(opts.output.as_deref(), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_normalize(opts: &CommonOpts) -> Result<ExitCode> {
    let (object, _, _) = read_input(&opts.input)?;
    let NetworkObject::Mlp(net) = object else {
        bail!("normalize applies to MLP networks only");
    };
    let nf = normal_form::normalize(&net)?;
    println!("original dims: {:?}", net.dims());
    println!("reduced dims:  {:?}", nf.reduced.dims());
    for step in &nf.steps {
        println!(
            "step: {:?} layer {} removed index {} -> dims {:?}",
            step.kind, step.layer, step.removed_index, step.resulting_dims
        );
    }
    if let Some(value) = nf.constant_value {
        println!("network is constant with value {value}");
    }
    let domain = resolve_domain(&opts.domain, None, net.input_dim())?;
    let deviation = normal_form::verify_equivalence(&net, &nf, &domain, 200)?;
    println!("max |Phi(x) - reduced(Ax)| over 200 samples: {deviation:.3e}");
    if let Some(path) = &opts.output {
        let doc = NetworkDocument::from_mlp(&nf.reduced);
        io::save_network(&doc, path)?;
        println!("normal form written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_critical(opts: &CommonOpts) -> Result<ExitCode> {
    let (object, file_domain, digest) = read_input(&opts.input)?;
    let domain = resolve_domain(&opts.domain, file_domain.as_deref(), object.input_dim())?;
    let cfg = search_config(opts, domain);
    let points = match &object {
        NetworkObject::Mlp(net) => morse::find_critical_points(net, &cfg)?,
        NetworkObject::Node(node) => morse::find_critical_points(node, &cfg)?,
    };
    print_critical_points(&points);
    let report = ReportDocument {
        input_digest: digest,
        critical_points: points,
        ..Default::default()
    };
    write_report(opts.output.as_deref(), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_morse_check(opts: &CommonOpts) -> Result<ExitCode> {
    let (object, file_domain, digest) = read_input(&opts.input)?;
    let domain = resolve_domain(&opts.domain, file_domain.as_deref(), object.input_dim())?;
    let cfg = search_config(opts, domain);
    let n = object.input_dim();
    let points = match &object {
        NetworkObject::Mlp(net) => morse::find_critical_points(net, &cfg)?,
        NetworkObject::Node(node) => morse::find_critical_points(node, &cfg)?,
    };
    if points.is_empty() {
        println!("no critical points on the box; nothing to check");
    }
    for p in &points {
        let (rank, satisfied) = match &object {
            NetworkObject::Mlp(net) => morse::morse_rank_condition(net, &p.location)?,
            NetworkObject::Node(node) => {
                // For a neural ODE the mixed second derivative with respect
                // to the outer weights is Wᵀ·Y(T)ᵀ.
                let flow = node.flow(&p.location)?;
                let product = node
                    .inner_weight()
                    .transpose()
                    .matmul(&flow.jacobian.transpose())?;
                let rank = linalg::rank_of(&product)?;
                (rank, rank == n)
            }
        };
        let location: Vec<String> = p.location.iter().map(|v| format!("{v:.6}")).collect();
        println!(
            "x* = [{}]  {:?}  mixed-derivative rank {rank}/{n}  rank condition {}",
            location.join(", "),
            p.regularity,
            if satisfied { "satisfied" } else { "violated" }
        );
    }
    let report = ReportDocument {
        input_digest: digest,
        critical_points: points,
        ..Default::default()
    };
    write_report(opts.output.as_deref(), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ode_flow(opts: &CommonOpts, point: Option<&str>) -> Result<ExitCode> {
    let (object, _, digest) = read_input(&opts.input)?;
    let NetworkObject::Node(node) = object else {
        bail!("ode-flow applies to neural ODE networks only");
    };
    let x: Vec<f64> = match point {
        Some(text) => text
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad --point entry: {e}")))
            .collect::<Result<_>>()?,
        None => vec![0.0; node.input_dim()],
    };
    if x.len() != node.input_dim() {
        usage_error(&format!(
            "--point has {} entries, the network expects {}",
            x.len(),
            node.input_dim()
        ));
    }
    let flow = node.flow(&x)?;
    println!("terminal state: {:?}", flow.state);
    println!("variational Jacobian Y(T):");
    for i in 0..flow.jacobian.rows() {
        println!("  {:?}", flow.jacobian.row(i));
    }
    println!("trace integral: {:.12}", flow.trace_integral);
    println!("accepted steps: {}", flow.steps);
    println!("Liouville residual: {:.3e}", flow.liouville_residual);
    let report = ReportDocument {
        input_digest: digest,
        flows: vec![FlowSummary {
            point: x,
            terminal_state: flow.state.clone(),
            jacobian: MatrixDocument::from_matrix(&flow.jacobian),
            trace_integral: flow.trace_integral,
            steps: flow.steps,
            liouville_residual: flow.liouville_residual,
        }],
        ..Default::default()
    };
    write_report(opts.output.as_deref(), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_target(spec: &str) -> Result<EmbeddingTarget> {
    if Path::new(spec).exists() {
        let (object, _) = io::load_network(Path::new(spec))?;
        let NetworkObject::Mlp(net) = object else {
            bail!("--target file must contain an MLP network");
        };
        return Ok(EmbeddingTarget::Mlp(net));
    }
    let Some((kind, args)) = spec.split_once(':') else {
        usage_error(&format!(
            "--target must be a network file or \"sqdist:...\", \"sin:...\", \"const:...\"; \
             got \"{spec}\""
        ));
    };
    let numbers = |text: &str| -> Result<Vec<f64>> {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad --target number: {e}")))
            .collect()
    };
    match kind {
        "sqdist" => Ok(EmbeddingTarget::SquaredDistance { center: numbers(args)? }),
        "sin" => {
            let values = numbers(args)?;
            if values.len() != 1 {
                usage_error("sin target takes exactly one frequency");
            }
            Ok(EmbeddingTarget::SineScaled { frequency: values[0] })
        }
        "const" => {
            let values = numbers(args)?;
            if values.len() != 2 || values[1] < 1.0 || values[1].fract() != 0.0 {
                usage_error("const target takes \"value,dim\" with integer dim >= 1");
            }
            Ok(EmbeddingTarget::Constant { value: values[0], dim: values[1] as usize })
        }
        other => usage_error(&format!("unknown target kind \"{other}\"")),
    }
}

fn cmd_embed(target_spec: &str, m: usize, time: f64, output: &Path) -> Result<ExitCode> {
    let target = parse_target(target_spec)?;
    let n = target.input_dim();
    let embedded = node::build_embedding_node(target, m, time, IntegratorConfig::default())?;
    // Spot-check the construction before writing it out.
    let mut worst: f64 = 0.0;
    for x in quasi_random_points(n, 25) {
        let value = node::node_forward(&embedded, &x)?;
        let expected = match embedded.field() {
            VectorField::Embedding { target, .. } => target.value(&x)?,
            _ => unreachable!("build_embedding_node always uses an embedding field"),
        };
        worst = worst.max((value - expected).abs());
    }
    println!("embedded target into a neural ODE with n = {n}, m = {m}, T = {time}");
    println!("max |Phi(x) - target(x)| over 25 samples: {worst:.3e}");
    let doc = NetworkDocument::from_node(&embedded);
    io::save_network(&doc, output)?;
    println!("network written to {}", output.display());
    Ok(ExitCode::SUCCESS)
}

/// Deterministic sample points in (−1,1)ⁿ for spot checks.
fn quasi_random_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    // Weyl sequence with per-axis irrational strides: cheap, deterministic,
    // well spread.
    let strides = [
        0.754_877_666_246_692_8,
        0.569_840_290_998_053_2,
        0.479_079_632_344_150_9,
        0.421_627_882_511_087_5,
    ];
    (1..=count)
        .map(|k| {
            (0..n)
                .map(|j| {
                    let s = strides[j % strides.len()];
                    2.0 * ((k as f64 * s).fract()) - 1.0
                })
                .collect()
        })
        .collect()
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, outcome: Result<bool>) {
        match outcome {
            Ok(true) => println!("pass  {name}"),
            Ok(false) => {
                println!("FAIL  {name}");
                self.failures += 1;
            }
            Err(err) => {
                println!("FAIL  {name} ({err:#})");
                self.failures += 1;
            }
        }
    }
}

fn cmd_verify(seed: u64) -> Result<ExitCode> {
    let mut suite = Suite { failures: 0 };
    let mat = |rows: &[&[f64]]| -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    };

    // Gradients against central finite differences.
    suite.check("mlp gradient matches finite differences", {
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 0.5], &[-0.5, 1.0], &[0.3, -0.7]])],
            vec![mat(&[&[1.0, -2.0, 0.5]])],
            vec![vec![0.1, -0.2, 0.3]],
            vec![vec![0.0]],
            mlp::Activation::Softplus,
        )?;
        let mut ok = true;
        for x in quasi_random_points(2, 20) {
            let grad = mlp::gradient(&net, &x)?;
            for j in 0..2 {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let fd = (mlp::forward(&net, &xp)?.0 - mlp::forward(&net, &xm)?.0) / (2.0 * h);
                ok &= (grad[j] - fd).abs() <= 1e-6 * fd.abs().max(1.0);
            }
        }
        Ok(ok)
    });

    // Hessian symmetry.
    suite.check("mlp hessian is symmetric", {
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 0.5], &[-0.5, 1.0], &[0.3, -0.7]])],
            vec![mat(&[&[1.0, -2.0, 0.5]])],
            vec![vec![0.1, -0.2, 0.3]],
            vec![vec![0.0]],
            mlp::Activation::Tanh,
        )?;
        let mut ok = true;
        for x in quasi_random_points(2, 20) {
            let h = mlp::hessian(&net, &x)?;
            ok &= (h.sub(&h.transpose())?).max_abs() <= 1e-12;
        }
        Ok(ok)
    });

    // Normal form preserves the realized map.
    suite.check("normal form preserves network outputs", {
        let net = MLPNetwork::with_uniform_activation(
            vec![
                mat(&[&[-1.0, 2.0], &[2.0, -4.0]]),
                mat(&[&[1.0, 0.0, 2.0], &[0.0, 2.0, 2.0], &[1.0, -1.0, 1.0]]),
            ],
            vec![
                mat(&[&[1.0, 0.0], &[2.0, 3.0], &[0.0, 1.0]]),
                mat(&[&[-1.0, 1.0, 2.0]]),
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0, 0.0]],
            vec![vec![0.0, 0.0, 0.0], vec![0.0]],
            mlp::Activation::Softplus,
        )?;
        let nf = normal_form::normalize(&net)?;
        let deviation =
            normal_form::verify_equivalence(&net, &nf, &[(-1.0, 1.0), (-1.0, 1.0)], 200)?;
        Ok(deviation <= 1e-9)
    });

    // Non-augmented architectures have no critical points.
    suite.check("non-augmented network is class C1", {
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 0.5, -0.25], &[-0.5, 1.0, 0.75]])],
            vec![mat(&[&[1.0, -2.0]])],
            vec![vec![0.1, -0.2]],
            vec![vec![0.3]],
            mlp::Activation::Softplus,
        )?;
        let cfg = SearchConfig::new(vec![(-2.0, 2.0); 3]);
        let report = morse::classify_mlp(&net, &cfg)?;
        Ok(report.verdict == MapClass::C1 && report.certification == Certification::TheoremCertified)
    });

    // The three-class worked example: reduced map has one non-degenerate
    // critical point at 0 with second derivative −1/2; the original
    // two-input map is class C3.
    suite.check("rank-one example transfers to class C3", {
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 2.0], &[2.0, 4.0]])],
            vec![mat(&[&[2.0, -1.0]])],
            vec![vec![0.0, 0.0]],
            vec![vec![0.0]],
            mlp::Activation::Softplus,
        )?;
        let nf = normal_form::normalize(&net)?;
        let cfg = SearchConfig::new(vec![(-3.0, 3.0)]);
        let reduced = morse::classify_mlp(&nf.reduced, &cfg)?;
        let transferred =
            normal_form::class_under_coordinate_change(&reduced, nf.reduced.input_dim(), 2);
        let point_ok = reduced.critical_points.len() == 1
            && reduced.critical_points[0].location[0].abs() <= 1e-8
            && (reduced.critical_points[0].hessian_eigenvalues[0] + 0.5).abs() <= 1e-8;
        Ok(point_ok && reduced.verdict == MapClass::C2 && transferred.verdict == MapClass::C3)
    });

    // Persistence of a non-degenerate critical point under weight noise.
    suite.check("non-degenerate critical point persists under perturbation", {
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0], &[-2.0]])],
            vec![mat(&[&[1.0, 1.0]])],
            vec![vec![0.0, 0.5]],
            vec![vec![0.0]],
            mlp::Activation::Softplus,
        )?;
        let cfg = SearchConfig::new(vec![(-4.0, 4.0)]);
        let points = morse::find_critical_points(&net, &cfg)?;
        if points.len() != 1 {
            Ok(false)
        } else {
            Ok(morse::persistence_check(&net, &points[0].location, None, seed)?)
        }
    });

    // Liouville invariant and variational Jacobian of the node flow.
    suite.check("node flow satisfies the Liouville identity", {
        let field = VectorField::AffineLinear {
            matrix: mat(&[&[0.2, -0.5], &[0.3, 0.1]]),
            offset: vec![0.1, -0.2],
        };
        let mut ok = true;
        for a in quasi_random_points(2, 10) {
            let flow =
                node::flow_with_jacobian(&field, &a, 1.0, &IntegratorConfig::default())?;
            ok &= flow.liouville_residual <= 1e-6;
        }
        Ok(ok)
    });

    // The augmented worked node example: gradient zero exactly at ln 2.
    suite.check("node gradient matches the closed-form zero at ln 2", {
        let node = NeuralODE::new(
            mat(&[&[1.0], &[1.0]]),
            vec![0.0, 0.0],
            mat(&[&[3.0, -1.0]]),
            0.0,
            1.0,
            VectorField::ZeroExp,
            IntegratorConfig::default(),
        )?;
        let grad = node::node_gradient(&node, &[2.0_f64.ln()])?;
        let hess = node::node_hessian(&node, &[2.0_f64.ln()])?;
        Ok(grad[0].abs() <= 1e-7 && (hess.get(0, 0) + 2.0).abs() <= 1e-4)
    });

    // Universal embedding is exact.
    suite.check("universal embedding reproduces the target map", {
        let embedded = node::build_embedding_node(
            EmbeddingTarget::SquaredDistance { center: vec![0.25, -0.5] },
            3,
            1.0,
            IntegratorConfig::default(),
        )?;
        let mut ok = true;
        for x in quasi_random_points(2, 25) {
            let value = node::node_forward(&embedded, &x)?;
            let target: f64 = (x[0] - 0.25).powi(2) + (x[1] + 0.5).powi(2);
            ok &= (value - target).abs() <= 1e-7;
        }
        Ok(ok)
    });

    // Deterministic report emission.
    suite.check("report emission is byte-identical across runs", {
        let report = ReportDocument {
            input_digest: io::digest_hex(b"verify"),
            ..Default::default()
        };
        Ok(io::emit_report(&report)? == io::emit_report(&report)?)
    });

    if suite.failures == 0 {
        println!("all checks passed (seed {seed})");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} check(s) failed (seed {seed})", suite.failures);
        Ok(ExitCode::from(1))
    }
}
