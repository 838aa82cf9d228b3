use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netside::Error;
use serde::Serialize;

mod artifact;
mod loc;
mod web;

/// Side-channel inference from traffic counters.
#[derive(Parser, Debug)]
#[command(name = "netside", version)]
struct Cli {
    /// Master seed; every artifact records it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Synthesize a labeled device-level browsing trace.
    GenWeb(web::GenWeb),
    /// Synthesize a map-navigation counter trace.
    GenMap(loc::GenMap),
    /// Frame a gen-web trace and write feature vectors.
    Extract(web::Extract),
    /// Train a binary SVM on extracted features.
    Train(web::Train),
    /// Stratified k-fold cross-validation of one pair.
    Cv(web::Cv),
    /// Cross-validated CCR of every URL pair.
    #[command(name = "matrix-1v1")]
    #[serde(rename = "matrix-1v1")]
    Matrix1v1(web::Matrix1v1),
    /// Each URL against all others pooled.
    OneVsAll(web::OneVsAll),
    /// Multi-class identification by recursive halving.
    Cascade(web::Cascade),
    /// Multi-class identification by pairwise elimination.
    Tree(web::Tree),
    /// CCR of one pair under each countermeasure.
    CounterEval(web::CounterEval),
    /// Detect when the device starts moving.
    LocMotion(loc::LocMotion),
    /// Fit or apply the inverse speed model.
    LocSpeed(loc::LocSpeed),
    /// Estimate distance travelled.
    LocDistance(loc::LocDistance),
    /// Urban/rural nearest-centroid classification.
    LocEnv(loc::LocEnv),
    /// Match a trace against labeled routes by correlation.
    LocPath(loc::LocPath),
    /// CV CCR over a log2 grid of C and gamma.
    Sweep(web::Sweep),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenWeb(_) => "gen-web",
            Command::GenMap(_) => "gen-map",
            Command::Extract(_) => "extract",
            Command::Train(_) => "train",
            Command::Cv(_) => "cv",
            Command::Matrix1v1(_) => "matrix-1v1",
            Command::OneVsAll(_) => "one-vs-all",
            Command::Cascade(_) => "cascade",
            Command::Tree(_) => "tree",
            Command::CounterEval(_) => "counter-eval",
            Command::LocMotion(_) => "loc-motion",
            Command::LocSpeed(_) => "loc-speed",
            Command::LocDistance(_) => "loc-distance",
            Command::LocEnv(_) => "loc-env",
            Command::LocPath(_) => "loc-path",
            Command::Sweep(_) => "sweep",
        }
    }

    fn run(&self, ctx: &artifact::Ctx) -> netside::Result<()> {
        match self {
            Command::GenWeb(c) => c.run(ctx),
            Command::GenMap(c) => c.run(ctx),
            Command::Extract(c) => c.run(ctx),
            Command::Train(c) => c.run(ctx),
            Command::Cv(c) => c.run(ctx),
            Command::Matrix1v1(c) => c.run(ctx),
            Command::OneVsAll(c) => c.run(ctx),
            Command::Cascade(c) => c.run(ctx),
            Command::Tree(c) => c.run(ctx),
            Command::CounterEval(c) => c.run(ctx),
            Command::LocMotion(c) => c.run(ctx),
            Command::LocSpeed(c) => c.run(ctx),
            Command::LocDistance(c) => c.run(ctx),
            Command::LocEnv(c) => c.run(ctx),
            Command::LocPath(c) => c.run(ctx),
            Command::Sweep(c) => c.run(ctx),
        }
    }
}

/// Exit status and error class: 1 usage, 2 I/O, 3 schema, 4 numerical,
/// 5 insufficient data.
fn classify(err: &Error) -> (u8, &'static str) {
    match err {
        Error::Config(_) | Error::InvalidInput(_) => (1, "usage"),
        Error::Io(_) => (2, "io"),
        Error::Schema(_)
        | Error::EmptyTrace(_)
        | Error::CounterReset { .. }
        | Error::NonMonotonicTime { .. }
        | Error::DimensionMismatch { .. } => (3, "schema"),
        Error::NonConvergence { .. } | Error::UndefinedCorrelation(_) => (4, "numerical"),
        Error::InsufficientData(_) | Error::SingleClass(_) => (5, "insufficient_data"),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = e.print();
                return ExitCode::from(1);
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("netside: usage: {}", one_line(first));
            return ExitCode::from(1);
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("netside: usage: --jobs must be >= 1");
            return ExitCode::from(1);
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let config = match serde_json::to_value(&cli.command) {
        Ok(serde_json::Value::Object(mut m)) => m.remove(cli.command.name()).unwrap_or_default(),
        Ok(v) => v,
        Err(e) => {
            eprintln!("netside: usage: {}", one_line(&e.to_string()));
            return ExitCode::from(1);
        }
    };
    let ctx = artifact::Ctx { seed: cli.seed, command: cli.command.name().to_string(), config };
    match cli.command.run(&ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, class) = classify(&e);
            eprintln!("netside: {class}: {}", one_line(&e.to_string()));
            ExitCode::from(code)
        }
    }
}
