//! `disco`: run the retweet-debate analysis stage by stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use disco::bicm::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use disco::community::{DEFAULT_MAX_SWEEPS, DEFAULT_RESOLUTION, DEFAULT_RESTARTS};
use disco::pipeline::{BotPopulation, FilterOrder};
use disco::projection::{Correction, DEFAULT_ALPHA};
use disco::workflow::{run_stages, RunConfig, SeedScope, Stage};
use disco::Error;

#[derive(Parser, Debug)]
#[command(name = "disco", version, about = "Validated-projection community analysis of retweet debates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter tweets by language and state, and derive retweet edges.
    Ingest(Opts),
    /// Fit the bipartite configuration model to the verified/unverified graph.
    Fit(Opts),
    /// Validate co-retweet links between verified users.
    Project(Opts),
    /// Louvain communities on the validated projection.
    Communities(Opts),
    /// Spread community labels over the retweet network.
    Propagate(Opts),
    /// Decile bot classification from bot scores.
    Classify(Opts),
    /// Aggregate the report tables.
    Report(Opts),
    /// Bot-score distribution tests and the reliability/state chi-square test.
    Stats(Opts),
    /// Run every stage in order.
    All(Opts),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CorrectionArg {
    Fdr,
    Bonferroni,
    None,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OrderArg {
    LanguageFirst,
    StateFirst,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PopulationArg {
    Validated,
    Scored,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SeedScopeArg {
    Linked,
    All,
}

#[derive(Args, Debug)]
struct Opts {
    /// Output directory; each stage writes into <OUT>/<stage>/.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Tweets as JSON lines (tweet_id, author_id, author_verified, text, lang,
    /// urls, retweeted_author_id, retweeted_author_verified, timestamp).
    #[arg(long)]
    tweets: Option<PathBuf>,
    /// Retweet edges CSV (retweeter_id,author_id,author_verified,count
    /// [,retweeter_verified]); replaces the edges derived from --tweets.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// States CSV (name,kind) with kind swing or safe.
    #[arg(long)]
    states: Option<PathBuf>,
    /// Domain labels CSV (domain,tag[,orientation]) with tag T, N, P, S or UNC.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Bot scores CSV (user_id,score) with scores in [0, 1].
    #[arg(long)]
    bot_scores: Option<PathBuf>,
    /// Short-URL resolution CSV (short_url,resolved_url).
    #[arg(long)]
    url_map: Option<PathBuf>,
    /// Language code tweets must carry.
    #[arg(long, default_value = "en")]
    lang: String,
    /// Which filter claims a tweet failing both.
    #[arg(long, value_enum, default_value = "language-first")]
    filter_order: OrderArg,

    /// Target maximum relative degree residual of the model fit.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Iteration cap of the model fit.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Significance level of the projection validation.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Multiple-testing correction of the projection validation.
    #[arg(long, value_enum, default_value = "fdr")]
    correction: CorrectionArg,
    /// Louvain resolution.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: f64,
    /// Louvain restarts; the best partition is kept.
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    /// Seed for Louvain and label propagation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Louvain labels used as propagation seeds.
    #[arg(long, value_enum, default_value = "linked")]
    seed_scope: SeedScopeArg,
    /// Drop weakly connected retweet components smaller than this.
    #[arg(long, default_value_t = 2)]
    min_component_size: usize,
    /// Sweep cap of label propagation.
    #[arg(long, default_value_t = DEFAULT_MAX_SWEEPS)]
    max_sweeps: usize,
    /// Users the bot-score deciles are computed over.
    #[arg(long, value_enum, default_value = "validated")]
    bot_population: PopulationArg,
    /// Largest communities compared in the stats stage.
    #[arg(long, default_value_t = 2)]
    top_communities: usize,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Opts {
    fn config(self) -> RunConfig {
        RunConfig {
            out: self.out,
            tweets: self.tweets,
            edges: self.edges,
            states: self.states,
            labels: self.labels,
            bot_scores: self.bot_scores,
            url_map: self.url_map,
            lang: self.lang,
            filter_order: match self.filter_order {
                OrderArg::LanguageFirst => FilterOrder::LanguageFirst,
                OrderArg::StateFirst => FilterOrder::StateFirst,
            },
            tol: self.tol,
            max_iter: self.max_iter,
            alpha: self.alpha,
            correction: match self.correction {
                CorrectionArg::Fdr => Correction::Fdr,
                CorrectionArg::Bonferroni => Correction::Bonferroni,
                CorrectionArg::None => Correction::None,
            },
            resolution: self.resolution,
            restarts: self.restarts,
            seed: self.seed,
            seed_scope: match self.seed_scope {
                SeedScopeArg::Linked => SeedScope::Linked,
                SeedScopeArg::All => SeedScope::All,
            },
            min_component_size: self.min_component_size,
            max_sweeps: self.max_sweeps,
            bot_population: match self.bot_population {
                PopulationArg::Validated => BotPopulation::Validated,
                PopulationArg::Scored => BotPopulation::Scored,
            },
            top_communities: self.top_communities,
            threads: self.threads,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stages, opts): (Vec<Stage>, Opts) = match cli.command {
        Command::Ingest(o) => (vec![Stage::Ingest], o),
        Command::Fit(o) => (vec![Stage::Fit], o),
        Command::Project(o) => (vec![Stage::Project], o),
        Command::Communities(o) => (vec![Stage::Communities], o),
        Command::Propagate(o) => (vec![Stage::Propagate], o),
        Command::Classify(o) => (vec![Stage::Classify], o),
        Command::Report(o) => (vec![Stage::Report], o),
        Command::Stats(o) => (vec![Stage::Stats], o),
        Command::All(o) => (Stage::ALL.to_vec(), o),
    };
    match run_stages(&stages, &opts.config()) {
        Ok(manifests) => {
            for m in manifests {
                log::info!("{}: wrote {} artifact(s)", m.stage.name(), m.outputs.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
