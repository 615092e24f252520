//! `pufauth` — enrollment, verification, attack campaigns, and statistics
//! for the simulated optical-PUF authentication system.
//!
//! Exit codes are a total function of the outcome: 0 accept/success,
//! 1 reject (or a failed check/envelope), 2 abort, 3 database exhausted,
//! 64 usage error, 65 malformed data, 74 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pufauth_core::adversary::{AttackKind, AttackScenario, RecordingChannel};
use pufauth_core::protocol::Channel;
use pufauth_core::config::Config;
use pufauth_core::enroll::{self, CrpDatabase, EnrollError};
use pufauth_core::keys::{HelperData, Pin};
use pufauth_core::protocol::{
    run_full_session, LoopbackChannel, ProtocolError, SessionOutcome, TerminalConfig,
    TerminalSession,
};
use pufauth_core::puf::{Interrogator, LightParams, NoiseModel, TokenDisorder};

mod stats_suite;

pub const EXIT_ACCEPT: u8 = 0;
pub const EXIT_REJECT: u8 = 1;
pub const EXIT_ABORT: u8 = 2;
pub const EXIT_EXHAUSTED: u8 = 3;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;
pub const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(name = "pufauth", version, about = "Optical-PUF remote entity authentication, desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GeometryArgs {
    /// Session key length in bits
    #[arg(long, default_value_t = 128)]
    n: usize,
    /// Terminal noise level (relative intensity noise per pixel)
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,
    /// Speckle pixels per interrogation
    #[arg(long, default_value_t = 4096)]
    n_out: usize,
    /// Input light modes
    #[arg(long, default_value_t = 64)]
    n_in: usize,
    /// Key length used for PIN derivation at stage E1
    #[arg(long, default_value_t = 128)]
    pin_key_len: usize,
    /// Master seed for enrollment and session randomness
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GeometryArgs {
    fn to_config(&self, num_rows: usize) -> Result<Config, CliError> {
        let cfg = self.build(num_rows);
        cfg.validate()
            .map_err(|e| CliError::Data(format!("invalid configuration: {e}")))?;
        Ok(cfg)
    }

    /// For `stats`: helper-capacity shortfalls are tolerated here because
    /// the suite skips the checks they would block (the speckle checks run
    /// at any geometry).
    fn to_config_relaxed(&self, num_rows: usize) -> Result<Config, CliError> {
        let cfg = self.build(num_rows);
        match cfg.validate() {
            Ok(()) | Err(pufauth_core::config::ConfigError::HelperCapacity { .. }) => Ok(cfg),
            Err(e) => Err(CliError::Data(format!("invalid configuration: {e}"))),
        }
    }

    fn build(&self, num_rows: usize) -> Config {
        Config {
            n: self.n,
            sigma: self.sigma,
            n_out: self.n_out,
            n_in: self.n_in,
            pin_key_len: self.pin_key_len,
            seed: self.seed,
            num_rows,
            ..Config::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// One-time manufacturer enrollment: mint a token pair, derive the PIN,
    /// and write the challenge-response database
    Enroll {
        /// Account name; default file names derive from it
        #[arg(long)]
        user: String,
        /// Directory for the written files
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Challenge-response rows to enroll
        #[arg(long, default_value_t = 64)]
        rows: usize,
        #[command(flatten)]
        geometry: GeometryArgs,
        /// User token file (defaults to <out-dir>/<user>.token)
        #[arg(long)]
        token: Option<PathBuf>,
        /// Database file (defaults to <out-dir>/<user>.db)
        #[arg(long)]
        db: Option<PathBuf>,
        /// Verifier token file (defaults to <out-dir>/<user>.verifier-token)
        #[arg(long)]
        verifier_token: Option<PathBuf>,
        /// Public E1 helper file (defaults to <out-dir>/<user>.helper)
        #[arg(long)]
        helper: Option<PathBuf>,
    },
    /// Run one full verification session over an in-process loopback
    Verify {
        /// Inserted token file
        #[arg(long)]
        token: PathBuf,
        /// Challenge-response database (rewritten with the consumed row removed)
        #[arg(long)]
        db: PathBuf,
        /// Verifier token file
        #[arg(long)]
        verifier_token: PathBuf,
        /// Public E1 helper file
        #[arg(long)]
        helper: PathBuf,
        /// PIN typed by the claimant
        #[arg(long)]
        pin: String,
        /// Optionally write the session's wire transcript to this file
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Run an attack campaign and compare against its expected envelope
    Attack {
        /// One of: pin-guess, blind-guess, replay, stolen-db, stolen-token
        scenario: String,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Replay only: re-serve the recorded row instead of deleting it
        #[arg(long)]
        reuse: bool,
        /// Stolen-token only: PIN attempts per trial
        #[arg(long, default_value_t = 1)]
        retries: u32,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Run the reduced statistical suite and print pass/fail per check
    Stats {
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Print a summary of a database file
    InspectDb {
        #[arg(long)]
        db: PathBuf,
    },
}

pub enum CliError {
    Usage(String),
    Data(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Io(m) => m,
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn read_token(path: &Path, n_in: usize, n_out: usize) -> Result<TokenDisorder, CliError> {
    let text = read_file(path)?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| CliError::Data(format!("{}: empty token store", path.display())))?;
    TokenDisorder::from_seed_hex(line.trim(), n_in, n_out)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version itself; both exit cleanly
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{e}");
            return ExitCode::from(EXIT_ACCEPT);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Enroll {
            user,
            out_dir,
            rows,
            geometry,
            token,
            db,
            verifier_token,
            helper,
        } => cmd_enroll(
            &user,
            &out_dir,
            rows,
            &geometry,
            token,
            db,
            verifier_token,
            helper,
        ),
        Command::Verify {
            token,
            db,
            verifier_token,
            helper,
            pin,
            transcript,
            geometry,
        } => cmd_verify(
            &token,
            &db,
            &verifier_token,
            &helper,
            &pin,
            transcript.as_deref(),
            &geometry,
        ),
        Command::Attack {
            scenario,
            trials,
            reuse,
            retries,
            geometry,
        } => cmd_attack(&scenario, trials, reuse, retries, &geometry),
        Command::Stats { geometry } => stats_suite::cmd_stats(&geometry.to_config_relaxed(64)?),
        Command::InspectDb { db } => cmd_inspect_db(&db),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_enroll(
    user: &str,
    out_dir: &Path,
    rows: usize,
    geometry: &GeometryArgs,
    token: Option<PathBuf>,
    db: Option<PathBuf>,
    verifier_token: Option<PathBuf>,
    helper: Option<PathBuf>,
) -> Result<u8, CliError> {
    let cfg = geometry.to_config(rows)?;
    let token_path = token.unwrap_or_else(|| out_dir.join(format!("{user}.token")));
    let db_path = db.unwrap_or_else(|| out_dir.join(format!("{user}.db")));
    let vt_path = verifier_token.unwrap_or_else(|| out_dir.join(format!("{user}.verifier-token")));
    let helper_path = helper.unwrap_or_else(|| out_dir.join(format!("{user}.helper")));

    let out = enroll::enroll_user(&cfg).map_err(enroll_error)?;

    write_file(&token_path, &format!("{}\n", out.token_a.seed_hex()))?;
    write_file(&vt_path, &format!("{}\n", out.token_b.seed_hex()))?;
    write_file(&helper_path, &out.e1_helper.to_lines())?;
    write_file(&db_path, &out.database.serialize())?;

    println!("enrolled user `{user}`");
    println!("  token:          {}", token_path.display());
    println!("  e1 helper:      {}", helper_path.display());
    println!("  database:       {} ({} rows, n={})", db_path.display(), rows, cfg.n);
    println!("  verifier token: {}", vt_path.display());
    // printed exactly once, stored nowhere
    println!("PIN: {}", out.pin);
    Ok(EXIT_ACCEPT)
}

fn enroll_error(e: EnrollError) -> CliError {
    CliError::Data(format!("enrollment failed: {e}"))
}

fn cmd_verify(
    token_path: &Path,
    db_path: &Path,
    vt_path: &Path,
    helper_path: &Path,
    pin: &str,
    transcript_path: Option<&Path>,
    geometry: &GeometryArgs,
) -> Result<u8, CliError> {
    let cfg = geometry.to_config(1)?;
    let typed_pin = Pin::parse(pin)
        .ok_or_else(|| CliError::Usage(format!("`{pin}` is not a 4-digit PIN")))?;
    let inserted = read_token(token_path, cfg.n_in, cfg.n_out)?;
    let token_b = read_token(vt_path, cfg.n_in, cfg.n_out)?;
    let e1_helper = HelperData::from_lines(&read_file(helper_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", helper_path.display())))?;
    let mut db = CrpDatabase::parse(&read_file(db_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", db_path.display())))?;

    let tcfg = TerminalConfig {
        p_def: LightParams::default_public(),
        e1_helper,
        grid: cfg.grid,
    };
    let bench_b = Interrogator::new(token_b, cfg.grid);
    let mut terminal =
        TerminalSession::insert_token(inserted, cfg.grid, NoiseModel::new(cfg.sigma, cfg.seed));
    let mut rng = session_rng(cfg.seed);

    // loopback transport; recording only if a transcript was requested
    let mut loopback = LoopbackChannel;
    let mut recording = RecordingChannel::honest();
    let channel: &mut dyn Channel = if transcript_path.is_some() {
        &mut recording
    } else {
        &mut loopback
    };

    let outcome = run_full_session(
        &mut db,
        &bench_b,
        &mut terminal,
        &tcfg,
        typed_pin,
        channel,
        &mut rng,
    );

    // consume-on-send: persist whatever the session consumed, whatever the
    // outcome (a V1 failure touched nothing, so this is a no-op rewrite)
    write_file(db_path, &db.serialize())?;
    if let Some(path) = transcript_path {
        write_file(path, &recording.transcript().to_text())?;
    }

    match outcome {
        Ok(SessionOutcome::Accept) => {
            println!("ACCEPT ({} rows remain)", db.len());
            Ok(EXIT_ACCEPT)
        }
        Ok(SessionOutcome::Reject) => {
            println!("REJECT ({} rows remain)", db.len());
            Ok(EXIT_REJECT)
        }
        Ok(SessionOutcome::Abort(reason)) => {
            println!("ABORT ({reason:?})");
            Ok(EXIT_ABORT)
        }
        Err(ProtocolError::Exhausted) => {
            eprintln!("database exhausted: re-enroll the user with a new token");
            Ok(EXIT_EXHAUSTED)
        }
        Err(e) => Err(CliError::Data(format!("session failed: {e}"))),
    }
}

fn session_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5e55_10f0)
}

fn cmd_attack(
    scenario: &str,
    trials: u64,
    reuse: bool,
    retries: u32,
    geometry: &GeometryArgs,
) -> Result<u8, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let cfg = Config {
        num_rows: 2,
        ..Config {
            n: geometry.n,
            sigma: geometry.sigma,
            n_out: geometry.n_out,
            n_in: geometry.n_in,
            pin_key_len: geometry.pin_key_len,
            seed: geometry.seed,
            ..Config::default()
        }
    };
    cfg.validate()
        .map_err(|e| CliError::Data(format!("invalid configuration: {e}")))?;

    let kind = match (scenario, reuse) {
        ("pin-guess", _) => AttackKind::PinGuess,
        ("blind-guess", _) => AttackKind::BlindResponseGuess,
        ("replay", true) => AttackKind::ReplayWithReuse,
        ("replay", false) => AttackKind::ReplayWithDeletion,
        ("stolen-db", _) => AttackKind::StolenDatabase,
        ("stolen-token", _) => AttackKind::StolenTokenNoPin,
        other => {
            return Err(CliError::Usage(format!(
                "unknown scenario `{}`; expected pin-guess | blind-guess | replay | stolen-db | stolen-token",
                other.0
            )))
        }
    };

    let seed = cfg.seed ^ 0xA77AC4;
    let scenario = AttackScenario::new(kind, trials, cfg);
    let stats = scenario
        .run(retries, seed)
        .map_err(|e| CliError::Data(format!("campaign failed: {e}")))?;

    let (lo, hi) = scenario.envelope(retries);
    let within = (lo..=hi).contains(&stats.success_rate);
    println!("scenario        : {}", kind.name());
    println!("trials          : {}", stats.trials);
    println!("successes       : {}", stats.successes);
    println!("success rate    : {:.6e}", stats.success_rate);
    println!(
        "wilson 95%      : [{:.6e}, {:.6e}]",
        stats.wilson_interval.0, stats.wilson_interval.1
    );
    println!("expected window : [{lo:.6e}, {hi:.6e}]");
    println!("verdict         : {}", if within { "WITHIN" } else { "OUTSIDE" });
    Ok(if within { EXIT_ACCEPT } else { EXIT_REJECT })
}

fn cmd_inspect_db(db_path: &Path) -> Result<u8, CliError> {
    let db = CrpDatabase::parse(&read_file(db_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", db_path.display())))?;
    println!("database        : {}", db_path.display());
    println!("format          : PUFAUTH-DB v1");
    println!("key length n    : {}", db.n());
    println!("verifier token  : {}", db.token_b_ref());
    println!("rows remaining  : {}", db.len());
    if let (Some(first), Some(last)) = (
        db.rows().map(|r| r.row_id).min(),
        db.rows().map(|r| r.row_id).max(),
    ) {
        println!("row id range    : {first}..={last}");
    }
    Ok(EXIT_ACCEPT)
}
