//! Two-stage verification: the local PIN check (V1) binds the user to the
//! inserted token without any network traffic; the one-time-pad exchange
//! (V2) authenticates the token to the verifier over an open channel.
//!
//! The verifier masks a fresh secret z_B as w = z_B xor k_A and accepts iff
//! the terminal returns z_A = z_B. The chosen database row is removed the
//! moment its challenge is issued (consume-on-send), so no interleaving or
//! abort can ever reuse it.

use rand::Rng;
use thiserror::Error;

use crate::bits::BitVec;
use crate::enroll::{CrpDatabase, DatabaseRow, EnrollError};
use crate::keys::{self, ExtractError, HelperData, Pin};
use crate::puf::{Interrogator, LightParams, NoiseModel, PufError, TokenDisorder};
use crate::wire::{AbortReason, Message, WireError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("database exhausted: a new token has to be assigned")]
    Exhausted,
    #[error("session in state {actual:?}, operation requires {expected}")]
    WrongState {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("channel failure: {0}")]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Puf(#[from] PufError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

impl From<EnrollError> for ProtocolError {
    fn from(e: EnrollError) -> Self {
        match e {
            EnrollError::Exhausted => ProtocolError::Exhausted,
            EnrollError::Extract(x) => ProtocolError::Extract(x),
            EnrollError::Puf(p) => ProtocolError::Puf(p),
            other => ProtocolError::Channel(ChannelError::Failed(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("frame dropped in transit")]
    Dropped,
    #[error("channel failed: {0}")]
    Failed(String),
}

/// Which way a frame travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    TerminalToVerifier,
    VerifierToTerminal,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::TerminalToVerifier => "t2v",
            Direction::VerifierToTerminal => "v2t",
        }
    }
}

/// Classical communication line between terminal and verifier. `transmit`
/// returns the frame actually delivered to the peer, which an interposed
/// adversary may have replaced.
pub trait Channel {
    fn transmit(&mut self, dir: Direction, frame: Vec<u8>) -> Result<Vec<u8>, ChannelError>;
}

/// Plain in-process loopback: delivers every frame unchanged.
#[derive(Debug, Default)]
pub struct LoopbackChannel;

impl Channel for LoopbackChannel {
    fn transmit(&mut self, _dir: Direction, frame: Vec<u8>) -> Result<Vec<u8>, ChannelError> {
        Ok(frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalState {
    AwaitPin,
    PinVerified,
    AwaitChallenge,
    ResponseSent,
    Aborted,
}

impl TerminalState {
    fn name(self) -> &'static str {
        match self {
            TerminalState::AwaitPin => "AwaitPin",
            TerminalState::PinVerified => "PinVerified",
            TerminalState::AwaitChallenge => "AwaitChallenge",
            TerminalState::ResponseSent => "ResponseSent",
            TerminalState::Aborted => "Aborted",
        }
    }
}

/// Public, per-deployment terminal configuration: no per-user secrets, just
/// the default challenge, the E1 reproduction helper, and the grid shape.
#[derive(Debug, Clone)]
pub struct TerminalConfig {
    pub p_def: LightParams,
    pub e1_helper: HelperData,
    pub grid: crate::config::GridSpec,
}

/// Terminal endpoint for one session: whatever token the claimant inserted
/// plus the terminal's own noise source.
pub struct TerminalSession {
    state: TerminalState,
    bench: Interrogator,
    noise: NoiseModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V1Result {
    Accepted,
    Rejected,
}

impl TerminalSession {
    /// Claimant inserts a token (hers or not) into the terminal.
    pub fn insert_token(
        token: TokenDisorder,
        grid: crate::config::GridSpec,
        noise: NoiseModel,
    ) -> Self {
        Self::with_bench(Interrogator::new(token, grid), noise)
    }

    /// Builds the session around an existing readout bench, reusing its
    /// cached transmission matrices.
    pub fn with_bench(bench: Interrogator, noise: NoiseModel) -> Self {
        TerminalSession {
            state: TerminalState::AwaitPin,
            bench,
            noise,
        }
    }

    /// Skips V1. A malicious claimant controls the terminal and may deviate
    /// from the procedure; stage V1 only protects the honest user's token,
    /// so the attack harness is allowed to jump straight to V2.
    pub fn force_pin_verified(&mut self) {
        self.state = TerminalState::PinVerified;
    }

    pub fn state(&self) -> TerminalState {
        self.state
    }

    pub fn inserted_token(&self) -> &TokenDisorder {
        self.bench.token()
    }

    fn require_state(&mut self, ok: &[TerminalState], expected: &'static str)
        -> Result<(), ProtocolError> {
        if ok.contains(&self.state) {
            Ok(())
        } else {
            let actual = self.state.name();
            self.state = TerminalState::Aborted;
            Err(ProtocolError::WrongState { expected, actual })
        }
    }

    /// Stage V1: authenticate the user to the token. Interrogates the
    /// inserted token at the public default parameters, reproduces the PIN,
    /// and compares against what was typed. Entirely local; emits nothing.
    pub fn stage_v1(
        &mut self,
        typed_pin: Pin,
        cfg: &TerminalConfig,
    ) -> Result<V1Result, ProtocolError> {
        self.require_state(&[TerminalState::AwaitPin], "AwaitPin")?;
        let speckle = match self.bench.interrogate(&cfg.p_def, &mut self.noise) {
            Ok(s) => s,
            Err(e) => {
                self.state = TerminalState::Aborted;
                return Err(e.into());
            }
        };
        let derived = keys::reproduce_key(&speckle, &cfg.e1_helper)
            .and_then(|key| keys::derive_pin(&key));
        match derived {
            Ok(reproduced) if reproduced == typed_pin => {
                self.state = TerminalState::PinVerified;
                Ok(V1Result::Accepted)
            }
            Ok(_) => {
                self.state = TerminalState::Aborted;
                Ok(V1Result::Rejected)
            }
            Err(e) => {
                self.state = TerminalState::Aborted;
                Err(e.into())
            }
        }
    }

    /// Marks the challenge request as sent (PinVerified -> AwaitChallenge).
    pub fn begin_v2(&mut self) -> Result<Message, ProtocolError> {
        self.require_state(&[TerminalState::PinVerified], "PinVerified")?;
        self.state = TerminalState::AwaitChallenge;
        Ok(Message::AuthRequest {
            user_id: String::new(),
        })
    }

    pub fn begin_v2_as(&mut self, user_id: &str) -> Result<Message, ProtocolError> {
        self.require_state(&[TerminalState::PinVerified], "PinVerified")?;
        self.state = TerminalState::AwaitChallenge;
        Ok(Message::AuthRequest {
            user_id: user_id.to_string(),
        })
    }

    /// Stage V2, terminal side: interrogate the inserted token at the
    /// received challenge, reproduce the key through the delivered helper,
    /// and unmask z_A = k_A xor w.
    pub fn respond(&mut self, challenge: &Message) -> Result<Message, ProtocolError> {
        self.require_state(
            &[TerminalState::PinVerified, TerminalState::AwaitChallenge],
            "PinVerified|AwaitChallenge",
        )?;
        let Message::Challenge { params, w, helper_a } = challenge else {
            self.state = TerminalState::Aborted;
            return Err(ProtocolError::Wire(WireError::BadTag(challenge.tag())));
        };
        let outcome = (|| -> Result<Message, ProtocolError> {
            let speckle = self.bench.interrogate(params, &mut self.noise)?;
            let key_a = keys::reproduce_key(&speckle, helper_a)?;
            let z_a = key_a.bits().xor(w).map_err(|_| {
                ProtocolError::Extract(ExtractError::LengthMismatch {
                    left: key_a.len(),
                    right: w.len(),
                })
            })?;
            Ok(Message::Response { z_a })
        })();
        match outcome {
            Ok(msg) => {
                self.state = TerminalState::ResponseSent;
                Ok(msg)
            }
            Err(e) => {
                self.state = TerminalState::Aborted;
                Err(e)
            }
        }
    }

    pub fn abort(&mut self) {
        self.state = TerminalState::Aborted;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifierState {
    Idle,
    ChallengeSent,
    Decided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    None,
    Accept,
    Reject,
}

/// Verifier endpoint for one session. The fresh secret z_B lives only here;
/// no message type can carry it.
pub struct VerifierSession {
    state: VerifierState,
    chosen_row_id: u64,
    z_b: BitVec,
    outcome: Outcome,
}

impl VerifierSession {
    pub fn state(&self) -> VerifierState {
        self.state
    }

    pub fn chosen_row_id(&self) -> u64 {
        self.chosen_row_id
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }
}

/// Builds the challenge for a specific row with a caller-supplied secret.
/// This is the deterministic core of [`verifier_begin`]; tests use it to
/// pin z_B, and the replay harness uses it to model row reuse.
pub fn craft_challenge(
    bench_b: &Interrogator,
    row: &DatabaseRow,
    z_b: BitVec,
) -> Result<(Message, VerifierSession), ProtocolError> {
    let speckle_b = bench_b.interrogate(&row.params, &mut NoiseModel::noiseless())?;
    let key_b = keys::reproduce_key(&speckle_b, &row.helper_b)?;
    // w = z_B xor (k_A xor k_B) xor k_B = z_B xor k_A
    let w = z_b
        .xor(row.joint_key.bits())
        .and_then(|v| v.xor(key_b.bits()))
        .map_err(|_| {
            ProtocolError::Extract(ExtractError::LengthMismatch {
                left: z_b.len(),
                right: row.joint_key.len(),
            })
        })?;
    let session = VerifierSession {
        state: VerifierState::ChallengeSent,
        chosen_row_id: row.row_id,
        z_b,
        outcome: Outcome::None,
    };
    let msg = Message::Challenge {
        params: row.params,
        w,
        helper_a: row.helper_a.clone(),
    };
    Ok((msg, session))
}

/// Stage V2, verifier side: draw a random row, remove it from the database
/// immediately, derive k_B from token B, and send z_B masked with k_A.
pub fn verifier_begin(
    db: &mut CrpDatabase,
    bench_b: &Interrogator,
    rng: &mut impl Rng,
) -> Result<(Message, VerifierSession), ProtocolError> {
    let row = db.take_random(rng)?; // consume-on-send
    let z_b = BitVec::random(db.n(), rng);
    craft_challenge(bench_b, &row, z_b)
}

/// Final verdict: accept iff the response equals z_B bitwise. A response of
/// the wrong shape rejects as a protocol violation; the consumed row stays
/// consumed either way.
pub fn verifier_decide(
    session: &mut VerifierSession,
    response: &Message,
) -> Result<Message, ProtocolError> {
    if session.state != VerifierState::ChallengeSent {
        return Err(ProtocolError::WrongState {
            expected: "ChallengeSent",
            actual: match session.state {
                VerifierState::Idle => "Idle",
                VerifierState::ChallengeSent => "ChallengeSent",
                VerifierState::Decided => "Decided",
            },
        });
    }
    let accept = match response {
        Message::Response { z_a } if z_a.len() == session.z_b.len() => *z_a == session.z_b,
        _ => false, // wrong shape or wrong message: protocol violation
    };
    session.state = VerifierState::Decided;
    session.outcome = if accept { Outcome::Accept } else { Outcome::Reject };
    Ok(Message::Decision { accept })
}

/// How a full session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionOutcome {
    Accept,
    Reject,
    Abort(AbortReason),
}

/// Runs one complete session: V1 locally at the terminal (no traffic on
/// failure), then the V2 exchange over `channel`. The verifier's database
/// loses exactly one row once V2 starts, regardless of outcome.
pub fn run_full_session(
    db: &mut CrpDatabase,
    bench_b: &Interrogator,
    terminal: &mut TerminalSession,
    terminal_cfg: &TerminalConfig,
    typed_pin: Pin,
    channel: &mut dyn Channel,
    rng: &mut impl Rng,
) -> Result<SessionOutcome, ProtocolError> {
    // Stage V1 is entirely local: a failure produces zero frames.
    match terminal.stage_v1(typed_pin, terminal_cfg) {
        Ok(V1Result::Accepted) => {}
        Ok(V1Result::Rejected) => return Ok(SessionOutcome::Abort(AbortReason::PinMismatch)),
        Err(ProtocolError::Extract(ExtractError::PinDerivation)) => {
            return Ok(SessionOutcome::Abort(AbortReason::PinDerivation))
        }
        Err(e) => return Err(e),
    }

    // Terminal -> verifier: request a challenge.
    let request = terminal.begin_v2()?;
    let delivered = match channel.transmit(Direction::TerminalToVerifier, request.encode()) {
        Ok(f) => f,
        Err(_) => return Ok(SessionOutcome::Abort(AbortReason::ChannelFailure)),
    };
    if Message::decode(&delivered, None).is_err() {
        return Ok(SessionOutcome::Abort(AbortReason::ProtocolViolation));
    }

    // Verifier -> terminal: masked challenge (row consumed here).
    let (challenge, mut verifier_session) = match verifier_begin(db, bench_b, rng) {
        Ok(x) => x,
        Err(ProtocolError::Exhausted) => {
            let abort = Message::Abort { reason: AbortReason::Exhausted };
            let _ = channel.transmit(Direction::VerifierToTerminal, abort.encode());
            return Err(ProtocolError::Exhausted);
        }
        Err(e) => return Err(e),
    };
    let delivered = match channel.transmit(Direction::VerifierToTerminal, challenge.encode()) {
        Ok(f) => f,
        Err(_) => {
            terminal.abort();
            return Ok(SessionOutcome::Abort(AbortReason::ChannelFailure));
        }
    };
    let challenge_seen = match Message::decode(&delivered, None) {
        Ok(msg @ Message::Challenge { .. }) => msg,
        _ => {
            // Malformed challenge mid-session: abort; the row stays consumed.
            terminal.abort();
            let abort = Message::Abort { reason: AbortReason::MalformedChallenge };
            let _ = channel.transmit(Direction::TerminalToVerifier, abort.encode());
            return Ok(SessionOutcome::Abort(AbortReason::MalformedChallenge));
        }
    };

    // Terminal -> verifier: unmasked response.
    let response = match terminal.respond(&challenge_seen) {
        Ok(r) => r,
        Err(ProtocolError::Extract(ExtractError::CorruptHelper { .. })) => {
            let abort = Message::Abort { reason: AbortReason::CorruptHelper };
            let _ = channel.transmit(Direction::TerminalToVerifier, abort.encode());
            return Ok(SessionOutcome::Abort(AbortReason::CorruptHelper));
        }
        Err(e) => return Err(e),
    };
    let delivered = match channel.transmit(Direction::TerminalToVerifier, response.encode()) {
        Ok(f) => f,
        Err(_) => return Ok(SessionOutcome::Abort(AbortReason::ChannelFailure)),
    };
    let response_seen = match Message::decode(&delivered, Some(db.n())) {
        Ok(msg) => msg,
        Err(_) => Message::Abort { reason: AbortReason::ProtocolViolation },
    };

    // Verifier -> terminal: decision.
    let decision = verifier_decide(&mut verifier_session, &response_seen)?;
    let delivered = match channel.transmit(Direction::VerifierToTerminal, decision.encode()) {
        Ok(f) => f,
        Err(_) => return Ok(SessionOutcome::Abort(AbortReason::ChannelFailure)),
    };
    match Message::decode(&delivered, None) {
        Ok(Message::Decision { accept: true }) => Ok(SessionOutcome::Accept),
        Ok(Message::Decision { accept: false }) => Ok(SessionOutcome::Reject),
        _ => Ok(SessionOutcome::Abort(AbortReason::ProtocolViolation)),
    }
}
