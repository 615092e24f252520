//! Framed wire protocol: 4-byte big-endian length prefix, 1-byte message
//! tag, then fixed-order fields. Bit vectors travel as big-endian packed
//! bytes; their lengths are implied by the session key length n, which the
//! challenge frame carries explicitly.

use thiserror::Error;

use crate::bits::BitVec;
use crate::keys::HelperData;
use crate::puf::{LightParams, PARAMS_ENCODED_LEN};

pub const TAG_AUTH_REQUEST: u8 = 0x01;
pub const TAG_CHALLENGE: u8 = 0x02;
pub const TAG_RESPONSE: u8 = 0x03;
pub const TAG_DECISION: u8 = 0x04;
pub const TAG_ABORT: u8 = 0x05;

/// Upper bound on a frame body; anything larger is a corrupt prefix.
const MAX_FRAME_LEN: u32 = 1 << 24;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown message tag 0x{0:02x}")]
    BadTag(u8),
    #[error("frame length {0} exceeds limit")]
    OversizedFrame(u32),
    #[error("frame body has wrong size for its tag")]
    BadBody,
    #[error("user id is not valid utf-8")]
    BadUserId,
    #[error("challenge carries malformed light parameters")]
    BadParams,
    #[error("challenge carries malformed helper data")]
    BadHelper,
    #[error("decoding a response requires the session key length")]
    NeedSessionLength,
    #[error("unknown abort reason code 0x{0:02x}")]
    BadReason(u8),
    #[error("decision flag must be 0 or 1, found {0}")]
    BadDecision(u8),
}

/// Why a session was torn down. Travels as a one-byte code in abort frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    PinMismatch,
    PinDerivation,
    MalformedChallenge,
    CorruptHelper,
    Extraction,
    ChannelFailure,
    ProtocolViolation,
    Exhausted,
}

impl AbortReason {
    pub fn code(self) -> u8 {
        match self {
            AbortReason::PinMismatch => 0x01,
            AbortReason::PinDerivation => 0x02,
            AbortReason::MalformedChallenge => 0x03,
            AbortReason::CorruptHelper => 0x04,
            AbortReason::Extraction => 0x05,
            AbortReason::ChannelFailure => 0x06,
            AbortReason::ProtocolViolation => 0x07,
            AbortReason::Exhausted => 0x08,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0x01 => AbortReason::PinMismatch,
            0x02 => AbortReason::PinDerivation,
            0x03 => AbortReason::MalformedChallenge,
            0x04 => AbortReason::CorruptHelper,
            0x05 => AbortReason::Extraction,
            0x06 => AbortReason::ChannelFailure,
            0x07 => AbortReason::ProtocolViolation,
            0x08 => AbortReason::Exhausted,
            other => return Err(WireError::BadReason(other)),
        })
    }
}

/// Protocol messages. The challenge never carries the joint key, k_B, or
/// z_B; only the pad w = z_B xor k_A and public reconstruction data cross
/// the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    AuthRequest {
        user_id: String,
    },
    Challenge {
        params: LightParams,
        w: BitVec,
        helper_a: HelperData,
    },
    Response {
        z_a: BitVec,
    },
    Decision {
        accept: bool,
    },
    Abort {
        reason: AbortReason,
    },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::AuthRequest { .. } => TAG_AUTH_REQUEST,
            Message::Challenge { .. } => TAG_CHALLENGE,
            Message::Response { .. } => TAG_RESPONSE,
            Message::Decision { .. } => TAG_DECISION,
            Message::Abort { .. } => TAG_ABORT,
        }
    }

    /// Serializes into one length-prefixed frame.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Message::AuthRequest { user_id } => body.extend_from_slice(user_id.as_bytes()),
            Message::Challenge { params, w, helper_a } => {
                debug_assert_eq!(w.len(), helper_a.key_len());
                body.extend_from_slice(&(w.len() as u16).to_be_bytes());
                body.extend_from_slice(&params.encode());
                body.extend_from_slice(w.as_bytes());
                for group in helper_a.groups() {
                    for &p in group {
                        body.extend_from_slice(&(p as u16).to_be_bytes());
                    }
                }
            }
            Message::Response { z_a } => body.extend_from_slice(z_a.as_bytes()),
            Message::Decision { accept } => body.push(u8::from(*accept)),
            Message::Abort { reason } => body.push(reason.code()),
        }
        let mut frame = Vec::with_capacity(5 + body.len());
        frame.extend_from_slice(&(1 + body.len() as u32).to_be_bytes());
        frame.push(self.tag());
        frame.extend_from_slice(&body);
        frame
    }

    /// Decodes one frame. `session_n` is required only for response frames,
    /// whose bit length the challenge established.
    pub fn decode(frame: &[u8], session_n: Option<usize>) -> Result<Message, WireError> {
        if frame.len() < 5 {
            return Err(WireError::Truncated);
        }
        let declared = u32::from_be_bytes(frame[..4].try_into().unwrap());
        if declared > MAX_FRAME_LEN {
            return Err(WireError::OversizedFrame(declared));
        }
        if frame.len() != 4 + declared as usize || declared == 0 {
            return Err(WireError::Truncated);
        }
        let tag = frame[4];
        let body = &frame[5..];
        match tag {
            TAG_AUTH_REQUEST => {
                let user_id =
                    String::from_utf8(body.to_vec()).map_err(|_| WireError::BadUserId)?;
                Ok(Message::AuthRequest { user_id })
            }
            TAG_CHALLENGE => {
                if body.len() < 2 + PARAMS_ENCODED_LEN {
                    return Err(WireError::BadBody);
                }
                let n = u16::from_be_bytes(body[..2].try_into().unwrap()) as usize;
                let params = LightParams::decode(&body[2..2 + PARAMS_ENCODED_LEN])
                    .map_err(|_| WireError::BadParams)?;
                let w_bytes = n.div_ceil(8);
                let helper_bytes = 6 * n;
                let expected = 2 + PARAMS_ENCODED_LEN + w_bytes + helper_bytes;
                if body.len() != expected {
                    return Err(WireError::BadBody);
                }
                let w_start = 2 + PARAMS_ENCODED_LEN;
                let w = BitVec::from_bytes(n, &body[w_start..w_start + w_bytes])
                    .map_err(|_| WireError::BadBody)?;
                let mut groups = Vec::with_capacity(n);
                let mut cursor = w_start + w_bytes;
                for _ in 0..n {
                    let mut g = [0u32; 3];
                    for slot in &mut g {
                        *slot =
                            u16::from_be_bytes(body[cursor..cursor + 2].try_into().unwrap())
                                as u32;
                        cursor += 2;
                    }
                    groups.push(g);
                }
                let helper_a = HelperData::new(groups).map_err(|_| WireError::BadHelper)?;
                Ok(Message::Challenge { params, w, helper_a })
            }
            TAG_RESPONSE => {
                let n = session_n.ok_or(WireError::NeedSessionLength)?;
                let z_a = BitVec::from_bytes(n, body).map_err(|_| WireError::BadBody)?;
                Ok(Message::Response { z_a })
            }
            TAG_DECISION => {
                if body.len() != 1 {
                    return Err(WireError::BadBody);
                }
                match body[0] {
                    0 | 1 => Ok(Message::Decision { accept: body[0] == 1 }),
                    other => Err(WireError::BadDecision(other)),
                }
            }
            TAG_ABORT => {
                if body.len() != 1 {
                    return Err(WireError::BadBody);
                }
                Ok(Message::Abort {
                    reason: AbortReason::from_code(body[0])?,
                })
            }
            other => Err(WireError::BadTag(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_challenge(n: usize) -> Message {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let groups = (0..n as u32).map(|j| [3 * j, 3 * j + 1, 3 * j + 2]).collect();
        Message::Challenge {
            params: LightParams {
                wavelength_index: 3,
                incidence_point: (1, 6),
                incidence_angle_index: 4,
                phase_mask_seed: 0xdead_beef,
                power: 1.0,
            },
            w: BitVec::random(n, &mut rng),
            helper_a: HelperData::new(groups).unwrap(),
        }
    }

    #[test]
    fn frames_roundtrip() {
        let n = 24;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let messages = [
            Message::AuthRequest { user_id: "alice".into() },
            sample_challenge(n),
            Message::Response { z_a: BitVec::random(n, &mut rng) },
            Message::Decision { accept: true },
            Message::Decision { accept: false },
            Message::Abort { reason: AbortReason::CorruptHelper },
        ];
        for msg in messages {
            let frame = msg.encode();
            let declared = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
            assert_eq!(declared, frame.len() - 4);
            let back = Message::decode(&frame, Some(n)).unwrap();
            assert_eq!(back, msg);
        }
    }

    #[test]
    fn response_needs_session_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = Message::Response { z_a: BitVec::random(16, &mut rng) }.encode();
        assert_eq!(
            Message::decode(&frame, None),
            Err(WireError::NeedSessionLength)
        );
        // wrong n makes the body size invalid
        assert_eq!(Message::decode(&frame, Some(128)), Err(WireError::BadBody));
    }

    #[test]
    fn corrupt_frames_rejected() {
        assert_eq!(Message::decode(&[], None), Err(WireError::Truncated));
        let mut frame = Message::Decision { accept: true }.encode();
        frame[4] = 0x7f;
        assert_eq!(Message::decode(&frame, None), Err(WireError::BadTag(0x7f)));
        let mut bad_flag = Message::Decision { accept: true }.encode();
        bad_flag[5] = 9;
        assert_eq!(
            Message::decode(&bad_flag, None),
            Err(WireError::BadDecision(9))
        );
        let mut short = sample_challenge(8).encode();
        short.truncate(short.len() - 1);
        assert!(Message::decode(&short, None).is_err());
    }

    #[test]
    fn abort_reason_codes_roundtrip() {
        for reason in [
            AbortReason::PinMismatch,
            AbortReason::PinDerivation,
            AbortReason::MalformedChallenge,
            AbortReason::CorruptHelper,
            AbortReason::Extraction,
            AbortReason::ChannelFailure,
            AbortReason::ProtocolViolation,
            AbortReason::Exhausted,
        ] {
            assert_eq!(AbortReason::from_code(reason.code()).unwrap(), reason);
        }
        assert!(AbortReason::from_code(0x99).is_err());
    }
}
