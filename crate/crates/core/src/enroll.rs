//! Manufacturer-side enrollment: stage E1 derives the user PIN from the
//! public default challenge, stage E2 builds the challenge-response database
//! of XOR-masked joint keys. Individual keys never persist; every row stores
//! k_A xor k_B, never either key alone.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::Config;
use crate::keys::{self, ExtractError, HelperData, Key, Pin};
use crate::puf::{self, Interrogator, LightParams, NoiseModel, PufError, TokenDisorder};

pub const DB_HEADER_PREFIX: &str = "PUFAUTH-DB v1";

#[derive(Debug, Error, PartialEq)]
pub enum EnrollError {
    #[error("challenge grid too small: {requested} rows requested, {available} distinct challenges available")]
    Capacity { requested: u128, available: u128 },
    #[error("database exhausted: no challenge-response rows remain")]
    Exhausted,
    #[error("database parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no usable token found after {0} manufacturing attempts")]
    ManufacturingFailed(u32),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Puf(#[from] PufError),
}

/// One single-use challenge-response record.
#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseRow {
    pub row_id: u64,
    pub params: LightParams,
    /// k_A xor k_B for this challenge; reveals neither key alone.
    pub joint_key: Key,
    pub helper_a: HelperData,
    pub helper_b: HelperData,
}

/// Verifier-side table of challenge-response rows. Rows are only ever
/// removed, never modified; removal is the single-use guarantee.
#[derive(Debug, Clone)]
pub struct CrpDatabase {
    rows: BTreeMap<u64, DatabaseRow>,
    token_b_ref: String,
    n: usize,
    consumed_count: usize,
}

impl CrpDatabase {
    pub fn new(token_b_ref: String, n: usize) -> Self {
        CrpDatabase {
            rows: BTreeMap::new(),
            token_b_ref,
            n,
            consumed_count: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn token_b_ref(&self) -> &str {
        &self.token_b_ref
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn consumed_count(&self) -> usize {
        self.consumed_count
    }

    pub fn contains(&self, row_id: u64) -> bool {
        self.rows.contains_key(&row_id)
    }

    pub fn rows(&self) -> impl Iterator<Item = &DatabaseRow> {
        self.rows.values()
    }

    pub fn insert(&mut self, row: DatabaseRow) -> Result<(), EnrollError> {
        if row.joint_key.len() != self.n {
            return Err(EnrollError::Parse {
                line: 0,
                msg: format!(
                    "joint key length {} does not match database n={}",
                    row.joint_key.len(),
                    self.n
                ),
            });
        }
        if self.rows.contains_key(&row.row_id) {
            return Err(EnrollError::Parse {
                line: 0,
                msg: format!("duplicate row_id {}", row.row_id),
            });
        }
        self.rows.insert(row.row_id, row);
        Ok(())
    }

    /// Removes and returns a uniformly random row (consume-on-send).
    pub fn take_random(&mut self, rng: &mut impl Rng) -> Result<DatabaseRow, EnrollError> {
        if self.rows.is_empty() {
            return Err(EnrollError::Exhausted);
        }
        let idx = rng.random_range(0..self.rows.len());
        let id = *self.rows.keys().nth(idx).expect("index within map");
        let row = self.rows.remove(&id).expect("key just observed");
        self.consumed_count += 1;
        Ok(row)
    }

    /// Copies a row without removing it. This deliberately breaks the
    /// single-use rule and exists only so the replay harness can model a
    /// non-compliant deployment.
    pub fn peek_clone(&self, row_id: u64) -> Option<DatabaseRow> {
        self.rows.get(&row_id).cloned()
    }

    /// File form: header line, then one tab-separated line per row.
    pub fn serialize(&self) -> String {
        let mut out = format!(
            "{DB_HEADER_PREFIX} n={} token_b={}\n",
            self.n, self.token_b_ref
        );
        for row in self.rows.values() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                row.row_id,
                row.params.encode_hex(),
                row.joint_key.to_hex(),
                row.helper_a.to_field(),
                row.helper_b.to_field(),
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, EnrollError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(EnrollError::Parse {
            line: 1,
            msg: "empty database file".into(),
        })?;
        let rest = header
            .strip_prefix(DB_HEADER_PREFIX)
            .ok_or(EnrollError::Parse {
                line: 1,
                msg: format!("expected `{DB_HEADER_PREFIX}` header"),
            })?;
        let mut n: Option<usize> = None;
        let mut token_b: Option<String> = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("n=") {
                n = Some(v.parse().map_err(|_| EnrollError::Parse {
                    line: 1,
                    msg: format!("bad n field `{v}`"),
                })?);
            } else if let Some(v) = field.strip_prefix("token_b=") {
                token_b = Some(v.to_string());
            }
        }
        let n = n.ok_or(EnrollError::Parse {
            line: 1,
            msg: "missing n= field".into(),
        })?;
        let token_b = token_b.ok_or(EnrollError::Parse {
            line: 1,
            msg: "missing token_b= field".into(),
        })?;
        let mut db = CrpDatabase::new(token_b, n);
        let mut params_seen: HashSet<[u8; puf::PARAMS_ENCODED_LEN]> = HashSet::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(EnrollError::Parse {
                    line: line_no,
                    msg: format!("expected 5 tab-separated fields, found {}", fields.len()),
                });
            }
            let row_id = fields[0].parse::<u64>().map_err(|_| EnrollError::Parse {
                line: line_no,
                msg: format!("bad row_id `{}`", fields[0]),
            })?;
            let params = LightParams::decode_hex(fields[1]).map_err(|e| EnrollError::Parse {
                line: line_no,
                msg: format!("bad params: {e}"),
            })?;
            if !params_seen.insert(params.encode()) {
                return Err(EnrollError::Parse {
                    line: line_no,
                    msg: "duplicate challenge parameters".into(),
                });
            }
            let joint_key = Key::from_hex(n, fields[2]).map_err(|e| EnrollError::Parse {
                line: line_no,
                msg: format!("bad joint key: {e}"),
            })?;
            let helper_a = HelperData::from_field(fields[3]).map_err(|e| EnrollError::Parse {
                line: line_no,
                msg: format!("bad helper_a: {e}"),
            })?;
            let helper_b = HelperData::from_field(fields[4]).map_err(|e| EnrollError::Parse {
                line: line_no,
                msg: format!("bad helper_b: {e}"),
            })?;
            db.insert(DatabaseRow {
                row_id,
                params,
                joint_key,
                helper_a,
                helper_b,
            })
            .map_err(|e| match e {
                EnrollError::Parse { msg, .. } => EnrollError::Parse { line: line_no, msg },
                other => other,
            })?;
        }
        Ok(db)
    }
}

/// Everything enrollment produces. The PIN goes to the user and is stored
/// nowhere; the E1 helper is public terminal configuration; the database and
/// token B stay with the verifier.
pub struct EnrollmentOutput {
    pub token_a: TokenDisorder,
    pub token_b: TokenDisorder,
    pub pin: Pin,
    pub e1_helper: HelperData,
    pub database: CrpDatabase,
}

/// Stage E1: interrogate the token noiselessly at the public default
/// parameters and derive the PIN plus its reproduction helper.
pub fn enroll_stage_e1(
    token_a: &TokenDisorder,
    p_def: &LightParams,
    cfg: &Config,
) -> Result<(Pin, HelperData), EnrollError> {
    let bench = Interrogator::new(*token_a, cfg.grid);
    enroll_stage_e1_with(&bench, p_def, cfg)
}

/// E1 against a prepared interrogation bench (lets campaigns reuse the
/// cached transmission matrix).
pub fn enroll_stage_e1_with(
    bench: &Interrogator,
    p_def: &LightParams,
    cfg: &Config,
) -> Result<(Pin, HelperData), EnrollError> {
    let speckle = bench.interrogate(p_def, &mut NoiseModel::noiseless())?;
    let (key, helper) = keys::enroll_key(&speckle, cfg.pin_key_len)?;
    let pin = keys::derive_pin(&key)?;
    Ok((pin, helper))
}

/// Stage E2: sample `num_rows` distinct challenges (the public default is
/// excluded), interrogate both tokens noiselessly for each, and store the
/// XOR-masked joint key with both helpers. Individual keys drop out of
/// scope here and are never returned.
pub fn enroll_stage_e2(
    token_a: &TokenDisorder,
    token_b: &TokenDisorder,
    num_rows: usize,
    rng_seed: u64,
    cfg: &Config,
) -> Result<CrpDatabase, EnrollError> {
    let available = cfg.grid.size().saturating_sub(1); // P_def reserved for E1/V1
    if num_rows as u128 > available {
        return Err(EnrollError::Capacity {
            requested: num_rows as u128,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let challenges = sample_distinct_challenges(num_rows, cfg, &mut rng);

    let bench_a = Interrogator::new(*token_a, cfg.grid);
    let bench_b = Interrogator::new(*token_b, cfg.grid);
    let mut db = CrpDatabase::new(token_b.fingerprint(), cfg.n);
    for (row_id, params) in challenges.into_iter().enumerate() {
        let speckle_a = bench_a.interrogate(&params, &mut NoiseModel::noiseless())?;
        let speckle_b = bench_b.interrogate(&params, &mut NoiseModel::noiseless())?;
        let (key_a, helper_a) = keys::enroll_key(&speckle_a, cfg.n)?;
        let (key_b, helper_b) = keys::enroll_key(&speckle_b, cfg.n)?;
        let joint_key = key_a.xor(&key_b)?;
        db.insert(DatabaseRow {
            row_id: row_id as u64,
            params,
            joint_key,
            helper_a,
            helper_b,
        })?;
    }
    Ok(db)
}

fn sample_distinct_challenges(
    num_rows: usize,
    cfg: &Config,
    rng: &mut ChaCha8Rng,
) -> Vec<LightParams> {
    let p_def = LightParams::default_public().encode();
    // Small grids are enumerated and shuffled; large ones use rejection
    // sampling, where collisions are vanishingly rare.
    const ENUM_LIMIT: u128 = 1 << 20;
    if cfg.grid.size() <= ENUM_LIMIT {
        let mut all = Vec::with_capacity(cfg.grid.size() as usize);
        let masks = 1u64 << cfg.grid.phase_mask_bits.min(63);
        for wl in 0..cfg.grid.wavelengths {
            for x in 0..cfg.grid.points_per_axis {
                for y in 0..cfg.grid.points_per_axis {
                    for angle in 0..cfg.grid.angles {
                        for mask in 0..masks {
                            let p = LightParams {
                                wavelength_index: wl as u8,
                                incidence_point: (x as u8, y as u8),
                                incidence_angle_index: angle as u8,
                                phase_mask_seed: mask,
                                power: 1.0,
                            };
                            if p.encode() != p_def {
                                all.push(p);
                            }
                        }
                    }
                }
            }
        }
        for i in (1..all.len()).rev() {
            let j = rng.random_range(0..=i);
            all.swap(i, j);
        }
        all.truncate(num_rows);
        all
    } else {
        let mut seen = HashSet::with_capacity(num_rows);
        let mut out = Vec::with_capacity(num_rows);
        while out.len() < num_rows {
            let p = LightParams::sample(&cfg.grid, rng);
            let enc = p.encode();
            if enc != p_def && seen.insert(enc) {
                out.push(p);
            }
        }
        out
    }
}

/// Full two-stage enrollment of a fresh user. Token seeds derive from
/// `cfg.seed`; a token whose E1 PIN derivation fails rejection sampling is
/// discarded and re-manufactured.
pub fn enroll_user(cfg: &Config) -> Result<EnrollmentOutput, EnrollError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let token_b = TokenDisorder::random(&mut rng, cfg.n_in, cfg.n_out);
    const MAX_ATTEMPTS: u32 = 64;
    for _ in 0..MAX_ATTEMPTS {
        let token_a = TokenDisorder::random(&mut rng, cfg.n_in, cfg.n_out);
        let p_def = LightParams::default_public();
        match enroll_stage_e1(&token_a, &p_def, cfg) {
            Ok((pin, e1_helper)) => {
                let database =
                    enroll_stage_e2(&token_a, &token_b, cfg.num_rows, rng.random(), cfg)?;
                return Ok(EnrollmentOutput {
                    token_a,
                    token_b,
                    pin,
                    e1_helper,
                    database,
                });
            }
            Err(EnrollError::Extract(ExtractError::PinDerivation)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(EnrollError::ManufacturingFailed(MAX_ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GridSpec;

    fn test_config() -> Config {
        Config {
            n: 16,
            pin_key_len: 42,
            n_in: 16,
            n_out: 256,
            num_rows: 4,
            seed: 11,
            ..Config::default()
        }
    }

    #[test]
    fn e1_is_deterministic() {
        let cfg = test_config();
        let token = TokenDisorder::from_seed_index(1, cfg.n_in, cfg.n_out);
        let p_def = LightParams::default_public();
        let (pin1, helper1) = enroll_stage_e1(&token, &p_def, &cfg).unwrap();
        let (pin2, helper2) = enroll_stage_e1(&token, &p_def, &cfg).unwrap();
        assert_eq!(pin1, pin2);
        assert_eq!(helper1, helper2);
    }

    #[test]
    fn e2_row_count_and_distinct_params() {
        let cfg = test_config();
        let a = TokenDisorder::from_seed_index(1, cfg.n_in, cfg.n_out);
        let b = TokenDisorder::from_seed_index(2, cfg.n_in, cfg.n_out);
        let db = enroll_stage_e2(&a, &b, 50, 7, &cfg).unwrap();
        assert_eq!(db.len(), 50);
        let mut seen = HashSet::new();
        for row in db.rows() {
            assert!(seen.insert(row.params.encode()));
            assert_ne!(row.params.encode(), LightParams::default_public().encode());
            assert_eq!(row.joint_key.len(), cfg.n);
        }
    }

    #[test]
    fn e2_zero_rows_is_empty() {
        let cfg = test_config();
        let a = TokenDisorder::from_seed_index(1, cfg.n_in, cfg.n_out);
        let b = TokenDisorder::from_seed_index(2, cfg.n_in, cfg.n_out);
        let db = enroll_stage_e2(&a, &b, 0, 7, &cfg).unwrap();
        assert!(db.is_empty());
        assert_eq!(db.consumed_count(), 0);
    }

    #[test]
    fn e2_capacity_error_on_tiny_grid() {
        let mut cfg = test_config();
        cfg.grid = GridSpec {
            wavelengths: 2,
            points_per_axis: 2,
            angles: 1,
            phase_mask_bits: 0,
        };
        let a = TokenDisorder::from_seed_index(1, cfg.n_in, cfg.n_out);
        let b = TokenDisorder::from_seed_index(2, cfg.n_in, cfg.n_out);
        // grid holds 8 challenges, one reserved for P_def
        assert!(enroll_stage_e2(&a, &b, 7, 7, &cfg).is_ok());
        assert!(matches!(
            enroll_stage_e2(&a, &b, 8, 7, &cfg),
            Err(EnrollError::Capacity { .. })
        ));
    }

    #[test]
    fn joint_key_is_xor_of_reproduced_keys() {
        let cfg = test_config();
        let a = TokenDisorder::from_seed_index(3, cfg.n_in, cfg.n_out);
        let b = TokenDisorder::from_seed_index(4, cfg.n_in, cfg.n_out);
        let db = enroll_stage_e2(&a, &b, 8, 9, &cfg).unwrap();
        for row in db.rows() {
            let sa = puf::interrogate(&a, &row.params, &cfg.grid, &mut NoiseModel::noiseless())
                .unwrap();
            let sb = puf::interrogate(&b, &row.params, &cfg.grid, &mut NoiseModel::noiseless())
                .unwrap();
            let ka = keys::reproduce_key(&sa, &row.helper_a).unwrap();
            let kb = keys::reproduce_key(&sb, &row.helper_b).unwrap();
            assert_eq!(ka.xor(&kb).unwrap(), row.joint_key);
            // noiseless identity: joint xor k_A xor k_B = 0
            let zero = row.joint_key.xor(&ka).unwrap().xor(&kb).unwrap();
            assert_eq!(zero.bits().count_ones(), 0);
        }
    }

    #[test]
    fn database_file_roundtrip() {
        let cfg = test_config();
        let a = TokenDisorder::from_seed_index(5, cfg.n_in, cfg.n_out);
        let b = TokenDisorder::from_seed_index(6, cfg.n_in, cfg.n_out);
        let db = enroll_stage_e2(&a, &b, 12, 3, &cfg).unwrap();
        let text = db.serialize();
        assert!(text.starts_with("PUFAUTH-DB v1 n=16 token_b="));
        let parsed = CrpDatabase::parse(&text).unwrap();
        assert_eq!(parsed.len(), db.len());
        assert_eq!(parsed.n(), db.n());
        assert_eq!(parsed.token_b_ref(), db.token_b_ref());
        for (x, y) in db.rows().zip(parsed.rows()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(matches!(
            CrpDatabase::parse(""),
            Err(EnrollError::Parse { .. })
        ));
        assert!(matches!(
            CrpDatabase::parse("WRONG-HEADER n=8 token_b=ab\n"),
            Err(EnrollError::Parse { .. })
        ));
        let missing_n = format!("{DB_HEADER_PREFIX} token_b=ab\n");
        assert!(matches!(
            CrpDatabase::parse(&missing_n),
            Err(EnrollError::Parse { .. })
        ));
        let bad_row = format!("{DB_HEADER_PREFIX} n=8 token_b=ab\n0\tzz\n");
        assert!(matches!(
            CrpDatabase::parse(&bad_row),
            Err(EnrollError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn take_random_consumes() {
        let cfg = test_config();
        let a = TokenDisorder::from_seed_index(7, cfg.n_in, cfg.n_out);
        let b = TokenDisorder::from_seed_index(8, cfg.n_in, cfg.n_out);
        let mut db = enroll_stage_e2(&a, &b, 5, 1, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut taken = HashSet::new();
        for i in 0..5 {
            let row = db.take_random(&mut rng).unwrap();
            assert!(taken.insert(row.row_id));
            assert!(!db.contains(row.row_id));
            assert_eq!(db.consumed_count(), i + 1);
        }
        assert_eq!(db.take_random(&mut rng), Err(EnrollError::Exhausted));
    }

    #[test]
    fn enroll_user_produces_coherent_output() {
        let cfg = test_config();
        let out = enroll_user(&cfg).unwrap();
        assert_eq!(out.database.len(), cfg.num_rows);
        assert_eq!(out.database.token_b_ref(), out.token_b.fingerprint());
        assert_eq!(out.e1_helper.key_len(), cfg.pin_key_len);
        // deterministic under the same seed
        let again = enroll_user(&cfg).unwrap();
        assert_eq!(again.pin, out.pin);
        assert_eq!(again.token_a, out.token_a);
    }
}
