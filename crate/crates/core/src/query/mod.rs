//! Query evaluation: data source types, parameter lists, parsing helpers,
//! and detached authenticity proofs.
//!
//! The engine is hermetic. URL-style sources resolve against a fixture
//! registry, randomness expands deterministically from the engine seed, and
//! "encryption to the engine" is a keyed symmetric stub. Given the same
//! fixture registry and seed, `execute` is a pure function of the spec and
//! its context.

pub mod document;
pub mod fixtures;
pub mod helpers;
pub mod proof;

use std::collections::BTreeMap;

use ed25519_dalek::SigningKey;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ledger::BlockHeight;
pub use document::{parse_scaled, Document};
pub use fixtures::FixtureRegistry;
pub use helpers::{helper_json, helper_slice, helper_xml_path};
pub use proof::{sign_proof, verify_proof, AuthenticityProof};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("parse failure: {0}")]
    ParseFailure(String),
    #[error("path miss: {0}")]
    PathMiss(String),
    #[error("slice out of bounds: offset {offset} length {length} over {available} bytes")]
    OutOfBounds { offset: u64, length: u64, available: u64 },
    #[error("numeric overflow scaling {0:?}")]
    NumericOverflow(String),
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
    #[error("fixture load: {0}")]
    FixtureLoad(String),
    #[error("fixture digest mismatch for {key:?}: manifest {expected}, content {actual}")]
    FixtureDigestMismatch { key: String, expected: String, actual: String },
    #[error("bad query spec: {0}")]
    BadSpec(String),
    #[error("decrypt failure: wrong key or corrupted ciphertext")]
    DecryptFailure,
    #[error("unknown computation {0:?}")]
    UnknownComputation(String),
    #[error("computation failed: {0}")]
    ComputationFailure(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceType {
    /// Fixture-backed web endpoint; `params[0]` is the URL key, an optional
    /// `params[1]` is a request body appended to the key as `key#body`.
    Url,
    /// Canned question-answer lookups under `wolfram:<question>` keys.
    WolframAlphaStub,
    /// Content-addressed lookup; `params[0]` is a hex SHA-256 digest.
    ContentStore,
    /// Deterministic random bytes; `params[0]` is the byte count.
    Random,
    /// Registered pure function; `params[0]` names it, the rest are args.
    Computation,
    /// Each param is either literal text or `source(arg)`; sub-results are
    /// concatenated in order.
    Nested,
    /// Returns `params[0]` verbatim.
    Identity,
    /// Decrypts hex ciphertext produced by [`QueryEngine::encrypt_to_engine`].
    Decrypt,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsingHelper {
    Json { path: String },
    Xml { path: String },
    Xpath { expr: String },
    Slice { offset: u64, length: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofType {
    #[default]
    None,
    Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub source: DataSourceType,
    pub params: Vec<String>,
    #[serde(default)]
    pub helpers: Vec<ParsingHelper>,
    #[serde(default)]
    pub proof_type: ProofType,
}

impl QuerySpec {
    pub fn new(source: DataSourceType, params: &[&str]) -> Self {
        QuerySpec {
            source,
            params: params.iter().map(|p| p.to_string()).collect(),
            helpers: Vec::new(),
            proof_type: ProofType::None,
        }
    }

    pub fn with_helpers(mut self, helpers: Vec<ParsingHelper>) -> Self {
        self.helpers = helpers;
        self
    }

    pub fn with_proof(mut self, proof_type: ProofType) -> Self {
        self.proof_type = proof_type;
        self
    }

    /// Digest of the spec's canonical serialized form; proofs bind to this.
    pub fn digest(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(bytes).into()
    }
}

/// Per-call context: the chain height stamped into proofs and the request
/// id keying the random source.
#[derive(Clone, Copy, Debug, Default)]
pub struct QueryContext {
    pub height: BlockHeight,
    pub request_id: u64,
}

pub type ComputationFn = fn(&[String]) -> Result<Document, QueryError>;

fn computation_sum(args: &[String]) -> Result<Document, QueryError> {
    let mut total: i128 = 0;
    for arg in args {
        let v: i128 = arg
            .trim()
            .parse()
            .map_err(|_| QueryError::ComputationFailure(format!("sum: bad integer {arg:?}")))?;
        total = total
            .checked_add(v)
            .ok_or_else(|| QueryError::ComputationFailure("sum: overflow".into()))?;
    }
    Ok(Document::Num(total.to_string()))
}

fn computation_concat(args: &[String]) -> Result<Document, QueryError> {
    Ok(Document::Str(args.concat()))
}

pub struct QueryEngine {
    fixtures: FixtureRegistry,
    signing: SigningKey,
    encryption_key: [u8; 32],
    computations: BTreeMap<String, ComputationFn>,
    seed: u64,
}

impl QueryEngine {
    /// Builds an engine whose signing and encryption keys derive from the
    /// seed, so a scenario seed fully determines proofs and ciphertexts.
    pub fn new(seed: u64, fixtures: FixtureRegistry) -> Self {
        let mut sign_hasher = Sha256::new();
        sign_hasher.update(b"oraclesim-sign-v1");
        sign_hasher.update(seed.to_be_bytes());
        let signing = SigningKey::from_bytes(&sign_hasher.finalize().into());

        let mut enc_hasher = Sha256::new();
        enc_hasher.update(b"oraclesim-encrypt-v1");
        enc_hasher.update(seed.to_be_bytes());

        let mut computations: BTreeMap<String, ComputationFn> = BTreeMap::new();
        computations.insert("sum".into(), computation_sum);
        computations.insert("concat".into(), computation_concat);

        QueryEngine {
            fixtures,
            signing,
            encryption_key: enc_hasher.finalize().into(),
            computations,
            seed,
        }
    }

    pub fn fixtures(&self) -> &FixtureRegistry {
        &self.fixtures
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    /// Registers a named pure function for computation-type queries.
    pub fn register_computation(&mut self, name: &str, f: ComputationFn) -> Result<(), QueryError> {
        if self.computations.contains_key(name) {
            return Err(QueryError::BadSpec(format!("computation {name:?} already registered")));
        }
        self.computations.insert(name.to_string(), f);
        Ok(())
    }

    /// Fetches from the source, applies helpers left-to-right, and signs
    /// the canonical result rendering if a proof was requested.
    pub fn execute(
        &self,
        spec: &QuerySpec,
        ctx: QueryContext,
    ) -> Result<(Document, Option<AuthenticityProof>), QueryError> {
        if spec.params.is_empty() {
            return Err(QueryError::BadSpec("params must be non-empty".into()));
        }
        let mut doc = self.fetch(spec, ctx)?;
        for helper in &spec.helpers {
            doc = match helper {
                ParsingHelper::Json { path } => helper_json(&doc, path)?,
                ParsingHelper::Xml { path } => helper_xml_path(&doc, path)?,
                ParsingHelper::Xpath { expr } => helper_xml_path(&doc, expr)?,
                ParsingHelper::Slice { offset, length } => helper_slice(&doc, *offset, *length)?,
            };
        }
        let proof = match spec.proof_type {
            ProofType::None => None,
            ProofType::Signature => Some(sign_proof(
                &self.signing,
                spec.digest(),
                doc.canonical_json().as_bytes(),
                ctx.height,
            )),
        };
        Ok((doc, proof))
    }

    fn fetch(&self, spec: &QuerySpec, ctx: QueryContext) -> Result<Document, QueryError> {
        let main = &spec.params[0];
        match spec.source {
            DataSourceType::Identity => Ok(Document::Str(main.clone())),
            DataSourceType::Url => {
                let key = if spec.params.len() > 1 {
                    format!("{main}#{}", spec.params[1])
                } else {
                    main.clone()
                };
                Ok(Document::Str(self.fixtures.get(&key)?.to_string()))
            }
            DataSourceType::WolframAlphaStub => {
                Ok(Document::Str(self.fixtures.get(&format!("wolfram:{main}"))?.to_string()))
            }
            DataSourceType::ContentStore => {
                let digest = hex::decode(main)
                    .ok()
                    .and_then(|b| <[u8; 32]>::try_from(b).ok())
                    .ok_or_else(|| {
                        QueryError::BadSpec(format!("content key must be 32-byte hex: {main:?}"))
                    })?;
                Ok(Document::Str(self.fixtures.get_by_digest(&digest)?.to_string()))
            }
            DataSourceType::Random => {
                let n: u64 = main
                    .parse()
                    .map_err(|_| QueryError::BadSpec(format!("random byte count: {main:?}")))?;
                if n == 0 {
                    return Err(QueryError::BadSpec("random byte count must be >= 1".into()));
                }
                Ok(Document::Bytes(self.random_bytes(n, ctx.request_id)))
            }
            DataSourceType::Computation => {
                let f = self
                    .computations
                    .get(main)
                    .ok_or_else(|| QueryError::UnknownComputation(main.clone()))?;
                f(&spec.params[1..])
            }
            DataSourceType::Nested => {
                let mut out = String::new();
                for param in &spec.params {
                    out.push_str(&self.eval_nested_param(param)?);
                }
                Ok(Document::Str(out))
            }
            DataSourceType::Decrypt => {
                let ciphertext =
                    hex::decode(main).map_err(|_| QueryError::DecryptFailure)?;
                let plain = self.decrypt(&ciphertext)?;
                String::from_utf8(plain)
                    .map(Document::Str)
                    .map_err(|_| QueryError::DecryptFailure)
            }
        }
    }

    /// A nested parameter is either literal text or `source(arg)` with
    /// source one of identity, url, wolfram, content, decrypt. The arg may
    /// itself be `decrypt(hex)`, letting a query carry a hidden URL.
    fn eval_nested_param(&self, param: &str) -> Result<String, QueryError> {
        let Some((name, arg)) = split_call(param) else {
            return Ok(param.to_string());
        };
        let arg = match split_call(arg) {
            Some(("decrypt", inner)) => {
                let ciphertext = hex::decode(inner).map_err(|_| QueryError::DecryptFailure)?;
                String::from_utf8(self.decrypt(&ciphertext)?)
                    .map_err(|_| QueryError::DecryptFailure)?
            }
            _ => arg.to_string(),
        };
        match name {
            "identity" => Ok(arg),
            "url" => Ok(self.fixtures.get(&arg)?.to_string()),
            "wolfram" => Ok(self.fixtures.get(&format!("wolfram:{arg}"))?.to_string()),
            "content" => {
                let digest = hex::decode(&arg)
                    .ok()
                    .and_then(|b| <[u8; 32]>::try_from(b).ok())
                    .ok_or_else(|| {
                        QueryError::BadSpec(format!("content key must be 32-byte hex: {arg:?}"))
                    })?;
                Ok(self.fixtures.get_by_digest(&digest)?.to_string())
            }
            "decrypt" => {
                let ciphertext = hex::decode(&arg).map_err(|_| QueryError::DecryptFailure)?;
                String::from_utf8(self.decrypt(&ciphertext)?)
                    .map_err(|_| QueryError::DecryptFailure)
            }
            _ => Ok(param.to_string()),
        }
    }

    /// Deterministic expansion of (seed, request_id) into `n` bytes.
    pub fn random_bytes(&self, n: u64, request_id: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(n as usize);
        let mut counter: u64 = 0;
        while (out.len() as u64) < n {
            let mut hasher = Sha256::new();
            hasher.update(b"oraclesim-random-v1");
            hasher.update(self.seed.to_be_bytes());
            hasher.update(request_id.to_be_bytes());
            hasher.update(counter.to_be_bytes());
            out.extend_from_slice(&hasher.finalize());
            counter += 1;
        }
        out.truncate(n as usize);
        out
    }

    /// Symmetric stand-in for encryption to the engine's key: a keyed
    /// digest of the plaintext acts as synthetic IV and integrity tag,
    /// followed by the plaintext XORed with a keystream derived from key
    /// and tag. Deterministic by design; not a real public-key scheme.
    pub fn encrypt_to_engine(&self, plaintext: &[u8]) -> Vec<u8> {
        let tag = self.plaintext_tag(plaintext);
        let mut out = tag.to_vec();
        out.extend_from_slice(&self.xor_stream(&tag, plaintext));
        out
    }

    fn decrypt(&self, ciphertext: &[u8]) -> Result<Vec<u8>, QueryError> {
        if ciphertext.len() < 32 {
            return Err(QueryError::DecryptFailure);
        }
        let tag: [u8; 32] = ciphertext[..32].try_into().expect("32 bytes");
        let plaintext = self.xor_stream(&tag, &ciphertext[32..]);
        if self.plaintext_tag(&plaintext) != tag {
            return Err(QueryError::DecryptFailure);
        }
        Ok(plaintext)
    }

    fn plaintext_tag(&self, plaintext: &[u8]) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"oraclesim-enc-tag");
        hasher.update(self.encryption_key);
        hasher.update(plaintext);
        hasher.finalize().into()
    }

    fn xor_stream(&self, tag: &[u8; 32], data: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(data.len());
        let mut counter: u64 = 0;
        while out.len() < data.len() {
            let mut hasher = Sha256::new();
            hasher.update(b"oraclesim-enc-stream");
            hasher.update(self.encryption_key);
            hasher.update(tag);
            hasher.update(counter.to_be_bytes());
            let block = hasher.finalize();
            for byte in block {
                if out.len() == data.len() {
                    break;
                }
                out.push(byte ^ data[out.len()]);
            }
            counter += 1;
        }
        out
    }
}

/// Splits `name(arg)` into `(name, arg)`; anything else returns None.
fn split_call(s: &str) -> Option<(&str, &str)> {
    let open = s.find('(')?;
    if !s.ends_with(')') || open == 0 {
        return None;
    }
    let name = &s[..open];
    if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    Some((name, &s[open + 1..s.len() - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const KRAKEN: &str = r#"{"error":[],"result":{"XETHZUSD":{"a":["3941.00000","1"],"c":["3940.39000","0.5"]}}}"#;

    fn engine() -> QueryEngine {
        let fixtures = FixtureRegistry::in_memory(&[
            ("https://api.kraken.com/0/public/Ticker?pair=ETHUSD", KRAKEN),
            ("wolfram:who are you", "I am a stub"),
            ("https://post.example/quote#symbol=ETH", "{\"px\":7}"),
        ]);
        QueryEngine::new(42, fixtures)
    }

    #[test]
    fn identity_returns_its_param() {
        let (doc, proof) = engine()
            .execute(&QuerySpec::new(DataSourceType::Identity, &["hello"]), QueryContext::default())
            .unwrap();
        assert_eq!(doc, Document::Str("hello".into()));
        assert!(proof.is_none());
    }

    #[test]
    fn url_fixture_with_json_path_yields_price_string() {
        let spec = QuerySpec::new(
            DataSourceType::Url,
            &["https://api.kraken.com/0/public/Ticker?pair=ETHUSD"],
        )
        .with_helpers(vec![ParsingHelper::Json { path: "result.XETHZUSD.c.0".into() }]);
        let (doc, _) = engine().execute(&spec, QueryContext::default()).unwrap();
        assert_eq!(doc, Document::Str("3940.39000".into()));
    }

    #[test]
    fn url_with_body_param_uses_post_key() {
        let spec = QuerySpec::new(DataSourceType::Url, &["https://post.example/quote", "symbol=ETH"])
            .with_helpers(vec![ParsingHelper::Json { path: "px".into() }]);
        let (doc, _) = engine().execute(&spec, QueryContext::default()).unwrap();
        assert_eq!(doc, Document::Num("7".into()));
    }

    #[test]
    fn wolfram_stub_answers_canned_question() {
        let spec = QuerySpec::new(DataSourceType::WolframAlphaStub, &["who are you"]);
        let (doc, _) = engine().execute(&spec, QueryContext::default()).unwrap();
        assert_eq!(doc, Document::Str("I am a stub".into()));
    }

    #[test]
    fn content_store_resolves_by_digest() {
        let digest = hex::encode(Sha256::digest(KRAKEN.as_bytes()));
        let spec = QuerySpec::new(DataSourceType::ContentStore, &[digest.as_str()])
            .with_helpers(vec![ParsingHelper::Json { path: "result.XETHZUSD.a.1".into() }]);
        let (doc, _) = engine().execute(&spec, QueryContext::default()).unwrap();
        assert_eq!(doc, Document::Str("1".into()));
    }

    #[test]
    fn nested_concatenates_sub_queries() {
        let spec = QuerySpec::new(DataSourceType::Nested, &["identity(a)", "identity(b)"]);
        let (doc, _) = engine().execute(&spec, QueryContext::default()).unwrap();
        assert_eq!(doc, Document::Str("ab".into()));
    }

    #[test]
    fn nested_mixes_literals_and_sub_queries() {
        let spec = QuerySpec::new(
            DataSourceType::Nested,
            &["answer: ", "wolfram(who are you)"],
        );
        let (doc, _) = engine().execute(&spec, QueryContext::default()).unwrap();
        assert_eq!(doc, Document::Str("answer: I am a stub".into()));
    }

    #[test]
    fn decrypted_url_param_matches_plaintext_query() {
        let eng = engine();
        let url = "https://api.kraken.com/0/public/Ticker?pair=ETHUSD";
        let ciphertext = hex::encode(eng.encrypt_to_engine(url.as_bytes()));

        let plain = QuerySpec::new(DataSourceType::Nested, &[&format!("url({url})")]);
        let hidden =
            QuerySpec::new(DataSourceType::Nested, &[&format!("url(decrypt({ciphertext}))")]);
        let (a, _) = eng.execute(&plain, QueryContext::default()).unwrap();
        let (b, _) = eng.execute(&hidden, QueryContext::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decrypt_source_round_trips_and_rejects_corruption() {
        let eng = engine();
        let ciphertext = eng.encrypt_to_engine(b"secret param");
        let spec = QuerySpec::new(DataSourceType::Decrypt, &[&hex::encode(&ciphertext)]);
        let (doc, _) = eng.execute(&spec, QueryContext::default()).unwrap();
        assert_eq!(doc, Document::Str("secret param".into()));

        let mut corrupted = ciphertext.clone();
        corrupted[35] ^= 1;
        let bad = QuerySpec::new(DataSourceType::Decrypt, &[&hex::encode(&corrupted)]);
        assert_eq!(
            eng.execute(&bad, QueryContext::default()).unwrap_err(),
            QueryError::DecryptFailure
        );

        let other = QueryEngine::new(43, FixtureRegistry::empty());
        let foreign = QuerySpec::new(DataSourceType::Decrypt, &[&hex::encode(&ciphertext)]);
        assert_eq!(
            other.execute(&foreign, QueryContext::default()).unwrap_err(),
            QueryError::DecryptFailure
        );
    }

    #[test]
    fn random_bytes_keyed_by_request_id() {
        let eng = engine();
        let a = eng.random_bytes(40, 1);
        let b = eng.random_bytes(40, 1);
        let c = eng.random_bytes(40, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 40);
    }

    #[test]
    fn random_source_with_proof_verifies() {
        let eng = engine();
        let spec = QuerySpec::new(DataSourceType::Random, &["16"]).with_proof(ProofType::Signature);
        let ctx = QueryContext { height: BlockHeight(5), request_id: 9 };
        let (doc, proof) = eng.execute(&spec, ctx).unwrap();
        let proof = proof.unwrap();
        assert!(verify_proof(doc.canonical_json().as_bytes(), &proof, &eng.public_key()));

        let tampered = Document::Bytes(vec![0u8; 16]);
        assert!(!verify_proof(tampered.canonical_json().as_bytes(), &proof, &eng.public_key()));
    }

    #[test]
    fn computation_dispatches_registered_function() {
        let spec = QuerySpec::new(DataSourceType::Computation, &["sum", "3", "4", "-2"]);
        let (doc, _) = engine().execute(&spec, QueryContext::default()).unwrap();
        assert_eq!(doc, Document::Num("5".into()));

        let unknown = QuerySpec::new(DataSourceType::Computation, &["nope"]);
        assert!(matches!(
            engine().execute(&unknown, QueryContext::default()),
            Err(QueryError::UnknownComputation(_))
        ));
    }

    #[test]
    fn empty_params_rejected() {
        let spec = QuerySpec { source: DataSourceType::Identity, params: vec![], helpers: vec![], proof_type: ProofType::None };
        assert!(matches!(
            engine().execute(&spec, QueryContext::default()),
            Err(QueryError::BadSpec(_))
        ));
    }

    #[test]
    fn unknown_fixture_error() {
        let spec = QuerySpec::new(DataSourceType::Url, &["https://nowhere"]);
        assert!(matches!(
            engine().execute(&spec, QueryContext::default()),
            Err(QueryError::UnknownFixture(_))
        ));
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = QuerySpec::new(DataSourceType::Url, &["https://x"])
            .with_helpers(vec![
                ParsingHelper::Json { path: "a.b".into() },
                ParsingHelper::Slice { offset: 1, length: 2 },
            ])
            .with_proof(ProofType::Signature);
        let json = serde_json::to_string(&spec).unwrap();
        let back: QuerySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.digest(), back.digest());
    }
}
