//! PNG stills and hash-chained trajectory digests.
//!
//! A digest chains SHA-256 over the batched observation bytes:
//! `h[0] = H(obs_0)`, `h[t] = H(h[t-1] || obs_t)`, where `obs_0` is the
//! observation returned by `make_env` and `obs_t` the one after step `t`.
//! Digest files are `key = value` text:
//!
//! ```text
//! seed = 0
//! policy = random:0
//! steps = 1000
//! final = <hex>
//! h0 = <hex>
//! h1 = <hex>
//! ...
//! ```

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::bench::ConvStub;
use crate::env::{Env, EnvConfig, Obs};
use crate::error::{Error, Result};
use crate::kv::Document;
use crate::prng::{self, key_from_seed};
use crate::scalar::Real;
use crate::video_tools::{hex, Image};

const POLICY_TAG: u64 = 0x6163_7469_6f6e;

fn png_error(path: &Path, e: impl fmt::Display) -> Error {
    Error::Decode { path: path.to_path_buf(), message: e.to_string() }
}

/// Writes 8-bit, non-interlaced PNG; `channels` is 3 (RGB) or 1 (gray).
pub fn write_png_channels(data: &[u8], width: usize, height: usize, channels: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match channels {
        3 => png::ColorType::Rgb,
        1 => png::ColorType::Grayscale,
        _ => return Err(Error::invalid(format!("cannot write {channels}-channel PNG"))),
    };
    if width == 0 || height == 0 || data.len() != width * height * channels {
        return Err(Error::invalid(format!("{} bytes do not form a {width}x{height}x{channels} image", data.len())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_error(path, e))?;
    writer.write_image_data(data).map_err(|e| png_error(path, e))?;
    writer.finish().map_err(|e| png_error(path, e))
}

/// Writes one `height × width × 3` RGB frame.
pub fn write_png(rgb: &[u8], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    write_png_channels(rgb, width, height, 3, path)
}

/// Reads an 8-bit RGB or grayscale PNG; returns the image and its channel count.
pub fn read_png(path: impl AsRef<Path>) -> Result<(Image, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = png::Decoder::new(file).read_info().map_err(|e| png_error(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_error(path, "only 8-bit PNG is supported"));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => return Err(png_error(path, format!("unsupported color type {other:?}"))),
    };
    buf.truncate(info.buffer_size());
    Ok((Image { width: info.width as usize, height: info.height as usize, data: buf }, channels))
}

/// Action source for a rollout. `None` seeds default to the env seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Zeros,
    Random(Option<u64>),
    Conv(Option<u64>),
}

impl Policy {
    pub fn resolve(self, env_seed: u64) -> Policy {
        match self {
            Policy::Random(None) => Policy::Random(Some(env_seed)),
            Policy::Conv(None) => Policy::Conv(Some(env_seed)),
            p => p,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Zeros => f.write_str("zeros"),
            Policy::Random(None) => f.write_str("random"),
            Policy::Random(Some(s)) => write!(f, "random:{s}"),
            Policy::Conv(None) => f.write_str("conv"),
            Policy::Conv(Some(s)) => write!(f, "conv:{s}"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, seed) = match s.split_once(':') {
            Some((n, v)) => (n, Some(v.parse::<u64>().map_err(|_| Error::invalid(format!("bad policy seed in {s:?}")))?)),
            None => (s, None),
        };
        match (name, seed) {
            ("zeros", None) => Ok(Policy::Zeros),
            ("random", seed) => Ok(Policy::Random(seed)),
            ("conv" | "conv_stub", seed) => Ok(Policy::Conv(seed)),
            _ => Err(Error::invalid(format!("unknown policy {s:?} (zeros, random[:seed], conv[:seed])"))),
        }
    }
}

/// Stateful action generator for a resolved [`Policy`].
pub struct ActionSource {
    policy: Policy,
    stub: Option<ConvStub>,
    n_joints: usize,
}

impl ActionSource {
    pub fn new<T: Real>(policy: Policy, env: &Env<T>) -> Result<Self> {
        let policy = policy.resolve(env.config().seed);
        let stub = match policy {
            Policy::Conv(Some(seed)) => {
                let [_, h, w, c] = env.obs_shape();
                Some(ConvStub::standard(h, w, c, env.n_joints(), seed)?)
            }
            _ => None,
        };
        Ok(ActionSource { policy, stub, n_joints: env.n_joints() })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// Actions for step `t` given the current observation.
    pub fn actions_into<T: Real>(&self, t: u64, obs: &Obs, out: &mut [T]) -> Result<()> {
        match self.policy {
            Policy::Zeros => out.fill(T::zero()),
            Policy::Random(seed) => {
                let key = prng::fold_in(prng::fold_in(key_from_seed(seed.unwrap_or(0)), POLICY_TAG), t);
                let mut buf = [0.0f64; crate::physics::MAX_DOF];
                for (i, a) in out.chunks_mut(self.n_joints).enumerate() {
                    prng::uniform_into(prng::fold_in(key, i as u64), -1.0, 1.0, &mut buf[..self.n_joints]);
                    for (d, &v) in a.iter_mut().zip(&buf) {
                        *d = T::c(v);
                    }
                }
            }
            Policy::Conv(_) => self.stub.as_ref().expect("conv policy has a stub").forward_into(obs, out)?,
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrajectoryDigest {
    pub seed: u64,
    pub policy: String,
    pub steps: u64,
    /// `steps + 1` entries; entry 0 covers the initial observation.
    pub chain: Vec<[u8; 32]>,
    pub final_hash: [u8; 32],
}

/// Incremental hash chain.
#[derive(Clone, Debug, Default)]
pub struct HashChain {
    pub chain: Vec<[u8; 32]>,
}

impl HashChain {
    pub fn push(&mut self, obs: &[u8]) {
        let mut h = Sha256::new();
        if let Some(prev) = self.chain.last() {
            h.update(prev);
        }
        h.update(obs);
        self.chain.push(h.finalize().into());
    }
}

fn parse_hash(s: &str, line: usize) -> Result<[u8; 32]> {
    let err = || Error::Parse { line, message: format!("expected 64 hex digits, got {s:?}") };
    if s.len() != 64 || !s.is_ascii() {
        return Err(err());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| err())?;
    }
    Ok(out)
}

impl TrajectoryDigest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# trajectory digest\nseed = {}\npolicy = {}\nsteps = {}\nfinal = {}\n",
            self.seed,
            self.policy,
            self.steps,
            hex(&self.final_hash)
        );
        for (t, h) in self.chain.iter().enumerate() {
            s += &format!("h{t} = {}\n", hex(h));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let seed_e = doc.require("seed")?;
        let steps_e = doc.require("steps")?;
        let final_e = doc.require("final")?;
        let mut chain = Vec::new();
        for e in doc.entries.iter().filter(|e| e.key.starts_with('h')) {
            let idx: usize = e.key[1..]
                .parse()
                .map_err(|_| Error::Parse { line: e.line, message: format!("unknown key `{}`", e.key) })?;
            if idx != chain.len() {
                return Err(Error::Parse { line: e.line, message: format!("expected h{}, found {}", chain.len(), e.key) });
            }
            chain.push(parse_hash(&e.value, e.line)?);
        }
        Ok(TrajectoryDigest {
            seed: seed_e.parse()?,
            policy: doc.require("policy")?.value.clone(),
            steps: steps_e.parse()?,
            chain,
            final_hash: parse_hash(&final_e.value, final_e.line)?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Optional PNG dumps of every `every`-th step (step 0 included).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DumpOptions {
    pub every: u64,
    pub dir: PathBuf,
}

/// Path of the dumped still for `step` and env `env`.
pub fn dump_path(dir: &Path, step: u64, env: usize) -> PathBuf {
    dir.join(format!("step{step:06}_env{env:04}.png"))
}

fn dump(obs: &Obs, dir: &Path, step: u64) -> Result<()> {
    for i in 0..obs.batch {
        write_png_channels(obs.env(i), obs.width, obs.height, obs.channels, dump_path(dir, step, i))?;
    }
    Ok(())
}

/// Runs `steps` env steps under `policy` and returns the digest.
pub fn record_rollout<T: Real>(
    config: &EnvConfig,
    policy: Policy,
    steps: u64,
    dumps: Option<&DumpOptions>,
) -> Result<TrajectoryDigest> {
    let env = Env::<T>::new(config)?;
    record_with_env(&env, policy, steps, dumps)
}

pub fn record_with_env<T: Real>(env: &Env<T>, policy: Policy, steps: u64, dumps: Option<&DumpOptions>) -> Result<TrajectoryDigest> {
    if steps == 0 {
        return Err(Error::invalid("a rollout needs steps >= 1"));
    }
    if let Some(d) = dumps {
        if d.every == 0 {
            return Err(Error::invalid("dump interval must be >= 1"));
        }
        std::fs::create_dir_all(&d.dir).map_err(|e| Error::io(&d.dir, e))?;
    }
    let source = ActionSource::new(policy, env)?;
    let mut state = env.initial_state(env.config().seed)?;
    let mut out = env.new_output();
    env.observe_into(&state, &mut out);
    let mut chain = HashChain::default();
    chain.push(&out.obs.data);
    let mut actions = vec![T::zero(); env.batch() * env.n_joints()];
    for t in 0..=steps {
        if let Some(d) = dumps {
            if t % d.every == 0 {
                dump(&out.obs, &d.dir, t)?;
            }
        }
        if t == steps {
            break;
        }
        source.actions_into(t, &out.obs, &mut actions)?;
        env.step_into(&mut state, &actions, &mut out)?;
        chain.push(&out.obs.data);
    }
    let final_hash = *chain.chain.last().expect("chain is non-empty");
    Ok(TrajectoryDigest {
        seed: env.config().seed,
        policy: source.policy().to_string(),
        steps,
        chain: chain.chain,
        final_hash,
    })
}

/// Rebuilds a digest's hash chain from PNGs dumped with `every = 1`.
pub fn chain_from_dumps(dir: &Path, steps: u64, batch: usize) -> Result<Vec<[u8; 32]>> {
    let mut chain = HashChain::default();
    let mut bytes = Vec::new();
    for t in 0..=steps {
        bytes.clear();
        for i in 0..batch {
            bytes.extend_from_slice(&read_png(dump_path(dir, t, i))?.0.data);
        }
        chain.push(&bytes);
    }
    Ok(chain.chain)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyReport {
    pub passed: bool,
    /// First chain index that differs (0 = initial observation).
    pub first_divergence: Option<u64>,
    pub steps_checked: u64,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.first_divergence {
            None => write!(f, "PASS: {} steps match", self.steps_checked),
            Some(t) => write!(f, "FAIL: first divergence at step {t}"),
        }
    }
}

/// Compares a recorded digest against a fresh one.
pub fn compare_digests(expected: &TrajectoryDigest, actual: &TrajectoryDigest) -> VerifyReport {
    let n = expected.chain.len().max(actual.chain.len());
    let first = (0..n).find(|&i| expected.chain.get(i) != actual.chain.get(i)).map(|i| i as u64);
    let first = first.or_else(|| (expected.final_hash != actual.final_hash).then_some(actual.steps));
    VerifyReport { passed: first.is_none(), first_divergence: first, steps_checked: actual.steps }
}

/// Re-runs the rollout and compares it with the digest file.
pub fn verify_digest<T: Real>(digest_path: impl AsRef<Path>, config: &EnvConfig, policy: Policy, steps: u64) -> Result<VerifyReport> {
    let expected = TrajectoryDigest::read(digest_path)?;
    let actual = record_rollout::<T>(config, policy, steps, None)?;
    Ok(compare_digests(&expected, &actual))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> EnvConfig {
        EnvConfig { model: "hopper_lite".into(), batch: 2, width: 16, height: 16, seed, ..EnvConfig::default() }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.png");
        write_png(&[255, 0, 0], 1, 1, &p).unwrap();
        let (img, c) = read_png(&p).unwrap();
        assert_eq!((img.data, c), (vec![255, 0, 0], 3));
        let q = dir.path().join("red2.png");
        write_png(&[255, 0, 0], 1, 1, &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        assert!(write_png(&[1, 2], 1, 1, &q).is_err());
        assert!(matches!(read_png(dir.path().join("missing.png")), Err(Error::NotFound(_))));
    }

    #[test]
    fn policy_parsing() {
        for s in ["zeros", "random", "random:4", "conv", "conv:9"] {
            assert_eq!(s.parse::<Policy>().unwrap().to_string(), s);
        }
        assert!("bogus".parse::<Policy>().is_err());
        assert!("zeros:1".parse::<Policy>().is_err());
        assert_eq!(Policy::Random(None).resolve(3), Policy::Random(Some(3)));
    }

    #[test]
    fn digest_text_round_trip_and_errors() {
        let d = record_rollout::<f32>(&small(0), Policy::Random(None), 3, None).unwrap();
        assert_eq!(d.chain.len(), 4);
        assert_eq!(TrajectoryDigest::from_text(&d.to_text()).unwrap(), d);
        let broken = d.to_text().replace("h2 =", "h9 =");
        assert!(matches!(TrajectoryDigest::from_text(&broken), Err(Error::Parse { .. })));
        let bad_hex = d.to_text().replace("final = ", "final = zz");
        assert!(matches!(TrajectoryDigest::from_text(&bad_hex), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn digests_depend_on_seed_and_policy() {
        let a = record_rollout::<f32>(&small(0), Policy::Random(None), 5, None).unwrap();
        assert_eq!(a, record_rollout::<f32>(&small(0), Policy::Random(None), 5, None).unwrap());
        let b = record_rollout::<f32>(&small(1), Policy::Random(None), 5, None).unwrap();
        assert_ne!(a.final_hash, b.final_hash);
        assert_eq!(compare_digests(&a, &b).first_divergence, Some(0));
        let z = record_rollout::<f32>(&small(0), Policy::Zeros, 5, None).unwrap();
        assert_eq!(compare_digests(&a, &z).first_divergence, Some(1));
        let c = record_rollout::<f32>(&small(0), Policy::Conv(None), 5, None).unwrap();
        assert_eq!(c.policy, "conv:0");
    }

    #[test]
    fn dumped_pngs_reproduce_the_chain() {
        let dir = tempfile::tempdir().unwrap();
        let dumps = DumpOptions { every: 1, dir: dir.path().join("frames") };
        let d = record_rollout::<f32>(&small(2), Policy::Random(None), 4, Some(&dumps)).unwrap();
        assert_eq!(chain_from_dumps(&dumps.dir, 4, 2).unwrap(), d.chain);
    }

    #[test]
    fn verify_reports_first_divergent_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dig");
        let cfg = small(0);
        record_rollout::<f32>(&cfg, Policy::Random(None), 6, None).unwrap().write(&path).unwrap();
        assert!(verify_digest::<f32>(&path, &cfg, Policy::Random(None), 6).unwrap().passed);
        let text = std::fs::read_to_string(&path).unwrap();
        let line = text.lines().find(|l| l.starts_with("h3 = ")).unwrap();
        let last = line.chars().last().unwrap();
        let flipped = format!("{}{}", &line[..line.len() - 1], if last == '0' { '1' } else { '0' });
        std::fs::write(&path, text.replace(line, &flipped)).unwrap();
        let r = verify_digest::<f32>(&path, &cfg, Policy::Random(None), 6).unwrap();
        assert_eq!((r.passed, r.first_divergence), (false, Some(3)));
        std::fs::write(&path, text).unwrap();
        let r = verify_digest::<f32>(&path, &small(5), Policy::Random(None), 6).unwrap();
        assert_eq!(r.first_divergence, Some(0));
    }
}
