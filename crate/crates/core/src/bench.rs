//! Throughput measurement: a `[observe → conv policy → step]` loop over
//! batch sizes, with a one-layer convolutional policy stub choosing actions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::distractor::{load_video_pack, DistractorMode, VideoPack};
use crate::env::{Env, EnvConfig, Obs};
use crate::error::{Error, Result};
use crate::prng::{self, key_from_seed};
use crate::scalar::Real;
use crate::video_tools::hex;

pub const DEFAULT_BATCHES: [usize; 4] = [1, 10, 100, 1000];
pub const CSV_HEADER: &str = "env,batch,distractor,steps,seconds,sps,resolution";
const MAX_FILTERS: usize = 64;
const MAX_JOINTS: usize = 32;
const POLICY_SEED_TAG: u64 = 0x706f_6c69_6379;

/// Valid convolution (no padding) + ReLU + linear projection + tanh.
///
/// Input is HWC bytes scaled to `[0, 1]`. Weight layouts keep the filter
/// index innermost so one input value updates every filter in a row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStub {
    pub filters: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub n_out: usize,
    /// `[ky][kx][channel][filter]`.
    pub weights: Vec<f32>,
    /// `[out_y][out_x][filter][action]`.
    pub projection: Vec<f32>,
}

impl ConvStub {
    /// Weights uniform in `±1/sqrt(fan_in)` drawn from `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        filters: usize,
        channels: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
        n_out: usize,
        seed: u64,
    ) -> Result<Self> {
        if filters == 0 || filters > MAX_FILTERS || n_out == 0 || n_out > MAX_JOINTS {
            return Err(Error::invalid(format!(
                "conv stub supports 1..={MAX_FILTERS} filters and 1..={MAX_JOINTS} outputs"
            )));
        }
        if channels == 0 || kernel == 0 || stride == 0 || kernel > in_h || kernel > in_w {
            return Err(Error::invalid(format!("bad conv geometry: kernel {kernel}, stride {stride}, input {in_h}x{in_w}")));
        }
        let mut stub = ConvStub { filters, channels, kernel, stride, in_h, in_w, n_out, weights: Vec::new(), projection: Vec::new() };
        let key = prng::fold_in(key_from_seed(seed), POLICY_SEED_TAG);
        let fan_in = (kernel * kernel * channels) as f64;
        let features = stub.features() as f64;
        stub.weights = prng::uniform(key.child(0), kernel * kernel * channels * filters, -1.0, 1.0)?
            .into_iter()
            .map(|w| (w / fan_in.sqrt()) as f32)
            .collect();
        stub.projection = prng::uniform(key.child(1), stub.features() * n_out, -1.0, 1.0)?
            .into_iter()
            .map(|w| (w / features.sqrt()) as f32)
            .collect();
        Ok(stub)
    }

    /// 16 filters of 8×8, stride 4: the benchmark's policy surrogate.
    pub fn standard(height: usize, width: usize, channels: usize, n_out: usize, seed: u64) -> Result<Self> {
        Self::new(16, channels, 8, 4, height, width, n_out, seed)
    }

    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    pub fn features(&self) -> usize {
        self.out_h() * self.out_w() * self.filters
    }

    fn forward_one(&self, img: &[u8], out: &mut [f32]) {
        match self.filters {
            16 => self.forward_fixed::<16>(img, out),
            _ => self.forward_fixed::<0>(img, out),
        }
    }

    /// `F` is the filter count when known at compile time (0 = dynamic),
    /// which lets the filter loop unroll into whole vector registers.
    fn forward_fixed<const F: usize>(&self, img: &[u8], out: &mut [f32]) {
        let (f, k, c, s) = (if F > 0 { F } else { self.filters }, self.kernel, self.channels, self.stride);
        let row_len = k * c;
        let mut acts = [0.0f32; MAX_JOINTS];
        let acts = &mut acts[..self.n_out];
        let scale = 1.0f32 / 255.0;
        let ow = self.out_w();
        let proj_len = f * self.n_out;
        let mut project = |pos: usize, acc: &[f32]| {
            let proj = &self.projection[pos * proj_len..(pos + 1) * proj_len];
            for (&a, pf) in acc.iter().zip(proj.chunks_exact(self.n_out)) {
                let r = a.max(0.0);
                if r > 0.0 {
                    for (o, &p) in acts.iter_mut().zip(pf) {
                        *o += r * p;
                    }
                }
            }
        };
        for oy in 0..self.out_h() {
            // Two horizontally adjacent outputs at a time share weight loads.
            let mut ox = 0;
            while ox < ow {
                let pair = ox + 1 < ow;
                let mut acc = [[0.0f32; MAX_FILTERS]; 2];
                let [acc0, acc1] = &mut acc;
                let (acc0, acc1) = (&mut acc0[..f], &mut acc1[..f]);
                for ky in 0..k {
                    let start = ((oy * s + ky) * self.in_w + ox * s) * c;
                    let w = &self.weights[ky * row_len * f..(ky + 1) * row_len * f];
                    let src0 = &img[start..start + row_len];
                    if pair {
                        let src1 = &img[start + s * c..start + s * c + row_len];
                        for ((&p0, &p1), wj) in src0.iter().zip(src1).zip(w.chunks_exact(f)) {
                            let (x0, x1) = (p0 as f32 * scale, p1 as f32 * scale);
                            for ((a0, a1), &wv) in acc0.iter_mut().zip(acc1.iter_mut()).zip(wj) {
                                *a0 += wv * x0;
                                *a1 += wv * x1;
                            }
                        }
                    } else {
                        for (&p0, wj) in src0.iter().zip(w.chunks_exact(f)) {
                            let x0 = p0 as f32 * scale;
                            for (a0, &wv) in acc0.iter_mut().zip(wj) {
                                *a0 += wv * x0;
                            }
                        }
                    }
                }
                project(oy * ow + ox, acc0);
                if pair {
                    project(oy * ow + ox + 1, acc1);
                }
                ox += 2;
            }
        }
        for (o, a) in out.iter_mut().zip(acts.iter()) {
            *o = a.tanh();
        }
    }

    /// Writes `batch × n_out` actions in `[-1, 1]`.
    pub fn forward_into<T: Real>(&self, obs: &Obs, actions: &mut [T]) -> Result<()> {
        if obs.height != self.in_h || obs.width != self.in_w || obs.channels != self.channels {
            return Err(Error::invalid(format!(
                "conv stub expects {}x{}x{}, got {}x{}x{}",
                self.in_h, self.in_w, self.channels, obs.height, obs.width, obs.channels
            )));
        }
        if actions.len() != obs.batch * self.n_out {
            return Err(Error::invalid("action buffer does not match batch × outputs"));
        }
        actions
            .par_chunks_mut(self.n_out)
            .zip(obs.data.par_chunks(obs.env_len()))
            .for_each(|(a, img)| {
                let mut out = [0.0f32; MAX_JOINTS];
                self.forward_one(img, &mut out[..self.n_out]);
                for (d, &v) in a.iter_mut().zip(&out) {
                    *d = T::c(v as f64);
                }
            });
        Ok(())
    }

    pub fn forward<T: Real>(&self, obs: &Obs) -> Result<Vec<T>> {
        let mut actions = vec![T::zero(); obs.batch * self.n_out];
        self.forward_into(obs, &mut actions)?;
        Ok(actions)
    }
}

pub fn conv_stub_forward<T: Real>(stub: &ConvStub, obs: &Obs) -> Result<Vec<T>> {
    stub.forward(obs)
}

/// One measurement row.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub env: String,
    pub batch: usize,
    pub distractor: DistractorMode,
    /// `batch × loop iterations`.
    pub steps: u64,
    pub seconds: f64,
    pub sps: f64,
    pub height: usize,
    pub width: usize,
}

/// Rounds to 6 significant digits.
pub fn round_sig6(v: f64) -> f64 {
    format!("{v:.5e}").parse().unwrap_or(v)
}

impl BenchRecord {
    /// Builds a record, rounding seconds and sps to 6 significant digits.
    pub fn new(env: &str, batch: usize, distractor: DistractorMode, iterations: u64, seconds: f64, height: usize, width: usize) -> Self {
        let steps = batch as u64 * iterations;
        BenchRecord {
            env: env.to_string(),
            batch,
            distractor,
            steps,
            seconds: round_sig6(seconds),
            sps: round_sig6(steps as f64 / seconds),
            height,
            width,
        }
    }

    pub fn per_env_sps(&self) -> f64 {
        self.sps / self.batch as f64
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}x{}",
            self.env, self.batch, self.distractor, self.steps, self.seconds, self.sps, self.height, self.width
        )
    }

    pub fn parse_csv_row(line: &str, line_no: usize) -> Result<Self> {
        let err = |m: String| Error::Parse { line: line_no, message: m };
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(format!("bad {what} {s:?}")));
        let (h, w) = crate::env::parse_size(f[6]).map_err(|e| err(e.to_string()))?;
        Ok(BenchRecord {
            env: f[0].to_string(),
            batch: f[1].parse().map_err(|_| err(format!("bad batch {:?}", f[1])))?,
            distractor: f[2].parse().map_err(|e: Error| err(e.to_string()))?,
            steps: f[3].parse().map_err(|_| err(format!("bad steps {:?}", f[3])))?,
            seconds: num(f[4], "seconds")?,
            sps: num(f[5], "sps")?,
            height: h,
            width: w,
        })
    }
}

impl fmt::Display for BenchRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<14} batch {:>5}  {:<6} {:>12.1} sps  ({:.1} per env, {:.2} s)",
            self.env,
            self.batch,
            self.distractor.as_str(),
            self.sps,
            self.per_env_sps(),
            self.seconds
        )
    }
}

pub fn write_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for r in records {
        text += &r.csv_row();
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Parse { line: 1, message: format!("expected header `{CSV_HEADER}`") }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| BenchRecord::parse_csv_row(l, i + 1))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub envs: Vec<String>,
    pub batches: Vec<usize>,
    pub modes: Vec<DistractorMode>,
    pub pack: Option<PathBuf>,
    pub warmup_steps: u64,
    pub measure_steps: u64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Source of the remaining env fields (action repeat, observation, camera).
    pub template: EnvConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            envs: crate::physics::BUILTIN_MODELS.iter().map(|s| s.to_string()).collect(),
            batches: DEFAULT_BATCHES.to_vec(),
            modes: vec![DistractorMode::None],
            pack: None,
            warmup_steps: 50,
            measure_steps: 500,
            height: 84,
            width: 84,
            seed: 0,
            template: EnvConfig::default(),
        }
    }
}

/// A record plus the hash of the run's final observation.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRun {
    pub record: BenchRecord,
    pub digest: String,
}

/// Times `measure` iterations after `warmup` untimed ones on one env.
pub fn measure<T: Real>(env: &Env<T>, stub: &ConvStub, warmup: u64, measure: u64) -> Result<(f64, String)> {
    let mut state = env.initial_state(env.config().seed)?;
    let mut out = env.new_output();
    env.observe_into(&state, &mut out);
    let mut actions = vec![T::zero(); env.batch() * env.n_joints()];
    for _ in 0..warmup {
        stub.forward_into(&out.obs, &mut actions)?;
        env.step_into(&mut state, &actions, &mut out)?;
    }
    let start = Instant::now();
    for _ in 0..measure {
        stub.forward_into(&out.obs, &mut actions)?;
        env.step_into(&mut state, &actions, &mut out)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok((seconds, hex(&Sha256::digest(&out.obs.data))))
}

/// Runs every (env, batch, mode) combination in order.
pub fn run_benchmark<T: Real>(config: &BenchConfig, mut progress: impl FnMut(&BenchRun)) -> Result<Vec<BenchRun>> {
    if config.measure_steps < 100 {
        return Err(Error::invalid(format!("measure_steps must be >= 100, got {}", config.measure_steps)));
    }
    let pack: Option<VideoPack> = if config.modes.contains(&DistractorMode::Video) {
        let path = config.pack.as_ref().ok_or_else(|| Error::invalid("video mode needs --pack"))?;
        Some(load_video_pack(path)?)
    } else {
        None
    };
    let mut runs = Vec::new();
    for name in &config.envs {
        for &batch in &config.batches {
            for &mode in &config.modes {
                let env_config = EnvConfig {
                    model: name.clone(),
                    batch,
                    height: config.height,
                    width: config.width,
                    distractor_mode: mode,
                    video_pack_path: config.pack.clone(),
                    seed: config.seed,
                    ..config.template.clone()
                };
                let env_pack = if mode == DistractorMode::Video { pack.clone() } else { None };
                let env = Env::<T>::with_pack(&env_config, env_pack)?;
                let stub = ConvStub::standard(config.height, config.width, env.obs_shape()[3], env.n_joints(), config.seed)?;
                let (seconds, digest) = measure(&env, &stub, config.warmup_steps, config.measure_steps)?;
                let record = BenchRecord::new(name, batch, mode, config.measure_steps, seconds, config.height, config.width);
                let run = BenchRun { record, digest };
                progress(&run);
                runs.push(run);
            }
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs_from(batch: usize, h: usize, w: usize, c: usize, f: impl Fn(usize) -> u8) -> Obs {
        let mut o = Obs::new(batch, h, w, c);
        for (i, v) in o.data.iter_mut().enumerate() {
            *v = f(i);
        }
        o
    }

    /// Nested-loop reference over the documented layouts.
    fn naive(stub: &ConvStub, img: &[u8]) -> Vec<f64> {
        let (f, k, c, s) = (stub.filters, stub.kernel, stub.channels, stub.stride);
        let mut out = vec![0.0; stub.n_out];
        for oy in 0..stub.out_h() {
            for ox in 0..stub.out_w() {
                for fi in 0..f {
                    let mut a = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            for ch in 0..c {
                                let x = img[((oy * s + ky) * stub.in_w + ox * s + kx) * c + ch] as f64 / 255.0;
                                a += stub.weights[((ky * k + kx) * c + ch) * f + fi] as f64 * x;
                            }
                        }
                    }
                    let pos = oy * stub.out_w() + ox;
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += a.max(0.0) * stub.projection[(pos * f + fi) * stub.n_out + j] as f64;
                    }
                }
            }
        }
        out.iter().map(|v| v.tanh()).collect()
    }

    #[test]
    fn zero_weights_give_zero_actions() {
        let mut stub = ConvStub::standard(84, 84, 3, 6, 0).unwrap();
        stub.weights.fill(0.0);
        let obs = obs_from(2, 84, 84, 3, |i| (i % 251) as u8);
        assert!(stub.forward::<f32>(&obs).unwrap().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn one_by_one_identity_on_constant_image() {
        let mut stub = ConvStub::new(1, 1, 1, 1, 8, 8, 1, 0).unwrap();
        stub.weights = vec![1.0];
        stub.projection = vec![0.01; 64];
        let obs = obs_from(1, 8, 8, 1, |_| 51);
        // Each activation is 51/255 = 0.2; 64 of them weighted 0.01.
        let a = stub.forward::<f64>(&obs).unwrap()[0];
        assert!((a - (64.0f64 * 0.2 * 0.01).tanh()).abs() < 1e-6);
        assert!((a - naive(&stub, &obs.data)[0]).abs() < 1e-6);
    }

    #[test]
    fn matches_naive_convolution() {
        let stub = ConvStub::standard(32, 40, 3, 4, 9).unwrap();
        let obs = obs_from(1, 32, 40, 3, |i| ((i * 37) % 256) as u8);
        let fast = stub.forward::<f64>(&obs).unwrap();
        for (a, b) in fast.iter().zip(naive(&stub, &obs.data)) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        assert!(fast.iter().all(|a| a.abs() <= 1.0));
    }

    #[test]
    fn batch_equals_single_forwards() {
        let stub = ConvStub::standard(84, 84, 3, 6, 1).unwrap();
        let obs = obs_from(10, 84, 84, 3, |i| ((i * 13 + i / 7) % 256) as u8);
        let all = stub.forward::<f32>(&obs).unwrap();
        for b in 0..10 {
            let one = Obs { batch: 1, data: obs.env(b).to_vec(), ..obs.clone() };
            assert_eq!(stub.forward::<f32>(&one).unwrap(), all[b * 6..(b + 1) * 6]);
        }
        let wrong = Obs::new(1, 80, 84, 3);
        assert!(stub.forward::<f32>(&wrong).is_err());
    }

    #[test]
    fn weights_are_deterministic() {
        assert_eq!(ConvStub::standard(84, 84, 3, 6, 5).unwrap(), ConvStub::standard(84, 84, 3, 6, 5).unwrap());
        assert_ne!(ConvStub::standard(84, 84, 3, 6, 5).unwrap(), ConvStub::standard(84, 84, 3, 6, 6).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{CSV_HEADER}\n"));
        assert!(read_csv(&path).unwrap().is_empty());
        let mut records = Vec::new();
        for env in ["a", "b", "c", "d"] {
            for batch in DEFAULT_BATCHES {
                records.push(BenchRecord::new(env, batch, DistractorMode::Color, 500, 1.0 / 3.0 + batch as f64, 84, 84));
            }
        }
        write_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert_eq!(read_csv(&path).unwrap(), records);
        assert_eq!(records[0].seconds, 1.33333);
        assert_eq!(records[0].steps, 500);
    }

    #[test]
    fn benchmark_digest_is_reproducible() {
        let config = BenchConfig {
            envs: vec!["hopper_lite".into()],
            batches: vec![2],
            warmup_steps: 2,
            measure_steps: 100,
            height: 16,
            width: 16,
            ..BenchConfig::default()
        };
        let a = run_benchmark::<f32>(&config, |_| {}).unwrap();
        let b = run_benchmark::<f32>(&config, |_| {}).unwrap();
        assert_eq!(a[0].digest, b[0].digest);
        assert_eq!(a[0].record.steps, 200);
        assert!(a[0].record.sps > 0.0);
        let short = BenchConfig { measure_steps: 99, ..config };
        assert!(run_benchmark::<f32>(&short, |_| {}).is_err());
    }
}
