//! Acceptance suite A1–A12. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. `LCR_ACCEPTANCE=A1,A5` restricts the run;
//! `LCR_SEED` overrides the toy-run seed.

mod common;
#[path = "../../tensor/tests/common/mod.rs"]
mod tensor_oracle;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use lcr_core::classifiers::{
    predict_topk, sample_seed, Classifier, ClassifierConfig, Inputs, SampleSource,
};
use lcr_core::codec::{rate_bits, Codec, CodecEpochLog, LatentPair};
use lcr_core::data::augment::{augment_latent, augment_pixel, AugmentationConfig, PcaLighting};
use lcr_core::data::{synth_toy_textures, DatasetManifest, Split};
use lcr_core::entropy::{self, BitstreamHeader};
use lcr_core::metrics::{ms_ssim_var, psnr};
use lcr_core::pipeline::workflows::{decode_split, run_anchor1, run_anchor2, run_anchor3, run_compressed};
use lcr_core::pipeline::{EvaluationRow, ExperimentConfig, RunContext, RunLog, Trained};
use lcr_tensor::init::seeded_rng;
use lcr_tensor::ops::BATCH_NORM_EPS;
use lcr_tensor::{Graph, Mode, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use tensor_oracle as to;

const TOY_CLASSES: usize = 2;
const TOY_PER_CLASS: usize = 40;
const TOY_SIZE: usize = 256;
const QUALITIES: [u8; 3] = [1, 4, 8];
const DEFAULT_SEED: u64 = 7;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Outcome = Result<Verdict, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- A1 / A2

fn random_field(rng: &mut lcr_tensor::init::Rng, len: usize, sigma_range: (f64, f64), outliers: f64) -> (Vec<f32>, Vec<f32>) {
    let (lo, hi) = (sigma_range.0.ln(), sigma_range.1.ln());
    let mut values = Vec::with_capacity(len);
    let mut sigmas = Vec::with_capacity(len);
    for _ in 0..len {
        let s = rng.random_range(lo..=hi).exp();
        let v = if rng.random_bool(outliers) {
            rng.random_range(-70000i32..=70000) as f64
        } else {
            Normal::new(0.0, s).unwrap().sample(rng).round()
        };
        values.push(v as f32);
        sigmas.push(s as f32);
    }
    (values, sigmas)
}

fn a1() -> Outcome {
    let mut rng = seeded_rng(0xA1);
    let trials = 1000;
    let mut ok = 0;
    let mut symbols = 0usize;
    for t in 0..trials {
        let len = rng.random_range(1..=2000);
        let (values, sigmas) = random_field(&mut rng, len, (0.05, 64.0), 0.01);
        let syms = entropy::to_symbols(&values);
        let tables = entropy::tables_for_scales(&sigmas);
        let bytes = entropy::encode_symbols(&syms, &tables);
        let mut good = entropy::decode_symbols(&bytes, &tables).map(|d| d == syms).unwrap_or(false);
        if t % 10 == 0 {
            // Also through the container, as the y payload.
            let header = BitstreamHeader {
                quality_index: 1 + (t % 8) as u8,
                true_height: 64,
                true_width: 64,
                latent_channels: 1,
                hyper_channels: 1,
                z_len: 0,
                y_len: 0,
            };
            let stream = entropy::serialize(&header, &[], &bytes);
            good &= entropy::parse(&stream)
                .map_err(err)
                .and_then(|(_, _, y)| entropy::decode_symbols(y, &tables).map_err(err))
                .map(|d| d == syms)
                .unwrap_or(false);
        }
        ok += good as usize;
        symbols += len;
    }
    Ok(verdict(ok == trials, format!("{ok}/{trials} fields ({symbols} symbols) round-trip bit-exactly")))
}

fn a2() -> Outcome {
    let mut rng = seeded_rng(0xA2);
    let mut worst = 0.0f64;
    let mut fails = 0;
    let fields = 10;
    let len = 20_000;
    for _ in 0..fields {
        let (values, sigmas) = random_field(&mut rng, len, (0.05, 8.0), 0.0);
        let tables = entropy::tables_for_scales(&sigmas);
        let actual = 8.0 * entropy::encode_symbols(&entropy::to_symbols(&values), &tables).len() as f64;
        let estimate = rate_bits(&values, &sigmas);
        let excess = (actual - estimate).abs() - (0.01 * estimate + 64.0);
        worst = worst.max((actual - estimate).abs() / estimate.max(1.0));
        fails += (excess > 0.0) as usize;
    }
    Ok(verdict(
        fails == 0,
        format!("{fields} fields × {len} symbols; worst |actual − estimate| / estimate = {:.3}%", 100.0 * worst),
    ))
}

// ---------------------------------------------------------------- A3

const H: f64 = 1e-4;

fn project(g: &mut Graph, out: &Var, seed: u64) -> (Var, Vec<f64>) {
    let r = to::randn(out.shape(), seed);
    let r64 = to::to64(&r);
    let rv = g.constant(r);
    let prod = g.mul(out, &rv).unwrap();
    (g.sum(&prod), r64)
}

fn a3() -> Outcome {
    let mut results: Vec<(&str, f64, f64)> = Vec::new();
    let mut push = |name: &'static str, a: &Tensor, n: &[f64], tol: f64| results.push((name, to::rel_err(a, n), tol));

    // Convolution.
    {
        let dims = (2, 3, 7, 6);
        let x0 = to::randn(&[2, 3, 7, 6], 1);
        let w0 = to::randn(&[4, 3, 3, 3], 2);
        let b0 = to::randn(&[4], 3);
        let mut g = Graph::new();
        let (x, w, b) = (g.leaf(x0.clone()), g.leaf(w0.clone()), g.leaf(b0.clone()));
        let y = g.conv2d(&x, &w, Some(&b), 2, 1).map_err(err)?;
        let (loss, r) = project(&mut g, &y, 4);
        g.backward_leaves(&loss).map_err(err)?;
        let (x64, w64, b64) = (to::to64(&x0), to::to64(&w0), to::to64(&b0));
        let f = |xs: &[f64], ws: &[f64], bs: &[f64]| to::dot(&to::conv2d(xs, dims, ws, (4, 3), Some(bs), 2, 1).0, &r);
        push("conv dx", g.grad(&x).unwrap(), &to::numeric_grad(&x64, H, |v| f(v, &w64, &b64)), 1e-4);
        push("conv dw", g.grad(&w).unwrap(), &to::numeric_grad(&w64, H, |v| f(&x64, v, &b64)), 1e-4);
        push("conv db", g.grad(&b).unwrap(), &to::numeric_grad(&b64, H, |v| f(&x64, &w64, v)), 1e-4);
    }
    // Transposed convolution.
    {
        let dims = (1, 3, 3, 4);
        let x0 = to::randn(&[1, 3, 3, 4], 5);
        let w0 = to::randn(&[3, 2, 5, 5], 6);
        let b0 = to::randn(&[2], 7);
        let mut g = Graph::new();
        let (x, w, b) = (g.leaf(x0.clone()), g.leaf(w0.clone()), g.leaf(b0.clone()));
        let y = g.conv2d_transpose(&x, &w, Some(&b), 2, 2, 1).map_err(err)?;
        let (loss, r) = project(&mut g, &y, 8);
        g.backward_leaves(&loss).map_err(err)?;
        let (x64, w64, b64) = (to::to64(&x0), to::to64(&w0), to::to64(&b0));
        let f = |xs: &[f64], ws: &[f64], bs: &[f64]| {
            let (mut out, oh, ow) = to::conv2d_transpose(xs, dims, ws, (2, 5), 2, 2, 1);
            for (i, v) in out.iter_mut().enumerate() {
                *v += bs[(i / (oh * ow)) % 2];
            }
            to::dot(&out, &r)
        };
        push("convT dx", g.grad(&x).unwrap(), &to::numeric_grad(&x64, H, |v| f(v, &w64, &b64)), 1e-4);
        push("convT dw", g.grad(&w).unwrap(), &to::numeric_grad(&w64, H, |v| f(&x64, v, &b64)), 1e-4);
        push("convT db", g.grad(&b).unwrap(), &to::numeric_grad(&b64, H, |v| f(&x64, &w64, v)), 1e-4);
    }
    // GDN and inverse GDN.
    for inverse in [false, true] {
        let dims = (2, 4, 3, 2);
        let x0 = to::randn(&[2, 4, 3, 2], 9);
        let beta0 = Tensor::from_fn(&[4], |i| 0.6 + 0.2 * i as f32);
        let gamma0 = Tensor::from_fn(&[4, 4], |i| 0.04 + 0.03 * ((i * 5) % 7) as f32);
        let mut g = Graph::new();
        let (x, beta, gamma) = (g.leaf(x0.clone()), g.leaf(beta0.clone()), g.leaf(gamma0.clone()));
        let y = g.gdn(&x, &beta, &gamma, inverse).map_err(err)?;
        let (loss, r) = project(&mut g, &y, 10);
        g.backward_leaves(&loss).map_err(err)?;
        let (x64, b64, g64) = (to::to64(&x0), to::to64(&beta0), to::to64(&gamma0));
        let f = |xs: &[f64], bs: &[f64], gs: &[f64]| to::dot(&to::gdn(xs, dims, bs, gs, inverse), &r);
        let names = if inverse { ["igdn dx", "igdn dbeta", "igdn dgamma"] } else { ["gdn dx", "gdn dbeta", "gdn dgamma"] };
        push(names[0], g.grad(&x).unwrap(), &to::numeric_grad(&x64, H, |v| f(v, &b64, &g64)), 1e-4);
        push(names[1], g.grad(&beta).unwrap(), &to::numeric_grad(&b64, H, |v| f(&x64, v, &g64)), 1e-4);
        push(names[2], g.grad(&gamma).unwrap(), &to::numeric_grad(&g64, H, |v| f(&x64, &b64, v)), 1e-4);
    }
    // Batch normalisation (training statistics).
    {
        let dims = (4, 3, 2, 2);
        let x0 = to::randn(&[4, 3, 2, 2], 11);
        let w0 = Tensor::new(&[3], vec![1.2, -0.6, 0.9]).unwrap();
        let b0 = Tensor::new(&[3], vec![0.1, 0.0, -0.3]).unwrap();
        let mut g = Graph::new();
        let (x, w, b) = (g.leaf(x0.clone()), g.leaf(w0.clone()), g.leaf(b0.clone()));
        let (y, _) = g.batch_norm_train(&x, &w, &b).map_err(err)?;
        let (loss, r) = project(&mut g, &y, 12);
        g.backward_leaves(&loss).map_err(err)?;
        let eps = BATCH_NORM_EPS as f64;
        let (x64, w64, b64) = (to::to64(&x0), to::to64(&w0), to::to64(&b0));
        let f = |xs: &[f64], ws: &[f64], bs: &[f64]| to::dot(&to::batch_norm_train(xs, dims, ws, bs, eps), &r);
        push("bn dx", g.grad(&x).unwrap(), &to::numeric_grad(&x64, H, |v| f(v, &w64, &b64)), 1e-4);
        push("bn dw", g.grad(&w).unwrap(), &to::numeric_grad(&w64, H, |v| f(&x64, v, &b64)), 1e-4);
        push("bn db", g.grad(&b).unwrap(), &to::numeric_grad(&b64, H, |v| f(&x64, &w64, v)), 1e-4);
    }
    // Linear.
    {
        let (n, fi, o) = (3, 6, 4);
        let x0 = to::randn(&[n, fi], 13);
        let w0 = to::randn(&[o, fi], 14);
        let b0 = to::randn(&[o], 15);
        let mut g = Graph::new();
        let (x, w, b) = (g.leaf(x0.clone()), g.leaf(w0.clone()), g.leaf(b0.clone()));
        let y = g.linear(&x, &w, Some(&b)).map_err(err)?;
        let (loss, r) = project(&mut g, &y, 16);
        g.backward_leaves(&loss).map_err(err)?;
        let (x64, w64, b64) = (to::to64(&x0), to::to64(&w0), to::to64(&b0));
        let f = |xs: &[f64], ws: &[f64], bs: &[f64]| to::dot(&to::linear(xs, n, fi, ws, o, bs), &r);
        push("linear dx", g.grad(&x).unwrap(), &to::numeric_grad(&x64, H, |v| f(v, &w64, &b64)), 1e-4);
        push("linear dw", g.grad(&w).unwrap(), &to::numeric_grad(&w64, H, |v| f(&x64, v, &b64)), 1e-4);
        push("linear db", g.grad(&b).unwrap(), &to::numeric_grad(&b64, H, |v| f(&x64, &w64, v)), 1e-4);
    }
    // Softmax cross-entropy.
    {
        let k = 23;
        let labels = [0usize, 22, 7, 7];
        let x0 = to::randn(&[4, k], 17);
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let loss = g.cross_entropy(&x, &labels).map_err(err)?;
        g.backward_leaves(&loss).map_err(err)?;
        let x64 = to::to64(&x0);
        push("softmax-xent", g.grad(&x).unwrap(), &to::numeric_grad(&x64, H, |v| to::cross_entropy(v, k, &labels)), 1e-4);
    }
    // MS-SSIM against the f64 reference (two scales at 24², both inputs).
    {
        let (planes, h, w) = (2, 24, 24);
        let mut rng = seeded_rng(18);
        let a0 = Tensor::from_fn(&[1, planes, h, w], |_| rng.random_range(0.0..1.0));
        let b0 = a0.map(|v| (v + 0.15 * (v * 37.0).sin()).clamp(0.0, 1.0));
        let mut g = Graph::new();
        let (a, b) = (g.leaf(a0.clone()), g.leaf(b0.clone()));
        let m = ms_ssim_var(&mut g, &a, &b).map_err(err)?;
        let value = m.value().item() as f64;
        g.backward_leaves(&m).map_err(err)?;
        let (a64, b64) = (to::to64(&a0), to::to64(&b0));
        let reference = common::ms_ssim(&a64, &b64, planes, h, w);
        if (value - reference).abs() > 1e-4 {
            return Ok(verdict(false, format!("MS-SSIM value {value} differs from reference {reference}")));
        }
        push("ms-ssim dx", g.grad(&a).unwrap(), &to::numeric_grad(&a64, H, |v| common::ms_ssim(v, &b64, planes, h, w)), 1e-3);
        push("ms-ssim dy", g.grad(&b).unwrap(), &to::numeric_grad(&b64, H, |v| common::ms_ssim(&a64, v, planes, h, w)), 1e-3);
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, e, tol)| !(e < tol))
        .map(|(n, e, tol)| format!("{n} {e:.2e} ≥ {tol:.0e}"))
        .collect();
    let worst = results
        .iter()
        .filter(|(n, _, _)| !n.starts_with("ms-ssim"))
        .map(|r| r.1)
        .fold(0.0, f64::max);
    let worst_ms = results.iter().filter(|(n, _, _)| n.starts_with("ms-ssim")).map(|r| r.1).fold(0.0, f64::max);
    Ok(verdict(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} gradient checks; worst rel. error {worst:.1e} (MS-SSIM {worst_ms:.1e})", results.len())
        } else {
            failed.join("; ")
        },
    ))
}

// ---------------------------------------------------------------- A4

fn conv_out(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

fn a4() -> Outcome {
    let mut problems = Vec::new();
    let mut checks = 0;
    let codec = Codec::new(lcr_core::codec::CodecConfig::toy(4), 1).map_err(err)?;
    let c = codec.config().latent_channels;
    for side in [224usize, 256] {
        let x = Tensor::full(&[1, 3, side, side], 0.5);
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let y = codec.analysis(&mut g, &xv).map_err(err)?;
        let mut expect = side;
        for _ in 0..4 {
            expect = conv_out(expect, 5, 2, 2);
        }
        checks += 1;
        if y.shape() != [1, c, expect, expect] {
            problems.push(format!("analysis {side}: {:?}", y.shape()));
        }
        let x_hat = codec.synthesis(&mut g, &y).map_err(err)?;
        checks += 1;
        if x_hat.shape() != [1, 3, side, side] {
            problems.push(format!("synthesis {side}: {:?}", x_hat.shape()));
        }
        if side == 224 && expect != 14 {
            problems.push(format!("224² input gives {expect}² latents, not 14²"));
        }
    }
    // Hyper path on a 256² image: ŷ 16², ẑ 4², σ̂ back at 16².
    {
        let mut g = Graph::inference();
        let xv = g.constant(Tensor::full(&[1, 3, 256, 256], 0.3));
        let y = codec.analysis(&mut g, &xv).map_err(err)?;
        let z = codec.hyper_analysis(&mut g, &y).map_err(err)?;
        let s = codec.hyper_synthesis(&mut g, &z, (16, 16)).map_err(err)?;
        checks += 2;
        if z.shape()[2..] != [4, 4] {
            problems.push(format!("hyper-analysis: {:?}", z.shape()));
        }
        if s.shape() != y.shape() {
            problems.push(format!("σ̂ {:?} vs ŷ {:?}", s.shape(), y.shape()));
        }
    }
    // ResNet-50 variant: stem s2 → pool s2 → stages at s1, s2, s2, s2.
    let resnet = Classifier::new(ClassifierConfig::resnet50(23), 0).map_err(err)?;
    for side in [224usize, 256] {
        let mut trace = Vec::new();
        let mut g = Graph::inference();
        let x = Inputs::Pixel(Tensor::full(&[1, 3, side, side], 0.5));
        let logits = resnet.forward_traced(&mut g, &x, Mode::Eval, Some(&mut trace)).map_err(err)?;
        let s1 = conv_out(side, 3, 2, 1);
        let p = conv_out(s1, 3, 2, 1);
        let s3 = conv_out(p, 3, 2, 1);
        let s4 = conv_out(s3, 3, 2, 1);
        let s5 = conv_out(s4, 3, 2, 1);
        let expect: Vec<(&str, Vec<usize>)> = vec![
            ("stem", vec![1, 128, s1, s1]),
            ("pool", vec![1, 128, p, p]),
            ("conv2_x", vec![1, 256, p, p]),
            ("conv3_x", vec![1, 512, s3, s3]),
            ("conv4_x", vec![1, 1024, s4, s4]),
            ("conv5_x", vec![1, 2048, s5, s5]),
            ("pool_fc", vec![1, 2048]),
        ];
        checks += expect.len() + 1;
        if trace != expect {
            problems.push(format!("resnet50 {side}: {trace:?}"));
        }
        if logits.shape() != [1, 23] {
            problems.push(format!("resnet50 logits {:?}", logits.shape()));
        }
        if side == 224 && s5 != 7 {
            problems.push("224² input does not end at 7²".into());
        }
    }
    // cResNet-39 on 14², 28², and 32² latents.
    let cres = Classifier::new(ClassifierConfig::cresnet39(23, c), 0).map_err(err)?;
    for side in [14usize, 28, 32] {
        let mut trace = Vec::new();
        let mut g = Graph::inference();
        let x = Inputs::Latent {
            y_hat: Tensor::zeros(&[1, c, side, side]),
            sigma_hat: Tensor::ones(&[1, c, side, side]),
        };
        cres.forward_traced(&mut g, &x, Mode::Eval, Some(&mut trace)).map_err(err)?;
        let s3 = conv_out(side, 3, 2, 1);
        let s4 = conv_out(s3, 3, 2, 1);
        let s5 = conv_out(s4, 3, 2, 1);
        let expect: Vec<(&str, Vec<usize>)> = vec![
            ("stems", vec![1, 256, side, side]),
            ("conv3_x", vec![1, 512, s3, s3]),
            ("conv4_x", vec![1, 1024, s4, s4]),
            ("conv5_x", vec![1, 2048, s5, s5]),
            ("pool_fc", vec![1, 2048]),
        ];
        checks += expect.len();
        if trace != expect {
            problems.push(format!("cresnet39 {side}: {trace:?}"));
        }
    }
    // Layer census.
    let census = |m: &Classifier| m.layer_census().iter().map(|(_, n)| n).sum::<usize>();
    checks += 2;
    if census(&resnet) != 3 + 3 * (3 + 4 + 6 + 3) + 1 {
        problems.push(format!("resnet50 census {:?}", resnet.layer_census()));
    }
    if census(&cres) != 6 + 3 * (4 + 6 + 3) + 1 {
        problems.push(format!("cresnet39 census {:?}", cres.layer_census()));
    }
    Ok(verdict(
        problems.is_empty(),
        if problems.is_empty() { format!("{checks} shape contracts hold") } else { problems.join("; ") },
    ))
}

// ---------------------------------------------------------------- toy runs

struct Toy {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: ExperimentConfig,
    manifest: DatasetManifest,
    log: RunLog,
    codecs: BTreeMap<u8, (PathBuf, Vec<CodecEpochLog>)>,
    heldout: BTreeMap<u8, (f64, f64)>,
    anchor3: Option<Trained>,
    compressed: BTreeMap<u8, (Trained, usize)>,
}

fn toy_config(root: &std::path::Path, run: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.output_dir = root.join(run);
    cfg.manifest = Some(root.join("data/manifest.tsv"));
    cfg.quality_indices = QUALITIES.to_vec();
    cfg.codec_checkpoint = root.join(run).join("codec_q{q}.ckpt").to_string_lossy().into_owned();
    cfg.latent_store = Some(root.join(run).join("latents"));
    cfg.classifier.batch_size = 8;
    cfg.classifier.target_top1 = Some(95.0);
    cfg
}

impl Toy {
    fn new() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(err)?;
        let root = dir.path().to_path_buf();
        let seed = match std::env::var("LCR_SEED") {
            Ok(v) => v.parse().map_err(|_| format!("LCR_SEED={v:?} is not an integer"))?,
            Err(_) => DEFAULT_SEED,
        };
        let manifest = synth_toy_textures(root.join("data"), TOY_CLASSES, TOY_PER_CLASS, TOY_SIZE, seed).map_err(err)?;
        let cfg = toy_config(&root, "run", seed);
        std::fs::create_dir_all(&cfg.output_dir).map_err(err)?;
        let log = RunLog::append_to(cfg.output_dir.join("log.jsonl")).map_err(err)?;
        Ok(Self {
            _dir: dir,
            root,
            cfg,
            manifest,
            log,
            codecs: BTreeMap::new(),
            heldout: BTreeMap::new(),
            anchor3: None,
            compressed: BTreeMap::new(),
        })
    }

    fn ctx(&self) -> RunContext<'_> {
        RunContext { cfg: &self.cfg, manifest: &self.manifest, log: &self.log }
    }

    /// Trains (once) and returns a fresh instance of the codec at `q`.
    fn codec(&mut self, q: u8) -> Result<Codec, String> {
        if !self.codecs.contains_key(&q) {
            let (codec, logs) = lcr_core::pipeline::train_codec_for(&self.ctx(), q).map_err(err)?;
            let path = self.cfg.codec_path(q);
            codec.save(&path).map_err(err)?;
            self.codecs.insert(q, (path, logs));
        }
        Codec::load(&self.codecs[&q].0).map_err(err)
    }

    /// Mean test-split (bpp, MS-SSIM) through the real bitstream.
    fn heldout(&mut self, q: u8) -> Result<(f64, f64), String> {
        if !self.heldout.contains_key(&q) {
            let codec = self.codec(q)?;
            let d = decode_split(&codec, &self.manifest, Split::Test).map_err(err)?;
            let n = d.reports.len() as f64;
            let bpp = d.reports.iter().map(|r| r.bpp).sum::<f64>() / n;
            let ms = d.reports.iter().map(|r| r.ms_ssim).sum::<f64>() / n;
            self.heldout.insert(q, (bpp, ms));
        }
        Ok(self.heldout[&q])
    }

    fn anchor3(&mut self) -> Result<&Trained, String> {
        if self.anchor3.is_none() {
            self.anchor3 = Some(run_anchor3(&self.ctx()).map_err(err)?);
        }
        Ok(self.anchor3.as_ref().unwrap())
    }

    /// Compressed-domain result at `q` and the synthesis count it incurred.
    fn compressed(&mut self, q: u8) -> Result<&(Trained, usize), String> {
        if !self.compressed.contains_key(&q) {
            let codec = self.codec(q)?;
            let t = run_compressed(&self.ctx(), &codec).map_err(err)?;
            let calls = codec.synthesis_calls();
            self.compressed.insert(q, (t, calls));
        }
        Ok(&self.compressed[&q])
    }
}

fn a5(toy: &mut Toy) -> Outcome {
    let q = *QUALITIES.last().unwrap();
    toy.codec(q)?;
    let logs = toy.codecs[&q].1.clone();
    let (first, last) = (logs.first().unwrap().loss, logs.last().unwrap().loss);
    let untrained = Codec::new(toy.cfg.codec_config(q).map_err(err)?, toy.cfg.seed).map_err(err)?;
    let d = decode_split(&untrained, &toy.manifest, Split::Test).map_err(err)?;
    let ms_untrained = d.reports.iter().map(|r| r.ms_ssim).sum::<f64>() / d.reports.len() as f64;
    let (_, ms_trained) = toy.heldout(q)?;
    Ok(verdict(
        logs.len() == 20 && last < first && ms_trained > ms_untrained,
        format!(
            "q{q}: loss {first:.4} → {last:.4} over {} epochs; held-out MS-SSIM {ms_untrained:.4} → {ms_trained:.4}",
            logs.len()
        ),
    ))
}

fn a6(toy: &mut Toy) -> Outcome {
    let mut parts = Vec::new();
    for q in QUALITIES {
        let (bpp, ms) = toy.heldout(q)?;
        parts.push(format!("q{q} {bpp:.4} bpp / MS-SSIM {ms:.4}"));
    }
    let (lo, hi) = (QUALITIES[0], *QUALITIES.last().unwrap());
    let (b_lo, m_lo) = toy.heldout(lo)?;
    let (b_hi, m_hi) = toy.heldout(hi)?;
    Ok(verdict(b_lo < b_hi && m_hi >= m_lo, parts.join(", ")))
}

fn a7(toy: &mut Toy) -> Outcome {
    let t = toy.anchor3()?;
    let o = &t.outcome;
    Ok(verdict(
        o.best_val_top1 >= 95.0 && o.best_epoch <= 30,
        format!(
            "val Top-1 {:.1}% at epoch {} ({} epochs run); test Top-1 {:.1}%",
            o.best_val_top1,
            o.best_epoch,
            o.history.len(),
            t.row.top1
        ),
    ))
}

fn a8(toy: &mut Toy) -> Outcome {
    let q = QUALITIES[0];
    let codec = toy.codec(q)?;
    let a3_top1 = toy.anchor3()?.row.top1;
    let a3 = Classifier::from_checkpoint(&toy.anchor3()?.model.checkpoint()).map_err(err)?;
    let a1 = run_anchor1(&toy.ctx(), &a3, &codec).map_err(err)?;
    let a2 = run_anchor2(&toy.ctx(), &a3, &codec).map_err(err)?;
    let gap = a3_top1 - a1.top1;
    let recovered = a2.row.top1 - a1.top1;
    // At the top quality, decoded images barely cost the pixel classifier.
    let top = *QUALITIES.last().unwrap();
    let top_codec = toy.codec(top)?;
    let a1_top = run_anchor1(&toy.ctx(), &a3, &top_codec).map_err(err)?;
    Ok(verdict(
        a1.top1 <= a3_top1 && recovered >= 0.5 * gap && a3_top1 - a1_top.top1 <= 5.0,
        format!(
            "q{q}: anchor3 {a3_top1:.1}%, anchor1 {:.1}%, anchor2 {:.1}% (recovers {recovered:.1} of a {gap:.1}-point gap); \
             q{top}: anchor1 {:.1}%",
            a1.top1, a2.row.top1, a1_top.top1
        ),
    ))
}

fn a9(toy: &mut Toy) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for q in QUALITIES {
        let (t, calls) = toy.compressed(q)?;
        pass &= t.row.top1 >= 90.0 && *calls == 0;
        parts.push(format!("q{q} {:.1}% ({} synthesis calls)", t.row.top1, calls));
    }
    Ok(verdict(pass, format!("test Top-1: {}", parts.join(", "))))
}

fn a10(toy: &mut Toy) -> Outcome {
    let mut acc = Vec::new();
    for q in QUALITIES {
        acc.push(toy.compressed(q)?.0.row.top1);
    }
    let inversions: Vec<f64> = acc.windows(2).filter(|w| w[1] < w[0]).map(|w| w[0] - w[1]).collect();
    let pass = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 2.0);
    Ok(verdict(
        pass,
        format!(
            "Top-1 by quality {:?}: {}",
            QUALITIES,
            acc.iter().map(|a| format!("{a:.1}")).collect::<Vec<_>>().join(" ≤? ")
        ) + &match inversions.len() {
            0 => String::from(" (nondecreasing)"),
            n => format!(" ({n} inversion(s), largest {:.1} points)", inversions.iter().cloned().fold(0.0, f64::max)),
        },
    ))
}

fn strip_timing(t: &Trained) -> Vec<(usize, u32, u64, u64, u64)> {
    t.outcome
        .history
        .iter()
        .map(|r| (r.epoch, r.learning_rate.to_bits(), r.train_loss.to_bits(), r.val_top1.to_bits(), r.val_top5.to_bits()))
        .collect()
}

fn a11(toy: &mut Toy) -> Outcome {
    let q = *QUALITIES.last().unwrap();
    toy.codec(q)?;
    let first_logs = toy.codecs[&q].1.clone();
    let first_row: EvaluationRow = toy.compressed(q)?.0.row.clone();
    let first_hist = strip_timing(&toy.compressed(q)?.0);

    let cfg = toy_config(&toy.root, "rerun", toy.cfg.seed);
    std::fs::create_dir_all(&cfg.output_dir).map_err(err)?;
    let log = RunLog::detached();
    let ctx = RunContext { cfg: &cfg, manifest: &toy.manifest, log: &log };
    let (codec, logs) = lcr_core::pipeline::train_codec_for(&ctx, q).map_err(err)?;
    let codec_same = logs == first_logs;
    // The rerun classifies latents of its own, independently trained codec.
    codec.save(cfg.codec_path(q)).map_err(err)?;
    let fresh = Codec::load(cfg.codec_path(q)).map_err(err)?;
    let again = run_compressed(&ctx, &fresh).map_err(err)?;
    let row_same = again.row == first_row;
    let hist_same = strip_timing(&again) == first_hist;
    Ok(verdict(
        codec_same && row_same && hist_same,
        format!(
            "codec q{q} loss log {}; compressed q{q} EvaluationRow {}, epoch log {}",
            if codec_same { "identical" } else { "DIFFERS" },
            if row_same { "identical" } else { "DIFFERS" },
            if hist_same { "identical" } else { "DIFFERS" }
        ),
    ))
}

// ---------------------------------------------------------------- A12

struct Pixels(Vec<Tensor>);

impl SampleSource for Pixels {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn label(&self, _: usize) -> usize {
        0
    }
    fn input(&self, i: usize, augment: Option<u64>) -> lcr_core::Result<Inputs> {
        Ok(Inputs::Pixel(augment_pixel(&self.0[i], &AugmentationConfig::default(), None, augment)?))
    }
}

fn a12() -> Outcome {
    let mut rng = seeded_rng(0xA12);
    let mut problems = Vec::new();

    // Convolution versus the direct sliding-window sum.
    let mut worst_conv = 0.0f64;
    for t in 0..40 {
        let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let (stride, pad) = (rng.random_range(1..=2), rng.random_range(0..=k / 2));
        let (h, w) = (rng.random_range(k..k + 8), rng.random_range(k..k + 8));
        let x = to::randn(&[n, c, h, w], 100 + t);
        let wt = to::randn(&[o, c, k, k], 200 + t);
        let b = to::randn(&[o], 300 + t);
        let mut g = Graph::inference();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(b.clone()));
        let y = g.conv2d(&xv, &wv, Some(&bv), stride, pad).map_err(err)?;
        let (r, oh, ow) = to::conv2d(&to::to64(&x), (n, c, h, w), &to::to64(&wt), (o, k), Some(&to::to64(&b)), stride, pad);
        if y.shape() != [n, o, oh, ow] {
            problems.push(format!("conv shape {:?} vs {oh}×{ow}", y.shape()));
            continue;
        }
        worst_conv = worst_conv.max(to::rel_err(y.value(), &r));
    }
    if worst_conv > 1e-5 {
        problems.push(format!("conv vs sliding window rel. error {worst_conv:.1e}"));
    }

    // Top-k versus a full sort, with deliberate ties.
    for t in 0..500 {
        let k_classes = rng.random_range(1..=30);
        let scores: Vec<f32> = (0..k_classes).map(|_| rng.random_range(0..8) as f32 * 0.5).collect();
        let k = rng.random_range(1..=k_classes);
        let got = predict_topk(&scores, k).map_err(err)?;
        if got != common::topk_by_sort(&scores, k) {
            problems.push(format!("top-k trial {t}: {got:?}"));
            break;
        }
    }

    // PSNR versus the direct formula.
    for t in 0..50 {
        let shape = [1, 3, rng.random_range(4..40), rng.random_range(4..40)];
        let a = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
        let b = a.map(|v| (v + 0.05 * ((v * 1000.0).sin())).clamp(0.0, 1.0));
        let got = psnr(&a, &b, 1.0).map_err(err)?;
        let want = common::psnr(&to::to64(&a), &to::to64(&b), 1.0);
        if (got - want).abs() > 1e-6 * want.abs().max(1.0) {
            problems.push(format!("psnr trial {t}: {got} vs {want}"));
            break;
        }
    }

    // Augmentation reproducibility from (record, epoch, index, seed).
    let images: Vec<Tensor> = (0..4).map(|i| to::randn(&[3, 270 + 7 * i, 260], 400 + i as u64).map(|v| v.abs().min(1.0))).collect();
    let pca = PcaLighting::fit(&images).map_err(err)?;
    let cfg = AugmentationConfig::default();
    for (i, img) in images.iter().enumerate() {
        for epoch in 0..3 {
            let s = sample_seed(11, epoch, i);
            let a = augment_pixel(img, &cfg, Some(&pca), Some(s)).map_err(err)?;
            let b = augment_pixel(img, &cfg, Some(&pca), Some(sample_seed(11, epoch, i))).map_err(err)?;
            if a != b || a.shape() != [3, 224, 224] {
                problems.push(format!("pixel augmentation of record {i} epoch {epoch} not reproducible"));
            }
        }
    }
    let y = Tensor::from_fn(&[1, 8, 16, 16], |i| ((i * 7919) % 13) as f32 - 6.0);
    let sigma = y.map(|v| 0.05 + v.abs());
    let pair = LatentPair { y_hat: y, sigma_hat: sigma };
    for s in 0..20 {
        let a = augment_latent(&pair, &cfg, Some(sample_seed(3, 1, s))).map_err(err)?;
        let b = augment_latent(&pair, &cfg, Some(sample_seed(3, 1, s))).map_err(err)?;
        if a != b {
            problems.push(format!("latent augmentation draw {s} not reproducible"));
        }
    }
    // Batches drawn through a source are as reproducible as single samples.
    let src = Pixels(images);
    let draw = |seed| src.input(1, Some(seed)).map(|i| match i {
        Inputs::Pixel(t) => t,
        _ => unreachable!(),
    });
    if draw(5).map_err(err)? != draw(5).map_err(err)? {
        problems.push("sample source draws differ".into());
    }

    Ok(verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("conv (40 shapes, worst {worst_conv:.1e}), top-k (500), PSNR (50), augmentation replay all agree")
        } else {
            problems.join("; ")
        },
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    // Under `cargo test -- <filter>` libtest-style flags may be passed; ignore them.
    let only: Option<Vec<String>> = std::env::var("LCR_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_uppercase()).filter(|s| !s.is_empty()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));

    type Standalone = fn() -> Outcome;
    type ToyRun = fn(&mut Toy) -> Outcome;
    let standalone: [(&str, &str, Standalone); 5] = [
        ("A1", "coder losslessness", a1),
        ("A2", "rate consistency", a2),
        ("A3", "gradient suite", a3),
        ("A4", "shape contracts", a4),
        ("A12", "oracle equivalences", a12),
    ];
    let toy_runs: [(&str, &str, ToyRun); 7] = [
        ("A5", "codec toy training", a5),
        ("A6", "rate ladder", a6),
        ("A7", "anchor-3 toy classification", a7),
        ("A8", "anchor degradation/recovery", a8),
        ("A9", "compressed-domain toy classification", a9),
        ("A10", "quality/accuracy trend", a10),
        ("A11", "determinism", a11),
    ];

    let mut failures = 0;
    let mut report = |id: &str, name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(v) => (if v.pass { "PASS" } else { "FAIL" }, v.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        failures += (status == "FAIL") as usize;
        println!("{id:<4} {status}  {name}: {detail} [{secs:.1} s]");
    };

    for (id, name, f) in standalone {
        if wanted(id) {
            let t = Instant::now();
            report(id, name, t, f());
        }
    }
    if toy_runs.iter().any(|(id, _, _)| wanted(id)) {
        let t = Instant::now();
        match Toy::new() {
            Ok(mut toy) => {
                println!(
                    "     toy set: {TOY_CLASSES} classes × {TOY_PER_CLASS} images at {TOY_SIZE}² (seed {}), built in {:.1} s",
                    toy.cfg.seed,
                    t.elapsed().as_secs_f64()
                );
                for (id, name, f) in toy_runs {
                    if wanted(id) {
                        let t = Instant::now();
                        let out = f(&mut toy);
                        report(id, name, t, out);
                    }
                }
            }
            Err(e) => {
                for (id, name, _) in toy_runs {
                    if wanted(id) {
                        report(id, name, Instant::now(), Err(format!("toy set: {e}")));
                    }
                }
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all selected acceptance criteria passed");
}
