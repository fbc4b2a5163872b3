//! Contrastive alignment of the point encoder with frozen text and image
//! embeddings, plus zero-shot classification.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngCore};

use crate::autodiff::{he_uniform, Graph, Optimizer, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelInput, PointNeXt};
use crate::scalar::Real;

pub const EMB_MAGIC: &[u8; 8] = b"PFEMB v1";
pub const PROMPT_TEMPLATE: &str = "a point cloud model of {category}";
pub const INIT_TEMPERATURE: f64 = 0.07;

/// Frozen per-building embeddings: prompt rows and rendered-view rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTriplet {
    pub name: String,
    pub dim: usize,
    /// `n_text x dim`, row-major.
    pub text: Vec<f32>,
    /// `n_image x dim`, row-major.
    pub image: Vec<f32>,
}

impl EmbeddingTriplet {
    pub fn n_text(&self) -> usize {
        self.text.len() / self.dim
    }

    pub fn n_image(&self) -> usize {
        self.image.len() / self.dim
    }

    pub fn image_row(&self, i: usize) -> &[f32] {
        &self.image[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.text.is_empty() || self.image.is_empty() {
            return Err(Error::invalid(format!("embedding {}: empty text or image rows", self.name)));
        }
        if self.text.len() % self.dim != 0 || self.image.len() % self.dim != 0 {
            return Err(Error::Shape(format!("embedding {}: rows do not match width {}", self.name, self.dim)));
        }
        if self.text.iter().chain(&self.image).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding {}", self.name)));
        }
        Ok(())
    }

    /// Layout: magic, `u32` name length, name, `u32` width, `u32` text rows,
    /// `u32` image rows, then little-endian `f32` rows (text first).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = EMB_MAGIC.to_vec();
        out.extend_from_slice(&(self.name.len() as u32).to_le_bytes());
        out.extend_from_slice(self.name.as_bytes());
        for v in [self.dim, self.n_text(), self.n_image()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self.text.iter().chain(&self.image) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("embedding file: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = pos.checked_add(n).and_then(|end| bytes.get(pos..end)).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(EMB_MAGIC.len())? != EMB_MAGIC {
            return Err(bad("bad magic"));
        }
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
        let mut header = [0usize; 3];
        for h in &mut header {
            *h = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        }
        let [dim, nt, ni] = header;
        let floats = nt.checked_add(ni).and_then(|r| r.checked_mul(dim)).and_then(|n| n.checked_mul(4));
        let raw = take(floats.ok_or_else(|| bad("size overflow"))?)?;
        let mut vals: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if take(1).is_ok() {
            return Err(bad("trailing bytes"));
        }
        let image = vals.split_off(nt * dim);
        let t = EmbeddingTriplet { name, dim, text: vals, image };
        t.validate()?;
        Ok(t)
    }
}

pub fn write_embedding(t: &EmbeddingTriplet, path: &Path) -> Result<()> {
    std::fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_embedding(path: &Path) -> Result<EmbeddingTriplet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTriplet::from_bytes(&bytes).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Row mean of the prompt embeddings, L2-normalized.
pub fn average_text_embedding(t: &EmbeddingTriplet) -> Result<Vec<f64>> {
    let n = t.n_text();
    if n == 0 {
        return Err(Error::invalid(format!("embedding {} has no prompt rows", t.name)));
    }
    let mut mean = vec![0.0f64; t.dim];
    for row in t.text.chunks(t.dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    normalized(mean).ok_or_else(|| Error::invalid(format!("embedding {}: prompt rows average to zero", t.name)))
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// Per-class text features for zero-shot prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrompts {
    pub template: String,
    pub dim: usize,
    /// `(building-type index, name, feature)`
    pub classes: Vec<(usize, String, Vec<f32>)>,
}

impl ClassPrompts {
    pub fn to_text(&self) -> String {
        let mut s = format!("PFPROMPTS v1 dim={} classes={}\ntemplate={}\n", self.dim, self.classes.len(), self.template);
        for (idx, name, v) in &self.classes {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{idx}\t{name}\t{}", vals.join(" "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::invalid(format!("class prompts line {line}: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("PFPROMPTS") || parts.next() != Some("v1") {
            return Err(bad(1, "bad header"));
        }
        let mut dim = None;
        let mut count = None;
        for kv in parts {
            match kv.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("classes", v)) => count = v.parse::<usize>().ok(),
                _ => return Err(bad(1, "unknown header field")),
            }
        }
        let (dim, count) = (dim.ok_or_else(|| bad(1, "missing dim"))?, count.ok_or_else(|| bad(1, "missing classes"))?);
        let template = lines
            .next()
            .and_then(|l| l.strip_prefix("template="))
            .ok_or_else(|| bad(2, "missing template"))?
            .to_string();
        let mut classes = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let ln = i + 3;
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split('\t');
            let idx = f.next().and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| bad(ln, "bad class index"))?;
            let name = f.next().ok_or_else(|| bad(ln, "missing name"))?.to_string();
            let vals = f.next().ok_or_else(|| bad(ln, "missing vector"))?;
            let v = vals.split(' ').map(|x| x.parse::<f32>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad(ln, "bad number"))?;
            if v.len() != dim {
                return Err(bad(ln, "vector width differs from dim"));
            }
            classes.push((idx, name, v));
        }
        if classes.len() != count {
            return Err(bad(1, "class count differs from header"));
        }
        Ok(ClassPrompts { template, dim, classes })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s)
    }

    /// Normalized feature rows in class order.
    pub fn features(&self) -> Result<Vec<Vec<f64>>> {
        self.classes
            .iter()
            .map(|(_, name, v)| {
                normalized(v.iter().map(|&x| f64::from(x)).collect())
                    .ok_or_else(|| Error::invalid(format!("class prompt {name} is a zero vector")))
            })
            .collect()
    }
}

/// Cosine-similarity nearest class: `(best, top-5)` with ties resolved to the
/// lower index.
pub fn zero_shot_classify(point_feature: &[f64], class_features: &[Vec<f64>]) -> (usize, Vec<usize>) {
    let norm = point_feature.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let sims: Vec<f64> = class_features
        .iter()
        .map(|c| {
            let cn = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            point_feature.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / (norm * cn)
        })
        .collect();
    let mut order: Vec<usize> = (0..sims.len()).collect();
    // stable sort keeps lower indices first among equal similarities
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(5);
    (order[0], order)
}

/// Linear projection into the embedding space with one learnable log
/// temperature per target modality.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionHead {
    pub weight: ParamId,
    pub log_tau_text: ParamId,
    pub log_tau_image: ParamId,
    pub dim: usize,
}

impl ProjectionHead {
    pub fn register<T: Real>(store: &mut ParamStore<T>, seed: u64, in_width: usize, dim: usize) -> Result<Self> {
        let weight = store.add_param("proj.w", he_uniform(seed, "proj.w", in_width, dim), false)?;
        let ln = T::of(INIT_TEMPERATURE.ln());
        let log_tau_text = store.add_param("proj.log_tau_text", Tensor::scalar(ln), true)?;
        let log_tau_image = store.add_param("proj.log_tau_image", Tensor::scalar(ln), true)?;
        Ok(ProjectionHead { weight, log_tau_text, log_tau_image, dim })
    }

    /// Projects `[batch, width]` features; rows are not normalized here.
    pub fn project<T: Real>(&self, g: &mut Graph<T>, params: &[Var], features: Var) -> Result<Var> {
        g.dense(features, params[self.weight.0], None)
    }
}

/// Symmetric InfoNCE between row-aligned point and target features:
/// `(CE(P T^T / tau, diag) + CE(T P^T / tau, diag)) / 2`, rows L2-normalized
/// first. `log_tau` is a scalar var holding `ln tau`.
pub fn contrastive_alignment_loss<T: Real>(g: &mut Graph<T>, points: Var, targets: Var, log_tau: Var) -> Result<Var> {
    if g.shape(points) != g.shape(targets) {
        return Err(Error::Shape(format!("point features {:?} vs targets {:?}", g.shape(points), g.shape(targets))));
    }
    if g.value(points).data().iter().chain(g.value(targets).data()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("contrastive loss input".into()));
    }
    let b = g.value(points).rows();
    let p = g.l2_normalize_rows(points)?;
    let t = g.l2_normalize_rows(targets)?;
    let neg = g.scale(log_tau, -T::one());
    let inv_tau = g.exp(neg);
    let sim = g.matmul_nt(p, t)?;
    let logits = g.scale_by(sim, inv_tau)?;
    let logits_t = g.transpose(logits)?;
    let diag: Vec<usize> = (0..b).collect();
    let a = g.softmax_cross_entropy(logits, &diag, None, None)?;
    let c = g.softmax_cross_entropy(logits_t, &diag, None, None)?;
    g.lincomb(a, T::of(0.5), c, T::of(0.5))
}

/// One pretraining update: encoder -> projection -> text and image
/// contrastive terms (one random view per building) -> optimizer step.
/// Returns the loss before the update.
pub fn pretrain_step<T: Real>(
    model: &mut PointNeXt<T>,
    head: &ProjectionHead,
    opt: &mut Optimizer<T>,
    input: &ModelInput<T>,
    triplets: &[&EmbeddingTriplet],
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let b = input.batch_size();
    if triplets.len() != b {
        return Err(Error::invalid(format!("{} embedding triplets for a batch of {b}", triplets.len())));
    }
    let mut text = Vec::with_capacity(b * head.dim);
    let mut image = Vec::with_capacity(b * head.dim);
    for t in triplets {
        if t.dim != head.dim {
            return Err(Error::Shape(format!("embedding {} has width {}, head projects to {}", t.name, t.dim, head.dim)));
        }
        text.extend(average_text_embedding(t)?.into_iter().map(T::of));
        let view = rng.random_range(0..t.n_image());
        image.extend(t.image_row(view).iter().map(|&v| T::of(f64::from(v))));
    }
    let mut g = Graph::new();
    let params = model.store().bind(&mut g);
    let out = model.forward(&mut g, &params, input, &mut Mode::Train(rng))?;
    let proj = head.project(&mut g, &params, out.global)?;
    let tv = g.constant(Tensor::new(vec![b, head.dim], text)?);
    let iv = g.constant(Tensor::new(vec![b, head.dim], image)?);
    let lt = contrastive_alignment_loss(&mut g, proj, tv, params[head.log_tau_text.0])?;
    let li = contrastive_alignment_loss(&mut g, proj, iv, params[head.log_tau_image.0])?;
    let loss = g.add(lt, li)?;
    let value = g.value(loss).item().to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("pretraining loss {value}")));
    }
    let grads = g.backward(loss)?;
    model.store_mut().store_grads(&params, &grads);
    opt.step(model.store_mut());
    model.update_running_stats(&out.norm_stats);
    Ok(value)
}

/// Normalized embedding of every cloud in `input` (eval mode).
pub fn embed<T: Real>(model: &PointNeXt<T>, head: &ProjectionHead, input: &ModelInput<T>) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let params = model.store().bind(&mut g);
    let out = model.forward(&mut g, &params, input, &mut Mode::Eval)?;
    let proj = head.project(&mut g, &params, out.global)?;
    let proj = g.l2_normalize_rows(proj)?;
    Ok(g.value(proj).data().chunks(head.dim).map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect())
}
