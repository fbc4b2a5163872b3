//! Shared-backbone point network: stem, set-abstraction stages with
//! inverted-residual blocks, a feature-propagation decoder and the
//! classification / segmentation heads.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{he_uniform, BatchStats, BufferId, Graph, LoadReport, ParamId, ParamStore, Tensor, Var};
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::geom::FpsStart;
use crate::model::config::ModelConfig;
use crate::model::geometry::{point_features, CloudGeometry, Grouping};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    mean: BufferId,
    var: BufferId,
}

/// dense -> batch norm -> relu
#[derive(Debug, Clone, Copy)]
struct Unit {
    lin: Linear,
    norm: usize,
}

#[derive(Debug, Clone)]
struct Block {
    group: Unit,
    expand: Unit,
    project: Linear,
}

#[derive(Debug, Clone)]
struct Stage {
    down: Unit,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Classifier {
    hidden: Vec<Unit>,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Decoder {
    /// `fuse[t]` maps level `t + 1` back onto level `t`.
    fuse: Vec<Unit>,
    hidden: Unit,
    out: Linear,
}

/// Batched network input: stacked per-point features plus per-cloud geometry.
#[derive(Debug, Clone)]
pub struct ModelInput<T> {
    pub features: Tensor<T>,
    pub geometry: Vec<CloudGeometry<T>>,
}

impl<T: Real> ModelInput<T> {
    /// Features and geometry for a batch. With `fps_seeds` each cloud draws its
    /// FPS start points from its own seeded stream; without, every FPS starts
    /// at index 0.
    pub fn prepare(clouds: &[PointCloud<T>], cfg: &ModelConfig, fps_seeds: Option<&[u64]>) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(s) = fps_seeds {
            if s.len() != clouds.len() {
                return Err(Error::invalid("one FPS seed per cloud is required"));
            }
        }
        let geometry = clouds
            .par_iter()
            .enumerate()
            .map(|(i, c)| match fps_seeds {
                Some(seeds) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
                    CloudGeometry::build(&c.coords, cfg, |n| FpsStart::random(n, &mut rng))
                }
                None => CloudGeometry::build(&c.coords, cfg, |_| FpsStart::First),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut feats = Vec::with_capacity(clouds.iter().map(|c| c.len()).sum::<usize>() * cfg.input_channels);
        for c in clouds {
            feats.extend(point_features(c));
        }
        let n = feats.len() / cfg.input_channels;
        Ok(ModelInput { features: Tensor::new(vec![n, cfg.input_channels], feats)?, geometry })
    }

    pub fn batch_size(&self) -> usize {
        self.geometry.len()
    }

    /// Row offset of each cloud at level `t`.
    fn offsets(&self, t: usize) -> Vec<usize> {
        let mut acc = 0;
        self.geometry
            .iter()
            .map(|g| {
                let o = acc;
                acc += g.level_len(t);
                o
            })
            .collect()
    }
}

/// Forward-pass mode. Training normalizes with batch statistics and samples
/// dropout masks from the given stream.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub struct ForwardOutput<T> {
    /// `[batch, classes]`
    pub cls_logits: Option<Var>,
    /// `[total points, parts]`, clouds stacked in batch order.
    pub seg_logits: Option<Var>,
    /// Max-pooled encoder feature, `[batch, width]`.
    pub global: Var,
    /// Encoder features per level (0 = stem), stacked over the batch.
    pub levels: Vec<Var>,
    /// Batch statistics of every training-mode norm layer, by norm index.
    pub norm_stats: Vec<(usize, BatchStats<T>)>,
}

#[derive(Debug, Clone)]
pub struct PointNeXt<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    norms: Vec<Norm>,
    stem: Unit,
    stages: Vec<Stage>,
    classifier: Option<Classifier>,
    decoder: Option<Decoder>,
}

struct Builder<'a, T> {
    seed: u64,
    store: &'a mut ParamStore<T>,
    norms: Vec<Norm>,
}

impl<T: Real> Builder<'_, T> {
    fn linear(&mut self, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Linear> {
        let w = self.store.add_param(&format!("{name}.w"), he_uniform(self.seed, &format!("{name}.w"), cin, cout), false)?;
        let b = if bias { Some(self.store.add_param(&format!("{name}.b"), Tensor::zeros(&[cout]), true)?) } else { None };
        Ok(Linear { w, b })
    }

    fn unit(&mut self, name: &str, cin: usize, cout: usize) -> Result<Unit> {
        let lin = self.linear(name, cin, cout, false)?;
        let norm = Norm {
            gamma: self.store.add_param(&format!("{name}.bn.gamma"), Tensor::full(&[cout], T::one()), true)?,
            beta: self.store.add_param(&format!("{name}.bn.beta"), Tensor::zeros(&[cout]), true)?,
            mean: self.store.add_buffer(&format!("{name}.bn.mean"), Tensor::zeros(&[cout]))?,
            var: self.store.add_buffer(&format!("{name}.bn.var"), Tensor::full(&[cout], T::one()))?,
        };
        self.norms.push(norm);
        Ok(Unit { lin, norm: self.norms.len() - 1 })
    }
}

impl<T: Real> PointNeXt<T> {
    /// Builds the model with parameters initialized from `seed`; each tensor's
    /// initial value depends only on `seed` and its name.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder { seed, store: &mut store, norms: Vec::new() };
        let stem = b.unit("stem", config.input_channels, config.stem_width)?;
        let mut stages = Vec::new();
        for (t, s) in config.stages.iter().enumerate() {
            let cin = config.level_width(t);
            let down = b.unit(&format!("enc{}.down", t + 1), 3 + cin, s.width)?;
            let mut blocks = Vec::new();
            for k in 0..s.blocks {
                let name = format!("enc{}.block{k}", t + 1);
                let hidden = config.expansion * s.width;
                blocks.push(Block {
                    group: b.unit(&format!("{name}.group"), 3 + s.width, s.width)?,
                    expand: b.unit(&format!("{name}.expand"), s.width, hidden)?,
                    project: b.linear(&format!("{name}.project"), hidden, s.width, true)?,
                });
            }
            stages.push(Stage { down, blocks });
        }
        let top = config.level_width(config.stages.len());
        let classifier = if config.head.has_classifier() {
            let mut hidden = Vec::new();
            let mut cin = top;
            for (i, &w) in config.fc_widths.iter().enumerate() {
                hidden.push(b.unit(&format!("cls.fc{}", i + 1), cin, w)?);
                cin = w;
            }
            Some(Classifier { hidden, out: b.linear("cls.out", cin, config.num_classes, true)? })
        } else {
            None
        };
        let decoder = if config.head.has_decoder() {
            let mut fuse = Vec::new();
            for t in 0..config.stages.len() {
                let cin = config.level_width(t + 1) + config.level_width(t);
                fuse.push(b.unit(&format!("dec{}", t + 1), cin, config.level_width(t))?);
            }
            let c0 = config.stem_width;
            Some(Decoder { fuse, hidden: b.unit("seg.hidden", c0, c0)?, out: b.linear("seg.out", c0, config.num_parts, true)? })
        } else {
            None
        };
        let norms = b.norms;
        Ok(PointNeXt { config, store, norms, stem, stages, classifier, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    /// Loads a checkpoint; non-strict loads copy the matching name+shape
    /// intersection.
    pub fn load_checkpoint(&mut self, path: &Path, strict: bool) -> Result<LoadReport> {
        self.store.load(path, strict)
    }

    /// Folds training batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats<T>)]) {
        let m = T::of(self.config.bn_momentum);
        for (i, s) in stats {
            let norm = self.norms[*i];
            for (r, &v) in self.store.buffer_mut(norm.mean).data_mut().iter_mut().zip(&s.mean) {
                *r = (T::one() - m) * *r + m * v;
            }
            for (r, &v) in self.store.buffer_mut(norm.var).data_mut().iter_mut().zip(&s.var) {
                *r = (T::one() - m) * *r + m * v;
            }
        }
    }

    fn dense(&self, g: &mut Graph<T>, p: &[Var], x: Var, l: Linear) -> Result<Var> {
        g.dense(x, p[l.w.0], l.b.map(|b| p[b.0]))
    }

    fn unit(&self, g: &mut Graph<T>, p: &[Var], x: Var, u: Unit, mode: &Mode, stats: &mut Vec<(usize, BatchStats<T>)>) -> Result<Var> {
        let h = self.dense(g, p, x, u.lin)?;
        let n = self.norms[u.norm];
        let eps = T::of(self.config.bn_eps);
        let y = if mode.is_train() {
            let (y, s) = g.batch_norm_train(h, p[n.gamma.0], p[n.beta.0], eps)?;
            stats.push((u.norm, s));
            y
        } else {
            let (mean, var) = (self.store.buffer(n.mean).data(), self.store.buffer(n.var).data());
            g.batch_norm_eval(h, p[n.gamma.0], p[n.beta.0], mean, var, eps)?
        };
        Ok(g.relu(y))
    }

    /// Groups `features` (stacked level rows) around centers and reduces
    /// each group to one row.
    #[allow(clippy::too_many_arguments)]
    fn grouped(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        features: Var,
        groups: &[&Grouping<T>],
        src_offsets: &[usize],
        u: Unit,
        mode: &Mode,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let k = groups[0].k;
        let mut idx = Vec::new();
        let mut rel = Vec::new();
        for (gr, &off) in groups.iter().zip(src_offsets) {
            idx.extend(gr.neighbors.iter().map(|&j| j + off));
            rel.extend_from_slice(&gr.offsets);
        }
        let rows = idx.len();
        let rel = g.constant(Tensor::new(vec![rows, 3], rel)?);
        let nb = g.gather_rows(features, idx)?;
        let x = g.concat(&[rel, nb])?;
        let h = self.unit(g, p, x, u, mode, stats)?;
        g.max_reduce(h, k)
    }

    /// Runs the network on a prepared batch. `params` must come from
    /// `self.store().bind(g)`.
    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], input: &ModelInput<T>, mode: &mut Mode) -> Result<ForwardOutput<T>> {
        let cfg = &self.config;
        if input.features.cols() != cfg.input_channels {
            return Err(Error::Shape(format!(
                "input has {} feature channels, model expects {}",
                input.features.cols(),
                cfg.input_channels
            )));
        }
        let mut stats = Vec::new();
        let x = g.constant(input.features.clone());
        let mut levels = vec![self.unit(g, params, x, self.stem, mode, &mut stats)?];
        for (t, stage) in self.stages.iter().enumerate() {
            let prev = *levels.last().unwrap();
            let downs: Vec<&Grouping<T>> = input.geometry.iter().map(|c| &c.levels[t].down).collect();
            let mut f = self.grouped(g, params, prev, &downs, &input.offsets(t), stage.down, mode, &mut stats)?;
            let locals: Vec<&Grouping<T>> = input.geometry.iter().map(|c| &c.levels[t].local).collect();
            let here = input.offsets(t + 1);
            for blk in &stage.blocks {
                let h = self.grouped(g, params, f, &locals, &here, blk.group, mode, &mut stats)?;
                let h = self.unit(g, params, h, blk.expand, mode, &mut stats)?;
                let h = self.dense(g, params, h, blk.project)?;
                f = g.add(h, f)?;
            }
            levels.push(f);
        }

        let top = cfg.stages.len();
        let counts: Vec<usize> = input.geometry.iter().map(|c| c.level_len(top)).collect();
        let kmax = *counts.iter().max().unwrap();
        let mut pool_idx = Vec::with_capacity(counts.len() * kmax);
        for (&off, &n) in input.offsets(top).iter().zip(&counts) {
            // repeat the first row to pad; duplicates leave the max unchanged
            pool_idx.extend((0..kmax).map(|i| off + if i < n { i } else { 0 }));
        }
        let pooled = g.gather_rows(levels[top], pool_idx)?;
        let global = g.max_reduce(pooled, kmax)?;

        let cls_logits = match &self.classifier {
            Some(c) => {
                let mut h = global;
                for &u in &c.hidden {
                    h = self.unit(g, params, h, u, mode, &mut stats)?;
                    if let Mode::Train(rng) = mode {
                        h = g.dropout(h, cfg.dropout, *rng)?;
                    }
                }
                Some(self.dense(g, params, h, c.out)?)
            }
            None => None,
        };

        let seg_logits = match &self.decoder {
            Some(d) => {
                let mut h = levels[top];
                for t in (0..top).rev() {
                    let k = cfg.interp_neighbors;
                    let mut idx = Vec::new();
                    let mut w = Vec::new();
                    for (c, &off) in input.geometry.iter().zip(&input.offsets(t + 1)) {
                        idx.extend(c.levels[t].up_idx.iter().map(|&j| j + off));
                        w.extend_from_slice(&c.levels[t].up_w);
                    }
                    let up = g.weighted_gather(h, idx, w, k)?;
                    let cat = g.concat(&[up, levels[t]])?;
                    h = self.unit(g, params, cat, d.fuse[t], mode, &mut stats)?;
                }
                let h = self.unit(g, params, h, d.hidden, mode, &mut stats)?;
                Some(self.dense(g, params, h, d.out)?)
            }
            None => None,
        };
        Ok(ForwardOutput { cls_logits, seg_logits, global, levels, norm_stats: stats })
    }
}
