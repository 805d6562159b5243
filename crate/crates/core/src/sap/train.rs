use std::io::Write;

use posterforge_tensor::{Adam, Graph, ParamId, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::heads::{loss_terms, targets_for, Head, Targets, HEAD_COUNT};
use super::model::{canonical_order, Mode, SapConfig, SapModel};
use crate::design::{GraphicElement, StyleAttributes};
use crate::error::{Error, Result};
use crate::raster::{resize_bilinear, Image};

/// One training example: image at input size, token elements in canonical
/// order, their ground-truth styles and derived head targets.
#[derive(Debug, Clone)]
pub struct SapSample {
    pub image: Image,
    pub elements: Vec<GraphicElement>,
    pub styles: Vec<Option<StyleAttributes>>,
    pub targets: Vec<Targets>,
}

impl SapSample {
    /// Takes styles from the elements themselves.
    pub fn new(img: &Image, elements: &[GraphicElement], input_size: usize) -> Result<Self> {
        let image = if img.width() == input_size && img.height() == input_size {
            img.to_rgb()
        } else {
            resize_bilinear(&img.to_rgb(), input_size, input_size)?
        };
        let order = canonical_order(elements);
        if order.is_empty() {
            return Err(Error::Empty("token elements"));
        }
        let elements: Vec<GraphicElement> = order.iter().map(|&i| elements[i].clone()).collect();
        let styles: Vec<Option<StyleAttributes>> = elements.iter().map(|e| e.style).collect();
        let targets = elements.iter().map(|e| targets_for(e.category, e.style.as_ref())).collect();
        Ok(Self { image, elements, styles, targets })
    }

    pub fn pair_count(&self) -> usize {
        self.targets.iter().map(|t| t.iter().flatten().count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    /// Weighted mean focal loss per head over the batch; `None` when the
    /// head had no applicable pair.
    pub head_loss: [Option<f64>; HEAD_COUNT],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<StepLog>,
    pub steps_per_epoch: usize,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string(), "loss".to_string()];
        header.extend(Head::ALL.iter().map(|h| h.name().to_string()));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), format!("{:.6}", r.loss)];
            rec.extend(r.head_loss.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Mean loss of each complete or partial epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let k = self.steps_per_epoch.max(1);
        self.rows.chunks(k).map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64).collect()
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

fn graph_loss(
    model: &SapModel,
    g: &mut Graph,
    batch: &[&SapSample],
    mode: Mode,
) -> Result<(Var, [f64; HEAD_COUNT], [usize; HEAD_COUNT])> {
    let cfg = model.config();
    let total: usize = batch.iter().map(|s| s.pair_count()).sum();
    if total == 0 {
        return Err(Error::Empty("applicable (element, head) pairs"));
    }
    let mut acc: Option<Var> = None;
    let mut head_sum = [0.0; HEAD_COUNT];
    let mut head_n = [0usize; HEAD_COUNT];
    for s in batch {
        let img = model.image_tensor(&s.image)?;
        let (fv, local) = model.encode_graph(g, &img)?;
        let (tok, causal) = match mode {
            Mode::Nar => (model.tokens_graph(g, local, &s.elements, None)?, false),
            Mode::Ar => {
                let prev = SapModel::shifted_attrs(&s.elements, &s.styles);
                (model.tokens_graph(g, local, &s.elements, Some(&prev))?, true)
            }
        };
        let (heads, _) = model.decode_graph(g, fv, tok, causal)?;
        let terms = loss_terms(g, &heads, &s.targets, &cfg.lambda, cfg.gamma)?;
        for (j, v) in terms.per_head.into_iter().enumerate() {
            let Some(v) = v else { continue };
            head_sum[j] += g.value(v).data()[0];
            head_n[j] += terms.head_counts[j];
            acc = Some(match acc {
                None => v,
                Some(a) => g.add(a, v)?,
            });
        }
    }
    let loss = g.scale(acc.expect("total > 0"), 1.0 / total as f64);
    Ok((loss, head_sum, head_n))
}

/// Mini-batch Adam on the multi-task focal objective. Samples without any
/// supervised pair are skipped.
pub fn train(samples: &[SapSample], cfg: &SapConfig, mode: Mode) -> Result<(SapModel, TrainLog)> {
    cfg.validate()?;
    let usable: Vec<&SapSample> = samples.iter().filter(|s| s.pair_count() > 0).collect();
    if usable.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut model = SapModel::new(cfg.clone())?;
    log::info!("sap: {} parameters, {} samples, mode {:?}", model.param_count(), usable.len(), mode);
    let mut adam = Adam::new(model.store(), cfg.lr);
    adam.clip_norm = cfg.clip_norm;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let steps_per_epoch = usable.len().div_ceil(cfg.batch);
    let mut log = TrainLog { rows: Vec::with_capacity(cfg.steps), steps_per_epoch };
    let mut perm: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for step in 0..cfg.steps {
        if cursor >= perm.len() {
            perm = (0..usable.len()).collect();
            perm.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch).min(perm.len());
        let batch: Vec<&SapSample> = perm[cursor..end].iter().map(|&i| usable[i]).collect();
        cursor = end;
        if cfg.cosine_decay {
            adam.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos());
        }
        let mut g = Graph::new();
        let (loss, head_sum, head_n) = graph_loss(&model, &mut g, &batch, mode)?;
        g.backward(loss)?;
        let grads: Vec<(ParamId, Vec<f64>)> = g.param_grads().into_iter().map(|(id, gr)| (id, gr.to_vec())).collect();
        let value = g.value(loss).data()[0];
        adam.step(model.store_mut(), &grads);
        log.rows.push(StepLog {
            step,
            loss: value,
            head_loss: std::array::from_fn(|j| (head_n[j] > 0).then(|| head_sum[j] / head_n[j] as f64)),
        });
        if step % 50 == 0 {
            log::debug!("sap step {step}: loss {value:.4}");
        }
    }
    Ok((model, log))
}

/// Loss of `model` on `samples` without updating it.
pub fn evaluate_loss(model: &SapModel, samples: &[SapSample], mode: Mode) -> Result<f64> {
    let refs: Vec<&SapSample> = samples.iter().filter(|s| s.pair_count() > 0).collect();
    let mut g = Graph::inference();
    let (loss, _, _) = graph_loss(model, &mut g, &refs, mode)?;
    Ok(g.value(loss).data()[0])
}
