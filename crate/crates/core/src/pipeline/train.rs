use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::{Dataset, Split};
use super::runtime::{derive_seed, f32_stats, prepare_items, stream, LoadedModel, PreparedItem};
use super::{PipelineError, RunConfig};
use crate::diffusion::{gaussian, Checkpoint, FeatureStats, LossReport};
use crate::motion::Skeleton;
use crate::tensor::optim::Adam;
use crate::tensor::Tape;
use crate::tensor::Tensor;
use crate::text::{caption_lexicon, Vocabulary};

pub const LOSS_LOG: &str = "loss.csv";
pub const EVAL_LOG: &str = "eval_loss.csv";
const HEADER: &str = "step,motion,pos,vel,foot,total\n";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LoadedModel,
    /// Held-out-set loss before the first update.
    pub initial_eval: LossReport,
    pub final_eval: LossReport,
    /// Mean loss of the last batch.
    pub last_batch: LossReport,
    pub checkpoint: PathBuf,
}

/// One draw of the noising process for an item.
struct Draw {
    item: usize,
    caption: usize,
    step: usize,
    eps: Tensor,
    drop: bool,
}

fn draw(rng: &mut ChaCha8Rng, items: &[PreparedItem], m: &LoadedModel, dropout: f64) -> Draw {
    let item = rng.random_range(0..items.len());
    let caption = rng.random_range(0..items[item].conditions.len());
    let step = rng.random_range(1..=m.schedule.steps());
    let drop = rng.random::<f64>() < dropout;
    let (n, d) = (items[item].target.features.rows(), items[item].target.features.cols());
    let eps = gaussian(rng, n, d);
    Draw {
        item,
        caption,
        step,
        eps,
        drop,
    }
}

fn item_loss(
    t: &mut Tape,
    m: &LoadedModel,
    items: &[PreparedItem],
    feet: [usize; 2],
    d: &Draw,
) -> Result<crate::diffusion::LossTerms, PipelineError> {
    let it = &items[d.item];
    Ok(m.model.item_loss(
        t,
        &it.conditions[d.caption],
        &it.target,
        &m.schedule,
        d.step,
        &d.eps,
        d.drop,
        &m.stats,
        feet,
        m.config.train.weights,
    )?)
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len().max(1) as f64;
    let mut r = LossReport::default();
    for x in reports {
        r.motion += x.motion / n;
        r.pos += x.pos / n;
        r.vel += x.vel / n;
        r.foot += x.foot / n;
        r.total += x.total / n;
    }
    r
}

fn csv_row(step: u64, r: &LossReport) -> String {
    format!("{step},{},{},{},{},{}\n", r.motion, r.pos, r.vel, r.foot, r.total)
}

/// Loss on a fixed set of draws, without gradients.
fn eval_loss(m: &LoadedModel, items: &[PreparedItem], set: &[Draw], feet: [usize; 2]) -> Result<LossReport, PipelineError> {
    let reports = set
        .par_iter()
        .map(|d| {
            let mut t = Tape::inference(&m.store);
            let terms = item_loss(&mut t, m, items, feet, d)?;
            Ok(LossReport::read(&t, &terms))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(mean_report(&reports))
}

/// Vocabulary over the caption templates plus every word in the corpus.
pub(crate) fn corpus_vocabulary(data: &Dataset) -> Vocabulary {
    let lex = caption_lexicon();
    let words = lex.iter().map(String::as_str).chain(
        data.records
            .iter()
            .flat_map(|r| r.meta.captions.iter().map(String::as_str)),
    );
    Vocabulary::build(words)
}

/// Keeps the header and rows up to `step`, creating the file if needed.
fn truncate_log(path: &Path, step: u64) -> Result<(), PipelineError> {
    let old = fs::read_to_string(path).unwrap_or_default();
    let mut s = String::from(HEADER);
    for line in old.lines().skip(1) {
        let Some(Ok(k)) = line.split(',').next().map(str::parse::<u64>) else {
            continue;
        };
        if k <= step {
            let _ = writeln!(s, "{line}");
        }
    }
    fs::write(path, s).map_err(|e| PipelineError::io(path, e))
}

fn append(path: &Path, line: &str) -> Result<(), PipelineError> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| PipelineError::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

fn read_eval(path: &Path, step: u64) -> Option<LossReport> {
    let text = fs::read_to_string(path).ok()?;
    text.lines().skip(1).find_map(|line| {
        let v: Vec<&str> = line.split(',').collect();
        if v.len() != 6 || v[0].parse::<u64>().ok()? != step {
            return None;
        }
        let f = |i: usize| v[i].parse::<f64>().ok();
        Some(LossReport {
            motion: f(1)?,
            pos: f(2)?,
            vel: f(3)?,
            foot: f(4)?,
            total: f(5)?,
        })
    })
}

fn save(ckpt: &Checkpoint, out: &Path, step: u64) -> Result<PathBuf, PipelineError> {
    let bytes = ckpt.to_bytes();
    let path = out.join(format!("ckpt_{step:06}.stmd"));
    fs::write(&path, &bytes).map_err(|e| PipelineError::io(&path, e))?;
    let last = out.join("last.stmd");
    fs::write(&last, &bytes).map_err(|e| PipelineError::io(&last, e))?;
    Ok(path)
}

/// Trains on the train split, writing `loss.csv` (batch means every
/// `log_every` steps), `eval_loss.csv` (fixed held-out draws at step 0 and
/// every checkpoint) and checkpoints into `out`.
///
/// Step `s` draws its batch from a generator seeded by `(seed, s)` alone, so
/// resuming from a checkpoint continues bit for bit.
pub fn train(
    config: &RunConfig,
    data: &Dataset,
    out: &Path,
    resume: Option<&Path>,
    mut progress: impl FnMut(&str),
) -> Result<TrainOutcome, PipelineError> {
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let train_set = data.split(Split::Train);
    if train_set.is_empty() {
        return Err(PipelineError::Manifest("no train records".into()));
    }
    if let Some(r) = train_set.iter().find(|r| r.clip.num_frames() != config.data.frames) {
        return Err(PipelineError::Config(format!(
            "record {} has {} frames, config expects {}",
            r.meta.id,
            r.clip.num_frames(),
            config.data.frames
        )));
    }
    let feet = Skeleton::default_chain().feet()?;
    let tc = &config.train;

    let (mut m, mut adam) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let m = LoadedModel::from_checkpoint(config, &ckpt)?;
            let mut adam = Adam::new(tc.adam(), &m.store);
            for (i, (name, _)) in m.store.iter().enumerate() {
                let get = |k: &str| {
                    ckpt.get(&format!("adam.{k}.{name}"))
                        .cloned()
                        .ok_or_else(|| PipelineError::Config(format!("checkpoint lacks optimizer state for {name}")))
                };
                adam.m[i] = get("m")?;
                adam.v[i] = get("v")?;
            }
            adam.step = ckpt.step;
            (m, adam)
        }
        None => {
            let stats = f32_stats(FeatureStats::fit(train_set.iter().map(|r| &r.clip.features))?);
            let m = LoadedModel::fresh(config, corpus_vocabulary(data), stats)?;
            let adam = Adam::new(tc.adam(), &m.store);
            (m, adam)
        }
    };
    let items = prepare_items(&m, &train_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::EVAL_SET));
    let eval_set: Vec<Draw> = (0..tc.eval_items.max(1)).map(|_| draw(&mut rng, &items, &m, 0.0)).collect();
    let (loss_log, eval_log) = (out.join(LOSS_LOG), out.join(EVAL_LOG));
    truncate_log(&loss_log, m.step)?;
    truncate_log(&eval_log, m.step)?;
    if m.step == 0 {
        let r = eval_loss(&m, &items, &eval_set, feet)?;
        append(&eval_log, &csv_row(0, &r))?;
    }
    let initial_eval = read_eval(&eval_log, 0)
        .ok_or_else(|| PipelineError::Runtime(format!("{} lacks the step-0 row", eval_log.display())))?;

    let mut last_batch = LossReport::default();
    let mut checkpoint = out.join("last.stmd");
    let mut final_eval = read_eval(&eval_log, m.step).unwrap_or(initial_eval);
    for step in m.step + 1..=tc.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::STEP + step));
        let batch: Vec<Draw> = (0..tc.batch).map(|_| draw(&mut rng, &items, &m, tc.cond_dropout)).collect();
        let results = batch
            .par_iter()
            .map(|d| {
                let mut t = Tape::with_params(&m.store);
                let terms = item_loss(&mut t, &m, &items, feet, d)?;
                let report = LossReport::read(&t, &terms);
                let grads = t
                    .backward(terms.total)
                    .map_err(|e| PipelineError::Runtime(format!("step {step}: {e}")))?;
                Ok((report, grads.params().to_vec()))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;

        let scale = 1.0 / batch.len() as f64;
        let mut acc: Vec<Option<Tensor>> = vec![None; m.store.len()];
        for (_, grads) in &results {
            for (a, g) in acc.iter_mut().zip(grads) {
                let Some(g) = g else { continue };
                match a {
                    Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                    None => *a = Some(g.clone()),
                }
            }
        }
        for a in acc.iter_mut().flatten() {
            a.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
        adam.update(&mut m.store, &acc);
        m.step = step;

        let reports: Vec<LossReport> = results.iter().map(|(r, _)| *r).collect();
        last_batch = mean_report(&reports);
        if !last_batch.is_valid() {
            return Err(PipelineError::Runtime(format!("non-finite loss at step {step}")));
        }
        if tc.log_every > 0 && step % tc.log_every == 0 {
            append(&loss_log, &csv_row(step, &last_batch))?;
            progress(&format!("step {step} loss {:.5}", last_batch.total));
        }
        if step == tc.steps || (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) {
            final_eval = eval_loss(&m, &items, &eval_set, feet)?;
            append(&eval_log, &csv_row(step, &final_eval))?;
            checkpoint = save(&m.to_checkpoint(Some(&adam)), out, step)?;
        }
    }
    if m.step == 0 {
        checkpoint = save(&m.to_checkpoint(Some(&adam)), out, 0)?;
    }
    Ok(TrainOutcome {
        model: m,
        initial_eval,
        final_eval,
        last_batch,
        checkpoint,
    })
}
