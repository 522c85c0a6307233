use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::dataset::{Dataset, Record, Split};
use super::runtime::{derive_seed, f32_stats, sample_seed, stream, LoadedModel};
use super::train::corpus_vocabulary;
use super::{PipelineError, RunConfig};
use crate::diffusion::FeatureStats;
use crate::metrics::{
    contact, dataset_apd_std, fid, non_collision, r_score, train_matching_model, ApdMode, MatchingModel, MetricsReport,
    EMBED_DIM,
};
use crate::motion::MotionClip;
use crate::scene::Scene;
use crate::tensor::nn::ParamStore;
use crate::tensor::Tensor;
use crate::text::{TextPrompt, Vocabulary};

/// Samples `k` clips for one scene and caption into `out/sample_NNN.json`.
/// Sample `i` depends only on `(seed, i)`.
pub fn sample_cmd(
    m: &LoadedModel,
    scene: &Scene,
    caption: &str,
    k: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    if caption.trim().is_empty() {
        return Err(PipelineError::Config("caption is empty".into()));
    }
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let cond = m.condition(scene, caption)?;
    let z = m.condition_value(&cond)?;
    (0..k)
        .into_par_iter()
        .map(|i| {
            let clip = m.sample_clip(&z, sample_seed(seed, i as u64))?;
            let path = out.join(format!("sample_{i:03}.json"));
            clip.write(&path)?;
            Ok(path)
        })
        .collect()
}

/// The text-motion matching model used for FID features and R-score,
/// trained on the train split only.
#[derive(Clone, Debug)]
pub struct Judge {
    pub model: MatchingModel,
    pub store: ParamStore,
    pub stats: FeatureStats,
    pub vocab: Vocabulary,
}

impl Judge {
    pub fn train(config: &RunConfig, data: &Dataset) -> Result<Self, PipelineError> {
        let train = data.split(Split::Train);
        if train.is_empty() {
            return Err(PipelineError::Manifest("no train records for the matching model".into()));
        }
        let stats = f32_stats(FeatureStats::fit(train.iter().map(|r| &r.clip.features))?);
        let vocab = corpus_vocabulary(data);
        let mut pairs = Vec::new();
        for r in &train {
            let x = stats.normalize(&r.clip.features);
            for c in &r.meta.captions {
                pairs.push((x.clone(), TextPrompt::new(&vocab, c)?));
            }
        }
        let (model, store) = train_matching_model(&pairs, vocab.len(), &config.eval.matching)?;
        Ok(Self {
            model,
            store,
            stats,
            vocab,
        })
    }

    pub fn motion(&self, features: &Tensor) -> Vec<f64> {
        self.model.embed_motion(&self.store, &self.stats.normalize(features))
    }

    pub fn text(&self, caption: &str) -> Result<Vec<f64>, PipelineError> {
        Ok(self.model.embed_text(&self.store, &TextPrompt::new(&self.vocab, caption)?))
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub table: String,
}

impl Evaluation {
    pub fn write(&self, out: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
        let json = out.join("report.json");
        fs::write(&json, self.report.to_json() + "\n").map_err(|e| PipelineError::io(&json, e))?;
        let txt = out.join("report.txt");
        fs::write(&txt, &self.table).map_err(|e| PipelineError::io(&txt, e))
    }
}

/// Human-readable two-column table of a report.
pub fn render_table(r: &MetricsReport) -> String {
    let mut s = String::new();
    let rows: [(&str, f64); 10] = [
        ("non_collision", r.non_collision),
        ("contact", r.contact),
        ("apd_t", r.apd_t),
        ("std_t", r.std_t),
        ("apd_p", r.apd_p),
        ("std_p", r.std_p),
        ("apd_m", r.apd_m),
        ("std_m", r.std_m),
        ("fid", r.fid),
        ("r_score", r.r_score),
    ];
    let _ = writeln!(s, "{:<14} {:>12}", "metric", "value");
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<14} {v:>12.6}");
    }
    let _ = writeln!(s, "conditions {} x {} samples, config {}", r.n_conditions, r.k_per_condition, r.config_hash);
    let _ = writeln!(s, "p_score: not computable (needs a pretrained scene-motion classifier)");
    s
}

/// Samples `k` motions per test condition (first caption) and scores them.
pub fn evaluate(m: &LoadedModel, data: &Dataset, judge: &Judge, k: usize, seed: u64) -> Result<Evaluation, PipelineError> {
    if k < 2 {
        return Err(PipelineError::Config(format!("k = {k}; diversity needs at least 2 samples per condition")));
    }
    let test = data.split(Split::Test);
    if test.is_empty() {
        return Err(PipelineError::Manifest("no test records".into()));
    }
    let z: Vec<Tensor> = test
        .par_iter()
        .map(|r| m.condition_value(&m.condition(&r.scene, &r.meta.captions[0])?))
        .collect::<Result<_, PipelineError>>()?;
    let jobs: Vec<(usize, usize)> = (0..test.len()).flat_map(|j| (0..k).map(move |i| (j, i))).collect();
    let clips: Vec<MotionClip> = jobs
        .par_iter()
        .map(|&(j, i)| m.sample_clip(&z[j], derive_seed(derive_seed(seed, stream::SAMPLE + j as u64), i as u64)))
        .collect::<Result<_, PipelineError>>()?;
    let generated: Vec<Vec<MotionClip>> = clips.chunks(k).map(<[MotionClip]>::to_vec).collect();
    evaluate_clips(&m.config, data, judge, &generated, seed)
}

/// Scores clips already generated for each test record, in test-split
/// order.
pub fn evaluate_clips(
    config: &RunConfig,
    data: &Dataset,
    judge: &Judge,
    generated: &[Vec<MotionClip>],
    seed: u64,
) -> Result<Evaluation, PipelineError> {
    let test: Vec<&Record> = data.split(Split::Test);
    if generated.len() != test.len() {
        return Err(PipelineError::Runtime(format!(
            "{} generated groups for {} test records",
            generated.len(),
            test.len()
        )));
    }
    let k = generated.first().map_or(0, Vec::len);
    if k < 2 || generated.iter().any(|g| g.len() != k) {
        return Err(PipelineError::Config("need the same k >= 2 samples for every condition".into()));
    }
    let ec = &config.eval;

    struct PerCondition {
        collision: Vec<f64>,
        contact: f64,
        units: [Vec<Vec<Vec<f64>>>; 3],
    }
    let per: Vec<PerCondition> = test
        .par_iter()
        .zip(generated)
        .map(|(r, clips)| {
            let mut collision = Vec::with_capacity(k);
            let mut joints = Vec::with_capacity(k);
            let mut units: [Vec<Vec<Vec<f64>>>; 3] = Default::default();
            for c in clips {
                let dec = c.decode()?;
                collision.push(non_collision(&dec.joints, &r.scene, ec.tau_col)?);
                for (slot, mode) in units.iter_mut().zip([ApdMode::Translation, ApdMode::Pose, ApdMode::Markers]) {
                    slot.push(mode.units(&c.features, &dec));
                }
                joints.push(dec.joints);
            }
            Ok(PerCondition {
                collision,
                contact: contact(&joints, &r.scene, ec.tau_con)? * k as f64,
                units,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let n = (test.len() * k) as f64;
    let non_coll = per.iter().flat_map(|p| &p.collision).sum::<f64>() / n;
    let contact_score = per.iter().map(|p| p.contact).sum::<f64>() / n;
    let mut apd = [(0.0, 0.0); 3];
    for (mode, slot) in apd.iter_mut().enumerate() {
        let groups: Vec<Vec<Vec<Vec<f64>>>> = per.iter().map(|p| p.units[mode].clone()).collect();
        *slot = dataset_apd_std(&groups)?;
    }

    let flat: Vec<(&Record, &MotionClip)> = test
        .iter()
        .zip(generated)
        .flat_map(|(r, g)| g.iter().map(move |c| (*r, c)))
        .collect();
    let gen_emb: Vec<Vec<f64>> = flat.par_iter().map(|(_, c)| judge.motion(&c.features)).collect();
    let mut reference: Vec<&Record> = test.clone();
    if reference.len() <= EMBED_DIM {
        // Too few test motions for a full-rank covariance: use the corpus.
        reference = data.records.iter().collect();
    }
    let ref_emb: Vec<Vec<f64>> = reference.par_iter().map(|r| judge.motion(&r.clip.features)).collect();
    let fid_value = fid(&gen_emb, &ref_emb)?;

    let captions: Vec<String> = flat.iter().map(|(r, _)| r.meta.captions[0].clone()).collect();
    let text_emb: Vec<Vec<f64>> = captions
        .par_iter()
        .map(|c| judge.text(c))
        .collect::<Result<_, PipelineError>>()?;
    let r = r_score(&gen_emb, &text_emb, &captions, ec.r_pool, derive_seed(seed, stream::R_SCORE))?;

    let report = MetricsReport {
        non_collision: non_coll,
        contact: contact_score,
        apd_t: apd[0].0,
        std_t: apd[0].1,
        apd_p: apd[1].0,
        std_p: apd[1].1,
        apd_m: apd[2].0,
        std_m: apd[2].1,
        fid: fid_value,
        r_score: r,
        n_conditions: test.len(),
        k_per_condition: k,
        config_hash: config.config_hash(),
    };
    let table = render_table(&report);
    Ok(Evaluation { report, table })
}
