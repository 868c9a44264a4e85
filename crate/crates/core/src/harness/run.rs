//! Experiment drivers: data preparation, GP training sets, the oracle
//! study, detector training, refinement and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{ConfigError, DataError, Error, FeatureError};
use crate::eval::{evaluate_categories, localization_distribution, Detection, EvalResult, GroundTruth};
use crate::fgs::{local_fgs, FgsConfig, ScoredBoxSet, SearchTarget};
use crate::geometry::{greedy_nms, iou, BoundingBox};
use crate::gp::{fit_gp_hyperparameters, GpFitConfig, ObservationSet};
use crate::optim::LbfgsConfig;
use crate::proposals::{load_proposals, local_random_search, local_regions, seeded_rng, ProposalMap, RandomSearchConfig};
use crate::scoring::{FeatureFile, FeatureProvider, LinearScorer, OracleScorer, ScoreRequest, Scorer, SyntheticWorld};
use crate::structsvm::{train_with_mining, TrainingExample, WeightVector};

use super::config::{ExperimentConfig, Method};
use super::formats::{ap_rows, read_detections, read_model, sort_detections, write_csv, write_detections, write_json, GpParams, ModelEntry, ModelFile, RunStamp};
use super::manifest::{ImageRecord, Manifest};
use super::synth::{generate_benchmark, generate_proposals};

/// Manifest plus per-image proposals.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub proposals: ProposalMap,
}

impl Dataset {
    pub fn train_images(&self, cfg: &ExperimentConfig) -> Vec<&ImageRecord> {
        self.manifest.split(cfg.data.train_split())
    }

    pub fn test_images(&self, cfg: &ExperimentConfig) -> Vec<&ImageRecord> {
        self.manifest.split(cfg.data.test_split())
    }

    fn proposals_for(&self, image: &str) -> &[BoundingBox] {
        self.proposals.get(image).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn provenance(cfg: &ExperimentConfig) -> RunStamp {
    RunStamp { config_hash: cfg.hash(), seed: cfg.seed }
}

/// Loads the manifest and proposals named in the config, synthesizing
/// whatever is absent.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, Error> {
    cfg.check_paths()?;
    let (manifest, generated) = match &cfg.data.manifest {
        Some(p) => (Manifest::read(p)?, None),
        None => {
            let (m, p) = generate_benchmark(&cfg.synth, &cfg.perturb_config(), cfg.seed);
            (m, Some(p))
        }
    };
    let proposals = match (&cfg.data.proposals, generated) {
        (Some(p), _) => load_proposals(p)?,
        (None, Some(g)) => g,
        (None, None) => generate_proposals(&manifest, &cfg.perturb_config()),
    };
    Ok(Dataset { manifest, proposals })
}

/// Worker pool sized by `BOXOPT_THREADS` (default: all cores).
pub fn thread_pool() -> Result<rayon::ThreadPool, ConfigError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("BOXOPT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| ConfigError::new("BOXOPT_THREADS", format!("expected a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| ConfigError::new("BOXOPT_THREADS", e.to_string()))
}

/// Keeps boxes scoring above `score_threshold`, then greedy NMS.
pub fn postprocess(set: &ScoredBoxSet, score_threshold: f64, nms_threshold: f64) -> Vec<(BoundingBox, f64)> {
    let kept: Vec<(BoundingBox, f64)> = set.pairs().into_iter().filter(|(_, s)| *s > score_threshold).collect();
    greedy_nms(&kept, nms_threshold)
}

fn score_initial<S: Scorer + ?Sized>(
    scorer: &S,
    image: &str,
    category: &str,
    boxes: &[BoundingBox],
) -> Result<ScoredBoxSet, FeatureError> {
    if boxes.is_empty() {
        return Ok(ScoredBoxSet::new());
    }
    let scores = scorer.score_batch(&ScoreRequest { image, category, boxes })?;
    Ok(ScoredBoxSet::from_initial(boxes.iter().copied().zip(scores)))
}

/// GP training observation sets, per category: for every annotated object,
/// the ground truth, the image's proposals and `random_extra` random boxes
/// near the object, kept where IoU with the object exceeds `rho` and
/// scored by `scorer`. Sets with fewer than 3 members are dropped.
pub fn build_gp_training_sets<S: Scorer + ?Sized>(
    images: &[&ImageRecord],
    proposals: &ProposalMap,
    scorer: &S,
    rho: f64,
    random_extra: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<ObservationSet>>, FeatureError> {
    let mut out: BTreeMap<String, Vec<ObservationSet>> = BTreeMap::new();
    let mut dropped = 0;
    for img in images {
        let props = proposals.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
        for (k, obj) in img.objects.iter().enumerate().filter(|(_, o)| !o.difficult) {
            let mut rng = seeded_rng(seed, &format!("gp-set/{}/{k}", img.id));
            let mut boxes = vec![obj.bbox];
            boxes.extend(props.iter().copied().filter(|b| iou(b, &obj.bbox) > rho));
            let frame = img.frame();
            for _ in 0..random_extra {
                if let Some(b) = random_near(&obj.bbox, rho, &frame, &mut rng) {
                    if iou(&b, &obj.bbox) > rho {
                        boxes.push(b);
                    }
                }
            }
            let scores = scorer.score_batch(&ScoreRequest { image: &img.id, category: &obj.cat, boxes: &boxes })?;
            let set: ObservationSet = boxes.into_iter().zip(scores).filter(|(_, s)| s.is_finite()).collect();
            if set.len() < 3 {
                dropped += 1;
                continue;
            }
            out.entry(obj.cat.clone()).or_default().push(set);
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} GP training sets with fewer than 3 observations");
    }
    Ok(out)
}

fn random_near(anchor: &BoundingBox, rho: f64, frame: &BoundingBox, rng: &mut rand_chacha::ChaCha8Rng) -> Option<BoundingBox> {
    use rand::Rng;
    let span = (1.0 / rho).ln();
    let cu = anchor.center_u() + anchor.width() * rng.random_range(-0.5..=0.5);
    let cv = anchor.center_v() + anchor.height() * rng.random_range(-0.5..=0.5);
    let w = anchor.width() * (span * rng.random_range(-0.5..=0.5)).exp();
    let h = anchor.height() * (span * rng.random_range(-0.5..=0.5)).exp();
    BoundingBox::from_center_size(cu, cv, w, h).ok()?.clip_to(frame)
}

/// Fits GP hyperparameters, per category or shared.
pub fn fit_gp_params(sets: &BTreeMap<String, Vec<ObservationSet>>, cfg: &ExperimentConfig) -> Result<GpParams, Error> {
    let fit_cfg = GpFitConfig {
        lbfgs: LbfgsConfig { max_iter: cfg.gp.max_iter, ..GpFitConfig::default().lbfgs },
        ..GpFitConfig::default()
    };
    let cap = |v: Vec<ObservationSet>| match cfg.gp.max_sets {
        Some(m) => v.into_iter().take(m).collect::<Vec<_>>(),
        None => v,
    };
    let mut params = GpParams::default();
    if cfg.gp.per_category {
        for (cat, s) in sets {
            let fit = fit_gp_hyperparameters(&cap(s.clone()), &fit_cfg)?;
            log::info!("GP fit for {cat}: {} sets, {} iterations, {:?}", s.len(), fit.iterations, fit.termination);
            params.by_category.insert(cat.clone(), fit.hyper);
        }
    } else {
        let all: Vec<ObservationSet> = sets.values().flatten().cloned().collect();
        let fit = fit_gp_hyperparameters(&cap(all), &fit_cfg)?;
        params = GpParams::shared(fit.hyper);
    }
    Ok(params)
}

fn gp_params_for<S: Scorer + ?Sized>(cfg: &ExperimentConfig, data: &Dataset, scorer: &S) -> Result<GpParams, Error> {
    if let Some(p) = &cfg.data.gp_params {
        return Ok(GpParams::read(p)?);
    }
    let sets = build_gp_training_sets(&data.train_images(cfg), &data.proposals, scorer, cfg.gp.rho, cfg.gp.random_extra, cfg.seed)?;
    fit_gp_params(&sets, cfg)
}

/// Per-(image, category) statistics of a search run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchStats {
    pub image: String,
    pub category: String,
    pub initial: usize,
    pub added: usize,
    /// Upper bound on `added` implied by the FGS iteration structure.
    pub bound: usize,
    /// Max score after each iteration, starting with the initial set.
    pub best_trace: Vec<f64>,
}

impl SearchStats {
    pub fn trace_is_monotone(&self) -> bool {
        self.best_trace.windows(2).all(|w| w[1] >= w[0])
    }
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub results: BTreeMap<Method, Vec<EvalResult>>,
    pub fgs: Vec<SearchStats>,
    pub random: Vec<SearchStats>,
    pub elapsed: Duration,
}

impl OracleReport {
    pub fn map_at(&self, method: Method, threshold: f64) -> Option<f64> {
        self.results.get(&method)?.iter().find(|r| (r.iou_threshold - threshold).abs() < 1e-9).map(|r| r.map)
    }

    /// Boxes added per image by `method`, summed over categories.
    pub fn added_per_image(&self, method: Method) -> BTreeMap<String, usize> {
        let stats = match method {
            Method::Fgs => &self.fgs,
            Method::RandomSearch => &self.random,
            Method::Baseline => return BTreeMap::new(),
        };
        let mut out = BTreeMap::new();
        for s in stats {
            *out.entry(s.image.clone()).or_insert(0) += s.added;
        }
        out
    }
}

struct Task<'a> {
    image: &'a ImageRecord,
    category: &'a str,
}

fn tasks<'a>(images: &[&'a ImageRecord], categories: &'a BTreeSet<String>) -> Vec<Task<'a>> {
    images.iter().flat_map(|img| categories.iter().map(move |c| Task { image: img, category: c })).collect()
}

fn to_detections(task: &Task<'_>, kept: Vec<(BoundingBox, f64)>) -> Vec<Detection> {
    kept.into_iter()
        .map(|(bbox, score)| Detection { image: task.image.id.clone(), category: task.category.to_string(), bbox, score })
        .collect()
}

struct TaskResult {
    dets: BTreeMap<Method, Vec<Detection>>,
    fgs: Option<SearchStats>,
    random: Option<SearchStats>,
}

/// The oracle study on an in-memory dataset: each method's detections on
/// the test split under the oracle scorer, evaluated at every threshold.
pub fn oracle_experiment(cfg: &ExperimentConfig, data: &Dataset, gp: Option<GpParams>) -> Result<OracleReport, Error> {
    let start = Instant::now();
    let scorer = OracleScorer::new(data.manifest.gt_index());
    let methods: BTreeSet<Method> = cfg.oracle.methods.iter().copied().collect();
    let need_fgs = methods.contains(&Method::Fgs) || methods.contains(&Method::RandomSearch);
    let gp = match gp {
        Some(g) => g,
        None if need_fgs => gp_params_for(cfg, data, &scorer)?,
        None => GpParams::default(),
    };
    let fgs_cfg = FgsConfig { f_prune: cfg.oracle.f_prune, ..cfg.fgs.clone() };
    let rs_cfg = RandomSearchConfig { f_prune: cfg.oracle.f_prune, nms_threshold: fgs_cfg.nms_threshold, ..cfg.random_search.clone() };
    let categories = data.manifest.categories();
    let test = data.test_images(cfg);
    let work = tasks(&test, &categories);

    let run = |task: &Task<'_>| -> Result<TaskResult, Error> {
        let target = SearchTarget { image: &task.image.id, category: task.category, frame: Some(task.image.frame()) };
        let initial = score_initial(&scorer, &task.image.id, task.category, data.proposals_for(&task.image.id))?;
        let post = |s: &ScoredBoxSet| to_detections(task, postprocess(s, cfg.eval.score_threshold, cfg.eval.nms_threshold));
        let mut dets = BTreeMap::new();
        if methods.contains(&Method::Baseline) {
            dets.insert(Method::Baseline, post(&initial));
        }
        let (mut fgs_stats, mut rs_stats) = (None, None);
        if need_fgs {
            let hyper = gp.get(task.category).copied().unwrap_or_default();
            let out = local_fgs(&target, &scorer, initial.clone(), &hyper, &fgs_cfg)?;
            let added = out.boxes.proposed_count();
            let stats = SearchStats {
                image: task.image.id.clone(),
                category: task.category.to_string(),
                initial: initial.len(),
                added,
                bound: out.proposal_bound(&fgs_cfg),
                best_trace: out.best_trace.clone(),
            };
            if methods.contains(&Method::Fgs) {
                dets.insert(Method::Fgs, post(&out.boxes));
            }
            if methods.contains(&Method::RandomSearch) {
                let regions = local_regions(&initial, rs_cfg.f_prune, rs_cfg.nms_threshold).len();
                let budget = if regions == 0 { 0 } else { added.div_ceil(regions) };
                let mut rng = seeded_rng(cfg.seed, &format!("random-search/{}/{}", task.image.id, task.category));
                let rs = local_random_search(&target, initial.clone(), &scorer, budget, &rs_cfg, &mut rng)?;
                rs_stats = Some(SearchStats {
                    image: task.image.id.clone(),
                    category: task.category.to_string(),
                    initial: initial.len(),
                    added: rs.boxes.len() - initial.len(),
                    bound: budget * regions,
                    best_trace: vec![initial.max_score().unwrap_or(f64::NEG_INFINITY), rs.boxes.max_score().unwrap_or(f64::NEG_INFINITY)],
                });
                dets.insert(Method::RandomSearch, post(&rs.boxes));
            }
            fgs_stats = Some(stats);
        }
        Ok(TaskResult { dets, fgs: fgs_stats, random: rs_stats })
    };

    let pool = thread_pool()?;
    let outputs: Vec<TaskResult> = pool.install(|| work.par_iter().map(run).collect::<Result<Vec<_>, Error>>())?;

    let gts = Manifest::ground_truth(test.iter().copied());
    let mut per_method: BTreeMap<Method, Vec<Detection>> = BTreeMap::new();
    let (mut fgs, mut random) = (Vec::new(), Vec::new());
    for o in outputs {
        for (m, d) in o.dets {
            per_method.entry(m).or_default().extend(d);
        }
        fgs.extend(o.fgs);
        random.extend(o.random);
    }
    let results = per_method
        .into_iter()
        .map(|(m, dets)| (m, evaluate_sweep(&dets, &gts, &categories, cfg)))
        .collect();
    Ok(OracleReport { results, fgs, random, elapsed: start.elapsed() })
}

/// Evaluates at every configured threshold.
pub fn evaluate_sweep(dets: &[Detection], gts: &[GroundTruth], categories: &BTreeSet<String>, cfg: &ExperimentConfig) -> Vec<EvalResult> {
    cfg.eval.thresholds.iter().map(|&t| evaluate_categories(dets, gts, categories, t, cfg.eval.mode)).collect()
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

/// Runs the oracle study and writes `oracle_results.csv`
/// (`method,iou_threshold,category,ap`, one `mAP` row per method and
/// threshold), `oracle_ap_per_category.csv` and `oracle_box_counts.csv`.
pub fn run_oracle_experiment(cfg: &ExperimentConfig) -> Result<OracleReport, Error> {
    let data = load_dataset(cfg)?;
    let report = oracle_experiment(cfg, &data, None)?;
    let prov = provenance(cfg);
    let mut rows = Vec::new();
    let mut cat_rows = Vec::new();
    for (m, r) in &report.results {
        rows.extend(ap_rows(m.name(), r, false));
        cat_rows.extend(ap_rows(m.name(), r, true));
    }
    write_csv(&out_path(cfg, "oracle_results.csv"), "method,iou_threshold,category,ap", &rows, &prov)?;
    write_csv(&out_path(cfg, "oracle_ap_per_category.csv"), "method,iou_threshold,category,ap", &cat_rows, &prov)?;
    let mut count_rows = Vec::new();
    for (name, stats) in [("fgs", &report.fgs), ("random_search", &report.random)] {
        for s in stats.iter() {
            count_rows.push(format!("{name},{},{},{},{},{}", s.image, s.category, s.initial, s.added, s.bound));
        }
    }
    count_rows.sort();
    write_csv(&out_path(cfg, "oracle_box_counts.csv"), "method,image_id,category,initial,added,bound", &count_rows, &prov)?;
    write_json(&out_path(cfg, "oracle_meta.json"), &EvalMeta::new(cfg))?;
    Ok(report)
}

/// Feature source named in the config: a feature file, or the synthetic
/// world built over the manifest's ground truth.
pub fn feature_provider(cfg: &ExperimentConfig, data: &Dataset) -> Result<Box<dyn FeatureProvider>, Error> {
    match &cfg.data.features {
        Some(p) => Ok(Box::new(FeatureFile::read(p)?)),
        None => {
            let cats: Vec<String> = data.manifest.categories().into_iter().collect();
            Ok(Box::new(SyntheticWorld::new(data.manifest.gt_index(), &cats, cfg.feature_config())))
        }
    }
}

/// Structured-SVM examples for one category. Every object of the category
/// is a positive whose candidates are the proposals closest to it; images
/// without the category are negatives over all their proposals.
pub fn training_examples<P: FeatureProvider + ?Sized>(
    images: &[&ImageRecord],
    proposals: &ProposalMap,
    provider: &P,
    category: &str,
) -> Result<Vec<TrainingExample>, FeatureError> {
    let mut out = Vec::new();
    for img in images {
        let props = proposals.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
        let feats = |b: &BoundingBox| provider.features(&img.id, b);
        let objects: Vec<&BoundingBox> = img.objects.iter().filter(|o| o.cat == category && !o.difficult).map(|o| &o.bbox).collect();
        let has_hard = img.objects.iter().any(|o| o.cat == category && o.difficult);
        if objects.is_empty() {
            if has_hard {
                continue;
            }
            let cands = props.iter().map(|b| Ok((*b, feats(b)?))).collect::<Result<Vec<_>, FeatureError>>()?;
            out.push(TrainingExample::negative(img.id.clone(), cands));
            continue;
        }
        for (k, gt) in objects.iter().enumerate() {
            let nearest = |b: &BoundingBox| {
                let own = iou(b, gt);
                own > 0.0 && objects.iter().enumerate().all(|(j, o)| j == k || iou(b, o) <= own)
            };
            let cands = props
                .iter()
                .filter(|b| nearest(b))
                .map(|b| Ok((*b, feats(b)?)))
                .collect::<Result<Vec<_>, FeatureError>>()?;
            out.push(TrainingExample::positive(format!("{}#{k}", img.id), **gt, feats(gt)?, cands));
        }
    }
    Ok(out)
}

/// Per-category training summary.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub category: String,
    pub examples: usize,
    pub objective: f64,
    pub updates: usize,
    pub converged: bool,
}

/// Trains one classifier per category on the train split.
pub fn train_models(
    cfg: &ExperimentConfig,
    data: &Dataset,
    provider: &dyn FeatureProvider,
) -> Result<(BTreeMap<String, WeightVector>, Vec<TrainSummary>), Error> {
    let train = data.train_images(cfg);
    let tcfg = cfg.train_config();
    let mut models = BTreeMap::new();
    let mut summary = Vec::new();
    for cat in data.manifest.categories() {
        let examples = training_examples(&train, &data.proposals, provider, &cat)?;
        let out = train_with_mining(&examples, &tcfg)?;
        if !out.converged {
            log::warn!("training for {cat} hit the iteration cap; using the best iterate");
        }
        summary.push(TrainSummary { category: cat.clone(), examples: examples.len(), objective: out.objective, updates: out.updates, converged: out.converged });
        models.insert(cat, out.w);
    }
    Ok((models, summary))
}

/// Trains and writes `model.json`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Vec<TrainSummary>, Error> {
    let data = load_dataset(cfg)?;
    let provider = feature_provider(cfg, &data)?;
    let (models, summary) = train_models(cfg, &data, provider.as_ref())?;
    let prov = provenance(cfg);
    let file: ModelFile = models
        .into_iter()
        .map(|(k, w)| (k, ModelEntry { w: w.into_vec(), config_hash: prov.config_hash.clone(), seed: prov.seed }))
        .collect();
    write_json(&out_path(cfg, "model.json"), &file)?;
    Ok(summary)
}

/// Refinement output: post-processed detections and per-search statistics.
#[derive(Debug, Clone)]
pub struct RefineReport {
    pub detections: Vec<Detection>,
    pub stats: Vec<SearchStats>,
}

/// FGS over each test image and modelled category, then threshold and NMS.
pub fn refine_detections(
    cfg: &ExperimentConfig,
    data: &Dataset,
    scorer: &(dyn Scorer + Sync),
    categories: &BTreeSet<String>,
    gp: &GpParams,
) -> Result<RefineReport, Error> {
    let test = data.test_images(cfg);
    let work = tasks(&test, categories);
    let run = |task: &Task<'_>| -> Result<(Vec<Detection>, SearchStats), Error> {
        let target = SearchTarget { image: &task.image.id, category: task.category, frame: Some(task.image.frame()) };
        let initial = score_initial(scorer, &task.image.id, task.category, data.proposals_for(&task.image.id))?;
        let hyper = gp.get(task.category).copied().unwrap_or_default();
        let n0 = initial.len();
        let out = local_fgs(&target, scorer, initial, &hyper, &cfg.fgs)?;
        let stats = SearchStats {
            image: task.image.id.clone(),
            category: task.category.to_string(),
            initial: n0,
            added: out.boxes.proposed_count(),
            bound: out.proposal_bound(&cfg.fgs),
            best_trace: out.best_trace.clone(),
        };
        let dets = to_detections(task, postprocess(&out.boxes, cfg.eval.score_threshold, cfg.eval.nms_threshold));
        Ok((dets, stats))
    };
    let pool = thread_pool()?;
    let outputs = pool.install(|| work.par_iter().map(run).collect::<Result<Vec<_>, Error>>())?;
    let mut detections = Vec::new();
    let mut stats = Vec::new();
    for (d, s) in outputs {
        detections.extend(d);
        stats.push(s);
    }
    sort_detections(&mut detections);
    Ok(RefineReport { detections, stats })
}

/// Loads the model (`data.model`, else `<out_dir>/model.json`), fits or
/// loads GP parameters, refines and writes `detections.csv`.
pub fn run_refine(cfg: &ExperimentConfig) -> Result<RefineReport, Error> {
    let data = load_dataset(cfg)?;
    let provider = feature_provider(cfg, &data)?;
    let model_path = cfg.data.model.clone().unwrap_or_else(|| out_path(cfg, "model.json"));
    let models = read_model(&model_path)?;
    let scorer = LinearScorer::new(models, provider.as_ref());
    let categories: BTreeSet<String> = scorer.weights().keys().cloned().collect();
    let gp = if cfg.fgs.t_max == 0 { GpParams::default() } else { gp_params_for(cfg, &data, &scorer)? };
    let report = refine_detections(cfg, &data, &scorer, &categories, &gp)?;
    write_detections(&out_path(cfg, "detections.csv"), &report.detections, &provenance(cfg))?;
    Ok(report)
}

/// Fits GP hyperparameters on the train split and writes `gp_params.json`.
/// Uses the trained model's scores when a model is available, the oracle
/// otherwise.
pub fn run_gp_fit(cfg: &ExperimentConfig) -> Result<GpParams, Error> {
    let data = load_dataset(cfg)?;
    let sets_cfg = ExperimentConfig { data: crate::harness::DataConfig { gp_params: None, ..cfg.data.clone() }, ..cfg.clone() };
    let params = match &cfg.data.model {
        Some(p) => {
            let provider = feature_provider(cfg, &data)?;
            let scorer = LinearScorer::new(read_model(p)?, provider.as_ref());
            gp_params_for(&sets_cfg, &data, &scorer)?
        }
        None => gp_params_for(&sets_cfg, &data, &OracleScorer::new(data.manifest.gt_index()))?,
    };
    params.write(&out_path(cfg, "gp_params.json"), &format!("config_hash={} seed={}", cfg.hash(), cfg.seed))?;
    Ok(params)
}

/// Evaluates detections (`data.detections`, else `<out_dir>/detections.csv`)
/// against the test split; writes `eval_results.csv`, `eval_pr.csv` and
/// `eval_localization.csv`.
pub fn run_eval(cfg: &ExperimentConfig) -> Result<Vec<EvalResult>, Error> {
    cfg.check_paths()?;
    let manifest = match &cfg.data.manifest {
        Some(p) => Manifest::read(p)?,
        None => generate_benchmark(&cfg.synth, &cfg.perturb_config(), cfg.seed).0,
    };
    let det_path = cfg.data.detections.clone().unwrap_or_else(|| out_path(cfg, "detections.csv"));
    let dets = read_detections(&det_path)?;
    let test = manifest.split(cfg.data.test_split());
    let ids: BTreeSet<&str> = test.iter().map(|i| i.id.as_str()).collect();
    let dets: Vec<Detection> = dets.into_iter().filter(|d| ids.contains(d.image.as_str())).collect();
    let gts = Manifest::ground_truth(test.iter().copied());
    let categories = manifest.categories();
    let results = evaluate_sweep(&dets, &gts, &categories, cfg);
    write_eval_outputs(cfg, "detections", &results, &dets, &gts)?;
    Ok(results)
}

/// Evaluation conventions recorded next to every result table.
#[derive(Debug, Clone, serde::Serialize)]
struct EvalMeta {
    config_hash: String,
    seed: u64,
    ap_mode: crate::eval::ApMode,
    thresholds: Vec<f64>,
    assumptions: Vec<&'static str>,
}

impl EvalMeta {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            ap_mode: cfg.eval.mode,
            thresholds: cfg.eval.thresholds.clone(),
            assumptions: vec![
                "difficult ground truth is ignored: not counted in recall, detections matching it are dropped",
                "detections are matched greedily in descending score order to the best-overlapping unmatched ground truth",
                "11-point AP samples recall levels 0, 0.1, .., 1.0 (VOC2007 devkit)",
            ],
        }
    }
}

fn write_eval_outputs(cfg: &ExperimentConfig, method: &str, results: &[EvalResult], dets: &[Detection], gts: &[GroundTruth]) -> Result<(), DataError> {
    let prov = provenance(cfg);
    write_json(&out_path(cfg, "eval_meta.json"), &EvalMeta::new(cfg))?;
    write_csv(&out_path(cfg, "eval_results.csv"), "method,iou_threshold,category,ap", &ap_rows(method, results, true), &prov)?;
    let mut pr_rows = Vec::new();
    for r in results {
        for (cat, c) in &r.per_category {
            for p in &c.pr {
                pr_rows.push(format!("{},{},{:?},{:?},{:?}", r.iou_threshold, cat, p.score, p.precision, p.recall));
            }
        }
    }
    write_csv(&out_path(cfg, "eval_pr.csv"), "iou_threshold,category,score,precision,recall", &pr_rows, &prov)?;
    let mut loc_rows = Vec::new();
    for (cat, hist) in localization_distribution(dets, gts) {
        for (k, n) in hist.iter().enumerate() {
            loc_rows.push(format!("{cat},{:.1},{:.1},{n}", k as f64 / 10.0, (k + 1) as f64 / 10.0));
        }
    }
    write_csv(&out_path(cfg, "eval_localization.csv"), "category,iou_lo,iou_hi,count", &loc_rows, &prov)
}

/// Writes the synthetic benchmark: `manifest.jsonl` and `proposals.csv`.
pub fn run_synth_gen(cfg: &ExperimentConfig) -> Result<Dataset, Error> {
    let (manifest, proposals) = generate_benchmark(&cfg.synth, &cfg.perturb_config(), cfg.seed);
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| DataError::io(&cfg.out_dir, e))?;
    manifest.write(&out_path(cfg, "manifest.jsonl"))?;
    crate::proposals::save_proposals(&out_path(cfg, "proposals.csv"), &proposals)?;
    write_json(&out_path(cfg, "synth_meta.json"), &provenance(cfg))?;
    Ok(Dataset { manifest, proposals })
}

/// Default output location for a named artifact.
pub fn artifact(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    out_path(cfg, name)
}

