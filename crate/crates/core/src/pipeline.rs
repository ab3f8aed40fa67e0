//! End-to-end runs: pools, mix, package.
//!
//! Every work item gets its id and RNG stream from the global seed before
//! dispatch and results are collected in index order, so the thread count
//! never changes the output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{package, sample_mix, DatasetError, Manifest, PackageOptions, PoolItem};
use crate::fsm::{simulate, FsmError, InputSchedule};
use crate::generator::{generate_td, GenError, Scenario, Task};
use crate::qa::{
    generate_caption_qas, generate_description_qas, instantiate, reformat, template_registry, CaptionQuota, CaptionTemplates, Category,
    Format, QaError, QaPair, SignalLookup,
};
use crate::seed;
use crate::textgen::DescriptionBundle;
use crate::trace::{sample_to_diagram, Edge, TimingDiagram, TraceError};
use crate::vcd::{parse_vcd, VcdError};
use crate::wavejson::{emit_wavejson, randomize_presentation, PresentationOptions, WaveError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Fsm(#[from] FsmError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error(transparent)]
    Vcd(#[from] VcdError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("no template of {0} applies to the generated diagram")]
    NoTemplate(Task),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMix {
    pub task: Task,
    #[serde(default = "one")]
    pub weight: f64,
    /// Probability of the success scenario where a task has both.
    #[serde(default = "half")]
    pub success: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

/// Share of pairs turned into true/false and multiple-choice items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormatMix {
    pub true_false: f64,
    pub multiple_choice: f64,
}

impl Default for FormatMix {
    fn default() -> Self {
        FormatMix {
            true_false: 0.15,
            multiple_choice: 0.15,
        }
    }
}

/// An external diagram for the caption pool: a `.vcd` file sampled on
/// `clock`, or a WaveJSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub path: PathBuf,
    #[serde(default = "default_clock")]
    pub clock: String,
    #[serde(default)]
    pub edge: Edge,
    /// A description bundle JSON; adds the four open-ended pairs.
    #[serde(default)]
    pub description: Option<PathBuf>,
    /// Caption pictures drawn from this source, each with its own look.
    #[serde(default = "one_usize")]
    pub repeats: usize,
}

fn default_clock() -> String {
    "clk".into()
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextServiceSettings {
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the credential.
    pub api_key_env: String,
}

impl Default for TextServiceSettings {
    fn default() -> Self {
        TextServiceSettings {
            endpoint: None,
            api_key_env: crate::textgen::API_KEY_ENV.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub tasks: Vec<TaskMix>,
    pub n_caption: usize,
    pub n_reasoning: usize,
    /// Pool sizes; the counts above are drawn from them. Default: the counts.
    pub caption_pool: Option<usize>,
    pub reasoning_pool: Option<usize>,
    pub out_dir: PathBuf,
    pub presentation: PresentationOptions,
    pub formats: FormatMix,
    pub sources: Vec<SourceSpec>,
    pub text_service: TextServiceSettings,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub holdout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            tasks: Task::ALL
                .into_iter()
                .map(|task| TaskMix {
                    task,
                    weight: 1.0,
                    success: 0.5,
                })
                .collect(),
            n_caption: 4942,
            n_reasoning: 5292,
            caption_pool: None,
            reasoning_pool: None,
            out_dir: PathBuf::from("out"),
            presentation: PresentationOptions::default(),
            formats: FormatMix::default(),
            sources: vec![],
            text_service: TextServiceSettings::default(),
            jobs: 0,
            holdout: 0.0,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative source paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut cfg.sources {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
            if let Some(d) = s.description.as_mut().filter(|d| d.is_relative()) {
                *d = base.join(&*d);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.out_dir.as_os_str().is_empty() {
            return bad("out_dir is empty");
        }
        if self.tasks.is_empty() || self.tasks.iter().any(|t| !(t.weight >= 0.0) || !(0.0..=1.0).contains(&t.success)) {
            return bad("task weights must be non-negative and success shares in [0, 1]");
        }
        if self.tasks.iter().map(|t| t.weight).sum::<f64>() <= 0.0 {
            return bad("task weights sum to zero");
        }
        let f = self.formats;
        if f.true_false < 0.0 || f.multiple_choice < 0.0 || f.true_false + f.multiple_choice > 1.0 {
            return bad("format shares must be non-negative and sum to at most 1");
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad("holdout must be in [0, 1)");
        }
        if self.caption_pool.is_some_and(|p| p < self.n_caption) || self.reasoning_pool.is_some_and(|p| p < self.n_reasoning) {
            return bad("a pool is smaller than its requested count");
        }
        Ok(())
    }

    fn pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(pool.install(f))
    }
}

const CAPTION_STREAM: u64 = 1;
const REASONING_STREAM: u64 = 2;
const SOURCE_STREAM: u64 = 3;
const MIX_STREAM: u64 = 4;

fn pick_task(mix: &[TaskMix], rng: &mut impl Rng) -> (Task, Scenario) {
    let w = WeightedIndex::new(mix.iter().map(|t| t.weight)).expect("validated weights");
    let t = &mix[w.sample(rng)];
    let scenarios = t.task.scenarios();
    let scenario = if scenarios.len() > 1 && !rng.gen_bool(t.success) {
        Scenario::Failure
    } else {
        scenarios[0]
    };
    (t.task, scenario)
}

fn pick_format(mix: FormatMix, rng: &mut impl Rng) -> Format {
    let x: f64 = rng.gen();
    if x < mix.true_false {
        Format::TrueFalse
    } else if x < mix.true_false + mix.multiple_choice {
        Format::MultipleChoice
    } else {
        Format::Statement
    }
}

/// Reformats when possible; pairs without enough distractors stay statements.
fn with_format(pair: QaPair, format: Format, seed: u64, lookup: &dyn SignalLookup) -> QaPair {
    if format == Format::Statement {
        return pair;
    }
    reformat(&pair, format, seed, lookup).unwrap_or(pair)
}

/// A free-running simulation of `task` on uniformly random inputs. The
/// counter additionally resets in its first cycle and rarely afterwards.
pub fn random_run(task: Task, seed: u64) -> Result<TimingDiagram, PipelineError> {
    let machine = task.machine();
    let mut rng = seed::rng(seed);
    let cycles = rng.gen_range(12..=32);
    let mut schedule = InputSchedule::new();
    for input in machine.inputs() {
        let bits = (0..cycles)
            .map(|c| match input.as_str() {
                "rst" => u8::from(c == 0 || rng.gen_bool(0.05)),
                _ => rng.gen_range(0..=1),
            })
            .collect();
        schedule.insert(input.clone(), bits);
    }
    Ok(simulate(&machine, &schedule, cycles)?.1)
}

/// Applies presentation randomization and returns the document together
/// with the diagram it displays, which is what questions are asked about.
fn present(td: &TimingDiagram, seed: u64, opts: &PresentationOptions) -> Result<(crate::wavejson::WaveDocument, TimingDiagram), PipelineError> {
    let doc = randomize_presentation(&emit_wavejson(td), seed, opts);
    let shown = doc.to_diagram()?;
    Ok((doc, shown))
}

fn caption_item(
    id: String,
    td: &TimingDiagram,
    source_td: &str,
    category: Category,
    item_seed: u64,
    cfg: &RunConfig,
    templates: &CaptionTemplates,
) -> Result<PoolItem, PipelineError> {
    let (wave, shown) = present(td, seed::derive(item_seed, 1), &cfg.presentation)?;
    let mut qa = generate_caption_qas(&shown, source_td, seed::derive(item_seed, 2), &CaptionQuota::single(category), templates)?
        .pop()
        .expect("quota of one");
    let format = pick_format(cfg.formats, &mut seed::rng(seed::derive(item_seed, 3)));
    qa = with_format(qa, format, seed::derive(item_seed, 4), &shown);
    Ok(PoolItem {
        id,
        wave,
        qa,
        task: None,
        scenario: None,
        seed: item_seed,
    })
}

fn shuffled_categories(n: usize, seed: u64) -> Vec<Category> {
    let q = CaptionQuota::split(n);
    let mut cats: Vec<Category> = Category::ANALYTIC.into_iter().flat_map(|c| std::iter::repeat_n(c, q.get(c))).collect();
    cats.shuffle(&mut seed::rng(seed));
    cats
}

/// Caption pool: random-input runs of the configured tasks plus the
/// configured external sources. Analytic categories follow
/// [`CaptionQuota::split`] over the generated part.
pub fn build_caption_pool(cfg: &RunConfig) -> Result<Vec<PoolItem>, PipelineError> {
    let templates = CaptionTemplates::default();
    let n = cfg.caption_pool.unwrap_or(cfg.n_caption);
    let base = seed::derive(cfg.seed, CAPTION_STREAM);
    let cats = shuffled_categories(n, seed::derive(base, u64::MAX));
    let mut items = cfg.pool(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let s = seed::derive(base, i as u64);
                let (task, _) = pick_task(&cfg.tasks, &mut seed::rng(s));
                let td = random_run(task, seed::derive(s, 0))?;
                let source = format!("{task}_random_{s:016x}");
                let mut item = caption_item(format!("cap_{i:06}"), &td, &source, cats[i], s, cfg, &templates)?;
                item.task = Some(task.name().to_string());
                Ok(item)
            })
            .collect::<Result<Vec<_>, PipelineError>>()
    })??;
    items.extend(source_items(cfg, &templates)?);
    Ok(items)
}

fn load_source(spec: &SourceSpec) -> Result<TimingDiagram, PipelineError> {
    let text = fs::read_to_string(&spec.path).map_err(|e| io_err(&spec.path, e))?;
    if spec.path.extension().is_some_and(|e| e.eq_ignore_ascii_case("vcd")) {
        Ok(sample_to_diagram(&parse_vcd(&text)?, &spec.clock, spec.edge)?)
    } else {
        Ok(crate::wavejson::parse_wavejson(&text)?)
    }
}

fn source_items(cfg: &RunConfig, templates: &CaptionTemplates) -> Result<Vec<PoolItem>, PipelineError> {
    let mut out = Vec::new();
    for (k, spec) in cfg.sources.iter().enumerate() {
        let td = load_source(spec)?;
        let name = spec.path.file_stem().map_or_else(|| format!("source{k}"), |s| s.to_string_lossy().into_owned());
        let base = seed::derive_path(cfg.seed, &[SOURCE_STREAM, k as u64]);
        let mut rng = seed::rng(base);
        for r in 0..spec.repeats {
            let s = seed::derive(base, r as u64);
            let category = *Category::ANALYTIC.choose(&mut rng).expect("non-empty");
            out.push(caption_item(format!("src{k:03}_{r:04}"), &td, &name, category, s, cfg, templates)?);
        }
        if let Some(path) = &spec.description {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let bundle: DescriptionBundle = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
            if !bundle.is_complete() {
                return Err(PipelineError::Config(format!("{}: incomplete description bundle", path.display())));
            }
            for (j, qa) in generate_description_qas(&bundle, &name, templates).into_iter().enumerate() {
                let s = seed::derive(base, u64::MAX - j as u64);
                let (wave, _) = present(&td, s, &cfg.presentation)?;
                out.push(PoolItem {
                    id: format!("src{k:03}_{}", qa.category.name().to_lowercase()),
                    wave,
                    qa,
                    task: None,
                    scenario: None,
                    seed: s,
                });
            }
        }
    }
    Ok(out)
}

/// One reasoning item for a fixed task and scenario: the first applicable
/// template in a seeded order, on a conditioned diagram.
pub fn reasoning_item(id: String, task: Task, scenario: Scenario, s: u64, cfg: &RunConfig) -> Result<PoolItem, PipelineError> {
    let (td, ctx) = generate_td(task, scenario, seed::derive(s, 0))?;
    let mut templates = template_registry(task.name())?;
    let mut rng = seed::rng(seed::derive(s, 1));
    templates.shuffle(&mut rng);
    let qa = templates
        .iter()
        .find_map(|t| instantiate(t, &td, &ctx, seed::derive(s, 2)).ok())
        .ok_or(PipelineError::NoTemplate(task))?;
    let format = pick_format(cfg.formats, &mut rng);
    let qa = with_format(qa, format, seed::derive(s, 3), &ctx.trace);
    // answers name signals and cycles, so only the lane order may vary
    let opts = PresentationOptions {
        shuffle_lanes: cfg.presentation.shuffle_lanes,
        ..PresentationOptions::off()
    };
    let (wave, _) = present(&td, seed::derive(s, 4), &opts)?;
    Ok(PoolItem {
        id,
        wave,
        qa,
        task: Some(task.name().to_string()),
        scenario: Some(scenario),
        seed: ctx.seed,
    })
}

pub fn build_reasoning_pool(cfg: &RunConfig) -> Result<Vec<PoolItem>, PipelineError> {
    let n = cfg.reasoning_pool.unwrap_or(cfg.n_reasoning);
    let base = seed::derive(cfg.seed, REASONING_STREAM);
    cfg.pool(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let s = seed::derive(base, i as u64);
                let (task, scenario) = pick_task(&cfg.tasks, &mut seed::rng(s));
                reasoning_item(format!("rsn_{i:06}"), task, scenario, s, cfg)
            })
            .collect()
    })?
}

/// Reasoning items for one task and scenario, as `gen-reasoning` emits them.
pub fn reasoning_batch(task: Task, scenario: Scenario, count: usize, cfg: &RunConfig) -> Result<Vec<PoolItem>, PipelineError> {
    if !task.scenarios().contains(&scenario) {
        return Err(GenError::UnsupportedScenario {
            task: task.name().to_string(),
            scenario,
        }
        .into());
    }
    let base = seed::derive(cfg.seed, REASONING_STREAM);
    cfg.pool(|| {
        (0..count)
            .into_par_iter()
            .map(|i| reasoning_item(format!("rsn_{task}_{scenario}_{i:06}"), task, scenario, seed::derive(base, i as u64), cfg))
            .collect()
    })?
}

/// Builds both pools, mixes and packages them into `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let caption = build_caption_pool(cfg)?;
    let reasoning = build_reasoning_pool(cfg)?;
    let picked = sample_mix(&caption, &reasoning, cfg.n_caption, cfg.n_reasoning, seed::derive(cfg.seed, MIX_STREAM))?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    Ok(cfg.pool(|| {
        package(
            &picked,
            &cfg.out_dir,
            PackageOptions {
                seed: cfg.seed,
                holdout: cfg.holdout,
            },
        )
    })??)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_caption: usize, n_reasoning: usize) -> RunConfig {
        RunConfig {
            n_caption,
            n_reasoning,
            ..RunConfig::default()
        }
    }

    #[test]
    fn caption_pool_categories_follow_split() {
        let pool = build_caption_pool(&small(200, 0)).unwrap();
        let q = CaptionQuota::split(200);
        for c in Category::ANALYTIC {
            assert_eq!(pool.iter().filter(|p| p.qa.category == c).count(), q.get(c));
        }
    }

    #[test]
    fn caption_answers_match_shown_diagram() {
        let cfg = RunConfig {
            formats: FormatMix {
                true_false: 0.3,
                multiple_choice: 0.3,
            },
            ..small(150, 0)
        };
        for item in build_caption_pool(&cfg).unwrap() {
            let shown = item.wave.to_diagram().unwrap();
            let g = item.qa.grounding.as_ref().unwrap();
            assert!(g.key.check(&shown), "{}", item.id);
            if let Some(r) = &g.refuted {
                assert!(!r.check(&shown));
            }
        }
    }

    #[test]
    fn reasoning_pool_is_grounded() {
        for item in build_reasoning_pool(&small(0, 60)).unwrap() {
            assert!(item.qa.template.is_some());
            assert!(item.qa.grounding.is_some());
            assert!(item.task.is_some() && item.scenario.is_some());
        }
    }

    #[test]
    fn pools_do_not_depend_on_threads() {
        let a = build_reasoning_pool(&RunConfig { jobs: 1, ..small(0, 30) }).unwrap();
        let b = build_reasoning_pool(&RunConfig { jobs: 4, ..small(0, 30) }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(small(1, 1).validate().is_ok());
        assert!(RunConfig { out_dir: PathBuf::new(), ..small(1, 1) }.validate().is_err());
        assert!(RunConfig { caption_pool: Some(0), ..small(1, 1) }.validate().is_err());
        assert!(RunConfig { holdout: 1.0, ..small(1, 1) }.validate().is_err());
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 3, "tasks": [{"task": "w_counter"}]}"#).unwrap();
        assert_eq!(cfg.n_caption, 4942);
        assert_eq!(cfg.tasks[0].weight, 1.0);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 3}"#).is_err());
    }

    #[test]
    fn gen_reasoning_batches() {
        let cfg = small(0, 0);
        assert!(reasoning_batch(Task::SerialParityStop, Scenario::Success, 0, &cfg).unwrap().is_empty());
        let b = reasoning_batch(Task::SerialParityWait, Scenario::Failure, 5, &cfg).unwrap();
        assert_eq!(b.len(), 5);
        assert!(reasoning_batch(Task::WCounter, Scenario::Failure, 1, &cfg).is_err());
    }
}
