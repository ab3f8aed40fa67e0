//! Synthesis of timing-diagram visual-question-answering datasets.
//!
//! The pipeline turns VCD dumps or FSM-driven, conditioned-random stimulus
//! into cycle-sampled [`TimingDiagram`]s, renders them as WaveJSON/SVG,
//! attaches question/answer pairs whose answers are computed from the
//! diagram, and packages the result as instruction-tuning records. BLEU and
//! ROUGE scoring of model answers is in [`metrics`].

pub mod dataset;
pub mod fsm;
pub mod generator;
pub mod metrics;
pub mod pipeline;
pub mod qa;
pub mod seed;
pub mod svg;
pub mod textgen;
pub mod trace;
pub mod vcd;
pub mod verilog;
pub mod wavejson;

pub use dataset::{package, sample_mix, verify_package, DatasetError, DatasetRecord, Manifest, PoolItem};
pub use fsm::{simulate, FsmError, InputSchedule, StepTrace, TaskMachine};
pub use generator::{check_motifs, generate_td, GenContext, GenError, Scenario, Task};
pub use metrics::{bleu4, evaluate_file, rouge_l, rouge_n, MetricsError, ScoreReport};
pub use pipeline::{run, PipelineError, RunConfig};
pub use qa::{Category, Clause, Format, Grounding, QaError, QaPair, SignalLookup};
pub use svg::render_svg;
pub use trace::{sample_to_diagram, Annotation, CycleValue, Edge, SignalTrace, TimingDiagram, TraceError, Word};
pub use vcd::{parse_vcd, write_vcd, Logic, LogicValue, VcdDocument, VcdError};
pub use wavejson::{emit_wavejson, parse_wavejson, randomize_presentation, PresentationOptions, WaveDocument, WaveError, WaveLane};
