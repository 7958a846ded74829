use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tracelab_core::corpus::{serialize, SerializeOptions};
use tracelab_core::metrics::{backtracking_ratio, bleu};
use tracelab_core::minilang::{execute, parse, DEFAULT_STEP_BUDGET};
use tracelab_core::model::{sample, LanguageModel, ModelConfig, Tokenizer};
use tracelab_core::simulator::{build_corpus, make_templates, sample_population};

fn corpus() -> Vec<tracelab_core::corpus::TraceRecord> {
    let templates = make_templates(20, 1);
    let population = sample_population(40, 2);
    build_corpus(&population, &templates, (4, 8), 3).expect("corpus")
}

fn interpreter(c: &mut Criterion) {
    let records = corpus();
    let programs: Vec<String> = records.iter().filter_map(|r| r.final_program().map(str::to_string)).take(50).collect();
    c.bench_function("parse+execute 50 programs", |b| {
        b.iter(|| {
            for p in &programs {
                black_box(execute(&parse(p), DEFAULT_STEP_BUDGET));
            }
        })
    });
}

fn metrics(c: &mut Criterion) {
    let records = corpus();
    let traces: Vec<Vec<String>> = records.iter().take(50).map(|r| r.states().into_iter().map(str::to_string).collect()).collect();
    c.bench_function("backtracking ratio 50 traces", |b| {
        b.iter(|| {
            for t in &traces {
                black_box(backtracking_ratio(t));
            }
        })
    });
    let pairs: Vec<(&str, &str)> = traces.iter().filter(|t| t.len() >= 2).map(|t| (t[0].as_str(), t[t.len() - 1].as_str())).collect();
    c.bench_function("bleu first vs final", |b| {
        b.iter(|| {
            for (x, y) in &pairs {
                black_box(bleu(x, y));
            }
        })
    });
}

fn simulation(c: &mut Criterion) {
    let templates = make_templates(20, 1);
    let population = sample_population(10, 2);
    c.bench_function("simulate 10 students", |b| {
        b.iter(|| black_box(build_corpus(&population, &templates, (4, 8), 3).expect("corpus")))
    });
}

fn model(c: &mut Criterion) {
    let records = corpus();
    let opts = SerializeOptions { header_budget: 16 };
    let text = serialize(&records[0], false, &opts).text;
    let lm = LanguageModel::new(ModelConfig::tiny(), Tokenizer::bytes_only(), 1).expect("model");
    c.bench_function("tiny model loss", |b| b.iter(|| black_box(lm.loss(&text, Some("s1")).expect("loss"))));
    let prompt: String = text.chars().take(80).collect();
    c.bench_function("tiny model sample", |b| {
        b.iter(|| black_box(sample(&lm, &prompt, Some("s1"), 0.9, 4).expect("sample")))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = interpreter, metrics, simulation, model
}
criterion_main!(benches);
