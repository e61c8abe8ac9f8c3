use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cleaneval::corpus::{preset, select_calibration_text, Dataset, FieldMap, Sample};
use cleaneval::filter::filter_candidates_detailed;
use cleaneval::par::{self, ExecMode};
use cleaneval::pipeline::{calibrate_dataset, PipelineConfig};
use cleaneval::prompts::PromptTemplates;
use cleaneval::provider::{GenerationRequest, MockProvider, MockRules, Provider, ProviderError};
use cleaneval::rewrite::{generate_candidates, RewriteConfig};
use cleaneval::score::{LexicalScorer, SimilarityScores};

const MODES: [(&str, ExecMode); 2] = [
    ("sequential", ExecMode::Sequential),
    ("parallel", ExecMode::Parallel),
];

const WORDS: &[&str] = &[
    "the",
    "movie",
    "is",
    "very",
    "great",
    "story",
    "boring",
    "people",
    "loved",
    "film",
    "about",
    "a",
    "big",
    "city",
    "funny",
    "and",
    "dull",
    "performance",
    "from",
    "start",
];

fn sentence(seed: usize, len: usize) -> String {
    (0..len)
        .map(|k| WORDS[(seed * 7 + k * 13 + seed / 3) % WORDS.len()])
        .collect::<Vec<_>>()
        .join(" ")
        + "."
}

fn dataset(n: usize) -> Dataset {
    Dataset {
        spec: preset("sst2").unwrap(),
        samples: (0..n)
            .map(|i| Sample {
                id: i.to_string(),
                fields: [("sentence".to_string(), sentence(i, 8 + i % 12))]
                    .into_iter()
                    .collect::<FieldMap>(),
                label: "positive".into(),
                benchmark: "sst2".into(),
                split: None,
            })
            .collect(),
    }
}

/// Mock with a fixed per-call delay, standing in for a network-bound model.
struct Slow {
    inner: MockProvider,
    delay: Duration,
}

impl Provider for Slow {
    fn id(&self) -> &str {
        "slow-mock"
    }
    fn model(&self) -> &str {
        self.inner.model()
    }
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        std::thread::sleep(self.delay);
        self.inner.generate(req)
    }
}

fn bench_rouge(c: &mut Criterion) {
    let pairs: Vec<(String, String)> = (0..2000)
        .map(|i| (sentence(i, 40), sentence(i + 1, 40)))
        .collect();
    let mut g = c.benchmark_group("rouge_batch_2000x40");
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                par::map(mode, black_box(&pairs), |(a, r)| {
                    SimilarityScores::rouge(a, r)
                })
            })
        });
    }
    g.finish();
}

fn bench_filter(c: &mut Criterion) {
    let ds = dataset(20);
    let provider = MockProvider::with_rules(MockRules::default());
    let cfg = RewriteConfig::default();
    let sets: Vec<_> = ds
        .samples
        .iter()
        .map(|s| {
            let texts = select_calibration_text(s, &ds.spec).unwrap();
            let cands = generate_candidates(&texts, "en", &cfg, &provider).unwrap();
            (texts, cands)
        })
        .collect();
    let templates = PromptTemplates::default();
    let slow = Slow {
        inner: MockProvider::with_rules(MockRules::default()),
        delay: Duration::from_micros(200),
    };
    let mut g = c.benchmark_group("filter_20_sets");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::new("mock", name), &mode, |b, &mode| {
            b.iter(|| {
                for (texts, cands) in &sets {
                    black_box(
                        filter_candidates_detailed(texts, cands, &provider, true, &templates, mode)
                            .unwrap(),
                    );
                }
            })
        });
        g.bench_with_input(BenchmarkId::new("mock_200us", name), &mode, |b, &mode| {
            b.iter(|| {
                for (texts, cands) in &sets {
                    black_box(
                        filter_candidates_detailed(texts, cands, &slow, true, &templates, mode)
                            .unwrap(),
                    );
                }
            })
        });
    }
    g.finish();
}

fn bench_calibrate(c: &mut Criterion) {
    let ds = dataset(40);
    let provider = MockProvider::with_rules(MockRules::default());
    let slow = Slow {
        inner: MockProvider::with_rules(MockRules::default()),
        delay: Duration::from_micros(200),
    };
    let mut g = c.benchmark_group("calibrate_40_samples");
    g.sample_size(10);
    for (name, mode) in MODES {
        let cfg = PipelineConfig {
            mode,
            ..PipelineConfig::default()
        };
        g.bench_with_input(BenchmarkId::new("mock", name), &cfg, |b, cfg| {
            b.iter(|| black_box(calibrate_dataset(&ds, cfg, &provider, &LexicalScorer).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("mock_200us", name), &cfg, |b, cfg| {
            b.iter(|| black_box(calibrate_dataset(&ds, cfg, &slow, &LexicalScorer).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_rouge, bench_filter, bench_calibrate);
criterion_main!(benches);
