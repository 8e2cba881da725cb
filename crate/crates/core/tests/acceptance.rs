//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use bytes::Bytes;
use common::{first_column, multiset, payloads, sample_oracle, Lab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamlab::dataflow::{group_window, KeyValue};
use streamlab::engine::EngineKind;
use streamlab::harness::stats::{aggregate_stats, mean_time, relative_stddev, slowdown_factor, slowdowns};
use streamlab::harness::{emit_report, run_benchmark, BenchmarkConfig, ReportMetadata, RunResult, Setup};
use streamlab::minilog::{AckMode, Broker, TopicConfig};
use streamlab::queries::{ApiKind, QueryKind, QuerySpec};

/// Published identity-query run times in seconds, ten runs each at parallelism 1 and 2.
const IDENTITY_RUNS_P1: [f64; 10] = [6.25, 21.56, 3.42, 3.31, 3.73, 12.69, 3.90, 3.96, 3.42, 3.01];
const IDENTITY_RUNS_P2: [f64; 10] = [4.15, 3.77, 2.71, 5.29, 3.00, 3.93, 2.90, 3.66, 3.57, 4.45];

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn criterion_1() -> String {
    let m1 = mean_time(&IDENTITY_RUNS_P1).unwrap();
    let m2 = mean_time(&IDENTITY_RUNS_P2).unwrap();
    assert!(rel_err(m1, 6.525) < 1e-9, "p1 mean {m1}");
    assert!(rel_err(m2, 3.743) < 1e-9, "p2 mean {m2}");
    let r1 = relative_stddev(&IDENTITY_RUNS_P1).unwrap();
    let r2 = relative_stddev(&IDENTITY_RUNS_P2).unwrap();
    assert!(r1 > 2.0 * r2, "rel stddev {r1} vs {r2}");
    format!("means {m1:.3}/{m2:.3} s, rel stddev {r1:.3} > 2 x {r2:.3}")
}

fn criterion_2() -> String {
    let table = |v: &[f64]| v.iter().enumerate().map(|(i, &x)| (i + 1, x)).collect::<BTreeMap<_, _>>();
    assert_eq!(slowdown_factor(&table(&[10.0, 20.0]), &table(&[5.0, 5.0])).unwrap(), 3.0);
    assert_eq!(slowdown_factor(&table(&[7.0, 9.0]), &table(&[7.0, 9.0])).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let ps: Vec<usize> = (1..=rng.random_range(1..6usize)).collect();
        let runs = rng.random_range(1..6usize);
        // raw run tables, reduced by hand below and by the harness
        let mut results = Vec::new();
        let mut sums: HashMap<(ApiKind, usize), u64> = HashMap::new();
        for api in ApiKind::ALL {
            for &p in &ps {
                for run_index in 0..runs {
                    let t = rng.random_range(1..5000u64);
                    *sums.entry((api, p)).or_default() += t;
                    results.push(RunResult {
                        setup: Setup {
                            engine: EngineKind::Tuple,
                            api,
                            query: QueryKind::Grep,
                            parallelism: p,
                        },
                        run_index,
                        exec_time_ms: t,
                        records_out: 2,
                        operator_invocations: None,
                        output_topic: None,
                    });
                }
            }
        }
        let mut brute = 0.0;
        for &p in &ps {
            let u = sums[&(ApiKind::Unified, p)] as f64 / runs as f64;
            let n = sums[&(ApiKind::Native, p)] as f64 / runs as f64;
            brute += u / n;
        }
        brute /= ps.len() as f64;
        let rows = slowdowns(&aggregate_stats(&results).setups);
        assert_eq!(rows.len(), 1);
        let sf = rows[0].sf.unwrap();
        assert!(rel_err(sf, brute) < 1e-9, "case {case}: {sf} vs {brute}");

        let scale = rng.random_range(0.001..1000.0);
        let u: BTreeMap<usize, f64> = ps.iter().map(|&p| (p, sums[&(ApiKind::Unified, p)] as f64)).collect();
        let n: BTreeMap<usize, f64> = ps.iter().map(|&p| (p, sums[&(ApiKind::Native, p)] as f64)).collect();
        let us: BTreeMap<usize, f64> = u.iter().map(|(&p, &v)| (p, v * scale)).collect();
        let ns: BTreeMap<usize, f64> = n.iter().map(|(&p, &v)| (p, v * scale)).collect();
        let a = slowdown_factor(&u, &n).unwrap();
        let b = slowdown_factor(&us, &ns).unwrap();
        assert!(rel_err(a, b) < 1e-9, "scaling changed sf: {a} vs {b}");
    }
    "3.0 and 1.0 exact; 1000 random tables agree with brute force; scale invariant".into()
}

fn criterion_3() -> String {
    let lab = Lab::new(10_001, 42);
    let lines = lab.lines();
    let spec = |k| QuerySpec::new(k, 7);

    let (out, _, _) = lab.run(&spec(QueryKind::Identity), ApiKind::Native, EngineKind::Tuple, 1, "c3-identity");
    assert_eq!(out.len(), 10_001);
    assert_eq!(out, lines, "identity output differs from input");

    let (out, _, _) = lab.run(&spec(QueryKind::Projection), ApiKind::Unified, EngineKind::Microbatch, 1, "c3-projection");
    let want: Vec<Bytes> = lines.iter().map(|l| first_column(l)).collect();
    assert_eq!(out, want, "projection differs from scan oracle");

    let (out, _, _) = lab.run(&spec(QueryKind::Grep), ApiKind::Unified, EngineKind::Tuple, 2, "c3-grep");
    let want: Vec<Bytes> = lines.iter().filter(|l| String::from_utf8_lossy(l).contains("test")).cloned().collect();
    assert_eq!(want.len(), 30, "corpus scan found {} matches", want.len());
    assert_eq!(out.len(), 30);
    assert_eq!(multiset(out), multiset(want));

    let (out, _, _) = lab.run(&spec(QueryKind::Sample), ApiKind::Native, EngineKind::Microbatch, 1, "c3-sample");
    let kept = sample_oracle(7, 0.4, lines.len());
    let want: Vec<Bytes> = kept.iter().map(|&i| lines[i].clone()).collect();
    assert_eq!(out, want, "sample differs from reference generator");
    assert!((4000 - 147..=4000 + 147).contains(&out.len()), "sample count {}", out.len());
    format!("identity 10001, projection 10001, grep 30, sample {} records", out.len())
}

/// The full default suite, shared by criteria 4, 6 and 7.
struct Suite {
    broker: Broker,
    results: Vec<RunResult>,
    elapsed: Duration,
    failures: usize,
}

fn run_suite() -> Suite {
    let config = BenchmarkConfig::default();
    let start = Instant::now();
    let (broker, outcome) = run_benchmark(&config).expect("benchmark runs");
    Suite {
        broker,
        elapsed: start.elapsed(),
        failures: outcome.execute.failures.len(),
        results: outcome.execute.results,
    }
}

fn criterion_4(suite: &Suite) -> String {
    assert_eq!(suite.failures, 0, "suite had failed setups");
    let mut reference: BTreeMap<QueryKind, BTreeMap<Bytes, usize>> = BTreeMap::new();
    let mut compared = 0;
    for r in &suite.results {
        let topic = suite.broker.topic(r.output_topic.as_deref().unwrap()).unwrap();
        let m = multiset(payloads(&topic));
        match reference.get(&r.setup.query) {
            None => {
                reference.insert(r.setup.query, m);
            }
            Some(want) => assert!(&m == want, "{} run {} differs", r.setup, r.run_index),
        }
        compared += 1;
    }
    let setups: std::collections::BTreeSet<_> = suite.results.iter().map(|r| r.setup).collect();
    assert_eq!(setups.len(), 32);
    format!("{compared} outputs over {} setups multiset-equal within each query", setups.len())
}

fn criterion_5() -> String {
    let lab = Lab::new(100, 1);
    let mut lines = 0;
    for kind in QueryKind::ALL {
        for engine in EngineKind::ALL {
            for p in [1, 2] {
                let build = |api, tag: &str| {
                    let target = lab.target(&format!("c5-{kind}-{engine}-{p}-{api}-{tag}"));
                    streamlab::queries::build_query(&QuerySpec::new(kind, 7), api, engine, p, &target)
                        .unwrap()
                        .plan
                };
                let native = build(ApiKind::Native, "a");
                let unified = build(ApiKind::Unified, "a");
                assert!(
                    unified.node_count() >= native.node_count() + 3,
                    "{kind} {engine} p{p}: {} vs {}",
                    unified.node_count(),
                    native.node_count()
                );
                if kind == QueryKind::Grep {
                    assert_eq!(native.node_count(), 3);
                    if engine == EngineKind::Tuple {
                        assert_eq!(unified.node_count(), 7);
                    }
                }
                for (api, plan) in [(ApiKind::Native, native), (ApiKind::Unified, unified)] {
                    let again = build(api, "b");
                    assert_eq!(plan.dump().as_bytes(), again.dump().as_bytes(), "dump not deterministic");
                    assert_eq!(streamlab::dataflow::ExecutionPlan::parse(&plan.dump()).unwrap(), plan);
                    lines += 1;
                }
            }
        }
    }
    format!("native grep 3 nodes, unified grep 7 nodes, {lines} plans deterministic")
}

fn criterion_6(suite: &Suite) -> String {
    let by_setup: HashMap<(Setup, usize), &RunResult> = suite.results.iter().map(|r| ((r.setup, r.run_index), r)).collect();
    let mut checked = 0;
    for r in suite.results.iter().filter(|r| r.setup.api == ApiKind::Unified) {
        let native = by_setup[&(Setup { api: ApiKind::Native, ..r.setup }, r.run_index)];
        let records_in = 10_001f64;
        let u = r.operator_invocations.unwrap() as f64 / records_in;
        let n = native.operator_invocations.unwrap() as f64 / records_in;
        assert!(u > n, "{} run {}: {u} <= {n} invocations per record", r.setup, r.run_index);
        checked += 1;
    }
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(dir.path(), &suite.results, &[], &ReportMetadata::default()).unwrap();
    let csv = std::fs::read_to_string(&files.slowdown).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("engine,query,sf,unified_mean_ms,native_mean_ms"));
    assert_eq!(rows.count(), 8);
    for row in &files.slowdowns {
        assert!(row.unified_mean_ms >= 0.0 && row.native_mean_ms >= 0.0);
    }
    assert!(suite.results.len() == 320, "{} runs", suite.results.len());
    assert!(suite.elapsed < Duration::from_secs(15 * 60), "suite took {:?}", suite.elapsed);
    format!(
        "{checked} unified runs above native invocations/record; 320 runs in {:.1} s",
        suite.elapsed.as_secs_f64()
    )
}

fn criterion_7(suite: &Suite) -> String {
    let broker = Arc::new(Broker::new());
    let topic = broker.create_topic(TopicConfig::new("stress")).unwrap();
    thread::scope(|s| {
        for w in 0..4 {
            let topic = topic.clone();
            s.spawn(move || {
                for i in 0..2500 {
                    topic.append(0, format!("{w}-{i}"), AckMode::Confirmed).unwrap();
                }
            });
        }
    });
    let entries = topic.read(0, 0, 20_000).unwrap();
    assert_eq!(entries.len(), 10_000);
    for (i, e) in entries.iter().enumerate() {
        assert_eq!(e.offset, i as u64, "offset gap");
    }
    assert!(entries.windows(2).all(|w| w[0].append_ts <= w[1].append_ts), "timestamps decrease");
    assert_eq!(multiset(entries.iter().map(|e| e.payload.clone())).len(), 10_000);

    for r in &suite.results {
        let topic = suite.broker.topic(r.output_topic.as_deref().unwrap()).unwrap();
        let n = topic.high_water_mark(0).unwrap() as usize;
        let log = topic.read(0, 0, n).unwrap();
        let post_hoc = match (log.first(), log.last()) {
            (Some(a), Some(b)) => b.append_ts - a.append_ts,
            _ => 0,
        };
        assert_eq!(r.exec_time_ms, post_hoc, "{} run {}", r.setup, r.run_index);
    }
    format!("10^4 concurrent appends dense and ordered; {} run times match the log", suite.results.len())
}

fn criterion_8() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let len = rng.random_range(0..200usize);
        let keys = rng.random_range(1..20u8);
        let items: Vec<KeyValue> = (0..len)
            .map(|i| KeyValue {
                key: Bytes::from(vec![b'k', rng.random_range(0..keys)]),
                value: Bytes::from(i.to_string()),
            })
            .collect();
        let mut oracle: HashMap<Bytes, Vec<Bytes>> = HashMap::new();
        for kv in &items {
            oracle.entry(kv.key.clone()).or_default().push(kv.value.clone());
        }
        let groups = group_window(items);
        assert_eq!(groups.len(), oracle.len(), "case {case}: group count");
        for g in groups {
            assert_eq!(Some(&g.values), oracle.get(&g.key), "case {case}: key {:?}", g.key);
        }
    }

    // Flatten: output cardinality is the sum of branch cardinalities.
    use streamlab::unified::{translate, ElementKind, Input, PTransform, Pipeline, Runner};
    let lab = Lab::new(600, 4);
    let lines = lab.lines();
    for case in 0..40u64 {
        let branches = rng.random_range(1..5usize);
        let out = lab.broker.create_topic(TopicConfig::new(format!("c8-{case}"))).unwrap();
        let mut pipe = Pipeline::new(case);
        let src = pipe.apply(Input::Root, PTransform::read_from_log(lab.input.clone(), 600)).unwrap();
        let mut legs = Vec::new();
        let mut expected = 0;
        for b in 0..branches {
            let m = rng.random_range(1..6u8);
            let copies = rng.random_range(0..3usize);
            let leg = pipe
                .apply(
                    src,
                    PTransform::par_do(format!("Leg{b}"), ElementKind::Bytes, ElementKind::Bytes, move |e, out| {
                        if e.datum.as_bytes()?.len() % m as usize == 0 {
                            for _ in 0..copies {
                                out.push(e.clone());
                            }
                        }
                        Ok(())
                    }),
                )
                .unwrap();
            legs.push(leg);
            expected += lines.iter().filter(|l| l.len() % m as usize == 0).count() * copies;
        }
        let merged = pipe.apply(legs, PTransform::Flatten).unwrap();
        pipe.apply(merged, PTransform::write_to_log(out.clone())).unwrap();
        let runner = if case % 2 == 0 {
            Runner::Tuple
        } else {
            Runner::Microbatch(Default::default())
        };
        let p = 1 + (case as usize % 3);
        translate(&pipe, runner, p).unwrap().job.execute().unwrap();
        assert_eq!(out.high_water_mark(0).unwrap() as usize, expected, "flatten case {case}");
    }
    "1000 random windows match hash-map oracle; 40 flatten cases additive".into()
}

fn check(id: usize, name: &str, f: impl FnOnce() -> String) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {id} [{name}]: PASS ({secs:.2} s) {detail}");
            true
        }
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("criterion {id} [{name}]: FAIL ({secs:.2} s) {msg}");
            false
        }
    }
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    let mut ok = true;
    ok &= check(1, "published run-time arithmetic", criterion_1);
    ok &= check(2, "slowdown formula", criterion_2);
    ok &= check(3, "query oracles", criterion_3);
    let suite = panic::catch_unwind(run_suite);
    match suite {
        Ok(suite) => {
            ok &= check(4, "cross-implementation equivalence", || criterion_4(&suite));
            ok &= check(5, "plan shapes", criterion_5);
            ok &= check(6, "overhead direction", || criterion_6(&suite));
            ok &= check(7, "broker metrology", || criterion_7(&suite));
        }
        Err(_) => {
            for (id, name) in [(4, "cross-implementation equivalence"), (6, "overhead direction"), (7, "broker metrology")] {
                println!("criterion {id} [{name}]: FAIL default suite did not run");
            }
            check(5, "plan shapes", criterion_5);
            ok = false;
        }
    }
    ok &= check(8, "groupbykey and flatten", criterion_8);
    if !ok {
        std::process::exit(1);
    }
}
