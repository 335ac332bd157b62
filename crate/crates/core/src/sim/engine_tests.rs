use super::*;
use crate::graph::build_graph;
use crate::units::{GIB, MIB};

fn chain(n: usize, work: f64, mem_mb: f64) -> ResourceGraph {
    let computes: Vec<String> = (0..n)
        .map(|i| {
            format!(
                r#"{{"id": "c{i}", "base_work_cpu_s": {work}, "parallelism": [[1.0, 1.0]], "peak_mem_local_mb": {mem_mb}}}"#
            )
        })
        .collect();
    let triggers: Vec<String> = (1..n)
        .map(|i| format!(r#"["c{}", "c{i}"]"#, i - 1))
        .collect();
    build_graph(&format!(
        r#"{{"app": "chain", "app_limit": {{"max_cpu": 8, "max_mem_mb": 65536}},
            "computes": [{}], "triggers": [{}]}}"#,
        computes.join(","),
        triggers.join(",")
    ))
    .unwrap()
}

fn one_server() -> ClusterConfig {
    ClusterConfig::uniform(1, 1, 32, 64 * 1024)
}

fn run_one(g: &ResourceGraph, cfg: &SimConfig, dep: &mut Deployment) -> RunOutput {
    let wl = Workload::single(g.clone(), [(0.0, 1.0)]);
    run(&one_server(), &wl, cfg, dep).unwrap()
}

#[test]
fn single_component_closed_form() {
    let g = build_graph(
        r#"{"app": "solo", "app_limit": {"max_cpu": 8, "max_mem_mb": 4096},
            "computes": [{"id": "f", "base_work_cpu_s": 2.0, "parallelism": [[1.0, 2.0]], "peak_mem_local_mb": 100}]}"#,
    )
    .unwrap();
    let cfg = SimConfig::default();
    let out = run_one(&g, &cfg, &mut Deployment::new());
    let m = &out.report.invocations[0];
    let lat = cfg.sched.msg_latency_s;
    // two instances of 2 s each on two vCPUs
    let e2e = lat + cfg.cost.cold_start_s + 2.0;
    assert!(m.finished);
    assert!((m.end_to_end_s - e2e).abs() < 1e-9, "{}", m.end_to_end_s);
    // fixed 256 MiB container held from placement to finish
    let expect = 256.0 * MIB as f64 * e2e / GIB as f64 / 60.0;
    assert!(
        (m.mem_gb_min - expect).abs() < 1e-9,
        "{} vs {expect}",
        m.mem_gb_min
    );
    assert!((m.cpu_core_s - 2.0 * e2e).abs() < 1e-9);
    assert_eq!(m.executions, [1]);
}

#[test]
fn prelaunch_hides_cold_starts() {
    let g = chain(4, 1.0, 10.0);
    let mut dep = Deployment::new();
    let mut cfg = SimConfig::default();
    cfg.sched.reuse_container = false;
    run_one(&g, &cfg, &mut dep);
    let warm = dep.clone();

    let on = run_one(&g, &cfg, &mut warm.clone()).report.invocations[0].end_to_end_s;
    cfg.sched.prelaunch = false;
    let off = run_one(&g, &cfg, &mut warm.clone()).report.invocations[0].end_to_end_s;
    assert!((off - (4.0 * 0.5 + 4.0)).abs() < 0.01, "off {off}");
    assert!((on - (0.5 + 4.0)).abs() < 0.01, "on {on}");
}

#[test]
fn container_reuse_skips_cold_starts() {
    let g = chain(3, 1.0, 10.0);
    let cfg = SimConfig::default();
    let out = run_one(&g, &cfg, &mut Deployment::new());
    let e2e = out.report.invocations[0].end_to_end_s;
    // one cold start, then continuations in the same container
    assert!((e2e - 3.5).abs() < 0.01, "{e2e}");
}

#[test]
fn runs_are_deterministic() {
    let g = chain(5, 0.5, 300.0);
    let wl = Workload::single(
        g,
        (0..20).map(|i| (f64::from(i) * 0.3, 1.0 + f64::from(i % 3))),
    );
    let cfg = SimConfig::default();
    let a = run(&one_server(), &wl, &cfg, &mut Deployment::new()).unwrap();
    let b = run(&one_server(), &wl, &cfg, &mut Deployment::new()).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert!(!a.events.is_empty());
}

#[test]
fn crash_restarts_after_recorded_prefix() {
    let g = chain(3, 1.0, 10.0);
    let mut cfg = SimConfig::default();
    cfg.sched.reuse_container = false;
    let clean = run_one(&g, &cfg, &mut Deployment::new()).report;

    // c1 runs during roughly [2.0, 3.0]
    cfg.failures = vec!["c1@2.5".parse().unwrap()];
    let crashed = run_one(&g, &cfg, &mut Deployment::new()).report;
    let m = &crashed.invocations[0];
    assert!(m.finished);
    assert_eq!(m.executions, [1, 2, 1]);
    assert_eq!(m.recoveries, 1);
    assert_eq!(m.output_digest, clean.invocations[0].output_digest);
    assert_eq!(crashed.recoveries[0].prefix, ["c0"]);
    assert_eq!(crashed.recoveries[0].frontier, ["c1"]);
    assert!(m.end_to_end_s > clean.invocations[0].end_to_end_s);
}

#[test]
fn failure_with_nothing_running_is_ignored() {
    let g = chain(2, 1.0, 10.0);
    let mut cfg = SimConfig::default();
    cfg.failures = vec!["c1@100".parse().unwrap()];
    let r = run_one(&g, &cfg, &mut Deployment::new()).report;
    assert_eq!(r.invocations[0].recoveries, 0);
    assert_eq!(r.invocations[0].executions, [1, 1]);
}

#[test]
fn faas_crash_restarts_everything() {
    let g = chain(3, 1.0, 10.0);
    let mut cfg = SimConfig::with_policy(Policy::FaasPeak);
    let clean = run_one(&g, &cfg, &mut Deployment::new()).report;
    cfg.failures = vec!["c1@1.7".parse().unwrap()];
    let r = run_one(&g, &cfg, &mut Deployment::new()).report;
    assert_eq!(r.invocations[0].executions, [2, 2, 1]);
    assert_eq!(
        r.invocations[0].output_digest,
        clean.invocations[0].output_digest
    );
}

#[test]
fn autoscale_grows_cpu_bound_component() {
    let g = build_graph(
        r#"{"app": "wide", "app_limit": {"max_cpu": 16, "max_mem_mb": 4096},
            "computes": [{"id": "f", "base_work_cpu_s": 1.0, "parallelism": [[1.0, 8.0]], "peak_mem_local_mb": 100}]}"#,
    )
    .unwrap();
    // history claiming half the CPU sat idle trims the request to 4 vCPUs
    let mut dep = Deployment::new();
    dep.profiles.record(
        crate::history::ProfileKey::component("wide", 0),
        crate::history::UsageSample {
            invocation_id: 0,
            peak_cpu: 8.0,
            peak_mem: 100 * MIB,
            exec_time: 1.0,
            mean_cpu_util: 0.5,
        },
    );
    let cfg = SimConfig::default();
    let out = run_one(&g, &cfg, &mut dep.clone());
    let scaled = out.events.matches("cpu_scale").count();
    assert!(scaled >= 1);
    let with = out.report.invocations[0].end_to_end_s;
    // 8 s of work on 4 vCPUs would take 2 s without scaling
    assert!(with < 0.5 + 2.0, "{with}");
}

#[test]
fn faas_holds_peak_for_whole_invocation() {
    let g = chain(3, 1.0, 2048.0);
    let cfg = SimConfig::with_policy(Policy::FaasPeak);
    let mut dep = Deployment::new();
    run_one(&g, &cfg, &mut dep);
    let r = run_one(&g, &cfg, &mut dep).report;
    let m = &r.invocations[0];
    // peak 2 GiB rounds strictly above to 2 GiB + one granule
    let mem = 2.0 + 64.0 / 1024.0;
    assert!((m.mem_gb_min - mem * m.end_to_end_s / 60.0).abs() < 1e-9);
    assert!(
        (m.end_to_end_s - (0.5 + 3.0 + 0.0002)).abs() < 1e-6,
        "{}",
        m.end_to_end_s
    );
}

#[test]
fn data_grows_in_steps_near_its_creator() {
    let g = build_graph(
        r#"{"app": "d", "app_limit": {"max_cpu": 8, "max_mem_mb": 65536},
            "computes": [
                {"id": "w", "base_work_cpu_s": 1.0, "parallelism": [[1.0, 1.0]], "peak_mem_local_mb": 10,
                 "accesses": [{"data": "buf", "volume_mb": 100}]},
                {"id": "r", "base_work_cpu_s": 1.0, "parallelism": [[1.0, 1.0]], "peak_mem_local_mb": 10,
                 "accesses": [{"data": "buf", "volume_mb": 100}]}],
            "datas": [{"id": "buf", "size_mb": [[1.0, 1000.0]], "growth": [[0.5, 500.0]]}],
            "triggers": [["w", "r"]]}"#,
    )
    .unwrap();
    let out = run_one(&g, &SimConfig::default(), &mut Deployment::new());
    let m = &out.report.invocations[0];
    assert!(m.finished);
    assert_eq!(m.local_access_fraction, 1.0);
    // 256 MiB initial, 64 MiB steps up past 1500 MiB
    let chunks = out.events.matches(r#""comp":"buf""#).count();
    assert!(chunks > 10, "{chunks}");
}
