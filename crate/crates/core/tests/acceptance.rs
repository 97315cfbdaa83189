//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line per criterion and exits nonzero if any fails.
//!
//! Every simulation is run twice; the second pass feeds the determinism
//! criterion, which compares CSV rows and SHA-256 digests of every trace
//! stream.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use ubrsim::adaptation::{cells_for, Frame, Reassembler};
use ubrsim::harness::{self, HarnessConfig};
use ubrsim::metrics::{fairness_index, max_tcp_throughput};
use ubrsim::report::{write_csv, CsvRow};
use ubrsim::scenario::{Buffer, Preset, ScenarioConfig, SweepSpec};
use ubrsim::sim::{run_batch, run_scenario, RunOutput, TraceSinks};
use ubrsim::switch::{DropPolicy, DropReason, PolicyKind, Ratio, Verdict};
use ubrsim::tcp::{CcVariant, TcpSegment};
use ubrsim::trace::{Record, Schema, Sink, TraceReader};

struct Verdicts {
    lines: Vec<(bool, String, String)>,
}

impl Verdicts {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((pass, name.to_string(), detail));
    }
}

/// What one execution of a scenario produced, reduced to comparable form.
#[derive(PartialEq, Eq, Debug)]
struct Fingerprint {
    row: CsvRow,
    digests: Vec<(Schema, u64, Option<String>)>,
}

/// Runs scenarios, keeping the first output and a fingerprint of each pass.
#[derive(Default)]
struct Runner {
    passes: BTreeMap<String, Vec<Fingerprint>>,
    ledger_failures: Vec<String>,
    runs: u32,
}

fn trace_config(cfg: &mut ScenarioConfig) {
    cfg.trace.cwnd = true;
    cfg.trace.queue = true;
    cfg.trace.drops = true;
    cfg.trace.admissions = cfg.policy != PolicyKind::TailDrop;
}

fn sinks(cfg: &ScenarioConfig) -> TraceSinks {
    // Only admissions are kept in memory; other streams are digested.
    TraceSinks::for_config(&cfg.trace, true, |schema| {
        Ok(if schema == Schema::Admission {
            Sink::Memory(Vec::new())
        } else {
            Sink::Null
        })
    })
    .expect("in-memory sinks")
}

fn fingerprint(cfg: &ScenarioConfig, out: &RunOutput) -> Fingerprint {
    Fingerprint {
        row: CsvRow::new(cfg, &out.report),
        digests: out
            .traces
            .iter()
            .map(|t| (t.schema, t.records, t.digest_hex()))
            .collect(),
    }
}

impl Runner {
    fn run(&mut self, mut cfg: ScenarioConfig) -> RunOutput {
        trace_config(&mut cfg);
        let id = cfg.scenario_id();
        let mut first = None;
        for _ in 0..2 {
            let out = run_scenario(&cfg, sinks(&cfg)).unwrap_or_else(|e| panic!("{id}: {e}"));
            self.runs += 1;
            if let Err(e) = out.report.ledger.check() {
                self.ledger_failures.push(format!("{id}: {e}"));
            }
            self.passes.entry(id.clone()).or_default().push(fingerprint(&cfg, &out));
            first.get_or_insert(out);
        }
        first.unwrap()
    }

    fn mismatches(&self) -> Vec<&str> {
        self.passes
            .iter()
            .filter(|(_, p)| p.windows(2).any(|w| w[0] != w[1]))
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

fn fairness(out: &RunOutput) -> f64 {
    out.report.fairness.0.unwrap_or(f64::NAN)
}

fn cfg(preset: Preset, n: u32, k: Buffer, policy: PolicyKind, variant: CcVariant) -> ScenarioConfig {
    ScenarioConfig::preset(preset).with(n, k, policy, variant)
}

fn criterion_1(v: &mut Verdicts, runner: &mut Runner) {
    let mut pass = true;
    let mut detail = Vec::new();
    for (n, target_q) in [(5u32, 7591u64), (15, 22831)] {
        let c = cfg(
            Preset::Lan,
            n,
            Buffer::Infinite,
            PolicyKind::TailDrop,
            CcVariant::Vanilla,
        );
        let window_cells = n as f64 * c.rcvwnd as f64 / c.mss as f64 * cells_for(c.mss as u64, 0) as f64;
        let t = Instant::now();
        let out = runner.run(c);
        let r = &out.report;
        let q_ok = (r.max_queue as f64 - target_q as f64).abs() <= 0.15 * target_q as f64;
        let law_ok = (target_q as f64 - window_cells).abs() <= 0.10 * window_cells;
        let ok = r.efficiency >= 0.98 && fairness(&out) >= 0.99 && q_ok && law_ok && t.elapsed().as_secs() < 120;
        pass &= ok;
        detail.push(format!(
            "N={n} E={:.4} F={:.6} max_queue={} (target {target_q}, sum of windows {window_cells:.0} cells)",
            r.efficiency,
            fairness(&out),
            r.max_queue
        ));
    }
    v.record("criterion 1 zero-loss buffer law", pass, detail.join("; "));
}

/// LAN 15-source, K = 1000 runs shared by criteria 2 and 4.
fn lan15_k1000(runner: &mut Runner, policy: PolicyKind) -> RunOutput {
    runner.run(cfg(Preset::Lan, 15, Buffer::Cells(1000), policy, CcVariant::Vanilla))
}

fn criterion_2(v: &mut Verdicts, runs: &BTreeMap<PolicyKind, RunOutput>) {
    let e = |p: PolicyKind| runs[&p].report.efficiency;
    let f = |p: PolicyKind| fairness(&runs[&p]);
    let (tail, epd, sd) = (
        e(PolicyKind::TailDrop),
        e(PolicyKind::Epd),
        e(PolicyKind::SelectiveDrop),
    );
    let ordering = tail < epd && epd < sd;
    let fair = f(PolicyKind::SelectiveDrop) > f(PolicyKind::Epd);
    let soft: Vec<String> = [(tail, 0.22, "tail"), (epd, 0.55, "epd"), (sd, 0.76, "selective_drop")]
        .iter()
        .map(|&(got, target, name)| {
            let within = (got - target).abs() <= 0.15;
            format!(
                "{name} {got:.3} vs {target} {}",
                if within { "within 0.15" } else { "outside 0.15" }
            )
        })
        .collect();
    v.record(
        "criterion 2 vanilla policy ordering",
        ordering && fair,
        format!(
            "E tail {tail:.3} < epd {epd:.3} < sd {sd:.3}: {ordering}; F sd {:.4} > epd {:.4}: {fair}; soft check: {}",
            f(PolicyKind::SelectiveDrop),
            f(PolicyKind::Epd),
            soft.join(", ")
        ),
    );
}

fn average_efficiency(
    runner: &mut Runner,
    preset: Preset,
    ks: [u64; 2],
    policy: PolicyKind,
    variant: CcVariant,
) -> f64 {
    let mut sum = 0.0;
    for n in [5, 15] {
        for k in ks {
            sum += runner
                .run(cfg(preset, n, Buffer::Cells(k), policy, variant))
                .report
                .efficiency;
        }
    }
    sum / 4.0
}

fn criterion_3(v: &mut Verdicts, runner: &mut Runner) {
    let lan = [1000, 3000];
    let wan = [12000, 36000];
    let lan_vanilla = average_efficiency(runner, Preset::Lan, lan, PolicyKind::Epd, CcVariant::Vanilla);
    let lan_reno = average_efficiency(runner, Preset::Lan, lan, PolicyKind::Epd, CcVariant::Reno);
    let wan_vanilla = average_efficiency(runner, Preset::Wan, wan, PolicyKind::TailDrop, CcVariant::Vanilla);
    let wan_reno = average_efficiency(runner, Preset::Wan, wan, PolicyKind::TailDrop, CcVariant::Reno);
    let uplift = lan_reno - lan_vanilla;
    v.record(
        "criterion 3 reno lan uplift / wan degradation",
        uplift >= 0.15 && wan_reno < wan_vanilla,
        format!(
            "LAN EPD reno {lan_reno:.3} - vanilla {lan_vanilla:.3} = {uplift:.3} (need >= 0.15); \
             WAN tail reno {wan_reno:.3} < vanilla {wan_vanilla:.3}: {}",
            wan_reno < wan_vanilla
        ),
    );
}

/// Independent re-evaluation of a frame-start decision.
fn oracle(policy: &DropPolicy, k: u64, x: u64, y: u64, na: u64) -> Verdict {
    let exceeds = |r: u64, z: Ratio, dynamic: bool| -> bool {
        if x <= r {
            return false;
        }
        // Y·Na/X > Z·(K−R)/(X−R), or > Z without the dynamic factor.
        let (x, y, na, r, k) = (x as u128, y as u128, na as u128, r as u128, k as u128);
        let (zn, zd) = (z.num() as u128, z.den() as u128);
        if dynamic {
            y * na * (x - r) * zd > zn * (k - r) * x
        } else {
            y * na * zd > zn * x
        }
    };
    let policy_drop = match *policy {
        DropPolicy::TailDrop => None,
        DropPolicy::Epd { r } => (x > r).then_some(DropReason::EpdThreshold),
        DropPolicy::SelectiveDrop { r, z } => exceeds(r, z, false).then_some(DropReason::LoadRatio),
        DropPolicy::Fba { r, z } => exceeds(r, z, true).then_some(DropReason::FbaThreshold),
    };
    match policy_drop {
        Some(reason) => Verdict::Drop(reason),
        None if x >= k => Verdict::Drop(DropReason::Tail),
        None => Verdict::Accept,
    }
}

fn criterion_4(v: &mut Verdicts, runs: &BTreeMap<PolicyKind, RunOutput>) {
    let mut pass = true;
    let mut detail = Vec::new();
    for policy in [PolicyKind::Epd, PolicyKind::SelectiveDrop, PolicyKind::Fba] {
        let c = cfg(Preset::Lan, 15, Buffer::Cells(1000), policy, CcVariant::Vanilla);
        let dp = c.drop_policy().unwrap();
        let k = c.buffer.capacity();
        let bytes = runs[&policy]
            .trace(Schema::Admission)
            .and_then(|t| t.bytes.clone())
            .expect("admission trace kept in memory");
        let (mut decisions, mut mismatches, mut drops) = (0u64, 0u64, 0u64);
        for rec in TraceReader::new(&bytes[..]).expect("admission trace header") {
            let Record::Admission {
                verdict,
                x,
                y,
                n_active,
                ..
            } = rec.expect("admission record")
            else {
                panic!("non-admission record in admission trace");
            };
            decisions += 1;
            if verdict != Verdict::Accept {
                drops += 1;
            }
            if oracle(&dp, k, x, y, n_active) != verdict {
                mismatches += 1;
            }
        }
        pass &= decisions >= 10_000 && mismatches == 0;
        detail.push(format!(
            "{policy}: {decisions} decisions ({drops} drops), {mismatches} mismatches"
        ));
    }
    v.record("criterion 4 drop-inequality oracle", pass, detail.join("; "));
}

fn criterion_5(v: &mut Verdicts) {
    let mut checks: Vec<(String, bool)> = Vec::new();
    let mss = 512u64;
    let mut timeout_records = Vec::new();

    let cfg = HarnessConfig::new(CcVariant::Reno).drop_block(300, 1);
    let out = harness::run(&cfg).unwrap();
    let ep = out.episodes.first();
    let a = out.timeouts.is_empty()
        && ep.is_some_and(|e| {
            let target = e.cwnd_before.min(cfg.rcvwnd) / 2;
            e.cwnd_after.is_some_and(|c| c.abs_diff(target) <= mss)
        });
    checks.push((
        format!(
            "(a) reno single loss: timeouts {}, cwnd {:?} -> {:?}",
            out.timeouts.len(),
            ep.map(|e| e.cwnd_before),
            ep.and_then(|e| e.cwnd_after)
        ),
        a,
    ));
    timeout_records.extend(out.timeouts.iter().map(|t| (cfg.rcvwnd, *t)));

    let cfg = HarnessConfig::new(CcVariant::Reno).drop_block(300, 3);
    let out = harness::run(&cfg).unwrap();
    checks.push((
        format!(
            "(b) reno 3 losses: {} fast retransmits, {} timeouts",
            out.fast_retransmits,
            out.timeouts.len()
        ),
        !out.timeouts.is_empty(),
    ));
    timeout_records.extend(out.timeouts.iter().map(|t| (cfg.rcvwnd, *t)));

    for k in 2..=4u64 {
        let cfg = HarnessConfig::new(CcVariant::NewReno).drop_block(300, k);
        let out = harness::run(&cfg).unwrap();
        let ep = out.episodes.first();
        let rtts = ep.and_then(|e| e.duration_rtts(cfg.base_rtt()));
        let ok = out.timeouts.is_empty()
            && out.episodes.len() == 1
            && ep.is_some_and(|e| e.rounds.abs_diff(k as u32) <= 1)
            && rtts.is_some_and(|r| (r - k as f64).abs() <= 1.0);
        checks.push((
            format!(
                "(c) newreno {k} losses: rounds {:?}, {:.2} rtt, timeouts {}",
                ep.map(|e| e.rounds),
                rtts.unwrap_or(f64::NAN),
                out.timeouts.len()
            ),
            ok,
        ));
        timeout_records.extend(out.timeouts.iter().map(|t| (cfg.rcvwnd, *t)));
    }

    let probe = harness::run(&HarnessConfig::new(CcVariant::Sack)).unwrap();
    let block = probe.cwnd_at_send(300).unwrap() / mss / 4;
    let cfg = HarnessConfig::new(CcVariant::Sack).drop_block(300, block);
    let out = harness::run(&cfg).unwrap();
    let ep = out.episodes.first();
    let rtt = cfg.base_rtt();
    let d = out.timeouts.is_empty()
        && out.episodes.len() == 1
        && ep.is_some_and(|e| e.rounds == 1 && e.last_retransmit.as_nanos() - e.start.as_nanos() <= rtt.as_nanos());
    checks.push((
        format!(
            "(d) sack block of {block} segments: rounds {:?}, retransmissions done {:.2} rtt after detection, timeouts {}",
            ep.map(|e| e.rounds),
            ep.map_or(f64::NAN, |e| (e.last_retransmit.as_nanos() - e.start.as_nanos()) as f64
                / rtt.as_nanos() as f64),
            out.timeouts.len()
        ),
        d,
    ));
    timeout_records.extend(out.timeouts.iter().map(|t| (cfg.rcvwnd, *t)));

    for (variant, rcvwnd) in [
        (CcVariant::Vanilla, 1 << 22),
        (CcVariant::Vanilla, 20_000),
        (CcVariant::Sack, 1 << 22),
    ] {
        let mut cfg = HarnessConfig::new(variant).drop_block(300, 40);
        cfg.rcvwnd = rcvwnd;
        let out = harness::run(&cfg).unwrap();
        timeout_records.extend(out.timeouts.iter().map(|t| (cfg.rcvwnd, *t)));
    }
    let exact = timeout_records
        .iter()
        .all(|(rcvwnd, t)| t.cwnd_after == mss && t.ssthresh_after == (t.cwnd_before / 2).min(*rcvwnd).max(2 * mss));
    let capped = timeout_records.iter().any(|(rcvwnd, t)| t.cwnd_before / 2 > *rcvwnd);
    checks.push((
        format!(
            "(e) {} timeouts checked ({} with the window cap active)",
            timeout_records.len(),
            if capped { "some" } else { "none" }
        ),
        exact && timeout_records.len() >= 3 && capped,
    ));

    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail: Vec<String> = checks
        .into_iter()
        .map(|(d, ok)| format!("{d} [{}]", if ok { "ok" } else { "fail" }))
        .collect();
    v.record("criterion 5 tcp trajectories", pass, detail.join("; "));
}

fn criterion_6(v: &mut Verdicts) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed);
    let mut pass = true;
    let mut worst = 0.0f64;
    for n in 1..=64usize {
        let e = vec![1.0; n];
        pass &= fairness_index(&vec![3.7; n], &e) == Some(1.0);
        let mut single = vec![0.0; n];
        single[n / 2] = 42.0;
        pass &= fairness_index(&single, &e) == Some(1.0 / n as f64);
    }
    for _ in 0..1000 {
        let n = rng.gen_range(1..=100);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..200.0)).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..50.0)).collect();
        let scale = rng.gen_range(1e-3..1e3);
        let xs: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let es: Vec<f64> = e.iter().map(|v| v * scale).collect();
        let base = fairness_index(&x, &e).unwrap();
        for scaled in [fairness_index(&xs, &e).unwrap(), fairness_index(&xs, &es).unwrap()] {
            worst = worst.max(((scaled - base) / base).abs());
        }
    }
    pass &= worst <= 1e-12;
    let c = max_tcp_throughput(155.52, 512);
    pass &= (125.1..=125.3).contains(&c);
    v.record(
        "criterion 6 metrics algebra",
        pass,
        format!("equal and single-winner vectors exact; worst scale drift {worst:.2e}; C(155.52, 512) = {c:.4} Mbps"),
    );
}

fn criterion_7(v: &mut Verdicts, runner: &Runner) {
    let cells = cells_for(512, 0);
    let mut r = Reassembler::new(1);
    let mut seq = 0;
    let sent: Vec<Frame> = (0..1000u32)
        .map(|i| {
            let f = Frame::new(i, TcpSegment::data(0, seq, 512));
            seq += 512;
            r.expect(f.clone());
            f
        })
        .collect();
    let got: Vec<Frame> = sent
        .iter()
        .flat_map(|f| f.cells().collect::<Vec<_>>())
        .filter_map(|c| r.reassemble(c))
        .collect();
    let round_trip = got == sent && r.wasted_bytes() == 0;
    let ledger = runner.ledger_failures.is_empty();
    v.record(
        "criterion 7 segmentation and conservation",
        cells == 12 && round_trip && ledger,
        format!(
            "512-byte segment -> {cells} cells; 1000-segment lossless round trip identical: {round_trip}; \
             ledger balanced on {} of {} runs{}",
            runner.runs as usize - runner.ledger_failures.len(),
            runner.runs,
            if ledger {
                String::new()
            } else {
                format!(" ({})", runner.ledger_failures.join("; "))
            }
        ),
    );
}

fn sweep_csv(configs: &[ScenarioConfig], workers: usize) -> (Vec<u8>, Vec<Vec<Option<String>>>) {
    let outs = run_batch(configs, workers, |_, c| {
        run_scenario(c, TraceSinks::hashed(&c.trace)).unwrap()
    });
    let rows: Vec<CsvRow> = configs
        .iter()
        .zip(&outs)
        .map(|(c, o)| CsvRow::new(c, &o.report))
        .collect();
    let mut csv = Vec::new();
    write_csv(&mut csv, &rows).unwrap();
    let digests = outs
        .iter()
        .map(|o| o.traces.iter().map(|t| t.digest_hex()).collect())
        .collect();
    (csv, digests)
}

fn criterion_8(v: &mut Verdicts, runner: &Runner) {
    let mismatches = runner.mismatches();
    let spec = SweepSpec::parse(
        "preset = lan\nduration_ms = 1000\ntrace_admissions = true\n\
         n_sources = 5, 15\npolicy = epd, selective_drop, fba\nvariant = vanilla, sack\nbuffer_cells = 1000\n",
    )
    .unwrap();
    let configs = spec.expand().unwrap();
    let one = sweep_csv(&configs, 1);
    let four = sweep_csv(&configs, 4);
    let sweep_ok = one == four;
    v.record(
        "criterion 8 determinism",
        mismatches.is_empty() && sweep_ok,
        format!(
            "{} scenarios run twice, {} differ{}; {}-member sweep at parallelism 1 vs 4 identical: {sweep_ok}",
            runner.passes.len(),
            mismatches.len(),
            if mismatches.is_empty() {
                String::new()
            } else {
                format!(" ({})", mismatches.join(", "))
            },
            configs.len()
        ),
    );
}

fn large_n(v: &mut Verdicts, runner: &mut Runner) {
    let base = ScenarioConfig::wan();
    // One round trip of link-rate cells.
    let bits = base.rtt_propagation().as_nanos() as u128 * base.link_rate_bps as u128 / 1_000_000_000;
    let k = ((bits + 212) / 424) as u64;
    let out = runner.run(base.with(50, Buffer::Cells(k), PolicyKind::SelectiveDrop, CcVariant::Sack));
    let (e, f) = (out.report.efficiency, fairness(&out));
    v.record(
        "large-N 50-source WAN SACK + selective drop",
        e >= 0.9 && f >= 0.95,
        format!("K={k} E={e:.4} (need >= 0.9) F={f:.4} (need >= 0.95)"),
    );
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut v = Verdicts { lines: Vec::new() };
    let mut runner = Runner::default();

    criterion_1(&mut v, &mut runner);
    let lan15: BTreeMap<PolicyKind, RunOutput> = PolicyKind::ALL
        .into_iter()
        .map(|p| (p, lan15_k1000(&mut runner, p)))
        .collect();
    criterion_2(&mut v, &lan15);
    criterion_3(&mut v, &mut runner);
    criterion_4(&mut v, &lan15);
    criterion_5(&mut v);
    criterion_6(&mut v);
    large_n(&mut v, &mut runner);
    criterion_7(&mut v, &runner);
    criterion_8(&mut v, &runner);

    let failed: Vec<&str> = v.lines.iter().filter(|l| !l.0).map(|l| l.1.as_str()).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        v.lines.len() - failed.len(),
        v.lines.len(),
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
