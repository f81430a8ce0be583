import math
import os
import random
import subprocess
import sys
import time

import pytest
from hypothesis import given, settings, strategies as st

from shmpubsub.bench import cli
from shmpubsub.bench.report import (
    build_report,
    emit_csv,
    emit_plot_script,
    emit_summary,
    emit_table,
    load_report,
    parse_csv,
)
from shmpubsub.bench.runner import run_scenario
from shmpubsub.bench.scenario import DEFAULT_SWEEP, Graph, LatencyRecord, Scenario, format_size, parse_size
from shmpubsub.bench.stats import Quantiles, coefficient_of_variation, compute_stats, fairness_gap, nearest_rank
from shmpubsub.bench.system import (
    affinity,
    cpu_count,
    measure_cpu,
    parse_pin_map,
    pin_process,
    reap_with_rusage,
    sleep_until,
)


def oracle_quantile(values, q):
    # Full sort, then element ceil(q*N) counted from 1 (first element for q=0).
    data = sorted(values)
    k = math.ceil(q * len(data))
    return data[max(k, 1) - 1]


def recs(latencies, pub="pub0", sub="sub0", start=0):
    return [LatencyRecord("cam0", pub, sub, start + i, v, i) for i, v in enumerate(latencies)]


# -- stats -------------------------------------------------------------------


def test_median_of_five():
    q = compute_stats(recs([1, 2, 3, 4, 5]))[("pub0", "sub0")]
    assert q.median == 3 and q.min == 1 and q.max == 5 and q.count == 5


def test_single_record_all_quantiles_equal():
    q = Quantiles.of([42])
    assert {q.min, q.p25, q.median, q.p75, q.p95, q.p99, q.max} == {42}


def test_empty_is_an_error():
    with pytest.raises(ValueError):
        compute_stats([])
    with pytest.raises(ValueError):
        nearest_rank([], 0.5)


def test_p95_of_2000_uniform_matches_oracle():
    rng = random.Random(7)
    vals = [rng.randrange(10**6) for _ in range(2000)]
    q = compute_stats(recs(vals))[("pub0", "sub0")]
    assert q.p95 == sorted(vals)[math.ceil(0.95 * 2000) - 1]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=300))
def test_quantiles_match_oracle(vals):
    q = Quantiles.of(vals)
    for name, p in (("min", 0), ("p25", .25), ("median", .5), ("p75", .75), ("p95", .95), ("p99", .99), ("max", 1)):
        assert getattr(q, name) == oracle_quantile(vals, p)
    assert q.min <= q.p25 <= q.median <= q.p75 <= q.p95 <= q.p99 <= q.max


def test_warmup_excluded_with_fallback():
    r = recs([1000] * 5 + [1] * 5)
    assert compute_stats(r, warmup=5)[("pub0", "sub0")].max == 1
    # nothing left after the cut: all records are used
    assert compute_stats(r, warmup=100)[("pub0", "sub0")].max == 1000


def test_grouping_and_fairness_gap():
    r = recs([10, 10, 10], sub="sub0") + recs([50, 50, 50], sub="sub1")
    stats = compute_stats(r)
    assert set(stats) == {("pub0", "sub0"), ("pub0", "sub1")}
    assert fairness_gap(stats) == 40


def test_coefficient_of_variation():
    assert coefficient_of_variation([5, 5, 5]) == 0
    assert coefficient_of_variation([1, 3]) == pytest.approx(0.5)


# -- scenario ----------------------------------------------------------------


def test_scenario_invariants():
    with pytest.raises(ValueError):
        Scenario(payload_size=1000)
    with pytest.raises(ValueError):
        Scenario(rate_hz=0)
    with pytest.raises(ValueError):
        Scenario(pin_map={"nobody": 0})
    sc = Scenario(graph="1p5s", transport="tcp", payload_size=128, ordered=True, pin_map={"pub": 0})
    assert Scenario.from_dict(sc.to_dict()) == sc
    assert sc.subscribers == [f"sub{i}" for i in range(5)]
    assert sc.core_for("sub3") is None and sc.core_for("pub0") == 0
    assert sc.message_count == 2000 and sc.rate_hz == 30


def test_default_sweep():
    assert DEFAULT_SWEEP[0] == 128 and DEFAULT_SWEEP[-1] == 16 << 20 and len(DEFAULT_SWEEP) == 14


@pytest.mark.parametrize("text,n", [("128", 128), ("8k", 8192), ("16MiB", 16 << 20), ("1M", 1 << 20), (512, 512)])
def test_parse_size(text, n):
    assert parse_size(text) == n


def test_format_size():
    assert [format_size(n) for n in (128, 2048, 16 << 20)] == ["128B", "2KiB", "16MiB"]


# -- report ------------------------------------------------------------------


def _report(graph="1p5s", n=20):
    sc = Scenario(graph=graph, transport="shm", payload_size=128, message_count=n, warmup=0,
                  environment_label="unit test")
    rng = random.Random(1)
    records = []
    for sub in sc.subscribers:
        records += recs([rng.randrange(1, 10**6) for _ in range(n)], sub=sub)
    return build_report(sc, records)


def test_report_accounting():
    sc = Scenario(graph="1p5s", payload_size=128, message_count=10, warmup=0)
    rep = build_report(sc, recs(range(10), sub="sub0") + recs(range(4), sub="sub1"))
    assert len(rep.pairs) == 5
    for p in rep.pairs:
        assert p.delivered + p.lost == 10
    assert rep.pair("pub0", "sub1").lost == 6
    assert rep.pair("pub0", "sub4").latency is None


def test_csv_round_trip(tmp_path):
    rep = _report()
    path = emit_csv(rep, str(tmp_path / "run.csv"))
    sc, records = parse_csv(path)
    assert records == rep.records
    assert sc.graph is Graph.ONE_PUB_FIVE_SUB and sc.environment_label == "unit test"
    again = load_report(path)
    assert again.medians() == rep.medians() and again.fairness_gap_ns == rep.fairness_gap_ns


def test_csv_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        parse_csv(str(p))


def test_summary_rows():
    multi = emit_summary(_report("1p5s"))
    assert "fairness_gap" in multi
    assert sum(line.startswith("pub0 ") for line in multi.splitlines()) == 5
    single = emit_summary(_report("1p1s"))
    assert "fairness_gap" not in single
    assert "1p5s-shm-128B" in emit_table([_report("1p5s")])


def test_plot_script_layout(tmp_path):
    rep = _report()
    emit_csv(rep, str(tmp_path / "run.csv"))
    script = emit_plot_script([rep], str(tmp_path / "plot.py"), str(tmp_path / "out.png"))
    text = open(script).read()
    compile(text, script, "exec")
    assert 'set_yscale("log")' in text
    assert 'set_xlabel("payload size")' in text and 'set_ylabel("latency (us)")' in text
    pytest.importorskip("matplotlib")
    subprocess.run([sys.executable, script], check=True, capture_output=True, timeout=120)
    assert os.path.getsize(tmp_path / "out.png") > 0


def test_plot_script_needs_csv():
    with pytest.raises(ValueError):
        emit_plot_script([_report()], "/tmp/unused-plot.py")


# -- system ------------------------------------------------------------------


def test_pin_two_processes_to_same_core():
    core = min(affinity())
    procs = [subprocess.Popen([sys.executable, "-c", "import time; time.sleep(5)"]) for _ in range(2)]
    try:
        for p in procs:
            pin_process(p.pid, core)
        assert [affinity(p.pid) for p in procs] == [{core}, {core}]
    finally:
        for p in procs:
            p.kill()
            p.wait()


def test_pin_out_of_range():
    with pytest.raises(ValueError):
        pin_process(0, (os.cpu_count() or 1) + 1)


def test_pin_map_parsing():
    assert parse_pin_map("pub=2, sub0=3") == {"pub": 2, "sub0": 3}
    assert parse_pin_map("") == {}
    with pytest.raises(ValueError):
        parse_pin_map("pub2")


def test_cpu_of_idle_sleeper():
    p = subprocess.Popen([sys.executable, "-c", "import time; time.sleep(1)"])
    t0 = time.monotonic()
    code, cpu = reap_with_rusage(p, 10)
    wall = time.monotonic() - t0
    assert code == 0
    assert cpu.total_ns < 0.3 * wall * 1e9


def test_cpu_of_busy_spin():
    code = ("import sys, time\nprint('go', flush=True)\nsys.stdin.readline()\n"
            "t = time.perf_counter() + 1.0\nwhile time.perf_counter() < t: pass\n")
    p = subprocess.Popen([sys.executable, "-c", code], stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    assert p.stdout.readline().strip() == "go"
    before = measure_cpu(p)  # interpreter start-up, excluded
    p.stdin.write("\n")
    p.stdin.flush()
    rc, after = reap_with_rusage(p, 20)
    p.stdin.close()
    p.stdout.close()
    assert rc == 0
    assert after.total_ns - before.total_ns == pytest.approx(1e9, rel=0.10)


def test_measure_cpu_live_process():
    p = subprocess.Popen([sys.executable, "-c", "import time; time.sleep(3)"])
    try:
        time.sleep(0.3)
        assert measure_cpu(p).total_ns < 1e9
    finally:
        p.kill()
        p.wait()
    with pytest.raises(ProcessLookupError):
        measure_cpu(p)
    assert measure_cpu().total_ns > 0


def test_sleep_until_is_absolute():
    target = time.monotonic_ns() + 20_000_000
    sleep_until(target)
    late = time.monotonic_ns() - target
    assert 0 <= late < 5_000_000
    sleep_until(target)  # already past: returns at once


def test_cpu_count():
    assert cpu_count() >= 1


# -- end to end --------------------------------------------------------------


def test_run_1p1s_shm_ten_messages():
    sc = Scenario(transport="shm", payload_size=1 << 20, message_count=10, rate_hz=100, warmup=0)
    rep = run_scenario(sc)
    assert not rep.failed, rep.failures
    assert rep.pair("pub0", "sub0").delivered == 10 and rep.lost == 0
    assert all(r.latency_ns >= 0 for r in rep.records)
    assert set(rep.cpu) == {"pub0", "sub0"}
    assert rep.extra["copies"]["pub0"] == 0 and rep.extra["copies"]["sub0"] == 0


def test_run_ordered_1p5s_attachment_order():
    sc = Scenario(graph="1p5s", transport="uds", payload_size=1024, message_count=20, rate_hz=100,
                  ordered=True, warmup=0)
    rep = run_scenario(sc)
    assert not rep.failed, rep.failures
    assert rep.subscriber_order == {"pub0": [f"sub{i}" for i in range(5)]}
    assert rep.delivered == 100


def test_rate_fidelity():
    sc = Scenario(transport="tcp", payload_size=128, message_count=60, rate_hz=50, warmup=0)
    rep = run_scenario(sc)
    assert not rep.failed, rep.failures
    assert abs(rep.publish_interval_median_ns - 20_000_000) <= 2_000_000


def test_pin_to_missing_core_fails_run():
    sc = Scenario(payload_size=128, message_count=5, pin_map={"pub": (os.cpu_count() or 1) + 1})
    with pytest.raises(ValueError):
        run_scenario(sc)


def test_cli_run_and_report(tmp_path, capsys):
    csv_path = str(tmp_path / "r.csv")
    code = cli.main(["run", "--transport", "uds", "--payload", "4k", "--count", "12", "--rate", "200",
                     "--warmup", "2", "--csv", csv_path, "--label", "ci"])
    out = capsys.readouterr().out
    assert code == 0, out
    assert "1p1s-uds-4KiB" in out and "pub0" in out
    plot = str(tmp_path / "p.py")
    assert cli.main(["report", csv_path, "--detail", "--plot-script", plot]) == 0
    out = capsys.readouterr().out
    assert "median_us" in out and os.path.exists(plot)


def test_cli_rejects_bad_pin(capsys):
    assert cli.main(["run", "--pin", "pub", "--count", "1"]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_sweep_small(tmp_path, capsys):
    code = cli.main(["sweep", "--graphs", "1p1s", "--transports", "shm,tcp", "--payloads", "128,512",
                     "--count", "5", "--rate", "200", "--warmup", "0", "--out", str(tmp_path),
                     "--plot-script", str(tmp_path / "plot.py")])
    assert code == 0
    assert len(list(tmp_path.glob("*.csv"))) == 4
