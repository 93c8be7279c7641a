import os
import threading
import time

import pytest

from pqchannel.errors import ParseError, ProbeIOError
from pqchannel.probes import (
    Metric,
    PowerLog,
    ProbeConfig,
    ProbeKind,
    Role,
    Sampler,
    parse_probe_spec,
    read_memory_kb,
    read_power_w,
    read_probe,
    read_temperature,
    sample_loop,
)


def test_thermal_millidegrees(tmp_path):
    f = tmp_path / "temp"
    f.write_text("48370\n")
    assert read_temperature(f) == pytest.approx(48.37, abs=1e-12)


@pytest.mark.parametrize("text", ["48.37", "abc", "", "48,370"])
def test_thermal_rejects_non_integer(tmp_path, text):
    f = tmp_path / "temp"
    f.write_text(text)
    with pytest.raises(ParseError):
        read_temperature(f)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(ProbeIOError):
        read_temperature(tmp_path / "nope")


def test_memory_from_status_fixture(tmp_path):
    f = tmp_path / "status"
    f.write_text("Name:\tpython\nVmPeak:\t  9000 kB\nVmRSS:\t    5632 kB\nThreads:\t1\n")
    assert read_memory_kb(status_path=f) == 5632


def test_memory_of_this_process():
    if not os.path.exists("/proc/self/status"):
        pytest.skip("no procfs")
    assert read_memory_kb() > 0


def test_memory_without_vmrss(tmp_path):
    f = tmp_path / "status"
    f.write_text("Name:\tkthreadd\n")
    with pytest.raises(ParseError):
        read_memory_kb(status_path=f)


def test_power_file_and_null(tmp_path):
    f = tmp_path / "power"
    f.write_text("3.25\n")
    assert read_power_w(ProbeConfig(ProbeKind.POWER_FILE, str(f))) == 3.25
    assert read_power_w(ProbeConfig(ProbeKind.NULL)) is None
    f.write_text("3,25")
    with pytest.raises(ParseError):
        read_power_w(ProbeConfig(ProbeKind.POWER_FILE, str(f)))


def test_power_log_nearest_with_ties_to_earlier(tmp_path):
    f = tmp_path / "meter.csv"
    f.write_text("epoch_seconds,watts\n100.0,2.0\n102.0,4.0\n")
    log = PowerLog.load(f)
    assert log.at(100.9) == 2.0
    assert log.at(101.0) == 2.0  # tie
    assert log.at(101.1) == 4.0
    assert log.at(50) == 2.0 and log.at(500) == 4.0


def test_power_log_bad_row(tmp_path):
    f = tmp_path / "meter.csv"
    f.write_text("100.0,2.0\n101.0,oops\n")
    with pytest.raises(ParseError, match=":2:"):
        PowerLog.load(f)


def test_probe_config_validation():
    with pytest.raises(ValueError):
        ProbeConfig(ProbeKind.THERMAL_FILE)
    with pytest.raises(ValueError):
        ProbeConfig(ProbeKind.NULL, period=0)


def test_sample_loop_schedule_and_failures(tmp_path):
    temp = tmp_path / "t"
    temp.write_text("40000")
    probes = [ProbeConfig(ProbeKind.THERMAL_FILE, str(temp), period=0.05),
              ProbeConfig(ProbeKind.THERMAL_FILE, str(tmp_path / "missing"), period=0.05),
              ProbeConfig(ProbeKind.NULL)]
    got, failures = [], []
    stop = threading.Event()
    threading.Timer(0.5, stop.set).start()
    counts = sample_loop(probes, got.append, stop, Role.SERVER, on_error=failures.append)
    assert 8 <= len(got) <= 12
    assert all(s.metric is Metric.TEMP_C and s.value == 40.0 and s.role is Role.SERVER for s in got)
    assert len(failures) >= 8  # the missing probe keeps retrying without killing the loop
    assert counts[probes[2].source] == 0


def test_sampler_bounded_buffer(tmp_path):
    temp = tmp_path / "t"
    temp.write_text("1000")
    seen = []
    s = Sampler([ProbeConfig(ProbeKind.THERMAL_FILE, str(temp), period=0.01)], maxlen=5, on_sample=seen.append)
    s.start()
    time.sleep(0.2)
    s.stop()
    assert len(s.drain()) == 5 and len(seen) > 5
    assert len(s.take()) == 5 and s.drain() == []


def test_parse_probe_spec():
    ps = parse_probe_spec("temp=/x,mem=self,mem=42,power=/p,powercsv=/c,null", 0.5)
    assert [p.kind for p in ps] == [ProbeKind.THERMAL_FILE, ProbeKind.MEMINFO_PROCESS, ProbeKind.MEMINFO_PROCESS,
                                    ProbeKind.POWER_FILE, ProbeKind.POWER_CSV_IMPORT, ProbeKind.NULL]
    assert ps[2].pid == 42 and all(p.period == 0.5 for p in ps)
    assert parse_probe_spec("") == []
    with pytest.raises(ValueError):
        parse_probe_spec("gpu=1")


def test_read_probe_dispatch(tmp_path):
    f = tmp_path / "status"
    f.write_text("VmRSS:\t  10 kB\n")
    assert read_probe(ProbeConfig(ProbeKind.MEMINFO_PROCESS, str(f))) == 10.0
