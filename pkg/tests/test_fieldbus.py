import pytest
from hypothesis import given, strategies as st

from tip import fieldbus as fb
from tip.scenario import run_factory_scenario


def regs(overrides: dict | None = None):
    base = {40001: 0, 40002: 0, 40003: 0, 40004: 0, 40005: 0}
    base.update(overrides or {})
    return fb.RegisterMap(base)


class TestMapRegisters:
    def test_documented_example(self):
        telemetry = fb.map_registers(
            fb.RegisterMap({40001: 0x0001, 40002: 0x86A0, 40003: 1, 40004: 2500, 40005: 235})
        )
        assert telemetry.pulses == 100_000
        assert telemetry.valve_open is True
        assert telemetry.pressure_bar == 2.5
        assert telemetry.temp_c == 23.5

    def test_all_zero(self):
        telemetry = fb.map_registers(regs())
        assert telemetry.pulses == 0
        assert telemetry.valve_open is False
        assert telemetry.pressure_bar == 0.0
        assert telemetry.temp_c == 0.0

    def test_invalid_valve_state(self):
        with pytest.raises(fb.InvalidValveState):
            fb.map_registers(regs({40003: 7}))

    def test_missing_register(self):
        with pytest.raises(fb.MissingRegister):
            fb.map_registers(fb.RegisterMap({40001: 0, 40002: 0, 40003: 0, 40004: 0}))

    @given(st.integers(0, 0xFFFFFFFF))
    def test_msw_lsw_composition_exact(self, pulses):
        telemetry = fb.map_registers(
            regs({40001: (pulses >> 16) & 0xFFFF, 40002: pulses & 0xFFFF})
        )
        assert telemetry.pulses == pulses

    def test_telemetry_range_invariants(self):
        with pytest.raises(ValueError):
            fb.FillTelemetry(0, False, 11.0, 20.0)
        with pytest.raises(ValueError):
            fb.FillTelemetry(0, False, 1.0, 121.0)


class TestFillingMachine:
    def test_fill_writes_registers_and_logs(self):
        machine = fb.FillingMachine()
        pulses = machine.fill({"volume_ml": 500})
        assert pulses == 2500
        assert machine.registers.holding[40001] == 0
        assert machine.registers.holding[40002] == 2500
        assert machine.pulse_log == [2500]

    def test_large_volume_spans_msw(self):
        machine = fb.FillingMachine()
        pulses = machine.fill({"volume_ml": 20000.0})  # 100000 pulses
        assert pulses == 100_000
        assert machine.registers.holding[40001] == 0x0001
        assert machine.registers.holding[40002] == 0x86A0

    def test_telemetry_snapshot(self):
        machine = fb.FillingMachine()
        snapshot = machine.telemetry()
        assert snapshot["pressure_bar"] == 2.5
        assert snapshot["temp_c"] == 23.5


class TestFactoryScenario:
    def test_nominal_run(self):
        report = run_factory_scenario(seed=21, requests=5)
        done = report.events("scenario_done")[0]
        assert done["values"] == [500.0] * 5
        assert done["heals"] == 0
        assert done["final_state"] == "active"
        assert done["errors"] == []

    def test_degraded_filler_heals_to_backup(self):
        report = run_factory_scenario(seed=22, requests=8, degrade_after=2)
        done = report.events("scenario_done")[0]
        assert done["values"] == [500.0] * 8  # no duplicated responses
        assert done["heals"] == 1
        assert done["final_state"] == "active"  # conveyor never stopped
        contracts = report.events("session_contract")
        assert len(contracts) == 2
        assert contracts[0]["provider"] != contracts[1]["provider"]
        violations = report.events("session_qos_violation")
        assert len(violations) >= 3

    def test_translated_volumes_match_register_log(self):
        report = run_factory_scenario(seed=23, requests=6, degrade_after=2)
        done = report.events("scenario_done")[0]
        pulses = done["fill_a_pulses"] + done["fill_b_pulses"]
        assert len(pulses) == len(done["values"])
        for raw, translated in zip(sorted(pulses), sorted(done["values"])):
            assert translated == pytest.approx(raw * 0.2)

    def test_both_fillers_muted_fails(self):
        report = run_factory_scenario(seed=24, requests=6, mute_fillers_after=2)
        done = report.events("scenario_done")[0]
        assert done["final_state"] == "failed"
        assert len(done["values"]) == 2

    def test_report_deterministic_across_runs(self):
        first = run_factory_scenario(seed=25, requests=6, degrade_after=2)
        second = run_factory_scenario(seed=25, requests=6, degrade_after=2)
        assert first.to_jsonl() == second.to_jsonl()
        assert first.sim_log == second.sim_log
        assert first.digest() == second.digest()

    def test_different_seeds_differ(self):
        first = run_factory_scenario(seed=26, requests=4)
        second = run_factory_scenario(seed=27, requests=4)
        assert first.digest() != second.digest()


class TestScenarioScripts:
    SCRIPT = """
seed = 5
[[events]]
time_ms = 0
action = "start_node"
node = "provider"

[[events]]
time_ms = 0
action = "register_capability"
node = "provider"
capability = "machine:fluid:fill"
schema = "u16"
precision = 0.995
kind = "fill"

[[events]]
time_ms = 0
action = "start_node"
node = "gateway"

[[events]]
time_ms = 500
action = "submit_intent"
node = "gateway"
capability = "machine:fluid:fill"
desired_schema = "f32"
params = {volume_ml = 500}
constraints = {max_latency_ms = 100, min_precision = 0.99}
weights = {func = 0.4, cost = 0.2, trust = 0.2, avail = 0.2}

[[events]]
time_ms = 2000
action = "request_data"
count = 2
params = {volume_ml = 500}

[[events]]
time_ms = 4000
action = "assert_state"
state = "active"
"""

    def test_script_runs(self):
        report = None
        from tip.scenario import run_script

        report = run_script(self.SCRIPT)
        states = [r for r in report.records if r.get("event") == "assert_state"]
        assert states and states[0]["actual"] == "active"
        data = [r for r in report.records if r.get("event") == "session_data"]
        assert len(data) == 2

    def test_failed_assertion_raises(self):
        from tip.scenario import ScenarioAssertionFailure, run_script

        script = self.SCRIPT.replace('state = "active"', 'state = "failed"')
        with pytest.raises(ScenarioAssertionFailure):
            run_script(script)
