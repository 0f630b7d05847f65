"""Simulated register-map provider for the bottling-line case study.

A fieldbus PLC exposes five holding registers (40001-40005); map_registers
converts them to structured telemetry: 32-bit pulse count split MSW/LSW,
valve state, inlet pressure scaled mbar -> bar, temperature scaled from
tenths of a degree. No fieldbus wire protocol here; the mapping is the
point, the registers are an in-memory simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

ML_PER_PULSE = 0.2

REGISTER_PULSES_MSW = 40001
REGISTER_PULSES_LSW = 40002
REGISTER_VALVE = 40003
REGISTER_PRESSURE_MBAR = 40004
REGISTER_TEMP_DECI_C = 40005

ALL_REGISTERS = (
    REGISTER_PULSES_MSW,
    REGISTER_PULSES_LSW,
    REGISTER_VALVE,
    REGISTER_PRESSURE_MBAR,
    REGISTER_TEMP_DECI_C,
)


class FieldbusError(Exception):
    pass


class MissingRegister(FieldbusError):
    pass


class InvalidValveState(FieldbusError):
    pass


@dataclass
class RegisterMap:
    holding: dict[int, int] = field(default_factory=dict)

    def read(self, address: int) -> int:
        try:
            return self.holding[address]
        except KeyError:
            raise MissingRegister(f"register {address} not defined") from None


@dataclass(frozen=True)
class FillTelemetry:
    pulses: int
    valve_open: bool
    pressure_bar: float
    temp_c: float

    def __post_init__(self):
        if not 0.0 <= self.pressure_bar <= 10.0:
            raise ValueError("pressure_bar out of range [0, 10]")
        if not 0.0 <= self.temp_c <= 120.0:
            raise ValueError("temp_c out of range [0, 120]")


def map_registers(regs: RegisterMap) -> FillTelemetry:
    """Registers -> telemetry: pulses = MSW<<16 | LSW, valve 0/1 -> bool,
    pressure mbar/1000 -> bar, temperature tenths -> degrees C."""
    for address in ALL_REGISTERS:
        if address not in regs.holding:
            raise MissingRegister(f"register {address} not defined")
    valve_raw = regs.read(REGISTER_VALVE)
    if valve_raw not in (0, 1):
        raise InvalidValveState(f"register {REGISTER_VALVE} = {valve_raw}")
    return FillTelemetry(
        pulses=(regs.read(REGISTER_PULSES_MSW) << 16) | regs.read(REGISTER_PULSES_LSW),
        valve_open=valve_raw == 1,
        pressure_bar=regs.read(REGISTER_PRESSURE_MBAR) / 1000.0,
        temp_c=regs.read(REGISTER_TEMP_DECI_C) / 10.0,
    )


class FillingMachine:
    """Flow-valve simulation: a fill writes the pulse count into the
    registers, and the provider handler reads it back through the Table
    mapping. The raw register log lets tests cross-check every translated
    volume against pulses * 0.2."""

    def __init__(self, pressure_mbar: int = 2500, temp_deci_c: int = 235):
        self.registers = RegisterMap(
            {
                REGISTER_PULSES_MSW: 0,
                REGISTER_PULSES_LSW: 0,
                REGISTER_VALVE: 0,
                REGISTER_PRESSURE_MBAR: pressure_mbar,
                REGISTER_TEMP_DECI_C: temp_deci_c,
            }
        )
        self.pulse_log: list[int] = []

    def fill(self, params: dict) -> int:
        """Dispense the requested volume; returns raw pulses (provider-native)."""
        volume_ml = float(params.get("volume_ml", 0.0))
        if volume_ml < 0:
            raise ValueError("volume_ml must be >= 0")
        pulses = int(round(volume_ml / ML_PER_PULSE))
        self.registers.holding[REGISTER_PULSES_MSW] = (pulses >> 16) & 0xFFFF
        self.registers.holding[REGISTER_PULSES_LSW] = pulses & 0xFFFF
        self.registers.holding[REGISTER_VALVE] = 1
        telemetry = map_registers(self.registers)
        self.registers.holding[REGISTER_VALVE] = 0
        self.pulse_log.append(telemetry.pulses)
        return telemetry.pulses

    def telemetry(self, _params: dict | None = None) -> dict:
        snapshot = map_registers(self.registers)
        return {
            "pulses": snapshot.pulses,
            "valve_open": snapshot.valve_open,
            "pressure_bar": snapshot.pressure_bar,
            "temp_c": snapshot.temp_c,
        }
