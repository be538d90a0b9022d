"""Reference virtual platform: MAX31855 sensor, GPIO controller and a
Schmitt-trigger application polling the sensor, served over TCP.

Run as ``vpfmu-vp --port 8888``.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import stat
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from .kernel import Kernel, UnknownKey, TypeMismatch
from .modeldesc import (Causality, CoSimulation, DefaultExperiment, ModelDescription,
                        ModelStructure, ModelVariable, Variability, VcmlAnnotation)
from .server import DEFAULT_HOST, READ_TIMEOUT, ServerError, VspServer
from .values import BadValue, PropertyValue, ValueType

log = logging.getLogger(__name__)

TEMP_KEY = "system.max31855.temp"
GPIO_KEY = "system.gpio.data"
T_LO_KEY = "system.app.t_lo"
T_UP_KEY = "system.app.t_up"
PERIOD_KEY = "system.app.period_ns"
SET_COUNT_KEY = "system.app.set_count"
CLEAR_COUNT_KEY = "system.app.clear_count"
POLL_COUNT_KEY = "system.app.poll_count"

TEMP_LSB = 0.25
TEMP_MIN = -270.0
TEMP_MAX = 1800.0
PIN = 0

DEFAULT_TEMP = 10.0
DEFAULT_T_LO = 40.0
DEFAULT_T_UP = 50.0
DEFAULT_PERIOD_NS = 500_000_000


def encode_temperature(temp: float) -> int:
    """Pack a temperature into the 14-bit signed field, bits 31..18."""
    if math.isnan(temp):
        temp = TEMP_MIN
    temp = min(max(temp, TEMP_MIN), TEMP_MAX)
    counts = math.floor(temp / TEMP_LSB)
    return (counts & 0x3FFF) << 18


def decode_temperature(word: int) -> float:
    counts = (word >> 18) & 0x3FFF
    if counts & 0x2000:
        counts -= 0x4000
    return counts * TEMP_LSB


class Max31855:
    """Thermocouple converter. Only the temperature field is modeled."""

    def __init__(self, kernel: Kernel, name: str = "system.max31855",
                 temp: float = DEFAULT_TEMP):
        self.temp = kernel.register_property(f"{name}.temp", PropertyValue.float32(temp))

    def read_frame(self) -> int:
        return encode_temperature(self.temp.value)


class Gpio:

    def __init__(self, kernel: Kernel, name: str = "system.gpio"):
        self.data = kernel.register_property(f"{name}.data", PropertyValue.uint32(0))

    def pin(self, index: int) -> bool:
        return bool(self.data.value >> index & 1)

    def drive(self, index: int, level: bool) -> None:
        word = self.data.value
        word = word | (1 << index) if level else word & ~(1 << index)
        self.data.set(PropertyValue.uint32(word))


class SchmittApp:
    """Polls the sensor every ``period_ns`` and drives GPIO bit 0 with hysteresis.

    The pin is set when the temperature is strictly above ``t_up`` and
    cleared when strictly below ``t_lo``. The first poll happens at t=0.
    """

    def __init__(self, kernel: Kernel, sensor: Max31855, gpio: Gpio,
                 t_lo: float = DEFAULT_T_LO, t_up: float = DEFAULT_T_UP,
                 period_ns: int = DEFAULT_PERIOD_NS):
        self.kernel = kernel
        self.sensor = sensor
        self.gpio = gpio
        reg = kernel.register_property
        self.t_lo = reg(T_LO_KEY, PropertyValue.float32(t_lo))
        self.t_up = reg(T_UP_KEY, PropertyValue.float32(t_up))
        self.period = reg(PERIOD_KEY, PropertyValue.uint32(period_ns))
        self.set_count = reg(SET_COUNT_KEY, PropertyValue.uint32(0))
        self.clear_count = reg(CLEAR_COUNT_KEY, PropertyValue.uint32(0))
        self.poll_count = reg(POLL_COUNT_KEY, PropertyValue.uint32(0))

    def check_config(self) -> None:
        if not self.t_lo.value < self.t_up.value:
            raise ValueError(f"t_lo ({self.t_lo.value}) must be below t_up ({self.t_up.value})")
        if self.period.value <= 0:
            raise ValueError("poll period must be positive")

    def start(self) -> None:
        self.kernel.schedule(0, self.poll, "poll")

    @staticmethod
    def _bump(prop) -> None:
        prop.set(PropertyValue.uint32(min(prop.value + 1, 0xFFFFFFFF)))

    def poll(self) -> None:
        temp = decode_temperature(self.sensor.read_frame())
        pin = self.gpio.pin(PIN)
        if not pin and temp > self.t_up.value:
            self.gpio.drive(PIN, True)
            self._bump(self.set_count)
        elif pin and temp < self.t_lo.value:
            self.gpio.drive(PIN, False)
            self._bump(self.clear_count)
        self._bump(self.poll_count)
        self.kernel.schedule(max(self.period.value, 1), self.poll, "poll")


@dataclass
class Platform:
    kernel: Kernel
    sensor: Max31855
    gpio: Gpio
    app: SchmittApp


def build_platform(overrides: Optional[Dict[str, str]] = None,
                   record_trace: bool = False) -> Platform:
    """Assemble the VP. ``overrides`` maps property paths to encoded values."""
    kernel = Kernel(record_trace=record_trace)
    sensor = Max31855(kernel)
    gpio = Gpio(kernel)
    app = SchmittApp(kernel, sensor, gpio)
    for key, text in (overrides or {}).items():
        prop = kernel.properties.lookup(key)
        prop.set(PropertyValue.decode(prop.type, text))
    app.check_config()
    app.start()
    return Platform(kernel, sensor, gpio, app)


def reference_model_description(port: int = 8888, host: str = "localhost",
                                executable: Optional[str] = "resources/vp",
                                args: Optional[str] = None,
                                start_time: float = 3.0, stop_time: float = 5.0,
                                step_size: float = 0.01) -> ModelDescription:
    """The case-study model description: temperature in, GPIO register out."""
    return ModelDescription(
        model_name="myVP",
        co_simulation=CoSimulation("myVP", needs_execution_tool=True,
                                   can_handle_variable_communication_step_size=True),
        default_experiment=DefaultExperiment(start_time, stop_time, step_size),
        variables=(
            ModelVariable("time", 0, ValueType.FLOAT64, Causality.INDEPENDENT,
                          Variability.CONTINUOUS),
            ModelVariable(TEMP_KEY, 1, ValueType.FLOAT32, Causality.INPUT,
                          Variability.CONTINUOUS, PropertyValue.float32(DEFAULT_TEMP)),
            ModelVariable(GPIO_KEY, 2, ValueType.UINT32, Causality.OUTPUT,
                          Variability.DISCRETE),
        ),
        structure=ModelStructure(initial_unknowns=(1,), outputs=(2,)),
        vcml=VcmlAnnotation(host, port, executable, args),
    )


def write_launcher(path, python: Optional[str] = None) -> str:
    """Write an executable script that starts this VP with the current interpreter."""
    python = python or sys.executable
    src_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    script = (
        f"#!{python}\n"
        "import sys\n"
        f"sys.path.insert(0, {src_root!r})\n"
        "from vpfmu.refvp import main\n"
        "sys.exit(main())\n"
    )
    with open(path, "w") as f:
        f.write(script)
    mode = os.stat(path).st_mode
    os.chmod(path, mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return str(path)


# -- command line -------------------------------------------------------------

def _port(text: str) -> int:
    try:
        port = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a port number: {text!r}") from None
    if not 1 <= port <= 65535:
        raise argparse.ArgumentTypeError(f"port {port} outside 1..65535")
    return port


def _assignment(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key, value


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpfmu-vp", description=__doc__.splitlines()[0])
    p.add_argument("--port", type=_port, required=True)
    p.add_argument("--host", default=DEFAULT_HOST)
    p.add_argument("--config", type=_assignment, action="append", default=[],
                   metavar="KEY=VALUE", help="override a property after registration")
    p.add_argument("--read-timeout", type=float, default=READ_TIMEOUT)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="vp: %(message)s")
    try:
        platform = build_platform(dict(args.config))
    except (UnknownKey, TypeMismatch, BadValue, ValueError) as e:
        parser.error(f"--config: {e}")
    try:
        server = VspServer(platform.kernel, args.host, args.port, read_timeout=args.read_timeout)
    except ServerError as e:
        print(f"vpfmu-vp: {e}", file=sys.stderr)
        return 3
    log.info("listening on %s:%d", *server.address)
    return server.serve()


if __name__ == "__main__":
    sys.exit(main())
