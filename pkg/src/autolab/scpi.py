"""SCPI command parser and virtual source-measure unit.

The instrument mimics a Keithley-2450-class SMU sourcing voltage and
measuring current through a pluggable attached-device model. The command
tree is deliberately frozen to the dozen headers the bias/measure/I-V
workflow needs; everything else lands in the error queue as -113.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .formatting import sci6

IDN_STRING = "VirtualLab,Model 2450,SIM-0001,1.0"

# Long-form spelling for each mnemonic in the tree. A segment matches iff it
# equals the short or the long form exactly (standard SCPI rule).
MNEMONICS = {
    "SOUR": "SOURCE",
    "VOLT": "VOLTAGE",
    "ILIM": "ILIMIT",
    "FUNC": "FUNCTION",
    "SENS": "SENSE",
    "OUTP": "OUTPUT",
    "READ": "READ",
    "MEAS": "MEASURE",
    "CURR": "CURRENT",
    "SYST": "SYSTEM",
    "ERR": "ERROR",
}

_LONG_TO_SHORT = {long: short for short, long in MNEMONICS.items()}

_SEGMENT_RE = re.compile(r"[A-Za-z]+[0-9]*$")
_STAR_RE = re.compile(r"\*[A-Za-z]+[0-9]*$")
_NUMBER_START_RE = re.compile(r"[0-9+\-.]")

# (path, is_query) pairs the dispatcher recognizes; everything else is -113.
SUPPORTED_HEADERS = frozenset(
    {
        (("*IDN",), True),
        (("*RST",), False),
        (("*CLS",), False),
        (("SOUR", "FUNC"), False),
        (("SOUR", "VOLT"), False),
        (("SOUR", "VOLT", "ILIM"), False),
        (("SENS", "FUNC"), False),
        (("OUTP",), False),
        (("OUTP",), True),
        (("READ",), True),
        (("MEAS", "CURR"), True),
        (("SYST", "ERR"), True),
    }
)


class ParseError(ValueError):
    def __init__(self, position: int, reason: str):
        super().__init__(f"parse error at {position}: {reason}")
        self.position = position
        self.reason = reason


@dataclass
class ScpiCommand:
    path: list[str]
    is_query: bool
    args: list


def canonical_segment(segment: str) -> str:
    """Uppercase and fold long mnemonic forms onto their short form."""
    token = segment.upper()
    if token in MNEMONICS:
        return token
    return _LONG_TO_SHORT.get(token, token)


def responds(cmd: ScpiCommand) -> bool:
    """True iff dispatching this command will produce a response line."""
    return cmd.is_query and (tuple(cmd.path), True) in SUPPORTED_HEADERS


def _split_outside_quotes(text: str, sep: str) -> list[tuple[int, str]]:
    parts: list[tuple[int, str]] = []
    start = 0
    quote: Optional[str] = None
    for i, ch in enumerate(text):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == sep:
            parts.append((start, text[start:i]))
            start = i + 1
    if quote:
        raise ParseError(len(text), "unbalanced quotes")
    parts.append((start, text[start:]))
    return parts


def _parse_args(raw: str, offset: int) -> list:
    args = []
    for pos, chunk in _split_outside_quotes(raw, ","):
        token = chunk.strip()
        if not token:
            raise ParseError(offset + pos, "empty argument")
        if token[0] in "\"'":
            if len(token) < 2 or token[-1] != token[0]:
                raise ParseError(offset + pos, "unbalanced quotes")
            args.append(token[1:-1])
        elif _NUMBER_START_RE.match(token[0]):
            try:
                args.append(float(token))
            except ValueError:
                raise ParseError(offset + pos, f"malformed number {token!r}") from None
        elif _SEGMENT_RE.match(token):
            args.append(token.upper())
        else:
            raise ParseError(offset + pos, f"bad argument {token!r}")
    return args


def _parse_one(raw: str, offset: int) -> ScpiCommand:
    text = raw.strip()
    if not text:
        raise ParseError(offset, "empty command header")
    head, sep, rest = text.partition(" ")
    is_query = head.endswith("?")
    if is_query:
        head = head[:-1]
    if not head:
        raise ParseError(offset, "empty command header")

    if head.startswith("*"):
        if not _STAR_RE.match(head):
            raise ParseError(offset, f"bad star command {head!r}")
        path = [head.upper()]
    else:
        if head.startswith(":"):
            head = head[1:]
        if not head:
            raise ParseError(offset, "empty command header")
        path = []
        for segment in head.split(":"):
            if not _SEGMENT_RE.match(segment):
                raise ParseError(offset, f"bad mnemonic {segment!r}")
            path.append(canonical_segment(segment))

    args = _parse_args(rest, offset + len(raw) - len(rest)) if rest.strip() else []
    return ScpiCommand(path=path, is_query=is_query, args=args)


def parse_scpi(line: str) -> list[ScpiCommand]:
    """Parse one program message (commands separated by ``;``).

    Whitespace-only input parses to an empty list; an empty header between
    separators is an error.
    """
    if not line.strip():
        return []
    return [_parse_one(chunk, pos) for pos, chunk in _split_outside_quotes(line, ";")]


# --------------------------- instrument model ---------------------------

@dataclass
class OpenCircuit:
    """Nothing attached; always measures 0 A."""


@dataclass
class Ohmic:
    resistance: float

    def __post_init__(self):
        if self.resistance <= 0:
            raise ValueError("resistance must be > 0")


@dataclass
class Photoconductor:
    """Phenomenological photoconductor: R_eff = r_dark / (1 + k * irradiance)."""

    r_dark: float
    sensitivity_k: float
    irradiance: float = 0.0

    def __post_init__(self):
        if self.r_dark <= 0:
            raise ValueError("r_dark must be > 0")
        if self.sensitivity_k < 0:
            raise ValueError("sensitivity_k must be >= 0")
        if not 0.0 <= self.irradiance <= 1.0:
            raise ValueError("irradiance must be in [0, 1]")

    @property
    def r_eff(self) -> float:
        return self.r_dark / (1.0 + self.sensitivity_k * self.irradiance)


DeviceModel = Union[OpenCircuit, Ohmic, Photoconductor]


@dataclass
class SmuState:
    source_function: str = "VOLT"
    source_level: float = 0.0
    current_limit: float = 0.1
    measure_function: str = "CURR"
    output_on: bool = False
    error_queue: list[tuple[int, str]] = field(default_factory=list)


class VirtualSmu:
    """State machine for the virtual SMU; one owner at a time, no locking."""

    def __init__(
        self,
        device: Optional[DeviceModel] = None,
        noise_sigma: float = 0.0,
        seed: int = 0,
    ):
        self.state = SmuState()
        self.device: DeviceModel = device if device is not None else OpenCircuit()
        self.noise_sigma = noise_sigma
        self._rng = random.Random(seed)
        # Set by the rack: callable returning scene reflectance at the live
        # stage position, sampled immediately before each measurement.
        self.irradiance_source: Optional[Callable[[], float]] = None

    # Transport entry: one raw line in, response lines out.
    def handle_line(self, line: str) -> list[str]:
        try:
            commands = parse_scpi(line)
        except ParseError:
            self._push_error(-100, "Command error")
            return []
        responses = []
        for cmd in commands:
            reply = self.dispatch(cmd)
            if reply is not None:
                responses.append(reply)
        return responses

    def dispatch(self, cmd: ScpiCommand) -> Optional[str]:
        key = (tuple(cmd.path), cmd.is_query)
        if key not in SUPPORTED_HEADERS:
            self._push_error(-113, "Undefined header")
            return None
        handler = self._HANDLERS[key]
        return handler(self, cmd)

    def measure_current(self) -> float:
        if self.irradiance_source is not None and isinstance(self.device, Photoconductor):
            level = float(self.irradiance_source())
            self.device.irradiance = min(1.0, max(0.0, level))
        if not self.state.output_on:
            return 0.0
        if isinstance(self.device, OpenCircuit):
            return 0.0
        if isinstance(self.device, Ohmic):
            r_eff = self.device.resistance
        else:
            r_eff = self.device.r_eff
        raw = self.state.source_level / r_eff
        if self.noise_sigma > 0.0:
            raw += self._rng.gauss(0.0, self.noise_sigma)
        limit = self.state.current_limit
        return max(-limit, min(limit, raw))

    def reset(self) -> None:
        self.state = SmuState()

    # ------------------------ command handlers ------------------------

    def _push_error(self, code: int, message: str) -> None:
        self.state.error_queue.append((code, message))

    def _one_arg(self, cmd: ScpiCommand):
        if not cmd.args:
            self._push_error(-109, "Missing parameter")
            return None
        if len(cmd.args) > 1:
            self._push_error(-108, "Parameter not allowed")
            return None
        return cmd.args[0]

    def _handle_idn(self, cmd):
        return IDN_STRING

    def _handle_rst(self, cmd):
        self.reset()
        return None

    def _handle_cls(self, cmd):
        self.state.error_queue.clear()
        return None

    def _handle_source_func(self, cmd):
        arg = self._one_arg(cmd)
        if arg is None:
            return None
        if arg != "VOLT":
            self._push_error(-224, "Illegal parameter value")
            return None
        self.state.source_function = "VOLT"
        return None

    def _handle_source_volt(self, cmd):
        arg = self._one_arg(cmd)
        if arg is None:
            return None
        if not isinstance(arg, float):
            self._push_error(-224, "Illegal parameter value")
            return None
        self.state.source_level = arg
        return None

    def _handle_ilim(self, cmd):
        arg = self._one_arg(cmd)
        if arg is None:
            return None
        if not isinstance(arg, float):
            self._push_error(-224, "Illegal parameter value")
            return None
        if arg <= 0:
            self._push_error(-222, "Data out of range")
            return None
        self.state.current_limit = arg
        return None

    def _handle_sense_func(self, cmd):
        arg = self._one_arg(cmd)
        if arg is None:
            return None
        if not (isinstance(arg, str) and arg.upper() == "CURR"):
            self._push_error(-224, "Illegal parameter value")
            return None
        self.state.measure_function = "CURR"
        return None

    def _handle_output_set(self, cmd):
        arg = self._one_arg(cmd)
        if arg is None:
            return None
        if arg in ("ON", 1.0):
            self.state.output_on = True
        elif arg in ("OFF", 0.0):
            self.state.output_on = False
        else:
            self._push_error(-224, "Illegal parameter value")
        return None

    def _handle_output_query(self, cmd):
        return "1" if self.state.output_on else "0"

    def _handle_read(self, cmd):
        return sci6(self.measure_current())

    def _handle_syst_err(self, cmd):
        if self.state.error_queue:
            code, message = self.state.error_queue.pop(0)
        else:
            code, message = 0, "No error"
        return f'{code},"{message}"'

    _HANDLERS = {
        (("*IDN",), True): _handle_idn,
        (("*RST",), False): _handle_rst,
        (("*CLS",), False): _handle_cls,
        (("SOUR", "FUNC"), False): _handle_source_func,
        (("SOUR", "VOLT"), False): _handle_source_volt,
        (("SOUR", "VOLT", "ILIM"), False): _handle_ilim,
        (("SENS", "FUNC"), False): _handle_sense_func,
        (("OUTP",), False): _handle_output_set,
        (("OUTP",), True): _handle_output_query,
        (("READ",), True): _handle_read,
        (("MEAS", "CURR"), True): _handle_read,
        (("SYST", "ERR"), True): _handle_syst_err,
    }
