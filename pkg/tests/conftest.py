"""Shared fixtures and the canned I-V stub scenario used across suites."""

import pytest

from autolab.clock import VirtualClock
from autolab.rack import RackConfig, rack_up
from autolab.scpi import Ohmic


@pytest.fixture()
def iv_rack():
    """Ephemeral virtual-clock rack with the 1 kOhm ohmic device."""
    config = RackConfig(smu_port=0, stage_port=0, clock=VirtualClock(),
                        device=Ohmic(1000.0))
    with rack_up(config) as rack:
        yield rack


def bad_probe_reply(smu_rid):
    """Iteration-1 stub reply: probes with a deliberately undefined header."""
    return (
        "I'll start by checking the instrument error interface.\n"
        "```labscript\n"
        f'OPEN smu "{smu_rid}" SCPI\n'
        'QUERY smu ":FOO?" -> probe\n'
        'PRINT "probe={probe}"\n'
        "```\n"
    )


def iv_sweep_reply(smu_rid):
    """Iteration-2 stub reply: the corrected 21-point I-V sweep, flagged DONE."""
    return (
        "The previous header was undefined; using the supported tree now. DONE\n"
        "```labscript\n"
        f'OPEN smu "{smu_rid}" SCPI\n'
        'WRITE smu "*RST"\n'
        'WRITE smu ":SOUR:FUNC VOLT"\n'
        'WRITE smu ":SOUR:VOLT:ILIM 0.1"\n'
        'WRITE smu ":OUTP ON"\n'
        "SWEEP v FROM -1.0 TO 1.0 STEP 0.1\n"
        'WRITE smu ":SOUR:VOLT {v}"\n'
        'QUERY smu ":READ?" -> i\n'
        "RECORD v, i\n"
        "END\n"
        'WRITE smu ":OUTP OFF"\n'
        'SAVE "iv.csv"\n'
        "```\n"
    )


def iv_stub_replies(smu_rid):
    return [bad_probe_reply(smu_rid), iv_sweep_reply(smu_rid)]
