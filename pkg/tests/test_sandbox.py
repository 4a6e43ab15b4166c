"""Containment property suite: adversarial LabScript must stay in its box."""

import os

import pytest
from hypothesis import given, settings, strategies as st

from autolab.clock import VirtualClock
from autolab.labscript import (
    EXIT_LIMIT_EXCEEDED,
    EXIT_SCRIPT_ERROR,
    Limits,
    execute,
    parse_program,
)
from autolab.rack import RackConfig, rack_up
from autolab.scpi import Ohmic


@pytest.fixture(scope="module")
def rack():
    config = RackConfig(smu_port=0, stage_port=0, clock=VirtualClock(),
                        device=Ohmic(1000.0))
    with rack_up(config) as running:
        yield running


def snapshot_tree(root):
    found = set()
    for base, _, files in os.walk(root):
        for name in files:
            found.add(os.path.join(base, name))
    return found


ESCAPE_PATHS = [
    "../escape.csv",
    "../../etc/escape.csv",
    "/etc/escape.csv",
    "/tmp/escape.csv",
    "a/../../escape.csv",
    "nested/../../../escape.csv",
    "..",
]


@pytest.mark.parametrize("path", ESCAPE_PATHS)
def test_save_path_escapes_rejected(rack, tmp_path, path):
    workdir = tmp_path / "wd"
    workdir.mkdir()
    outside_before = snapshot_tree(tmp_path) - snapshot_tree(workdir)
    program = parse_program(f'SET a 1\nRECORD a\nSAVE "{path}"\n')
    result = execute(program, rack.resources(), workdir=str(workdir), clock=rack.clock)
    assert result.exit == EXIT_SCRIPT_ERROR
    assert result.error_message == "path escapes sandbox"
    assert snapshot_tree(workdir) == set()
    assert (snapshot_tree(tmp_path) - snapshot_tree(workdir)) == outside_before


@settings(max_examples=40, deadline=None)
@given(parts=st.lists(
    st.sampled_from(["..", "a", "b", ".", "data", "..", ".."]), min_size=1, max_size=6,
))
def test_save_random_traversals_never_write_outside(rack, tmp_path_factory, parts):
    tmp_path = tmp_path_factory.mktemp("fuzz")
    workdir = tmp_path / "wd"
    workdir.mkdir()
    path = "/".join(parts) + "/f.csv"
    program = parse_program(f'SET a 1\nRECORD a\nSAVE "{path}"\n')
    result = execute(program, rack.resources(), workdir=str(workdir), clock=rack.clock)
    inside = snapshot_tree(workdir)
    everywhere = snapshot_tree(tmp_path)
    assert everywhere == inside  # nothing outside the working directory
    if result.exit == EXIT_SCRIPT_ERROR:
        assert result.error_message == "path escapes sandbox"
    else:
        assert all(p.startswith(str(workdir)) for p in inside)


def test_save_inside_subdirectory_allowed(rack, tmp_path):
    program = parse_program('SET a 2\nRECORD a\nSAVE "sub/data.csv"\n')
    result = execute(program, rack.resources(), workdir=str(tmp_path), clock=rack.clock)
    assert result.exit == "OK"
    assert (tmp_path / "sub" / "data.csv").exists()
    assert result.saved_files == [os.path.join("sub", "data.csv")]


DISALLOWED_RESOURCES = [
    "TCPIP::10.0.0.5::5025::SOCKET",
    "TCPIP::example.com::80::SOCKET",
    "TCPIP::8.8.8.8::53::SOCKET",
    "TCPIP::evil.internal::5025::SOCKET",
]


@pytest.mark.parametrize("resource", DISALLOWED_RESOURCES)
def test_open_disallowed_host_rejected_without_connecting(rack, tmp_path, resource):
    program = parse_program(f'OPEN x "{resource}" SCPI\n')
    result = execute(program, rack.resources(), workdir=str(tmp_path), clock=rack.clock)
    assert result.exit == EXIT_SCRIPT_ERROR
    assert "host not allowed" in result.error_message


def test_instruction_bomb_terminates(rack, tmp_path):
    program = parse_program(
        "SWEEP a FROM 0 TO 1000000 STEP 1\n"
        "SWEEP b FROM 0 TO 1000000 STEP 1\n"
        "SET c a + b\n"
        "END\n"
        "END\n"
    )
    result = execute(program, rack.resources(), workdir=str(tmp_path), clock=rack.clock)
    assert result.exit == EXIT_LIMIT_EXCEEDED
    assert result.limit_kind == "instructions"
    assert result.instructions_executed <= Limits().max_instructions
