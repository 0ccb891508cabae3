"""Dynamic unit models: grid-forming and grid-following converters and
synchronous generators, each in its own rotating frame."""
from .converter import (
    GFL,
    GFM,
    ConverterParams,
    ConverterSetpoint,
    converter_rhs,
    init_converter,
    pll_output,
)
from .frames import J, rotate, rotate_to_local, rotate_to_network, rotation
from .synchronous import SGParams, SGSetpoint, init_sg, sg_rhs

SG = "SG"
UNIT_KINDS = (GFM, GFL, SG)


def init_unit_state(unit, terminal_v, terminal_i, omega_0=1.0, setpoint=None):
    """Equilibrium state and setpoint of ``unit`` at a terminal point.

    ``terminal_v``/``terminal_i`` are 2-vectors in the network frame, per-unit
    on the unit rating. The returned state carries the unit frame angle
    measured from that frame.
    """
    if unit.kind == SG:
        return init_sg(unit.params, terminal_v, terminal_i, omega_0)
    return init_converter(unit.params, unit.kind, terminal_v, terminal_i, omega_0, setpoint)


__all__ = [
    "GFL", "GFM", "SG", "UNIT_KINDS", "J",
    "ConverterParams", "ConverterSetpoint", "SGParams", "SGSetpoint",
    "converter_rhs", "pll_output", "sg_rhs", "init_converter", "init_sg", "init_unit_state",
    "rotate", "rotate_to_network", "rotate_to_local", "rotation",
]
